use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::store::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::{lit, Scalar};

/// Most coordinates probed by [`grad_check`].
pub const MAX_CHECKED_COORDS: usize = 200;

/// Gradients below this magnitude are compared in absolute rather than relative terms.
const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates whose finite-difference stencil crossed an activation kink.
    /// Central differences do not estimate the derivative there, so they are
    /// left out of `max_rel_error`.
    pub kinks_skipped: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients with central finite differences.
///
/// `loss_fn` must build a scalar loss deterministically from the store. Up to
/// [`MAX_CHECKED_COORDS`] coordinates are probed, drawn with a fixed seed when
/// the store has more. Coordinates whose `±epsilon` perturbation changes
/// [`Tape::kink_pattern`] are counted in `kinks_skipped` instead.
pub fn grad_check<T, F>(mut loss_fn: F, store: &mut ParamStore<T>, epsilon: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &mut ParamStore<T>) -> Result<Var>,
{
    // first pass creates lazily initialized parameters
    let mut tape = Tape::new();
    loss_fn(&mut tape, store)?;

    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let base_kinks = tape.kink_pattern();
    tape.backward(loss, store)?;

    let mut coords: Vec<(String, usize, f64)> = Vec::new();
    for (name, p) in store.iter() {
        let g = p.grad.as_ref().expect("zero_grad filled every buffer");
        coords.extend(g.data().iter().enumerate().map(|(i, v)| (name.to_string(), i, v.as_f64())));
    }
    if coords.len() > MAX_CHECKED_COORDS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        let mut pick = rand::seq::index::sample(&mut rng, coords.len(), MAX_CHECKED_COORDS).into_vec();
        pick.sort_unstable();
        coords = pick.into_iter().map(|i| coords[i].clone()).collect();
    }

    let mut eval = |store: &mut ParamStore<T>| -> Result<(f64, bool)> {
        let mut tape = Tape::new();
        let l = loss_fn(&mut tape, store)?;
        Ok((tape.value(l).item()?.as_f64(), tape.kink_pattern() == base_kinks))
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: 0, kinks_skipped: 0, worst: None };
    for (name, idx, analytic) in coords {
        let orig = store.get(&name)?.data()[idx];
        store.get_mut(&name)?.data_mut()[idx] = orig + lit::<T>(epsilon);
        let (plus, smooth_plus) = eval(store)?;
        store.get_mut(&name)?.data_mut()[idx] = orig - lit::<T>(epsilon);
        let (minus, smooth_minus) = eval(store)?;
        store.get_mut(&name)?.data_mut()[idx] = orig;
        if !(smooth_plus && smooth_minus) {
            report.kinks_skipped += 1;
            continue;
        }
        report.coords_checked += 1;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        let err = (analytic - numeric).abs() / denom;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((name, idx));
        }
    }
    Ok(report)
}
