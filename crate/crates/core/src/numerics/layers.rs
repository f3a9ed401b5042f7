use super::store::{Init, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Nonlinearity between hidden layers; the output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.01)
    }
}

/// Stack of affine layers `dims[0] → dims[1] → … → dims[n]` with parameters
/// `{prefix}.layer{j}.weight` (`din×dout`) and `{prefix}.layer{j}.bias`,
/// created on first use.
pub fn mlp_apply<T: Scalar>(
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    prefix: &str,
    input: Var,
    dims: &[usize],
    activation: Activation,
) -> Result<Var> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(format!("mlp `{prefix}` needs at least two dims")));
    }
    let (_, din) = tape.value(input).dims2()?;
    if din != dims[0] {
        return Err(Error::ShapeMismatch(format!("mlp `{prefix}` expects {} inputs, got {din}", dims[0])));
    }
    mlp_init(store, prefix, dims)?;
    mlp_forward(tape, store, prefix, input, dims.len() - 1, activation)
}

/// Runs an existing `n_layers`-layer MLP from `store` without creating parameters.
pub fn mlp_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    input: Var,
    n_layers: usize,
    activation: Activation,
) -> Result<Var> {
    let mut h = input;
    for j in 0..n_layers {
        let w = tape.param(store, &format!("{prefix}.layer{j}.weight"))?;
        let b = tape.param(store, &format!("{prefix}.layer{j}.bias"))?;
        let z = tape.matmul(h, w)?;
        h = tape.add_bias(z, b)?;
        if j + 1 < n_layers {
            if let Activation::LeakyRelu(slope) = activation {
                h = tape.leaky_relu(h, lit(slope))?;
            }
        }
    }
    Ok(h)
}

/// Creates the parameters of an MLP without running it.
pub fn mlp_init<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dims: &[usize]) -> Result<()> {
    for (j, pair) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        store.get_or_init(
            &format!("{prefix}.layer{j}.weight"),
            &[fan_in, fan_out],
            Init::XavierUniform { fan_in, fan_out },
        )?;
        store.get_or_init(&format!("{prefix}.layer{j}.bias"), &[fan_out], Init::Zeros)?;
    }
    Ok(())
}
