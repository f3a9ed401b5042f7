//! Layout prediction heads and the pretext losses.

use serde::{Deserialize, Serialize};

use super::batch::GraphBatch;
use super::config::{names, ModelConfig, TRIPLET_MASK_CLASSES};
use super::encoder::{encode_batch, triplet_rows, EncodedVars};
use super::raster::BatchTargets;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::numerics::{mlp_forward, Activation, ParamStore, Tape, Tensor, Var};
use crate::scalar::{lit, Scalar};

/// Maps `K×4` raw outputs to valid boxes:
/// `x0 = σ(a0)`, `y0 = σ(a1)`, `x1 = x0 + σ(a2)(1 − x0)`, `y1 = y0 + σ(a3)(1 − y0)`.
pub fn squash_boxes<T: Scalar>(tape: &mut Tape<T>, raw: Var) -> Result<Var> {
    let s = tape.sigmoid(raw)?;
    let origin = tape.slice_cols(s, 0, 2)?;
    let extent = tape.slice_cols(s, 2, 4)?;
    let neg = tape.scale(origin, -T::one())?;
    let room = tape.add_scalar(neg, T::one())?;
    let grow = tape.mul(extent, room)?;
    let far = tape.add(origin, grow)?;
    tape.concat_cols(&[origin, far])
}

/// Converts a squashed box row to a [`BoundingBox`].
///
/// Saturated sigmoids can collapse an edge in floating point; the far edge is
/// then nudged by one ulp-scale step to keep the box valid.
pub fn to_bounding_box(row: &[f64]) -> BoundingBox {
    const GAP: f64 = 1e-12;
    let fix = |a: f64, b: f64| {
        let a = a.clamp(0.0, 1.0 - GAP);
        (a, b.clamp(a + GAP, 1.0))
    };
    let (x0, x1) = fix(row[0], row[2]);
    let (y0, y1) = fix(row[1], row[3]);
    BoundingBox::new(x0, y0, x1, y1).expect("squashed box is valid")
}

fn hidden(c: &ModelConfig) -> Activation {
    Activation::LeakyRelu(c.leaky_slope)
}

/// Object boxes (`N×4`, squashed) and object mask logits (`N×mask²`).
pub fn predict_object_layout<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    objects: Var,
) -> Result<(Var, Var)> {
    let raw = mlp_forward(tape, store, names::BOX_HEAD, objects, 2, hidden(config))?;
    let boxes = squash_boxes(tape, raw)?;
    let masks = mlp_forward(tape, store, names::MASK_HEAD, objects, 2, hidden(config))?;
    Ok((boxes, masks))
}

/// Triplet mask logits, `M × (size·size·3)` with layout (row, col, class).
pub fn predict_triplet_mask<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    triplets: Var,
) -> Result<Var> {
    let coarse = mlp_forward(tape, store, names::TRIPLET_MASK_HEAD, triplets, 2, hidden(config))?;
    let c = config.triplet_mask_coarse;
    tape.upsample_bilinear(coarse, c, c, TRIPLET_MASK_CLASSES, config.upsample_factor())
}

pub fn predict_superbox<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    triplets: Var,
) -> Result<Var> {
    let raw = mlp_forward(tape, store, names::SUPERBOX_HEAD, triplets, 2, hidden(config))?;
    squash_boxes(tape, raw)
}

/// Head outputs on a tape. Triplet heads are absent when not evaluated.
#[derive(Debug, Clone, Copy)]
pub struct LayoutPredictionVars {
    pub object_boxes: Var,
    pub object_masks: Var,
    pub triplet_masks: Option<Var>,
    pub superboxes: Option<Var>,
}

/// Encoder plus heads over a batch.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    batch: &GraphBatch,
    triplet_heads: bool,
) -> Result<(EncodedVars, LayoutPredictionVars)> {
    let emb = encode_batch(tape, store, config, batch)?;
    let (object_boxes, object_masks) = predict_object_layout(tape, store, config, emb.objects)?;
    let (triplet_masks, superboxes) = if triplet_heads && batch.num_triplets() > 0 {
        let rows = triplet_rows(tape, emb, batch)?;
        (
            Some(predict_triplet_mask(tape, store, config, rows)?),
            Some(predict_superbox(tape, store, config, rows)?),
        )
    } else {
        (None, None)
    };
    Ok((emb, LayoutPredictionVars { object_boxes, object_masks, triplet_masks, superboxes }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub box_l2: f64,
    pub mask: f64,
    pub triplet_mask: f64,
    pub triplet_superbox: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { box_l2: 1.0, mask: 0.1, triplet_mask: 1.0, triplet_superbox: 1.0 }
    }
}

impl LossWeights {
    /// Same object-level weights with both triplet terms switched off.
    pub fn without_triplets(self) -> Self {
        Self { triplet_mask: 0.0, triplet_superbox: 0.0, ..self }
    }

    pub fn uses_triplets(&self) -> bool {
        self.triplet_mask != 0.0 || self.triplet_superbox != 0.0
    }
}

/// Loss terms as plain numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_box: f64,
    pub l_mask: f64,
    pub l_triplet_mask: f64,
    pub l_triplet_superbox: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 4] {
        [self.l_box, self.l_mask, self.l_triplet_mask, self.l_triplet_superbox]
    }
}

/// Loss terms on a tape; `total` is the node to differentiate.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_box: Var,
    pub l_mask: Var,
    pub l_triplet_mask: Option<Var>,
    pub l_triplet_superbox: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn breakdown<T: Scalar>(&self, tape: &Tape<T>) -> Result<LossBreakdown> {
        let get = |v: Var| tape.value(v).item().map(Scalar::as_f64);
        Ok(LossBreakdown {
            l_box: get(self.l_box)?,
            l_mask: get(self.l_mask)?,
            l_triplet_mask: self.l_triplet_mask.map(get).transpose()?.unwrap_or(0.0),
            l_triplet_superbox: self.l_triplet_superbox.map(get).transpose()?.unwrap_or(0.0),
            total: get(self.total)?,
        })
    }
}

/// L2 on boxes and superboxes, binary cross-entropy on object masks,
/// 3-class cross-entropy on triplet mask pixels, combined as `Σ wᵢ·termᵢ`.
pub fn compute_losses<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    pred: &LayoutPredictionVars,
    targets: &BatchTargets,
    weights: &LossWeights,
) -> Result<LossVars> {
    let n = targets.num_objects;
    if tape.shape(pred.object_boxes) != [n, 4] {
        return Err(Error::ShapeMismatch(format!(
            "{n} target objects vs predictions {:?}",
            tape.shape(pred.object_boxes)
        )));
    }
    let box_t = tape.constant(Tensor::from_f64([n, 4], &targets.object_boxes)?)?;
    let l_box = tape.mse(pred.object_boxes, box_t)?;
    let mask_t = Tensor::from_f64(tape.shape(pred.object_masks).to_vec(), &targets.object_masks)?;
    let l_mask = tape.bce_with_logits(pred.object_masks, &mask_t)?;

    let mut terms = vec![(l_box, lit::<T>(weights.box_l2)), (l_mask, lit::<T>(weights.mask))];
    let mut l_triplet_mask = None;
    let mut l_triplet_superbox = None;
    if let (Some(masks), Some(sboxes)) = (pred.triplet_masks, pred.superboxes) {
        let m = targets.num_triplets;
        if tape.shape(sboxes) != [m, 4] {
            return Err(Error::ShapeMismatch(format!("{m} target triplets vs predictions {:?}", tape.shape(sboxes))));
        }
        let pixels = m * config.triplet_mask_size * config.triplet_mask_size;
        let logits = tape.reshape(masks, &[pixels, TRIPLET_MASK_CLASSES])?;
        let ce = tape.softmax_cross_entropy(logits, &targets.triplet_labels)?;
        let sb_t = tape.constant(Tensor::from_f64([m, 4], &targets.superboxes)?)?;
        let l2 = tape.mse(sboxes, sb_t)?;
        terms.push((ce, lit(weights.triplet_mask)));
        terms.push((l2, lit(weights.triplet_superbox)));
        l_triplet_mask = Some(ce);
        l_triplet_superbox = Some(l2);
    }
    let total = tape.weighted_sum(&terms)?;
    Ok(LossVars { l_box, l_mask, l_triplet_mask, l_triplet_superbox, total })
}

/// Builds the full pretext loss for a batch on `tape`.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    batch: &GraphBatch,
    targets: &BatchTargets,
    weights: &LossWeights,
) -> Result<LossVars> {
    let (_, pred) = forward(tape, store, config, batch, weights.uses_triplets())?;
    compute_losses(tape, config, &pred, targets, weights)
}

/// Head outputs for one graph as plain values.
#[derive(Debug, Clone)]
pub struct LayoutPrediction {
    pub object_boxes: Vec<BoundingBox>,
    /// Per object, `mask²` logits.
    pub object_mask_logits: Vec<Vec<f64>>,
    /// Per triplet, argmax label per pixel.
    pub triplet_labels: Vec<Vec<usize>>,
    pub superboxes: Vec<BoundingBox>,
}

pub fn predict_layout<T: Scalar>(
    store: &ParamStore<T>,
    config: &ModelConfig,
    batch: &GraphBatch,
) -> Result<LayoutPrediction> {
    let mut tape = Tape::new();
    let (_, pred) = forward(&mut tape, store, config, batch, true)?;
    let rows = |v: Var, width: usize| -> Vec<Vec<f64>> {
        tape.value(v).to_f64_vec().chunks(width).map(<[f64]>::to_vec).collect()
    };
    let boxes = |v: Option<Var>| v.map(|v| rows(v, 4).iter().map(|r| to_bounding_box(r)).collect()).unwrap_or_default();
    let pixels = config.triplet_mask_size * config.triplet_mask_size;
    let triplet_labels = pred
        .triplet_masks
        .map(|v| {
            rows(v, pixels * TRIPLET_MASK_CLASSES)
                .iter()
                .map(|m| {
                    m.chunks(TRIPLET_MASK_CLASSES)
                        .map(|px| (0..TRIPLET_MASK_CLASSES).fold(0, |best, k| if px[k] > px[best] { k } else { best }))
                        .collect()
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(LayoutPrediction {
        object_boxes: boxes(Some(pred.object_boxes)),
        object_mask_logits: rows(pred.object_masks, config.object_mask_size * config.object_mask_size),
        triplet_labels,
        superboxes: boxes(pred.superboxes),
    })
}
