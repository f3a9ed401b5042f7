//! Training loop for the layout pretext task, checkpoints and layout metrics.

use std::fmt::Write as _;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SceneGraph;
use crate::model::{
    batch_loss, predict_layout, BatchTargets, GraphBatch, LossBreakdown, LossWeights, ModelConfig,
};
use crate::model::{rasterize_targets, LayoutPrediction, LayoutTarget};
use crate::numerics::{read_checkpoint, write_checkpoint, AdamConfig, AdamState, ParamStore, Tape};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Graphs merged into one batch graph per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,
    pub model: ModelConfig,
    /// When false the triplet heads are not trained and their terms report 0.
    pub triplet_supervision: bool,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            loss_weights: LossWeights::default(),
            model: ModelConfig::default(),
            triplet_supervision: true,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        self.model.validate()
    }

    pub fn effective_weights(&self) -> LossWeights {
        if self.triplet_supervision {
            self.loss_weights
        } else {
            self.loss_weights.without_triplets()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutMetrics {
    pub mean_box_iou: f64,
    pub mean_superbox_iou: f64,
    pub triplet_mask_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    /// Step-averaged loss terms.
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Layout quality of the final parameters on the training corpus; zero after divergence.
    pub layout: LayoutMetrics,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Mean of the last `window` step losses divided by the mean of the first `window`.
    pub fn smoothed_loss_ratio(&self, window: usize) -> Option<f64> {
        let n = self.step_losses.len();
        if n == 0 || window == 0 {
            return None;
        }
        let w = window.min(n);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some(mean(&self.step_losses[n - w..]) / mean(&self.step_losses[..w]))
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>5} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}", "epoch", "steps", "box", "mask", "t_mask", "t_sbox", "total");
        for e in &self.epochs {
            let l = &e.losses;
            let _ = writeln!(
                s,
                "{:>5} {:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
                e.epoch, e.steps, l.l_box, l.l_mask, l.l_triplet_mask, l.l_triplet_superbox, l.total
            );
        }
        let _ = writeln!(
            s,
            "box IoU {:.4}  superbox IoU {:.4}  triplet-mask accuracy {:.4}  ({:.1}s)",
            self.layout.mean_box_iou, self.layout.mean_superbox_iou, self.layout.triplet_mask_accuracy, self.wall_clock_secs
        );
        s
    }
}

/// Trained parameters plus the model shape needed to read them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub store: ParamStore<f64>,
    pub train: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, store: ParamStore<f64>) -> Result<Self> {
        model.check_store(&store)?;
        Ok(Self { model, store, train: None })
    }

    /// Path of the JSON manifest written next to `path`.
    pub fn manifest_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_checkpoint(BufWriter::new(std::fs::File::create(path)?), &self.store)?;
        let manifest = Manifest { format_version: 1, model: self.model.clone(), train: self.train.clone() };
        std::fs::write(Self::manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(Self::manifest_path(path))?)?;
        let store = read_checkpoint(BufReader::new(std::fs::File::open(path)?))?;
        manifest.model.check_store(&store)?;
        Ok(Self { model: manifest.model, store, train: manifest.train })
    }

    /// Fails unless every graph's classes fit this model's class table.
    pub fn check_corpus(&self, corpus: &[SceneGraph]) -> Result<()> {
        for g in corpus {
            g.check_classes(self.model.num_classes).map_err(|e| {
                Error::IncompatibleCheckpoint(format!("graph {}: {e}; model has {} classes", g.image_id(), self.model.num_classes))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient appeared; parameters are from the previous step.
    Diverged { epoch: usize, step: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub store: ParamStore<T>,
    pub report: TrainReport,
    pub status: TrainStatus,
}

impl TrainOutcome<f64> {
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint { model: config.model.clone(), store: self.store.clone(), train: Some(config.clone()) }
    }

    /// The checkpoint and report, or `NumericalDivergence` if training aborted.
    pub fn into_result(self, config: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
        match self.status {
            TrainStatus::Completed => Ok((self.checkpoint(config), self.report)),
            TrainStatus::Diverged { epoch, step } => Err(Error::NumericalDivergence { epoch, step }),
        }
    }
}

/// Trains in `f64` and fails on divergence. See [`train_with`] for the last good parameters.
pub fn train(corpus: &[SceneGraph], config: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    train_with::<f64>(corpus, config)?.into_result(config)
}

/// Deterministic given `(corpus, config)` apart from the wall-clock field.
pub fn train_with<T: Scalar>(corpus: &[SceneGraph], config: &TrainConfig) -> Result<TrainOutcome<T>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    config.validate()?;
    let model = &config.model;
    for g in corpus {
        g.check_classes(model.num_classes)?;
    }
    let start = Instant::now();
    let mut store = ParamStore::new(config.seed);
    model.init_params(&mut store)?;
    let mut adam = AdamState::new(AdamConfig { lr: config.learning_rate, ..AdamConfig::default() });
    let weights = config.effective_weights();
    let targets: Vec<LayoutTarget> = corpus.iter().map(|g| rasterize_targets(g, model)).collect();

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut report = TrainReport { epochs: Vec::new(), step_losses: Vec::new(), layout: LayoutMetrics::default(), wall_clock_secs: 0.0 };
    let mut status = TrainStatus::Completed;

    'epochs: for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let graphs: Vec<&SceneGraph> = chunk.iter().map(|&i| &corpus[i]).collect();
            let batch = GraphBatch::new(graphs.iter().copied());
            let batch_targets = BatchTargets::new(&chunk.iter().map(|&i| targets[i].clone()).collect::<Vec<_>>());

            store.zero_grad();
            let mut tape = Tape::new();
            let loss = match batch_loss(&mut tape, &store, model, &batch, &batch_targets, &weights) {
                Ok(l) => l,
                Err(Error::NonFinite(op)) => {
                    log::error!("non-finite value in {op} at epoch {epoch}, step {steps}");
                    status = TrainStatus::Diverged { epoch, step: steps };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            tape.backward(loss.total, &mut store)?;
            if store.iter().any(|(_, p)| p.grad.as_ref().is_some_and(|g| !g.is_finite())) {
                log::error!("non-finite gradient at epoch {epoch}, step {steps}");
                status = TrainStatus::Diverged { epoch, step: steps };
                break 'epochs;
            }
            adam.step(&mut store)?;

            let b = loss.breakdown(&tape)?;
            report.step_losses.push(b.total);
            sum.l_box += b.l_box;
            sum.l_mask += b.l_mask;
            sum.l_triplet_mask += b.l_triplet_mask;
            sum.l_triplet_superbox += b.l_triplet_superbox;
            sum.total += b.total;
            steps += 1;
        }
        let k = steps.max(1) as f64;
        let losses = LossBreakdown {
            l_box: sum.l_box / k,
            l_mask: sum.l_mask / k,
            l_triplet_mask: sum.l_triplet_mask / k,
            l_triplet_superbox: sum.l_triplet_superbox / k,
            total: sum.total / k,
        };
        log::info!("epoch {epoch}: total {:.5}", losses.total);
        report.epochs.push(EpochStats { epoch, steps, losses });
    }

    if status == TrainStatus::Completed {
        report.layout = layout_metrics_for(&store, model, corpus)?;
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { store, report, status })
}

/// IoU and pixel accuracy of predictions against targets.
pub fn layout_metrics(preds: &[LayoutPrediction], targets: &[LayoutTarget]) -> Result<LayoutMetrics> {
    if preds.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let (mut box_iou, mut nb) = (0.0, 0usize);
    let (mut sb_iou, mut ns) = (0.0, 0usize);
    let (mut correct, mut pixels) = (0usize, 0usize);
    for (p, t) in preds.iter().zip(targets) {
        if p.object_boxes.len() != t.object_boxes.len() || p.superboxes.len() != t.superboxes.len() {
            return Err(Error::ShapeMismatch("prediction and target counts differ".into()));
        }
        for (a, b) in p.object_boxes.iter().zip(&t.object_boxes) {
            box_iou += a.iou(b);
            nb += 1;
        }
        for (a, b) in p.superboxes.iter().zip(&t.superboxes) {
            sb_iou += a.iou(b);
            ns += 1;
        }
        for (pm, tm) in p.triplet_labels.iter().zip(&t.triplet_masks) {
            correct += pm.iter().zip(tm).filter(|(a, b)| a == b).count();
            pixels += tm.len();
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(LayoutMetrics {
        mean_box_iou: mean(box_iou, nb),
        mean_superbox_iou: mean(sb_iou, ns),
        triplet_mask_accuracy: mean(correct as f64, pixels),
    })
}

fn layout_metrics_for<T: Scalar>(store: &ParamStore<T>, model: &ModelConfig, corpus: &[SceneGraph]) -> Result<LayoutMetrics> {
    let mut preds = Vec::with_capacity(corpus.len());
    for g in corpus {
        preds.push(predict_layout(store, model, &GraphBatch::single(g))?);
    }
    let targets: Vec<_> = corpus.iter().map(|g| rasterize_targets(g, model)).collect();
    layout_metrics(&preds, &targets)
}

/// Layout quality of a checkpoint on `corpus`.
pub fn evaluate_layout(checkpoint: &Checkpoint, corpus: &[SceneGraph]) -> Result<LayoutMetrics> {
    checkpoint.model.check_store(&checkpoint.store)?;
    checkpoint.check_corpus(corpus)?;
    layout_metrics_for(&checkpoint.store, &checkpoint.model, corpus)
}
