use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Predicate;
use crate::numerics::{mlp_init, Init, ParamStore};
use crate::scalar::Scalar;

/// Dimensions of the encoder and the layout heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of object and predicate embeddings.
    pub d_embed: usize,
    pub d_hidden: usize,
    /// Graph-convolution rounds, each with its own parameters.
    pub n_rounds: usize,
    /// Hidden widths of the per-triplet MLP inside one round.
    pub gcn_hidden: Vec<usize>,
    pub num_classes: usize,
    /// Side of the per-object mask raster.
    pub object_mask_size: usize,
    /// Side of the triplet mask raster.
    pub triplet_mask_size: usize,
    /// Side of the grid the triplet mask head predicts before bilinear upsampling.
    pub triplet_mask_coarse: usize,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_embed: 128,
            d_hidden: 512,
            n_rounds: 5,
            gcn_hidden: vec![512],
            num_classes: 0,
            object_mask_size: 16,
            triplet_mask_size: 64,
            triplet_mask_coarse: 16,
            leaky_slope: 0.01,
        }
    }
}

/// Number of classes in a triplet mask: background, subject, object.
pub const TRIPLET_MASK_CLASSES: usize = 3;

impl ModelConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        Self { num_classes, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.d_embed == 0 || self.d_hidden == 0 {
            return bad("embedding and hidden widths must be positive");
        }
        if self.n_rounds == 0 {
            return bad("n_rounds must be at least 1");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        if self.gcn_hidden.contains(&0) {
            return bad("gcn hidden widths must be positive");
        }
        if self.object_mask_size == 0
            || self.triplet_mask_coarse == 0
            || !self.triplet_mask_size.is_multiple_of(self.triplet_mask_coarse)
        {
            return bad("triplet mask size must be a positive multiple of the coarse grid");
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad("leaky_slope must be finite and non-negative");
        }
        Ok(())
    }

    pub fn triplet_width(&self) -> usize {
        3 * self.d_embed
    }

    pub fn upsample_factor(&self) -> usize {
        self.triplet_mask_size / self.triplet_mask_coarse
    }

    pub fn gcn_dims(&self) -> Vec<usize> {
        let w = self.triplet_width();
        std::iter::once(w).chain(self.gcn_hidden.iter().copied()).chain(std::iter::once(w)).collect()
    }

    pub fn box_head_dims(&self) -> Vec<usize> {
        vec![self.d_embed, self.d_hidden, 4]
    }

    pub fn mask_head_dims(&self) -> Vec<usize> {
        vec![self.d_embed, self.d_hidden, self.object_mask_size * self.object_mask_size]
    }

    pub fn triplet_mask_head_dims(&self) -> Vec<usize> {
        let c = self.triplet_mask_coarse;
        vec![self.triplet_width(), self.d_hidden, c * c * TRIPLET_MASK_CLASSES]
    }

    pub fn superbox_head_dims(&self) -> Vec<usize> {
        vec![self.triplet_width(), self.d_hidden, 4]
    }

    /// Every parameter of the model with its shape, in naming-scheme form.
    pub fn expected_params(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            (names::CLASS_TABLE.to_string(), vec![self.num_classes, self.d_embed]),
            (names::PREDICATE_TABLE.to_string(), vec![Predicate::COUNT, self.d_embed]),
        ];
        let mut mlp = |prefix: String, dims: Vec<usize>| {
            for (j, w) in dims.windows(2).enumerate() {
                out.push((format!("{prefix}.layer{j}.weight"), vec![w[0], w[1]]));
                out.push((format!("{prefix}.layer{j}.bias"), vec![w[1]]));
            }
        };
        for r in 0..self.n_rounds {
            mlp(names::gcn_round(r), self.gcn_dims());
        }
        mlp(names::BOX_HEAD.into(), self.box_head_dims());
        mlp(names::MASK_HEAD.into(), self.mask_head_dims());
        mlp(names::TRIPLET_MASK_HEAD.into(), self.triplet_mask_head_dims());
        mlp(names::SUPERBOX_HEAD.into(), self.superbox_head_dims());
        out.sort();
        out
    }

    /// Creates every parameter of the model in `store`.
    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        self.validate()?;
        store.get_or_init(names::CLASS_TABLE, &[self.num_classes, self.d_embed], Init::Uniform(1.0))?;
        store.get_or_init(names::PREDICATE_TABLE, &[Predicate::COUNT, self.d_embed], Init::Uniform(1.0))?;
        for r in 0..self.n_rounds {
            mlp_init(store, &names::gcn_round(r), &self.gcn_dims())?;
        }
        mlp_init(store, names::BOX_HEAD, &self.box_head_dims())?;
        mlp_init(store, names::MASK_HEAD, &self.mask_head_dims())?;
        mlp_init(store, names::TRIPLET_MASK_HEAD, &self.triplet_mask_head_dims())?;
        mlp_init(store, names::SUPERBOX_HEAD, &self.superbox_head_dims())?;
        Ok(())
    }

    /// Checks that `store` holds exactly this model's parameters.
    pub fn check_store<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        self.validate()?;
        let expected = self.expected_params();
        if expected.len() != store.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                store.len()
            )));
        }
        for (name, shape) in expected {
            let t = store
                .get(&name)
                .map_err(|_| Error::IncompatibleCheckpoint(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Parameter naming scheme.
pub mod names {
    pub const CLASS_TABLE: &str = "embed.class";
    pub const PREDICATE_TABLE: &str = "embed.pred";
    pub const BOX_HEAD: &str = "head.box";
    pub const MASK_HEAD: &str = "head.mask";
    pub const TRIPLET_MASK_HEAD: &str = "head.triplet_mask";
    pub const SUPERBOX_HEAD: &str = "head.superbox";

    pub fn gcn_round(r: usize) -> String {
        format!("gcn.round{r}")
    }
}
