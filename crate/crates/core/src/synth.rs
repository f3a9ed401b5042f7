//! Procedural long-tailed scene corpus.
//!
//! Classes follow a Zipf frequency profile and each class has a layout prior
//! (typical center and size), so object placement is learnable from the class
//! and its neighbours.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::graph::{AnnotatedObject, AnnotationRecord, ClassVocabulary};

const STOCK_NAMES: &[&str] = &[
    "person", "tree", "sky", "grass", "wall", "building", "road", "clouds", "table", "car",
    "fence", "floor", "chair", "pavement", "window", "dirt", "bus", "mountain", "bush", "plant",
    "truck", "sand", "water", "sea", "bench", "bottle", "cup", "train", "horse", "dog",
    "umbrella", "cat", "boat", "bicycle", "motorcycle", "elephant", "giraffe", "zebra", "surfboard", "skateboard",
    "skis", "laptop", "kite", "snow", "bird", "cow", "sheep", "airplane", "pizza", "clock",
    "book", "vase", "bed", "couch", "tv", "banana", "apple", "sink", "oven", "bear",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabSpec {
    pub n_classes: usize,
    pub zipf_exponent: f64,
    /// Seeds the per-class layout priors; corpora sharing it share a layout distribution.
    pub layout_seed: u64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that an object is placed inside an earlier, larger one.
    pub nest_probability: f64,
}

impl Default for VocabSpec {
    fn default() -> Self {
        Self {
            n_classes: 50,
            zipf_exponent: 1.0,
            layout_seed: 1,
            min_objects: 2,
            max_objects: 8,
            nest_probability: 0.15,
        }
    }
}

impl VocabSpec {
    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes)
            .map(|i| match STOCK_NAMES.get(i) {
                Some(n) => n.to_string(),
                None => format!("class_{i}"),
            })
            .collect()
    }

    pub fn vocabulary(&self) -> ClassVocabulary {
        ClassVocabulary::new(self.class_names()).expect("stock names are unique")
    }

    /// Relative draw weight of the class at frequency rank `rank` (0-based).
    pub fn weight(&self, rank: usize) -> f64 {
        (rank as f64 + 1.0).powf(-self.zipf_exponent)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayoutPrior {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

fn layout_priors(spec: &VocabSpec) -> Vec<LayoutPrior> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.layout_seed);
    (0..spec.n_classes)
        .map(|_| {
            let wide = rng.random_bool(0.15);
            let (w, h) = if wide {
                (rng.random_range(0.6..0.95), rng.random_range(0.15..0.4))
            } else {
                (rng.random_range(0.08..0.4), rng.random_range(0.08..0.45))
            };
            LayoutPrior { cx: rng.random_range(0.15..0.85), cy: rng.random_range(0.1..0.9), w, h }
        })
        .collect()
}

fn clamp_box(cx: f64, cy: f64, w: f64, h: f64) -> Option<BoundingBox> {
    let x0 = (cx - w / 2.0).clamp(0.0, 1.0);
    let x1 = (cx + w / 2.0).clamp(0.0, 1.0);
    let y0 = (cy - h / 2.0).clamp(0.0, 1.0);
    let y1 = (cy + h / 2.0).clamp(0.0, 1.0);
    BoundingBox::new(x0, y0, x1, y1).ok().filter(|b| b.width() > 0.02 && b.height() > 0.02)
}

/// Generates `n_scenes` annotation records; identical inputs give identical output.
pub fn generate_synthetic_corpus(seed: u64, n_scenes: usize, spec: &VocabSpec) -> Vec<AnnotationRecord> {
    if n_scenes == 0 || spec.n_classes == 0 {
        return Vec::new();
    }
    let priors = layout_priors(spec);
    let classes = WeightedIndex::new((0..spec.n_classes).map(|r| spec.weight(r)))
        .expect("zipf weights are positive");
    let jitter = Normal::new(0.0, 0.07).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (spec.min_objects.max(2), spec.max_objects.max(spec.min_objects.max(2)));

    (0..n_scenes)
        .map(|scene| {
            let n = rng.random_range(lo..=hi);
            let mut objects: Vec<AnnotatedObject> = Vec::with_capacity(n);
            while objects.len() < n {
                let class_id = classes.sample(&mut rng);
                let p = priors[class_id];
                let host = if !objects.is_empty() && rng.random_bool(spec.nest_probability) {
                    let i = rng.random_range(0..objects.len());
                    Some(objects[i].bbox).filter(|b| b.width() > 0.1 && b.height() > 0.1)
                } else {
                    None
                };
                let bbox = match host {
                    Some(h) => {
                        let w = h.width() * rng.random_range(0.25..0.6);
                        let hh = h.height() * rng.random_range(0.25..0.6);
                        let x0 = h.x0() + rng.random_range(0.0..1.0) * (h.width() - w);
                        let y0 = h.y0() + rng.random_range(0.0..1.0) * (h.height() - hh);
                        BoundingBox::new(x0, y0, x0 + w, y0 + hh).ok()
                    }
                    None => {
                        let s = rng.random_range(0.75..1.25);
                        clamp_box(
                            p.cx + jitter.sample(&mut rng),
                            p.cy + jitter.sample(&mut rng),
                            p.w * s,
                            p.h * s,
                        )
                    }
                };
                if let Some(bbox) = bbox {
                    objects.push(AnnotatedObject { class_id, bbox });
                }
            }
            AnnotationRecord { image_id: scene.to_string(), objects }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geometric_predicate, Predicate};
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_bytes() {
        let spec = VocabSpec::default();
        let a = serde_json::to_vec(&generate_synthetic_corpus(7, 200, &spec)).unwrap();
        let b = serde_json::to_vec(&generate_synthetic_corpus(7, 200, &spec)).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_vec(&generate_synthetic_corpus(8, 200, &spec)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_scenes() {
        assert!(generate_synthetic_corpus(1, 0, &VocabSpec::default()).is_empty());
    }

    #[test]
    fn scenes_respect_object_bounds_and_cover_all_predicates() {
        let corpus = generate_synthetic_corpus(3, 200, &VocabSpec::default());
        let mut seen = HashSet::new();
        for r in &corpus {
            assert!((2..=8).contains(&r.objects.len()));
            for i in 0..r.objects.len() {
                for j in i + 1..r.objects.len() {
                    if let Ok(p) = geometric_predicate(&r.objects[i].bbox, &r.objects[j].bbox) {
                        seen.insert(p);
                    }
                }
            }
        }
        assert_eq!(seen.len(), Predicate::COUNT);
    }

    #[test]
    fn class_draws_are_long_tailed() {
        let spec = VocabSpec::default();
        let corpus = generate_synthetic_corpus(11, 200, &spec);
        let mut hist = vec![0usize; spec.n_classes];
        for r in &corpus {
            for o in &r.objects {
                hist[o.class_id] += 1;
            }
        }
        // mean count per class over log-spaced rank buckets falls off with rank
        let bounds = [0, 1, 2, 4, 8, 16, 32, 50];
        let means: Vec<f64> = bounds
            .windows(2)
            .map(|w| hist[w[0]..w[1]].iter().sum::<usize>() as f64 / (w[1] - w[0]) as f64)
            .collect();
        assert!(means.windows(2).all(|w| w[0] >= w[1]), "{means:?}");
        let top = *hist.iter().max().unwrap();
        assert_eq!(hist[0], top);
    }
}
