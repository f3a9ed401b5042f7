//! Layout supervision rasterized from boxes.

use super::batch::GraphBatch;
use super::config::ModelConfig;
use crate::geometry::{superbox, BoundingBox};
use crate::graph::SceneGraph;

pub const BACKGROUND: usize = 0;
pub const SUBJECT: usize = 1;
pub const OBJECT: usize = 2;

/// Targets for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutTarget {
    pub object_boxes: Vec<BoundingBox>,
    /// Per object, `object_mask_size²` values in {0, 1}, row-major in the object's own box frame.
    pub object_masks: Vec<Vec<f64>>,
    /// Per triplet, `triplet_mask_size²` labels in image coordinates.
    pub triplet_masks: Vec<Vec<usize>>,
    pub superboxes: Vec<BoundingBox>,
}

/// Paints `label` onto every pixel whose center lies in `b`. A box too thin
/// to cover any center still marks the pixel holding its own center.
fn paint(mask: &mut [usize], size: usize, b: &BoundingBox, label: usize) {
    let px = |v: f64| ((v * size as f64).floor() as usize).min(size - 1);
    let center = |i: usize| (i as f64 + 0.5) / size as f64;
    let mut painted = false;
    for r in px(b.y0())..=px(b.y1()) {
        for c in px(b.x0())..=px(b.x1()) {
            if b.contains_point(center(c), center(r)) {
                mask[r * size + c] = label;
                painted = true;
            }
        }
    }
    if !painted {
        let (cx, cy) = b.center();
        mask[px(cy) * size + px(cx)] = label;
    }
}

/// Triplet mask: subject pixels 1, object pixels 2 (object wins on overlap), else 0.
pub fn triplet_mask(subject: &BoundingBox, object: &BoundingBox, size: usize) -> Vec<usize> {
    let mut mask = vec![BACKGROUND; size * size];
    paint(&mut mask, size, subject, SUBJECT);
    paint(&mut mask, size, object, OBJECT);
    mask
}

pub fn rasterize_targets(graph: &SceneGraph, config: &ModelConfig) -> LayoutTarget {
    let objs = graph.objects();
    let m = config.object_mask_size;
    LayoutTarget {
        object_boxes: objs.iter().map(|o| o.bbox).collect(),
        object_masks: vec![vec![1.0; m * m]; objs.len()],
        triplet_masks: graph
            .triplets()
            .iter()
            .map(|t| triplet_mask(&objs[t.subject].bbox, &objs[t.object].bbox, config.triplet_mask_size))
            .collect(),
        superboxes: graph
            .triplets()
            .iter()
            .map(|t| superbox(&objs[t.subject].bbox, &objs[t.object].bbox))
            .collect(),
    }
}

/// Targets for a batch, flattened in [`GraphBatch`] order.
#[derive(Debug, Clone)]
pub struct BatchTargets {
    /// `N×4`
    pub object_boxes: Vec<f64>,
    /// `N×mask²`
    pub object_masks: Vec<f64>,
    /// `M·size²` labels
    pub triplet_labels: Vec<usize>,
    /// `M×4`
    pub superboxes: Vec<f64>,
    pub num_objects: usize,
    pub num_triplets: usize,
}

impl BatchTargets {
    pub fn new(targets: &[LayoutTarget]) -> Self {
        let mut b = BatchTargets {
            object_boxes: Vec::new(),
            object_masks: Vec::new(),
            triplet_labels: Vec::new(),
            superboxes: Vec::new(),
            num_objects: 0,
            num_triplets: 0,
        };
        for t in targets {
            b.num_objects += t.object_boxes.len();
            b.num_triplets += t.superboxes.len();
            b.object_boxes.extend(t.object_boxes.iter().flat_map(|x| x.to_array()));
            b.object_masks.extend(t.object_masks.iter().flatten());
            b.triplet_labels.extend(t.triplet_masks.iter().flatten());
            b.superboxes.extend(t.superboxes.iter().flat_map(|x| x.to_array()));
        }
        b
    }

    pub fn for_graphs<'a>(graphs: impl IntoIterator<Item = &'a SceneGraph>, config: &ModelConfig) -> Self {
        let targets: Vec<_> = graphs.into_iter().map(|g| rasterize_targets(g, config)).collect();
        Self::new(&targets)
    }

    pub fn matches(&self, batch: &GraphBatch) -> bool {
        self.num_objects == batch.num_objects() && self.num_triplets == batch.num_triplets()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn count(mask: &[usize], label: usize) -> usize {
        mask.iter().filter(|&&v| v == label).count()
    }

    #[test]
    fn disjoint_boxes_cover_their_area() {
        // independent count: pixel centers (i + 0.5) / 64 with i in [lo, hi)
        let centers_in = |a: f64, b: f64| (0..64).filter(|&i| { let c = (i as f64 + 0.5) / 64.0; a <= c && c < b }).count();
        let s = bb(0.1, 0.2, 0.35, 0.5);
        let o = bb(0.55, 0.05, 0.9, 0.95);
        let mask = triplet_mask(&s, &o, 64);
        assert_eq!(count(&mask, SUBJECT), centers_in(0.1, 0.35) * centers_in(0.2, 0.5));
        assert_eq!(count(&mask, OBJECT), centers_in(0.55, 0.9) * centers_in(0.05, 0.95));
        let ratio = count(&mask, SUBJECT) as f64 / count(&mask, OBJECT) as f64;
        assert!((ratio - s.area() / o.area()).abs() < 0.05);
    }

    #[test]
    fn object_wins_inside_full_subject() {
        let s = bb(0.0, 0.0, 1.0, 1.0);
        let o = bb(0.25, 0.25, 0.5, 0.75);
        let mask = triplet_mask(&s, &o, 64);
        assert_eq!(count(&mask, BACKGROUND), 0);
        assert_eq!(count(&mask, OBJECT), 16 * 32);
        assert_eq!(count(&mask, SUBJECT), 64 * 64 - 16 * 32);
    }

    #[test]
    fn thin_box_still_marks_a_pixel() {
        let s = bb(0.5001, 0.0, 0.5052, 1.0);
        let o = bb(0.0, 0.0, 0.1, 0.1);
        let mask = triplet_mask(&s, &o, 64);
        assert!(count(&mask, SUBJECT) > 0);
    }

    #[test]
    fn targets_follow_graph_shape() {
        let objs = vec![(0, bb(0.1, 0.1, 0.3, 0.3)), (1, bb(0.5, 0.4, 0.8, 0.9))];
        let t = crate::graph::Triplet { subject: 0, predicate: crate::geometry::Predicate::LeftOf, object: 1 };
        let g = SceneGraph::new("g", objs, vec![t]).unwrap();
        let cfg = ModelConfig::with_classes(2);
        let lt = rasterize_targets(&g, &cfg);
        assert_eq!(lt.object_masks[0].len(), 256);
        assert!(lt.object_masks.iter().flatten().all(|&v| v == 1.0));
        assert_eq!(lt.triplet_masks[0].len(), 64 * 64);
        assert_eq!(lt.superboxes[0], bb(0.1, 0.1, 0.8, 0.9));
    }
}
