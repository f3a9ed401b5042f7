//! Ingestion of COCO-style box annotations (`images`, `annotations`, `categories`).

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::graph::{AnnotatedObject, AnnotationRecord, ClassVocabulary};

#[derive(Deserialize)]
struct CocoFile {
    #[serde(default)]
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: Option<u64>,
    width: Option<f64>,
    height: Option<f64>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: Option<u64>,
    category_id: Option<u64>,
    bbox: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// Records with normalized corner boxes plus the category vocabulary
/// (categories in file order, frequencies zero).
#[derive(Debug, Clone)]
pub struct CocoDataset {
    pub records: Vec<AnnotationRecord>,
    pub vocabulary: ClassVocabulary,
}

pub fn load_coco_annotations(path: impl AsRef<Path>) -> Result<CocoDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_coco_annotations(&text)
}

pub fn parse_coco_annotations(text: &str) -> Result<CocoDataset> {
    let file: CocoFile =
        serde_json::from_str(text).map_err(|e| Error::MalformedAnnotation(e.to_string()))?;

    let vocabulary = ClassVocabulary::new(file.categories.iter().map(|c| c.name.clone()).collect())
        .map_err(|e| Error::MalformedAnnotation(e.to_string()))?;
    let category_index: HashMap<u64, usize> =
        file.categories.iter().enumerate().map(|(i, c)| (c.id, i)).collect();

    let mut images: Vec<(u64, f64, f64)> = Vec::new();
    for img in &file.images {
        match (img.id, img.width, img.height) {
            (Some(id), Some(w), Some(h)) if w > 0.0 && h > 0.0 => images.push((id, w, h)),
            _ => log::warn!("skipping image entry with missing id or size"),
        }
    }
    let image_pos: HashMap<u64, usize> = images.iter().enumerate().map(|(i, im)| (im.0, i)).collect();
    let mut objects: Vec<Vec<AnnotatedObject>> = vec![Vec::new(); images.len()];

    for (n, ann) in file.annotations.iter().enumerate() {
        let (Some(image_id), Some(category_id), Some(bbox)) = (ann.image_id, ann.category_id, &ann.bbox)
        else {
            log::warn!("annotation #{n}: missing image_id, category_id or bbox");
            continue;
        };
        let Some(&pos) = image_pos.get(&image_id) else {
            log::warn!("annotation #{n}: unknown image {image_id}");
            continue;
        };
        let Some(&class_id) = category_index.get(&category_id) else {
            log::warn!("annotation #{n}: unknown category {category_id}");
            continue;
        };
        let &[x, y, w, h] = bbox.as_slice() else {
            log::warn!("annotation #{n}: bbox must have 4 entries");
            continue;
        };
        let (_, iw, ih) = images[pos];
        let x0 = (x / iw).clamp(0.0, 1.0);
        let y0 = (y / ih).clamp(0.0, 1.0);
        let x1 = ((x + w) / iw).clamp(0.0, 1.0);
        let y1 = ((y + h) / ih).clamp(0.0, 1.0);
        match BoundingBox::new(x0, y0, x1, y1) {
            Ok(bbox) => objects[pos].push(AnnotatedObject { class_id, bbox }),
            Err(_) => log::warn!("annotation #{n}: zero-area or invalid bbox {bbox:?}"),
        }
    }

    let records = images
        .iter()
        .zip(objects)
        .filter(|(_, objs)| !objs.is_empty())
        .map(|(im, objects)| AnnotationRecord { image_id: im.0.to_string(), objects })
        .collect();
    Ok(CocoDataset { records, vocabulary })
}
