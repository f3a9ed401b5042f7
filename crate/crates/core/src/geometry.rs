//! Normalized axis-aligned boxes and the six geometric predicates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates, y growing downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let coords = [x0, y0, x1, y1];
        let valid = coords.iter().all(|c| c.is_finite())
            && 0.0 <= x0
            && x0 < x1
            && x1 <= 1.0
            && 0.0 <= y0
            && y0 < y1
            && y1 <= 1.0;
        if valid {
            Ok(Self { x0, y0, x1, y1 })
        } else {
            Err(Error::InvalidBox(coords))
        }
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn y0(&self) -> f64 {
        self.y0
    }
    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// True when `other` lies within `self`, edges allowed to touch.
    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Geometric relation of a subject box with respect to an object box.
///
/// The discriminant is the wire index used in corpus and database files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Predicate {
    LeftOf = 0,
    RightOf = 1,
    Above = 2,
    Below = 3,
    Inside = 4,
    Surrounding = 5,
}

impl Predicate {
    pub const COUNT: usize = 6;

    pub const ALL: [Predicate; 6] = [
        Predicate::LeftOf,
        Predicate::RightOf,
        Predicate::Above,
        Predicate::Below,
        Predicate::Inside,
        Predicate::Surrounding,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Predicate::LeftOf => "left of",
            Predicate::RightOf => "right of",
            Predicate::Above => "above",
            Predicate::Below => "below",
            Predicate::Inside => "inside",
            Predicate::Surrounding => "surrounding",
        }
    }

    /// Accepts the display name as well as snake/camel spellings (`left_of`, `LeftOf`).
    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .flat_map(char::to_lowercase)
            .collect();
        Self::ALL.into_iter().find(|p| p.name().replace(' ', "") == norm)
    }

    /// The predicate obtained by swapping subject and object.
    pub fn inverse(self) -> Self {
        match self {
            Predicate::LeftOf => Predicate::RightOf,
            Predicate::RightOf => Predicate::LeftOf,
            Predicate::Above => Predicate::Below,
            Predicate::Below => Predicate::Above,
            Predicate::Inside => Predicate::Surrounding,
            Predicate::Surrounding => Predicate::Inside,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Assigns the relation of `subject` to `object`.
///
/// Containment is tested first. Otherwise the displacement between box
/// centers picks a quadrant with boundaries on the diagonals; exact diagonal
/// ties go to the horizontal relation so that swapping the arguments always
/// yields the inverse predicate.
pub fn geometric_predicate(subject: &BoundingBox, object: &BoundingBox) -> Result<Predicate> {
    if subject == object {
        return Err(Error::DegenerateGeometry);
    }
    if object.contains(subject) {
        return Ok(Predicate::Inside);
    }
    if subject.contains(object) {
        return Ok(Predicate::Surrounding);
    }
    let (sx, sy) = subject.center();
    let (ox, oy) = object.center();
    let (mut dx, mut dy) = (ox - sx, oy - sy);
    if dx == 0.0 && dy == 0.0 {
        // Concentric but neither contains the other: fall back to the
        // leading edges, which must differ.
        dx = object.x0 - subject.x0;
        dy = object.y0 - subject.y0;
    }
    let pred = if dx.abs() >= dy.abs() {
        if dx > 0.0 {
            Predicate::LeftOf
        } else {
            Predicate::RightOf
        }
    } else if dy > 0.0 {
        Predicate::Above
    } else {
        Predicate::Below
    };
    Ok(pred)
}

/// Smallest box enclosing both inputs.
pub fn superbox(a: &BoundingBox, b: &BoundingBox) -> BoundingBox {
    BoundingBox {
        x0: a.x0.min(b.x0),
        y0: a.y0.min(b.y0),
        x1: a.x1.max(b.x1),
        y1: a.y1.max(b.y1),
    }
}
