use std::fmt;
use std::str::FromStr;

use super::shape::{Footprint, Shape};
use crate::{Error, Result};

/// One catalog object. The catalog index doubles as the one-hot slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogEntry {
    pub index: usize,
    pub label: &'static str,
    pub footprint: Footprint,
    pub height: f64,
    pub color: [f32; 3],
}

const fn entry(
    index: usize,
    label: &'static str,
    shape: Shape,
    radius: f64,
    height: f64,
    color: [f32; 3],
) -> CatalogEntry {
    CatalogEntry {
        index,
        label,
        footprint: Footprint { shape, radius },
        height,
        color,
    }
}

/// Five training objects followed by three held-out objects.
pub const CATALOG: [CatalogEntry; 8] = [
    entry(0, "apple", Shape::Circle, 0.045, 0.07, [0.85, 0.10, 0.10]),
    entry(1, "cube", Shape::Square, 0.035, 0.07, [0.95, 0.85, 0.10]),
    entry(2, "wedge", Shape::Polygon { sides: 3 }, 0.05, 0.05, [0.10, 0.70, 0.15]),
    entry(3, "toy", Shape::Polygon { sides: 5 }, 0.045, 0.06, [0.15, 0.25, 0.90]),
    entry(4, "ball", Shape::Circle, 0.04, 0.08, [1.00, 0.55, 0.05]),
    entry(5, "flask", Shape::Polygon { sides: 6 }, 0.045, 0.09, [0.55, 0.15, 0.75]),
    entry(6, "box", Shape::Square, 0.04, 0.06, [0.10, 0.85, 0.85]),
    entry(7, "star", Shape::Star { points: 5 }, 0.05, 0.04, [0.95, 0.15, 0.80]),
];

pub const N_IN_DISTRIBUTION: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectSet {
    InDistribution,
    Ood,
}

impl ObjectSet {
    pub fn entries(self) -> &'static [CatalogEntry] {
        match self {
            ObjectSet::InDistribution => &CATALOG[..N_IN_DISTRIBUTION],
            ObjectSet::Ood => &CATALOG[N_IN_DISTRIBUTION..],
        }
    }

    pub fn labels(self) -> impl Iterator<Item = &'static str> {
        self.entries().iter().map(|e| e.label)
    }

    pub fn find(self, label: &str) -> Result<&'static CatalogEntry> {
        self.entries()
            .iter()
            .find(|e| e.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectSet::InDistribution => "in",
            ObjectSet::Ood => "ood",
        }
    }
}

impl fmt::Display for ObjectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in" | "in_distribution" | "in-distribution" => Ok(ObjectSet::InDistribution),
            "ood" | "out" | "out_of_distribution" => Ok(ObjectSet::Ood),
            other => Err(Error::InvalidValue(format!(
                "object set `{other}` (expected `in` or `ood`)"
            ))),
        }
    }
}

/// Look a label up across the whole catalog.
pub fn lookup(label: &str) -> Result<&'static CatalogEntry> {
    CATALOG
        .iter()
        .find(|e| e.label == label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))
}
