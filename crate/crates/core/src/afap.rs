//! As-flat-as-possible sections: one sample per fibre, matched to an anchor
//! sample by nearest neighbour in the normalized embedding.

use rayon::prelude::*;

use crate::bundle_graph::BundleSampleSet;
use crate::embedding::EmbeddingCoordinates;
use crate::error::{HdmError, Result};
use crate::geometry::{geodesic_distance_sphere, transport_rotation, UnitTangent};

/// `(fibre, sample)`.
pub type SampleIndex = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSection {
    pub anchor: SampleIndex,
    /// Chosen sample index per fibre.
    pub choices: Vec<usize>,
    pub vectors: Vec<UnitTangent>,
}

fn row_of(coords: &EmbeddingCoordinates, (fibre, sample): SampleIndex) -> Result<usize> {
    let offsets = &coords.block_offsets;
    if fibre + 1 >= offsets.len() {
        return Err(HdmError::IndexOutOfRange {
            index: fibre,
            len: offsets.len().saturating_sub(1),
        });
    }
    let size = offsets[fibre + 1] - offsets[fibre];
    if sample >= size {
        return Err(HdmError::IndexOutOfRange {
            index: sample,
            len: size,
        });
    }
    Ok(offsets[fibre] + sample)
}

/// Sample of fibre `target` nearest to the anchor row (ties to the smaller index).
pub fn transport_via_embedding(coords: &EmbeddingCoordinates, anchor: SampleIndex, target: usize) -> Result<usize> {
    let a = coords.rows.row(row_of(coords, anchor)?);
    let offsets = &coords.block_offsets;
    if target + 1 >= offsets.len() {
        return Err(HdmError::IndexOutOfRange {
            index: target,
            len: offsets.len().saturating_sub(1),
        });
    }
    let (lo, hi) = (offsets[target], offsets[target + 1]);
    if lo == hi {
        return Err(HdmError::EmptyFibre { fibre: target });
    }
    let mut best = (0usize, f64::INFINITY);
    for r in lo..hi {
        let d = (coords.rows.row(r) - a).norm_squared();
        if d < best.1 {
            best = (r - lo, d);
        }
    }
    Ok(best.0)
}

/// Matches the anchor in every fibre; the anchor fibre keeps the anchor itself.
pub fn extract_section(
    coords: &EmbeddingCoordinates,
    samples: &BundleSampleSet,
    anchor: SampleIndex,
) -> Result<DiscreteSection> {
    let tangents = samples
        .tangents()
        .ok_or_else(|| HdmError::InvalidConfig("section extraction needs tangent samples".into()))?;
    if coords.block_offsets != samples.block_offsets() {
        return Err(HdmError::DimensionMismatch {
            expected: samples.total_size(),
            found: coords.rows.nrows(),
        });
    }
    row_of(coords, anchor)?;
    let choices = (0..samples.n_base())
        .into_par_iter()
        .map(|k| {
            if k == anchor.0 {
                Ok(anchor.1)
            } else {
                transport_via_embedding(coords, anchor, k)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let vectors = choices.iter().enumerate().map(|(k, &r)| tangents[k][r]).collect();
    Ok(DiscreteSection {
        anchor,
        choices,
        vectors,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngleEntry {
    pub fibre: usize,
    /// Geodesic distance from the anchor base point.
    pub distance: f64,
    /// Angle between the chosen vector and the exact transport of the anchor vector.
    pub angle: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AngleReport {
    pub entries: Vec<AngleEntry>,
    /// Fibres antipodal to the anchor, where transport is undefined.
    pub skipped: Vec<usize>,
}

impl AngleReport {
    /// Mean angle over entries whose distance satisfies `keep`.
    pub fn mean_angle(&self, keep: impl Fn(f64) -> bool) -> Option<f64> {
        let picked: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| keep(e.distance))
            .map(|e| e.angle)
            .collect();
        (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

/// Compares each chosen vector with the geodesic transport of the anchor vector.
pub fn section_angle_report(section: &DiscreteSection) -> AngleReport {
    let anchor = section.vectors[section.anchor.0];
    let mut report = AngleReport::default();
    for (k, v) in section.vectors.iter().enumerate() {
        if k == section.anchor.0 {
            report.entries.push(AngleEntry {
                fibre: k,
                distance: 0.0,
                angle: 0.0,
            });
            continue;
        }
        let Ok(rot) = transport_rotation(anchor.base(), v.base()) else {
            report.skipped.push(k);
            continue;
        };
        let moved = rot * anchor.vector();
        let angle = moved.cross(v.vector()).norm().atan2(moved.dot(v.vector()));
        report.entries.push(AngleEntry {
            fibre: k,
            distance: geodesic_distance_sphere(anchor.base(), v.base()),
            angle,
        });
    }
    report
}
