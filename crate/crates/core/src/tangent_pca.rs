//! Tangent frames from weighted local PCA and frame-to-frame transports from
//! orthogonal Procrustes alignment.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{k_nearest, PointCloud};
use crate::error::{HdmError, Result};
use crate::geometry::{transport_rotation, AmbientPoint};

const ORTHONORMAL_TOL: f64 = 1e-10;
const ALIGNMENT_TOL: f64 = 1e-12;

/// Profile `K_PCA` on `[0, 1]`; zero outside.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaWeight {
    /// `(1 − u²)`
    Epanechnikov,
    /// `exp(−5u²)`
    Gaussian5,
}

impl PcaWeight {
    pub fn eval(self, u: f64) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        match self {
            PcaWeight::Epanechnikov => 1.0 - u * u,
            PcaWeight::Gaussian5 => (-5.0 * u * u).exp(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaConfig {
    /// Squared length scale; neighbours farther than `√eps_pca` get zero weight.
    pub eps_pca: f64,
    pub k_neighbors: usize,
    pub weight_kernel: PcaWeight,
    /// Fixed intrinsic dimension; estimated from singular-value gaps when absent.
    pub target_dim: Option<usize>,
    /// Minimum relative gap `(σ_d − σ_{d+1}) / σ_1` that marks dimension `d`.
    pub gap_threshold: f64,
}

impl PcaConfig {
    pub fn new(eps_pca: f64, k_neighbors: usize) -> Self {
        Self {
            eps_pca,
            k_neighbors,
            weight_kernel: PcaWeight::Gaussian5,
            target_dim: None,
            gap_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_pca > 0.0) {
            return Err(HdmError::InvalidConfig(format!(
                "eps_pca must be positive, got {}",
                self.eps_pca
            )));
        }
        if self.k_neighbors == 0 {
            return Err(HdmError::InvalidConfig("k_neighbors must be at least 1".into()));
        }
        if self.target_dim == Some(0) {
            return Err(HdmError::InvalidConfig("target_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Orthonormal `D × d` basis of an estimated tangent plane.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentFrame {
    base_index: usize,
    basis: DMatrix<f64>,
}

impl TangentFrame {
    pub fn new(base_index: usize, basis: DMatrix<f64>) -> Result<Self> {
        let gram = basis.transpose() * &basis;
        let defect = (gram - DMatrix::identity(basis.ncols(), basis.ncols())).amax();
        if defect > ORTHONORMAL_TOL {
            return Err(HdmError::MatrixInvariant(format!(
                "frame {base_index} is not orthonormal (defect {defect:e})"
            )));
        }
        Ok(Self { base_index, basis })
    }

    pub fn base_index(&self) -> usize {
        self.base_index
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Orthogonal `d × d` map from coefficients in frame `from_index` to
/// coefficients in frame `to_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportEstimate {
    pub from_index: usize,
    pub to_index: usize,
    pub matrix: DMatrix<f64>,
    /// `±1`; Procrustes optimizes over O(d), so reflections are kept.
    pub determinant: f64,
}

/// Weighted local SVD at one point.
#[derive(Clone, Debug)]
pub struct LocalPca {
    pub index: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Left singular vectors matching `singular_values`.
    pub left: DMatrix<f64>,
    pub usable_neighbors: usize,
    /// The radius was widened to the whole neighbour list.
    pub widened: bool,
}

/// Runs the weighted SVD of `X_j D_j` over the supplied neighbour list.
///
/// Columns of `X_j` are `ξ_k − ξ_j`; `D_j` holds `sqrt(K_PCA(‖ξ_k − ξ_j‖ / √ε_PCA))`.
pub fn local_pca(cloud: &PointCloud, j: usize, neighbors: &[(usize, f64)], cfg: &PcaConfig) -> Result<LocalPca> {
    let dim = cloud.dim();
    let centre = cloud.point(j);
    let weighted_columns = |scale: f64| {
        let mut columns: Vec<f64> = Vec::with_capacity(neighbors.len() * dim);
        for &(k, sq) in neighbors {
            let w = cfg.weight_kernel.eval(sq.sqrt() / scale);
            if w <= 0.0 {
                continue;
            }
            let w = w.sqrt();
            columns.extend(cloud.point(k).iter().zip(centre).map(|(a, b)| (a - b) * w));
        }
        columns
    };
    let mut columns = weighted_columns(cfg.eps_pca.sqrt());
    // Too few neighbours inside the radius: fall back to the whole list.
    let needed = cfg.target_dim.unwrap_or(1).max(1);
    let widened = columns.len() / dim < needed && neighbors.len() >= needed;
    if widened {
        let farthest = neighbors.iter().map(|n| n.1).fold(0.0f64, f64::max).sqrt();
        columns = weighted_columns(farthest * (1.0 + 1e-12));
    }
    let usable = columns.len() / dim;
    if usable == 0 {
        return Err(HdmError::FrameEstimation {
            index: j,
            usable: 0,
            needed: 1,
        });
    }
    let x = DMatrix::from_column_slice(dim, usable, &columns);
    let svd = x.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let left = DMatrix::from_fn(dim, order.len(), |r, c| u[(r, order[c])]);
    Ok(LocalPca {
        index: j,
        singular_values,
        left,
        usable_neighbors: usable,
        widened,
    })
}

/// Smallest `d` whose relative gap `(σ_d − σ_{d+1}) / σ_1` exceeds `threshold`
/// (`σ` beyond the list counts as zero).
pub fn point_dimension(singular_values: &[f64], threshold: f64) -> Option<usize> {
    let top = *singular_values.first()?;
    if !(top > 0.0) {
        return None;
    }
    let len = singular_values.len();
    (1..=len)
        .find(|&d| {
            let next = if d < len { singular_values[d] } else { 0.0 };
            (singular_values[d - 1] - next) / top > threshold
        })
        .or(Some(len))
}

/// Median over points of [`point_dimension`] (lower median for even counts).
pub fn estimate_dimension(singular_values: &[Vec<f64>], threshold: f64) -> Result<usize> {
    if singular_values.is_empty() {
        return Err(HdmError::InvalidConfig(
            "no singular values to estimate dimension from".into(),
        ));
    }
    let mut dims = Vec::with_capacity(singular_values.len());
    for (index, sv) in singular_values.iter().enumerate() {
        dims.push(point_dimension(sv, threshold).ok_or(HdmError::ZeroSingularValues { index })?);
    }
    dims.sort_unstable();
    Ok(dims[(dims.len() - 1) / 2])
}

fn frame_from_pca(pca: &LocalPca, dim: usize) -> Result<TangentFrame> {
    if pca.usable_neighbors < dim || pca.left.ncols() < dim {
        return Err(HdmError::FrameEstimation {
            index: pca.index,
            usable: pca.usable_neighbors,
            needed: dim,
        });
    }
    if pca.singular_values.first().map_or(true, |&s| s <= 0.0) {
        return Err(HdmError::ZeroSingularValues { index: pca.index });
    }
    TangentFrame::new(pca.index, pca.left.columns(0, dim).into_owned())
}

fn neighbors_of(cloud: &PointCloud, j: usize, k: usize) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> = (0..cloud.len())
        .filter(|&i| i != j)
        .map(|i| (i, cloud.squared_distance(i, j)))
        .collect();
    cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    cand.truncate(k);
    cand
}

/// Frame at a single point; the dimension is `cfg.target_dim` or this point's
/// own singular-value gap.
pub fn local_pca_frame(cloud: &PointCloud, j: usize, cfg: &PcaConfig) -> Result<TangentFrame> {
    cfg.validate()?;
    if j >= cloud.len() {
        return Err(HdmError::IndexOutOfRange {
            index: j,
            len: cloud.len(),
        });
    }
    let pca = local_pca(cloud, j, &neighbors_of(cloud, j, cfg.k_neighbors), cfg)?;
    let dim = match cfg.target_dim {
        Some(d) => d,
        None => {
            point_dimension(&pca.singular_values, cfg.gap_threshold).ok_or(HdmError::ZeroSingularValues { index: j })?
        }
    };
    frame_from_pca(&pca, dim)
}

/// Frames at every point of the cloud with one shared dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub dim: usize,
    pub frames: Vec<TangentFrame>,
}

pub fn estimate_frames(cloud: &PointCloud, cfg: &PcaConfig) -> Result<FrameSet> {
    cfg.validate()?;
    let nn = k_nearest(cloud, cfg.k_neighbors);
    let pcas = nn
        .par_iter()
        .enumerate()
        .map(|(j, list)| local_pca(cloud, j, list, cfg))
        .collect::<Result<Vec<_>>>()?;
    let dim = match cfg.target_dim {
        Some(d) => d,
        None => {
            let svs: Vec<Vec<f64>> = pcas.iter().map(|p| p.singular_values.clone()).collect();
            estimate_dimension(&svs, cfg.gap_threshold)?
        }
    };
    let frames = pcas
        .iter()
        .map(|p| frame_from_pca(p, dim))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSet { dim, frames })
}

/// `O = UVᵀ` from the SVD `B_toᵀ B_from = UΣVᵀ`.
pub fn procrustes_transport(from: &TangentFrame, to: &TangentFrame) -> Result<TransportEstimate> {
    if from.dim() != to.dim() || from.ambient_dim() != to.ambient_dim() {
        return Err(HdmError::DimensionMismatch {
            expected: from.dim(),
            found: to.dim(),
        });
    }
    let overlap = to.basis.transpose() * &from.basis;
    let svd = overlap.svd(true, true);
    let smallest = svd.singular_values.min();
    if smallest < ALIGNMENT_TOL {
        return Err(HdmError::AmbiguousAlignment { smallest });
    }
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let matrix = u * v_t;
    let determinant = matrix.determinant().signum();
    Ok(TransportEstimate {
        from_index: from.base_index,
        to_index: to.base_index,
        matrix,
        determinant,
    })
}

/// `τ = B c`.
pub fn lift_coefficients(frame: &TangentFrame, c: &DVector<f64>) -> Result<DVector<f64>> {
    if c.len() != frame.dim() {
        return Err(HdmError::DimensionMismatch {
            expected: frame.dim(),
            found: c.len(),
        });
    }
    Ok(&frame.basis * c)
}

/// `c = Bᵀ v`, the coefficients of the projection of `v` onto the frame.
pub fn project_coefficients(frame: &TangentFrame, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != frame.ambient_dim() {
        return Err(HdmError::DimensionMismatch {
            expected: frame.ambient_dim(),
            found: v.len(),
        });
    }
    Ok(frame.basis.transpose() * v)
}

/// Number of unit coefficient vectors probed by [`transport_estimation_error`].
const ERROR_PROBES: usize = 16;

/// `max_c ‖B_to O c − P(B_from c)‖` over unit `c` on a circle of probes, with
/// `P` the exact transport on S² between the two base points.
pub fn transport_estimation_error(
    from_point: &AmbientPoint,
    to_point: &AmbientPoint,
    from: &TangentFrame,
    to: &TangentFrame,
    estimate: &TransportEstimate,
) -> Result<f64> {
    if from.ambient_dim() != 3 || from.dim() != 2 || to.ambient_dim() != 3 || to.dim() != 2 {
        return Err(HdmError::DimensionMismatch {
            expected: 2,
            found: from.dim(),
        });
    }
    let rot = transport_rotation(from_point, to_point)?;
    let rot = DMatrix::from_fn(3, 3, |r, c| rot[(r, c)]);
    let mut worst: f64 = 0.0;
    for k in 0..ERROR_PROBES {
        let a = std::f64::consts::TAU * k as f64 / ERROR_PROBES as f64;
        let c = DVector::from_vec(vec![a.cos(), a.sin()]);
        let estimated = &to.basis * (&estimate.matrix * &c);
        let exact = &rot * (&from.basis * &c);
        worst = worst.max((estimated - exact).norm());
    }
    Ok(worst)
}

/// Transports for every base edge, stored once per unordered pair.
#[derive(Clone, Debug, Default)]
pub struct TransportTable {
    dim: usize,
    forward: HashMap<(usize, usize), DMatrix<f64>>,
}

impl TransportTable {
    /// Aligns the frames at both ends of every edge `(i, j)` with `i < j`.
    pub fn from_edges(frames: &FrameSet, edges: &[(usize, usize)]) -> Result<Self> {
        let estimates = edges
            .par_iter()
            .map(|&(i, j)| {
                let (lo, hi) = (i.min(j), i.max(j));
                procrustes_transport(&frames.frames[lo], &frames.frames[hi]).map(|t| ((lo, hi), t.matrix))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: frames.dim,
            forward: estimates.into_iter().collect(),
        })
    }

    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            forward: HashMap::new(),
        }
    }

    pub fn insert(&mut self, estimate: TransportEstimate) {
        self.insert_matrix(estimate.from_index, estimate.to_index, estimate.matrix);
    }

    /// Stores `matrix` as the map from coefficients at `from` to those at `to`.
    pub fn insert_matrix(&mut self, from: usize, to: usize, matrix: DMatrix<f64>) {
        self.dim = matrix.nrows();
        if from < to {
            self.forward.insert((from, to), matrix);
        } else {
            self.forward.insert((to, from), matrix.transpose());
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Map from coefficients at `from` to coefficients at `to`.
    pub fn get(&self, from: usize, to: usize) -> Result<DMatrix<f64>> {
        if from < to {
            self.forward.get(&(from, to)).cloned()
        } else {
            self.forward.get(&(to, from)).map(|m| m.transpose())
        }
        .ok_or(HdmError::MissingTransport { from, to })
    }

    /// Entries `(i, j, O_{i→j})` with `i < j`, sorted.
    pub fn sorted_entries(&self) -> Vec<(usize, usize, &DMatrix<f64>)> {
        let mut out: Vec<_> = self.forward.iter().map(|(&(i, j), m)| (i, j, m)).collect();
        out.sort_by_key(|e| (e.0, e.1));
        out
    }
}
