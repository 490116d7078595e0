//! Bundle samples, the mutual-kNN base graph, and assembly of the block
//! weight matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{k_nearest, PointCloud};
use crate::error::{HdmError, Result};
use crate::geometry::{
    sample_fibre_angles, sample_sphere_uniform, transport_rotation, AmbientPoint, FibreSampling, RngSeed, UnitTangent,
    Vec3, GEOMETRY_TOL,
};
use crate::sparse::CsrMatrix;
use crate::tangent_pca::{project_coefficients, FrameSet, TransportTable};

#[derive(Clone, Debug, PartialEq)]
pub enum FibreSamples {
    /// Unit tangent vectors on S².
    Exact(Vec<Vec<UnitTangent>>),
    /// Unit coefficient vectors in estimated tangent frames.
    Coefficients(Vec<Vec<DVector<f64>>>),
}

/// Base points together with one list of fibre samples per base point.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleSampleSet {
    base_points: Vec<AmbientPoint>,
    fibres: FibreSamples,
}

impl BundleSampleSet {
    pub fn new(base_points: Vec<AmbientPoint>, fibres: FibreSamples) -> Result<Self> {
        let count = match &fibres {
            FibreSamples::Exact(f) => f.len(),
            FibreSamples::Coefficients(f) => f.len(),
        };
        if count != base_points.len() {
            return Err(HdmError::DimensionMismatch {
                expected: base_points.len(),
                found: count,
            });
        }
        match &fibres {
            FibreSamples::Exact(f) => {
                for (base, fibre) in base_points.iter().zip(f) {
                    for t in fibre {
                        if (t.base().coords() - base.coords()).norm() > GEOMETRY_TOL {
                            return Err(HdmError::InvalidConfig(
                                "fibre sample attached to the wrong base point".into(),
                            ));
                        }
                    }
                }
            }
            FibreSamples::Coefficients(f) => {
                for c in f.iter().flatten() {
                    let norm = c.norm();
                    if (norm - 1.0).abs() > 1e-12 {
                        return Err(HdmError::NotUnit { norm });
                    }
                }
            }
        }
        Ok(Self { base_points, fibres })
    }

    /// Uniform base points and `n_fibre` tangents per point, one RNG stream per fibre.
    pub fn sample_exact(n_base: usize, n_fibre: usize, mode: FibreSampling, seed: RngSeed) -> Self {
        let base_points = sample_sphere_uniform(n_base, seed);
        let fibres = base_points
            .iter()
            .enumerate()
            .map(|(j, p)| {
                sample_fibre_angles(n_fibre, mode, seed, j as u64)
                    .into_iter()
                    .map(|a| p.tangent_at_angle(a))
                    .collect()
            })
            .collect();
        Self {
            base_points,
            fibres: FibreSamples::Exact(fibres),
        }
    }

    /// Replaces exact tangents by their normalized coefficients `Bᵀv` in the
    /// estimated frames.
    pub fn to_coefficients(&self, frames: &FrameSet) -> Result<Self> {
        let FibreSamples::Exact(fibres) = &self.fibres else {
            return Ok(self.clone());
        };
        if frames.frames.len() != fibres.len() {
            return Err(HdmError::DimensionMismatch {
                expected: fibres.len(),
                found: frames.frames.len(),
            });
        }
        let mut out = Vec::with_capacity(fibres.len());
        for (fibre, frame) in fibres.iter().zip(&frames.frames) {
            let mut coeffs = Vec::with_capacity(fibre.len());
            for t in fibre {
                let c = project_coefficients(frame, &DVector::from_column_slice(t.vector().as_slice()))?;
                let norm = c.norm();
                if norm < 1e-8 {
                    return Err(HdmError::InvalidTangent { dot: norm });
                }
                coeffs.push(c / norm);
            }
            out.push(coeffs);
        }
        Ok(Self {
            base_points: self.base_points.clone(),
            fibres: FibreSamples::Coefficients(out),
        })
    }

    pub fn base_points(&self) -> &[AmbientPoint] {
        &self.base_points
    }

    pub fn fibres(&self) -> &FibreSamples {
        &self.fibres
    }

    pub fn n_base(&self) -> usize {
        self.base_points.len()
    }

    pub fn fibre_sizes(&self) -> Vec<usize> {
        match &self.fibres {
            FibreSamples::Exact(f) => f.iter().map(Vec::len).collect(),
            FibreSamples::Coefficients(f) => f.iter().map(Vec::len).collect(),
        }
    }

    /// Prefix sums `s_j` of the fibre sizes, with the total appended.
    pub fn block_offsets(&self) -> Vec<usize> {
        offsets_from_sizes(&self.fibre_sizes())
    }

    pub fn total_size(&self) -> usize {
        self.fibre_sizes().iter().sum()
    }

    pub fn tangents(&self) -> Option<&[Vec<UnitTangent>]> {
        match &self.fibres {
            FibreSamples::Exact(f) => Some(f),
            FibreSamples::Coefficients(_) => None,
        }
    }
}

pub fn offsets_from_sizes(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    out.push(0);
    for &s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

/// Undirected simple graph on the base points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<usize>>,
    components: usize,
}

impl NeighborGraph {
    /// From adjacency lists; they must be symmetric and free of self loops.
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        for list in adjacency.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        for (i, list) in adjacency.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(HdmError::IndexOutOfRange { index: j, len: n });
                }
                if j == i {
                    return Err(HdmError::MatrixInvariant(format!("self loop at {i}")));
                }
                if adjacency[j].binary_search(&i).is_err() {
                    return Err(HdmError::MatrixInvariant(format!("edge ({i}, {j}) has no mirror")));
                }
            }
        }
        let components = count_components(&adjacency);
        Ok(Self { adjacency, components })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_connected(&self) -> bool {
        self.components <= 1
    }

    /// Fails with [`HdmError::Disconnected`] unless the graph is connected.
    pub fn require_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(HdmError::Disconnected {
                components: self.components,
            })
        }
    }

    /// Edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

fn count_components(adjacency: &[Vec<usize>]) -> usize {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

/// Mutual k-nearest-neighbour graph under Euclidean distance.
pub fn mutual_knn(cloud: &PointCloud, k: usize) -> Result<NeighborGraph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(HdmError::InvalidConfig(format!(
            "k_base must satisfy 1 <= k < {n}, got {k}"
        )));
    }
    let nn: Vec<Vec<usize>> = k_nearest(cloud, k)
        .into_iter()
        .map(|l| {
            let mut v: Vec<usize> = l.into_iter().map(|e| e.0).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let adjacency = (0..n)
        .map(|i| {
            nn[i]
                .iter()
                .copied()
                .filter(|&j| nn[j].binary_search(&i).is_ok())
                .collect()
        })
        .collect();
    NeighborGraph::from_adjacency(adjacency)
}

/// Mutual kNN graph of points on S². Connectivity is recorded, not enforced.
pub fn build_base_knn(points: &[AmbientPoint], k_base: usize) -> Result<NeighborGraph> {
    mutual_knn(&PointCloud::from_sphere(points), k_base)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(−(a + b))`
    GaussianProduct,
    /// `k(a) k(b)` with the bump `k(u) = exp(−u / (1 − u))` on `[0, 1)`.
    CompactProduct,
}

impl KernelFamily {
    /// Kernel value at scaled squared distances `a = base²/ε`, `b = fibre²/δ`.
    pub fn weight(self, a: f64, b: f64) -> f64 {
        match self {
            KernelFamily::GaussianProduct => (-(a + b)).exp(),
            KernelFamily::CompactProduct => bump(a) * bump(b),
        }
    }

    /// One factor of the product: `weight(a, b) = profile(a) · profile(b)` up to rounding.
    pub fn profile(self, u: f64) -> f64 {
        match self {
            KernelFamily::GaussianProduct => (-u).exp(),
            KernelFamily::CompactProduct => bump(u),
        }
    }
}

fn bump(u: f64) -> f64 {
    if (0.0..1.0).contains(&u) {
        (-u / (1.0 - u)).exp()
    } else {
        0.0
    }
}

/// Distance between a transported fibre sample and a target sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FibreMetric {
    /// Euclidean distance between the two unit vectors.
    Chordal,
    /// Arc length on the fibre circle.
    Geodesic,
}

impl FibreMetric {
    /// Squared distance given the squared chord between two unit vectors.
    pub fn squared(self, chord_sq: f64) -> f64 {
        match self {
            FibreMetric::Chordal => chord_sq,
            FibreMetric::Geodesic => {
                let angle = 2.0 * (0.5 * chord_sq.sqrt()).min(1.0).asin();
                angle * angle
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub eps: f64,
    pub delta: f64,
    pub k_base: usize,
    pub k_fibre: usize,
    pub family: KernelFamily,
    pub alpha: f64,
    pub fibre_metric: FibreMetric,
}

impl KernelConfig {
    pub fn new(eps: f64, delta: f64, k_base: usize, k_fibre: usize) -> Self {
        Self {
            eps,
            delta,
            k_base,
            k_fibre,
            family: KernelFamily::GaussianProduct,
            alpha: 1.0,
            fibre_metric: FibreMetric::Chordal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !(self.delta > 0.0) {
            return Err(HdmError::InvalidConfig(format!(
                "bandwidths must be positive (eps = {}, delta = {})",
                self.eps, self.delta
            )));
        }
        if self.k_base == 0 || self.k_fibre == 0 {
            return Err(HdmError::InvalidConfig("k_base and k_fibre must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(HdmError::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn weight(&self, base_sq: f64, fibre_chord_sq: f64) -> f64 {
        self.family.weight(
            base_sq / self.eps,
            self.fibre_metric.squared(fibre_chord_sq) / self.delta,
        )
    }
}

/// Kernel between sample `from` in fibre `from_fibre` and sample `to` in fibre
/// `to_fibre`, transporting `from` to the base point of `to`.
pub fn kernel_entry_exact(
    from_fibre: usize,
    from: &UnitTangent,
    to_fibre: usize,
    to: &UnitTangent,
    cfg: &KernelConfig,
) -> Result<f64> {
    if from_fibre == to_fibre {
        return Err(HdmError::DiagonalBlock { fibre: from_fibre });
    }
    let base_sq = (from.base().coords() - to.base().coords()).norm_squared();
    let moved = transport_rotation(from.base(), to.base())? * from.vector();
    Ok(cfg.weight(base_sq, (moved - to.vector()).norm_squared()))
}

/// Kernel between coefficient samples, with `transport` mapping coefficients
/// at `from_fibre` to coefficients at `to_fibre`.
pub fn kernel_entry_empirical(
    (from_fibre, from_base, from): (usize, &AmbientPoint, &DVector<f64>),
    (to_fibre, to_base, to): (usize, &AmbientPoint, &DVector<f64>),
    transport: &DMatrix<f64>,
    cfg: &KernelConfig,
) -> Result<f64> {
    if from_fibre == to_fibre {
        return Err(HdmError::DiagonalBlock { fibre: from_fibre });
    }
    if transport.ncols() != from.len() || transport.nrows() != to.len() {
        return Err(HdmError::DimensionMismatch {
            expected: transport.ncols(),
            found: from.len(),
        });
    }
    let base_sq = (from_base.coords() - to_base.coords()).norm_squared();
    Ok(cfg.weight(base_sq, (transport * from - to).norm_squared()))
}

/// Symmetric non-negative weight matrix with zero diagonal fibre blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSparseMatrix {
    csr: CsrMatrix,
    block_offsets: Vec<usize>,
}

impl BlockSparseMatrix {
    /// Checks symmetry, non-negativity and the zero diagonal blocks.
    pub fn new(csr: CsrMatrix, block_offsets: Vec<usize>) -> Result<Self> {
        let m = Self::new_unchecked(csr, block_offsets)?;
        m.validate()?;
        Ok(m)
    }

    /// Checks only that the offsets cover the matrix.
    pub(crate) fn new_unchecked(csr: CsrMatrix, block_offsets: Vec<usize>) -> Result<Self> {
        if block_offsets.first() != Some(&0)
            || *block_offsets.last().unwrap() != csr.n()
            || block_offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(HdmError::MatrixInvariant(
                "block offsets do not partition the matrix".into(),
            ));
        }
        Ok(Self { csr, block_offsets })
    }

    pub fn validate(&self) -> Result<()> {
        if self.csr.values().iter().any(|&v| !(v >= 0.0)) {
            return Err(HdmError::MatrixInvariant("negative or NaN weight".into()));
        }
        let asym = self.csr.asymmetry();
        if asym != 0.0 {
            return Err(HdmError::MatrixInvariant(format!(
                "weight matrix asymmetric by {asym:e}"
            )));
        }
        for r in 0..self.n() {
            let f = self.fibre_of(r);
            let (lo, hi) = (self.block_offsets[f] as u32, self.block_offsets[f + 1] as u32);
            if self.csr.row(r).0.iter().any(|&c| c >= lo && c < hi) {
                return Err(HdmError::MatrixInvariant(format!(
                    "diagonal block {f} has a nonzero entry"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.csr.n()
    }

    pub fn nnz(&self) -> usize {
        self.csr.nnz()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn into_csr(self) -> CsrMatrix {
        self.csr
    }

    pub(crate) fn csr_mut(&mut self) -> &mut CsrMatrix {
        &mut self.csr
    }

    pub fn block_offsets(&self) -> &[usize] {
        &self.block_offsets
    }

    pub fn n_fibres(&self) -> usize {
        self.block_offsets.len() - 1
    }

    /// Fibre containing global row `r`.
    pub fn fibre_of(&self, r: usize) -> usize {
        self.block_offsets.partition_point(|&o| o <= r) - 1
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.csr.get(r, c)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.csr.to_dense()
    }
}

/// Nonzero entries `(r, s, w)` of the off-diagonal block for edge `(i, j)`, sorted by `(r, s)`.
type EdgeBlock = Vec<(u32, u32, f64)>;

const ASSEMBLY_CHUNK: usize = 1024;

/// Positions `(r, s)` where `s` is among the `k` nearest columns of row `r`
/// and `r` among the `k` nearest rows of column `s` (ties by smaller index).
fn mutual_fibre_mask(dist: &[f64], rows: usize, cols: usize, k: usize) -> Vec<bool> {
    let mut row_mark = vec![false; rows * cols];
    let mut order: Vec<usize> = Vec::with_capacity(rows.max(cols));
    for r in 0..rows {
        order.clear();
        order.extend(0..cols);
        order.sort_by(|&a, &b| dist[r * cols + a].total_cmp(&dist[r * cols + b]).then(a.cmp(&b)));
        for &s in order.iter().take(k) {
            row_mark[r * cols + s] = true;
        }
    }
    let mut mask = vec![false; rows * cols];
    for s in 0..cols {
        order.clear();
        order.extend(0..rows);
        order.sort_by(|&a, &b| dist[a * cols + s].total_cmp(&dist[b * cols + s]).then(a.cmp(&b)));
        for &r in order.iter().take(k) {
            mask[r * cols + s] = row_mark[r * cols + s];
        }
    }
    mask
}

fn edge_block(
    samples: &BundleSampleSet,
    (i, j): (usize, usize),
    cfg: &KernelConfig,
    transports: Option<&TransportTable>,
) -> Result<EdgeBlock> {
    let xi = samples.base_points[i];
    let xj = samples.base_points[j];
    let base_sq = (xi.coords() - xj.coords()).norm_squared();
    let (rows, cols, dist) = match &samples.fibres {
        FibreSamples::Exact(f) => {
            let rot = transport_rotation(&xi, &xj)?;
            let moved: Vec<Vec3> = f[i].iter().map(|t| rot * t.vector()).collect();
            let dist: Vec<f64> = moved
                .iter()
                .flat_map(|m| f[j].iter().map(move |t| (m - t.vector()).norm_squared()))
                .collect();
            (f[i].len(), f[j].len(), dist)
        }
        FibreSamples::Coefficients(f) => {
            let table = transports.ok_or(HdmError::MissingTransport { from: i, to: j })?;
            let o = table.get(i, j)?;
            let moved: Vec<DVector<f64>> = f[i].iter().map(|c| &o * c).collect();
            let dist: Vec<f64> = moved
                .iter()
                .flat_map(|m| f[j].iter().map(move |c| (m - c).norm_squared()))
                .collect();
            (f[i].len(), f[j].len(), dist)
        }
    };
    let mask = mutual_fibre_mask(&dist, rows, cols, cfg.k_fibre);
    let mut block = Vec::new();
    for r in 0..rows {
        for s in 0..cols {
            if mask[r * cols + s] {
                let w = cfg.weight(base_sq, dist[r * cols + s]);
                if w > 0.0 {
                    block.push((r as u32, s as u32, w));
                }
            }
        }
    }
    Ok(block)
}

/// Assembles `W` over the base edges of `graph`.
///
/// Each unordered pair of samples is evaluated once and written to both
/// mirrored positions, so the result is exactly symmetric. Empirical samples
/// need a transport for every edge.
pub fn assemble_block_matrix(
    samples: &BundleSampleSet,
    graph: &NeighborGraph,
    cfg: &KernelConfig,
    transports: Option<&TransportTable>,
) -> Result<BlockSparseMatrix> {
    cfg.validate()?;
    if graph.n() != samples.n_base() {
        return Err(HdmError::DimensionMismatch {
            expected: samples.n_base(),
            found: graph.n(),
        });
    }
    let offsets = samples.block_offsets();
    let n = *offsets.last().unwrap();
    if n > u32::MAX as usize {
        return Err(HdmError::InvalidConfig(format!(
            "{n} rows exceed the 32-bit column index range"
        )));
    }
    let edges = graph.edges();
    // One contiguous buffer per chunk of edges, released once scattered: the
    // buffers shrink while the lazily zeroed CSR arrays fill.
    let mut chunks = Vec::new();
    for group in edges.chunks(ASSEMBLY_CHUNK) {
        let blocks = group
            .par_iter()
            .map(|&e| edge_block(samples, e, cfg, transports))
            .collect::<Result<Vec<_>>>()?;
        let mut lens = Vec::with_capacity(blocks.len());
        let mut entries = Vec::with_capacity(blocks.iter().map(Vec::len).sum());
        for block in blocks {
            lens.push(block.len());
            entries.extend(block);
        }
        chunks.push((lens, entries));
    }

    let mut row_ptr = vec![0usize; n + 1];
    for (group, (lens, entries)) in edges.chunks(ASSEMBLY_CHUNK).zip(&chunks) {
        let mut rest = &entries[..];
        for (&(i, j), &len) in group.iter().zip(lens) {
            let (block, tail) = rest.split_at(len);
            rest = tail;
            for &(r, s, _) in block {
                row_ptr[offsets[i] + r as usize + 1] += 1;
                row_ptr[offsets[j] + s as usize + 1] += 1;
            }
        }
    }
    for r in 0..n {
        row_ptr[r + 1] += row_ptr[r];
    }
    let nnz = row_ptr[n];
    let mut cols = vec![0u32; nnz];
    let mut values = vec![0.0f64; nnz];
    let mut cursor = row_ptr[..n].to_vec();
    // Edges are sorted by (i, j): a row in fibre a first receives columns from
    // fibres b < a (edges (b, a)), then from fibres b > a (edges (a, b)), each in
    // increasing b; within a block the (r, s) order keeps columns ascending.
    for (group, (lens, entries)) in edges.chunks(ASSEMBLY_CHUNK).zip(chunks) {
        let mut rest = &entries[..];
        for (&(i, j), len) in group.iter().zip(lens) {
            let (block, tail) = rest.split_at(len);
            rest = tail;
            for &(r, s, w) in block {
                let row = offsets[i] + r as usize;
                cols[cursor[row]] = (offsets[j] + s as usize) as u32;
                values[cursor[row]] = w;
                cursor[row] += 1;
                let row = offsets[j] + s as usize;
                cols[cursor[row]] = (offsets[i] + r as usize) as u32;
                values[cursor[row]] = w;
                cursor[row] += 1;
            }
        }
    }
    let csr = CsrMatrix::from_parts(n, row_ptr, cols, values)?;
    BlockSparseMatrix::new_unchecked(csr, offsets)
}
