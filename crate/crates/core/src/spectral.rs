//! Smallest eigenpairs of symmetric Laplacians and eigenvalue clustering.
//!
//! Small problems are solved densely. Larger ones use thick-restart Lanczos
//! with full reorthogonalization on the complement `σI − L`, whose largest
//! eigenvalues are the wanted smallest ones of `L`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HdmError, Result};
use crate::geometry::{stage, RngSeed};
use crate::laplacian::{LaplacianOperator, LaplacianVariant};

pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = L x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// A bound `σ ≥ λ_max(L)`.
    fn spectral_upper_bound(&self) -> f64;

    /// `y = (σI − L) x` with `σ` from [`Self::spectral_upper_bound`].
    fn apply_complement(&self, x: &[f64], y: &mut [f64]) {
        let sigma = self.spectral_upper_bound();
        self.apply(x, y);
        for (out, &xi) in y.iter_mut().zip(x) {
            *out = sigma * xi - *out;
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            self.apply(&e, &mut col);
            m.column_mut(c).copy_from_slice(&col);
            e[c] = 0.0;
        }
        m
    }
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn spectral_upper_bound(&self) -> f64 {
        (0..self.nrows())
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

/// A Laplacian known to be symmetric (unnormalized or symmetric variant).
pub struct SymmetricLaplacian<'a>(&'a LaplacianOperator);

impl<'a> SymmetricLaplacian<'a> {
    pub fn new(op: &'a LaplacianOperator) -> Result<Self> {
        if op.is_symmetric() {
            Ok(Self(op))
        } else {
            Err(HdmError::NonSymmetricOperator)
        }
    }
}

impl SymmetricOperator for SymmetricLaplacian<'_> {
    fn dim(&self) -> usize {
        self.0.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.apply(x, y);
    }

    fn spectral_upper_bound(&self) -> f64 {
        match self.0.variant() {
            LaplacianVariant::Symmetric => 1.0,
            _ => self.0.spectral_upper_bound(),
        }
    }

    fn apply_complement(&self, x: &[f64], y: &mut [f64]) {
        match self.0.variant() {
            // I − L = D^{−1/2} W D^{−1/2}; eigenvalues μ = 1 − λ
            LaplacianVariant::Symmetric => self.0.adjacency().mul_vec(x, y),
            _ => {
                let sigma = self.spectral_upper_bound();
                self.0.apply(x, y);
                for (out, &xi) in y.iter_mut().zip(x) {
                    *out = sigma * xi - *out;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Bound on `‖L v − λ v‖` for unit `v`.
    pub tol: f64,
    pub max_restarts: usize,
    /// Krylov basis size; `max(2m + 40, 100)` when absent.
    pub basis_size: Option<usize>,
    /// Problems up to this size are solved densely.
    pub dense_threshold: usize,
    pub seed: RngSeed,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_restarts: 1000,
            basis_size: None,
            dense_threshold: 1500,
            seed: RngSeed(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `κ × m`, column `l` belongs to `eigenvalues[l]`.
    pub eigenvectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub block_offsets: Vec<usize>,
}

impl SpectralResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn n_fibres(&self) -> usize {
        self.block_offsets.len().saturating_sub(1)
    }

    /// Largest `|vᵢ·vⱼ − δᵢⱼ|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.eigenvectors.ncols();
        (self.eigenvectors.transpose() * &self.eigenvectors - DMatrix::identity(m, m)).amax()
    }
}

/// `m` smallest eigenpairs of the Laplacian, keeping its block offsets.
pub fn laplacian_eigenpairs(op: &LaplacianOperator, m: usize, cfg: &SolverConfig) -> Result<SpectralResult> {
    let mut out = smallest_eigenpairs(&SymmetricLaplacian::new(op)?, m, cfg)?;
    out.block_offsets = op.block_offsets().to_vec();
    Ok(out)
}

/// `m` smallest eigenpairs of a symmetric operator, ascending.
///
/// The result's block offsets are singletons; [`laplacian_eigenpairs`] fills
/// in the fibre structure.
pub fn smallest_eigenpairs(op: &dyn SymmetricOperator, m: usize, cfg: &SolverConfig) -> Result<SpectralResult> {
    let n = op.dim();
    if m > n {
        return Err(HdmError::InvalidConfig(format!(
            "requested {m} eigenpairs of a {n}-dimensional operator"
        )));
    }
    let basis = cfg.basis_size.unwrap_or((2 * m + 40).max(100));
    let (values, vectors) = if n <= cfg.dense_threshold || basis >= n || m == 0 {
        dense_smallest(op, m)
    } else {
        lanczos_smallest(op, m, basis, cfg)?
    };
    let mut vectors = vectors;
    fix_signs(&mut vectors);
    let residuals = residuals(op, &values, &vectors);
    Ok(SpectralResult {
        eigenvalues: values,
        eigenvectors: vectors,
        residuals,
        block_offsets: (0..=n).collect(),
    })
}

fn residuals(op: &dyn SymmetricOperator, values: &[f64], vectors: &DMatrix<f64>) -> Vec<f64> {
    let n = op.dim();
    let mut y = vec![0.0; n];
    values
        .iter()
        .enumerate()
        .map(|(l, &lambda)| {
            let v = vectors.column(l);
            op.apply(v.as_slice(), &mut y);
            y.iter()
                .zip(v.iter())
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Makes the largest-magnitude entry of each column positive (first on ties).
fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0usize;
        for (k, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() * (1.0 + 1e-9) {
                best = k;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn dense_smallest(op: &dyn SymmetricOperator, m: usize) -> (Vec<f64>, DMatrix<f64>) {
    let a = op.to_dense();
    let sym = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    order.truncate(m);
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), m, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Two passes of classical Gram–Schmidt of `w` against `basis`; returns the
/// accumulated coefficients.
fn orthogonalize(basis: &[Vec<f64>], w: &mut [f64]) -> Vec<f64> {
    let mut coeffs = vec![0.0; basis.len()];
    for _ in 0..2 {
        let h: Vec<f64> = basis.iter().map(|v| dot(v, w)).collect();
        for (v, &c) in basis.iter().zip(&h) {
            axpy(-c, v, w);
        }
        for (acc, c) in coeffs.iter_mut().zip(h) {
            *acc += c;
        }
    }
    coeffs
}

fn random_unit(n: usize, seed: RngSeed, index: u64, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut rng = seed.stream(stage::SOLVER, index);
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthogonalize(basis, &mut v);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

fn lanczos_smallest(
    op: &dyn SymmetricOperator,
    m: usize,
    basis_size: usize,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = op.dim();
    let p = basis_size.min(n).max(m + 2);
    let keep = (m + (p - m) / 2).min(p - 1);
    let sigma = op.spectral_upper_bound();

    let mut draws = 0u64;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut projected = DMatrix::<f64>::zeros(p, p);
    let mut residual = random_unit(n, cfg.seed, draws, &basis);
    let mut beta = 1.0;
    let mut best_pending = f64::INFINITY;
    let mut converged = 0;

    for _cycle in 0..cfg.max_restarts {
        for j in basis.len()..p {
            let v: Vec<f64> = if beta > 1e-12 {
                residual.iter().map(|x| x / beta).collect()
            } else {
                // invariant subspace found; continue with a fresh direction
                draws += 1;
                random_unit(n, cfg.seed, draws, &basis)
            };
            basis.push(v);
            let mut w = vec![0.0; n];
            op.apply_complement(&basis[j], &mut w);
            let h = orthogonalize(&basis, &mut w);
            for (i, &hi) in h.iter().enumerate() {
                projected[(i, j)] = hi;
                projected[(j, i)] = hi;
            }
            beta = dot(&w, &w).sqrt();
            residual = w;
        }

        let eig = SymmetricEigen::new(projected.clone());
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let estimates: Vec<f64> = order
            .iter()
            .map(|&k| beta * eig.eigenvectors[(p - 1, k)].abs())
            .collect();
        converged = estimates.iter().take(m).filter(|&&r| r <= cfg.tol).count();
        best_pending = estimates
            .iter()
            .take(m)
            .copied()
            .filter(|&r| r > cfg.tol)
            .fold(f64::INFINITY, f64::min);

        let retain = if converged == m { m } else { keep };
        let ritz: Vec<Vec<f64>> = (0..retain)
            .map(|c| {
                let mut x = vec![0.0; n];
                for (i, v) in basis.iter().enumerate() {
                    axpy(eig.eigenvectors[(i, order[c])], v, &mut x);
                }
                x
            })
            .collect();
        if converged == m {
            let values = (0..m).map(|c| sigma - eig.eigenvalues[order[c]]).collect();
            let vectors = DMatrix::from_fn(n, m, |r, c| ritz[c][r]);
            return Ok((values, vectors));
        }
        basis = ritz;
        projected.fill(0.0);
        for c in 0..retain {
            projected[(c, c)] = eig.eigenvalues[order[c]];
        }
    }
    Err(HdmError::SolverNonConvergence {
        converged,
        requested: m,
        best_residual: best_pending,
    })
}

/// Contiguous runs of eigenvalues separated by relative gaps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Half-open index ranges into the sorted values.
    pub bounds: Vec<(usize, usize)>,
    pub multiplicities: Vec<usize>,
    pub means: Vec<f64>,
    /// Means of clusters after the first, divided by the second cluster's mean;
    /// empty when there is only one cluster.
    pub ratios: Vec<f64>,
}

/// A new cluster starts at `l` when `λ_l − λ_{l−1} > rel_gap · max(λ_{l−1}, floor)`,
/// `floor = max(values) · 1e-6`.
pub fn cluster_eigenvalues(values: &[f64], rel_gap: f64) -> ClusterReport {
    if values.is_empty() {
        return ClusterReport::default();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted.iter().copied().fold(f64::NEG_INFINITY, f64::max) * 1e-6;
    let mut bounds = Vec::new();
    let mut start = 0;
    for l in 1..sorted.len() {
        if sorted[l] - sorted[l - 1] > rel_gap * sorted[l - 1].max(floor) {
            bounds.push((start, l));
            start = l;
        }
    }
    bounds.push((start, sorted.len()));
    let multiplicities = bounds.iter().map(|&(a, b)| b - a).collect();
    let means: Vec<f64> = bounds
        .iter()
        .map(|&(a, b)| sorted[a..b].iter().sum::<f64>() / (b - a) as f64)
        .collect();
    let mut report = ClusterReport {
        bounds,
        multiplicities,
        means,
        ratios: Vec::new(),
    };
    report.ratios = normalized_cluster_ratios(&report).unwrap_or_default();
    report
}

/// Cluster means after the zero cluster divided by the first of them.
pub fn normalized_cluster_ratios(report: &ClusterReport) -> Result<Vec<f64>> {
    if report.means.len() < 2 || report.means[1] == 0.0 {
        return Err(HdmError::InsufficientClusters);
    }
    let first = report.means[1];
    Ok(report.means[1..].iter().map(|m| m / first).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle_graph::BlockSparseMatrix;
    use crate::laplacian::build_laplacian;
    use crate::sparse::CsrMatrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn ring_graph(n: usize, extra: usize, seed: u64) -> BlockSparseMatrix {
        let mut rng = RngSeed(seed).stream(50, 0);
        let mut t = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut add = |i: usize, j: usize, w: f64, t: &mut Vec<(usize, usize, f64)>| {
            let key = (i.min(j), i.max(j));
            if i != j && seen.insert(key) {
                t.push((i, j, w));
                t.push((j, i, w));
            }
        };
        for i in 0..n {
            let w = 0.5 + rng.random::<f64>();
            add(i, (i + 1) % n, w, &mut t);
        }
        for _ in 0..extra {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            let w = rng.random::<f64>();
            add(i, j, w, &mut t);
        }
        BlockSparseMatrix::new(CsrMatrix::from_triplets(n, &t).unwrap(), (0..=n).collect()).unwrap()
    }

    #[test]
    fn two_node_spectrum() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let r = smallest_eigenpairs(&l, 2, &SolverConfig::default()).unwrap();
        assert!(r.eigenvalues[0].abs() < 1e-14);
        assert!((r.eigenvalues[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn path_graph_spectrum() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let r = smallest_eigenpairs(&l, 3, &SolverConfig::default()).unwrap();
        for (got, want) in r.eigenvalues.iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn random_walk_operator_is_rejected() {
        let w = ring_graph(10, 5, 1);
        let rw = build_laplacian(&w, LaplacianVariant::RandomWalk).unwrap();
        assert!(matches!(
            laplacian_eigenpairs(&rw, 2, &SolverConfig::default()),
            Err(HdmError::NonSymmetricOperator)
        ));
    }

    #[test]
    fn null_vector_on_random_graphs() {
        for seed in 0..5 {
            let w = ring_graph(50, 80, seed);
            let l = build_laplacian(&w, LaplacianVariant::Symmetric).unwrap();
            let r = laplacian_eigenpairs(&l, 4, &SolverConfig::default()).unwrap();
            assert!(r.eigenvalues[0].abs() < 1e-10);
            assert!(r.residuals.iter().all(|&x| x <= 1e-8));
            let d: Vec<f64> = l.degrees().values().iter().map(|x| x.sqrt()).collect();
            let norm = dot(&d, &d).sqrt();
            let cos = dot(r.eigenvectors.column(0).as_slice(), &d).abs() / norm;
            assert!((cos - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn lanczos_matches_dense() {
        let w = ring_graph(400, 1200, 7);
        let l = build_laplacian(&w, LaplacianVariant::Symmetric).unwrap();
        let dense = laplacian_eigenpairs(&l, 12, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig {
            dense_threshold: 0,
            basis_size: Some(60),
            ..SolverConfig::default()
        };
        let iter = laplacian_eigenpairs(&l, 12, &cfg).unwrap();
        for (a, b) in dense.eigenvalues.iter().zip(&iter.eigenvalues) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(iter.residuals.iter().all(|&r| r <= 1e-8));
        assert!(iter.orthonormality_defect() <= 1e-8);
        let again = laplacian_eigenpairs(&l, 12, &cfg).unwrap();
        assert_eq!(iter, again);
    }

    #[test]
    fn lanczos_on_unnormalized_laplacian() {
        let w = ring_graph(300, 900, 3);
        let l = build_laplacian(&w, LaplacianVariant::Unnormalized).unwrap();
        let dense = laplacian_eigenpairs(&l, 6, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig {
            dense_threshold: 0,
            basis_size: Some(50),
            ..SolverConfig::default()
        };
        let iter = laplacian_eigenpairs(&l, 6, &cfg).unwrap();
        for (a, b) in dense.eigenvalues.iter().zip(&iter.eigenvalues) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn exhausted_budget_reports_non_convergence() {
        let w = ring_graph(300, 300, 5);
        let l = build_laplacian(&w, LaplacianVariant::Symmetric).unwrap();
        let cfg = SolverConfig {
            dense_threshold: 0,
            basis_size: Some(20),
            max_restarts: 1,
            tol: 1e-14,
            ..SolverConfig::default()
        };
        assert!(matches!(
            laplacian_eigenpairs(&l, 10, &cfg),
            Err(HdmError::SolverNonConvergence { requested: 10, .. })
        ));
    }

    #[test]
    fn cluster_examples() {
        let r = cluster_eigenvalues(&[0.0, 1.0, 0.99, 1.01, 2.5], 0.05);
        assert_eq!(r.multiplicities, vec![1, 3, 1]);
        assert_eq!(cluster_eigenvalues(&[0.7; 5], 0.2).multiplicities, vec![5]);
        assert_eq!(cluster_eigenvalues(&[], 0.2), ClusterReport::default());
    }

    #[test]
    fn ratio_examples() {
        let report = |means: Vec<f64>| ClusterReport {
            bounds: vec![],
            multiplicities: vec![],
            means,
            ratios: vec![],
        };
        assert_eq!(
            normalized_cluster_ratios(&report(vec![0.0, 2.0, 6.0])).unwrap(),
            vec![1.0, 3.0]
        );
        assert_eq!(normalized_cluster_ratios(&report(vec![0.0, 5.0])).unwrap(), vec![1.0]);
        assert!(matches!(
            normalized_cluster_ratios(&report(vec![0.0])),
            Err(HdmError::InsufficientClusters)
        ));
    }

    proptest! {
        #[test]
        fn ratios_are_scale_invariant(vals in proptest::collection::vec(0.0f64..10.0, 2..30)) {
            let base = cluster_eigenvalues(&vals, 0.2);
            let scaled: Vec<f64> = vals.iter().map(|v| v * 7.0).collect();
            let other = cluster_eigenvalues(&scaled, 0.2);
            prop_assert_eq!(&base.multiplicities, &other.multiplicities);
            for (a, b) in base.ratios.iter().zip(&other.ratios) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn clustering_survives_small_perturbations(noise in proptest::collection::vec(-1.0f64..1.0, 12)) {
            let centres = [0.0, 1.0, 3.0, 6.0];
            let vals: Vec<f64> = noise.iter().enumerate()
                .map(|(k, e)| centres[k % 4] + if centres[k % 4] > 0.0 { 0.01 * e } else { 0.0 })
                .collect();
            let report = cluster_eigenvalues(&vals, 0.2);
            prop_assert_eq!(report.multiplicities, vec![3, 3, 3, 3]);
        }
    }
}
