//! Degree vectors, α-normalization and the graph hypoelliptic Laplacians.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bundle_graph::BlockSparseMatrix;
use crate::error::{HdmError, Result};
use crate::sparse::CsrMatrix;

/// Row sums of a weight matrix, all strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeVector(Vec<f64>);

impl DegreeVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn degree_vector(w: &BlockSparseMatrix) -> Result<DegreeVector> {
    degrees_of(w.csr())
}

fn degrees_of(csr: &CsrMatrix) -> Result<DegreeVector> {
    let sums = csr.row_sums();
    if let Some(row) = sums.iter().position(|&d| !(d > 0.0)) {
        return Err(HdmError::IsolatedVertex { row });
    }
    Ok(DegreeVector(sums))
}

/// `W_α = Q⁻¹ W Q⁻¹` with `Q = diag(q^α)` and `q` the degrees of `W`.
pub fn alpha_normalize(w: &BlockSparseMatrix, alpha: f64) -> Result<BlockSparseMatrix> {
    alpha_normalize_owned(w.clone(), alpha)
}

/// As [`alpha_normalize`], reusing the storage of `w`.
pub fn alpha_normalize_owned(mut w: BlockSparseMatrix, alpha: f64) -> Result<BlockSparseMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(HdmError::InvalidConfig(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let q = degree_vector(&w)?;
    if alpha == 0.0 {
        return Ok(w);
    }
    let scale: Vec<f64> = q.values().iter().map(|d| d.powf(-alpha)).collect();
    // (v s_r) s_c and (v s_c) s_r round differently; a fixed operand order keeps W_α exactly symmetric
    w.csr_mut().map_values(|r, c, v| {
        let (a, b) = if r <= c {
            (scale[r], scale[c])
        } else {
            (scale[c], scale[r])
        };
        v * (a * b)
    });
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianVariant {
    /// `D − W`
    Unnormalized,
    /// `I − D⁻¹W`
    RandomWalk,
    /// `I − D^{−1/2} W D^{−1/2}`
    Symmetric,
}

/// Sparse operator `diag(d) − A`.
#[derive(Clone, Debug)]
pub struct LaplacianOperator {
    variant: LaplacianVariant,
    diagonal: Vec<f64>,
    adjacency: CsrMatrix,
    degrees: DegreeVector,
    block_offsets: Vec<usize>,
}

impl LaplacianOperator {
    pub fn variant(&self) -> LaplacianVariant {
        self.variant
    }

    pub fn n(&self) -> usize {
        self.diagonal.len()
    }

    /// Degrees of the weight matrix the operator was built from.
    pub fn degrees(&self) -> &DegreeVector {
        &self.degrees
    }

    pub fn block_offsets(&self) -> &[usize] {
        &self.block_offsets
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// The scaled adjacency part `A`.
    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn is_symmetric(&self) -> bool {
        self.variant != LaplacianVariant::RandomWalk
    }

    /// `y = L x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.adjacency.mul_vec(x, y);
        for ((out, &d), &xi) in y.iter_mut().zip(&self.diagonal).zip(x) {
            *out = d * xi - *out;
        }
    }

    /// Gershgorin upper bound on the spectrum.
    pub fn spectral_upper_bound(&self) -> f64 {
        (0..self.n())
            .map(|r| self.diagonal[r] + self.adjacency.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = -self.adjacency.to_dense();
        for (k, &d) in self.diagonal.iter().enumerate() {
            m[(k, k)] += d;
        }
        m
    }
}

/// Builds the requested Laplacian of `w`.
pub fn build_laplacian(w: &BlockSparseMatrix, variant: LaplacianVariant) -> Result<LaplacianOperator> {
    build_laplacian_owned(w.clone(), variant)
}

/// As [`build_laplacian`], reusing the storage of `w`.
pub fn build_laplacian_owned(w: BlockSparseMatrix, variant: LaplacianVariant) -> Result<LaplacianOperator> {
    let degrees = degree_vector(&w)?;
    let block_offsets = w.block_offsets().to_vec();
    let mut adjacency = w.into_csr();
    let n = adjacency.n();
    let d = degrees.values();
    let diagonal = match variant {
        LaplacianVariant::Unnormalized => d.to_vec(),
        LaplacianVariant::RandomWalk => {
            adjacency.map_values(|r, _, v| v / d[r]);
            vec![1.0; n]
        }
        LaplacianVariant::Symmetric => {
            let s: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
            adjacency.map_values(|r, c, v| {
                let (a, b) = if r <= c { (s[r], s[c]) } else { (s[c], s[r]) };
                v * (a * b)
            });
            vec![1.0; n]
        }
    };
    Ok(LaplacianOperator {
        variant,
        diagonal,
        adjacency,
        degrees,
        block_offsets,
    })
}

/// `alpha_normalize` followed by `build_laplacian` with degrees recomputed from `W_α`.
pub fn build_hypoelliptic_chain(
    w: &BlockSparseMatrix,
    alpha: f64,
    variant: LaplacianVariant,
) -> Result<LaplacianOperator> {
    build_laplacian_owned(alpha_normalize(w, alpha)?, variant)
}

/// As [`build_hypoelliptic_chain`], consuming `w`.
pub fn build_hypoelliptic_chain_owned(
    w: BlockSparseMatrix,
    alpha: f64,
    variant: LaplacianVariant,
) -> Result<LaplacianOperator> {
    build_laplacian_owned(alpha_normalize_owned(w, alpha)?, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RngSeed;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn dense_weights(m: &DMatrix<f64>, offsets: Vec<usize>) -> BlockSparseMatrix {
        BlockSparseMatrix::new(CsrMatrix::from_dense(m).unwrap(), offsets).unwrap()
    }

    fn singletons(n: usize) -> Vec<usize> {
        (0..=n).collect()
    }

    fn random_weights(n: usize, density: f64, seed: u64) -> BlockSparseMatrix {
        let mut rng = RngSeed(seed).stream(77, 0);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            // a ring keeps every instance connected
            let j = (i + 1) % n;
            let w = 0.1 + rng.random::<f64>();
            m[(i, j)] = w;
            m[(j, i)] = w;
            for j in (i + 2)..n {
                if rng.random::<f64>() < density {
                    let w = rng.random::<f64>();
                    m[(i, j)] = w;
                    m[(j, i)] = w;
                }
            }
        }
        dense_weights(&m, singletons(n))
    }

    fn sorted_eigs(m: DMatrix<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    #[test]
    fn degree_examples() {
        let w = dense_weights(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), singletons(2));
        assert_eq!(degree_vector(&w).unwrap().values(), &[1.0, 1.0]);
        let w = dense_weights(
            &DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            singletons(3),
        );
        assert_eq!(degree_vector(&w).unwrap().values(), &[3.0, 2.0, 1.0]);
        let w = dense_weights(
            &DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            singletons(3),
        );
        assert!(matches!(degree_vector(&w), Err(HdmError::IsolatedVertex { row: 2 })));
    }

    #[test]
    fn alpha_examples() {
        let w = dense_weights(&DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]), singletons(2));
        assert_eq!(alpha_normalize(&w, 0.0).unwrap(), w);
        let w1 = alpha_normalize(&w, 1.0).unwrap();
        assert_eq!(w1.to_dense(), DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        let chain = build_hypoelliptic_chain(&w, 1.0, LaplacianVariant::Symmetric).unwrap();
        assert_eq!(chain.degrees().values(), &[0.5, 0.5]);
        assert!((chain.to_dense() - DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])).amax() < 1e-15);
        assert!(alpha_normalize(&w, 1.5).is_err());
    }

    #[test]
    fn unnormalized_two_node() {
        let w = dense_weights(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), singletons(2));
        let l = build_laplacian(&w, LaplacianVariant::Unnormalized).unwrap();
        assert_eq!(l.to_dense(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let e = sorted_eigs(l.to_dense());
        assert!(e[0].abs() < 1e-14 && (e[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn random_walk_rows_sum_to_zero() {
        let w = random_weights(25, 0.3, 1);
        let l = build_laplacian(&w, LaplacianVariant::RandomWalk).unwrap();
        let mut y = vec![0.0; 25];
        l.apply(&[1.0; 25], &mut y);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn symmetric_null_vector_is_sqrt_degree() {
        let w = random_weights(30, 0.2, 2);
        let l = build_laplacian(&w, LaplacianVariant::Symmetric).unwrap();
        let v: Vec<f64> = l.degrees().values().iter().map(|d| d.sqrt()).collect();
        let mut y = vec![0.0; 30];
        l.apply(&v, &mut y);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(y.iter().map(|x| x * x).sum::<f64>().sqrt() / norm < 1e-10);
    }

    #[test]
    fn alpha_zero_chain_matches_plain_laplacian() {
        let w = random_weights(15, 0.4, 3);
        for variant in [
            LaplacianVariant::Unnormalized,
            LaplacianVariant::RandomWalk,
            LaplacianVariant::Symmetric,
        ] {
            let a = build_hypoelliptic_chain(&w, 0.0, variant).unwrap().to_dense();
            let b = build_laplacian(&w, variant).unwrap().to_dense();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn symmetric_and_random_walk_chains_share_spectra() {
        let w = random_weights(20, 0.3, 4);
        let sym = build_hypoelliptic_chain(&w, 1.0, LaplacianVariant::Symmetric).unwrap();
        let rw = build_hypoelliptic_chain(&w, 1.0, LaplacianVariant::RandomWalk).unwrap();
        let a = sorted_eigs(sym.to_dense());
        let mut b: Vec<f64> = rw.to_dense().complex_eigenvalues().iter().map(|z| z.re).collect();
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn zero_multiplicity_counts_components() {
        let mut m = DMatrix::zeros(6, 6);
        for &(i, j) in &[(0, 1), (1, 2), (3, 4), (4, 5)] {
            m[(i, j)] = 1.0;
            m[(j, i)] = 1.0;
        }
        let l = build_laplacian(&dense_weights(&m, singletons(6)), LaplacianVariant::Symmetric).unwrap();
        let zeros = sorted_eigs(l.to_dense()).iter().filter(|e| e.abs() < 1e-10).count();
        assert_eq!(zeros, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn symmetric_spectrum_in_unit_band(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
            let w = random_weights(18, 0.3, seed);
            let wa = alpha_normalize(&w, alpha).unwrap();
            prop_assert_eq!(wa.csr().asymmetry(), 0.0);
            let l = build_hypoelliptic_chain(&w, alpha, LaplacianVariant::Symmetric).unwrap();
            let e = sorted_eigs(l.to_dense());
            prop_assert!(e[0] >= -1e-10);
            prop_assert!(*e.last().unwrap() <= 2.0 + 1e-10);
        }

        #[test]
        fn spectrum_is_permutation_invariant(seed in 0u64..1000) {
            let w = random_weights(12, 0.4, seed);
            let dense = w.to_dense();
            let perm: Vec<usize> = (0..12).map(|k| (k * 5 + 3) % 12).collect();
            let permuted = DMatrix::from_fn(12, 12, |r, c| dense[(perm[r], perm[c])]);
            let a = sorted_eigs(build_laplacian(&w, LaplacianVariant::Symmetric).unwrap().to_dense());
            let wp = dense_weights(&permuted, singletons(12));
            let b = sorted_eigs(build_laplacian(&wp, LaplacianVariant::Symmetric).unwrap().to_dense());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}
