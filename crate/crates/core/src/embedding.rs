//! Spectral embeddings of bundle samples and of whole fibres.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HdmError, Result};
use crate::spectral::SpectralResult;

/// Eigenvalues this far below zero are treated as zero when raised to a power.
const NEGATIVE_ROUNDING: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConvention {
    /// Column `l` weighted by `λ_l^t`.
    #[default]
    LaplacianPower,
    /// Column `l` weighted by `(1 − λ_l)^t`.
    Diffusion,
}

/// Per-sample coordinates, one row per bundle sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCoordinates {
    pub rows: DMatrix<f64>,
    pub convention: WeightConvention,
    pub t: f64,
    pub block_offsets: Vec<usize>,
}

/// Per-fibre coordinates of the base diffusion map, `m²` entries per row.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseEmbeddingCoordinates {
    pub rows: DMatrix<f64>,
    pub t: f64,
}

/// `x^t` with `0⁰ = 1` and tiny negative rounding clamped to zero.
fn power(x: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = if x < 0.0 && x > -NEGATIVE_ROUNDING { 0.0 } else { x };
    x.powf(t)
}

fn check_t(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(HdmError::InvalidConfig(format!(
            "diffusion time must be non-negative, got {t}"
        )))
    }
}

/// Hypoelliptic diffusion map over eigenpairs `1..m` (the null direction is dropped).
pub fn hdm_embed(spec: &SpectralResult, t: f64, convention: WeightConvention) -> Result<EmbeddingCoordinates> {
    check_t(t)?;
    let m = spec.len();
    if m < 2 {
        return Err(HdmError::InvalidConfig(
            "embedding needs at least two eigenpairs".into(),
        ));
    }
    let mut weights = Vec::with_capacity(m - 1);
    for &lambda in &spec.eigenvalues[1..] {
        weights.push(match convention {
            WeightConvention::LaplacianPower => power(lambda, t),
            WeightConvention::Diffusion => {
                if lambda > 1.0 + 1e-10 {
                    return Err(HdmError::EigenvalueAboveOne { value: lambda });
                }
                power((1.0 - lambda).max(0.0), t)
            }
        });
    }
    let n = spec.eigenvectors.nrows();
    let rows = DMatrix::from_fn(n, m - 1, |r, c| weights[c] * spec.eigenvectors[(r, c + 1)]);
    Ok(EmbeddingCoordinates {
        rows,
        convention,
        t,
        block_offsets: spec.block_offsets.clone(),
    })
}

/// Scales every row to unit length.
pub fn hdm_normalize(coords: &EmbeddingCoordinates) -> Result<EmbeddingCoordinates> {
    let mut rows = coords.rows.clone();
    for (point, mut row) in rows.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 0.0) {
            return Err(HdmError::ZeroRow { point });
        }
        row /= norm;
    }
    Ok(EmbeddingCoordinates { rows, ..coords.clone() })
}

fn row_distance(rows: &DMatrix<f64>, p: usize, q: usize) -> Result<f64> {
    let len = rows.nrows();
    for index in [p, q] {
        if index >= len {
            return Err(HdmError::IndexOutOfRange { index, len });
        }
    }
    Ok((rows.row(p) - rows.row(q)).norm())
}

/// Euclidean distance between the embedded samples `p` and `q`.
pub fn hdm_distance(coords: &EmbeddingCoordinates, p: usize, q: usize) -> Result<f64> {
    row_distance(&coords.rows, p, q)
}

/// Base diffusion map: entry `(l, m)` of fibre `j` is
/// `λ_l^{t/2} λ_m^{t/2} ⟨v_l[j], v_m[j]⟩`, over all supplied eigenpairs.
pub fn hbdm_embed(spec: &SpectralResult, t: f64) -> Result<BaseEmbeddingCoordinates> {
    check_t(t)?;
    let m = spec.len();
    let offsets = &spec.block_offsets;
    if offsets.last() != Some(&spec.eigenvectors.nrows()) {
        return Err(HdmError::DimensionMismatch {
            expected: spec.eigenvectors.nrows(),
            found: offsets.last().copied().unwrap_or(0),
        });
    }
    let half: Vec<f64> = spec.eigenvalues.iter().map(|&l| power(l, t / 2.0)).collect();
    let fibres = offsets.len() - 1;
    let mut rows = DMatrix::zeros(fibres, m * m);
    for j in 0..fibres {
        let seg = spec.eigenvectors.rows(offsets[j], offsets[j + 1] - offsets[j]);
        let gram = seg.transpose() * seg;
        for l in 0..m {
            for k in 0..m {
                rows[(j, l * m + k)] = half[l] * half[k] * gram[(l, k)];
            }
        }
    }
    Ok(BaseEmbeddingCoordinates { rows, t })
}

/// Euclidean distance between the fibre rows `i` and `j`.
pub fn hbdm_distance(coords: &BaseEmbeddingCoordinates, i: usize, j: usize) -> Result<f64> {
    row_distance(&coords.rows, i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RngSeed;
    use crate::spectral::{smallest_eigenpairs, SolverConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn spec_from(values: Vec<f64>, vectors: DMatrix<f64>, offsets: Vec<usize>) -> SpectralResult {
        SpectralResult {
            residuals: vec![0.0; values.len()],
            eigenvalues: values,
            eigenvectors: vectors,
            block_offsets: offsets,
        }
    }

    /// Full spectrum of a random symmetric Laplacian-like matrix with 3 fibres.
    fn random_instance(seed: u64) -> (DMatrix<f64>, SpectralResult) {
        let mut rng = RngSeed(seed).stream(60, 0);
        let n = 12;
        let mut w = DMatrix::zeros(n, n);
        let fibre = |k: usize| k / 4;
        for i in 0..n {
            for j in (i + 1)..n {
                if fibre(i) != fibre(j) {
                    let v = rng.random::<f64>();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        let d: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
        let l = DMatrix::from_fn(n, n, |r, c| {
            let delta = if r == c { 1.0 } else { 0.0 };
            delta - w[(r, c)] / (d[r] * d[c]).sqrt()
        });
        let spec = smallest_eigenpairs(&l, n, &SolverConfig::default()).unwrap();
        (
            l,
            SpectralResult {
                block_offsets: vec![0, 4, 8, 12],
                ..spec
            },
        )
    }

    #[test]
    fn t_zero_gives_raw_eigenvectors() {
        let (_, spec) = random_instance(1);
        let e = hdm_embed(&spec, 0.0, WeightConvention::LaplacianPower).unwrap();
        assert_eq!(e.rows, spec.eigenvectors.columns(1, spec.len() - 1).into_owned());
    }

    #[test]
    fn two_node_embedding() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let spec = smallest_eigenpairs(&l, 2, &SolverConfig::default()).unwrap();
        let e = hdm_embed(&spec, 1.0, WeightConvention::LaplacianPower).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // eigenvector sign is a convention; compare up to a global sign
        let sign = e.rows[(0, 0)].signum();
        assert!((e.rows[(0, 0)] * sign - 2.0 * s).abs() < 1e-12);
        assert!((e.rows[(1, 0)] * sign + 2.0 * s).abs() < 1e-12);
    }

    #[test]
    fn conventions_differ_by_column_scaling() {
        let (_, full) = random_instance(2);
        let keep = full.eigenvalues.iter().take_while(|&&v| v <= 1.0).count();
        let spec = spec_from(
            full.eigenvalues[..keep].to_vec(),
            full.eigenvectors.columns(0, keep).into_owned(),
            full.block_offsets.clone(),
        );
        assert!(keep >= 3);
        let a = hdm_embed(&spec, 1.5, WeightConvention::LaplacianPower).unwrap();
        let b = hdm_embed(&spec, 1.5, WeightConvention::Diffusion).unwrap();
        for c in 0..a.rows.ncols() {
            let ratio = a.rows[(0, c)] / b.rows[(0, c)];
            for r in 1..a.rows.nrows() {
                assert!((a.rows[(r, c)] - ratio * b.rows[(r, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn diffusion_rejects_large_eigenvalues() {
        let spec = spec_from(vec![0.0, 1.5], DMatrix::identity(2, 2), vec![0, 1, 2]);
        assert!(matches!(
            hdm_embed(&spec, 1.0, WeightConvention::Diffusion),
            Err(HdmError::EigenvalueAboveOne { .. })
        ));
    }

    #[test]
    fn normalization_examples() {
        let coords = EmbeddingCoordinates {
            rows: DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.6, 0.8]),
            convention: WeightConvention::LaplacianPower,
            t: 1.0,
            block_offsets: vec![0, 2],
        };
        let n = hdm_normalize(&coords).unwrap();
        assert!((n.rows[(0, 0)] - 0.6).abs() < 1e-15 && (n.rows[(0, 1)] - 0.8).abs() < 1e-15);
        assert!((n.rows[(1, 0)] - 0.6).abs() <= 1e-15 && (n.rows[(1, 1)] - 0.8).abs() <= 1e-15);
        let zero = EmbeddingCoordinates {
            rows: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            ..coords
        };
        assert!(matches!(hdm_normalize(&zero), Err(HdmError::ZeroRow { point: 1 })));
    }

    #[test]
    fn distance_examples() {
        let coords = EmbeddingCoordinates {
            rows: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 4.0]),
            convention: WeightConvention::LaplacianPower,
            t: 1.0,
            block_offsets: vec![0, 2],
        };
        assert_eq!(hdm_distance(&coords, 0, 1).unwrap(), 5.0);
        assert_eq!(hdm_distance(&coords, 1, 0).unwrap(), 5.0);
        assert_eq!(hdm_distance(&coords, 1, 1).unwrap(), 0.0);
        assert!(matches!(
            hdm_distance(&coords, 0, 2),
            Err(HdmError::IndexOutOfRange { .. })
        ));
    }

    /// `‖((L)^t)_{ij}‖_F²` from the dense matrix power.
    fn block_frobenius(l: &DMatrix<f64>, t: u32, offsets: &[usize], i: usize, j: usize) -> f64 {
        let mut power = DMatrix::identity(l.nrows(), l.ncols());
        for _ in 0..t {
            power = &power * l;
        }
        power
            .view(
                (offsets[i], offsets[j]),
                (offsets[i + 1] - offsets[i], offsets[j + 1] - offsets[j]),
            )
            .norm_squared()
    }

    #[test]
    fn base_map_gram_identity() {
        for seed in 0..4 {
            let (l, spec) = random_instance(seed);
            let v = hbdm_embed(&spec, 2.0).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let inner = v.rows.row(i).dot(&v.rows.row(j));
                    let oracle = block_frobenius(&l, 2, &spec.block_offsets, i, j);
                    assert!((inner - oracle).abs() < 1e-10, "{inner} vs {oracle}");
                }
            }
        }
    }

    #[test]
    fn single_fibre_base_map_is_diagonal() {
        let (_, spec) = random_instance(3);
        let one = SpectralResult {
            block_offsets: vec![0, 12],
            ..spec
        };
        let v = hbdm_embed(&one, 1.0).unwrap();
        let m = one.len();
        for l in 0..m {
            for k in 0..m {
                let want = if l == k { one.eigenvalues[l].max(0.0) } else { 0.0 };
                assert!((v.rows[(0, l * m + k)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn base_distance_expansion() {
        let (_, spec) = random_instance(4);
        let v = hbdm_embed(&spec, 1.0).unwrap();
        let (a, b) = (v.rows.row(0), v.rows.row(2));
        let expanded = (a.norm_squared() + b.norm_squared() - 2.0 * a.dot(&b)).max(0.0).sqrt();
        assert!((hbdm_distance(&v, 0, 2).unwrap() - expanded).abs() < 1e-12);
        assert_eq!(hbdm_distance(&v, 1, 1).unwrap(), 0.0);
    }

    fn gram(rows: &DMatrix<f64>) -> DMatrix<f64> {
        rows * rows.transpose()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn base_gram_is_sign_flip_invariant(seed in 0u64..500, flip in 0usize..12) {
            let (_, spec) = random_instance(seed);
            let mut flipped = spec.clone();
            flipped.eigenvectors.column_mut(flip).neg_mut();
            let a = gram(&hbdm_embed(&spec, 1.0).unwrap().rows);
            let b = gram(&hbdm_embed(&flipped, 1.0).unwrap().rows);
            prop_assert!((a - b).amax() <= 1e-12);
        }

        #[test]
        fn distances_satisfy_triangle_inequality(seed in 0u64..500, p in 0usize..12, q in 0usize..12, r in 0usize..12) {
            let (_, spec) = random_instance(seed);
            let e = hdm_embed(&spec, 1.0, WeightConvention::LaplacianPower).unwrap();
            let pq = hdm_distance(&e, p, q).unwrap();
            let qr = hdm_distance(&e, q, r).unwrap();
            let pr = hdm_distance(&e, p, r).unwrap();
            prop_assert!(pr <= pq + qr + 1e-12);
        }

        #[test]
        fn degenerate_remix_preserves_gram(angle in 0.0f64..6.3) {
            // two eigenvectors sharing one eigenvalue, mixed by a rotation
            let mut rng = RngSeed(8).stream(61, 0);
            let q = DMatrix::from_fn(6, 4, |_, _| rng.random::<f64>() - 0.5).qr().q();
            let values = vec![0.0, 0.5, 0.5, 1.2];
            let spec = spec_from(values.clone(), q.clone(), vec![0, 2, 4, 6]);
            let mut mixed = q.clone();
            let (c, s) = (angle.cos(), angle.sin());
            for r in 0..6 {
                mixed[(r, 1)] = c * q[(r, 1)] - s * q[(r, 2)];
                mixed[(r, 2)] = s * q[(r, 1)] + c * q[(r, 2)];
            }
            let remixed = spec_from(values, mixed, vec![0, 2, 4, 6]);
            let a = hdm_embed(&spec, 1.0, WeightConvention::LaplacianPower).unwrap();
            let b = hdm_embed(&remixed, 1.0, WeightConvention::LaplacianPower).unwrap();
            prop_assert!((gram(&a.rows) - gram(&b.rows)).amax() <= 1e-12);
            let va = hbdm_embed(&spec, 1.0).unwrap();
            let vb = hbdm_embed(&remixed, 1.0).unwrap();
            prop_assert!((gram(&va.rows) - gram(&vb.rows)).amax() <= 1e-12);
        }
    }
}
