//! Reference values: closed-form spectra, a quadrature evaluation of the
//! continuous operator on UT S², a brute-force sampled operator, and the
//! second-order expansion of parallel transport on S².

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle_graph::{BundleSampleSet, FibreMetric, KernelConfig};
use crate::error::{HdmError, Result};
use crate::geometry::{exp_map_sphere, parallel_transport_sphere, AmbientPoint, UnitTangent, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Horizontal Laplacian on SO(3).
    Horizontal,
    /// Bi-invariant Laplacian on SO(3).
    Total,
    /// Laplacian on the base S².
    Base,
}

/// Leading eigenvalue multiplicities of the limiting operator.
pub fn reference_multiplicities(regime: Regime) -> Vec<usize> {
    match regime {
        Regime::Horizontal => vec![1, 6, 13],
        Regime::Total => vec![1, 9, 25],
        Regime::Base => vec![1, 3, 5],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSpectrum {
    /// `(eigenvalue, multiplicity)`, ascending.
    pub entries: Vec<(f64, usize)>,
}

impl AnalyticSpectrum {
    pub fn multiplicities(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.1).collect()
    }

    /// Nonzero eigenvalues divided by the smallest nonzero one.
    pub fn ratios(&self) -> Vec<f64> {
        let nonzero: Vec<f64> = self.entries.iter().map(|e| e.0).filter(|&v| v > 0.0).collect();
        nonzero.iter().map(|v| v / nonzero[0]).collect()
    }
}

/// `(l(l+1), 2l+1)` for `l = 0..=l_max`.
pub fn sphere_spectrum(l_max: usize) -> AnalyticSpectrum {
    AnalyticSpectrum {
        entries: (0..=l_max).map(|l| ((l * (l + 1)) as f64, 2 * l + 1)).collect(),
    }
}

/// A point of UT S² in spherical coordinates; the fibre angle `psi` is
/// measured from `e_θ` towards `e_φ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UtmPoint {
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
}

impl UtmPoint {
    pub fn base(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vec3::new(st * cp, st * sp, ct)
    }

    /// `(e_θ, e_φ)`.
    pub fn frame(&self) -> (Vec3, Vec3) {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        (Vec3::new(ct * cp, ct * sp, -st), Vec3::new(-sp, cp, 0.0))
    }

    pub fn vector(&self) -> Vec3 {
        let (e_theta, e_phi) = self.frame();
        e_theta * self.psi.cos() + e_phi * self.psi.sin()
    }

    pub fn to_tangent(&self) -> Result<UnitTangent> {
        UnitTangent::new(AmbientPoint::normalize(self.base()), self.vector())
    }

    /// Inverse of [`UtmPoint::to_tangent`] away from the poles.
    pub fn from_tangent(t: &UnitTangent) -> Self {
        let x = t.base().coords();
        let theta = x.z.clamp(-1.0, 1.0).acos();
        let phi = x.y.atan2(x.x).rem_euclid(TAU);
        let probe = UtmPoint { theta, phi, psi: 0.0 };
        let (e_theta, e_phi) = probe.frame();
        let psi = t.vector().dot(&e_phi).atan2(t.vector().dot(&e_theta)).rem_euclid(TAU);
        UtmPoint { psi, ..probe }
    }
}

/// Midpoint grid in `(θ, φ, ψ)`; half-cell offsets keep nodes off the poles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UtmGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub n_psi: usize,
}

impl UtmGrid {
    pub fn new(n_theta: usize, n_phi: usize, n_psi: usize) -> Self {
        Self { n_theta, n_phi, n_psi }
    }

    pub fn theta(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * PI / self.n_theta as f64
    }

    pub fn phi(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * TAU / self.n_phi as f64
    }

    pub fn psi(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * TAU / self.n_psi as f64
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> UtmPoint {
        UtmPoint {
            theta: self.theta(i),
            phi: self.phi(j),
            psi: self.psi(k),
        }
    }

    /// Liouville weight of a node in row `i`: the exact `sin θ` integral over
    /// its θ-cell times the φ and ψ cell widths.
    pub fn weight(&self, i: usize) -> f64 {
        let h = PI / self.n_theta as f64;
        2.0 * self.theta(i).sin() * (0.5 * h).sin() * (TAU / self.n_phi as f64) * (TAU / self.n_psi as f64)
    }

    pub fn total_weight(&self) -> f64 {
        (0..self.n_theta).map(|i| self.weight(i)).sum::<f64>() * (self.n_phi * self.n_psi) as f64
    }

    /// Largest geodesic spacing between neighbouring base nodes.
    pub fn base_spacing(&self) -> f64 {
        (PI / self.n_theta as f64).max(TAU / self.n_phi as f64)
    }

    pub fn fibre_spacing(&self) -> f64 {
        TAU / self.n_psi as f64
    }
}

/// Minimum number of grid nodes across a bandwidth diameter `2√h`.
pub const NODES_PER_BANDWIDTH: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    Geodesic,
    Chordal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureConfig {
    /// Bandwidths, family, α and the fibre metric; the neighbour counts are unused.
    pub kernel: KernelConfig,
    pub base_metric: BaseMetric,
}

impl QuadratureConfig {
    /// Geodesic distances on base and fibre.
    pub fn continuous(kernel: KernelConfig) -> Self {
        Self {
            kernel: KernelConfig {
                fibre_metric: FibreMetric::Geodesic,
                ..kernel
            },
            base_metric: BaseMetric::Geodesic,
        }
    }

    /// Ambient Euclidean distances, as used with sampled data.
    pub fn chordal(kernel: KernelConfig) -> Self {
        Self {
            kernel: KernelConfig {
                fibre_metric: FibreMetric::Chordal,
                ..kernel
            },
            base_metric: BaseMetric::Chordal,
        }
    }

    fn base_factor(&self, x: &Vec3, y: &Vec3) -> f64 {
        let sq = match self.base_metric {
            BaseMetric::Chordal => (x - y).norm_squared(),
            BaseMetric::Geodesic => {
                let d = x.cross(y).norm().atan2(x.dot(y));
                d * d
            }
        };
        self.kernel.family.profile(sq / self.kernel.eps)
    }

    fn fibre_factor(&self, cos_angle: f64) -> f64 {
        let chord_sq = (2.0 - 2.0 * cos_angle).max(0.0);
        self.kernel
            .family
            .profile(self.kernel.fibre_metric.squared(chord_sq) / self.kernel.delta)
    }
}

/// Kernel between `(x, v)` and `(y, w)`, transporting `v` to `y`.
///
/// Antipodal base points get weight zero.
pub fn utm_kernel(cfg: &QuadratureConfig, a: &UnitTangent, b: &UnitTangent) -> f64 {
    let (x, y) = (a.base().coords(), b.base().coords());
    let base = cfg.base_factor(x, y);
    if base == 0.0 {
        return 0.0;
    }
    let Some(moved) = transported(x, y, a.vector()) else {
        return 0.0;
    };
    base * cfg.fibre_factor(moved.dot(b.vector()))
}

/// Rodrigues rotation of `v` by the rotation taking `x` to `y`; `None` when
/// the points are antipodal.
fn transported(x: &Vec3, y: &Vec3, v: &Vec3) -> Option<Vec3> {
    let axis = x.cross(y);
    let s = axis.norm();
    let c = x.dot(y);
    if s < 1e-12 {
        return (c > 0.0).then_some(*v);
    }
    let k = axis / s;
    Some(v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c)))
}

fn check_resolution(cfg: &QuadratureConfig, grid: &UtmGrid) -> Result<()> {
    let base = 2.0 * cfg.kernel.eps.sqrt() / grid.base_spacing();
    if base < NODES_PER_BANDWIDTH {
        return Err(HdmError::UnderResolved {
            which: "base",
            nodes: base,
            required: NODES_PER_BANDWIDTH,
        });
    }
    let fibre = 2.0 * cfg.kernel.delta.sqrt() / grid.fibre_spacing();
    if fibre < NODES_PER_BANDWIDTH {
        return Err(HdmError::UnderResolved {
            which: "fibre",
            nodes: fibre,
            required: NODES_PER_BANDWIDTH,
        });
    }
    Ok(())
}

/// Grid geometry cached per base node.
struct GridCache {
    grid: UtmGrid,
    base: Vec<Vec3>,
    e_theta: Vec<Vec3>,
    e_phi: Vec<Vec3>,
    cos_psi: Vec<f64>,
    sin_psi: Vec<f64>,
}

impl GridCache {
    fn new(grid: UtmGrid) -> Self {
        let mut base = Vec::with_capacity(grid.n_theta * grid.n_phi);
        let mut e_theta = Vec::with_capacity(base.capacity());
        let mut e_phi = Vec::with_capacity(base.capacity());
        for i in 0..grid.n_theta {
            for j in 0..grid.n_phi {
                let p = grid.node(i, j, 0);
                let (a, b) = p.frame();
                base.push(p.base());
                e_theta.push(a);
                e_phi.push(b);
            }
        }
        let (sin_psi, cos_psi) = (0..grid.n_psi).map(|k| grid.psi(k).sin_cos()).unzip();
        Self {
            grid,
            base,
            e_theta,
            e_phi,
            cos_psi,
            sin_psi,
        }
    }

    /// `Σ_y K(point, y) g(y) w(y)` and `Σ_y K(point, y) w(y)` where `g` is given
    /// per node and `row_scale[i]` multiplies the weights of θ-row `i`.
    fn sums(
        &self,
        cfg: &QuadratureConfig,
        point: &UnitTangent,
        values: Option<&[f64]>,
        row_scale: &[f64],
    ) -> (f64, f64) {
        let g = &self.grid;
        let x = point.base().coords();
        let v = point.vector();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..g.n_theta {
            let row_weight = g.weight(i) * row_scale[i];
            for j in 0..g.n_phi {
                let b = i * g.n_phi + j;
                let base = cfg.base_factor(x, &self.base[b]);
                if base == 0.0 {
                    continue;
                }
                let Some(moved) = transported(x, &self.base[b], v) else {
                    continue;
                };
                let (a_t, a_p) = (moved.dot(&self.e_theta[b]), moved.dot(&self.e_phi[b]));
                let w = base * row_weight;
                for k in 0..g.n_psi {
                    let kern = w * cfg.fibre_factor(a_t * self.cos_psi[k] + a_p * self.sin_psi[k]);
                    den += kern;
                    if let Some(vals) = values {
                        num += kern * vals[b * g.n_psi + k];
                    }
                }
            }
        }
        (num, den)
    }
}

/// `H^α_{ε,δ} f` at `eval_points` by quadrature over `grid`.
///
/// The density `p_{ε,δ}` is evaluated once per θ-row: the grid is invariant
/// under shifts in `φ` and `ψ`, and in-fibre rotations commute with transport.
pub fn quadrature_operator_apply(
    f: &(dyn Fn(&UtmPoint) -> f64 + Sync),
    cfg: &QuadratureConfig,
    grid: &UtmGrid,
    eval_points: &[UtmPoint],
) -> Result<Vec<f64>> {
    cfg.kernel.validate()?;
    check_resolution(cfg, grid)?;
    let cache = GridCache::new(*grid);
    let values: Vec<f64> = (0..grid.n_theta)
        .flat_map(|i| (0..grid.n_phi).flat_map(move |j| (0..grid.n_psi).map(move |k| (i, j, k))))
        .map(|(i, j, k)| f(&grid.node(i, j, k)))
        .collect();
    let ones = vec![1.0; grid.n_theta];
    let row_scale: Vec<f64> = if cfg.kernel.alpha == 0.0 {
        ones.clone()
    } else {
        (0..grid.n_theta)
            .into_par_iter()
            .map(|i| {
                let node = grid.node(i, 0, 0).to_tangent()?;
                let (_, p) = cache.sums(cfg, &node, None, &ones);
                Ok(p.powf(-cfg.kernel.alpha))
            })
            .collect::<Result<Vec<_>>>()?
    };
    eval_points
        .par_iter()
        .map(|p| {
            let (num, den) = cache.sums(cfg, &p.to_tangent()?, Some(&values), &row_scale);
            Ok(num / den)
        })
        .collect()
}

/// Through-origin least squares `y ≈ c x`: returns `(c, R²)` with
/// `R² = 1 − Σ(y − c x)² / Σ(y − ȳ)²`.
pub fn proportionality_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let c = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / x.iter().map(|a| a * a).sum::<f64>();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - c * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    (c, 1.0 - ss_res / ss_tot)
}

/// Least-squares slope of `log r` against `log t`.
pub fn loglog_slope(t: &[f64], r: &[f64]) -> f64 {
    let lx: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Riemann tensor `R_{abc}^d` of a space of constant curvature `k` in an
/// orthonormal frame: `k (δ_ac δ_bd − δ_ad δ_bc)`.
fn constant_curvature_riemann(k: f64, a: usize, b: usize, c: usize, d: usize) -> f64 {
    let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    k * (delta(a, c) * delta(b, d) - delta(a, d) * delta(b, c))
}

/// Distance between exact and second-order transported coefficients.
///
/// Coordinates are geodesic normal coordinates at `x` in the frame
/// `(θ, x × θ)`. The exact coefficients come from the ambient transport and
/// the differential of the exponential map; the expansion is
/// `v^j − t²/6 · θ^k θ^σ v^l (R_{lσk}^j + R_{kσl}^j)` with unit curvature.
pub fn transport_taylor_residual(x: &AmbientPoint, theta: &Vec3, v: &Vec3, t_values: &[f64]) -> Result<Vec<f64>> {
    let theta_t = UnitTangent::new(*x, *theta)?;
    let normal = x.coords().cross(theta);
    let coeff_v = [v.dot(theta), v.dot(&normal)];
    let coeff_theta = [1.0, 0.0];
    let v_t = UnitTangent::project(*x, *v)?;
    let scale = v.norm();

    let mut second = [0.0; 2];
    for (j, out) in second.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..2 {
            for s in 0..2 {
                for l in 0..2 {
                    acc += coeff_theta[k]
                        * coeff_theta[s]
                        * coeff_v[l]
                        * (constant_curvature_riemann(1.0, l, s, k, j) + constant_curvature_riemann(1.0, k, s, l, j));
                }
            }
        }
        *out = acc;
    }

    t_values
        .iter()
        .map(|&t| {
            let y = exp_map_sphere(x, &(theta_t.vector() * t))?;
            let moved = parallel_transport_sphere(x, &y, &v_t)?.vector() * scale;
            // ∂_θ at y is the geodesic velocity; ∂_⊥ is the fixed normal scaled by sin t / t
            let velocity = theta_t.vector() * t.cos() - x.coords() * t.sin();
            let exact = [moved.dot(&velocity), moved.dot(&normal) * t / t.sin()];
            let expanded = [
                coeff_v[0] - t * t / 6.0 * second[0],
                coeff_v[1] - t * t / 6.0 * second[1],
            ];
            Ok(((exact[0] - expanded[0]).powi(2) + (exact[1] - expanded[1]).powi(2)).sqrt())
        })
        .collect()
}

/// Sampled operator `Ĥf` at probe points: kernel-weighted average of
/// `values` (one per bundle sample) over every sample of `samples`.
///
/// With `alpha > 0` the sampled density is evaluated at every sample, which
/// costs a full pass over all sample pairs.
pub fn sampled_operator_apply(
    samples: &BundleSampleSet,
    values: &[f64],
    cfg: &QuadratureConfig,
    probes: &[UnitTangent],
) -> Result<Vec<f64>> {
    cfg.kernel.validate()?;
    let tangents = samples
        .tangents()
        .ok_or_else(|| HdmError::InvalidConfig("the sampled oracle needs tangent samples".into()))?;
    let flat: Vec<UnitTangent> = tangents.iter().flatten().copied().collect();
    if flat.len() != values.len() {
        return Err(HdmError::DimensionMismatch {
            expected: flat.len(),
            found: values.len(),
        });
    }
    let scale: Vec<f64> = if cfg.kernel.alpha == 0.0 {
        vec![1.0; flat.len()]
    } else {
        flat.par_iter()
            .map(|a| {
                flat.iter()
                    .map(|b| utm_kernel(cfg, a, b))
                    .sum::<f64>()
                    .powf(-cfg.kernel.alpha)
            })
            .collect()
    };
    Ok(probes
        .par_iter()
        .map(|p| {
            let (mut num, mut den) = (0.0, 0.0);
            for ((s, &val), &q) in flat.iter().zip(values).zip(&scale) {
                let k = utm_kernel(cfg, p, s) * q;
                num += k * val;
                den += k;
            }
            num / den
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle_graph::KernelFamily;
    use crate::geometry::RngSeed;
    use proptest::prelude::*;
    use rand::Rng;

    fn kernel(eps: f64, delta: f64, alpha: f64) -> KernelConfig {
        KernelConfig {
            alpha,
            ..KernelConfig::new(eps, delta, 1, 1)
        }
    }

    fn eval_points(n: usize, theta_range: (f64, f64), seed: u64) -> Vec<UtmPoint> {
        let mut rng = RngSeed(seed).stream(80, 0);
        (0..n)
            .map(|_| UtmPoint {
                theta: theta_range.0 + (theta_range.1 - theta_range.0) * rng.random::<f64>(),
                phi: TAU * rng.random::<f64>(),
                psi: TAU * rng.random::<f64>(),
            })
            .collect()
    }

    #[test]
    fn reference_values() {
        assert_eq!(reference_multiplicities(Regime::Horizontal), vec![1, 6, 13]);
        assert_eq!(reference_multiplicities(Regime::Total), vec![1, 9, 25]);
        assert_eq!(reference_multiplicities(Regime::Base), vec![1, 3, 5]);
        let s = sphere_spectrum(2);
        assert_eq!(s.entries, vec![(0.0, 1), (2.0, 3), (6.0, 5)]);
        assert_eq!(s.multiplicities(), reference_multiplicities(Regime::Base));
        assert_eq!(s.ratios(), vec![1.0, 3.0]);
    }

    #[test]
    fn sphere_harmonics_are_eigenfunctions() {
        // Δ f = (1/sinθ)∂_θ(sinθ ∂_θ f) + (1/sin²θ)∂²_φ f by central differences
        let h = 1e-4;
        let lap = |f: &dyn Fn(f64, f64) -> f64, t: f64, p: f64| {
            let dt = |t: f64| (f(t + h, p) - f(t - h, p)) / (2.0 * h);
            let radial = ((t + h).sin() * dt(t + h) - (t - h).sin() * dt(t - h)) / (2.0 * h) / t.sin();
            let angular = (f(t, p + h) - 2.0 * f(t, p) + f(t, p - h)) / (h * h) / t.sin().powi(2);
            radial + angular
        };
        let y1 = |t: f64, p: f64| t.sin() * p.cos();
        let y2 = |t: f64, p: f64| 3.0 * t.cos().powi(2) - 1.0 + t.sin().powi(2) * (2.0 * p).sin();
        for &(t, p) in &[(0.7, 0.3), (1.9, 4.0)] {
            assert!((lap(&y1, t, p) + 2.0 * y1(t, p)).abs() < 1e-4);
            assert!((lap(&y2, t, p) + 6.0 * y2(t, p)).abs() < 1e-4);
        }
    }

    #[test]
    fn tangent_coordinates_round_trip() {
        for p in eval_points(20, (0.1, 3.0), 9) {
            let q = UtmPoint::from_tangent(&p.to_tangent().unwrap());
            assert!((q.theta - p.theta).abs() < 1e-12);
            assert!((q.phi - p.phi).abs() < 1e-12);
            assert!((q.psi - p.psi).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_volume_is_liouville_volume() {
        let g = UtmGrid::new(64, 128, 64);
        assert!((g.total_weight() - 8.0 * PI * PI).abs() < 1e-6);
        assert!((0..64).all(|i| g.weight(i) > 0.0));
    }

    #[test]
    fn grid_quadrature_is_second_order() {
        // ∫ cos²θ dμ = 8π²/3
        let err = |n: usize| {
            let g = UtmGrid::new(n, 2 * n, n);
            let s: f64 = (0..n).map(|i| g.weight(i) * g.theta(i).cos().powi(2)).sum::<f64>() * (2 * n * n) as f64;
            (s - 8.0 * PI * PI / 3.0).abs()
        };
        let rate = (err(16) / err(32)).log2();
        assert!((rate - 2.0).abs() < 0.2, "rate {rate}");
    }

    #[test]
    fn constants_are_fixed_points() {
        let g = UtmGrid::new(16, 32, 24);
        let cfg = QuadratureConfig::continuous(kernel(0.7, 1.5, 1.0));
        let out = quadrature_operator_apply(&|_| 1.0, &cfg, &g, &eval_points(5, (0.3, 2.8), 1)).unwrap();
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn under_resolved_bandwidth_is_reported() {
        let g = UtmGrid::new(16, 32, 16);
        let cfg = QuadratureConfig::continuous(kernel(0.01, 1.0, 0.0));
        assert!(matches!(
            quadrature_operator_apply(&|_| 1.0, &cfg, &g, &[]),
            Err(HdmError::UnderResolved { which: "base", .. })
        ));
        let cfg = QuadratureConfig::continuous(kernel(1.0, 0.001, 0.0));
        assert!(matches!(
            quadrature_operator_apply(&|_| 1.0, &cfg, &g, &[]),
            Err(HdmError::UnderResolved { which: "fibre", .. })
        ));
    }

    #[test]
    fn alpha_is_inert_for_uniform_density() {
        let g = UtmGrid::new(24, 48, 24);
        let pts = eval_points(6, (0.4, 2.7), 2);
        let f = |p: &UtmPoint| p.theta.cos() + 0.3 * p.psi.sin();
        let run = |alpha| {
            let cfg = QuadratureConfig::continuous(kernel(0.3, 1.5, alpha));
            quadrature_operator_apply(&f, &cfg, &g, &pts).unwrap()
        };
        let base = run(0.0);
        for alpha in [0.5, 1.0] {
            for (a, b) in base.iter().zip(run(alpha)) {
                assert!((a - b).abs() < 1e-3, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn base_function_sees_sphere_laplacian() {
        let g = UtmGrid::new(32, 64, 32);
        let cfg = QuadratureConfig::continuous(kernel(0.2, 20.0, 1.0));
        let pts = eval_points(30, (0.2, 2.9), 3);
        let h = quadrature_operator_apply(&|p| p.theta.cos(), &cfg, &g, &pts).unwrap();
        let y: Vec<f64> = pts.iter().zip(&h).map(|(p, hv)| (hv - p.theta.cos()) / 0.2).collect();
        let x: Vec<f64> = pts.iter().map(|p| -2.0 * p.theta.cos()).collect();
        let (c, r2) = proportionality_fit(&x, &y);
        assert!(c > 0.0 && r2 > 0.98, "c = {c}, R² = {r2}");
    }

    #[test]
    fn compact_family_keeps_constants() {
        let g = UtmGrid::new(32, 64, 32);
        let mut k = kernel(0.3, 2.0, 0.5);
        k.family = KernelFamily::CompactProduct;
        let cfg = QuadratureConfig::continuous(k);
        let out = quadrature_operator_apply(&|_| 2.5, &cfg, &g, &eval_points(4, (0.5, 2.5), 4)).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn transport_residual_vanishes_at_zero_and_decays() {
        let x = AmbientPoint::normalize(Vec3::new(0.3, -0.2, 0.9));
        let (e1, e2) = x.fibre_frame();
        let v = e1 * 0.6 + e2 * 0.8;
        let r = transport_taylor_residual(&x, &e1, &v, &[1e-3, 0.04, 0.08, 0.16, 0.32]).unwrap();
        assert!(r[0] < 1e-10);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        // v along the geodesic is transported to the velocity: no residual at all
        let along = transport_taylor_residual(&x, &e1, &e1, &[0.1, 0.3]).unwrap();
        assert!(along.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn transport_residual_for_normal_vector() {
        let x = AmbientPoint::normalize(Vec3::new(0.0, 0.6, 0.8));
        let (e1, e2) = x.fibre_frame();
        let ts = [0.04, 0.08, 0.16, 0.32];
        let r = transport_taylor_residual(&x, &e1, &e2, &ts).unwrap();
        // exact normal coefficient t / sin t against 1 + t²/6
        for (&t, &res) in ts.iter().zip(&r) {
            assert!((res - (t / t.sin() - 1.0 - t * t / 6.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_operator_keeps_constants() {
        let set = BundleSampleSet::sample_exact(50, 4, crate::geometry::FibreSampling::Random, RngSeed(1));
        let cfg = QuadratureConfig::chordal(kernel(0.3, 0.5, 0.5));
        let probes: Vec<UnitTangent> = eval_points(3, (0.5, 2.5), 5)
            .iter()
            .map(|p| p.to_tangent().unwrap())
            .collect();
        let out = sampled_operator_apply(&set, &vec![4.0; 200], &cfg, &probes).unwrap();
        assert!(out.iter().all(|v| (v - 4.0).abs() < 1e-12));
    }

    fn utm_point() -> impl Strategy<Value = UtmPoint> {
        (0.05f64..3.09, 0.0f64..6.28, 0.0f64..6.28).prop_map(|(theta, phi, psi)| UtmPoint { theta, phi, psi })
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(a in utm_point(), b in utm_point()) {
            for cfg in [
                QuadratureConfig::continuous(kernel(0.4, 0.7, 0.0)),
                QuadratureConfig::chordal(kernel(0.4, 0.7, 0.0)),
            ] {
                let (ta, tb) = (a.to_tangent().unwrap(), b.to_tangent().unwrap());
                prop_assert!((utm_kernel(&cfg, &ta, &tb) - utm_kernel(&cfg, &tb, &ta)).abs() <= 1e-12);
            }
        }
    }
}
