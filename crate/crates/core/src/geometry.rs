//! Exact geometry of the unit sphere S² and its unit tangent bundle.
//!
//! Points live in ambient ℝ³. Parallel transport along the minimizing
//! geodesic from `x` to `y` is the rotation about `x × y` that carries `x`
//! onto `y`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HdmError, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on unit norm and tangency used by the checked constructors.
pub const GEOMETRY_TOL: f64 = 1e-10;

/// Below this `|x × y|` two points are treated as coincident or antipodal.
const DEGENERATE_AXIS_TOL: f64 = 1e-12;

/// Seed for every random stage of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

/// Stage identifiers for [`RngSeed::stream`].
pub mod stage {
    pub const BASE: u64 = 1;
    pub const FIBRE: u64 = 2;
    pub const SOLVER: u64 = 3;
    pub const PROBE: u64 = 4;
}

impl RngSeed {
    /// Independent generator for `(stage, index)`.
    ///
    /// Every stage draws from its own ChaCha stream `stage << 40 | index`, so
    /// re-running one stage never perturbs another.
    pub fn stream(self, stage: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream((stage << 40) | (index & ((1 << 40) - 1)));
        rng
    }
}

/// A point on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbientPoint(Vec3);

impl AmbientPoint {
    /// Checked constructor: `coords` must already have unit norm.
    pub fn new(coords: Vec3) -> Result<Self> {
        let norm = coords.norm();
        if (norm - 1.0).abs() > GEOMETRY_TOL {
            return Err(HdmError::NotUnit { norm });
        }
        Ok(Self(coords / norm))
    }

    /// Checked like [`AmbientPoint::new`] but keeps `coords` bit for bit.
    pub fn from_stored(coords: Vec3) -> Result<Self> {
        let norm = coords.norm();
        if (norm - 1.0).abs() > GEOMETRY_TOL {
            return Err(HdmError::NotUnit { norm });
        }
        Ok(Self(coords))
    }

    /// Projects a non-zero vector radially onto the sphere.
    pub fn normalize(coords: Vec3) -> Self {
        Self(coords.normalize())
    }

    pub fn coords(&self) -> &Vec3 {
        &self.0
    }

    /// Orthogonal projector onto the tangent plane, `I − x xᵀ`.
    pub fn tangent_projector(&self) -> Matrix3<f64> {
        Matrix3::identity() - self.0 * self.0.transpose()
    }

    /// Deterministic orthonormal frame `(e₁, e₂)` of the tangent plane.
    ///
    /// `e₁` is the projection of `e_x` (or of `e_y` when the point is close to
    /// the x axis) and `e₂ = x × e₁`, so the frame is positively oriented.
    pub fn fibre_frame(&self) -> (Vec3, Vec3) {
        let x = self.0;
        let seed = if x.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = (seed - x * x.dot(&seed)).normalize();
        let e2 = x.cross(&e1);
        (e1, e2)
    }

    /// Unit tangent at in-plane angle `angle` measured in [`Self::fibre_frame`].
    pub fn tangent_at_angle(&self, angle: f64) -> UnitTangent {
        let (e1, e2) = self.fibre_frame();
        UnitTangent {
            base: *self,
            vector: e1 * angle.cos() + e2 * angle.sin(),
        }
    }
}

/// A unit vector tangent to S² at `base`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitTangent {
    base: AmbientPoint,
    vector: Vec3,
}

impl UnitTangent {
    pub fn new(base: AmbientPoint, vector: Vec3) -> Result<Self> {
        let dot = vector.dot(base.coords());
        if dot.abs() > GEOMETRY_TOL {
            return Err(HdmError::InvalidTangent { dot });
        }
        let norm = vector.norm();
        if (norm - 1.0).abs() > GEOMETRY_TOL {
            return Err(HdmError::NotUnit { norm });
        }
        Ok(Self { base, vector })
    }

    /// Projects `vector` onto the tangent plane at `base` and normalizes it.
    pub fn project(base: AmbientPoint, vector: Vec3) -> Result<Self> {
        let x = base.coords();
        let tangential = vector - x * x.dot(&vector);
        let norm = tangential.norm();
        if norm < DEGENERATE_AXIS_TOL {
            return Err(HdmError::InvalidTangent { dot: x.dot(&vector) });
        }
        Ok(Self {
            base,
            vector: tangential / norm,
        })
    }

    pub fn base(&self) -> &AmbientPoint {
        &self.base
    }

    pub fn vector(&self) -> &Vec3 {
        &self.vector
    }

    /// Angle of the vector in the base point's [`AmbientPoint::fibre_frame`].
    pub fn frame_angle(&self) -> f64 {
        let (e1, e2) = self.base.fibre_frame();
        self.vector.dot(&e2).atan2(self.vector.dot(&e1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FibreSampling {
    Random,
    Equispaced,
}

/// `n` i.i.d. uniform points on S² (normalized Gaussian vectors).
pub fn sample_sphere_uniform(n: usize, seed: RngSeed) -> Vec<AmbientPoint> {
    let mut rng = seed.stream(stage::BASE, 0);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let norm = v.norm();
        if norm > 1e-8 {
            out.push(AmbientPoint(v / norm));
        }
    }
    out
}

/// `n` unit tangents at `base`, uniform on the fibre circle or equispaced from
/// the deterministic frame angle zero.
pub fn sample_fibre_circle(base: &AmbientPoint, n: usize, mode: FibreSampling, seed: RngSeed) -> Vec<UnitTangent> {
    sample_fibre_angles(n, mode, seed, 0)
        .into_iter()
        .map(|a| base.tangent_at_angle(a))
        .collect()
}

/// Angles on the circle; `index` selects the random stream (one per fibre).
pub fn sample_fibre_angles(n: usize, mode: FibreSampling, seed: RngSeed, index: u64) -> Vec<f64> {
    use std::f64::consts::TAU;
    match mode {
        FibreSampling::Equispaced => (0..n).map(|k| TAU * k as f64 / n as f64).collect(),
        FibreSampling::Random => {
            let mut rng = seed.stream(stage::FIBRE, index);
            (0..n).map(|_| rng.random::<f64>() * TAU).collect()
        }
    }
}

/// Great-circle distance in radians, in `[0, π]`.
pub fn geodesic_distance_sphere(x: &AmbientPoint, y: &AmbientPoint) -> f64 {
    // atan2 form: same value as arccos(x·y) but accurate near 0 and π
    let c = x.0.dot(&y.0).clamp(-1.0, 1.0);
    let s = x.0.cross(&y.0).norm();
    s.atan2(c)
}

/// Riemannian exponential map at `x`.
pub fn exp_map_sphere(x: &AmbientPoint, v: &Vec3) -> Result<AmbientPoint> {
    let dot = v.dot(&x.0);
    if dot.abs() > GEOMETRY_TOL * v.norm().max(1.0) {
        return Err(HdmError::InvalidTangent { dot });
    }
    let t = v.norm();
    if t == 0.0 {
        return Ok(*x);
    }
    let y = x.0 * t.cos() + v * (t.sin() / t);
    Ok(AmbientPoint(y.normalize()))
}

/// Rotation matrix of the parallel transport `T_x S² → T_y S²`.
///
/// Coincident points give the identity; antipodal points are an error.
pub fn transport_rotation(x: &AmbientPoint, y: &AmbientPoint) -> Result<Matrix3<f64>> {
    let axis = x.0.cross(&y.0);
    let s = axis.norm();
    let c = x.0.dot(&y.0);
    if s < DEGENERATE_AXIS_TOL {
        if c > 0.0 {
            return Ok(Matrix3::identity());
        }
        return Err(HdmError::DegenerateTransport);
    }
    let k = axis / s;
    let kx = k.cross_matrix();
    // Rodrigues: R = I + sin θ [k]× + (1 − cos θ) [k]×²
    Ok(Matrix3::identity() + kx * s + kx * kx * (1.0 - c))
}

/// Applies the transport rotation to an arbitrary ambient vector.
pub fn transport_vector(x: &AmbientPoint, y: &AmbientPoint, v: &Vec3) -> Result<Vec3> {
    Ok(transport_rotation(x, y)? * v)
}

/// Levi-Civita parallel transport of `v ∈ T_x S²` to `T_y S²` along the
/// minimizing geodesic.
pub fn parallel_transport_sphere(x: &AmbientPoint, y: &AmbientPoint, v: &UnitTangent) -> Result<UnitTangent> {
    if x.0.cross(&y.0).norm() < DEGENERATE_AXIS_TOL {
        return Err(HdmError::DegenerateTransport);
    }
    let moved = transport_rotation(x, y)? * v.vector;
    Ok(UnitTangent {
        base: *y,
        vector: moved,
    })
}
