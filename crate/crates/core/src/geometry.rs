//! SO(3) / SE(3) algebra: composition, interpolation, sampling and distances.
//!
//! Transforms act on points as `T x = R x + t`. Pose updates produced by the
//! de-noiser are expressed in the *mean-centred* convention: the rotation is
//! applied about the centroid of the cloud being moved and the translation is
//! added afterwards. [`RigidTransform::about_point`] converts such an update
//! into an ordinary world-frame transform.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;

pub type Vec3 = Vector3<f64>;

/// Orthonormality / determinant tolerance used by the shared validator.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a rotation (|RR^T - I| = {ortho:.3e}, det = {det:.9})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("non-finite value in transform")]
    NonFinite,
    #[error("interpolation needs at least one step")]
    ZeroSteps,
    #[error("timestep {t} outside 1..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("iteration {i} outside 0..={total}")]
    IterationOutOfRange { i: usize, total: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(&'static str),
}

/// Checks `R Rᵀ = I` and `det R = +1` within `tol`.
pub fn validate_rotation_matrix(m: &Matrix3<f64>, tol: f64) -> Result<(), GeometryError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let ortho = (m * m.transpose() - Matrix3::identity()).abs().max();
    let det = m.determinant();
    if ortho > tol || (det - 1.0).abs() > tol {
        return Err(GeometryError::NotARotation { ortho, det });
    }
    Ok(())
}

/// A 3D rotation stored as an orthonormal matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        validate_rotation_matrix(&m, ROTATION_TOLERANCE)?;
        Ok(Rotation(m))
    }

    /// Wraps a matrix the caller has already built orthonormal.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(validate_rotation_matrix(&m, 1e-5).is_ok());
        Rotation(m)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rotation(q.to_rotation_matrix().into_inner())
    }

    /// Rotation by `angle` radians about `axis` (normalised internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-15 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    pub fn about_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn about_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn about_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    /// SO(3) exponential map of an axis-angle vector.
    pub fn exp(v: &Vec3) -> Self {
        let theta = v.norm();
        // sin(θ/2)/θ, with its Taylor expansion near zero
        let k = if theta < 1e-6 {
            0.5 - theta * theta / 48.0
        } else {
            (0.5 * theta).sin() / theta
        };
        let q = Quaternion::new((0.5 * theta).cos(), k * v.x, k * v.y, k * v.z);
        Self::from_quaternion(&UnitQuaternion::new_normalize(q))
    }

    /// SO(3) logarithm; the returned axis-angle vector has norm in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        let q = self.quaternion();
        let (w, v) = if q.w < 0.0 {
            (-q.w, -q.imag())
        } else {
            (q.w, q.imag())
        };
        let s = v.norm();
        if s < 1e-12 {
            return v * 2.0;
        }
        v * (2.0 * s.atan2(w) / s)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(self.0))
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let c = 0.5 * (m.trace() - 1.0);
        let s = 0.5 * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
        s.atan2(c)
    }

    /// Geodesic interpolation from identity: `exp(s · log R)`.
    pub fn scaled(&self, s: f64) -> Self {
        if s == 1.0 {
            return *self;
        }
        Self::exp(&(self.log() * s))
    }

    /// Spherical linear interpolation between `self` (s = 0) and `other` (s = 1).
    pub fn slerp(&self, other: &Rotation, s: f64) -> Self {
        self.compose(&self.inverse().compose(other).scaled(s))
    }

    pub fn is_valid(&self) -> bool {
        validate_rotation_matrix(&self.0, ROTATION_TOLERANCE).is_ok()
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(r: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_row_slice(r))
    }
}

/// Minimal rotation angle between two rotations, in radians.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    a.inverse().compose(b).angle()
}

/// A rigid-body transform `x ↦ R x + t` (translation in metres).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRepr", try_from = "TransformRepr")]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

/// JSON form: `{"r": 9 row-major floats, "t": 3 floats}`.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    r: [f64; 9],
    t: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(x: RigidTransform) -> Self {
        TransformRepr {
            r: x.rotation.to_row_major(),
            t: [x.translation.x, x.translation.y, x.translation.z],
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = GeometryError;

    fn try_from(r: TransformRepr) -> Result<Self, Self::Error> {
        if r.t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(RigidTransform {
            rotation: Rotation::from_row_major(&r.r)?,
            translation: Vec3::new(r.t[0], r.t[1], r.t[2]),
        })
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self::new(
            self.rotation.compose(&other.rotation),
            self.rotation.apply(&other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self::new(r, -r.apply(&self.translation))
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    /// Interprets `self` as a mean-centred update about `center` and returns
    /// the equivalent world-frame transform `x ↦ R (x - c) + c + t`.
    pub fn about_point(&self, center: &Vec3) -> Self {
        Self::new(self.rotation, center + self.translation - self.rotation.apply(center))
    }

    /// Inverse of [`about_point`](Self::about_point): expresses a world
    /// transform as a mean-centred update about `center`.
    pub fn centered_at(&self, center: &Vec3) -> Self {
        Self::new(self.rotation, self.apply_point(center) - center)
    }

    /// Fraction `s` of this transform: SLERP on the rotation, linear on the translation.
    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.rotation.scaled(s), self.translation * s)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.matrix().iter().all(|v| v.is_finite())
    }
}

/// `a ∘ b`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

/// Uniformly interpolates `perturbation` into `steps` transforms; element `s`
/// is the fraction `(s + 1) / steps` of the perturbation, so the last element
/// is the perturbation itself. Element `s` corresponds to timestep `t = s + 1`.
pub fn slerp_interpolate(perturbation: &RigidTransform, steps: usize) -> Result<Vec<RigidTransform>, GeometryError> {
    if steps == 0 {
        return Err(GeometryError::ZeroSteps);
    }
    let log = perturbation.rotation.log();
    let mut out: Vec<RigidTransform> = (1..steps)
        .map(|k| {
            let s = k as f64 / steps as f64;
            RigidTransform::new(Rotation::exp(&(log * s)), perturbation.translation * s)
        })
        .collect();
    out.push(*perturbation);
    Ok(out)
}

/// Single-interval transform `interp[t-2]⁻¹ ∘ interp[t-1]` (1-based timestep);
/// `t = 1` returns `interp[0]`. Composing the increments for `t = 1..=T` in
/// order reproduces the last element of `interp`.
pub fn increment_between(interp: &[RigidTransform], t: usize) -> Result<RigidTransform, GeometryError> {
    if t == 0 || t > interp.len() {
        return Err(GeometryError::TimestepOutOfRange { t, steps: interp.len() });
    }
    if t == 1 {
        return Ok(interp[0]);
    }
    Ok(interp[t - 2].inverse().compose(&interp[t - 1]))
}

/// Haar-uniform random rotation.
pub fn sample_uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-6 {
            return Rotation::from_quaternion(&UnitQuaternion::new_normalize(q));
        }
    }
}

/// Deterministic near-uniform grid of exactly `n` rotations built from Hopf
/// coordinates: a spiral point set on S² for the base and evenly spaced
/// angles on the S¹ fibre. The first element is the identity.
pub fn rotation_grid(n: usize) -> Vec<Rotation> {
    if n == 0 {
        return Vec::new();
    }
    // Balance base and fibre spacing: sqrt(4π / n_base) ≈ 2π / n_fibre.
    let n_fibre = ((PI * n as f64).cbrt().round() as usize).max(1).min(n);
    let n_base = n.div_ceil(n_fibre);
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut all = Vec::with_capacity(n_base * n_fibre);
    for b in 0..n_base {
        let z = if n_base == 1 {
            1.0
        } else {
            1.0 - 2.0 * b as f64 / (n_base - 1) as f64
        };
        let theta = z.clamp(-1.0, 1.0).acos();
        let phi = b as f64 * golden;
        for f in 0..n_fibre {
            let psi = 2.0 * PI * f as f64 / n_fibre as f64;
            all.push(hopf_to_rotation(theta, phi, psi));
        }
    }
    let total = all.len();
    (0..n).map(|k| all[k * total / n]).collect()
}

fn hopf_to_rotation(theta: f64, phi: f64, psi: f64) -> Rotation {
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    let q = Quaternion::new(
        c * (0.5 * psi).cos(),
        c * (0.5 * psi).sin(),
        s * (phi + 0.5 * psi).cos(),
        s * (phi + 0.5 * psi).sin(),
    );
    Rotation::from_quaternion(&UnitQuaternion::new_normalize(q))
}

/// Distribution over rigid transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformDistribution {
    /// Isotropic Gaussian axis-angle rotation and translation.
    Gaussian { rotation_sigma: f64, translation_sigma: f64 },
    /// Haar rotation with translation uniform in an axis-aligned box.
    UniformBox { min: [f64; 3], max: [f64; 3] },
}

impl TransformDistribution {
    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            TransformDistribution::Gaussian {
                rotation_sigma,
                translation_sigma,
            } => {
                if !(*rotation_sigma >= 0.0 && *translation_sigma >= 0.0) {
                    return Err(GeometryError::InvalidDistribution("sigmas must be non-negative"));
                }
            }
            TransformDistribution::UniformBox { min, max } => {
                if min.iter().zip(max).any(|(a, b)| !(a <= b)) {
                    return Err(GeometryError::InvalidDistribution("box min must not exceed max"));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RigidTransform {
        match self {
            TransformDistribution::Gaussian {
                rotation_sigma,
                translation_sigma,
            } => {
                let aa = gaussian_vec3(rng) * *rotation_sigma;
                let t = gaussian_vec3(rng) * *translation_sigma;
                RigidTransform::new(Rotation::exp(&aa), t)
            }
            TransformDistribution::UniformBox { min, max } => {
                let r = sample_uniform_rotation(rng);
                let t = Vec3::from_fn(|k, _| {
                    if max[k] > min[k] {
                        rng.random_range(min[k]..=max[k])
                    } else {
                        min[k]
                    }
                });
                RigidTransform::new(r, t)
            }
        }
    }
}

pub(crate) fn gaussian_vec3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Parameters of the annealed external noise injected during refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealedNoise {
    /// Rotation std at the first iteration, degrees (axis-angle).
    pub rotation_scale_deg: f64,
    pub rotation_decay: f64,
    /// Translation std at the first iteration, metres.
    pub translation_scale: f64,
    pub translation_decay: f64,
    /// Iterations with `i <= cutoff_fraction · I` receive no noise.
    pub cutoff_fraction: f64,
}

impl Default for AnnealedNoise {
    fn default() -> Self {
        AnnealedNoise {
            rotation_scale_deg: 20.0,
            rotation_decay: 6.0,
            translation_scale: 0.03,
            translation_decay: 6.0,
            cutoff_fraction: 0.2,
        }
    }
}

impl AnnealedNoise {
    /// `(rotation σ in radians, translation σ in metres)` at iteration `i` of
    /// `total`, or `None` inside the noise-free tail. σ(i) = a·exp(−b·(I−i)/I),
    /// so the noise is largest at `i = I` and shrinks as `i → 0`.
    pub fn sigma(&self, i: usize, total: usize) -> Option<(f64, f64)> {
        if total == 0 || (i as f64) <= self.cutoff_fraction * total as f64 {
            return None;
        }
        let progress = (total - i.min(total)) as f64 / total as f64;
        Some((
            self.rotation_scale_deg.to_radians() * (-self.rotation_decay * progress).exp(),
            self.translation_scale * (-self.translation_decay * progress).exp(),
        ))
    }

    pub fn distribution(&self, i: usize, total: usize) -> Option<TransformDistribution> {
        self.sigma(i, total).map(|(r, t)| TransformDistribution::Gaussian {
            rotation_sigma: r,
            translation_sigma: t,
        })
    }
}

/// Samples the annealed noise transform for iteration `i` of `total`
/// (mean-centred convention). Identity inside the noise-free tail.
pub fn sample_annealed_noise<R: Rng + ?Sized>(
    i: usize,
    total: usize,
    params: &AnnealedNoise,
    rng: &mut R,
) -> Result<RigidTransform, GeometryError> {
    if i > total {
        return Err(GeometryError::IterationOutOfRange { i, total });
    }
    Ok(match params.distribution(i, total) {
        Some(d) => d.sample(rng),
        None => RigidTransform::identity(),
    })
}

/// Rotates `cloud` about its centroid, then adds the translation.
pub fn apply_transform_mean_centered(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let world = t.about_point(&cloud.centroid());
    cloud.transformed(&world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        RigidTransform::new(sample_uniform_rotation(rng), gaussian_vec3(rng))
    }

    fn max_abs(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn compose_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_transform(&mut rng);
        let b = random_transform(&mut rng);
        let ab = a.compose(&b);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = gaussian_vec3(&mut rng);
            let seq = a.apply_point(&b.apply_point(&x));
            worst = worst.max((ab.apply_point(&x) - seq).norm());
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_transform(&mut rng);
        let e = RigidTransform::identity().compose(&t);
        assert_eq!(e, t);
        let id = t.compose(&t.inverse());
        assert!(max_abs(id.rotation.matrix(), &Matrix3::identity()) < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn slerp_examples() {
        let id = slerp_interpolate(&RigidTransform::identity(), 5).unwrap();
        assert_eq!(id.len(), 5);
        assert!(id.iter().all(|x| x.rotation.angle() < 1e-15 && x.translation.norm() == 0.0));

        let pure = RigidTransform::from_translation(Vec3::new(0.10, 0.0, 0.0));
        let steps = slerp_interpolate(&pure, 5).unwrap();
        for (k, s) in steps.iter().enumerate() {
            assert!((s.translation.x - 0.02 * (k + 1) as f64).abs() < 1e-15);
        }
        let inc = increment_between(&steps, 3).unwrap();
        assert!((inc.translation - Vec3::new(0.02, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(increment_between(&steps, 1).unwrap(), steps[0]);
        assert!(increment_between(&steps, 0).is_err());
        assert!(increment_between(&steps, 6).is_err());

        let quarter = RigidTransform::from_rotation(Rotation::about_z(PI / 2.0));
        let two = slerp_interpolate(&quarter, 2).unwrap();
        assert!(max_abs(two[0].rotation.matrix(), Rotation::about_z(PI / 4.0).matrix()) < 1e-12);
        assert_eq!(two[1], quarter);

        assert_eq!(slerp_interpolate(&quarter, 0), Err(GeometryError::ZeroSteps));
    }

    #[test]
    fn geodesic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = sample_uniform_rotation(&mut rng);
        assert!(geodesic_distance(&r, &r) < 1e-7);
        assert!((geodesic_distance(&Rotation::identity(), &Rotation::about_x(PI)) - PI).abs() < 1e-12);
    }

    #[test]
    fn exp_and_log_examples() {
        assert_eq!(Rotation::exp(&Vec3::zeros()), Rotation::identity());
        let rz = Rotation::exp(&Vec3::new(0.0, 0.0, PI / 2.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(max_abs(rz.matrix(), &expected) < 1e-15);
        let v = Vec3::new(0.3, -1.2, 0.7);
        assert!((Rotation::exp(&v).log() - v).norm() < 1e-12);
    }

    #[test]
    fn mean_centered_examples() {
        let cloud = PointCloud::new(
            vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0), Vec3::new(0.5, 0.5, 3.0)],
            crate::cloud::CloudRole::Object,
        )
        .unwrap();
        let same = apply_transform_mean_centered(&RigidTransform::identity(), &cloud);
        assert_eq!(same.points(), cloud.points());

        let rot = RigidTransform::from_rotation(Rotation::about_y(0.7));
        let rotated = apply_transform_mean_centered(&rot, &cloud);
        assert!((rotated.centroid() - cloud.centroid()).norm() < 1e-9);

        let d = Vec3::new(0.1, -0.2, 0.3);
        let moved = apply_transform_mean_centered(&RigidTransform::from_translation(d), &cloud);
        for (a, b) in moved.points().iter().zip(cloud.points()) {
            assert!((a - b - d).norm() < 1e-15);
        }
    }

    #[test]
    fn annealed_noise_examples() {
        let params = AnnealedNoise::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(sample_annealed_noise(5, 50, &params, &mut rng).unwrap(), RigidTransform::identity());
        assert_eq!(sample_annealed_noise(10, 50, &params, &mut rng).unwrap(), RigidTransform::identity());
        let (r, t) = params.sigma(50, 50).unwrap();
        assert!((r - 20f64.to_radians()).abs() < 1e-15);
        assert!((t - 0.03).abs() < 1e-15);
        assert!(sample_annealed_noise(51, 50, &params, &mut rng).is_err());
        // non-increasing as i decreases
        let mut prev = f64::INFINITY;
        for i in (11..=50).rev() {
            let (r, _) = params.sigma(i, 50).unwrap();
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn rotation_json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_transform(&mut rng);
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("{\"r\":["));
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
        assert!(serde_json::from_str::<RigidTransform>("{\"r\":[1,0,0,0,1,0,0,0,2],\"t\":[0,0,0]}").is_err());
    }

    #[test]
    fn grid_first_is_identity() {
        assert_eq!(rotation_grid(1)[0].angle(), 0.0);
        let g = rotation_grid(72);
        assert_eq!(g.len(), 72);
        assert!(g.iter().all(Rotation::is_valid));
    }
}
