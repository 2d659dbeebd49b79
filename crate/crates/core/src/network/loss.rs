//! Training losses with their gradients with respect to the head outputs.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{GramSchmidt, Mat, Real};
use crate::cloud::NormalizationFrame;
use crate::geometry::{RigidTransform, Rotation, Vec3};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy from a logit, stable for large |z|. Returns the loss
/// and its derivative with respect to `z`.
pub fn bce_with_logits(z: f64, label: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - label)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub translation: f64,
    pub rotation: f64,
    pub chamfer: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            translation: 1.0,
            rotation: 1.0,
            chamfer: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseLoss {
    /// Mean squared error over the three translation components.
    pub translation: f64,
    /// Geodesic angle, radians.
    pub rotation: f64,
    pub chamfer: f64,
    pub total: f64,
}

/// Gradient of the total pose loss with respect to the predicted rotation
/// matrix and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseLossGrad {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

/// Geodesic angle between two rotation matrices, with its gradient with
/// respect to `pred` (zero where the angle is 0 or π).
fn geodesic_with_grad(pred: &Matrix3<f64>, target: &Matrix3<f64>) -> (f64, Matrix3<f64>) {
    let m = target.transpose() * pred;
    let w = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let s = 0.5 * w.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if w.norm() < 1e-12 {
        return (theta, Matrix3::zeros());
    }
    let wh = w / w.norm();
    let ds = 0.5 * Matrix3::new(0.0, -wh.z, wh.y, wh.z, 0.0, -wh.x, -wh.y, wh.x, 0.0);
    let gm = (ds * c - Matrix3::identity() * (0.5 * s)) / (s * s + c * c);
    (theta, target * gm)
}

fn nearest(p: &Vec3, cloud: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in cloud.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Chamfer distance and its gradient with respect to each point of `a`.
fn chamfer_with_grad(a: &[Vec3], b: &[Vec3]) -> (f64, Vec<Vec3>) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut grad = vec![Vec3::zeros(); a.len()];
    let mut ab = 0.0;
    for (i, p) in a.iter().enumerate() {
        let (j, d) = nearest(p, b);
        ab += d;
        grad[i] += (p - b[j]) / na;
    }
    let mut ba = 0.0;
    for q in b {
        let (i, d) = nearest(q, a);
        ba += d;
        grad[i] += (a[i] - q) / nb;
    }
    (0.5 * (ab / na + ba / nb), grad)
}

/// Pose loss for a predicted mean-centred increment against the target one.
///
/// `noised` is the object cloud fed to the network, `next` the cloud after
/// applying the target. Translations and the chamfer term are measured in
/// units of `length_scale` metres.
pub fn pose_loss_with_grad(
    pred: &RigidTransform,
    target: &RigidTransform,
    noised: &[Vec3],
    next: &[Vec3],
    weights: &LossWeights,
    length_scale: f64,
) -> (PoseLoss, PoseLossGrad) {
    let inv_l2 = 1.0 / (length_scale * length_scale);
    let dt = pred.translation - target.translation;
    let trans = dt.norm_squared() / 3.0 * inv_l2;
    let mut g_t = dt * (2.0 / 3.0 * inv_l2 * weights.translation);

    let (rot, g_rot) = geodesic_with_grad(pred.rotation.matrix(), target.rotation.matrix());
    let mut g_r = g_rot * weights.rotation;

    let mut cham = 0.0;
    if weights.chamfer != 0.0 && !noised.is_empty() && !next.is_empty() {
        let m = noised.iter().sum::<Vec3>() / noised.len() as f64;
        let r = pred.rotation.matrix();
        let moved: Vec<Vec3> = noised.iter().map(|x| r * (x - m) + m + pred.translation).collect();
        let (c, g) = chamfer_with_grad(&moved, next);
        cham = c * inv_l2;
        let k = weights.chamfer * inv_l2;
        for (x, gi) in noised.iter().zip(&g) {
            g_r += gi * (x - m).transpose() * k;
            g_t += gi * k;
        }
    }
    let total = weights.translation * trans + weights.rotation * rot + weights.chamfer * cham;
    (
        PoseLoss {
            translation: trans,
            rotation: rot,
            chamfer: cham,
            total,
        },
        PoseLossGrad {
            rotation: g_r,
            translation: g_t,
        },
    )
}

pub fn pose_loss(
    pred: &RigidTransform,
    target: &RigidTransform,
    noised: &[Vec3],
    next: &[Vec3],
    weights: &LossWeights,
    length_scale: f64,
) -> PoseLoss {
    pose_loss_with_grad(pred, target, noised, next, weights, length_scale).0
}

/// Decoded pose-head output together with what is needed to push loss
/// gradients back into the head activations.
pub struct HeadDecode {
    pub transform: RigidTransform,
    gs: GramSchmidt,
    extent: Vec3,
}

impl HeadDecode {
    /// Interprets raw head rows (1×3 normalised translation, 1×6 rotation)
    /// as a world-frame increment.
    pub fn new<T: Real>(translation: &Mat<T>, rotation6: &Mat<T>, frame: &NormalizationFrame) -> Self {
        let v = |i: usize| rotation6[[0, i]].f64();
        let gs = GramSchmidt::new(&Vec3::new(v(0), v(1), v(2)), &Vec3::new(v(3), v(4), v(5)));
        let rot = Rotation::from_matrix_unchecked(Matrix3::from_columns(&[
            gs.a_hat,
            gs.b_hat,
            gs.a_hat.cross(&gs.b_hat),
        ]));
        let tn = Vec3::new(translation[[0, 0]].f64(), translation[[0, 1]].f64(), translation[[0, 2]].f64());
        let extent = frame.displacement_to_world(&Vec3::new(1.0, 1.0, 1.0));
        HeadDecode {
            transform: RigidTransform::new(rot, tn.component_mul(&extent)),
            gs,
            extent,
        }
    }

    /// Gradient seeds for the translation and rotation head outputs.
    pub fn seeds<T: Real>(&self, grad: &PoseLossGrad, scale: f64) -> (Mat<T>, Mat<T>) {
        let gt = grad.translation.component_mul(&self.extent) * scale;
        let (ga, gb) = self.gs.backward(&grad.rotation);
        let t = Mat::from_shape_fn((1, 3), |(_, k)| T::of(gt[k]));
        let r = Mat::from_shape_fn((1, 6), |(_, k)| T::of(if k < 3 { ga[k] } else { gb[k - 3] } * scale));
        (t, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_uniform_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn translation_only_example() {
        let target = RigidTransform::identity();
        let pred = RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0));
        let l = pose_loss(&pred, &target, &[], &[], &LossWeights::default(), 1.0);
        assert!((l.translation - 0.01 / 3.0).abs() < 1e-15);
        assert_eq!(l.rotation, 0.0);
    }

    #[test]
    fn bce_examples() {
        let (l, g) = bce_with_logits(0.0, 1.0);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!((g + 0.5).abs() < 1e-15);
        assert!(bce_with_logits(800.0, 1.0).0.abs() < 1e-12);
        assert!((bce_with_logits(-800.0, 1.0).0 - 800.0).abs() < 1e-9);
    }

    #[test]
    fn geodesic_matches_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = sample_uniform_rotation(&mut rng);
            let b = sample_uniform_rotation(&mut rng);
            let (th, _) = geodesic_with_grad(a.matrix(), b.matrix());
            assert!((th - crate::geometry::geodesic_distance(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud: Vec<Vec3> = (0..12)
            .map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
            .collect();
        let target = RigidTransform::new(sample_uniform_rotation(&mut rng), Vec3::new(0.02, -0.01, 0.03));
        let m = cloud.iter().sum::<Vec3>() / 12.0;
        let next: Vec<Vec3> = cloud.iter().map(|x| target.rotation.matrix() * (x - m) + m + target.translation).collect();
        let frame = NormalizationFrame {
            centroid: Vec3::zeros(),
            scale: Vec3::new(2.0, 4.0, 5.0),
        };
        let raw_t = Mat::from_shape_vec((1, 3), vec![0.01, 0.02, -0.03]).unwrap();
        let raw_r = Mat::from_shape_vec((1, 6), vec![0.9, 0.2, -0.1, 0.1, 1.1, 0.3]).unwrap();
        let w = LossWeights::default();
        let eval = |rt: &Mat<f64>, rr: &Mat<f64>| {
            let h = HeadDecode::new(rt, rr, &frame);
            pose_loss(&h.transform, &target, &cloud, &next, &w, 0.1).total
        };
        let h = HeadDecode::new(&raw_t, &raw_r, &frame);
        let (_, g) = pose_loss_with_grad(&h.transform, &target, &cloud, &next, &w, 0.1);
        let (gt, gr) = h.seeds::<f64>(&g, 1.0);
        let eps = 1e-6;
        for k in 0..3 {
            let (mut p, mut q) = (raw_t.clone(), raw_t.clone());
            p[[0, k]] += eps;
            q[[0, k]] -= eps;
            let fd = (eval(&p, &raw_r) - eval(&q, &raw_r)) / (2.0 * eps);
            assert!((fd - gt[[0, k]]).abs() < 1e-5 * (1.0 + fd.abs()), "t{k}: {fd} vs {}", gt[[0, k]]);
        }
        for k in 0..6 {
            let (mut p, mut q) = (raw_r.clone(), raw_r.clone());
            p[[0, k]] += eps;
            q[[0, k]] -= eps;
            let fd = (eval(&raw_t, &p) - eval(&raw_t, &q)) / (2.0 * eps);
            assert!((fd - gr[[0, k]]).abs() < 1e-5 * (1.0 + fd.abs()), "r{k}: {fd} vs {}", gr[[0, k]]);
        }
    }
}
