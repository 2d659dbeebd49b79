//! Forward perturbation process: training pairs with single-interval
//! de-noising targets, biased timestep sampling and classifier examples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{crop_scene_with_box, Aabb, CropMode, CropSchedule, PointCloud, DEFAULT_CROP_MIN};
use crate::geometry::{
    apply_transform_mean_centered, gaussian_vec3, sample_uniform_rotation, slerp_interpolate, RigidTransform,
    Rotation, Vec3,
};
use crate::scenegen::Demonstration;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NoisingError {
    #[error("timestep sampler needs at least one step")]
    ZeroSteps,
    #[error("timestep decay must be positive and finite, got {0}")]
    BadDecay(f64),
}

/// Categorical distribution over `1..=steps` with `p(t) ∝ decay^(−t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepSampler {
    steps: usize,
    decay: f64,
    cumulative: Vec<f64>,
}

impl TimestepSampler {
    pub fn new(steps: usize, decay: f64) -> Result<Self, NoisingError> {
        if steps == 0 {
            return Err(NoisingError::ZeroSteps);
        }
        if !(decay > 0.0 && decay.is_finite()) {
            return Err(NoisingError::BadDecay(decay));
        }
        let weights: Vec<f64> = (1..=steps).map(|t| decay.powf(-(t as f64))).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(TimestepSampler {
            steps,
            decay,
            cumulative,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Probability of timestep `t` (1-based).
    pub fn probability(&self, t: usize) -> f64 {
        if t == 0 || t > self.steps {
            return 0.0;
        }
        let prev = if t == 1 { 0.0 } else { self.cumulative[t - 2] };
        self.cumulative[t - 1] - prev
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.steps - 1) + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisingConfig {
    /// Number of training timesteps.
    pub steps: usize,
    pub timestep_decay: f64,
    /// Per-axis growth of the scene box used for translation sampling.
    pub bbox_inflation: f64,
    pub crop_min: f64,
    pub crop_mode: CropMode,
    /// Classifier negatives closer than this to the positive are resampled.
    pub negative_min_translation: f64,
    pub negative_min_rotation_deg: f64,
    /// Share of classifier negatives drawn as small perturbations near the
    /// demonstration instead of from the full perturbation distribution.
    pub near_miss_fraction: f64,
    pub near_miss_max_translation: f64,
    pub near_miss_max_rotation_deg: f64,
}

impl Default for NoisingConfig {
    fn default() -> Self {
        NoisingConfig {
            steps: 5,
            timestep_decay: 1.5,
            bbox_inflation: 0.1,
            crop_min: DEFAULT_CROP_MIN,
            crop_mode: CropMode::Varying,
            negative_min_translation: 0.001,
            negative_min_rotation_deg: 0.5,
            near_miss_fraction: 0.5,
            near_miss_max_translation: 0.06,
            near_miss_max_rotation_deg: 40.0,
        }
    }
}

impl NoisingConfig {
    pub fn sampler(&self) -> Result<TimestepSampler, NoisingError> {
        TimestepSampler::new(self.steps, self.timestep_decay)
    }

    pub fn crop_schedule(&self, scene: &PointCloud) -> CropSchedule {
        CropSchedule::for_scene(scene, self.crop_min, self.crop_mode)
    }
}

/// Training example for the de-noiser.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedSample {
    pub noised_object_cloud: PointCloud,
    pub cropped_scene_cloud: PointCloud,
    pub crop_box: Aabb,
    /// 1-based timestep.
    pub timestep: usize,
    /// Single-interval step towards the demonstration (mean-centred).
    pub target: RigidTransform,
    /// Inverse of the whole noise applied at this timestep (mean-centred).
    pub full_inverse: RigidTransform,
    /// The sampled perturbation, i.e. the noise at timestep `T`.
    pub perturbation: RigidTransform,
    /// Object cloud one step closer to the demonstration.
    pub next_object_cloud: PointCloud,
    /// Clean cloud the sample was derived from.
    pub final_object_cloud: PointCloud,
}

/// Perturbation of a cloud, mean-centred: a Haar-random rotation about the
/// cloud's centroid and a translation carrying the centroid to a uniform
/// point of the inflated scene box.
pub fn sample_perturbation<R: Rng + ?Sized>(
    object: &PointCloud,
    scene: &PointCloud,
    inflation: f64,
    rng: &mut R,
) -> RigidTransform {
    let bx = scene.bounds().inflated(inflation);
    let target = Vec3::from_fn(|k, _| {
        if bx.max[k] > bx.min[k] {
            rng.random_range(bx.min[k]..=bx.max[k])
        } else {
            bx.min[k]
        }
    });
    let rotation = sample_uniform_rotation(rng);
    RigidTransform::new(rotation, target - object.centroid())
}

/// Interpolated state at timestep `t` (0 = clean) as a mean-centred transform.
fn state(interp: &[RigidTransform], t: usize) -> RigidTransform {
    if t == 0 {
        RigidTransform::identity()
    } else {
        interp[t - 1]
    }
}

/// Builds one training pair from a demonstration.
///
/// For symmetric objects the clean pose is first replaced by the symmetric
/// equivalent nearest to the noised one, which leaves the noised cloud
/// untouched but makes the target a function of what the network sees.
pub fn make_training_pair<R: Rng + ?Sized>(
    demo: &Demonstration,
    sampler: &TimestepSampler,
    cfg: &NoisingConfig,
    rng: &mut R,
) -> NoisedSample {
    let t = sampler.sample(rng);
    let perturbation = sample_perturbation(&demo.final_object_cloud, &demo.scene_cloud, cfg.bbox_inflation, rng);
    match nearest_symmetric_equivalent(demo, &perturbation) {
        Some((clean, p)) => pair_from(&clean, &demo.scene_cloud, &p, t, sampler.steps(), cfg),
        None => pair_from(&demo.final_object_cloud, &demo.scene_cloud, &perturbation, t, sampler.steps(), cfg),
    }
}

/// Re-expresses `perturbation` against the symmetric copy of the clean
/// cloud that minimises its rotation angle. Returns that copy and the
/// adjusted perturbation, or `None` for asymmetric objects.
pub fn nearest_symmetric_equivalent(
    demo: &Demonstration,
    perturbation: &RigidTransform,
) -> Option<(PointCloud, RigidTransform)> {
    let sym = &demo.symmetry;
    if sym.is_trivial() {
        return None;
    }
    let rf = demo.placement.rotation;
    let rp = perturbation.rotation.matrix();
    let axis = sym.axis.map(|a| rf.apply(&a).normalize());
    // candidate inverse symmetries S^-1 = G_w * Rot(axis, beta)
    let mut best: Option<(f64, Rotation)> = None;
    for g in &sym.discrete {
        let gw = rf.compose(&g.inverse()).compose(&rf.inverse());
        let s_inv = match axis {
            Some(u) => {
                let k = u.cross_matrix();
                let n = rp * gw.matrix();
                let beta = (k * n).trace().atan2(-(k * k * n).trace());
                gw.compose(&Rotation::from_axis_angle(&u, beta))
            }
            None => gw,
        };
        let trace = (rp * s_inv.matrix()).trace();
        if best.as_ref().is_none_or(|(t, _)| trace > *t) {
            best = Some((trace, s_inv));
        }
    }
    let (_, s_inv) = best?;
    let s = s_inv.inverse();
    let pivot = demo.placement.translation;
    let c = demo.final_object_cloud.centroid();
    let moved = RigidTransform::from_rotation(s).about_point(&pivot);
    let clean = demo.final_object_cloud.transformed(&moved);
    let c2 = clean.centroid();
    let p = RigidTransform::new(perturbation.rotation.compose(&s_inv), perturbation.translation + c - c2);
    Some((clean, p))
}

/// Deterministic core of [`make_training_pair`] for a given perturbation
/// and timestep (no symmetry handling).
pub fn training_pair_at(
    demo: &Demonstration,
    perturbation: &RigidTransform,
    t: usize,
    steps: usize,
    cfg: &NoisingConfig,
) -> NoisedSample {
    pair_from(&demo.final_object_cloud, &demo.scene_cloud, perturbation, t, steps, cfg)
}

fn pair_from(
    clean: &PointCloud,
    scene: &PointCloud,
    perturbation: &RigidTransform,
    t: usize,
    steps: usize,
    cfg: &NoisingConfig,
) -> NoisedSample {
    let interp = slerp_interpolate(perturbation, steps).expect("steps >= 1");
    let t = t.clamp(1, steps);
    let now = state(&interp, t);
    let prev = state(&interp, t - 1);
    let noised = apply_transform_mean_centered(&now, clean);
    let next = apply_transform_mean_centered(&prev, clean);
    let target = RigidTransform::new(
        prev.rotation.compose(&now.rotation.inverse()),
        prev.translation - now.translation,
    );
    let full_inverse = RigidTransform::new(now.rotation.inverse(), -now.translation);
    let sched = cfg.crop_schedule(scene);
    let (crop, crop_box) = crop_scene_with_box(&noised, scene, t, steps, &sched);
    NoisedSample {
        noised_object_cloud: noised,
        cropped_scene_cloud: crop,
        crop_box,
        timestep: t,
        target,
        full_inverse,
        perturbation: *perturbation,
        next_object_cloud: next,
        final_object_cloud: clean.clone(),
    }
}

/// Labelled example for the success classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierPair {
    pub object_cloud: PointCloud,
    pub scene_cloud: PointCloud,
    /// 1 = successful placement.
    pub label: u8,
    /// Mean-centred perturbation applied to the demonstration (identity for positives).
    pub perturbation: RigidTransform,
}

/// Positive (the demonstration itself) or negative (a perturbed copy) with
/// equal probability. The scene is left uncropped.
pub fn make_classifier_pair<R: Rng + ?Sized>(demo: &Demonstration, cfg: &NoisingConfig, rng: &mut R) -> ClassifierPair {
    if rng.random::<bool>() {
        return ClassifierPair {
            object_cloud: demo.final_object_cloud.clone(),
            scene_cloud: demo.scene_cloud.clone(),
            label: 1,
            perturbation: RigidTransform::identity(),
        };
    }
    let perturbation = loop {
        let p = if rng.random::<f64>() < cfg.near_miss_fraction {
            near_miss(cfg, rng)
        } else {
            sample_perturbation(&demo.final_object_cloud, &demo.scene_cloud, cfg.bbox_inflation, rng)
        };
        if !too_close(&p, cfg) {
            break p;
        }
    };
    ClassifierPair {
        object_cloud: apply_transform_mean_centered(&perturbation, &demo.final_object_cloud),
        scene_cloud: demo.scene_cloud.clone(),
        label: 0,
        perturbation,
    }
}

fn near_miss<R: Rng + ?Sized>(cfg: &NoisingConfig, rng: &mut R) -> RigidTransform {
    let axis = gaussian_vec3(rng);
    let angle = rng.random::<f64>() * cfg.near_miss_max_rotation_deg.to_radians();
    let dir = gaussian_vec3(rng).normalize();
    let mag = rng.random::<f64>() * cfg.near_miss_max_translation;
    RigidTransform::new(Rotation::from_axis_angle(&axis, angle), dir * mag)
}

/// True when a negative is indistinguishable from the positive.
pub fn too_close(p: &RigidTransform, cfg: &NoisingConfig) -> bool {
    p.translation.norm() < cfg.negative_min_translation
        && p.rotation.angle() < cfg.negative_min_rotation_deg.to_radians()
}
