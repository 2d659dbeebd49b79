//! Test-time iterative pose refinement with multiple parallel runs.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{crop_scene_with_box, Aabb, CropSchedule, PointCloud};
use crate::geometry::{geodesic_distance, rotation_grid, sample_annealed_noise, AnnealedNoise, RigidTransform, Rotation, Vec3};
use crate::network::{prepare_pair, resample, Model, NetworkError};
use crate::noising::NoisingConfig;
use crate::rng::stream_rng;

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid refinement config: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("non-finite pose in run {run} at iteration {iteration}")]
    NonFinite { run: usize, iteration: usize },
}

/// Maps refinement iteration `i ∈ [1, I]` to a training timestep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepSchedule {
    pub iterations: usize,
    pub steps: usize,
    pub bias: u32,
    /// `counts[t - 1]` = number of iterations using timestep `t`.
    pub counts: Vec<usize>,
    /// Runs of 1s, then 2s, ..., then `steps`s; length `iterations`.
    pub array: Vec<usize>,
}

impl TimestepSchedule {
    /// Timestep used at iteration `i` (1-based; `i = I` runs first).
    pub fn t_at(&self, i: usize) -> usize {
        self.array[i.clamp(1, self.iterations) - 1]
    }
}

/// Exponentially biased schedule: weights `A^T, ..., A^1` for `t = 1..T`,
/// scaled to `I` and rounded up twice, rounding surplus then removed one
/// unit at a time from the largest bucket (highest `t` among ties).
pub fn build_timestep_schedule(iterations: usize, steps: usize, bias: u32) -> Result<TimestepSchedule, RefineError> {
    if steps == 0 || iterations < steps {
        return Err(RefineError::Schedule(format!(
            "need iterations ({iterations}) >= steps ({steps}) >= 1"
        )));
    }
    if bias == 0 {
        return Err(RefineError::Schedule("bias must be at least 1".into()));
    }
    let a = bias as f64;
    let weights: Vec<f64> = (1..=steps).map(|t| a.powi((steps - t + 1) as i32)).collect();
    let wsum: f64 = weights.iter().sum();
    let first: Vec<usize> = weights
        .iter()
        .map(|w| ((w * iterations as f64 / wsum) - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let fsum: usize = first.iter().sum();
    let mut counts: Vec<usize> = first
        .iter()
        .map(|&c| ((c * iterations) as f64 / fsum as f64 - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let mut surplus = counts.iter().sum::<usize>() - iterations.min(counts.iter().sum());
    while surplus > 0 {
        let max = *counts.iter().max().expect("steps >= 1");
        if max <= 1 {
            return Err(RefineError::Schedule("cannot keep every timestep at least once".into()));
        }
        let k = counts.iter().rposition(|&c| c == max).expect("max exists");
        counts[k] -= 1;
        surplus -= 1;
    }
    if counts.iter().sum::<usize>() != iterations {
        return Err(RefineError::Schedule("counts do not sum to the iteration count".into()));
    }
    let array = counts
        .iter()
        .enumerate()
        .flat_map(|(t, &c)| std::iter::repeat_n(t + 1, c))
        .collect();
    Ok(TimestepSchedule {
        iterations,
        steps,
        bias,
        counts,
        array,
    })
}

/// Predicts a mean-centred increment moving `object` (world points) one
/// de-noising step toward a placement.
pub trait Denoiser: Sync {
    fn predict(&self, object: &[Vec3], scene_crop: &PointCloud, t: usize) -> Result<RigidTransform, RefineError>;
}

/// Success probability of a placed object against the full scene.
pub trait Scorer: Sync {
    fn score(&self, object: &[Vec3], scene: &PointCloud) -> Result<f64, RefineError>;
}

impl Denoiser for Model<f32> {
    fn predict(&self, object: &[Vec3], scene_crop: &PointCloud, t: usize) -> Result<RigidTransform, RefineError> {
        let p = prepare_pair::<f32>(object, scene_crop, self.config());
        let pred = self.forward_pose(&p.object, &p.scene, t)?;
        Ok(RigidTransform::new(pred.rotation, pred.world_translation(&p.frame)))
    }
}

impl Scorer for Model<f32> {
    fn score(&self, object: &[Vec3], scene: &PointCloud) -> Result<f64, RefineError> {
        let p = prepare_pair::<f32>(object, scene, self.config());
        Ok(self.forward_score(&p.object, &p.scene)?)
    }
}

/// Never moves the object.
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn predict(&self, _: &[Vec3], _: &PointCloud, _: usize) -> Result<RigidTransform, RefineError> {
        Ok(RigidTransform::identity())
    }
}

/// Analytic de-noiser with access to the ground truth: it treats the current
/// offset from the nearest solution as the interpolated perturbation state
/// at timestep `t` and returns exactly one interval of it.
pub struct OracleDenoiser {
    /// Canonical object points in the same order as the clouds passed to
    /// `predict` (the resampled canonical cloud used by [`refine`]).
    canonical: Vec<Vec3>,
    canonical_centroid: Vec3,
    solutions: Vec<RigidTransform>,
    symmetries: Vec<Rotation>,
    /// Metres per radian when ranking solutions by distance.
    rotation_weight: f64,
}

impl OracleDenoiser {
    pub fn new(canonical: &[Vec3], solutions: Vec<RigidTransform>, symmetries: Vec<Rotation>) -> Self {
        let c = canonical.iter().sum::<Vec3>() / canonical.len().max(1) as f64;
        OracleDenoiser {
            canonical: canonical.to_vec(),
            canonical_centroid: c,
            solutions,
            symmetries: if symmetries.is_empty() {
                vec![Rotation::identity()]
            } else {
                symmetries
            },
            rotation_weight: 0.1,
        }
    }

    /// Oracle for a generated instance; `token_count` must match the value
    /// given to [`refine`].
    pub fn for_instance(instance: &crate::scenegen::SceneInstance, token_count: usize) -> Self {
        let reduced = resample(instance.object_cloud_canonical.points(), token_count);
        OracleDenoiser::new(
            &reduced,
            instance.solutions.iter().map(|s| s.transform).collect(),
            instance.object_symmetries(),
        )
    }

    /// Current pose recovered from point correspondences with the canonical cloud.
    fn current_pose(&self, object: &[Vec3]) -> RigidTransform {
        let c = object.iter().sum::<Vec3>() / object.len() as f64;
        let mut h = nalgebra::Matrix3::zeros();
        for (p, q) in self.canonical.iter().zip(object) {
            h += (q - c) * (p - self.canonical_centroid).transpose();
        }
        let svd = h.svd(true, true);
        let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
        let mut d = nalgebra::Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let r = Rotation::from_matrix_unchecked(u * d * vt);
        RigidTransform::new(r, c - r.apply(&self.canonical_centroid))
    }

    /// Remaining mean-centred perturbation from the nearest solution
    /// (over symmetric equivalents) to `pose`.
    fn remaining(&self, pose: &RigidTransform) -> RigidTransform {
        let c_now = pose.apply_point(&self.canonical_centroid);
        let mut best = (f64::INFINITY, RigidTransform::identity());
        for s in &self.solutions {
            for g in &self.symmetries {
                let r_sol = s.rotation.compose(g);
                let c_sol = r_sol.apply(&self.canonical_centroid) + s.translation;
                let rot = pose.rotation.compose(&r_sol.inverse());
                let d = (c_now - c_sol).norm() + self.rotation_weight * rot.angle();
                if d < best.0 {
                    best = (d, RigidTransform::new(rot, c_now - c_sol));
                }
            }
        }
        best.1
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, object: &[Vec3], _: &PointCloud, t: usize) -> Result<RigidTransform, RefineError> {
        let pose = self.current_pose(object);
        let q = self.remaining(&pose);
        let t = t.max(1) as f64;
        Ok(q.inverse_mean_centered().scaled(1.0 / t))
    }
}

trait MeanCentredInverse {
    fn inverse_mean_centered(&self) -> RigidTransform;
}

impl MeanCentredInverse for RigidTransform {
    /// Inverse under the mean-centred convention: undo the translation, then
    /// the rotation about the (restored) centroid.
    fn inverse_mean_centered(&self) -> RigidTransform {
        RigidTransform::new(self.rotation.inverse(), -self.translation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    ClassifierArgmax,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Refinement iterations I.
    pub iterations: usize,
    /// Parallel runs K.
    pub runs: usize,
    /// Schedule bias A.
    pub schedule_bias: u32,
    pub noise_enabled: bool,
    pub noise: AnnealedNoise,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 50,
            runs: 32,
            schedule_bias: 10,
            noise_enabled: true,
            noise: AnnealedNoise::default(),
            selection: Selection::ClassifierArgmax,
            seed: 0,
        }
    }
}

/// One recorded refinement state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Iteration index after which this pose holds (`I` + 1 for the initial guess).
    pub iteration: usize,
    pub timestep: usize,
    pub pose: RigidTransform,
    pub crop_box: Option<Aabb>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRun {
    pub trajectory: Vec<TrajectoryStep>,
    pub final_pose: RigidTransform,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOutput {
    pub best: RigidTransform,
    pub best_index: usize,
    pub runs: Vec<RefinementRun>,
}

/// `K` initial poses: rotations from the deterministic grid (jittered
/// copies once the grid is exhausted), centroids uniform in the scene box.
pub fn init_guesses<R: Rng + ?Sized>(canonical: &PointCloud, scene: &PointCloud, k: usize, rng: &mut R) -> Vec<RigidTransform> {
    let grid = rotation_grid(k.min(4096));
    let bx = scene.bounds();
    let c = canonical.centroid();
    (0..k)
        .map(|i| {
            let mut r = grid[i % grid.len()];
            if i >= grid.len() {
                let axis = Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5);
                r = Rotation::from_axis_angle(&axis, 0.1 * rng.random::<f64>()).compose(&r);
            }
            let p = Vec3::from_fn(|a, _| {
                if bx.max[a] > bx.min[a] {
                    rng.random_range(bx.min[a]..=bx.max[a])
                } else {
                    bx.min[a]
                }
            });
            RigidTransform::new(r, p - r.apply(&c))
        })
        .collect()
}

/// Runs the refinement loop from each pose in `inits`.
#[allow(clippy::too_many_arguments)]
pub fn refine_from(
    canonical: &PointCloud,
    scene: &PointCloud,
    inits: &[RigidTransform],
    denoiser: &dyn Denoiser,
    scorer: Option<&dyn Scorer>,
    token_count: usize,
    cfg: &RefineConfig,
    noising: &NoisingConfig,
) -> Result<RefineOutput, RefineError> {
    if inits.is_empty() {
        return Err(RefineError::Config("need at least one run".into()));
    }
    let sched = build_timestep_schedule(cfg.iterations, noising.steps, cfg.schedule_bias)?;
    let crop: CropSchedule = noising.crop_schedule(scene);
    let reduced = resample(canonical.points(), token_count);
    let runs: Vec<Result<RefinementRun, RefineError>> = inits
        .par_iter()
        .enumerate()
        .map(|(k, init)| {
            let mut rng = stream_rng(cfg.seed, 1 + k as u64);
            let mut pose = *init;
            let mut traj = Vec::with_capacity(cfg.iterations + 1);
            traj.push(TrajectoryStep {
                iteration: cfg.iterations + 1,
                timestep: sched.t_at(cfg.iterations),
                pose,
                crop_box: None,
            });
            for i in (1..=cfg.iterations).rev() {
                let t = sched.t_at(i);
                let pts: Vec<Vec3> = reduced.iter().map(|p| pose.apply_point(p)).collect();
                let cloud = PointCloud::new(pts, crate::cloud::CloudRole::Object).map_err(|_| RefineError::NonFinite {
                    run: k,
                    iteration: i,
                })?;
                let (cropped, bx) = crop_scene_with_box(&cloud, scene, t, noising.steps, &crop);
                let step = denoiser.predict(cloud.points(), &cropped, t)?;
                let centre = cloud.centroid();
                let mut world = step.about_point(&centre);
                if cfg.noise_enabled {
                    let noise = sample_annealed_noise(i, cfg.iterations, &cfg.noise, &mut rng)
                        .map_err(|e| RefineError::Config(e.to_string()))?;
                    world = noise.about_point(&(centre + step.translation)).compose(&world);
                }
                pose = world.compose(&pose);
                if !pose.is_finite() {
                    return Err(RefineError::NonFinite { run: k, iteration: i });
                }
                traj.push(TrajectoryStep {
                    iteration: i,
                    timestep: t,
                    pose,
                    crop_box: Some(bx),
                });
            }
            let score = match scorer {
                Some(s) => {
                    let placed: Vec<Vec3> = reduced.iter().map(|p| pose.apply_point(p)).collect();
                    Some(s.score(&placed, scene)?)
                }
                None => None,
            };
            Ok(RefinementRun {
                trajectory: traj,
                final_pose: pose,
                score,
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let best_index = select_output(&runs, cfg.selection, &mut rng);
    Ok(RefineOutput {
        best: runs[best_index].final_pose,
        best_index,
        runs,
    })
}

/// Full refinement: grid initialisation followed by [`refine_from`].
pub fn refine(
    canonical: &PointCloud,
    scene: &PointCloud,
    denoiser: &dyn Denoiser,
    scorer: Option<&dyn Scorer>,
    token_count: usize,
    cfg: &RefineConfig,
    noising: &NoisingConfig,
) -> Result<RefineOutput, RefineError> {
    if cfg.runs == 0 {
        return Err(RefineError::Config("need at least one run".into()));
    }
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    let inits = init_guesses(canonical, scene, cfg.runs, &mut rng);
    refine_from(canonical, scene, &inits, denoiser, scorer, token_count, cfg, noising)
}

/// Index of the chosen run: highest score (first on ties; runs without a
/// score rank lowest), or uniform.
pub fn select_output<R: Rng + ?Sized>(runs: &[RefinementRun], mode: Selection, rng: &mut R) -> usize {
    match mode {
        Selection::Uniform => rng.random_range(0..runs.len()),
        Selection::ClassifierArgmax => {
            let mut best = 0;
            for (i, r) in runs.iter().enumerate() {
                if r.score.unwrap_or(f64::NEG_INFINITY) > runs[best].score.unwrap_or(f64::NEG_INFINITY) {
                    best = i;
                }
            }
            best
        }
    }
}

/// Rotation and centroid distance between two poses of the same object.
pub fn pose_distance(a: &RigidTransform, b: &RigidTransform, centroid: &Vec3) -> (f64, f64) {
    (
        (a.apply_point(centroid) - b.apply_point(centroid)).norm(),
        geodesic_distance(&a.rotation, &b.rotation),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudRole;

    #[test]
    fn schedule_examples() {
        let s = build_timestep_schedule(50, 5, 1).unwrap();
        assert_eq!(s.counts, vec![10; 5]);
        let s = build_timestep_schedule(50, 5, 10).unwrap();
        assert!(s.counts[0] > s.counts[4]);
        assert_eq!(s.counts.iter().sum::<usize>(), 50);
        assert_eq!(s.t_at(50), 5);
        assert_eq!(s.t_at(1), 1);
        let s = build_timestep_schedule(5, 5, 1).unwrap();
        assert_eq!(s.array, vec![1, 2, 3, 4, 5]);
        assert!(build_timestep_schedule(4, 5, 1).is_err());
        assert!(build_timestep_schedule(10, 10, 2).is_ok());
    }

    #[test]
    fn selection_rules() {
        let run = |s: f64| RefinementRun {
            trajectory: vec![],
            final_pose: RigidTransform::identity(),
            score: Some(s),
        };
        let runs = vec![run(0.1), run(0.9), run(0.9)];
        let mut rng = stream_rng(0, 0);
        assert_eq!(select_output(&runs, Selection::ClassifierArgmax, &mut rng), 1);
        assert_eq!(select_output(&runs[..1], Selection::Uniform, &mut rng), 0);
        let four = vec![run(0.0); 4];
        let mut hits = [0usize; 4];
        for _ in 0..10_000 {
            hits[select_output(&four, Selection::Uniform, &mut rng)] += 1;
        }
        assert!(hits.iter().all(|&h| (h as f64 / 10_000.0 - 0.25).abs() < 0.02));
    }

    fn toy_clouds() -> (PointCloud, PointCloud) {
        let obj: Vec<Vec3> = (0..30)
            .map(|i| Vec3::new((i % 3) as f64 * 0.01, (i % 5) as f64 * 0.02, (i % 7) as f64 * 0.005))
            .collect();
        let scene: Vec<Vec3> = (0..200).map(|i| Vec3::new((i % 10) as f64 * 0.05, (i / 10) as f64 * 0.03, 0.0)).collect();
        (
            PointCloud::new(obj, CloudRole::Object).unwrap(),
            PointCloud::new(scene, CloudRole::Scene).unwrap(),
        )
    }

    #[test]
    fn init_guesses_are_distinct_and_inside() {
        let (obj, scene) = toy_clouds();
        let mut rng = stream_rng(1, 0);
        let one = init_guesses(&obj, &scene, 1, &mut rng);
        assert!(one[0].rotation.angle() < 1e-12);
        let poses = init_guesses(&obj, &scene, 32, &mut rng);
        let bx = scene.bounds();
        for (i, a) in poses.iter().enumerate() {
            assert!(bx.contains(&a.apply_point(&obj.centroid())));
            for b in &poses[..i] {
                assert!(geodesic_distance(&a.rotation, &b.rotation) > 0.0);
            }
        }
    }

    #[test]
    fn identity_model_without_noise_is_a_no_op() {
        let (obj, scene) = toy_clouds();
        let cfg = RefineConfig {
            iterations: 10,
            runs: 3,
            noise_enabled: false,
            ..RefineConfig::default()
        };
        let out = refine(&obj, &scene, &IdentityDenoiser, None, 30, &cfg, &NoisingConfig::default()).unwrap();
        for r in &out.runs {
            assert_eq!(r.trajectory.len(), 11);
            assert_eq!(r.final_pose, r.trajectory[0].pose);
        }
    }

    #[test]
    fn oracle_reaches_a_solution() {
        let (obj, scene) = toy_clouds();
        let sol = RigidTransform::new(Rotation::about_z(0.7), Vec3::new(0.2, 0.1, 0.0));
        let oracle = OracleDenoiser::new(obj.points(), vec![sol], vec![Rotation::identity()]);
        let cfg = RefineConfig {
            iterations: 20,
            runs: 4,
            noise_enabled: false,
            ..RefineConfig::default()
        };
        let out = refine(&obj, &scene, &oracle, None, 30, &cfg, &NoisingConfig::default()).unwrap();
        for r in &out.runs {
            let (dt, dr) = pose_distance(&r.final_pose, &sol, &obj.centroid());
            assert!(dt < 1e-9 && dr < 1e-6, "{dt} {dr}");
        }
        let again = refine(&obj, &scene, &oracle, None, 30, &cfg, &NoisingConfig::default()).unwrap();
        assert_eq!(out, again);
    }
}
