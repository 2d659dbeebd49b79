//! Success predicates and coverage metrics against ground-truth solution sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{geodesic_distance, RigidTransform, Rotation, Vec3};
use crate::network::Model;
use crate::noising::NoisingConfig;
use crate::refine::{refine, Denoiser, IdentityDenoiser, OracleDenoiser, RefineConfig, RefineError, Scorer, Selection};
use crate::rng::stream_rng;
use crate::scenegen::{generate, placement_clearance, ObjectSpec, SceneConfig, SceneError, SceneInstance, Site, Solution, TaskKind};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error("invalid evaluation config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchThresholds {
    /// Centroid displacement, metres.
    pub translation: f64,
    pub rotation_deg: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        MatchThresholds {
            translation: 0.035,
            rotation_deg: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub solution: usize,
    pub translation_error: f64,
    /// Radians.
    pub rotation_error: f64,
}

/// Rotation about the line through `point` along `dir` that best aligns
/// `pred` with `target_rot` (closed form for the trace maximiser).
fn quotient_about_axis(pred: &RigidTransform, target_rot: &Rotation, point: &Vec3, dir: &Vec3) -> RigidTransform {
    let u = dir.normalize();
    let k = u.cross_matrix();
    let n = pred.rotation.matrix() * target_rot.matrix().transpose();
    let a = (k * n).trace();
    let b = (k * k * n).trace();
    let alpha = a.atan2(-b);
    let spin = RigidTransform::from_rotation(Rotation::from_axis_angle(&u, alpha)).about_point(point);
    spin.compose(pred)
}

/// Translation and rotation error of `pred` against one solution, minimised
/// over the object's symmetry group and the solution's continuous symmetry.
pub fn solution_error(pred: &RigidTransform, sol: &Solution, symmetries: &[Rotation], centroid: &Vec3) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::INFINITY);
    let identity = [Rotation::identity()];
    let group = if symmetries.is_empty() { &identity[..] } else { symmetries };
    for g in group {
        let target = RigidTransform::new(sol.transform.rotation.compose(g), sol.transform.translation);
        let p = match &sol.symmetry {
            Some(axis) => quotient_about_axis(pred, &target.rotation, &axis.point, &axis.direction),
            None => *pred,
        };
        let dt = (p.apply_point(centroid) - target.apply_point(centroid)).norm();
        let dr = geodesic_distance(&p.rotation, &target.rotation);
        if dt / 0.035 + dr < best.0 / 0.035 + best.1 {
            best = (dt, dr);
        }
    }
    best
}

fn within(err: (f64, f64), th: &MatchThresholds) -> bool {
    err.0 <= th.translation && err.1 <= th.rotation_deg.to_radians()
}

/// Nearest solution within both thresholds, if any.
pub fn match_solution(
    pred: &RigidTransform,
    solutions: &[Solution],
    symmetries: &[Rotation],
    centroid: &Vec3,
    th: &MatchThresholds,
) -> Option<Match> {
    let mut best: Option<(f64, Match)> = None;
    for (i, s) in solutions.iter().enumerate() {
        let e = solution_error(pred, s, symmetries, centroid);
        if !within(e, th) {
            continue;
        }
        let key = e.0 / th.translation + e.1 / th.rotation_deg.to_radians();
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((
                key,
                Match {
                    solution: i,
                    translation_error: e.0,
                    rotation_error: e.1,
                },
            ));
        }
    }
    best.map(|(_, m)| m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// `None` when there are no predictions.
    pub precision: Option<f64>,
    pub recall: f64,
    /// Number of solutions matched by at least one prediction.
    pub detected: usize,
}

/// Precision (predictions matching any solution) and recall (solutions
/// matched by any prediction).
pub fn coverage(preds: &[RigidTransform], instance: &SceneInstance, th: &MatchThresholds) -> Coverage {
    let c = instance.object_cloud_canonical.centroid();
    let sym = instance.object_symmetries();
    let hits: Vec<Vec<bool>> = preds
        .iter()
        .map(|p| {
            instance
                .solutions
                .iter()
                .map(|s| within(solution_error(p, s, &sym, &c), th))
                .collect()
        })
        .collect();
    let good = hits.iter().filter(|row| row.iter().any(|&h| h)).count();
    let detected = (0..instance.solutions.len()).filter(|&j| hits.iter().any(|row| row[j])).count();
    Coverage {
        precision: (!preds.is_empty()).then(|| good as f64 / preds.len() as f64),
        recall: detected as f64 / instance.solutions.len().max(1) as f64,
        detected,
    }
}

/// Tolerances of the geometric success predicates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessConfig {
    /// Allowed interpenetration with the scene, metres.
    pub max_penetration: f64,
    /// Book axes versus the cubby axes, degrees.
    pub book_axis_deg: f64,
    /// Can axis versus the support normal, degrees.
    pub can_upright_deg: f64,
    /// Largest gap between a can base and its support, metres.
    pub support_gap: f64,
    pub clearance_samples: usize,
}

impl Default for SuccessConfig {
    fn default() -> Self {
        SuccessConfig {
            max_penetration: 0.002,
            book_axis_deg: 15.0,
            can_upright_deg: 10.0,
            support_gap: 0.01,
            clearance_samples: 600,
        }
    }
}

/// Task-specific geometric check of a predicted placement.
pub fn geometric_success(pred: &RigidTransform, instance: &SceneInstance, cfg: &SuccessConfig) -> bool {
    if !pred.is_finite() {
        return false;
    }
    let placed_ok = match &instance.object {
        ObjectSpec::Book { .. } => book_ok(pred, instance, cfg),
        ObjectSpec::Can { height, .. } => can_ok(pred, instance, *height, cfg),
        ObjectSpec::Mug {
            aperture_center,
            aperture_half,
            ..
        } => mug_ok(pred, instance, aperture_center, aperture_half),
    };
    placed_ok
        && placement_clearance(
            &instance.scene_shape,
            &instance.object_shape,
            pred,
            cfg.clearance_samples,
            instance.seed ^ 0xc1ea,
        ) >= -cfg.max_penetration
}

fn book_ok(pred: &RigidTransform, instance: &SceneInstance, cfg: &SuccessConfig) -> bool {
    let cos = cfg.book_axis_deg.to_radians().cos();
    instance.sites.iter().any(|site| {
        let Site::Slot { frame, half } = site else { return false };
        let local = frame.inverse().compose(pred);
        let c = local.translation;
        let inside = (0..3).all(|k| c[k].abs() <= half[k]);
        let m = local.rotation.matrix();
        // depth along the insertion axis, height along the cubby's vertical
        inside && m[(1, 1)].abs() >= cos && m[(2, 2)].abs() >= cos
    })
}

fn can_ok(pred: &RigidTransform, instance: &SceneInstance, height: f64, cfg: &SuccessConfig) -> bool {
    let mut axis = pred.rotation.apply(&Vec3::z());
    if axis.z < 0.0 {
        axis = -axis;
    }
    if axis.z < cfg.can_upright_deg.to_radians().cos() {
        return false;
    }
    let base = pred.translation - axis * (0.5 * height);
    instance.sites.iter().any(|site| match site {
        Site::StackTop { center, up, radius } => {
            let d = base - center;
            let h = d.dot(up);
            (d - up * h).norm() <= *radius && h >= -cfg.max_penetration && h <= cfg.support_gap
        }
        Site::FreeRegion { frame, half } => {
            let q = frame.inverse().apply_point(&base);
            q.x.abs() <= half[0] && q.y.abs() <= half[1] && q.z >= -cfg.max_penetration && q.z <= cfg.support_gap
        }
        _ => false,
    })
}

fn mug_ok(pred: &RigidTransform, instance: &SceneInstance, aperture: &Vec3, half: &[f64; 2]) -> bool {
    let inv = pred.inverse();
    instance.sites.iter().any(|site| {
        let Site::Peg {
            base, direction, length, ..
        } = site
        else {
            return false;
        };
        let b = inv.apply_point(base);
        let d = inv.rotation.apply(&direction.normalize());
        if d.x.abs() < 1e-6 {
            return false;
        }
        let s = (aperture.x - b.x) / d.x;
        let q = b + d * s;
        (0.0..=*length).contains(&s) && (q.y - aperture.y).abs() <= half[0] && (q.z - aperture.z).abs() <= half[1]
    })
}

/// Where the de-noiser comes from in a benchmark.
pub enum DenoiserSource<'a> {
    Model(&'a Model<f32>),
    /// Ground-truth oracle built per instance.
    Oracle,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub task: TaskKind,
    pub trials: usize,
    /// Instance seeds are `seed, seed + 1, ...`; keep them apart from training seeds.
    pub seed: u64,
    pub scene: SceneConfig,
    pub noising: NoisingConfig,
    pub refine: RefineConfig,
    pub thresholds: MatchThresholds,
    pub success: SuccessConfig,
    /// Run counts at which coverage is reported (prefixes of the runs).
    pub k_values: Vec<usize>,
    /// Object token count (the model's, or the oracle's when there is no model).
    pub token_count: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            task: TaskKind::BookShelf,
            trials: 100,
            seed: 1_000_000,
            scene: SceneConfig::default(),
            noising: NoisingConfig::default(),
            refine: RefineConfig::default(),
            thresholds: MatchThresholds::default(),
            success: SuccessConfig::default(),
            k_values: vec![2, 8, 32, 128],
            token_count: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub precision: Option<f64>,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub instance_seed: u64,
    pub solutions: usize,
    pub predictions: Vec<RigidTransform>,
    pub scores: Option<Vec<f64>>,
    /// Matched solution per prediction.
    pub matches: Vec<Option<Match>>,
    /// Geometric success per prediction.
    pub run_success: Vec<bool>,
    /// Run chosen by the configured selection.
    pub selected: usize,
    /// Run chosen uniformly at random.
    pub uniform_selected: usize,
    /// Run closest to any ground-truth solution.
    pub nearest_selected: usize,
    pub success: bool,
    pub coverage: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub trials: usize,
    pub runs: usize,
    /// Success of the configured selection.
    pub success_rate: f64,
    pub uniform_success_rate: f64,
    pub nearest_success_rate: f64,
    pub curve: Vec<CurvePoint>,
    pub records: Vec<TrialRecord>,
}

impl EvalReport {
    /// Coverage curve as CSV (`k,precision,recall`).
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("k,precision,recall\n");
        for p in &self.curve {
            let prec = p.precision.map(|v| format!("{v:?}")).unwrap_or_default();
            s.push_str(&format!("{},{},{:?}\n", p.k, prec, p.recall));
        }
        s
    }
}

/// Averages per-trial coverage at each K (precision over trials where defined).
pub fn aggregate_curve(records: &[TrialRecord]) -> Vec<CurvePoint> {
    let Some(first) = records.first() else { return Vec::new() };
    first
        .coverage
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let precs: Vec<f64> = records.iter().filter_map(|r| r.coverage[i].precision).collect();
            CurvePoint {
                k: p.k,
                precision: (!precs.is_empty()).then(|| precs.iter().sum::<f64>() / precs.len() as f64),
                recall: records.iter().map(|r| r.coverage[i].recall).sum::<f64>() / records.len() as f64,
            }
        })
        .collect()
}

/// Runs refinement on fresh instances and scores the outcome.
pub fn run_benchmark(
    denoiser: DenoiserSource<'_>,
    scorer: Option<&dyn Scorer>,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if cfg.refine.runs == 0 {
        return Err(EvalError::Config("need at least one run".into()));
    }
    let token_count = match &denoiser {
        DenoiserSource::Model(m) => m.config().object_tokens,
        _ => cfg.token_count,
    };
    let records: Vec<Result<TrialRecord, EvalError>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = cfg.seed + trial as u64;
            let inst = generate(cfg.task, seed, &cfg.scene)?;
            let oracle;
            let d: &dyn Denoiser = match &denoiser {
                DenoiserSource::Model(m) => *m,
                DenoiserSource::Oracle => {
                    oracle = OracleDenoiser::for_instance(&inst, token_count);
                    &oracle
                }
                DenoiserSource::Identity => &IdentityDenoiser,
            };
            let rcfg = RefineConfig {
                seed: crate::rng::derive_seed(cfg.refine.seed, seed),
                selection: if scorer.is_some() {
                    cfg.refine.selection
                } else {
                    Selection::Uniform
                },
                ..cfg.refine.clone()
            };
            let out = refine(
                &inst.object_cloud_canonical,
                &inst.scene_cloud,
                d,
                scorer,
                token_count,
                &rcfg,
                &cfg.noising,
            )?;
            Ok(score_trial(&inst, &out.runs.iter().map(|r| r.final_pose).collect::<Vec<_>>(), out.runs.iter().map(|r| r.score).collect(), out.best_index, cfg))
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = records.len().max(1) as f64;
    let rate = |f: &dyn Fn(&TrialRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
    Ok(EvalReport {
        task: cfg.task,
        trials: records.len(),
        runs: cfg.refine.runs,
        success_rate: rate(&|r| r.success),
        uniform_success_rate: rate(&|r| r.run_success[r.uniform_selected]),
        nearest_success_rate: rate(&|r| r.run_success[r.nearest_selected]),
        curve: aggregate_curve(&records),
        records,
    })
}

/// Builds the per-trial record for a set of final poses.
pub fn score_trial(
    inst: &SceneInstance,
    preds: &[RigidTransform],
    scores: Vec<Option<f64>>,
    selected: usize,
    cfg: &EvalConfig,
) -> TrialRecord {
    let c = inst.object_cloud_canonical.centroid();
    let sym = inst.object_symmetries();
    let matches: Vec<Option<Match>> = preds
        .iter()
        .map(|p| match_solution(p, &inst.solutions, &sym, &c, &cfg.thresholds))
        .collect();
    let run_success: Vec<bool> = preds.iter().map(|p| geometric_success(p, inst, &cfg.success)).collect();
    let nearest_selected = (0..preds.len())
        .min_by(|&a, &b| {
            let key = |p: &RigidTransform| {
                inst.solutions
                    .iter()
                    .map(|s| {
                        let e = solution_error(p, s, &sym, &c);
                        e.0 / cfg.thresholds.translation + e.1 / cfg.thresholds.rotation_deg.to_radians()
                    })
                    .fold(f64::INFINITY, f64::min)
            };
            key(&preds[a]).total_cmp(&key(&preds[b]))
        })
        .unwrap_or(0);
    let mut rng = stream_rng(inst.seed, 0x5e1ec7);
    let uniform_selected = rand::Rng::random_range(&mut rng, 0..preds.len().max(1));
    let coverage = cfg
        .k_values
        .iter()
        .filter(|&&k| k <= preds.len())
        .map(|&k| {
            let cov = coverage(&preds[..k], inst, &cfg.thresholds);
            CurvePoint {
                k,
                precision: cov.precision,
                recall: cov.recall,
            }
        })
        .collect();
    let all_scored = scores.iter().all(|s| s.is_some());
    TrialRecord {
        instance_seed: inst.seed,
        solutions: inst.solutions.len(),
        predictions: preds.to_vec(),
        scores: all_scored.then(|| scores.iter().map(|s| s.unwrap_or(0.0)).collect()),
        matches,
        success: run_success.get(selected).copied().unwrap_or(false),
        run_success,
        selected,
        uniform_selected,
        nearest_selected,
        coverage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small() -> SceneConfig {
        SceneConfig {
            scene_points: 800,
            object_points: 200,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn solutions_pass_their_own_checks() {
        let cfg = SuccessConfig::default();
        for task in TaskKind::ALL {
            for seed in 0..5 {
                let inst = generate(task, seed, &small()).unwrap();
                for s in &inst.solutions {
                    assert!(geometric_success(&s.transform, &inst, &cfg), "{task} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn matching_examples() {
        let inst = generate(TaskKind::BookShelf, 3, &small()).unwrap();
        let th = MatchThresholds::default();
        let c = inst.object_cloud_canonical.centroid();
        let sym = inst.object_symmetries();
        let s = inst.solutions[0].transform;
        let m = match_solution(&s, &inst.solutions, &sym, &c, &th).unwrap();
        assert!(m.translation_error < 1e-12 && m.rotation_error < 1e-7);
        let off = RigidTransform::from_translation(Vec3::new(0.04, 0.0, 0.0)).compose(&s);
        assert!(match_solution(&off, &inst.solutions, &sym, &c, &th).is_none());
        // long side facing into the shelf
        let turned = s.compose(&RigidTransform::from_rotation(Rotation::about_z(PI / 2.0)));
        assert!(!geometric_success(&turned, &inst, &SuccessConfig::default()));
    }

    #[test]
    fn can_yaw_is_quotiented() {
        let inst = generate(TaskKind::CanCabinet, 4, &small()).unwrap();
        let s = &inst.solutions[0];
        let spun = RigidTransform::from_rotation(Rotation::about_z(37f64.to_radians()))
            .about_point(&s.transform.translation)
            .compose(&s.transform);
        let c = inst.object_cloud_canonical.centroid();
        let (dt, dr) = solution_error(&spun, s, &inst.object_symmetries(), &c);
        assert!(dt < 1e-9 && dr < 1e-7, "{dt} {dr}");
    }

    #[test]
    fn coverage_counts() {
        let inst = generate(TaskKind::BookShelf, 5, &small()).unwrap();
        let th = MatchThresholds::default();
        let all: Vec<RigidTransform> = inst.solutions.iter().map(|s| s.transform).collect();
        let cov = coverage(&all, &inst, &th);
        assert_eq!((cov.precision, cov.recall), (Some(1.0), 1.0));
        assert_eq!(coverage(&[], &inst, &th).precision, None);
    }
}
