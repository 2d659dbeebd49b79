//! Optimisation loops for the de-noiser and the success classifier.

use std::fs;
use std::path::Path;

use ndarray::Zip;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::geometry::{sample_uniform_rotation, RigidTransform, Vec3};
use crate::network::checkpoint::{self, CheckpointError};
use crate::network::loss::{bce_with_logits, pose_loss_with_grad, HeadDecode, LossWeights, PoseLoss};
use crate::network::{prepare_pair, resample, HeadKind, Mat, Model, ModelConfig, NetworkError, Tape};
use crate::noising::{make_classifier_pair, make_training_pair, NoisedSample, NoisingConfig, NoisingError, TimestepSampler};
use crate::rng::stream_rng;
use crate::scenegen::Demonstration;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("no demonstrations to train on")]
    EmptyDataset,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Noising(#[from] NoisingError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("trainer state i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trainer state: {0}")]
    State(String),
}

/// What the de-noiser is trained to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// One interpolation interval back toward the demonstration.
    Incremental,
    /// The whole remaining perturbation in one step.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub peak_lr: f64,
    pub min_lr: f64,
    /// Warmup length in passes over the demonstration set.
    pub warmup_epochs: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Length unit (metres) for the translation and chamfer loss terms.
    pub length_scale: f64,
    pub target: TargetKind,
    /// Classifier only: rotate each whole object+scene pair by a random rotation.
    pub rotation_augmentation: bool,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            total_steps: 500_000,
            peak_lr: 1e-4,
            min_lr: 1e-6,
            warmup_epochs: 50.0,
            weight_decay: 0.1,
            betas: [0.9, 0.95],
            adam_eps: 1e-8,
            seed: 0,
            loss_weights: LossWeights::default(),
            length_scale: 0.1,
            target: TargetKind::Incremental,
            rotation_augmentation: true,
            checkpoint_every: 5000,
        }
    }
}

impl TrainConfig {
    /// Step budget that fits a desktop CPU. The shorter schedule takes a
    /// higher peak rate.
    pub fn desk() -> Self {
        TrainConfig {
            total_steps: 20_000,
            peak_lr: 5e-4,
            checkpoint_every: 2000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.peak_lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.peak_lr {
            return bad("need 0 <= min_lr <= peak_lr and peak_lr > 0");
        }
        if !(self.warmup_epochs >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("warmup_epochs and weight_decay must be non-negative");
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) || !(self.adam_eps > 0.0) {
            return bad("betas must lie in [0, 1) and adam_eps must be positive");
        }
        if !(self.length_scale > 0.0) {
            return bad("length_scale must be positive");
        }
        Ok(())
    }

    /// Warmup in optimiser steps for a dataset of `dataset_len` demonstrations.
    pub fn warmup_steps(&self, dataset_len: usize) -> usize {
        let per_epoch = dataset_len.div_ceil(self.batch_size).max(1);
        (self.warmup_epochs * per_epoch as f64).ceil() as usize
    }
}

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to
/// `min` at `total`.
pub fn lr_at(step: usize, peak: f64, min: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup);
    let progress = if span == 0 {
        1.0
    } else {
        ((step - warmup) as f64 / span as f64).min(1.0)
    };
    min + 0.5 * (peak - min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    m: Vec<Mat<f32>>,
    v: Vec<Mat<f32>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &[Mat<f32>]) -> Self {
        AdamW {
            m: params.iter().map(|p| Mat::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Mat::zeros(p.dim())).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. `decayed[i]` selects which tensors receive weight decay.
    pub fn update(&mut self, params: &mut [Mat<f32>], grads: &[Mat<f32>], decayed: &[bool], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let [b1, b2] = cfg.betas;
        let bc1 = (1.0 - b1.powi(self.t as i32)) as f32;
        let bc2 = (1.0 - b2.powi(self.t as i32)) as f32;
        let (b1, b2) = (b1 as f32, b2 as f32);
        let lr32 = lr as f32;
        let eps = cfg.adam_eps as f32;
        for i in 0..params.len() {
            let shrink = if decayed[i] { 1.0 - (lr * cfg.weight_decay) as f32 } else { 1.0 };
            Zip::from(&mut params[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads[i])
                .for_each(|p, m, v, &g| {
                    *p *= shrink;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr32 * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in self.m.iter().chain(&self.v) {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    fn load_bytes(&mut self, bytes: &[u8], t: u64) -> Result<(), TrainError> {
        let total: usize = self.m.iter().chain(&self.v).map(|x| x.len()).sum();
        if bytes.len() != total * 4 {
            return Err(TrainError::State("optimiser state has the wrong size".into()));
        }
        let mut vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for tensor in self.m.iter_mut().chain(self.v.iter_mut()) {
            for x in tensor.iter_mut() {
                *x = vals.next().expect("size checked");
            }
        }
        self.t = t;
        Ok(())
    }
}

/// One metrics-log row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub loss: f64,
    pub translation: f64,
    pub rotation: f64,
    pub chamfer: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "step,loss,translation,rotation,chamfer,lr";

impl MetricRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?}",
            self.step, self.loss, self.translation, self.rotation, self.chamfer, self.lr
        )
    }
}

/// A network-ready de-noiser example.
#[derive(Clone, Debug)]
pub struct PoseItem {
    object: Mat<f32>,
    scene: Mat<f32>,
    timestep: usize,
    frame: crate::cloud::NormalizationFrame,
    target: RigidTransform,
    noised: Vec<Vec3>,
    next: Vec<Vec3>,
}

/// A network-ready classifier example.
#[derive(Clone, Debug)]
pub struct ScoreItem {
    object: Mat<f32>,
    scene: Mat<f32>,
    pub label: u8,
}

impl ScoreItem {
    pub fn object(&self) -> &Mat<f32> {
        &self.object
    }
}

#[derive(Clone, Debug)]
pub enum Item {
    Pose(PoseItem),
    Score(ScoreItem),
}

/// Converts a noised sample into a de-noiser example.
pub fn pose_item(sample: &NoisedSample, kind: TargetKind, cfg: &ModelConfig) -> PoseItem {
    let noised = resample(sample.noised_object_cloud.points(), cfg.object_tokens);
    let prepared = prepare_pair::<f32>(&noised, &sample.cropped_scene_cloud, cfg);
    let (target, next) = match kind {
        TargetKind::Incremental => (sample.target, sample.next_object_cloud.points()),
        TargetKind::Full => (sample.full_inverse, sample.final_object_cloud.points()),
    };
    PoseItem {
        object: prepared.object,
        scene: prepared.scene,
        timestep: sample.timestep,
        frame: prepared.frame,
        target,
        noised,
        next: resample(next, cfg.object_tokens),
    }
}

/// Converts object/scene clouds into a classifier example, optionally
/// rotating the pair together about the scene centroid.
pub fn score_item(
    object: &PointCloud,
    scene: &PointCloud,
    label: u8,
    augment: Option<&RigidTransform>,
    cfg: &ModelConfig,
) -> ScoreItem {
    let (object, scene) = match augment {
        Some(t) => (object.transformed(t), scene.transformed(t)),
        None => (object.clone(), scene.clone()),
    };
    let prepared = prepare_pair::<f32>(object.points(), &scene, cfg);
    ScoreItem {
        object: prepared.object,
        scene: prepared.scene,
        label,
    }
}

fn zeros_like(params: &[Mat<f32>]) -> Vec<Mat<f32>> {
    params.iter().map(|p| Mat::zeros(p.dim())).collect()
}

/// Loss and parameter gradient for one de-noiser example.
pub fn pose_item_grad(
    model: &Model<f32>,
    item: &PoseItem,
    cfg: &TrainConfig,
    grads: &mut [Mat<f32>],
    grad_scale: f64,
) -> Result<PoseLoss, TrainError> {
    let mut tape = Tape::new(model.params());
    let g = model.pose_graph(&mut tape, &item.object, &item.scene, item.timestep)?;
    let head = HeadDecode::new(&tape.value(g.translation).to_owned(), &tape.value(g.rotation6).to_owned(), &item.frame);
    let (loss, lg) = pose_loss_with_grad(
        &head.transform,
        &item.target,
        &item.noised,
        &item.next,
        &cfg.loss_weights,
        cfg.length_scale,
    );
    let (st, sr) = head.seeds::<f32>(&lg, grad_scale);
    tape.backward(&[(g.translation, st), (g.rotation6, sr)], grads);
    Ok(loss)
}

/// Held-out pose loss without gradients.
pub fn pose_item_loss(model: &Model<f32>, item: &PoseItem, cfg: &TrainConfig) -> Result<PoseLoss, TrainError> {
    let mut tape = Tape::new(model.params());
    let g = model.pose_graph(&mut tape, &item.object, &item.scene, item.timestep)?;
    let head = HeadDecode::new(&tape.value(g.translation).to_owned(), &tape.value(g.rotation6).to_owned(), &item.frame);
    Ok(pose_loss_with_grad(&head.transform, &item.target, &item.noised, &item.next, &cfg.loss_weights, cfg.length_scale).0)
}

fn score_item_grad(model: &Model<f32>, item: &ScoreItem, grads: &mut [Mat<f32>], grad_scale: f64) -> Result<f64, TrainError> {
    let mut tape = Tape::new(model.params());
    let z = model.score_graph(&mut tape, &item.object, &item.scene)?;
    let (loss, dz) = bce_with_logits(tape.value(z)[[0, 0]] as f64, item.label as f64);
    tape.backward(&[(z, Mat::from_elem((1, 1), (dz * grad_scale) as f32))], grads);
    Ok(loss)
}

/// Demonstration with its object cloud reduced to the model's token count.
fn prepare_demo(demo: &Demonstration, cfg: &ModelConfig) -> Demonstration {
    let pts = resample(demo.final_object_cloud.points(), cfg.object_tokens);
    Demonstration {
        final_object_cloud: PointCloud::new(pts, demo.final_object_cloud.role()).expect("resampled cloud is valid"),
        ..demo.clone()
    }
}

/// Trainer for either head. Batches are a pure function of `(seed, step)`,
/// and per-example gradients are summed in a fixed order, so a run is
/// reproducible regardless of the worker count.
pub struct Trainer {
    model: Model<f32>,
    opt: AdamW,
    step: usize,
    demos: Vec<Demonstration>,
    train: TrainConfig,
    noise: NoisingConfig,
    sampler: TimestepSampler,
    warmup: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    step: usize,
    adam_steps: u64,
    warmup: usize,
    train: TrainConfig,
    noise: NoisingConfig,
}

const OPTIM_FILE: &str = "optim.bin";
const STATE_FILE: &str = "trainer.json";
const MODEL_DIR: &str = "model";

impl Trainer {
    pub fn new(
        model_cfg: &ModelConfig,
        train: &TrainConfig,
        noise: &NoisingConfig,
        demos: &[Demonstration],
    ) -> Result<Self, TrainError> {
        train.validate()?;
        let model = Model::<f32>::new(model_cfg)?;
        Self::with_model(model, train, noise, demos)
    }

    pub fn with_model(
        model: Model<f32>,
        train: &TrainConfig,
        noise: &NoisingConfig,
        demos: &[Demonstration],
    ) -> Result<Self, TrainError> {
        train.validate()?;
        if demos.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let demos: Vec<_> = demos.iter().map(|d| prepare_demo(d, model.config())).collect();
        Ok(Trainer {
            opt: AdamW::new(model.params()),
            step: 0,
            sampler: noise.sampler()?,
            warmup: train.warmup_steps(demos.len()),
            demos,
            train: train.clone(),
            noise: noise.clone(),
            model,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.step, self.train.peak_lr, self.train.min_lr, self.warmup, self.train.total_steps)
    }

    /// Examples of the batch used at `step`.
    pub fn batch(&self, step: usize) -> Vec<Item> {
        let mut rng = stream_rng(self.train.seed, step as u64);
        let cfg = self.model.config();
        let raw: Vec<(usize, u64)> = (0..self.train.batch_size)
            .map(|_| (rng.random_range(0..self.demos.len()), rng.random()))
            .collect();
        raw.into_par_iter()
            .map(|(d, seed)| {
                let demo = &self.demos[d];
                let mut rng = stream_rng(seed, 0);
                match cfg.head {
                    HeadKind::Pose => {
                        let s = make_training_pair(demo, &self.sampler, &self.noise, &mut rng);
                        Item::Pose(pose_item(&s, self.train.target, cfg))
                    }
                    HeadKind::Score => {
                        let pair = make_classifier_pair(demo, &self.noise, &mut rng);
                        let aug = self.train.rotation_augmentation.then(|| {
                            let c = pair.scene_cloud.centroid();
                            RigidTransform::from_rotation(sample_uniform_rotation(&mut rng)).about_point(&c)
                        });
                        Item::Score(score_item(&pair.object_cloud, &pair.scene_cloud, pair.label, aug.as_ref(), cfg))
                    }
                }
            })
            .collect()
    }

    /// One optimiser step on `items`, returning averaged loss terms.
    pub fn step_on(&mut self, items: &[Item]) -> Result<MetricRow, TrainError> {
        let scale = 1.0 / items.len() as f64;
        let model = &self.model;
        let cfg = &self.train;
        let results: Vec<Result<(PoseLoss, Vec<Mat<f32>>), TrainError>> = items
            .par_iter()
            .map(|item| {
                let mut g = zeros_like(model.params());
                let loss = match item {
                    Item::Pose(p) => pose_item_grad(model, p, cfg, &mut g, scale)?,
                    Item::Score(s) => {
                        let l = score_item_grad(model, s, &mut g, scale)?;
                        PoseLoss {
                            total: l,
                            ..PoseLoss::default()
                        }
                    }
                };
                Ok((loss, g))
            })
            .collect();
        let mut grads = zeros_like(model.params());
        let mut row = MetricRow {
            step: self.step,
            lr: self.lr(),
            ..MetricRow::default()
        };
        for r in results {
            let (l, g) = r?;
            row.loss += l.total * scale;
            row.translation += l.translation * scale;
            row.rotation += l.rotation * scale;
            row.chamfer += l.chamfer * scale;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        if !row.loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TrainError::NonFinite {
                step: self.step,
                detail: format!(
                    "loss {} (translation {}, rotation {}, chamfer {})",
                    row.loss, row.translation, row.rotation, row.chamfer
                ),
            });
        }
        let decayed = self.model.decayed();
        let lr = row.lr;
        self.opt.update(self.model.params_mut(), &grads, &decayed, lr, &self.train);
        self.step += 1;
        Ok(row)
    }

    /// Runs until `total_steps`, calling `on_step` after each update.
    pub fn run<F>(&mut self, on_step: F) -> Result<Vec<MetricRow>, TrainError>
    where
        F: FnMut(&MetricRow, &Trainer) -> Result<(), TrainError>,
    {
        self.run_until(self.train.total_steps, on_step)
    }

    /// Like [`run`](Self::run) but stops early once `stop` steps are done.
    pub fn run_until<F>(&mut self, stop: usize, mut on_step: F) -> Result<Vec<MetricRow>, TrainError>
    where
        F: FnMut(&MetricRow, &Trainer) -> Result<(), TrainError>,
    {
        let mut rows = Vec::new();
        while self.step < self.train.total_steps.min(stop) {
            let batch = self.batch(self.step);
            let row = self.step_on(&batch)?;
            on_step(&row, self)?;
            rows.push(row);
        }
        Ok(rows)
    }

    /// Writes the model, optimiser moments and step counter to `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;
        checkpoint::save(
            &dir.join(MODEL_DIR),
            &self.model,
            serde_json::json!({ "step": self.step, "target": self.train.target }),
        )?;
        fs::write(dir.join(OPTIM_FILE), self.opt.to_bytes())?;
        let state = TrainerState {
            step: self.step,
            adam_steps: self.opt.t,
            warmup: self.warmup,
            train: self.train.clone(),
            noise: self.noise.clone(),
        };
        fs::write(
            dir.join(STATE_FILE),
            serde_json::to_string_pretty(&state).map_err(|e| TrainError::State(e.to_string()))?,
        )?;
        Ok(())
    }

    /// Restores a trainer written by [`save`](Self::save).
    pub fn resume(dir: &Path, demos: &[Demonstration]) -> Result<Self, TrainError> {
        let state: TrainerState = serde_json::from_str(&fs::read_to_string(dir.join(STATE_FILE))?)
            .map_err(|e| TrainError::State(e.to_string()))?;
        let (model, _) = checkpoint::load(&dir.join(MODEL_DIR))?;
        let mut t = Self::with_model(model, &state.train, &state.noise, demos)?;
        t.opt.load_bytes(&fs::read(dir.join(OPTIM_FILE))?, state.adam_steps)?;
        t.step = state.step;
        t.warmup = state.warmup;
        Ok(t)
    }
}

/// Path of the model checkpoint inside a trainer state directory.
pub fn model_dir(state_dir: &Path) -> std::path::PathBuf {
    state_dir.join(MODEL_DIR)
}

/// Mean pose loss of `model` over `count` fresh examples from `demos`.
pub fn held_out_pose_loss(
    model: &Model<f32>,
    demos: &[Demonstration],
    count: usize,
    seed: u64,
    train: &TrainConfig,
    noise: &NoisingConfig,
) -> Result<PoseLoss, TrainError> {
    if demos.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let sampler = noise.sampler()?;
    let cfg = model.config();
    let losses: Vec<Result<PoseLoss, TrainError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let demo = prepare_demo(&demos[i % demos.len()], cfg);
            let s = make_training_pair(&demo, &sampler, noise, &mut rng);
            let item = pose_item(&s, train.target, cfg);
            pose_item_loss(model, &item, train)
        })
        .collect();
    let mut mean = PoseLoss::default();
    let k = 1.0 / count.max(1) as f64;
    for l in losses {
        let l = l?;
        mean.translation += l.translation * k;
        mean.rotation += l.rotation * k;
        mean.chamfer += l.chamfer * k;
        mean.total += l.total * k;
    }
    Ok(mean)
}

/// Area under the ROC curve from average ranks (ties count one half).
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 || labels.len() != n {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&k| labels[k] == 1).map(|k| ranks[k]).sum();
    Some((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub samples: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
}

/// Scores classifier examples and summarises accuracy at 0.5 and AUC.
pub fn evaluate_classifier(model: &Model<f32>, items: &[ScoreItem]) -> Result<ClassifierReport, TrainError> {
    let scores: Vec<Result<f64, NetworkError>> = items
        .par_iter()
        .map(|it| model.forward_score(&it.object, &it.scene))
        .collect();
    let scores = scores.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let labels: Vec<u8> = items.iter().map(|i| i.label).collect();
    let correct = scores
        .iter()
        .zip(&labels)
        .filter(|(s, l)| (**s >= 0.5) == (**l == 1))
        .count();
    Ok(ClassifierReport {
        samples: items.len(),
        accuracy: correct as f64 / items.len().max(1) as f64,
        auc: auc(&scores, &labels),
    })
}

/// Held-out classifier examples drawn from `demos` (no augmentation).
pub fn classifier_items(
    demos: &[Demonstration],
    count: usize,
    seed: u64,
    noise: &NoisingConfig,
    cfg: &ModelConfig,
) -> Vec<ScoreItem> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let demo = prepare_demo(&demos[i % demos.len()], cfg);
            let pair = make_classifier_pair(&demo, noise, &mut rng);
            score_item(&pair.object_cloud, &pair.scene_cloud, pair.label, None, cfg)
        })
        .collect()
}
