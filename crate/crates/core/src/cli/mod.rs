//! Command-line front end: synth | train | train-classifier | infer | eval | inspect.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 missing or malformed
//! data, 3 numerical failure (non-finite loss or pose).

pub mod dataset;

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cloud::{CloudRole, PointCloud};
use crate::evalkit::{run_benchmark, DenoiserSource, EvalConfig, MatchThresholds, SuccessConfig};
use crate::network::checkpoint::{self, CheckpointError};
use crate::network::{HeadKind, Model, ModelConfig};
use crate::noising::NoisingConfig;
use crate::refine::{refine, Denoiser, OracleDenoiser, RefineConfig, RefineError, Scorer, Selection};
use crate::scenegen::{demonstration_set, SceneConfig, TaskKind};
use crate::training::{
    classifier_items, evaluate_classifier, model_dir, TargetKind, TrainConfig, TrainError, Trainer, METRICS_HEADER,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) | TrainError::Network(_) | TrainError::Noising(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "rpdiff", version, about = "Object rearrangement by iterative pose de-noising")]
pub struct Cli {
    /// Root for relative paths and default outputs.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Zero the timestamps in run manifests so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// TOML config; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "RPD_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate scene instances, solutions and demonstrations.
    Synth(SynthArgs),
    /// Train the pose de-noiser.
    Train(TrainArgs),
    /// Train the success classifier.
    TrainClassifier(TrainArgs),
    /// Refine poses for one scene.
    Infer(InferArgs),
    /// Benchmark on fresh instances.
    Eval(EvalArgs),
    /// Summarise a dataset, instance, checkpoint, run directory or PLY file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// book_shelf | can_cabinet | mug_rack
    #[arg(long)]
    pub task: String,
    /// Number of demonstrations.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub demos_per_instance: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Small model and step budget for a desktop CPU.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from the run directory's saved state.
    #[arg(long)]
    pub resume: bool,
    /// Stop this invocation after the given step; continue later with --resume.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// incremental | full
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct RefineArgs {
    /// Parallel runs K.
    #[arg(short = 'k', long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub bias: Option<u32>,
    #[arg(long)]
    pub no_noise: bool,
    /// classifier_argmax | uniform
    #[arg(long)]
    pub selection: Option<String>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Use ground-truth solutions of `--instance` instead of a checkpoint.
    #[arg(long)]
    pub oracle_denoiser: bool,
    /// Instance directory (scene.ply, object.ply, ...).
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub object: Option<PathBuf>,
    #[command(flatten)]
    pub refine: RefineArgs,
    /// Write the object cloud after every iteration of every run.
    #[arg(long)]
    pub export_ply: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, default_value = "book_shelf")]
    pub task: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub oracle_denoiser: bool,
    #[arg(long)]
    pub trials: Option<usize>,
    #[command(flatten)]
    pub refine: RefineArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Evaluation settings in the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub trials: usize,
    /// Added to the run seed to get the first held-out instance seed.
    pub seed_offset: u64,
    pub thresholds: MatchThresholds,
    pub success: SuccessConfig,
    pub k_values: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            trials: e.trials,
            seed_offset: e.seed,
            thresholds: e.thresholds,
            success: e.success,
            k_values: e.k_values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub noising: NoisingConfig,
    pub model: ModelConfig,
    pub classifier: ModelConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scene: SceneConfig::default(),
            noising: NoisingConfig::default(),
            model: ModelConfig::default(),
            classifier: ModelConfig::default().with_head(HeadKind::Score),
            train: TrainConfig::default(),
            refine: RefineConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            classifier: ModelConfig::desk().with_head(HeadKind::Score),
            train: TrainConfig::desk(),
            ..RunConfig::default()
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Layers a TOML file over the defaults (or the desk preset).
pub fn load_config(path: Option<&Path>, desk: bool) -> Result<RunConfig, CliError> {
    let base = if desk { RunConfig::desk() } else { RunConfig::default() };
    let Some(path) = path else { return Ok(base) };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let over: toml::Value = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut value = toml::Value::try_from(&base).map_err(|e| CliError::Usage(e.to_string()))?;
    merge(&mut value, over);
    value
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Record of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    /// (path, sha256) of files read.
    pub inputs: Vec<(String, String)>,
    /// (path, sha256) of files written.
    pub outputs: Vec<(String, String)>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

struct Ctx {
    workdir: PathBuf,
    deterministic: bool,
    config: RunConfig,
    seed: u64,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn record(list: &mut Vec<(String, String)>, path: &Path) {
        if let Ok(bytes) = fs::read(path) {
            list.push((path.display().to_string(), dataset::sha256_hex(&bytes)));
        }
    }

    fn input(&mut self, path: &Path) {
        Self::record(&mut self.inputs, path);
    }

    fn output(&mut self, path: &Path) {
        Self::record(&mut self.outputs, path);
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        self.output(path);
        Ok(())
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn pretty<S: Serialize>(v: &S) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

fn parse_task(s: &str) -> Result<TaskKind, CliError> {
    s.parse()
        .map_err(|_| CliError::Usage(format!("unknown task `{s}` (expected book_shelf, can_cabinet or mug_rack)")))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let desk = matches!(&cli.command, Command::Train(a) | Command::TrainClassifier(a) if a.desk);
    let config_path = cli.config.as_ref().map(|p| if p.is_absolute() { p.clone() } else { cli.workdir.join(p) });
    let mut config = load_config(config_path.as_deref(), desk)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let seed = config.seed;
    config.train.seed = seed;
    config.model.init_seed = seed;
    config.classifier.init_seed = seed;
    config.refine.seed = seed;
    let mut ctx = Ctx {
        workdir: cli.workdir.clone(),
        deterministic: cli.deterministic,
        config,
        seed,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    if let Some(p) = &config_path {
        ctx.input(p);
    }
    let started = now_ms();
    let name = match &cli.command {
        Command::Synth(a) => {
            synth(&mut ctx, a)?;
            "synth"
        }
        Command::Train(a) => {
            train(&mut ctx, a, HeadKind::Pose)?;
            "train"
        }
        Command::TrainClassifier(a) => {
            train(&mut ctx, a, HeadKind::Score)?;
            "train-classifier"
        }
        Command::Infer(a) => {
            infer(&mut ctx, a)?;
            "infer"
        }
        Command::Eval(a) => {
            eval(&mut ctx, a)?;
            "eval"
        }
        Command::Inspect(a) => {
            return inspect(&ctx, a);
        }
    };
    let (started, finished) = if ctx.deterministic { (0, 0) } else { (started, now_ms()) };
    let manifest = RunManifest {
        tool: "rpdiff".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        args: argv,
        seed: ctx.seed,
        config: serde_json::to_value(&ctx.config).expect("serialisable"),
        inputs: std::mem::take(&mut ctx.inputs),
        outputs: std::mem::take(&mut ctx.outputs),
        started_unix_ms: started,
        finished_unix_ms: finished,
    };
    let file = if ctx.deterministic {
        format!("{name}-{}.json", ctx.seed)
    } else {
        format!("{name}-{started}.json")
    };
    let path = ctx.workdir.join("manifests").join(file);
    fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| CliError::io(&path, e))?;
    fs::write(&path, pretty(&manifest)).map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

fn synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<(), CliError> {
    let task = parse_task(&a.task)?;
    if a.demos_per_instance == 0 {
        return Err(CliError::Usage("--demos-per-instance must be positive".into()));
    }
    let out = ctx.path(a.out.as_deref().unwrap_or(Path::new(&format!("data/{task}"))));
    let sets = demonstration_set(task, a.count, a.demos_per_instance, ctx.seed, &ctx.config.scene)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let m = dataset::write_dataset(&out, task, ctx.seed, a.demos_per_instance, &ctx.config.scene, &sets)?;
    ctx.output(&out.join(dataset::MANIFEST));
    println!(
        "wrote {} instances / {} demonstrations to {}",
        m.instances.len(),
        m.demo_count(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct RunDirConfig<'a> {
    head: HeadKind,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    noising: &'a NoisingConfig,
    dataset: String,
    dataset_sha256: String,
}

fn train(ctx: &mut Ctx, a: &TrainArgs, head: HeadKind) -> Result<(), CliError> {
    let data = ctx.path(&a.data);
    let (_, sets) = dataset::load_dataset(&data)?;
    ctx.input(&data.join(dataset::MANIFEST));
    let demos: Vec<_> = sets.into_iter().flat_map(|(_, d)| d).collect();
    if demos.is_empty() {
        return Err(CliError::Data(format!("{} holds no demonstrations", data.display())));
    }
    if let Some(s) = a.steps {
        ctx.config.train.total_steps = s;
    }
    if let Some(t) = &a.target {
        ctx.config.train.target = match t.as_str() {
            "incremental" => TargetKind::Incremental,
            "full" => TargetKind::Full,
            _ => return Err(CliError::Usage(format!("unknown target `{t}` (expected incremental or full)"))),
        };
    }
    let model_cfg = match head {
        HeadKind::Pose => ctx.config.model.clone().with_head(HeadKind::Pose),
        HeadKind::Score => ctx.config.classifier.clone().with_head(HeadKind::Score),
    };
    let default_out = if head == HeadKind::Pose { "runs/train" } else { "runs/classifier" };
    let out = ctx.path(a.out.as_deref().unwrap_or(Path::new(default_out)));
    let state = out.join("state");
    let mut trainer = if a.resume && state.join("trainer.json").exists() {
        let t = Trainer::resume(&state, &demos)?;
        if t.model().config().head != head {
            return Err(CliError::Usage(format!("{} holds a different head", state.display())));
        }
        eprintln!("resuming at step {}", t.step());
        t
    } else {
        Trainer::new(&model_cfg, &ctx.config.train, &ctx.config.noising, &demos)?
    };
    let manifest_bytes = fs::read(data.join(dataset::MANIFEST)).map_err(|e| CliError::io(&data, e))?;
    let run_cfg = RunDirConfig {
        head,
        model: trainer.model().config(),
        train: trainer.train_config(),
        noising: &ctx.config.noising,
        dataset: data.display().to_string(),
        dataset_sha256: dataset::sha256_hex(&manifest_bytes),
    };
    ctx.write(&out.join("config.json"), &pretty(&run_cfg))?;

    let metrics_path = out.join("metrics.csv");
    let append = a.resume && trainer.step() > 0 && metrics_path.exists();
    let mut metrics = if append {
        OpenOptions::new().append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .map_err(|e| CliError::io(&metrics_path, e))?;
    if !append {
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| CliError::io(&metrics_path, e))?;
    }
    let every = trainer.train_config().checkpoint_every.max(1);
    let total = trainer.train_config().total_steps;
    let stop = a.stop_after.unwrap_or(total);
    let ckpt_root = out.join("checkpoints");
    trainer.run_until(stop, |row, t| {
        writeln!(metrics, "{}", row.csv())?;
        let done = row.step + 1;
        if done % every == 0 || done == total || done == stop {
            metrics.flush()?;
            t.save(&state)?;
            checkpoint::save(&ckpt_root.join(format!("step_{done:07}")), t.model(), serde_json::json!({ "step": done }))?;
            eprintln!("step {done}/{total} loss {:.5} lr {:.3e}", row.loss, row.lr);
        }
        Ok(())
    })?;
    trainer.save(&state)?;
    let final_dir = out.join("model");
    checkpoint::save(
        &final_dir,
        trainer.model(),
        serde_json::json!({ "step": trainer.step(), "target": trainer.train_config().target }),
    )?;
    ctx.output(&metrics_path);
    ctx.output(&final_dir.join(checkpoint::PARAMS_FILE));
    ctx.output(&model_dir(&state).join(checkpoint::PARAMS_FILE));

    if head == HeadKind::Score {
        let items = classifier_items(&demos, 200, ctx.seed ^ 0xe7a1, &ctx.config.noising, trainer.model().config());
        let report = evaluate_classifier(trainer.model(), &items)?;
        ctx.write(&out.join("classifier_report.json"), &pretty(&report))?;
        println!(
            "classifier accuracy {:.3} auc {}",
            report.accuracy,
            report.auc.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
        );
    }
    println!("trained {} steps; model at {}", trainer.step(), final_dir.display());
    Ok(())
}

fn load_model(ctx: &mut Ctx, path: &Path, head: HeadKind) -> Result<Model<f32>, CliError> {
    let dir = ctx.path(path);
    // accept a training run directory as well as a checkpoint
    let dir = if dir.join("model").join(checkpoint::MANIFEST_FILE).exists() {
        dir.join("model")
    } else {
        dir
    };
    if !dir.join(checkpoint::MANIFEST_FILE).exists() {
        return Err(CliError::Data(format!("no checkpoint at {}", dir.display())));
    }
    let (model, _) = checkpoint::load(&dir)?;
    ctx.input(&dir.join(checkpoint::PARAMS_FILE));
    if model.config().head != head {
        return Err(CliError::Usage(format!("{} is not a {head:?} checkpoint", dir.display())));
    }
    Ok(model)
}

fn refine_config(ctx: &Ctx, a: &RefineArgs) -> Result<RefineConfig, CliError> {
    let mut r = ctx.config.refine.clone();
    if let Some(k) = a.runs {
        r.runs = k;
    }
    if let Some(i) = a.iterations {
        r.iterations = i;
    }
    if let Some(b) = a.bias {
        r.schedule_bias = b;
    }
    if a.no_noise {
        r.noise_enabled = false;
    }
    if let Some(s) = &a.selection {
        r.selection = match s.as_str() {
            "classifier_argmax" => Selection::ClassifierArgmax,
            "uniform" => Selection::Uniform,
            _ => return Err(CliError::Usage(format!("unknown selection `{s}`"))),
        };
    }
    if r.runs == 0 || r.iterations == 0 {
        return Err(CliError::Usage("runs and iterations must be positive".into()));
    }
    Ok(r)
}

#[derive(Serialize)]
struct RunSummary {
    run: usize,
    final_pose: crate::geometry::RigidTransform,
    score: Option<f64>,
}

#[derive(Serialize)]
struct Predictions {
    best_index: usize,
    best: crate::geometry::RigidTransform,
    runs: Vec<RunSummary>,
}

fn infer(ctx: &mut Ctx, a: &InferArgs) -> Result<(), CliError> {
    let rcfg = refine_config(ctx, &a.refine)?;
    let instance = match &a.instance {
        Some(p) => {
            let dir = ctx.path(p);
            ctx.input(&dir.join("meta.json"));
            Some(dataset::read_instance(&dir)?.0)
        }
        None => None,
    };
    let (scene, object) = match (&instance, &a.scene, &a.object) {
        (Some(inst), None, None) => (inst.scene_cloud.clone(), inst.object_cloud_canonical.clone()),
        (None, Some(s), Some(o)) => {
            let (s, o) = (ctx.path(s), ctx.path(o));
            let read = |p: &Path, role| PointCloud::read_ply(p, role).map_err(|e| CliError::Data(format!("{}: {e}", p.display())));
            let clouds = (read(&s, CloudRole::Scene)?, read(&o, CloudRole::Object)?);
            ctx.input(&s);
            ctx.input(&o);
            clouds
        }
        _ => return Err(CliError::Usage("give either --instance or both --scene and --object".into())),
    };
    let scorer_model = match &a.classifier {
        Some(p) => Some(load_model(ctx, p, HeadKind::Score)?),
        None => None,
    };
    let oracle;
    let model;
    let (denoiser, tokens): (&dyn Denoiser, usize) = match (&a.model, a.oracle_denoiser, &instance) {
        (Some(p), false, _) => {
            model = load_model(ctx, p, HeadKind::Pose)?;
            (&model, model.config().object_tokens)
        }
        (None, true, Some(inst)) => {
            let n = ctx.config.model.object_tokens;
            oracle = OracleDenoiser::for_instance(inst, n);
            (&oracle, n)
        }
        (None, true, None) => return Err(CliError::Usage("--oracle-denoiser needs --instance".into())),
        _ => return Err(CliError::Usage("give exactly one of --model or --oracle-denoiser".into())),
    };
    let scorer = scorer_model.as_ref().map(|m| m as &dyn Scorer);
    let out = refine(&object, &scene, denoiser, scorer, tokens, &rcfg, &ctx.config.noising)?;
    if out.runs.iter().any(|r| !r.final_pose.is_finite()) {
        return Err(CliError::Numeric("refinement produced a non-finite pose".into()));
    }
    let dir = ctx.path(a.out.as_deref().unwrap_or(Path::new("infer")));
    let preds = Predictions {
        best_index: out.best_index,
        best: out.best,
        runs: out
            .runs
            .iter()
            .enumerate()
            .map(|(i, r)| RunSummary {
                run: i,
                final_pose: r.final_pose,
                score: r.score,
            })
            .collect(),
    };
    ctx.write(&dir.join("predictions.json"), &pretty(&preds))?;
    let mut lines = String::new();
    for (i, r) in out.runs.iter().enumerate() {
        let line = serde_json::json!({ "run": i, "trajectory": r.trajectory });
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    ctx.write(&dir.join("trajectories.jsonl"), lines.as_bytes())?;
    if a.export_ply {
        for (i, r) in out.runs.iter().enumerate() {
            let run_dir = dir.join("ply").join(format!("run_{i:03}"));
            fs::create_dir_all(&run_dir).map_err(|e| CliError::io(&run_dir, e))?;
            for s in &r.trajectory {
                let p = run_dir.join(format!("iter_{:03}.ply", s.iteration));
                object
                    .transformed(&s.pose)
                    .write_ply(&p)
                    .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            }
        }
    }
    println!("best run {} of {}; predictions in {}", out.best_index, out.runs.len(), dir.display());
    Ok(())
}

fn eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<(), CliError> {
    let task = parse_task(&a.task)?;
    let rcfg = refine_config(ctx, &a.refine)?;
    let e = &ctx.config.eval;
    let cfg = EvalConfig {
        task,
        trials: a.trials.unwrap_or(e.trials),
        seed: ctx.seed.wrapping_add(e.seed_offset),
        scene: ctx.config.scene.clone(),
        noising: ctx.config.noising.clone(),
        refine: rcfg,
        thresholds: e.thresholds,
        success: e.success,
        k_values: e.k_values.clone(),
        token_count: ctx.config.model.object_tokens,
    };
    let classifier = match &a.classifier {
        Some(p) => Some(load_model(ctx, p, HeadKind::Score)?),
        None => None,
    };
    let model;
    let source = match (&a.model, a.oracle_denoiser) {
        (_, true) => DenoiserSource::Oracle,
        (Some(p), false) => {
            model = load_model(ctx, p, HeadKind::Pose)?;
            DenoiserSource::Model(&model)
        }
        (None, false) => return Err(CliError::Usage("give --model or --oracle-denoiser".into())),
    };
    let report = run_benchmark(source, classifier.as_ref().map(|m| m as &dyn Scorer), &cfg)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = ctx.path(a.out.as_deref().unwrap_or(Path::new("eval")));
    ctx.write(&dir.join("report.json"), &pretty(&report))?;
    ctx.write(&dir.join("coverage.csv"), report.curve_csv().as_bytes())?;
    println!(
        "{task}: success {:.3} (uniform {:.3}, nearest {:.3}) over {} trials",
        report.success_rate, report.uniform_success_rate, report.nearest_success_rate, report.trials
    );
    for p in &report.curve {
        let prec = p.precision.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
        println!("  K={:<4} precision {prec} recall {:.3}", p.k, p.recall);
    }
    Ok(())
}

fn inspect(ctx: &Ctx, a: &InspectArgs) -> Result<(), CliError> {
    let p = ctx.path(&a.path);
    let summary = if p.is_file() {
        let cloud = PointCloud::read_ply(&p, CloudRole::Scene).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        let b = cloud.bounds();
        serde_json::json!({ "kind": "point_cloud", "points": cloud.len(), "centroid": cloud.centroid(), "bounds": b })
    } else if p.join("meta.json").exists() {
        let (inst, demos) = dataset::read_instance(&p)?;
        serde_json::json!({
            "kind": "instance", "task": inst.task, "seed": inst.seed,
            "scene_points": inst.scene_cloud.len(), "object_points": inst.object_cloud_canonical.len(),
            "solutions": inst.solutions.len(), "sites": inst.sites.len(), "demos": demos.len(),
        })
    } else if p.join("state").join("trainer.json").exists() {
        let cfg: serde_json::Value = serde_json::from_slice(&fs::read(p.join("config.json")).map_err(|e| CliError::io(&p, e))?)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let rows = fs::read_to_string(p.join("metrics.csv")).map(|s| s.lines().count().saturating_sub(1)).unwrap_or(0);
        serde_json::json!({ "kind": "training_run", "config": cfg, "metric_rows": rows })
    } else if p.join(checkpoint::MANIFEST_FILE).exists() {
        let text = fs::read_to_string(p.join(checkpoint::MANIFEST_FILE)).map_err(|e| CliError::io(&p, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Data(e.to_string()))?;
        if v.get("format").and_then(|f| f.as_str()) == Some(dataset::FORMAT) {
            let m = dataset::read_manifest(&p)?;
            serde_json::json!({
                "kind": "dataset", "task": m.task, "seed": m.seed,
                "instances": m.instances.len(), "demos": m.demo_count(),
            })
        } else {
            let m = checkpoint::read_manifest(&p)?;
            let params: usize = m.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
            serde_json::json!({
                "kind": "checkpoint", "head": m.config.head, "embed_dim": m.config.embed_dim,
                "parameters": params, "config_hash": m.config_hash, "info": m.info,
            })
        }
    } else {
        return Err(CliError::Data(format!("nothing recognisable at {}", p.display())));
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("serialisable"));
    Ok(())
}
