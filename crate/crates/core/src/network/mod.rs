//! Transformer de-noiser (pose head) and success classifier (score head).
//!
//! Points are tokenised by appending an object/scene one-hot to each
//! normalised coordinate and projecting to the embedding width. An encoder
//! runs self-attention over the scene tokens; a decoder runs self-attention
//! over the object tokens (plus a timestep token for the pose head) followed
//! by cross-attention into the encoded scene. Object outputs are mean-pooled
//! and fed to small MLP heads.

pub mod checkpoint;
pub mod loss;
pub mod tape;

use nalgebra::Matrix3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::{farthest_point_indices, NormalizationFrame, PointCloud};
use crate::geometry::{Rotation, Vec3};
pub use tape::{Mat, Real, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("expected a {expected} head, model has a {found} head")]
    HeadMismatch { expected: &'static str, found: &'static str },
    #[error("input has {found} points, model expects {expected}")]
    TokenCount { expected: usize, found: usize },
    #[error("empty point cloud")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Pose,
    Score,
}

impl HeadKind {
    fn name(self) -> &'static str {
        match self {
            HeadKind::Pose => "pose",
            HeadKind::Score => "score",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub attention_heads: usize,
    /// Object tokens N (before the timestep token).
    pub object_tokens: usize,
    /// Scene tokens M.
    pub scene_tokens: usize,
    /// Feed-forward hidden width as a multiple of `embed_dim`.
    pub ffn_multiplier: usize,
    pub head: HeadKind,
    pub init_seed: u64,
    /// Lower bound on the per-axis scene extent used for input
    /// normalisation, metres.
    pub min_extent: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 256,
            encoder_blocks: 4,
            decoder_blocks: 4,
            attention_heads: 1,
            object_tokens: 1024,
            scene_tokens: 1024,
            ffn_multiplier: 4,
            head: HeadKind::Pose,
            init_seed: 0,
            min_extent: 0.1,
        }
    }
}

impl ModelConfig {
    /// Reduced model that trains on a desktop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            embed_dim: 64,
            encoder_blocks: 2,
            decoder_blocks: 2,
            object_tokens: 256,
            scene_tokens: 256,
            ..ModelConfig::default()
        }
    }

    pub fn with_head(mut self, head: HeadKind) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(NetworkError::Config("embed_dim must be positive and even".into()));
        }
        if self.encoder_blocks == 0 || self.decoder_blocks == 0 {
            return Err(NetworkError::Config("need at least one encoder and one decoder block".into()));
        }
        if self.attention_heads == 0 || self.embed_dim % self.attention_heads != 0 {
            return Err(NetworkError::Config("attention_heads must divide embed_dim".into()));
        }
        if self.object_tokens == 0 || self.scene_tokens == 0 || self.ffn_multiplier == 0 {
            return Err(NetworkError::Config("token counts and ffn_multiplier must be positive".into()));
        }
        if !(self.min_extent >= 0.0) {
            return Err(NetworkError::Config("min_extent must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sinusoidal embedding with interleaved sine (even) and cosine (odd) components.
pub fn pos_emb(t: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let i = (k / 2) as f64;
            let freq = 10000f64.powf(-2.0 * i / d as f64);
            if k % 2 == 0 {
                (t * freq).sin()
            } else {
                (t * freq).cos()
            }
        })
        .collect()
}

/// Rotation from the two 3-vectors of the rotation head by Gram–Schmidt:
/// columns `â`, `b̂` (b orthogonalised against â and normalised) and `â × b̂`.
pub fn rotation_from_6d(a: &Vec3, b: &Vec3) -> Rotation {
    let gs = GramSchmidt::new(a, b);
    Rotation::from_matrix_unchecked(Matrix3::from_columns(&[gs.a_hat, gs.b_hat, gs.a_hat.cross(&gs.b_hat)]))
}

/// Intermediate values of the rotation head, kept for differentiation.
pub(crate) struct GramSchmidt {
    a_norm: f64,
    a_hat: Vec3,
    b: Vec3,
    bp_norm: f64,
    b_hat: Vec3,
    /// Substituted inputs carry no gradient.
    a_fixed: bool,
    b_fixed: bool,
}

impl GramSchmidt {
    pub(crate) fn new(a: &Vec3, b: &Vec3) -> Self {
        let a_norm = a.norm();
        let (a_hat, a_fixed) = if a_norm < 1e-8 || !a_norm.is_finite() {
            (Vec3::x(), true)
        } else {
            (a / a_norm, false)
        };
        let mut b_in = *b;
        let mut bp = b_in - a_hat * a_hat.dot(&b_in);
        let mut b_fixed = false;
        if bp.norm() < 1e-8 || !bp.norm().is_finite() {
            // least-aligned canonical axis
            let k = (0..3)
                .min_by(|&i, &j| a_hat[i].abs().total_cmp(&a_hat[j].abs()))
                .unwrap_or(1);
            b_in = Vec3::zeros();
            b_in[k] = 1.0;
            bp = b_in - a_hat * a_hat.dot(&b_in);
            b_fixed = true;
        }
        let bp_norm = bp.norm();
        GramSchmidt {
            a_norm,
            a_hat,
            b: b_in,
            bp_norm,
            b_hat: bp / bp_norm,
            a_fixed,
            b_fixed,
        }
    }

    /// Pulls `dL/dR` back to `(dL/da, dL/db)`.
    pub(crate) fn backward(&self, g: &Matrix3<f64>) -> (Vec3, Vec3) {
        let (ah, bh) = (self.a_hat, self.b_hat);
        let gc: Vec3 = g.column(2).into();
        let mut ga_hat: Vec3 = Vec3::from(g.column(0)) + bh.cross(&gc);
        let gb_hat: Vec3 = Vec3::from(g.column(1)) + gc.cross(&ah);
        let gbp = (gb_hat - bh * bh.dot(&gb_hat)) / self.bp_norm;
        let ab = ah.dot(&self.b);
        let agbp = ah.dot(&gbp);
        let gb = if self.b_fixed { Vec3::zeros() } else { gbp - ah * agbp };
        ga_hat -= self.b * agbp + gbp * ab;
        let ga = if self.a_fixed {
            Vec3::zeros()
        } else {
            (ga_hat - ah * ah.dot(&ga_hat)) / self.a_norm
        };
        (ga, gb)
    }
}

/// Raw pose-head output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosePrediction {
    pub rotation: Rotation,
    /// Translation in normalised units.
    pub translation: Vec3,
}

impl PosePrediction {
    /// Translation converted to metres through the input normalisation.
    pub fn world_translation(&self, frame: &NormalizationFrame) -> Vec3 {
        frame.displacement_to_world(&self.translation)
    }
}

// ---------------------------------------------------------------------------
// Parameter layout

#[derive(Clone, Debug)]
struct Ln {
    g: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Attn {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Clone, Debug)]
struct Mlp {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct EncBlock {
    ln1: Ln,
    attn: Attn,
    ln2: Ln,
    ffn: Mlp,
}

#[derive(Clone, Debug)]
struct DecBlock {
    ln1: Ln,
    self_attn: Attn,
    ln2: Ln,
    cross: Attn,
    ln3: Ln,
    ffn: Mlp,
}

#[derive(Clone, Debug)]
enum Heads {
    Pose { trans: Mlp, rot: Mlp },
    Score { mlp: Mlp },
}

#[derive(Clone, Debug)]
struct Layout {
    w_in: usize,
    enc: Vec<EncBlock>,
    enc_ln: Ln,
    dec: Vec<DecBlock>,
    dec_ln: Ln,
    heads: Heads,
}

enum Init {
    Normal(f64),
    Const(f64),
    Values(Vec<f64>),
}

struct Builder<'r> {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    rng: &'r mut ChaCha8Rng,
}

impl Builder<'_> {
    fn alloc(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let m = match init {
            Init::Normal(std) => Array2::from_shape_simple_fn((rows, cols), || {
                std * self.rng.sample::<f64, _>(StandardNormal)
            }),
            Init::Const(c) => Array2::from_elem((rows, cols), c),
            Init::Values(v) => Array2::from_shape_vec((rows, cols), v).expect("shape matches values"),
        };
        self.names.push(name);
        self.values.push(m);
        self.values.len() - 1
    }

    fn ln(&mut self, prefix: &str, d: usize) -> Ln {
        Ln {
            g: self.alloc(format!("{prefix}.gamma"), 1, d, Init::Const(1.0)),
            b: self.alloc(format!("{prefix}.beta"), 1, d, Init::Const(0.0)),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize, out_std: f64) -> Attn {
        let std = 1.0 / (d as f64).sqrt();
        Attn {
            wq: self.alloc(format!("{prefix}.wq"), d, d, Init::Normal(std)),
            wk: self.alloc(format!("{prefix}.wk"), d, d, Init::Normal(std)),
            wv: self.alloc(format!("{prefix}.wv"), d, d, Init::Normal(std)),
            wo: self.alloc(format!("{prefix}.wo"), d, d, Init::Normal(out_std)),
            bo: self.alloc(format!("{prefix}.bo"), 1, d, Init::Const(0.0)),
        }
    }

    fn mlp(&mut self, prefix: &str, d_in: usize, hidden: usize, d_out: usize, out_std: f64, out_bias: Init) -> Mlp {
        Mlp {
            w1: self.alloc(format!("{prefix}.w1"), d_in, hidden, Init::Normal(1.0 / (d_in as f64).sqrt())),
            b1: self.alloc(format!("{prefix}.b1"), 1, hidden, Init::Const(0.0)),
            w2: self.alloc(format!("{prefix}.w2"), hidden, d_out, Init::Normal(out_std)),
            b2: self.alloc(format!("{prefix}.b2"), 1, d_out, out_bias),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<String>, Vec<Array2<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let mut b = Builder {
        names: Vec::new(),
        values: Vec::new(),
        rng: &mut rng,
    };
    let d = cfg.embed_dim;
    let hidden = d * cfg.ffn_multiplier;
    let depth = (cfg.encoder_blocks + cfg.decoder_blocks) as f64;
    let resid = 1.0 / (2.0 * depth).sqrt();
    let w_in = b.alloc("input.w".into(), 5, d, Init::Normal(1.0));
    let enc = (0..cfg.encoder_blocks)
        .map(|i| EncBlock {
            ln1: b.ln(&format!("encoder.{i}.ln1"), d),
            attn: b.attn(&format!("encoder.{i}.attn"), d, resid / (d as f64).sqrt()),
            ln2: b.ln(&format!("encoder.{i}.ln2"), d),
            ffn: b.mlp(
                &format!("encoder.{i}.ffn"),
                d,
                hidden,
                d,
                resid / (hidden as f64).sqrt(),
                Init::Const(0.0),
            ),
        })
        .collect();
    let enc_ln = b.ln("encoder.ln", d);
    let dec = (0..cfg.decoder_blocks)
        .map(|i| DecBlock {
            ln1: b.ln(&format!("decoder.{i}.ln1"), d),
            self_attn: b.attn(&format!("decoder.{i}.self_attn"), d, resid / (d as f64).sqrt()),
            ln2: b.ln(&format!("decoder.{i}.ln2"), d),
            cross: b.attn(&format!("decoder.{i}.cross_attn"), d, resid / (d as f64).sqrt()),
            ln3: b.ln(&format!("decoder.{i}.ln3"), d),
            ffn: b.mlp(
                &format!("decoder.{i}.ffn"),
                d,
                hidden,
                d,
                resid / (hidden as f64).sqrt(),
                Init::Const(0.0),
            ),
        })
        .collect();
    let dec_ln = b.ln("decoder.ln", d);
    let small = 0.1 / (d as f64).sqrt();
    let heads = match cfg.head {
        HeadKind::Pose => Heads::Pose {
            trans: b.mlp("head.translation", d, d, 3, small, Init::Const(0.0)),
            rot: b.mlp(
                "head.rotation",
                d,
                d,
                6,
                small,
                Init::Values(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            ),
        },
        HeadKind::Score => Heads::Score {
            mlp: b.mlp("head.score", d, d, 1, small, Init::Const(0.0)),
        },
    };
    let names = b.names;
    let values = b.values;
    (
        Layout {
            w_in,
            enc,
            enc_ln,
            dec,
            dec_ln,
            heads,
        },
        names,
        values,
    )
}

// ---------------------------------------------------------------------------
// Model

/// Network parameters plus the layout that indexes them.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    cfg: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Mat<T>>,
}

/// Pose-head graph outputs: translation (1×3) and 6D rotation (1×6).
pub struct PoseGraph {
    pub translation: Var,
    pub rotation6: Var,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: &ModelConfig) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let (layout, names, values) = build_layout(cfg);
        Ok(Model {
            cfg: cfg.clone(),
            layout,
            names,
            params: values.into_iter().map(|m| m.mapv(T::of)).collect(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Mat<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Replaces all parameters; shapes must match the layout.
    pub fn set_params(&mut self, params: Vec<Mat<T>>) -> Result<(), NetworkError> {
        if params.len() != self.params.len() || params.iter().zip(&self.params).any(|(a, b)| a.dim() != b.dim()) {
            return Err(NetworkError::Config("parameter shapes do not match the layout".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Same network with another element type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|m| m.mapv(|v| U::of(v.f64()))).collect(),
        }
    }

    /// Index of each weight matrix subject to weight decay (not biases,
    /// norms, or the input projection).
    pub fn decayed(&self) -> Vec<bool> {
        self.names
            .iter()
            .map(|n| {
                let last = n.rsplit('.').next().unwrap_or("");
                matches!(last, "w1" | "w2" | "wq" | "wk" | "wv" | "wo")
            })
            .collect()
    }

    fn tokens(&self, tape: &mut Tape<'_, T>, points: &Mat<T>, object: bool) -> Var {
        let n = points.nrows();
        let mut feats = Mat::zeros((n, 5));
        feats.slice_mut(ndarray::s![.., 0..3]).assign(points);
        let col = if object { 4 } else { 3 };
        feats.column_mut(col).fill(T::one());
        let x = tape.input(feats);
        let w = tape.param(self.layout.w_in);
        tape.matmul(x, w)
    }

    fn layer_norm(&self, tape: &mut Tape<'_, T>, x: Var, ln: &Ln) -> Var {
        let g = tape.param(ln.g);
        let b = tape.param(ln.b);
        tape.layer_norm(x, g, b)
    }

    fn attention(&self, tape: &mut Tape<'_, T>, x: Var, ctx: Var, a: &Attn) -> Var {
        let (wq, wk, wv, wo, bo) = (
            tape.param(a.wq),
            tape.param(a.wk),
            tape.param(a.wv),
            tape.param(a.wo),
            tape.param(a.bo),
        );
        let q = tape.matmul(x, wq);
        let k = tape.matmul(ctx, wk);
        let v = tape.matmul(ctx, wv);
        let heads = self.cfg.attention_heads;
        let dh = self.cfg.embed_dim / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh),
                    tape.slice_cols(k, h * dh, dh),
                    tape.slice_cols(v, h * dh, dh),
                )
            };
            let s = tape.matmul_nt(qh, kh);
            let s = tape.scale(s, scale);
            let p = tape.softmax_rows(s);
            outs.push(tape.matmul(p, vh));
        }
        let o = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let o = tape.matmul(o, wo);
        tape.add_row(o, bo)
    }

    fn mlp(&self, tape: &mut Tape<'_, T>, x: Var, m: &Mlp) -> Var {
        let (w1, b1, w2, b2) = (tape.param(m.w1), tape.param(m.b1), tape.param(m.w2), tape.param(m.b2));
        let h = tape.matmul(x, w1);
        let h = tape.add_row(h, b1);
        let h = tape.gelu(h);
        let o = tape.matmul(h, w2);
        tape.add_row(o, b2)
    }

    fn encode(&self, tape: &mut Tape<'_, T>, scene: &Mat<T>) -> Var {
        let mut x = self.tokens(tape, scene, false);
        for blk in &self.layout.enc {
            let h = self.layer_norm(tape, x, &blk.ln1);
            let a = self.attention(tape, h, h, &blk.attn);
            x = tape.add(x, a);
            let h = self.layer_norm(tape, x, &blk.ln2);
            let f = self.mlp(tape, h, &blk.ffn);
            x = tape.add(x, f);
        }
        self.layer_norm(tape, x, &self.layout.enc_ln)
    }

    fn decode(&self, tape: &mut Tape<'_, T>, mut x: Var, mem: Var) -> Var {
        for blk in &self.layout.dec {
            let h = self.layer_norm(tape, x, &blk.ln1);
            let a = self.attention(tape, h, h, &blk.self_attn);
            x = tape.add(x, a);
            let h = self.layer_norm(tape, x, &blk.ln2);
            let c = self.attention(tape, h, mem, &blk.cross);
            x = tape.add(x, c);
            let h = self.layer_norm(tape, x, &blk.ln3);
            let f = self.mlp(tape, h, &blk.ffn);
            x = tape.add(x, f);
        }
        self.layer_norm(tape, x, &self.layout.dec_ln)
    }

    fn check_counts(&self, object: &Mat<T>, scene: &Mat<T>) -> Result<(), NetworkError> {
        if object.nrows() == 0 || scene.nrows() == 0 {
            return Err(NetworkError::Empty);
        }
        if object.ncols() != 3 || scene.ncols() != 3 {
            return Err(NetworkError::Config("points must have 3 columns".into()));
        }
        Ok(())
    }

    /// Records the pose-head graph for normalised `object` (N×3) and `scene`
    /// (M×3) at timestep `t`.
    pub fn pose_graph(
        &self,
        tape: &mut Tape<'_, T>,
        object: &Mat<T>,
        scene: &Mat<T>,
        t: usize,
    ) -> Result<PoseGraph, NetworkError> {
        let Heads::Pose { trans, rot } = &self.layout.heads else {
            return Err(NetworkError::HeadMismatch {
                expected: "pose",
                found: self.cfg.head.name(),
            });
        };
        self.check_counts(object, scene)?;
        let d = self.cfg.embed_dim;
        let mem = self.encode(tape, scene);
        let obj = self.tokens(tape, object, true);
        let emb: Vec<T> = pos_emb(t as f64, d).into_iter().map(T::of).collect();
        let emb = tape.input(Mat::from_shape_vec((1, d), emb).expect("1×d"));
        let x = tape.concat_rows(&[obj, emb]);
        let x = self.decode(tape, x, mem);
        let pooled = tape.mean_rows(x);
        let pooled = tape.add(pooled, emb);
        let pooled = tape.scale(pooled, T::of(0.5));
        Ok(PoseGraph {
            translation: self.mlp(tape, pooled, trans),
            rotation6: self.mlp(tape, pooled, rot),
        })
    }

    /// Records the score-head graph; returns the 1×1 logit.
    pub fn score_graph(&self, tape: &mut Tape<'_, T>, object: &Mat<T>, scene: &Mat<T>) -> Result<Var, NetworkError> {
        let Heads::Score { mlp } = &self.layout.heads else {
            return Err(NetworkError::HeadMismatch {
                expected: "score",
                found: self.cfg.head.name(),
            });
        };
        self.check_counts(object, scene)?;
        let mem = self.encode(tape, scene);
        let obj = self.tokens(tape, object, true);
        let x = self.decode(tape, obj, mem);
        let pooled = tape.mean_rows(x);
        Ok(self.mlp(tape, pooled, mlp))
    }

    /// Scene (M×d) and object ((N+1)×d, timestep token last) input tokens.
    pub fn tokenize(&self, object: &Mat<T>, scene: &Mat<T>, t: usize) -> (Mat<T>, Mat<T>) {
        let mut tape = Tape::new(&self.params);
        let s = self.tokens(&mut tape, scene, false);
        let o = self.tokens(&mut tape, object, true);
        let d = self.cfg.embed_dim;
        let emb: Vec<T> = pos_emb(t as f64, d).into_iter().map(T::of).collect();
        let emb = tape.input(Mat::from_shape_vec((1, d), emb).expect("1×d"));
        let o = tape.concat_rows(&[o, emb]);
        (tape.value(s).to_owned(), tape.value(o).to_owned())
    }

    pub fn forward_pose(&self, object: &Mat<T>, scene: &Mat<T>, t: usize) -> Result<PosePrediction, NetworkError> {
        let mut tape = Tape::new(&self.params);
        let g = self.pose_graph(&mut tape, object, scene, t)?;
        let tr = tape.value(g.translation);
        let r6 = tape.value(g.rotation6);
        let v = |i: usize| r6[[0, i]].f64();
        Ok(PosePrediction {
            rotation: rotation_from_6d(&Vec3::new(v(0), v(1), v(2)), &Vec3::new(v(3), v(4), v(5))),
            translation: Vec3::new(tr[[0, 0]].f64(), tr[[0, 1]].f64(), tr[[0, 2]].f64()),
        })
    }

    /// Success logit.
    pub fn forward_logit(&self, object: &Mat<T>, scene: &Mat<T>) -> Result<f64, NetworkError> {
        let mut tape = Tape::new(&self.params);
        let z = self.score_graph(&mut tape, object, scene)?;
        Ok(tape.value(z)[[0, 0]].f64())
    }

    /// Success probability in (0, 1).
    pub fn forward_score(&self, object: &Mat<T>, scene: &Mat<T>) -> Result<f64, NetworkError> {
        Ok(loss::sigmoid(self.forward_logit(object, scene)?))
    }
}

// ---------------------------------------------------------------------------
// Input preparation

/// Network-ready clouds in normalised coordinates.
#[derive(Clone, Debug)]
pub struct PreparedPair<T: Real> {
    pub object: Mat<T>,
    pub scene: Mat<T>,
    pub frame: NormalizationFrame,
}

/// Resamples to exactly `n` points: farthest-point sampling when there are
/// more (starting from the point farthest from the centroid), cyclic
/// repetition when there are fewer.
pub fn resample(points: &[Vec3], n: usize) -> Vec<Vec3> {
    use std::cmp::Ordering;
    if points.len() == n {
        return points.to_vec();
    }
    if points.len() > n {
        let c = points.iter().sum::<Vec3>() / points.len() as f64;
        let start = points
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| match (*a - c).norm_squared().total_cmp(&(*b - c).norm_squared()) {
                Ordering::Equal => j.cmp(i),
                o => o,
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        return farthest_point_indices(points, n, start).into_iter().map(|i| points[i]).collect();
    }
    (0..n).map(|i| points[i % points.len()]).collect()
}

fn to_mat<T: Real>(points: &[Vec3], frame: &NormalizationFrame) -> Mat<T> {
    let mut m = Mat::zeros((points.len(), 3));
    for (i, p) in points.iter().enumerate() {
        let q = frame.forward(p);
        for k in 0..3 {
            m[[i, k]] = T::of(q[k]);
        }
    }
    m
}

/// Normalises an object/scene pair with the scene's frame (extent floored at
/// `cfg.min_extent`) after resampling both to the configured token counts.
pub fn prepare_pair<T: Real>(object: &[Vec3], scene: &PointCloud, cfg: &ModelConfig) -> PreparedPair<T> {
    let frame = NormalizationFrame::from_scene_with_floor(scene, cfg.min_extent);
    let obj = resample(object, cfg.object_tokens);
    let scn = resample(scene.points(), cfg.scene_tokens);
    PreparedPair {
        object: to_mat(&obj, &frame),
        scene: to_mat(&scn, &frame),
        frame,
    }
}
