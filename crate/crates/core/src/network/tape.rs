//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Tape`] records one forward pass. Parameters are referenced, not
//! copied; [`Tape::backward`] accumulates parameter gradients into a caller
//! supplied buffer so that several tapes (one per sample) can share it.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;

pub type Mat<T> = Array2<T>;

/// Floating-point element type of the network.
pub trait Real:
    LinalgScalar
    + Float
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    /// Elementwise `exp` in place.
    fn exp_slice(xs: &mut [Self]);
    /// Elementwise `tanh` in place.
    fn tanh_slice(xs: &mut [Self]);
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
    fn exp_slice(xs: &mut [Self]) {
        for x in xs {
            *x = exp_f32(*x);
        }
    }
    fn tanh_slice(xs: &mut [Self]) {
        for x in xs {
            *x = tanh_f32(*x);
        }
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
    fn exp_slice(xs: &mut [Self]) {
        for x in xs {
            *x = x.exp();
        }
    }
    fn tanh_slice(xs: &mut [Self]) {
        for x in xs {
            *x = x.tanh();
        }
    }
}

/// Branch-free `exp` that the compiler can vectorise (Cephes polynomial,
/// about 1 ulp on the clamped range).
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0; // 1.5 * 2^23, rounds to nearest
    let x = x.clamp(-87.0, 88.0);
    let n = (x * std::f32::consts::LOG2_E + MAGIC) - MAGIC;
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 0.166_666_65;
    p = p * r + 0.5;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

#[inline(always)]
fn tanh_f32(x: f32) -> f32 {
    let t = exp_f32(-2.0 * x.abs());
    ((1.0 - t) / (1.0 + t)).copysign(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// `a + 1·b` with `b` a single row.
    AddRow(Var, Var),
    Scale(Var, T),
    /// Keeps `tanh` of the inner argument for the backward pass.
    Gelu(Var, Mat<T>),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat<T>,
        inv_std: Vec<T>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    MeanRows(Var),
}

enum Value<T> {
    Owned(Mat<T>),
    Param(usize),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p, T: Real> {
    params: &'p [Mat<T>],
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_grad<T: Real>(x: T, th: T) -> T {
    let half = T::of(0.5);
    half * (T::one() + th) + half * x * (T::one() - th * th) * T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x)
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p [Mat<T>]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, T> {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m.view(),
            Value::Param(i) => self.params[*i].view(),
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat<T>) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.nodes.push(Node {
            value: Value::Param(index),
            op: Op::Param(index),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = &self.value(a) + &self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).mapv(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (c, k) = (T::of(GELU_C), T::of(GELU_A));
        let mut th = x.mapv(|x| c * (x + k * x * x * x));
        T::tanh_slice(th.as_slice_mut().expect("fresh array is contiguous"));
        let half = T::of(0.5);
        let mut v = x.to_owned();
        Zip::from(&mut v).and(&th).for_each(|v, &t| *v = half * *v * (T::one() + t));
        self.push(v, Op::Gelu(a, th))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).to_owned();
        for mut row in v.rows_mut() {
            let m = row.fold(T::neg_infinity(), |acc, &x| acc.max(x));
            let r = row.as_slice_mut().expect("owned rows are contiguous");
            for x in r.iter_mut() {
                *x -= m;
            }
            T::exp_slice(r);
            let inv = T::one() / r.iter().fold(T::zero(), |a, &b| a + b);
            for x in r.iter_mut() {
                *x *= inv;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = T::of(xv.ncols() as f64);
        let mut xhat = xv.to_owned();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.fold(T::zero(), |acc, &v| acc + v * v) / n;
            let is = T::one() / (var + T::of(LAYER_NORM_EPS)).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let out = &(&xhat * &self.value(gamma)) + &self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start, len))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = T::of(x.nrows() as f64);
        let v = (x.sum_axis(Axis(0)) / n).insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Back-propagates `seeds` and adds parameter gradients into `param_grads`.
    pub fn backward(&self, seeds: &[(Var, Mat<T>)], param_grads: &mut [Mat<T>]) {
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads[v.0], g.view());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(p) => param_grads[*p] += &g,
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    add_matmul(&mut grads[a.0], g.view(), bv.t(), av.dim());
                    add_matmul(&mut grads[b.0], av.t(), g.view(), bv.dim());
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    add_matmul(&mut grads[a.0], g.view(), bv, av.dim());
                    add_matmul(&mut grads[b.0], g.t(), av, bv.dim());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.view());
                    accumulate(&mut grads[b.0], g.view());
                }
                Op::AddRow(a, row) => {
                    let r = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], r.view());
                    accumulate(&mut grads[a.0], g.view());
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads[a.0], g.mapv(|x| x * s).view());
                }
                Op::Gelu(a, th) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .and(th)
                        .for_each(|d, &x, &t| *d *= gelu_grad(x, t));
                    accumulate(&mut grads[a.0], d.view());
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x <= T::zero() {
                            *d = T::zero();
                        }
                    });
                    accumulate(&mut grads[a.0], d.view());
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(idx));
                    let mut d = g;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot = drow.iter().zip(yrow.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &y| *d = y * (*d - dot));
                    }
                    accumulate(&mut grads[a.0], d.view());
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[gamma.0], dgamma.view());
                    accumulate(&mut grads[beta.0], dbeta.view());
                    let mut dxhat = g;
                    dxhat *= &gv;
                    let n = T::of(dxhat.ncols() as f64);
                    for ((mut drow, xrow), &is) in dxhat.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                        let m1 = drow.sum() / n;
                        let m2 = drow.iter().zip(xrow.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * b) / n;
                        Zip::from(&mut drow).and(&xrow).for_each(|d, &xh| *d = is * (*d - m1 - xh * m2));
                    }
                    accumulate(&mut grads[x.0], dxhat.view());
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        accumulate(&mut grads[p.0], g.slice(s![start..start + rows, ..]));
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = self.value(*p).ncols();
                        accumulate(&mut grads[p.0], g.slice(s![.., start..start + cols]));
                        start += cols;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let av = self.value(*a);
                    let slot = grads[a.0].get_or_insert_with(|| Mat::zeros(av.dim()));
                    let mut part = slot.slice_mut(s![.., *start..*start + *len]);
                    part += &g;
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let n = T::of(av.nrows() as f64);
                    let row = g.mapv(|x| x / n);
                    let slot = grads[a.0].get_or_insert_with(|| Mat::zeros(av.dim()));
                    *slot += &row;
                }
            }
        }
    }
}

fn accumulate<T: Real>(slot: &mut Option<Mat<T>>, g: ArrayView2<'_, T>) {
    match slot {
        Some(m) => *m += &g,
        None => *slot = Some(g.to_owned()),
    }
}

fn add_matmul<T: Real>(slot: &mut Option<Mat<T>>, a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, dim: (usize, usize)) {
    let m = slot.get_or_insert_with(|| Mat::zeros(dim));
    general_mat_mul(T::one(), &a, &b, T::one(), m);
}
