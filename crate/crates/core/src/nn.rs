//! Small `f64` layer toolkit with explicit forward caches and hand-written
//! backward passes, plus Adam.
//!
//! Gradients live in a value of the same type as the module they belong to
//! (see [`zeros_like`]), so parameters and gradients can be walked in
//! lockstep by name.

use std::collections::BTreeMap;

use ndarray::{
    s, Array1, Array2, Array3, Array4, ArrayD, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD,
    Axis,
};
use rand::Rng;

use crate::error::{Error, Result};

pub struct ParamRef<'a> {
    pub name: String,
    pub value: ArrayViewD<'a, f64>,
    pub trainable: bool,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub value: ArrayViewMutD<'a, f64>,
    pub trainable: bool,
}

/// Anything that owns named tensors. Both walks must visit the same tensors
/// in the same order.
pub trait Module {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

macro_rules! visit {
    ($out:expr, $prefix:expr, $($name:literal => $field:expr, $trainable:expr);+ $(;)?) => {
        $( $out.push(ParamRef { name: join($prefix, $name), value: $field.view().into_dyn(), trainable: $trainable }); )+
    };
}

macro_rules! visit_mut {
    ($out:expr, $prefix:expr, $($name:literal => $field:expr, $trainable:expr);+ $(;)?) => {
        $( $out.push(ParamMut { name: join($prefix, $name), value: $field.view_mut().into_dyn(), trainable: $trainable }); )+
    };
}

pub fn state_dict(m: &dyn Module) -> Vec<(String, ArrayD<f64>)> {
    let mut out = Vec::new();
    m.params("", &mut out);
    out.into_iter()
        .map(|p| (p.name, p.value.to_owned()))
        .collect()
}

/// Loads every tensor of `m` from `tensors`. Extra entries are ignored;
/// missing entries and shape mismatches are errors.
pub fn load_state(
    m: &mut dyn Module,
    prefix: &str,
    tensors: &BTreeMap<String, ArrayD<f64>>,
) -> Result<()> {
    let mut slots = Vec::new();
    m.params_mut(prefix, &mut slots);
    for mut slot in slots {
        let src = tensors
            .get(&slot.name)
            .ok_or_else(|| Error::shape(format!("missing tensor `{}`", slot.name)))?;
        if src.shape() != slot.value.shape() {
            return Err(Error::shape(format!(
                "tensor `{}` has shape {:?}, expected {:?}",
                slot.name,
                src.shape(),
                slot.value.shape()
            )));
        }
        slot.value.assign(src);
    }
    Ok(())
}

/// A copy of `m` with every tensor zeroed; used as a gradient accumulator.
pub fn zeros_like<M: Module + Clone>(m: &M) -> M {
    let mut g = m.clone();
    let mut slots = Vec::new();
    g.params_mut("", &mut slots);
    for mut s in slots {
        s.value.fill(0.0);
    }
    g
}

/// `acc += g`, tensor by tensor.
pub fn add_assign<M: Module>(acc: &mut M, g: &M) {
    let mut a = Vec::new();
    acc.params_mut("", &mut a);
    let mut b = Vec::new();
    g.params("", &mut b);
    for (mut x, y) in a.into_iter().zip(b) {
        x.value += &y.value;
    }
}

pub fn num_trainable(m: &dyn Module) -> usize {
    let mut out = Vec::new();
    m.params("", &mut out);
    out.iter()
        .filter(|p| p.trainable)
        .map(|p| p.value.len())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform init in ±1/√in for weights and bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features.max(1) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((out_features, in_features), |_| {
                rng.gen_range(-bound..bound)
            }),
            bias: Array1::from_shape_fn(out_features, |_| rng.gen_range(-bound..bound)),
        }
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Array2::zeros((out_features, in_features)),
            bias: Array1::zeros(out_features),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.nrows()
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.in_features() {
            return Err(Error::shape(format!(
                "linear layer expects width {}, got {width}",
                self.in_features()
            )));
        }
        Ok(())
    }

    /// Rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    pub fn forward_vec(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_width(x.len())?;
        Ok(self.weight.dot(&x) + &self.bias)
    }

    /// Accumulates parameter gradients into `grads`; returns `∂L/∂x`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        grad_out: ArrayView2<f64>,
        grads: &mut Linear,
    ) -> Array2<f64> {
        grads.weight += &grad_out.t().dot(&x);
        grads.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight)
    }

    pub fn backward_vec(
        &self,
        x: ArrayView1<f64>,
        grad_out: ArrayView1<f64>,
        grads: &mut Linear,
    ) -> Array1<f64> {
        let outer = grad_out
            .view()
            .insert_axis(Axis(1))
            .dot(&x.view().insert_axis(Axis(0)));
        grads.weight += &outer;
        grads.bias += &grad_out;
        self.weight.t().dot(&grad_out)
    }
}

impl Module for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        visit!(out, prefix, "weight" => self.weight, true; "bias" => self.bias, true);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        visit_mut!(out, prefix, "weight" => self.weight, true; "bias" => self.bias, true);
    }
}

/// Square-kernel 2-D convolution over a single `(C, H, W)` image, computed
/// as im2col followed by a matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `out × in × k × k`.
    pub weight: Array4<f64>,
    pub bias: Option<Array1<f64>>,
    pub stride: usize,
    pub padding: usize,
}

fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

fn im2col(x: &Array3<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let mut cols = Array2::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        for ki in 0..k {
            for kj in 0..k {
                let mut row = cols.row_mut((ci * k + ki) * k + kj);
                let row = row.as_slice_mut().expect("standard layout");
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            row[oy * wo + ox] = plane[[iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    cols: &Array2<f64>,
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let (ho, wo) = (out_size(h, k, stride, pad), out_size(w, k, stride, pad));
    let mut x = Array3::zeros((c, h, w));
    for ci in 0..c {
        let mut plane = x.index_axis_mut(Axis(0), ci);
        for ki in 0..k {
            for kj in 0..k {
                let row = cols.row((ci * k + ki) * k + kj);
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[[iy as usize, ix as usize]] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// What [`Conv2d::backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    in_shape: (usize, usize, usize),
}

impl Conv2d {
    /// Kaiming-uniform init with the given fan mode; no bias unless asked.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        fan_out: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan = if fan_out {
            out_ch * k * k
        } else {
            in_ch * k * k
        };
        let bound = (6.0 / fan as f64).sqrt();
        Self {
            weight: Array4::from_shape_fn((out_ch, in_ch, k, k), |_| rng.gen_range(-bound..bound)),
            bias: bias.then(|| Array1::zeros(out_ch)),
            stride,
            padding,
        }
    }

    fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let (o, c, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((o, c * k * k))
            .expect("contiguous conv weight")
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (_, h, w) = x.dim();
        let k = self.kernel();
        let cols = im2col(x, k, self.stride, self.padding);
        let mut out = self.weight_matrix().dot(&cols);
        if let Some(b) = &self.bias {
            out += &b.view().insert_axis(Axis(1));
        }
        let (ho, wo) = (
            out_size(h, k, self.stride, self.padding),
            out_size(w, k, self.stride, self.padding),
        );
        let out = out
            .into_shape_with_order((self.weight.dim().0, ho, wo))
            .expect("conv output shape");
        (
            out,
            ConvCache {
                cols,
                in_shape: x.dim(),
            },
        )
    }

    pub fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &Array3<f64>,
        grads: &mut Conv2d,
    ) -> Array3<f64> {
        let (o, ho, wo) = grad_out.dim();
        let g = grad_out
            .view()
            .into_shape_with_order((o, ho * wo))
            .expect("contiguous gradient");
        let gw = g.dot(&cache.cols.t());
        grads.weight += &gw
            .into_shape_with_order(self.weight.dim())
            .expect("weight gradient shape");
        if let Some(gb) = grads.bias.as_mut() {
            *gb += &g.sum_axis(Axis(1));
        }
        let gcols = self.weight_matrix().t().dot(&g);
        col2im(
            &gcols,
            cache.in_shape,
            self.kernel(),
            self.stride,
            self.padding,
        )
    }
}

impl Module for Conv2d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        visit!(out, prefix, "weight" => self.weight, true);
        if let Some(b) = &self.bias {
            visit!(out, prefix, "bias" => b, true);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        visit_mut!(out, prefix, "weight" => self.weight, true);
        if let Some(b) = &mut self.bias {
            visit_mut!(out, prefix, "bias" => b, true);
        }
    }
}

/// Batch normalization with fixed running statistics. Frames of one video
/// are near-duplicates, so per-batch statistics would be meaningless; the
/// layer therefore behaves the same in training and inference and only the
/// affine parameters learn.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub weight: Array1<f64>,
    pub bias: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

const BN_EPS: f64 = 1e-5;

impl BatchNorm2d {
    pub fn new(ch: usize) -> Self {
        Self {
            weight: Array1::ones(ch),
            bias: Array1::zeros(ch),
            running_mean: Array1::zeros(ch),
            running_var: Array1::ones(ch),
        }
    }

    fn inv_std(&self) -> Array1<f64> {
        self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt())
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let inv = self.inv_std();
        let mut y = x.clone();
        for (c, mut plane) in y.axis_iter_mut(Axis(0)).enumerate() {
            let scale = self.weight[c] * inv[c];
            let shift = self.bias[c] - self.running_mean[c] * scale;
            plane.mapv_inplace(|v| v * scale + shift);
        }
        y
    }

    /// `x` is the layer input.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        grad_out: &Array3<f64>,
        grads: &mut BatchNorm2d,
    ) -> Array3<f64> {
        let inv = self.inv_std();
        let mut gx = grad_out.clone();
        for (c, mut plane) in gx.axis_iter_mut(Axis(0)).enumerate() {
            let g = grad_out.index_axis(Axis(0), c);
            let xin = x.index_axis(Axis(0), c);
            let mean = self.running_mean[c];
            grads.weight[c] += g
                .iter()
                .zip(xin.iter())
                .map(|(g, x)| g * (x - mean) * inv[c])
                .sum::<f64>();
            grads.bias[c] += g.sum();
            let scale = self.weight[c] * inv[c];
            plane.mapv_inplace(|v| v * scale);
        }
        gx
    }
}

impl Module for BatchNorm2d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        visit!(out, prefix,
            "weight" => self.weight, true;
            "bias" => self.bias, true;
            "running_mean" => self.running_mean, false;
            "running_var" => self.running_var, false);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        visit_mut!(out, prefix,
            "weight" => self.weight, true;
            "bias" => self.bias, true;
            "running_mean" => self.running_mean, false;
            "running_var" => self.running_var, false);
    }
}

pub fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

/// `out` is the ReLU output.
pub fn relu_backward(out: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = grad_out.clone();
    g.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

/// 2×2 average pooling with stride 2 (odd trailing rows/columns dropped).
pub fn avg_pool2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
        x.slice(s![ci, 2 * y..2 * y + 2, 2 * xx..2 * xx + 2]).sum() * 0.25
    })
}

pub fn avg_pool2_backward(in_shape: (usize, usize, usize), grad_out: &Array3<f64>) -> Array3<f64> {
    let mut g = Array3::zeros(in_shape);
    for ((ci, y, x), &v) in grad_out.indexed_iter() {
        g.slice_mut(s![ci, 2 * y..2 * y + 2, 2 * x..2 * x + 2])
            .fill(v * 0.25);
    }
    g
}

/// 3×3 max pooling, stride 2, padding 1; returns the flat argmax of each
/// window for the backward pass.
pub fn max_pool3(x: &Array3<f64>) -> (Array3<f64>, Vec<usize>) {
    let (c, h, w) = x.dim();
    let (ho, wo) = (out_size(h, 3, 2, 1), out_size(w, 3, 2, 1));
    let mut out = Array3::zeros((c, ho, wo));
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = ((oy * 2 + ky) as isize - 1, (ox * 2 + kx) as isize - 1);
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let v = x[[ci, iy as usize, ix as usize]];
                        if v > best {
                            best = v;
                            best_at = (ci * h + iy as usize) * w + ix as usize;
                        }
                    }
                }
                out[[ci, oy, ox]] = best;
                arg.push(best_at);
            }
        }
    }
    (out, arg)
}

pub fn max_pool3_backward(
    in_shape: (usize, usize, usize),
    argmax: &[usize],
    grad_out: &Array3<f64>,
) -> Array3<f64> {
    let mut g = Array3::<f64>::zeros(in_shape);
    let flat = g.as_slice_mut().expect("standard layout");
    for (&at, &v) in argmax.iter().zip(grad_out.iter()) {
        flat[at] += v;
    }
    g
}

pub fn global_avg_pool(x: &Array3<f64>) -> Array1<f64> {
    let (_, h, w) = x.dim();
    x.sum_axis(Axis(2)).sum_axis(Axis(1)) / (h * w) as f64
}

pub fn global_avg_pool_backward(
    in_shape: (usize, usize, usize),
    grad_out: ArrayView1<f64>,
) -> Array3<f64> {
    let (c, h, w) = in_shape;
    let n = (h * w) as f64;
    Array3::from_shape_fn((c, h, w), |(ci, _, _)| grad_out[ci] / n)
}

/// Spatial sum per channel; unlike the average its output grows with the
/// map size, which keeps small-backbone features at a usable magnitude.
pub fn global_sum_pool(x: &Array3<f64>) -> Array1<f64> {
    x.sum_axis(Axis(2)).sum_axis(Axis(1))
}

pub fn global_sum_pool_backward(
    in_shape: (usize, usize, usize),
    grad_out: ArrayView1<f64>,
) -> Array3<f64> {
    let (c, h, w) = in_shape;
    Array3::from_shape_fn((c, h, w), |(ci, _, _)| grad_out[ci])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias-corrected moments:
/// `θ ← θ − lr · m̂ / (√v̂ + ε)`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: i32,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update of every trainable tensor of `params` using the matching
    /// tensor of `grads`.
    pub fn step(&mut self, params: &mut dyn Module, grads: &dyn Module) -> Result<()> {
        let mut ps = Vec::new();
        params.params_mut("", &mut ps);
        let mut gs = Vec::new();
        grads.params("", &mut gs);
        let pairs: Vec<_> = ps
            .into_iter()
            .zip(gs)
            .filter(|(p, _)| p.trainable)
            .collect();
        if self.m.is_empty() {
            self.m = pairs
                .iter()
                .map(|(p, _)| ArrayD::zeros(p.value.raw_dim()))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != pairs.len() {
            return Err(Error::shape(
                "optimizer state does not match the parameter set",
            ));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        for (((mut p, g), m), v) in pairs.into_iter().zip(&mut self.m).zip(&mut self.v) {
            if p.name != g.name || p.value.shape() != g.value.shape() {
                return Err(Error::shape(format!(
                    "gradient `{}` does not match parameter `{}`",
                    g.name, p.name
                )));
            }
            ndarray::Zip::from(&mut p.value)
                .and(&g.value)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
