//! Forward/backward kernels for the layers used by the embedding networks.
//!
//! Activations of the convolutional stack are laid out `(batch, channels, length)`,
//! dense activations `(batch, features)`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Mat, Scalar, Tensor};
use crate::{Error, Result};

/// Learnable array with its gradient and Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
            adam_m: self.adam_m.cast(),
            adam_v: self.adam_v.cast(),
        }
    }

    /// Uniform(-bound, bound) initialisation.
    pub fn uniform<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
        Self::new(name, Tensor::from_vec(shape, data).expect("length matches shape"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// conv1d, kernel 3, stride 1, zero padding 1

const KERNEL: usize = 3;

/// `col[(ci*3 + k), b*L + l] = x[b, ci, l + k - 1]`, zero outside the sequence.
fn im2col<T: Scalar>(x: &[T], b: usize, c: usize, l: usize) -> Vec<T> {
    let width = b * l;
    let mut col = vec![T::zero(); c * KERNEL * width];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            for k in 0..KERNEL {
                let dst = &mut col[(ci * KERNEL + k) * width + bi * l..][..l];
                match k {
                    0 => dst[1..].copy_from_slice(&src[..l - 1]),
                    1 => dst.copy_from_slice(src),
                    _ => dst[..l - 1].copy_from_slice(&src[1..]),
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], b: usize, c: usize, l: usize) -> Vec<T> {
    let width = b * l;
    let mut x = vec![T::zero(); b * c * l];
    for bi in 0..b {
        for ci in 0..c {
            let dst = &mut x[(bi * c + ci) * l..(bi * c + ci + 1) * l];
            for k in 0..KERNEL {
                let src = &col[(ci * KERNEL + k) * width + bi * l..][..l];
                match k {
                    0 => dst[..l - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d = *d + s),
                    1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s),
                    _ => dst[1..].iter_mut().zip(&src[..l - 1]).for_each(|(d, &s)| *d = *d + s),
                }
            }
        }
    }
    x
}

fn check_conv_shapes<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (b, c_in, l) = input.dims3()?;
    let (c_out, wc, wk) = weight.dims3()?;
    if wc != c_in || wk != KERNEL {
        return Err(Error::shape(format!(
            "conv weight {:?} does not match input channels {c_in} / kernel {KERNEL}",
            weight.shape()
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(format!("conv bias {:?} vs {c_out} channels", bias.shape())));
    }
    if l == 0 || b == 0 {
        return Err(Error::shape("conv input with empty batch or length"));
    }
    Ok((b, c_in, l, c_out))
}

fn conv_forward_col<T: Scalar>(col: &[T], weight: &Tensor<T>, bias: &Tensor<T>, b: usize, c_in: usize, l: usize, c_out: usize) -> Tensor<T> {
    let width = b * l;
    let mut tmp = vec![T::zero(); c_out * width];
    gemm(Mat::new(weight.data(), c_out, c_in * KERNEL), Mat::new(col, c_in * KERNEL, width), T::zero(), &mut tmp);
    let mut out = Tensor::zeros(&[b, c_out, l]);
    let o = out.data_mut();
    for co in 0..c_out {
        let bv = bias.data()[co];
        for bi in 0..b {
            let src = &tmp[co * width + bi * l..][..l];
            let dst = &mut o[(bi * c_out + co) * l..][..l];
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + bv);
        }
    }
    out
}

/// Gradients returned by a conv1d backward pass.
#[derive(Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn conv_backward_col<T: Scalar>(
    col: &[T],
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    dims: (usize, usize, usize, usize),
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (b, c_in, l, c_out) = dims;
    if grad_out.shape() != [b, c_out, l] {
        return Err(Error::shape(format!(
            "conv grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [b, c_out, l]
        )));
    }
    let width = b * l;
    // (B, Cout, L) -> (Cout, B*L)
    let mut dy = vec![T::zero(); c_out * width];
    let g = grad_out.data();
    for bi in 0..b {
        for co in 0..c_out {
            dy[co * width + bi * l..][..l].copy_from_slice(&g[(bi * c_out + co) * l..][..l]);
        }
    }
    let mut dw = Tensor::zeros(&[c_out, c_in, KERNEL]);
    gemm(Mat::new(&dy, c_out, width), Mat::new(col, c_in * KERNEL, width).t(), T::zero(), dw.data_mut());
    let db = Tensor::from_vec(&[c_out], dy.chunks(width).map(|r| r.iter().copied().sum()).collect())?;
    let input = if need_input {
        let mut dcol = vec![T::zero(); c_in * KERNEL * width];
        gemm(Mat::new(weight.data(), c_out, c_in * KERNEL).t(), Mat::new(&dy, c_out, width), T::zero(), &mut dcol);
        Some(Tensor::from_vec(&[b, c_in, l], col2im(&dcol, b, c_in, l))?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weight: dw,
        bias: db,
    })
}

/// Cross-correlation with kernel 3, stride 1, zero padding 1: `(B, C_in, L) -> (B, C_out, L)`.
pub fn conv1d_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c_in, l, c_out) = check_conv_shapes(input, weight, bias)?;
    let col = im2col(input.data(), b, c_in, l);
    Ok(conv_forward_col(&col, weight, bias, b, c_in, l, c_out))
}

pub fn conv1d_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    let dims = check_conv_shapes(input, weight, bias)?;
    let col = im2col(input.data(), dims.0, dims.1, dims.2);
    conv_backward_col(&col, weight, grad_out, dims, true)
}

/// Conv layer holding its parameters and the im2col buffer of the last forward pass.
#[derive(Clone, Debug)]
pub struct Conv1d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<(Vec<T>, (usize, usize, usize, usize))>,
}

impl<T: Scalar> Conv1d<T> {
    /// PyTorch-style default init: U(±1/√fan_in) for weights and bias.
    pub fn new<R: Rng + ?Sized>(name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((c_in * KERNEL) as f64).sqrt();
        Self {
            weight: Parameter::uniform(format!("{name}.weight"), &[c_out, c_in, KERNEL], bound, rng),
            bias: Parameter::uniform(format!("{name}.bias"), &[c_out], bound, rng),
            cache: None,
        }
    }

    pub fn from_params(weight: Parameter<T>, bias: Parameter<T>) -> Self {
        Self { weight, bias, cache: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>, keep: bool) -> Result<Tensor<T>> {
        let dims = check_conv_shapes(input, &self.weight.value, &self.bias.value)?;
        let (b, c_in, l, c_out) = dims;
        let col = im2col(input.data(), b, c_in, l);
        let out = conv_forward_col(&col, &self.weight.value, &self.bias.value, b, c_in, l, c_out);
        self.cache = keep.then_some((col, dims));
        Ok(out)
    }

    /// Accumulates parameter gradients; returns the input gradient when requested.
    pub fn backward(&mut self, grad_out: &Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        let (col, dims) = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("conv backward without cached forward"))?;
        let g = conv_backward_col(&col, &self.weight.value, grad_out, dims, need_input)?;
        add_assign(self.weight.grad.data_mut(), g.weight.data());
        add_assign(self.bias.grad.data_mut(), g.bias.data());
        Ok(g.input)
    }
}

fn add_assign<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

// ---------------------------------------------------------------------------
// average pooling, kernel 2, stride 2

/// Non-overlapping mean over windows of 2 along the last axis; a trailing odd element is dropped.
pub fn avgpool1d_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, l) = input.dims3()?;
    if l < 2 {
        return Err(Error::shape(format!("avgpool needs length >= 2, got {l}")));
    }
    let lo = l / 2;
    let half = T::from_f64(0.5);
    let mut out = Tensor::zeros(&[b, c, lo]);
    for (dst, src) in out.data_mut().chunks_mut(lo).zip(input.data().chunks(l)) {
        for (i, d) in dst.iter_mut().enumerate() {
            *d = (src[2 * i] + src[2 * i + 1]) * half;
        }
    }
    Ok(out)
}

/// Backward of [`avgpool1d_forward`] for an input of length `input_len`.
pub fn avgpool1d_backward<T: Scalar>(grad_out: &Tensor<T>, input_len: usize) -> Result<Tensor<T>> {
    let (b, c, lo) = grad_out.dims3()?;
    if input_len / 2 != lo {
        return Err(Error::shape(format!("avgpool grad length {lo} vs input length {input_len}")));
    }
    let half = T::from_f64(0.5);
    let mut dx = Tensor::zeros(&[b, c, input_len]);
    for (dst, src) in dx.data_mut().chunks_mut(input_len).zip(grad_out.data().chunks(lo)) {
        for (i, &g) in src.iter().enumerate() {
            dst[2 * i] = g * half;
            dst[2 * i + 1] = g * half;
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// relu

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|x| *x = x.max(T::zero()));
    out
}

/// `output` may be either the relu input or its output; both have the same positive set.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "relu grad {:?} vs activation {:?}",
            grad_out.shape(),
            output.shape()
        )));
    }
    let mut dx = grad_out.clone();
    dx.data_mut()
        .iter_mut()
        .zip(output.data())
        .for_each(|(g, &y)| {
            if y <= T::zero() {
                *g = T::zero();
            }
        });
    Ok(dx)
}

// ---------------------------------------------------------------------------
// linear

fn check_linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (b, f_in) = input.dims2()?;
    let (f_out, w_in) = weight.dims2()?;
    if w_in != f_in || bias.shape() != [f_out] {
        return Err(Error::shape(format!(
            "linear weight {:?} / bias {:?} vs input {:?}",
            weight.shape(),
            bias.shape(),
            input.shape()
        )));
    }
    Ok((b, f_in, f_out))
}

/// `y = x · Wᵀ + b` with `W: (F_out, F_in)`.
pub fn linear_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, f_in, f_out) = check_linear(input, weight, bias)?;
    let mut out = Tensor::zeros(&[b, f_out]);
    for row in out.data_mut().chunks_mut(f_out) {
        row.copy_from_slice(bias.data());
    }
    gemm(Mat::new(input.data(), b, f_in), Mat::new(weight.data(), f_out, f_in).t(), T::one(), out.data_mut());
    Ok(out)
}

#[derive(Debug)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (b, f_in, f_out) = check_linear(input, weight, bias)?;
    if grad_out.shape() != [b, f_out] {
        return Err(Error::shape(format!("linear grad_out {:?}, expected {:?}", grad_out.shape(), [b, f_out])));
    }
    let mut dx = Tensor::zeros(&[b, f_in]);
    gemm(Mat::new(grad_out.data(), b, f_out), Mat::new(weight.data(), f_out, f_in), T::zero(), dx.data_mut());
    let mut dw = Tensor::zeros(&[f_out, f_in]);
    gemm(Mat::new(grad_out.data(), b, f_out).t(), Mat::new(input.data(), b, f_in), T::zero(), dw.data_mut());
    let mut db = Tensor::zeros(&[f_out]);
    for row in grad_out.data().chunks(f_out) {
        add_assign(db.data_mut(), row);
    }
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, f_in: usize, f_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (f_in as f64).sqrt();
        Self {
            weight: Parameter::uniform(format!("{name}.weight"), &[f_out, f_in], bound, rng),
            bias: Parameter::uniform(format!("{name}.bias"), &[f_out], bound, rng),
            cache: None,
        }
    }

    pub fn from_params(weight: Parameter<T>, bias: Parameter<T>) -> Self {
        Self { weight, bias, cache: None }
    }

    pub fn forward(&mut self, input: Tensor<T>, keep: bool) -> Result<Tensor<T>> {
        let out = linear_forward(&input, &self.weight.value, &self.bias.value)?;
        self.cache = keep.then_some(input);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("linear backward without cached forward"))?;
        let g = linear_backward(&input, &self.weight.value, &self.bias.value, grad_out)?;
        add_assign(self.weight.grad.data_mut(), g.weight.data());
        add_assign(self.bias.grad.data_mut(), g.bias.data());
        Ok(g.input)
    }
}

// ---------------------------------------------------------------------------
// batch norm over (B, F)

/// Batch normalisation parameters and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormState<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(name: &str, features: usize, eps: f64, momentum: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("batch norm eps must be positive, got {eps}")));
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::invalid(format!("batch norm momentum must be in (0,1), got {momentum}")));
        }
        Ok(Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[features], T::one())),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[features])),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], T::one()),
            eps,
            momentum,
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

/// Values kept from a train-mode forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Train mode normalises by batch statistics (biased variance, `eps` inside the square
/// root) and updates the running statistics; eval mode uses the running statistics.
pub fn batchnorm1d_forward<T: Scalar>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let (b, f) = input.dims2()?;
    if f != state.features() {
        return Err(Error::shape(format!("batch norm over {} features, input {:?}", state.features(), input.shape())));
    }
    let eps = T::from_f64(state.eps);
    let x = input.data();
    let (mean, var) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(Error::invalid(format!("train-mode batch norm needs batch >= 2, got {b}")));
            }
            batch_moments(x, b, f)
        }
        Mode::Eval => (state.running_mean.data().to_vec(), state.running_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(&[b, f]);
    for (dst, src) in xhat.data_mut().chunks_mut(f).zip(x.chunks(f)) {
        for j in 0..f {
            dst[j] = (src[j] - mean[j]) * inv_std[j];
        }
    }
    let mut out = xhat.clone();
    let (g, be) = (state.gamma.value.data(), state.beta.value.data());
    for row in out.data_mut().chunks_mut(f) {
        for j in 0..f {
            row[j] = row[j] * g[j] + be[j];
        }
    }
    if mode == Mode::Eval {
        return Ok((out, None));
    }
    let m = T::from_f64(state.momentum);
    let unbias = T::from_f64(b as f64 / (b as f64 - 1.0));
    for j in 0..f {
        let rm = &mut state.running_mean.data_mut()[j];
        *rm = (T::one() - m) * *rm + m * mean[j];
        let rv = &mut state.running_var.data_mut()[j];
        *rv = (T::one() - m) * *rv + m * var[j] * unbias;
    }
    Ok((out, Some(BatchNormCache { xhat, inv_std })))
}

fn batch_moments<T: Scalar>(x: &[T], b: usize, f: usize) -> (Vec<T>, Vec<T>) {
    let n = T::from_f64(b as f64);
    let mut mean = vec![T::zero(); f];
    for row in x.chunks(f) {
        add_assign(&mut mean, row);
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut var = vec![T::zero(); f];
    for row in x.chunks(f) {
        for j in 0..f {
            let d = row[j] - mean[j];
            var[j] = var[j] + d * d;
        }
    }
    var.iter_mut().for_each(|v| *v = *v / n);
    (mean, var)
}

/// Full chain rule through the batch statistics; accumulates gamma/beta gradients.
pub fn batchnorm1d_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    state: &mut BatchNormState<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, f) = cache.xhat.dims2()?;
    if grad_out.shape() != [b, f] {
        return Err(Error::shape(format!("batch norm grad {:?}, expected {:?}", grad_out.shape(), [b, f])));
    }
    let g = grad_out.data();
    let xhat = cache.xhat.data();
    let mut sum_g = vec![T::zero(); f];
    let mut sum_gx = vec![T::zero(); f];
    for (gr, xr) in g.chunks(f).zip(xhat.chunks(f)) {
        for j in 0..f {
            sum_g[j] = sum_g[j] + gr[j];
            sum_gx[j] = sum_gx[j] + gr[j] * xr[j];
        }
    }
    add_assign(state.gamma.grad.data_mut(), &sum_gx);
    add_assign(state.beta.grad.data_mut(), &sum_g);
    let gamma = state.gamma.value.data();
    let n = T::from_f64(b as f64);
    let mut dx = Tensor::zeros(&[b, f]);
    for ((dr, gr), xr) in dx.data_mut().chunks_mut(f).zip(g.chunks(f)).zip(xhat.chunks(f)) {
        for j in 0..f {
            // d xhat = g * gamma; sums scale by gamma as well.
            let k = gamma[j] * cache.inv_std[j] / n;
            dr[j] = k * (n * gr[j] - sum_g[j] - xr[j] * sum_gx[j]);
        }
    }
    Ok(dx)
}

/// Batch norm layer wrapping [`BatchNormState`] with its forward cache.
#[derive(Clone, Debug)]
pub struct BatchNorm1d<T> {
    pub state: BatchNormState<T>,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(state: BatchNormState<T>) -> Self {
        Self { state, cache: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode, keep: bool) -> Result<Tensor<T>> {
        let (out, cache) = batchnorm1d_forward(input, &mut self.state, mode)?;
        self.cache = if keep { cache } else { None };
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("batch norm backward without cached train-mode forward"))?;
        batchnorm1d_backward(&cache, &mut self.state, grad_out)
    }
}
