use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ndnet::{
    avgpool1d_backward, avgpool1d_forward, batchnorm1d_forward, conv1d_forward, linear_forward, relu_backward,
    relu_forward, BatchNorm1d, BatchNormState, Conv1d, Linear, Mode, Parameter, Scalar, Tensor,
};
use crate::seqcore::{write_one_hot, Alphabet, Sequence};
use crate::{Error, Result};

/// Width of the hidden fully connected layer.
pub const HIDDEN: usize = 512;
/// Batch-norm eps of the final embedding layer.
pub const EMBEDDING_BN_EPS: f64 = 1e-9;
pub const BN_MOMENTUM: f64 = 0.1;
/// Number of pooling stages in every architecture.
const POOL_STAGES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "cnn5")]
    Cnn5,
    #[serde(rename = "cnn10")]
    Cnn10,
    #[serde(rename = "cnn5w")]
    Cnn5W,
    #[serde(rename = "cnn10w")]
    Cnn10W,
}

impl ArchKind {
    pub fn channels(self) -> usize {
        match self {
            ArchKind::Cnn5 | ArchKind::Cnn10 => 64,
            ArchKind::Cnn5W | ArchKind::Cnn10W => 256,
        }
    }

    pub fn conv_layers(self) -> usize {
        match self {
            ArchKind::Cnn5 | ArchKind::Cnn5W => 5,
            ArchKind::Cnn10 | ArchKind::Cnn10W => 10,
        }
    }

    /// Whether conv layer `i` (0-based) is followed by average pooling.
    pub fn pool_after(self, i: usize) -> bool {
        match self.conv_layers() {
            5 => true,
            _ => i % 2 == 1,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Cnn5 => "cnn5",
            ArchKind::Cnn10 => "cnn10",
            ArchKind::Cnn5W => "cnn5w",
            ArchKind::Cnn10W => "cnn10w",
        })
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cnn5" => Ok(ArchKind::Cnn5),
            "cnn10" => Ok(ArchKind::Cnn10),
            "cnn5w" => Ok(ArchKind::Cnn5W),
            "cnn10w" => Ok(ArchKind::Cnn10W),
            _ => Err(Error::invalid(format!("unknown architecture {s:?}"))),
        }
    }
}

/// Declarative description of an embedding network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    pub embedding_dim: usize,
    pub input_len: usize,
    pub alphabet_size: usize,
}

impl ArchitectureSpec {
    pub fn new(kind: ArchKind, embedding_dim: usize) -> Self {
        Self {
            kind,
            embedding_dim,
            input_len: 160,
            alphabet_size: Alphabet::dna().size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding dimension must be >= 1"));
        }
        if self.input_len >> POOL_STAGES == 0 {
            return Err(Error::invalid(format!(
                "input length {} too short for {POOL_STAGES} pooling stages",
                self.input_len
            )));
        }
        if self.alphabet_size < 2 {
            return Err(Error::invalid("alphabet size must be >= 2"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    /// Length of each channel after the conv stack.
    pub fn final_len(&self) -> usize {
        (0..POOL_STAGES).fold(self.input_len, |l, _| l / 2)
    }

    pub fn flattened(&self) -> usize {
        self.channels() * self.final_len()
    }

    /// `(name, shape)` of every learnable parameter, in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels();
        let mut v = Vec::new();
        for i in 0..self.kind.conv_layers() {
            let c_in = if i == 0 { self.alphabet_size } else { c };
            v.push((format!("conv{i}.weight"), vec![c, c_in, 3]));
            v.push((format!("conv{i}.bias"), vec![c]));
        }
        v.push(("fc1.weight".into(), vec![HIDDEN, self.flattened()]));
        v.push(("fc1.bias".into(), vec![HIDDEN]));
        v.push(("fc2.weight".into(), vec![self.embedding_dim, HIDDEN]));
        v.push(("fc2.bias".into(), vec![self.embedding_dim]));
        v.push(("bn.gamma".into(), vec![self.embedding_dim]));
        v.push(("bn.beta".into(), vec![self.embedding_dim]));
        v.push(("log_r".into(), vec![1]));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// `log r` such that `r = √(M / 2n)`: independent pairs then have expected `d̂ = M`.
pub fn init_scale(mean_distance: f64, n: usize) -> Result<f64> {
    if !(mean_distance > 0.0 && mean_distance.is_finite()) {
        return Err(Error::invalid(format!("mean distance M must be positive, got {mean_distance}")));
    }
    if n == 0 {
        return Err(Error::invalid("embedding dimension must be >= 1"));
    }
    Ok(0.5 * (mean_distance / (2.0 * n as f64)).ln())
}

/// `d̂ = r² Σ (uᵢ − vᵢ)²`.
pub fn predict_distance(r: f64, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("embedding lengths {} and {} differ", u.len(), v.len())));
    }
    Ok(r * r * squared_distance(u, v))
}

pub(crate) fn squared_distance<T: Scalar>(u: &[T], v: &[T]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum()
}

/// Caches of a train-mode forward pass.
#[derive(Clone, Debug, Default)]
struct ForwardCache<T> {
    relu_out: Vec<Tensor<T>>,
    fc1_out: Option<Tensor<T>>,
}

/// CNN embedding network `f(·; θ)` with a learnable distance scale.
#[derive(Clone, Debug)]
pub struct EmbeddingModel<T> {
    pub spec: ArchitectureSpec,
    pub convs: Vec<Conv1d<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub bn: BatchNorm1d<T>,
    pub log_r: Parameter<T>,
    cache: ForwardCache<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    pub fn new<R: Rng + ?Sized>(spec: ArchitectureSpec, log_r: f64, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels();
        let convs = (0..spec.kind.conv_layers())
            .map(|i| Conv1d::new(&format!("conv{i}"), if i == 0 { spec.alphabet_size } else { c }, c, rng))
            .collect();
        let fc1 = Linear::new("fc1", spec.flattened(), HIDDEN, rng);
        let fc2 = Linear::new("fc2", HIDDEN, spec.embedding_dim, rng);
        let bn = BatchNorm1d::new(BatchNormState::new("bn", spec.embedding_dim, EMBEDDING_BN_EPS, BN_MOMENTUM)?);
        let log_r = Parameter::new("log_r", Tensor::from_vec(&[1], vec![T::from_f64(log_r)])?);
        Ok(Self {
            spec,
            convs,
            fc1,
            fc2,
            bn,
            log_r,
            cache: ForwardCache::default(),
        })
    }

    /// Builds a model from parameters in [`ArchitectureSpec::parameter_shapes`] order plus
    /// batch-norm running statistics.
    pub fn from_parts(spec: ArchitectureSpec, params: Vec<Parameter<T>>, running_mean: Tensor<T>, running_var: Tensor<T>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.parameter_shapes();
        if params.len() != shapes.len() {
            return Err(Error::shape(format!("expected {} parameters, got {}", shapes.len(), params.len())));
        }
        for (p, (name, shape)) in params.iter().zip(&shapes) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let n = spec.embedding_dim;
        if running_mean.shape() != [n] || running_var.shape() != [n] {
            return Err(Error::shape("batch-norm running statistics shape"));
        }
        let mut it = params.into_iter();
        let mut next = || it.next().expect("count checked");
        let convs = (0..spec.kind.conv_layers())
            .map(|_| {
                let w = next();
                let b = next();
                Conv1d::from_params(w, b)
            })
            .collect();
        let fc1 = Linear::from_params(next(), next());
        let fc2 = Linear::from_params(next(), next());
        let mut state = BatchNormState::new("bn", n, EMBEDDING_BN_EPS, BN_MOMENTUM)?;
        state.gamma = next();
        state.beta = next();
        state.running_mean = running_mean;
        state.running_var = running_var;
        let log_r = next();
        Ok(Self {
            spec,
            convs,
            fc1,
            fc2,
            bn: BatchNorm1d::new(state),
            log_r,
            cache: ForwardCache::default(),
        })
    }

    /// Parameters in canonical order.
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v = Vec::new();
        for c in &self.convs {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        v.extend([
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
            &self.bn.state.gamma,
            &self.bn.state.beta,
            &self.log_r,
        ]);
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v.extend([
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
            &mut self.bn.state.gamma,
            &mut self.bn.state.beta,
            &mut self.log_r,
        ]);
        v
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn scale(&self) -> f64 {
        self.log_r.value.data()[0].as_f64().exp()
    }

    /// Same model in another precision (caches dropped).
    pub fn cast<U: Scalar>(&self) -> EmbeddingModel<U> {
        let params = self.parameters().into_iter().map(Parameter::cast).collect();
        EmbeddingModel::from_parts(
            self.spec.clone(),
            params,
            self.bn.state.running_mean.cast(),
            self.bn.state.running_var.cast(),
        )
        .expect("casting preserves shapes")
    }

    /// One-hot batch `(B, alphabet, input_len)`; positions past each sequence are padding.
    pub fn encode_batch(&self, seqs: &[&Sequence]) -> Result<Tensor<T>> {
        let (a, l) = (self.spec.alphabet_size, self.spec.input_len);
        let pad = (a - 1) as u8;
        let mut x = Tensor::zeros(&[seqs.len(), a, l]);
        let mut codes = vec![pad; l];
        for (s, dst) in seqs.iter().zip(x.data_mut().chunks_mut(a * l)) {
            let content = s.content();
            if content.len() > l {
                return Err(Error::TooLong {
                    len: content.len(),
                    target: l,
                });
            }
            codes[..content.len()].copy_from_slice(content);
            codes[content.len()..].fill(pad);
            write_one_hot(&codes, a, dst)?;
        }
        Ok(x)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, a, l) = x.dims3()?;
        if a != self.spec.alphabet_size || l != self.spec.input_len {
            return Err(Error::shape(format!(
                "input {:?} does not match alphabet {} / length {}",
                x.shape(),
                self.spec.alphabet_size,
                self.spec.input_len
            )));
        }
        Ok(())
    }

    /// Forward pass without caching. In train mode the final batch norm uses batch
    /// statistics but running statistics are left untouched.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = relu_forward(&conv1d_forward(&h, &conv.weight.value, &conv.bias.value)?);
            if self.spec.kind.pool_after(i) {
                h = avgpool1d_forward(&h)?;
            }
        }
        let b = h.shape()[0];
        let h = h.reshape(&[b, self.spec.flattened()])?;
        let h = relu_forward(&linear_forward(&h, &self.fc1.weight.value, &self.fc1.bias.value)?);
        let h = linear_forward(&h, &self.fc2.weight.value, &self.fc2.bias.value)?;
        let mut state = self.bn.state.clone();
        Ok(batchnorm1d_forward(&h, &mut state, mode)?.0)
    }

    /// Embeds sequences in chunks of `chunk` (batch statistics are per chunk in train mode).
    pub fn embed(&self, seqs: &[&Sequence], mode: Mode, chunk: usize) -> Result<Tensor<T>> {
        let n = self.spec.embedding_dim;
        let mut out = Vec::with_capacity(seqs.len() * n);
        for part in seqs.chunks(chunk.max(2)) {
            let x = self.encode_batch(part)?;
            out.extend_from_slice(self.forward(&x, mode)?.data());
        }
        Tensor::from_vec(&[seqs.len(), n], out)
    }

    /// Train-mode forward that keeps activations for [`Self::backward`] and updates the
    /// batch-norm running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.cache.relu_out.clear();
        let mut h = x.clone();
        for i in 0..self.convs.len() {
            let y = relu_forward(&self.convs[i].forward(&h, true)?);
            h = if self.spec.kind.pool_after(i) {
                avgpool1d_forward(&y)?
            } else {
                y.clone()
            };
            self.cache.relu_out.push(y);
        }
        let b = h.shape()[0];
        let h = h.reshape(&[b, self.spec.flattened()])?;
        let h = relu_forward(&self.fc1.forward(h, true)?);
        self.cache.fc1_out = Some(h.clone());
        let h = self.fc2.forward(h, true)?;
        self.bn.forward(&h, Mode::Train, true)
    }

    /// Backpropagates `grad` w.r.t. the embeddings of the last [`Self::forward_train`],
    /// accumulating into parameter gradients.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        let g = self.bn.backward(grad)?;
        let g = self.fc2.backward(&g)?;
        let fc1_out = self
            .cache
            .fc1_out
            .take()
            .ok_or_else(|| Error::invalid("backward without forward_train"))?;
        let g = relu_backward(&fc1_out, &g)?;
        let g = self.fc1.backward(&g)?;
        let b = g.shape()[0];
        let mut g = g.reshape(&[b, self.spec.channels(), self.spec.final_len()])?;
        let relu_out = std::mem::take(&mut self.cache.relu_out);
        if relu_out.len() != self.convs.len() {
            return Err(Error::invalid("backward without forward_train"));
        }
        for i in (0..self.convs.len()).rev() {
            let y = &relu_out[i];
            if self.spec.kind.pool_after(i) {
                g = avgpool1d_backward(&g, y.shape()[2])?;
            }
            g = relu_backward(y, &g)?;
            match self.convs[i].backward(&g, i > 0)? {
                Some(dx) => g = dx,
                None => break,
            }
        }
        Ok(())
    }
}
