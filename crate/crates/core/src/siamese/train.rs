use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::model::EmbeddingModel;
use crate::datagen::PairSample;
use crate::eval::{ae_global, ae_homologous, DistancePredictor};
use crate::ndnet::{Adam, AdamConfig, Scalar, Tensor};
use crate::rng::Streams;
use crate::seqcore::Sequence;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub ae_g: Option<f64>,
    pub ae_h: Option<f64>,
}

/// Predicted distances for pairs given their embeddings `u` and `v`, both `(B, n)`.
pub fn pair_distances<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>, r: f64) -> Vec<f64> {
    let n = u.shape()[1];
    u.data()
        .chunks(n)
        .zip(v.data().chunks(n))
        .map(|(a, b)| r * r * super::model::squared_distance(a, b))
        .collect()
}

/// One optimisation step on a batch of pairs; returns the mean loss.
///
/// Both sides of every pair go through the same network in one concatenated batch
/// `[s₁..s_B, t₁..t_B]`, so gradients from the two branches accumulate in the shared
/// parameters and the final batch norm sees statistics over both.
pub fn train_step<T: Scalar>(model: &mut EmbeddingModel<T>, optimizer: &mut Adam, batch: &[&PairSample], kind: LossKind) -> Result<f64> {
    let loss = accumulate_gradients(model, batch, kind)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {loss}; {}", dump_batch(batch))));
    }
    optimizer.step(&mut model.parameters_mut())?;
    Ok(loss)
}

/// Forward + backward of the mean batch loss, leaving gradients in the parameters.
pub fn accumulate_gradients<T: Scalar>(model: &mut EmbeddingModel<T>, batch: &[&PairSample], kind: LossKind) -> Result<f64> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::invalid(format!("training batch needs >= 2 pairs, got {b}")));
    }
    let seqs: Vec<&Sequence> = batch.iter().map(|p| &p.s).chain(batch.iter().map(|p| &p.t)).collect();
    let x = model.encode_batch(&seqs)?;
    let emb = model.forward_train(&x)?;
    let n = model.spec.embedding_dim;
    let r2 = model.scale().powi(2);
    let (u, v) = emb.data().split_at(b * n);
    let mut grad = Tensor::<T>::zeros(&[2 * b, n]);
    let (gu, gv) = grad.data_mut().split_at_mut(b * n);
    let mut total = 0.0;
    let mut dlog_r = 0.0;
    for (i, p) in batch.iter().enumerate() {
        let (ui, vi) = (&u[i * n..(i + 1) * n], &v[i * n..(i + 1) * n]);
        let dhat = r2 * super::model::squared_distance(ui, vi);
        let (value, dl) = kind.eval(dhat, f64::from(p.d)).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m}; {}", dump_batch(batch))),
            other => other,
        })?;
        total += value;
        let w = dl / b as f64;
        // ∂d̂/∂u = 2r²(u − v), ∂d̂/∂log r = 2 d̂
        dlog_r += w * 2.0 * dhat;
        let c = w * 2.0 * r2;
        for j in 0..n {
            let diff = T::from_f64(c * (ui[j].as_f64() - vi[j].as_f64()));
            gu[i * n + j] = diff;
            gv[i * n + j] = -diff;
        }
    }
    model.backward(&grad)?;
    let g = &mut model.log_r.grad.data_mut()[0];
    *g = *g + T::from_f64(dlog_r);
    Ok(total / b as f64)
}

fn dump_batch(batch: &[&PairSample]) -> String {
    let shown: Vec<String> = batch
        .iter()
        .take(8)
        .map(|p| format!("(|s|={}, |t|={}, d={}, hom={})", p.s.len(), p.t.len(), p.d, p.homologous))
        .collect();
    format!("batch of {}: {}", batch.len(), shown.join(" "))
}

/// Model plus optimiser state; training can be resumed epoch by epoch.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: EmbeddingModel<f32>,
    pub optimizer: Adam,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(model: EmbeddingModel<f32>, adam: AdamConfig) -> Self {
        Self {
            model,
            optimizer: Adam::new(adam),
            epochs_done: 0,
        }
    }

    /// Runs `cfg.epochs` more epochs. Each epoch's shuffle comes from its own stream
    /// `(seed, epoch)`, so resuming continues exactly where an uninterrupted run would.
    pub fn train(&mut self, train: &[PairSample], validation: &[PairSample], kind: LossKind, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
        if cfg.epochs == 0 {
            return Ok(Vec::new());
        }
        if train.len() < 2 {
            return Err(Error::invalid("training set needs at least 2 pairs"));
        }
        if cfg.batch_size < 2 {
            return Err(Error::invalid("batch size must be >= 2"));
        }
        self.optimizer.cfg = cfg.adam;
        let streams = Streams::new(cfg.seed);
        let mut logs = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            let epoch = self.epochs_done;
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut streams.rng("shuffle", epoch as u64));
            let mut sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let batch: Vec<&PairSample> = chunk.iter().map(|&i| &train[i]).collect();
                sum += train_step(&mut self.model, &mut self.optimizer, &batch, kind)
                    .map_err(|e| match e {
                        Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}: {m}")),
                        other => other,
                    })?;
                batches += 1;
            }
            self.epochs_done += 1;
            let (ae_g, ae_h) = if validation.is_empty() {
                (None, None)
            } else {
                let pred = self.model.predict(validation)?;
                (Some(ae_global(&pred, validation)?), ae_homologous(&pred, validation).ok())
            };
            let log = EpochLog {
                epoch,
                loss: sum / batches.max(1) as f64,
                ae_g,
                ae_h,
            };
            log::info!(
                "epoch {} loss {:.4} ae_g {:?} ae_h {:?} r {:.4}",
                log.epoch,
                log.loss,
                log.ae_g,
                log.ae_h,
                self.model.scale()
            );
            logs.push(log);
        }
        Ok(logs)
    }
}
