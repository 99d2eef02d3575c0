//! Early-stopping-dimension search.
//!
//! Embeddings of mutually non-related sequences are differenced pairwise, the
//! covariance of the differences is eigendecomposed, and the count of unit-scale
//! eigenvalues is tracked across embedding dimensions. Once the dimension exceeds
//! what the data supports, the count stops growing and the trailing eigenvalues
//! collapse towards zero.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::PairSample;
use crate::ndnet::{Mode, Scalar, Tensor};
use crate::rng::Streams;
use crate::seqcore::Sequence;
use crate::siamese::{ArchitectureSpec, EmbeddingModel, LossKind, TrainConfig, Trainer};
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_SLACK: f64 = 0.1;
/// Spectral-contrast band that marks a gradual (non-collapsing) decay.
pub const A4_CONTRAST: (f64, f64) = (0.2, 0.8);

/// Unbiased covariance of `(uᵢ − uⱼ)/√2` over sampled distinct pairs of rows.
///
/// When the number of distinct pairs is at most `sample_pairs`, every pair is used.
/// Sampled pairs are taken from random perfect matchings of the rows.
pub fn diff_covariance<T: Scalar, R: Rng + ?Sized>(embeddings: &Tensor<T>, sample_pairs: usize, rng: &mut R) -> Result<(Vec<f64>, usize)> {
    let (rows, n) = embeddings.dims2()?;
    if rows < 2 {
        return Err(Error::invalid(format!("difference covariance needs >= 2 embeddings, got {rows}")));
    }
    if sample_pairs < 2 {
        return Err(Error::invalid("difference covariance needs >= 2 sampled pairs"));
    }
    let x = embeddings.data();
    let all = rows * (rows - 1) / 2;
    let pairs: Vec<(usize, usize)> = if all <= sample_pairs {
        (0..rows).flat_map(|i| (i + 1..rows).map(move |j| (i, j))).collect()
    } else {
        // Consecutive entries of fresh random permutations, so rows are reused as
        // little as possible.
        let mut perm: Vec<usize> = (0..rows).collect();
        let mut out = Vec::with_capacity(sample_pairs);
        while out.len() < sample_pairs {
            perm.shuffle(rng);
            out.extend(perm.chunks_exact(2).map(|c| (c[0], c[1])).take(sample_pairs - out.len()));
        }
        out
    };
    let p = pairs.len();
    if p < 2 {
        return Err(Error::invalid("difference covariance needs >= 2 distinct pairs"));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut diffs = vec![0.0f64; p * n];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let row = &mut diffs[k * n..(k + 1) * n];
        for c in 0..n {
            row[c] = s * (x[i * n + c].as_f64() - x[j * n + c].as_f64());
        }
    }
    let mut mean = vec![0.0; n];
    for row in diffs.chunks(n) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= p as f64);
    for row in diffs.chunks_mut(n) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = vec![0.0; n * n];
    crate::ndnet::gemm(
        crate::ndnet::Mat::new(&diffs, p, n).t(),
        crate::ndnet::Mat::new(&diffs, p, n),
        0.0,
        &mut cov,
    );
    let denom = (p - 1) as f64;
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * (cov[i * n + j] + cov[j * n + i]) / denom;
            cov[i * n + j] = v;
            cov[j * n + i] = v;
        }
    }
    Ok((cov, p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `k` of this row-major `n×n` matrix is the eigenvector of `values[k]`.
    pub vectors: Option<Vec<f64>>,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric row-major `n×n` matrix.
///
/// Iterates until the off-diagonal Frobenius norm drops below `tol·‖A‖_F`.
pub fn sym_eigen(a: &[f64], n: usize, tol: f64, with_vectors: bool) -> Result<Eigen> {
    if a.len() != n * n {
        return Err(Error::shape(format!("expected {n}x{n} matrix, got {} values", a.len())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigen input".into()));
    }
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    for i in 0..n {
        for j in i + 1..n {
            if (a[i * n + j] - a[j * n + i]).abs() > tol * norm.max(1.0) {
                return Err(Error::invalid(format!("matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut m = a.to_vec();
    let mut q: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    let target = tol * norm;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = m[p * n + r];
                if apr == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let arr = m[r * n + r];
                let theta = (arr - app) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkr = m[k * n + r];
                    m[k * n + p] = c * mkp - s * mkr;
                    m[k * n + r] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mrk = m[r * n + k];
                    m[p * n + k] = c * mpk - s * mrk;
                    m[r * n + k] = s * mpk + c * mrk;
                }
                m[p * n + r] = 0.0;
                m[r * n + p] = 0.0;
                for k in 0..n {
                    let qkp = q[k * n + p];
                    let qkr = q[k * n + r];
                    q[k * n + p] = c * qkp - s * qkr;
                    q[k * n + r] = s * qkp + c * qkr;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = with_vectors.then(|| {
        let mut v = vec![0.0; n * n];
        for (col, &src) in order.iter().enumerate() {
            for k in 0..n {
                v[k * n + col] = q[k * n + src];
            }
        }
        v
    });
    Ok(Eigen { values, vectors })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub dim: usize,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub sample_count: usize,
}

impl Spectrum {
    /// Spectrum of the difference covariance of `embeddings` (`N×dim`).
    pub fn from_embeddings<T: Scalar, R: Rng + ?Sized>(embeddings: &Tensor<T>, sample_pairs: usize, rng: &mut R) -> Result<Self> {
        let (_, n) = embeddings.dims2()?;
        let (cov, p) = diff_covariance(embeddings, sample_pairs, rng)?;
        let e = sym_eigen(&cov, n, 1e-12, false)?;
        Ok(Self {
            dim: n,
            eigenvalues: e.values,
            sample_count: p,
        })
    }

    pub fn effective_rank(&self, tau: f64) -> usize {
        self.eigenvalues.iter().filter(|&&l| l >= tau).count()
    }

    /// `λ_median / λ_1`, or 0 for a zero spectrum.
    pub fn contrast(&self) -> f64 {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0.0;
        }
        self.eigenvalues[(self.eigenvalues.len() - 1) / 2] / top
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EsdOutcome {
    Detected { n0: usize },
    /// Every scanned dimension kept (nearly) full rank.
    AtLeastMax { max_dim: usize },
    /// Non-full spectra decay gradually; no dimension is chosen.
    A4Suspect,
    /// Non-full spectra have no eigenvalue above the threshold.
    NoSignal,
}

impl EsdOutcome {
    pub fn n0(&self) -> Option<usize> {
        match self {
            EsdOutcome::Detected { n0 } => Some(*n0),
            _ => None,
        }
    }
}

impl std::fmt::Display for EsdOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EsdOutcome::Detected { n0 } => write!(f, "n0 = {n0}"),
            EsdOutcome::AtLeastMax { max_dim } => write!(f, "n0 >= {max_dim}"),
            EsdOutcome::A4Suspect => f.write_str("A4 suspect (gradual spectral decay)"),
            EsdOutcome::NoSignal => f.write_str("no eigenvalue above threshold"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimRank {
    pub dim: usize,
    pub effective_rank: usize,
    pub full: bool,
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsdReport {
    pub tau: f64,
    pub slack: f64,
    pub ranks: Vec<DimRank>,
    /// Largest dimension that kept (nearly) full rank.
    pub lower_bound: Option<usize>,
    /// Plateau of effective rank over the non-full dimensions, before the A4 check.
    pub plateau: Option<usize>,
    pub outcome: EsdOutcome,
    pub spectra: Vec<Spectrum>,
}

/// Threshold-rule ESD detection over spectra at ascending dimensions.
///
/// A dimension is full when its effective rank is at least `dim·(1 − slack)`. The
/// plateau is the lower median of effective ranks over non-full dimensions, so adding
/// a larger dimension at the plateau rank never moves it.
pub fn detect_esd(spectra: &[Spectrum], tau: f64, slack: f64) -> Result<EsdReport> {
    if spectra.is_empty() {
        return Err(Error::invalid("ESD detection needs at least one spectrum"));
    }
    if spectra.windows(2).any(|w| w[1].dim <= w[0].dim) {
        return Err(Error::invalid("spectra must be at strictly ascending dimensions"));
    }
    if !(tau > 0.0 && (0.0..1.0).contains(&slack)) {
        return Err(Error::invalid(format!("need tau > 0 and slack in [0, 1), got {tau}, {slack}")));
    }
    let ranks: Vec<DimRank> = spectra
        .iter()
        .map(|s| {
            let r = s.effective_rank(tau);
            DimRank {
                dim: s.dim,
                effective_rank: r,
                full: r as f64 >= s.dim as f64 * (1.0 - slack),
                contrast: s.contrast(),
            }
        })
        .collect();
    let lower_bound = ranks.iter().filter(|r| r.full).map(|r| r.dim).max();
    let non_full: Vec<&DimRank> = ranks.iter().filter(|r| !r.full).collect();
    let max_dim = spectra.last().map(|s| s.dim).unwrap_or(0);
    let (plateau, outcome) = if non_full.is_empty() {
        (None, EsdOutcome::AtLeastMax { max_dim })
    } else {
        let mut rs: Vec<usize> = non_full.iter().map(|r| r.effective_rank).collect();
        rs.sort_unstable();
        let median = rs[(rs.len() - 1) / 2];
        let gradual = non_full
            .iter()
            .filter(|r| r.contrast > A4_CONTRAST.0 && r.contrast < A4_CONTRAST.1)
            .count();
        let outcome = if 2 * gradual > non_full.len() {
            EsdOutcome::A4Suspect
        } else if median == 0 {
            EsdOutcome::NoSignal
        } else {
            EsdOutcome::Detected { n0: median }
        };
        (Some(median), outcome)
    };
    Ok(EsdReport {
        tau,
        slack,
        ranks,
        lower_bound,
        plateau,
        outcome,
        spectra: spectra.to_vec(),
    })
}

/// Writes `dim,index,eigenvalue` rows, eigenvalues descending within each dim.
pub fn write_spectrum_csv<W: Write>(mut w: W, spectra: &[Spectrum]) -> Result<()> {
    writeln!(w, "dim,index,eigenvalue")?;
    for s in spectra {
        for (i, l) in s.eigenvalues.iter().enumerate() {
            writeln!(w, "{},{},{}", s.dim, i, l)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsdScanConfig {
    pub template: ArchitectureSpec,
    pub dims: Vec<usize>,
    pub train: TrainConfig,
    pub loss: LossKind,
    pub seeds: Vec<u64>,
    pub tau: f64,
    pub slack: f64,
    pub sample_pairs: usize,
    /// Mean cross-cluster distance used to initialise the scale.
    pub mean_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedScan {
    pub seed: u64,
    pub report: EsdReport,
}

/// Trains one model per `(dim, seed)` and detects the ESD per seed from spectra of
/// `probe` (one sequence per held-out cluster).
pub fn esd_scan(train: &[PairSample], validation: &[PairSample], probe: &[&Sequence], cfg: &EsdScanConfig) -> Result<Vec<SeedScan>> {
    if cfg.dims.is_empty() || cfg.dims.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("dims must be non-empty and strictly ascending"));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let spectra = cfg
            .dims
            .iter()
            .map(|&dim| scan_point(train, validation, probe, cfg, dim, seed))
            .collect::<Result<Vec<_>>>()?;
        out.push(SeedScan {
            seed,
            report: detect_esd(&spectra, cfg.tau, cfg.slack)?,
        });
    }
    Ok(out)
}

/// One cell of the scan: train at `dim` under `seed`, return the probe spectrum.
pub fn scan_point(
    train: &[PairSample],
    validation: &[PairSample],
    probe: &[&Sequence],
    cfg: &EsdScanConfig,
    dim: usize,
    seed: u64,
) -> Result<Spectrum> {
    let streams = Streams::new(seed).child("esd", dim as u64);
    let spec = ArchitectureSpec {
        embedding_dim: dim,
        ..cfg.template.clone()
    };
    let log_r = crate::siamese::init_scale(cfg.mean_distance, dim)?;
    let model = EmbeddingModel::<f32>::new(spec, log_r, &mut streams.rng("init", 0))?;
    let mut trainer = Trainer::new(model, cfg.train.adam);
    let tcfg = TrainConfig {
        seed: streams.seed(),
        ..cfg.train.clone()
    };
    trainer.train(train, validation, cfg.loss, &tcfg)?;
    let emb = trainer.model.embed(probe, Mode::Eval, crate::eval::EVAL_CHUNK)?;
    let s = Spectrum::from_embeddings(&emb, cfg.sample_pairs, &mut streams.rng("pairs", 0))?;
    log::info!(
        "esd seed {seed} dim {dim}: rank(tau={}) = {}",
        cfg.tau,
        s.effective_rank(cfg.tau)
    );
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Streams::new(seed).rng("g", 0);
        Tensor::from_vec(&[rows, n], (0..rows * n).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn flat(dim: usize, ones: usize) -> Spectrum {
        Spectrum {
            dim,
            eigenvalues: (0..dim).map(|i| if i < ones { 1.0 } else { 1e-4 }).collect(),
            sample_count: 1000,
        }
    }

    #[test]
    fn eigen_examples() {
        let id: Vec<f64> = (0..16).map(|k| if k / 4 == k % 4 { 1.0 } else { 0.0 }).collect();
        assert!(sym_eigen(&id, 4, 1e-12, false).unwrap().values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let d = [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(sym_eigen(&d, 3, 1e-12, false).unwrap().values, vec![2.0, 1.0, 0.0]);
        assert!(sym_eigen(&[1.0, 2.0, 0.0, 1.0], 2, 1e-12, false).is_err());
    }

    #[test]
    fn identical_embeddings_give_zero_covariance() {
        let t = Tensor::<f64>::full(&[10, 3], 0.4);
        let (cov, p) = diff_covariance(&t, 1000, &mut Streams::new(0).rng("c", 0)).unwrap();
        assert_eq!(p, 45);
        assert!(cov.iter().all(|&v| v == 0.0));
        assert!(diff_covariance(&Tensor::<f64>::zeros(&[1, 3]), 10, &mut Streams::new(0).rng("c", 0)).is_err());
    }

    #[test]
    fn iid_gaussian_has_unit_spectrum() {
        let t = gaussian(20_000, 40, 1);
        let s = Spectrum::from_embeddings(&t, 10_000, &mut Streams::new(1).rng("p", 0)).unwrap();
        let mean = s.eigenvalues.iter().sum::<f64>() / 40.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
        assert!(s.eigenvalues.iter().all(|l| (l - 1.0).abs() < 0.15), "{:?}", s.eigenvalues);
    }

    #[test]
    fn detect_examples() {
        let mut spectra: Vec<Spectrum> = (40..=120).step_by(20).map(|d| flat(d, d)).collect();
        spectra.extend((140..=180).step_by(20).map(|d| flat(d, 120)));
        let r = detect_esd(&spectra, DEFAULT_TAU, DEFAULT_SLACK).unwrap();
        assert_eq!(r.outcome, EsdOutcome::Detected { n0: 120 });
        assert_eq!(r.lower_bound, Some(120));
        let single = detect_esd(&[flat(40, 40)], DEFAULT_TAU, DEFAULT_SLACK).unwrap();
        assert_eq!(single.outcome, EsdOutcome::AtLeastMax { max_dim: 40 });
        assert!(detect_esd(&[flat(60, 60), flat(40, 40)], 0.5, 0.1).is_err());
    }

    #[test]
    fn gradual_decay_is_flagged() {
        let spectra: Vec<Spectrum> = [40, 80, 120]
            .iter()
            .map(|&d| Spectrum {
                dim: d,
                eigenvalues: (0..d).map(|i| 1.0 - 0.9 * i as f64 / d as f64).collect(),
                sample_count: 100,
            })
            .collect();
        let r = detect_esd(&spectra, DEFAULT_TAU, DEFAULT_SLACK).unwrap();
        assert_eq!(r.outcome, EsdOutcome::A4Suspect);
    }

    #[test]
    fn spectrum_csv_layout() {
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &[flat(2, 1)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "dim,index,eigenvalue\n2,0,1\n2,1,0.0001\n");
    }
}
