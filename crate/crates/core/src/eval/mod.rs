//! Approximation-error metrics and distributional diagnostics.

pub mod stats;

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::PairSample;
use crate::ndnet::{Mode, Scalar, Tensor};
use crate::seqcore::{homopolymer_run_at, levenshtein, longest_homopolymer, Sequence};
use crate::siamese::{pair_distances, EmbeddingModel};
use crate::{Error, Result};

/// Sequences embedded per forward pass at evaluation time.
pub const EVAL_CHUNK: usize = 256;

/// Anything that maps pairs to predicted distances.
pub trait DistancePredictor {
    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<f64>>;
}

impl<T: Scalar> DistancePredictor for EmbeddingModel<T> {
    /// Eval-mode embeddings (running batch-norm statistics).
    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<f64>> {
        let s: Vec<&Sequence> = pairs.iter().map(|p| &p.s).collect();
        let t: Vec<&Sequence> = pairs.iter().map(|p| &p.t).collect();
        let u = self.embed(&s, Mode::Eval, EVAL_CHUNK)?;
        let v = self.embed(&t, Mode::Eval, EVAL_CHUNK)?;
        Ok(pair_distances(&u, &v, self.scale()))
    }
}

/// Predicts the exact distance; the zero-error reference.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePredictor;

impl DistancePredictor for OraclePredictor {
    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<f64>> {
        Ok(pairs.iter().map(|p| levenshtein(&p.s, &p.t) as f64).collect())
    }
}

/// Wraps a closure over single pairs.
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&PairSample) -> f64> DistancePredictor for FnPredictor<F> {
    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<f64>> {
        Ok(pairs.iter().map(&self.0).collect())
    }
}

fn check_len(pred: &[f64], samples: &[PairSample]) -> Result<()> {
    if pred.len() != samples.len() {
        return Err(Error::shape(format!("{} predictions for {} samples", pred.len(), samples.len())));
    }
    Ok(())
}

/// Mean `|d̂ − d|` over all samples.
pub fn ae_global(pred: &[f64], samples: &[PairSample]) -> Result<f64> {
    check_len(pred, samples)?;
    if samples.is_empty() {
        return Err(Error::invalid("AE_g over an empty sample set"));
    }
    Ok(mean_abs_err(pred.iter().zip(samples)))
}

/// Mean `|d̂ − d|` over homologous samples only.
pub fn ae_homologous(pred: &[f64], samples: &[PairSample]) -> Result<f64> {
    check_len(pred, samples)?;
    let hom: Vec<(&f64, &PairSample)> = pred.iter().zip(samples).filter(|(_, s)| s.homologous).collect();
    if hom.is_empty() {
        return Err(Error::invalid("AE_h needs at least one homologous sample"));
    }
    Ok(mean_abs_err(hom.into_iter()))
}

fn mean_abs_err<'a>(it: impl Iterator<Item = (&'a f64, &'a PairSample)>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), (&p, x)| (s + (p - f64::from(x.d)).abs(), n + 1));
    sum / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBucket {
    pub mean_abs_err: f64,
    pub mean_dhat: f64,
    pub var_dhat: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ae_g: f64,
    pub ae_h: Option<f64>,
    pub buckets: BTreeMap<u32, ErrorBucket>,
    pub n_samples: usize,
    pub n_homologous: usize,
}

impl EvalReport {
    pub fn compute(pred: &[f64], samples: &[PairSample]) -> Result<Self> {
        let ae_g = ae_global(pred, samples)?;
        let ae_h = ae_homologous(pred, samples).ok();
        let mut by_d: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (&p, s) in pred.iter().zip(samples) {
            by_d.entry(s.d).or_default().push(p);
        }
        let buckets = by_d
            .into_iter()
            .map(|(d, v)| {
                let (mean, var) = mean_var(&v);
                let mae = v.iter().map(|p| (p - f64::from(d)).abs()).sum::<f64>() / v.len() as f64;
                (
                    d,
                    ErrorBucket {
                        mean_abs_err: mae,
                        mean_dhat: mean,
                        var_dhat: var,
                        count: v.len(),
                    },
                )
            })
            .collect();
        Ok(Self {
            ae_g,
            ae_h,
            buckets,
            n_samples: samples.len(),
            n_homologous: samples.iter().filter(|s| s.homologous).count(),
        })
    }
}

/// Mean and unbiased variance (0 for a single value).
fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

// ---------------------------------------------------------------------------
// variance law

/// `Var(d̂) = 2dM/n` for pairs at true distance `d`.
pub fn predicted_variance(d: f64, mean_distance: f64, n: usize) -> f64 {
    2.0 * d * mean_distance / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub d: u32,
    pub count: usize,
    pub empirical_var: f64,
    pub predicted_var: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub rows: Vec<VarianceRow>,
    /// Distances whose bucket had fewer than `min_count` samples.
    pub omitted: Vec<u32>,
}

impl VarianceProfile {
    /// Whether empirical variance never decreases with `d` over the reported buckets.
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].empirical_var >= w[0].empirical_var)
    }
}

/// Empirical vs predicted variance of `d̂` per true distance.
pub fn variance_profile(pred: &[f64], samples: &[PairSample], mean_distance: f64, n: usize, min_count: usize) -> Result<VarianceProfile> {
    check_len(pred, samples)?;
    let mut by_d: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (&p, s) in pred.iter().zip(samples) {
        by_d.entry(s.d).or_default().push(p);
    }
    let mut profile = VarianceProfile {
        rows: Vec::new(),
        omitted: Vec::new(),
    };
    for (d, v) in by_d {
        if v.len() < min_count.max(2) {
            profile.omitted.push(d);
            continue;
        }
        let (_, var) = mean_var(&v);
        let predicted = predicted_variance(f64::from(d), mean_distance, n);
        profile.rows.push(VarianceRow {
            d,
            count: v.len(),
            empirical_var: var,
            predicted_var: predicted,
            ratio: var / predicted,
        });
    }
    Ok(profile)
}

// ---------------------------------------------------------------------------
// χ² goodness of fit

pub const CHI2_MIN_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Fit {
    pub d: f64,
    pub k: f64,
    pub samples: usize,
    pub ks: f64,
    pub critical: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub passed: bool,
}

/// KS test of `{k·d̂}` against χ²(k·d) for predictions at a fixed true distance `d`.
pub fn chi2_fit(dhat: &[f64], d: f64, k: f64, alpha: f64) -> Result<Chi2Fit> {
    if dhat.len() < CHI2_MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "χ² fit needs >= {CHI2_MIN_SAMPLES} samples, got {}",
            dhat.len()
        )));
    }
    if !(k > 0.0 && d > 0.0) {
        return Err(Error::invalid(format!("χ² fit needs k > 0 and d > 0, got k={k}, d={d}")));
    }
    let scaled: Vec<f64> = dhat.iter().map(|x| k * x).collect();
    let dof = k * d;
    let ks = stats::ks_statistic(&scaled, |x| stats::chi2_cdf(x, dof));
    let critical = stats::ks_critical(alpha, scaled.len());
    Ok(Chi2Fit {
        d,
        k,
        samples: scaled.len(),
        ks,
        critical,
        p_value: stats::ks_p_value(ks, scaled.len()),
        alpha,
        passed: ks < critical,
    })
}

// ---------------------------------------------------------------------------
// element normality

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementStats {
    pub element: usize,
    pub mean: f64,
    pub var: f64,
    pub skew: f64,
    /// KS statistic against N(0, 1).
    pub ks: f64,
    pub flagged: bool,
}

/// Per-element moments and KS distance to N(0,1) for the first `first_m` columns of an
/// `(N, n)` embedding matrix. Elements with `|mean| > 0.1` or `|var − 1| > 0.2` are flagged.
pub fn element_normality<T: Scalar>(embeddings: &Tensor<T>, first_m: usize) -> Result<Vec<ElementStats>> {
    let (rows, n) = embeddings.dims2()?;
    if rows < 2 {
        return Err(Error::invalid("normality needs at least 2 embeddings"));
    }
    Ok((0..first_m.min(n))
        .map(|j| {
            let col: Vec<f64> = (0..rows).map(|i| embeddings.data()[i * n + j].as_f64()).collect();
            let (mean, var) = mean_var(&col);
            let sd = var.sqrt();
            let skew = if sd > 0.0 {
                col.iter().map(|x| ((x - mean) / sd).powi(3)).sum::<f64>() / rows as f64
            } else {
                0.0
            };
            let ks = stats::ks_statistic(&col, stats::normal_cdf);
            ElementStats {
                element: j,
                mean,
                var,
                skew,
                ks,
                flagged: mean.abs() > 0.1 || (var - 1.0).abs() > 0.2,
            }
        })
        .collect())
}

pub const NORMALITY_MIN_SEQUENCES: usize = 1000;

/// Normality of a model's embedding elements in eval mode (running statistics) and
/// with batch statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub eval: Vec<ElementStats>,
    pub batch_stats: Vec<ElementStats>,
}

pub fn model_normality<T: Scalar>(model: &EmbeddingModel<T>, seqs: &[&Sequence], first_m: usize) -> Result<NormalityReport> {
    if seqs.len() < NORMALITY_MIN_SEQUENCES {
        return Err(Error::invalid(format!(
            "normality diagnostics need >= {NORMALITY_MIN_SEQUENCES} sequences, got {}",
            seqs.len()
        )));
    }
    let eval = element_normality(&model.embed(seqs, Mode::Eval, EVAL_CHUNK)?, first_m)?;
    let batch_stats = element_normality(&model.embed(seqs, Mode::Train, EVAL_CHUNK)?, first_m)?;
    Ok(NormalityReport { eval, batch_stats })
}

// ---------------------------------------------------------------------------
// outlier scan

/// All distinct sequences at edit distance exactly 1 from `s`.
pub fn single_edits(s: &[u8], n_symbols: u8) -> Vec<Vec<u8>> {
    let mut out: HashSet<Vec<u8>> = HashSet::new();
    for i in 0..s.len() {
        for c in 0..n_symbols {
            if c != s[i] {
                let mut v = s.to_vec();
                v[i] = c;
                out.insert(v);
            }
        }
        let mut v = s.to_vec();
        v.remove(i);
        out.insert(v);
    }
    for i in 0..=s.len() {
        for c in 0..n_symbols {
            let mut v = s.to_vec();
            v.insert(i, c);
            out.insert(v);
        }
    }
    let mut out: Vec<Vec<u8>> = out.into_iter().collect();
    out.sort();
    out
}

fn random_edit<R: Rng + ?Sized>(s: &mut Vec<u8>, n_symbols: u8, rng: &mut R) {
    match rng.random_range(0..3) {
        0 if !s.is_empty() => {
            let i = rng.random_range(0..s.len());
            let mut c = rng.random_range(0..n_symbols - 1);
            if c >= s[i] {
                c += 1;
            }
            s[i] = c;
        }
        1 if !s.is_empty() => {
            let i = rng.random_range(0..s.len());
            s.remove(i);
        }
        _ => {
            let i = rng.random_range(0..=s.len());
            s.insert(i, rng.random_range(0..n_symbols));
        }
    }
}

/// Up to `max` partners of `s` at exact distance `d`, each at most `max_len` long.
pub fn partners_at<R: Rng + ?Sized>(s: &Sequence, d: u32, n_symbols: u8, max: usize, max_len: usize, rng: &mut R) -> Vec<Sequence> {
    let base = s.content();
    if d == 1 {
        let all: Vec<Vec<u8>> = single_edits(base, n_symbols).into_iter().filter(|v| v.len() <= max_len).collect();
        let k = max.min(all.len());
        let mut picked: Vec<usize> = index::sample(rng, all.len(), k).into_vec();
        picked.sort_unstable();
        return picked.into_iter().map(|i| Sequence::from_codes(all[i].clone())).collect();
    }
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..max * 8 {
        if out.len() >= max {
            break;
        }
        let mut v = base.to_vec();
        for _ in 0..d {
            random_edit(&mut v, n_symbols, rng);
        }
        if v.len() > max_len || seen.contains(&v) {
            continue;
        }
        if crate::seqcore::levenshtein_codes(base, &v) == d as usize {
            seen.insert(v.clone());
            out.push(Sequence::from_codes(v));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram; all mass goes into one zero-width bin when values coincide.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo || bins <= 1 {
        return vec![HistogramBin {
            lo,
            hi,
            count: values.len(),
        }];
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / w) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: lo + i as f64 * w,
            hi: lo + (i + 1) as f64 * w,
            count,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanDistribution {
    pub d: u32,
    /// `mean_d(s)` for every scanned sequence that had partners at `d`.
    pub means: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Offender {
    pub s: Sequence,
    pub t: Sequence,
    pub d: u32,
    pub dhat: f64,
    pub abs_err: f64,
    /// First position where `s` and `t` differ.
    pub edit_position: usize,
    /// Homopolymer run in `s` containing the edit position.
    pub run_at_edit: usize,
    pub longest_run: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutlierReport {
    pub per_d: Vec<MeanDistribution>,
    pub worst: Vec<Offender>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierConfig {
    pub d_values: Vec<u32>,
    pub max_partners: usize,
    pub top_k: usize,
    pub bins: usize,
    pub max_len: usize,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            d_values: vec![1, 2, 3],
            max_partners: 50,
            top_k: 20,
            bins: 20,
            max_len: 160,
        }
    }
}

/// Scans `mean_d(s) = mean{d̂(s, t) | d(s, t) = d}` over `seqs` using generated partners.
pub fn outlier_scan<P: DistancePredictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    seqs: &[&Sequence],
    n_symbols: u8,
    cfg: &OutlierConfig,
    rng: &mut R,
) -> Result<OutlierReport> {
    let mut per_d = Vec::new();
    let mut all: Vec<Offender> = Vec::new();
    for &d in &cfg.d_values {
        let mut means = Vec::with_capacity(seqs.len());
        for s in seqs {
            let partners = partners_at(s, d, n_symbols, cfg.max_partners, cfg.max_len, rng);
            if partners.is_empty() {
                continue;
            }
            let pairs: Vec<PairSample> = partners
                .into_iter()
                .map(|t| PairSample {
                    s: (*s).clone(),
                    t,
                    d,
                    homologous: true,
                })
                .collect();
            let pred = predictor.predict(&pairs)?;
            means.push(pred.iter().sum::<f64>() / pred.len() as f64);
            for (p, pair) in pred.into_iter().zip(pairs) {
                let pos = first_difference(pair.s.content(), pair.t.content());
                all.push(Offender {
                    edit_position: pos,
                    run_at_edit: homopolymer_run_at(pair.s.content(), pos),
                    longest_run: longest_homopolymer(pair.s.content()),
                    abs_err: (p - f64::from(d)).abs(),
                    dhat: p,
                    d,
                    s: pair.s,
                    t: pair.t,
                });
            }
        }
        let histogram = histogram(&means, cfg.bins);
        per_d.push(MeanDistribution { d, means, histogram });
    }
    all.sort_by(|a, b| b.abs_err.total_cmp(&a.abs_err));
    all.truncate(cfg.top_k);
    Ok(OutlierReport { per_d, worst: all })
}

fn first_difference(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()))
}
