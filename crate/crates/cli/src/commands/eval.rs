use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use levemb_core::checkpoint::Checkpoint;
use levemb_core::datagen::PairSample;
use levemb_core::eval::{
    self, chi2_fit, model_normality, outlier_scan, variance_profile, Chi2Fit, DistancePredictor, ElementStats, EvalReport,
    NormalityReport, OraclePredictor, OutlierConfig, VarianceProfile, NORMALITY_MIN_SEQUENCES,
};
use levemb_core::rng::Streams;
use levemb_core::seqcore::{Alphabet, Sequence};
use levemb_core::siamese::ArchKind;
use serde::{Deserialize, Serialize};

use crate::io::{self, Csv, Dataset};
use crate::{config, prepare_out_dir, CliError, CliResult};

pub const ERRORS_HEADER: [&str; 6] = ["arch", "dim", "loss", "seed", "ae_g", "ae_h"];

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Expected architecture; a mismatch with the checkpoint is an error.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchKind>,
    /// Expected embedding dimension; a mismatch with the checkpoint is an error.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Significance level of the χ² goodness-of-fit test.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Embedding elements covered by the normality report.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normality_elements: Option<usize>,
    /// Test sequences scanned for outliers (0 disables the scan).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_sequences: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Score the exact-distance stub instead of a checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub oracle: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub arch: Option<ArchKind>,
    pub dim: Option<usize>,
    pub alpha: f64,
    pub normality_elements: usize,
    pub outlier_sequences: usize,
    pub top_k: usize,
    pub seed: u64,
    pub oracle: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: PathBuf::from("data"),
            out: PathBuf::from("eval"),
            arch: None,
            dim: None,
            alpha: 0.01,
            normality_elements: 10,
            outlier_sequences: 100,
            top_k: 20,
            seed: 0,
            oracle: false,
        }
    }
}

/// Which diagnostics to run beyond the error metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub full: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub arch: String,
    pub dim: usize,
    pub loss: String,
    pub seed: u64,
    pub report: EvalReport,
    pub mean_distance: f64,
    pub variance_profile: Option<VarianceProfile>,
    pub variance_monotone: Option<bool>,
    pub chi2: Vec<Chi2Fit>,
    pub normality: Option<NormalityReport>,
    pub notes: Vec<String>,
}

pub fn errors_row(s: &EvalSummary) -> Vec<String> {
    vec![
        s.arch.clone(),
        s.dim.to_string(),
        s.loss.clone(),
        s.seed.to_string(),
        io::f(s.report.ae_g),
        io::opt(s.report.ae_h),
    ]
}

/// Evaluates `checkpoint` (or the oracle stub) on the dataset's test pairs and writes
/// the report files into `out`.
pub fn evaluate(data: &Dataset, checkpoint: Option<&Checkpoint>, cfg: &EvalConfig, diag: Diagnostics, out: &Path) -> CliResult<EvalSummary> {
    let test = &data.test;
    if test.is_empty() {
        return Err(CliError::data("test pair file is empty"));
    }
    let mean_distance = data.mean_distance(cfg.seed)?;
    let (predictor, arch, dim, loss, seed): (&dyn DistancePredictor, String, usize, String, u64) = match checkpoint {
        Some(ck) => (
            ck.model(),
            ck.model().spec.kind.to_string(),
            ck.model().spec.embedding_dim,
            ck.meta.loss.to_string(),
            ck.meta.seed,
        ),
        None => (&OraclePredictor, "oracle".into(), 0, "none".into(), cfg.seed),
    };
    let pred = predictor.predict(test)?;
    let report = EvalReport::compute(&pred, test)?;
    let mut notes = Vec::new();

    let mut csv = Csv::create(&out.join("errors.csv"), &ERRORS_HEADER)?;
    let mut summary = EvalSummary {
        arch,
        dim,
        loss,
        seed,
        report,
        mean_distance,
        variance_profile: None,
        variance_monotone: None,
        chi2: Vec::new(),
        normality: None,
        notes: Vec::new(),
    };
    csv.row(&errors_row(&summary))?;
    csv.finish()?;

    let mut buckets = Csv::create(&out.join("buckets.csv"), &["d", "count", "mean_abs_err", "mean_dhat", "var_dhat"])?;
    for (d, b) in &summary.report.buckets {
        buckets.row(&[d.to_string(), b.count.to_string(), io::f(b.mean_abs_err), io::f(b.mean_dhat), io::f(b.var_dhat)])?;
    }
    buckets.finish()?;

    if diag.full {
        if let Some(ck) = checkpoint {
            let n = ck.model().spec.embedding_dim;
            let profile = variance_profile(&pred, test, mean_distance, n, 30)?;
            let mut csv = Csv::create(&out.join("variance_profile.csv"), &["d", "count", "empirical_var", "predicted_var"])?;
            for r in &profile.rows {
                csv.row(&[r.d.to_string(), r.count.to_string(), io::f(r.empirical_var), io::f(r.predicted_var)])?;
            }
            csv.finish()?;
            if !profile.omitted.is_empty() {
                notes.push(format!("variance profile omitted sparse buckets d = {:?}", profile.omitted));
            }
            summary.variance_monotone = Some(profile.is_monotone());
            summary.variance_profile = Some(profile);

            let k = n as f64 / mean_distance;
            let mut csv = Csv::create(&out.join("chi2.csv"), &["d", "k", "samples", "ks", "critical", "p_value", "passed"])?;
            for (&d, b) in &summary.report.buckets {
                if d == 0 || b.count < eval::CHI2_MIN_SAMPLES {
                    continue;
                }
                let at_d: Vec<f64> = pred.iter().zip(test).filter(|(_, s)| s.d == d).map(|(&p, _)| p).collect();
                let fit = chi2_fit(&at_d, f64::from(d), k, cfg.alpha)?;
                csv.row(&[
                    d.to_string(),
                    io::f(k),
                    fit.samples.to_string(),
                    io::f(fit.ks),
                    io::f(fit.critical),
                    io::f(fit.p_value),
                    fit.passed.to_string(),
                ])?;
                summary.chi2.push(fit);
            }
            csv.finish()?;

            let seqs = distinct_sequences(data, test);
            if seqs.len() >= NORMALITY_MIN_SEQUENCES {
                let refs: Vec<&Sequence> = seqs.iter().collect();
                let norm = model_normality(ck.model(), &refs, cfg.normality_elements)?;
                write_normality(&out.join("normality.csv"), &norm.eval)?;
                write_normality(&out.join("normality_batch_stats.csv"), &norm.batch_stats)?;
                summary.normality = Some(norm);
            } else {
                notes.push(format!(
                    "normality skipped: {} distinct test sequences (< {NORMALITY_MIN_SEQUENCES})",
                    seqs.len()
                ));
            }
        }

        if cfg.outlier_sequences > 0 {
            let probe: Vec<Sequence> = match data.test_clusters() {
                Ok(cl) => cl.iter().map(|c| c.representative().clone()).collect(),
                Err(_) => test.iter().map(|p| p.s.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
            };
            let probe: Vec<&Sequence> = probe.iter().take(cfg.outlier_sequences).collect();
            let max_len = checkpoint.map(|c| c.model().spec.input_len).unwrap_or(usize::MAX);
            let ocfg = OutlierConfig {
                top_k: cfg.top_k,
                max_len,
                ..OutlierConfig::default()
            };
            let alphabet = Alphabet::dna();
            let mut rng = Streams::new(cfg.seed).rng("outliers", 0);
            let report = outlier_scan(predictor, &probe, alphabet.content_size() as u8, &ocfg, &mut rng)?;
            let mut csv = Csv::create(&out.join("outlier_means.csv"), &["d", "bin_lo", "bin_hi", "count"])?;
            for dist in &report.per_d {
                for b in &dist.histogram {
                    csv.row(&[dist.d.to_string(), io::f(b.lo), io::f(b.hi), b.count.to_string()])?;
                }
            }
            csv.finish()?;
            let mut csv = Csv::create(
                &out.join("outliers.csv"),
                &["rank", "d", "dhat", "abs_err", "edit_position", "run_at_edit", "longest_run", "s", "t"],
            )?;
            for (i, o) in report.worst.iter().enumerate() {
                csv.row(&[
                    (i + 1).to_string(),
                    o.d.to_string(),
                    io::f(o.dhat),
                    io::f(o.abs_err),
                    o.edit_position.to_string(),
                    o.run_at_edit.to_string(),
                    o.longest_run.to_string(),
                    alphabet.decode(&o.s),
                    alphabet.decode(&o.t),
                ])?;
            }
            csv.finish()?;
        }
    }
    summary.notes = notes;
    io::write_json(&out.join("eval_report.json"), &summary)?;
    Ok(summary)
}

fn distinct_sequences(data: &Dataset, test: &[PairSample]) -> Vec<Sequence> {
    let mut set: BTreeSet<Sequence> = test.iter().flat_map(|p| [p.s.clone(), p.t.clone()]).collect();
    if let Ok(cl) = data.test_clusters() {
        for c in cl {
            set.extend(c.reads.iter().cloned());
        }
    }
    set.into_iter().collect()
}

fn write_normality(path: &Path, stats: &[ElementStats]) -> CliResult<()> {
    let mut csv = Csv::create(path, &["element", "mean", "var", "skew", "ks"])?;
    for e in stats {
        csv.row(&[e.element.to_string(), io::f(e.mean), io::f(e.var), io::f(e.skew), io::f(e.ks)])?;
    }
    csv.finish()?;
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let cfg: EvalConfig = config::resolve(args.config.as_deref(), args)?;
    let checkpoint = match (&cfg.checkpoint, cfg.oracle) {
        (_, true) => None,
        (Some(p), false) => {
            if !p.exists() {
                return Err(CliError::data(format!("checkpoint {} not found", p.display())));
            }
            Some(Checkpoint::load(p)?)
        }
        (None, false) => return Err(CliError::usage("--checkpoint is required unless --oracle is set")),
    };
    if let Some(ck) = &checkpoint {
        let spec = &ck.model().spec;
        if cfg.arch.is_some_and(|a| a != spec.kind) || cfg.dim.is_some_and(|d| d != spec.embedding_dim) {
            return Err(CliError::data(format!(
                "checkpoint is {}({}), expected {}({})",
                spec.kind,
                spec.embedding_dim,
                cfg.arch.map(|a| a.to_string()).unwrap_or_else(|| spec.kind.to_string()),
                cfg.dim.unwrap_or(spec.embedding_dim)
            )));
        }
    }
    let data = Dataset::load(&cfg.data, &Alphabet::dna(), true)?;
    prepare_out_dir(&cfg.out, args.force)?;
    let s = evaluate(&data, checkpoint.as_ref(), &cfg, Diagnostics { full: true }, &cfg.out)?;
    config::write_effective(&cfg.out, &cfg)?;
    println!(
        "{}({}) {}: AE_g = {:.4}, AE_h = {}",
        s.arch,
        s.dim,
        s.loss,
        s.report.ae_g,
        s.report.ae_h.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
    );
    for n in &s.notes {
        println!("note: {n}");
    }
    Ok(())
}
