use std::path::PathBuf;

use clap::Args;
use levemb_core::esd::{self, detect_esd, scan_point, write_spectrum_csv, EsdScanConfig, SeedScan, Spectrum};
use levemb_core::seqcore::{Alphabet, Sequence};
use levemb_core::siamese::{ArchKind, LossKind};
use serde::{Deserialize, Serialize};

use super::{par_map, TrainSettings};
use crate::io::{self, Csv, Dataset};
use crate::{config, prepare_out_dir, CliError, CliResult};

#[derive(Debug, Clone, Args, Serialize)]
pub struct EsdScanArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchKind>,
    /// Ascending embedding dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Eigenvalue threshold for the effective rank.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    /// Difference pairs sampled for each covariance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_pairs: Option<usize>,
    /// Concurrent (dim, seed) trainings.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsdCommandConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub arch: ArchKind,
    pub dims: Vec<usize>,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
    pub tau: f64,
    pub slack: f64,
    pub sample_pairs: usize,
    pub jobs: usize,
}

impl Default for EsdCommandConfig {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("esd"),
            arch: ArchKind::Cnn5,
            dims: vec![20, 40, 60, 80, 100, 120],
            loss: LossKind::Pnll,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seeds: vec![0],
            tau: esd::DEFAULT_TAU,
            slack: esd::DEFAULT_SLACK,
            sample_pairs: 20_000,
            jobs: 1,
        }
    }
}

impl EsdCommandConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.dims.is_empty() || self.dims.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::usage(format!("dims must be strictly ascending, got {:?}", self.dims)));
        }
        if self.seeds.is_empty() {
            return Err(CliError::usage("at least one seed is required"));
        }
        if !(self.tau > 0.0) || !(0.0..1.0).contains(&self.slack) {
            return Err(CliError::usage("tau must be > 0 and slack in [0, 1)"));
        }
        Ok(())
    }

    pub fn scan_config(&self, mean_distance: f64) -> EsdScanConfig {
        let settings = TrainSettings {
            arch: self.arch,
            loss: self.loss,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            ..TrainSettings::default()
        };
        EsdScanConfig {
            template: settings.spec(),
            dims: self.dims.clone(),
            train: settings.train_config(),
            loss: self.loss,
            seeds: self.seeds.clone(),
            tau: self.tau,
            slack: self.slack,
            sample_pairs: self.sample_pairs,
            mean_distance,
        }
    }
}

/// Runs the scan with up to `cfg.jobs` concurrent trainings and writes its outputs.
pub fn run_scan(data: &Dataset, cfg: &EsdCommandConfig) -> CliResult<Vec<SeedScan>> {
    cfg.validate()?;
    let mean_distance = data.mean_distance(cfg.seeds[0])?;
    let scan = cfg.scan_config(mean_distance);
    let probe: Vec<&Sequence> = data.test_clusters()?.iter().map(|c| c.representative()).collect();
    if probe.len() < 2 {
        return Err(CliError::data("ESD scan needs at least two held-out clusters"));
    }
    let cells: Vec<(u64, usize)> = cfg.seeds.iter().flat_map(|&s| cfg.dims.iter().map(move |&d| (s, d))).collect();
    let validation = &data.test[..data.test.len().min(500)];
    let spectra: Vec<levemb_core::Result<Spectrum>> = par_map(&cells, cfg.jobs, |&(seed, dim)| {
        scan_point(&data.train, validation, &probe, &scan, dim, seed)
    });
    let mut spectra = spectra.into_iter();
    let mut out = Vec::new();
    let mut ranks = Csv::create(&cfg.out.join("ranks.csv"), &["seed", "dim", "effective_rank", "full", "contrast"])?;
    for &seed in &cfg.seeds {
        let per_seed = cfg.dims.iter().map(|_| spectra.next().expect("one per cell")).collect::<Result<Vec<_>, _>>()?;
        let report = detect_esd(&per_seed, cfg.tau, cfg.slack)?;
        let f = std::fs::File::create(cfg.out.join(format!("spectrum_seed{seed}.csv")))?;
        write_spectrum_csv(std::io::BufWriter::new(f), &per_seed)?;
        for r in &report.ranks {
            ranks.row(&[seed.to_string(), r.dim.to_string(), r.effective_rank.to_string(), r.full.to_string(), io::f(r.contrast)])?;
        }
        out.push(SeedScan { seed, report });
    }
    ranks.finish()?;
    io::write_json(&cfg.out.join("esd_report.json"), &out)?;
    Ok(out)
}

pub fn esd_scan(args: &EsdScanArgs) -> CliResult<()> {
    let cfg: EsdCommandConfig = config::resolve(args.config.as_deref(), args)?;
    cfg.validate()?;
    let data = Dataset::load(&cfg.data, &Alphabet::dna(), true)?;
    prepare_out_dir(&cfg.out, args.force)?;
    config::write_effective(&cfg.out, &cfg)?;
    let scans = run_scan(&data, &cfg)?;
    println!("tau = {}, slack = {}", cfg.tau, cfg.slack);
    for s in &scans {
        let ranks: Vec<String> = s.report.ranks.iter().map(|r| format!("{}:{}", r.dim, r.effective_rank)).collect();
        println!("seed {}: {} (ranks {})", s.seed, s.report.outcome, ranks.join(" "));
    }
    Ok(())
}
