use std::path::PathBuf;

use clap::Args;
use levemb_core::seqcore::Alphabet;
use levemb_core::siamese::{ArchKind, LossKind};
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Diagnostics, EvalConfig, EvalSummary, ERRORS_HEADER};
use super::{par_map, train_model, TrainSettings};
use crate::io::{self, Csv, Dataset};
use crate::{config, prepare_out_dir, CliError, CliResult};

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub archs: Option<Vec<ArchKind>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<LossKind>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_pairs: Option<usize>,
    /// Run every diagnostic per cell, not just the error metrics.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub full_eval: bool,
    /// Concurrent cells.
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
pub struct GridConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub archs: Vec<ArchKind>,
    pub dims: Vec<usize>,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub validation_pairs: usize,
    pub full_eval: bool,
    pub jobs: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("grid"),
            archs: vec![ArchKind::Cnn5],
            dims: vec![t.dim],
            losses: LossKind::TABLE.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            validation_pairs: t.validation_pairs,
            full_eval: false,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub arch: ArchKind,
    pub dim: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("{}_{}_{}_seed{}", self.arch, self.dim, self.loss.to_string().replace(':', "-"), self.seed)
    }
}

/// Aggregate over the seeds of one (arch, dim, loss) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub arch: ArchKind,
    pub dim: usize,
    pub loss: LossKind,
    pub runs: usize,
    pub failed: usize,
    pub ae_g: Summary,
    pub ae_h: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let mid = s.len() / 2;
        let median = if s.len() % 2 == 1 { s[mid] } else { 0.5 * (s[mid - 1] + s[mid]) };
        Some(Self { mean, std, median })
    }

    /// `0.47±0.00`.
    pub fn table(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

pub struct GridResult {
    pub cells: Vec<(Cell, CliResult<EvalSummary>)>,
    pub rows: Vec<GridRow>,
}

impl GridConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.archs.is_empty() || self.dims.is_empty() || self.losses.is_empty() || self.seeds.is_empty() {
            return Err(CliError::usage("grid axes must be non-empty"));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut v = Vec::new();
        for &arch in &self.archs {
            for &dim in &self.dims {
                for &loss in &self.losses {
                    for &seed in &self.seeds {
                        v.push(Cell { arch, dim, loss, seed });
                    }
                }
            }
        }
        v
    }
}

fn run_cell(data: &Dataset, cfg: &GridConfig, cell: &Cell) -> CliResult<EvalSummary> {
    let dir = cfg.out.join("cells").join(cell.dir_name());
    std::fs::create_dir_all(&dir)?;
    let settings = TrainSettings {
        arch: cell.arch,
        dim: cell.dim,
        loss: cell.loss,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cell.seed,
        validation_pairs: cfg.validation_pairs,
        ..TrainSettings::default()
    };
    config::write_effective(&dir, &settings)?;
    let trained = train_model(data, &settings, None, &dir)?;
    let ecfg = EvalConfig {
        seed: cell.seed,
        ..EvalConfig::default()
    };
    evaluate(data, Some(&trained.checkpoint), &ecfg, Diagnostics { full: cfg.full_eval }, &dir)
}

/// Trains and evaluates every cell, then aggregates per (arch, dim, loss).
/// Failed cells are recorded and the grid continues.
pub fn run_grid(data: &Dataset, cfg: &GridConfig) -> CliResult<GridResult> {
    cfg.validate()?;
    let cells = cfg.cells();
    let results = par_map(&cells, cfg.jobs, |cell| {
        let r = run_cell(data, cfg, cell);
        if let Err(e) = &r {
            log::warn!("cell {} failed: {e}", cell.dir_name());
        }
        r
    });
    let cells: Vec<(Cell, CliResult<EvalSummary>)> = cells.into_iter().zip(results).collect();

    let mut errors = Csv::create(&cfg.out.join("errors.csv"), &ERRORS_HEADER)?;
    for (_, r) in &cells {
        if let Ok(s) = r {
            errors.row(&super::eval::errors_row(s))?;
        }
    }
    errors.finish()?;

    let mut rows = Vec::new();
    let mut csv = Csv::create(
        &cfg.out.join("grid.csv"),
        &[
            "arch", "dim", "loss", "runs", "failed", "ae_g_mean", "ae_g_std", "ae_g_median", "ae_h_mean", "ae_h_std", "ae_h_median",
            "ae_g", "ae_h",
        ],
    )?;
    for group in cells.chunks(cfg.seeds.len()) {
        let c = &group[0].0;
        let ok: Vec<&EvalSummary> = group.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
        let failed = group.len() - ok.len();
        let g = Summary::of(&ok.iter().map(|s| s.report.ae_g).collect::<Vec<_>>());
        let h = Summary::of(&ok.iter().filter_map(|s| s.report.ae_h).collect::<Vec<_>>());
        let cols = |s: Option<Summary>| match s {
            Some(s) => [io::f(s.mean), io::f(s.std), io::f(s.median)],
            None => [String::new(), String::new(), String::new()],
        };
        let mut fields = vec![c.arch.to_string(), c.dim.to_string(), c.loss.to_string(), ok.len().to_string(), failed.to_string()];
        fields.extend(cols(g));
        fields.extend(cols(h));
        fields.push(g.map(|s| s.table()).unwrap_or_else(|| "failed".into()));
        fields.push(h.map(|s| s.table()).unwrap_or_else(|| "failed".into()));
        csv.row(&fields)?;
        if let (Some(ae_g), Some(ae_h)) = (g, h) {
            rows.push(GridRow {
                arch: c.arch,
                dim: c.dim,
                loss: c.loss,
                runs: ok.len(),
                failed,
                ae_g,
                ae_h,
            });
        }
    }
    csv.finish()?;
    Ok(GridResult { cells, rows })
}

pub fn grid(args: &GridArgs) -> CliResult<()> {
    let cfg: GridConfig = config::resolve(args.config.as_deref(), args)?;
    cfg.validate()?;
    let data = Dataset::load(&cfg.data, &Alphabet::dna(), true)?;
    prepare_out_dir(&cfg.out, args.force)?;
    config::write_effective(&cfg.out, &cfg)?;
    let result = run_grid(&data, &cfg)?;
    for r in &result.rows {
        println!(
            "{}({}) {:<8} AE_g {}  AE_h {}{}",
            r.arch,
            r.dim,
            r.loss.to_string(),
            r.ae_g.table(),
            r.ae_h.table(),
            if r.failed > 0 { format!("  ({} failed)", r.failed) } else { String::new() }
        );
    }
    let failed = result.cells.iter().filter(|(_, r)| r.is_err()).count();
    if failed == result.cells.len() {
        return Err(CliError::data("every grid cell failed"));
    }
    Ok(())
}
