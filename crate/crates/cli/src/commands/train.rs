use std::path::{Path, PathBuf};

use clap::Args;
use levemb_core::checkpoint::{Checkpoint, CheckpointMeta};
use levemb_core::datagen::PairSample;
use levemb_core::ndnet::AdamConfig;
use levemb_core::rng::Streams;
use levemb_core::seqcore::Alphabet;
use levemb_core::siamese::{init_scale, ArchKind, ArchitectureSpec, EmbeddingModel, EpochLog, LossKind, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::io::{self, Csv, Dataset};
use crate::{config, prepare_out_dir, CliError, CliResult};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Model and optimisation settings shared by `train`, `esd-scan` and `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub arch: ArchKind,
    pub dim: usize,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Leading test pairs scored after every epoch (0 disables).
    pub validation_pairs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            arch: ArchKind::Cnn5,
            dim: 80,
            loss: LossKind::Pnll,
            epochs: 50,
            batch_size: 128,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            seed: 0,
            validation_pairs: 500,
        }
    }
}

impl TrainSettings {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn spec(&self) -> ArchitectureSpec {
        ArchitectureSpec::new(self.arch, self.dim)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.adam(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.spec().validate()?;
        if self.batch_size < 2 {
            return Err(CliError::usage("batch size must be >= 2"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(CliError::usage("invalid Adam settings"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-data` (or any directory with pair files).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// mse, mae, rechi2, pnll or gnll:<k>.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    /// Total epochs; a resumed run trains the remainder.
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
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_pairs: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCommandConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: TrainSettings,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("run"),
            resume: None,
            settings: TrainSettings::default(),
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// Trains (or resumes) a model on `data` and writes the checkpoint and log into `out`.
pub fn train_model(data: &Dataset, settings: &TrainSettings, resume: Option<&Path>, out: &Path) -> CliResult<TrainOutcome> {
    settings.validate()?;
    let mean_distance = data.mean_distance(settings.seed)?;
    let meta = CheckpointMeta {
        loss: settings.loss,
        seed: settings.seed,
        dataset_hash: data.train_hash()?,
        mean_distance,
    };
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.model().spec != settings.spec() {
                return Err(CliError::usage(format!(
                    "checkpoint architecture {:?} does not match requested {:?}",
                    ck.model().spec,
                    settings.spec()
                )));
            }
            if ck.meta.loss != settings.loss || ck.meta.seed != settings.seed {
                return Err(CliError::usage("checkpoint loss/seed differ from the requested run"));
            }
            if ck.meta.dataset_hash != meta.dataset_hash {
                return Err(CliError::data("checkpoint was trained on a different dataset"));
            }
            ck.trainer
        }
        None => {
            let log_r = init_scale(mean_distance, settings.dim)?;
            let model = EmbeddingModel::new(settings.spec(), log_r, &mut Streams::new(settings.seed).rng("init", 0))?;
            Trainer::new(model, settings.adam())
        }
    };
    let remaining = settings.epochs.saturating_sub(trainer.epochs_done);
    let validation: &[PairSample] = &data.test[..settings.validation_pairs.min(data.test.len())];
    let cfg = TrainConfig {
        epochs: remaining,
        ..settings.train_config()
    };
    let logs = trainer.train(&data.train, validation, settings.loss, &cfg)?;
    let checkpoint = Checkpoint::new(trainer, meta);
    checkpoint.save(&out.join(CHECKPOINT))?;
    let mut csv = Csv::create(&out.join(TRAIN_LOG), &["epoch", "loss", "ae_g", "ae_h"])?;
    for l in &logs {
        csv.row(&[l.epoch.to_string(), io::f(l.loss), io::opt(l.ae_g), io::opt(l.ae_h)])?;
    }
    csv.finish()?;
    Ok(TrainOutcome { checkpoint, logs })
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let cfg: TrainCommandConfig = config::resolve(args.config.as_deref(), args)?;
    cfg.settings.validate()?;
    if let Some(r) = &cfg.resume {
        if !r.exists() {
            return Err(CliError::data(format!("checkpoint {} not found", r.display())));
        }
    }
    let data = Dataset::load(&cfg.data, &Alphabet::dna(), true)?;
    // A resumed run may write into the directory holding its own checkpoint.
    prepare_out_dir(&cfg.out, args.force || cfg.resume.is_some())?;
    let outcome = train_model(&data, &cfg.settings, cfg.resume.as_deref(), &cfg.out)?;
    config::write_effective(&cfg.out, &cfg)?;
    let last = outcome.logs.last();
    println!(
        "trained {} epochs ({} total); final loss {}; checkpoint {}",
        outcome.logs.len(),
        outcome.checkpoint.trainer.epochs_done,
        last.map(|l| format!("{:.4}", l.loss)).unwrap_or_else(|| "-".into()),
        cfg.out.join(CHECKPOINT).display()
    );
    Ok(())
}
