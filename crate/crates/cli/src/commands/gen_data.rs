use std::path::PathBuf;

use clap::Args;
use levemb_core::datagen::{self, Cluster, EditChannelConfig, PairCounts};
use levemb_core::rng::Streams;
use levemb_core::seqcore::Alphabet;
use serde::{Deserialize, Serialize};

use crate::io::{self, DatasetManifest};
use crate::{config, prepare_out_dir, CliResult};

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reads_per_cluster: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_sub: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_del: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_ins: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_homologous: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_nonhomologous: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_homologous: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_nonhomologous: Option<usize>,
    /// Cross-cluster pairs used to estimate M.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub out: PathBuf,
    pub clusters: usize,
    pub ref_len: usize,
    pub reads_per_cluster: usize,
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub test_fraction: f64,
    pub train_homologous: usize,
    pub train_nonhomologous: usize,
    pub test_homologous: usize,
    pub test_nonhomologous: usize,
    pub m_samples: usize,
    pub seed: u64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("data"),
            clusters: 2000,
            ref_len: 150,
            reads_per_cluster: 5,
            p_sub: 0.01,
            p_del: 0.01,
            p_ins: 0.01,
            test_fraction: 0.2,
            train_homologous: 8000,
            train_nonhomologous: 8000,
            test_homologous: 2000,
            test_nonhomologous: 2000,
            m_samples: 2000,
            seed: 0,
        }
    }
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let cfg: GenDataConfig = config::resolve(args.config.as_deref(), args)?;
    let channel = EditChannelConfig {
        p_sub: cfg.p_sub,
        p_del: cfg.p_del,
        p_ins: cfg.p_ins,
    };
    channel.validate()?;
    prepare_out_dir(&cfg.out, args.force)?;
    let alphabet = Alphabet::dna();
    let streams = Streams::new(cfg.seed);
    let clusters = datagen::build_clusters(
        cfg.clusters,
        cfg.ref_len,
        cfg.reads_per_cluster,
        &channel,
        &alphabet,
        &mut streams.rng("clusters", 0),
    )?;
    let counts = PairCounts {
        train_homologous: cfg.train_homologous,
        train_nonhomologous: cfg.train_nonhomologous,
        test_homologous: cfg.test_homologous,
        test_nonhomologous: cfg.test_nonhomologous,
    };
    let split = datagen::split_by_cluster(&clusters, cfg.test_fraction, &counts, &mut streams.rng("split", 0))?;
    let all: Vec<&Cluster> = clusters.iter().collect();
    let m = datagen::estimate_mean_distance(&all, cfg.m_samples, &mut streams.rng("estimate-m", 0))?;
    datagen::save_cluster_reads(&cfg.out.join(io::READS), &clusters, &alphabet)?;
    datagen::save_cluster_references(&cfg.out.join(io::REFERENCES), &clusters, &alphabet)?;
    datagen::save_pairs(&cfg.out.join(io::TRAIN_PAIRS), &split.train, &alphabet)?;
    datagen::save_pairs(&cfg.out.join(io::TEST_PAIRS), &split.test, &alphabet)?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        clusters: cfg.clusters,
        ref_len: cfg.ref_len,
        reads_per_cluster: cfg.reads_per_cluster,
        channel,
        test_fraction: cfg.test_fraction,
        counts,
        mean_distance: m,
        train_cluster_ids: split.train_cluster_ids,
        test_cluster_ids: split.test_cluster_ids,
    };
    io::write_json(&cfg.out.join(io::MANIFEST), &manifest)?;
    config::write_effective(&cfg.out, &cfg)?;
    println!(
        "wrote {} clusters, {} train / {} test pairs to {} (M = {:.3} ± {:.3})",
        clusters.len(),
        split.train.len(),
        split.test.len(),
        cfg.out.display(),
        m.mean,
        m.std_err
    );
    Ok(())
}
