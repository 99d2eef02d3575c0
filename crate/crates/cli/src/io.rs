//! Dataset directory layout and report writers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use levemb_core::datagen::{self, Cluster, EditChannelConfig, MeanDistance, PairCounts, PairSample};
use levemb_core::rng::Streams;
use levemb_core::seqcore::Alphabet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub const READS: &str = "reads.tsv";
pub const REFERENCES: &str = "references.tsv";
pub const TRAIN_PAIRS: &str = "train_pairs.tsv";
pub const TEST_PAIRS: &str = "test_pairs.tsv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub clusters: usize,
    pub ref_len: usize,
    pub reads_per_cluster: usize,
    pub channel: EditChannelConfig,
    pub test_fraction: f64,
    pub counts: PairCounts,
    pub mean_distance: MeanDistance,
    pub train_cluster_ids: Vec<u32>,
    pub test_cluster_ids: Vec<u32>,
}

/// A dataset directory: pair files plus, optionally, clusters and a manifest.
pub struct Dataset {
    pub dir: PathBuf,
    pub train: Vec<PairSample>,
    pub test: Vec<PairSample>,
    pub clusters: Option<Vec<Cluster>>,
    pub manifest: Option<DatasetManifest>,
}

impl Dataset {
    pub fn load(dir: &Path, alphabet: &Alphabet, verify: bool) -> CliResult<Self> {
        if !dir.is_dir() {
            return Err(CliError::data(format!("dataset directory {} not found", dir.display())));
        }
        let pairs = |name: &str| -> CliResult<Vec<PairSample>> {
            let p = dir.join(name);
            if !p.exists() {
                return Err(CliError::data(format!("missing {}", p.display())));
            }
            Ok(datagen::load_pairs(&p, alphabet, verify)?)
        };
        let train = pairs(TRAIN_PAIRS)?;
        let test = pairs(TEST_PAIRS)?;
        let reads = dir.join(READS);
        let clusters = if reads.exists() {
            let refs = dir.join(REFERENCES);
            Some(datagen::load_clusters(&reads, refs.exists().then_some(refs.as_path()), alphabet)?)
        } else {
            None
        };
        let manifest_path = dir.join(MANIFEST);
        let manifest = if manifest_path.exists() {
            Some(serde_json::from_str(&fs::read_to_string(&manifest_path)?)?)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            train,
            test,
            clusters,
            manifest,
        })
    }

    /// `M` from the manifest, else a Monte Carlo estimate over the loaded clusters.
    pub fn mean_distance(&self, seed: u64) -> CliResult<f64> {
        if let Some(m) = &self.manifest {
            return Ok(m.mean_distance.mean);
        }
        let clusters = self
            .clusters
            .as_ref()
            .ok_or_else(|| CliError::data("no manifest and no reads.tsv: cannot estimate M"))?;
        let refs: Vec<&Cluster> = clusters.iter().collect();
        let m = datagen::estimate_mean_distance(&refs, 2000, &mut Streams::new(seed).rng("estimate-m", 0))?;
        Ok(m.mean)
    }

    /// Clusters held out from training (all clusters when the split is unknown).
    pub fn test_clusters(&self) -> CliResult<Vec<&Cluster>> {
        let clusters = self
            .clusters
            .as_ref()
            .ok_or_else(|| CliError::data(format!("{} has no {READS}", self.dir.display())))?;
        Ok(match &self.manifest {
            Some(m) => {
                let ids: std::collections::HashSet<u32> = m.test_cluster_ids.iter().copied().collect();
                clusters.iter().filter(|c| ids.contains(&c.id)).collect()
            }
            None => clusters.iter().collect(),
        })
    }

    pub fn train_hash(&self) -> CliResult<String> {
        sha256_file(&self.dir.join(TRAIN_PAIRS))
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Small CSV writer for numeric reports (no quoting needed).
pub struct Csv {
    w: BufWriter<fs::File>,
    path: PathBuf,
}

impl Csv {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(Self {
            w,
            path: path.to_path_buf(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> CliResult<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.w.flush()?;
        Ok(self.path)
    }
}

/// Fixed-precision float for reports.
pub fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}
