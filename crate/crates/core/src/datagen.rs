//! Synthetic DNA-storage style datasets: clusters of noisy reads generated through an
//! edit channel, labelled pair samples, cluster-level train/test splits and TSV I/O.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seqcore::{levenshtein, Alphabet, Sequence};
use crate::{Error, Result};

/// Independent per-position substitution / deletion / insertion probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditChannelConfig {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
}

impl EditChannelConfig {
    pub fn uniform(p: f64) -> Self {
        Self {
            p_sub: p,
            p_del: p,
            p_ins: p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_sub, self.p_del, self.p_ins];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!("channel probabilities must lie in [0,1]: {self:?}")));
        }
        if ps.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::invalid(format!("p_sub + p_del + p_ins must be <= 1: {self:?}")));
        }
        Ok(())
    }
}

impl Default for EditChannelConfig {
    fn default() -> Self {
        Self::uniform(0.01)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub id: u32,
    pub reference: Sequence,
    pub reads: Vec<Sequence>,
}

impl Cluster {
    /// One sequence standing for the cluster: its first read, or the reference if it has none.
    pub fn representative(&self) -> &Sequence {
        self.reads.first().unwrap_or(&self.reference)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSample {
    pub s: Sequence,
    pub t: Sequence,
    pub d: u32,
    pub homologous: bool,
}

impl PairSample {
    /// Labels a pair with its exact distance.
    pub fn labelled(s: Sequence, t: Sequence, homologous: bool) -> Self {
        let d = levenshtein(&s, &t) as u32;
        Self { s, t, d, homologous }
    }
}

/// Uniform symbol among the `n_symbols` content codes.
fn random_symbol<R: Rng + ?Sized>(n_symbols: u8, rng: &mut R) -> u8 {
    rng.random_range(0..n_symbols)
}

/// Passes `reference` through the edit channel.
///
/// Each position independently suffers one of: substitution by a different symbol,
/// deletion, or insertion of a uniform symbol before it. One more insertion slot follows
/// the last position.
pub fn mutate<R: Rng + ?Sized>(reference: &Sequence, cfg: &EditChannelConfig, n_symbols: u8, rng: &mut R) -> Sequence {
    let mut out = Vec::with_capacity(reference.len() + 4);
    let (t_sub, t_del, t_ins) = (cfg.p_sub, cfg.p_sub + cfg.p_del, cfg.p_sub + cfg.p_del + cfg.p_ins);
    for &c in reference.content() {
        let u: f64 = rng.random();
        if u < t_sub {
            // uniform over the other symbols
            let mut x = rng.random_range(0..n_symbols - 1);
            if x >= c {
                x += 1;
            }
            out.push(x);
        } else if u < t_del {
        } else if u < t_ins {
            out.push(random_symbol(n_symbols, rng));
            out.push(c);
        } else {
            out.push(c);
        }
    }
    if rng.random::<f64>() < cfg.p_ins {
        out.push(random_symbol(n_symbols, rng));
    }
    Sequence::from_codes(out)
}

/// Random references with `reads_per_cluster` channel outputs each.
pub fn build_clusters<R: Rng + ?Sized>(
    n_clusters: usize,
    ref_len: usize,
    reads_per_cluster: usize,
    cfg: &EditChannelConfig,
    alphabet: &Alphabet,
    rng: &mut R,
) -> Result<Vec<Cluster>> {
    cfg.validate()?;
    if n_clusters == 0 || ref_len == 0 {
        return Err(Error::invalid("cluster count and reference length must be positive"));
    }
    let k = alphabet.content_size() as u8;
    if k < 2 {
        return Err(Error::invalid("need at least two content symbols"));
    }
    Ok((0..n_clusters)
        .map(|id| {
            let reference = Sequence::from_codes((0..ref_len).map(|_| random_symbol(k, rng)).collect());
            let reads = (0..reads_per_cluster).map(|_| mutate(&reference, cfg, k, rng)).collect();
            Cluster {
                id: id as u32,
                reference,
                reads,
            }
        })
        .collect())
}

/// Sampled pairs plus the number of clusters that could not provide homologous pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<PairSample>,
    pub skipped_clusters: usize,
}

/// Samples homologous pairs within clusters and non-homologous pairs across clusters.
///
/// Pairs are drawn first and labelled by the exact oracle afterwards, then shuffled.
pub fn make_pairs<R: Rng + ?Sized>(clusters: &[&Cluster], n_homologous: usize, n_nonhomologous: usize, rng: &mut R) -> Result<PairSet> {
    let eligible: Vec<&Cluster> = clusters.iter().copied().filter(|c| c.reads.len() >= 2).collect();
    let skipped_clusters = clusters.len() - eligible.len();
    if skipped_clusters > 0 {
        log::warn!("{skipped_clusters} clusters have fewer than 2 reads and yield no homologous pairs");
    }
    if n_homologous > 0 && eligible.is_empty() {
        return Err(Error::invalid("no cluster has two reads to form homologous pairs"));
    }
    if n_nonhomologous > 0 && clusters.len() < 2 {
        return Err(Error::invalid("non-homologous pairs need at least two clusters"));
    }
    let mut drawn: Vec<(&Sequence, &Sequence, bool)> = Vec::with_capacity(n_homologous + n_nonhomologous);
    for _ in 0..n_homologous {
        let c = eligible[rng.random_range(0..eligible.len())];
        let i = rng.random_range(0..c.reads.len());
        let mut j = rng.random_range(0..c.reads.len() - 1);
        if j >= i {
            j += 1;
        }
        drawn.push((&c.reads[i], &c.reads[j], true));
    }
    let pick = |c: &'_ Cluster, rng: &mut R| -> usize {
        if c.reads.is_empty() {
            0
        } else {
            rng.random_range(0..c.reads.len())
        }
    };
    for _ in 0..n_nonhomologous {
        let a = rng.random_range(0..clusters.len());
        let mut b = rng.random_range(0..clusters.len() - 1);
        if b >= a {
            b += 1;
        }
        let (ca, cb) = (clusters[a], clusters[b]);
        let (ia, ib) = (pick(ca, rng), pick(cb, rng));
        drawn.push((member(ca, ia), member(cb, ib), false));
    }
    let mut pairs: Vec<PairSample> = drawn
        .into_iter()
        .map(|(s, t, h)| PairSample::labelled(s.clone(), t.clone(), h))
        .collect();
    pairs.shuffle(rng);
    Ok(PairSet {
        pairs,
        skipped_clusters,
    })
}

/// Disjoint partition of cluster ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterPartition {
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
}

impl ClusterPartition {
    pub fn select<'a>(ids: &[u32], clusters: &'a [Cluster]) -> Vec<&'a Cluster> {
        let by_id: BTreeMap<u32, &Cluster> = clusters.iter().map(|c| (c.id, c)).collect();
        ids.iter().filter_map(|id| by_id.get(id).copied()).collect()
    }
}

/// Randomly assigns `round(test_fraction · n)` clusters (at least one, at most n − 1) to test.
pub fn split_clusters<R: Rng + ?Sized>(clusters: &[Cluster], test_fraction: f64, rng: &mut R) -> Result<ClusterPartition> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction must be in (0,1), got {test_fraction}")));
    }
    if clusters.len() < 2 {
        return Err(Error::invalid("need at least two clusters to split"));
    }
    let mut ids: Vec<u32> = clusters.iter().map(|c| c.id).collect();
    ids.shuffle(rng);
    let n_test = ((test_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut test_ids = ids.split_off(ids.len() - n_test);
    let mut train_ids = ids;
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(ClusterPartition { train_ids, test_ids })
}

/// Numbers of homologous / non-homologous pairs per side of a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub train_homologous: usize,
    pub train_nonhomologous: usize,
    pub test_homologous: usize,
    pub test_nonhomologous: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<PairSample>,
    pub test: Vec<PairSample>,
    pub train_cluster_ids: Vec<u32>,
    pub test_cluster_ids: Vec<u32>,
}

/// Partitions clusters and samples pairs independently within each side.
pub fn split_by_cluster<R: Rng + ?Sized>(clusters: &[Cluster], test_fraction: f64, counts: &PairCounts, rng: &mut R) -> Result<DatasetSplit> {
    let part = split_clusters(clusters, test_fraction, rng)?;
    let train_c = ClusterPartition::select(&part.train_ids, clusters);
    let test_c = ClusterPartition::select(&part.test_ids, clusters);
    let train = make_pairs(&train_c, counts.train_homologous, counts.train_nonhomologous, rng)?.pairs;
    let test = make_pairs(&test_c, counts.test_homologous, counts.test_nonhomologous, rng)?.pairs;
    Ok(DatasetSplit {
        train,
        test,
        train_cluster_ids: part.train_ids,
        test_cluster_ids: part.test_ids,
    })
}

/// Monte Carlo estimate of the mean distance between independent sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanDistance {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Mean oracle distance between representatives of random distinct clusters.
pub fn estimate_mean_distance<R: Rng + ?Sized>(clusters: &[&Cluster], n_samples: usize, rng: &mut R) -> Result<MeanDistance> {
    if clusters.len() < 2 {
        return Err(Error::invalid("estimating M needs at least two clusters"));
    }
    if n_samples < 100 {
        return Err(Error::invalid(format!("estimating M needs >= 100 samples, got {n_samples}")));
    }
    let ds: Vec<f64> = (0..n_samples)
        .map(|_| {
            let a = rng.random_range(0..clusters.len());
            let mut b = rng.random_range(0..clusters.len() - 1);
            if b >= a {
                b += 1;
            }
            levenshtein(clusters[a].representative(), clusters[b].representative()) as f64
        })
        .collect();
    let n = ds.len() as f64;
    let mean = ds.iter().sum::<f64>() / n;
    let var = ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MeanDistance {
        mean,
        std_err: (var / n).sqrt(),
        samples: ds.len(),
    })
}

// ---------------------------------------------------------------------------
// TSV I/O

fn member(c: &Cluster, i: usize) -> &Sequence {
    if c.reads.is_empty() {
        &c.reference
    } else {
        &c.reads[i]
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// `seq_s<TAB>seq_t<TAB>d<TAB>homologous(0|1)` per line.
pub fn save_pairs(path: &Path, pairs: &[PairSample], alphabet: &Alphabet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            alphabet.decode(&p.s),
            alphabet.decode(&p.t),
            p.d,
            u8::from(p.homologous)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a pair file. With `verify`, every 100th sample's distance is recomputed.
pub fn load_pairs(path: &Path, alphabet: &Alphabet, verify: bool) -> Result<Vec<PairSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [s, t, d, h] = fields[..] else {
            return Err(parse_err(path, lineno, format!("expected 4 tab-separated fields, got {}", fields.len())));
        };
        let s = alphabet.encode(s).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let t = alphabet.encode(t).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let d: u32 = d
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad distance {d:?}")))?;
        let homologous = match h.trim() {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(path, lineno, format!("homologous flag must be 0 or 1, got {other:?}"))),
        };
        let sample = PairSample { s, t, d, homologous };
        if verify && pairs.len() % 100 == 0 {
            let truth = levenshtein(&sample.s, &sample.t) as u32;
            if truth != d {
                return Err(parse_err(path, lineno, format!("distance {d} but oracle gives {truth}")));
            }
        }
        pairs.push(sample);
    }
    Ok(pairs)
}

/// `cluster_id<TAB>sequence` per line; writes each cluster's reads.
pub fn save_cluster_reads(path: &Path, clusters: &[Cluster], alphabet: &Alphabet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in clusters {
        for r in &c.reads {
            writeln!(w, "{}\t{}", c.id, alphabet.decode(r))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Same format as [`save_cluster_reads`], one line per reference.
pub fn save_cluster_references(path: &Path, clusters: &[Cluster], alphabet: &Alphabet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in clusters {
        writeln!(w, "{}\t{}", c.id, alphabet.decode(&c.reference))?;
    }
    w.flush()?;
    Ok(())
}

fn read_cluster_lines(path: &Path, alphabet: &Alphabet) -> Result<Vec<(u32, Sequence)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, seq) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, i + 1, "expected `cluster_id<TAB>sequence`"))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad cluster id {id:?}")))?;
        let seq = alphabet.encode(seq.trim_end()).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        out.push((id, seq));
    }
    Ok(out)
}

/// Loads clusters ordered by id. Without a reference file the first read of each
/// cluster stands in as its reference.
pub fn load_clusters(reads: &Path, references: Option<&Path>, alphabet: &Alphabet) -> Result<Vec<Cluster>> {
    let mut map: BTreeMap<u32, (Option<Sequence>, Vec<Sequence>)> = BTreeMap::new();
    for (id, s) in read_cluster_lines(reads, alphabet)? {
        map.entry(id).or_default().1.push(s);
    }
    if let Some(path) = references {
        for (id, s) in read_cluster_lines(path, alphabet)? {
            let e = map.entry(id).or_default();
            if e.0.replace(s).is_some() {
                return Err(Error::invalid(format!("cluster {id} has two references")));
            }
        }
    }
    map.into_iter()
        .map(|(id, (reference, reads))| {
            let reference = reference
                .or_else(|| reads.first().cloned())
                .ok_or_else(|| Error::invalid(format!("cluster {id} is empty")))?;
            Ok(Cluster { id, reference, reads })
        })
        .collect()
}
