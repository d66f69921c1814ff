//! On-disk datasets of simulated scenarios.
//!
//! ```text
//! <root>/manifest.toml
//! <root>/scenario_00000/hits.csv            x_um,y_um,z_um,t_s,source_tx
//! <root>/scenario_00000/clusters_kmeans.csv cluster_id,cx,cy,cz,ux,uy,uz,size
//! <root>/scenario_00000/features.csv        K-means summary in canonical order plus matched truth
//! <root>/scenario_00000/meta.toml           scenario config, seeds and true sizes (written last)
//! ```
//!
//! A scenario directory with a readable `meta.toml` is complete; generation
//! skips it on the next run.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{correct_centers, gmm, kmeans, ClusterSet, Method};
use crate::config::{Experiment, Physical, RunConfig};
use crate::error::{Error, Result};
use crate::eval::match_clusters;
use crate::geometry::Vec3;
use crate::nn::{canonical_order, features_from_parts, Frame, TrainingSample};
use crate::rng::{self, tag};
use crate::sim::{sample_tx_placement_separated, simulate_scenario, Hit, ScenarioConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const META_FILE: &str = "meta.toml";
pub const HITS_FILE: &str = "hits.csv";
pub const FEATURES_FILE: &str = "features.csv";

pub const HITS_HEADER: [&str; 5] = ["x_um", "y_um", "z_um", "t_s", "source_tx"];
pub const CLUSTERS_HEADER: [&str; 8] = ["cluster_id", "cx", "cy", "cz", "ux", "uy", "uz", "size"];
const FEATURES_HEADER: [&str; 11] = [
    "slot",
    "cluster_id",
    "kmeans_size",
    "ux",
    "uy",
    "uz",
    "target_tx",
    "target_size",
    "target_ux",
    "target_uy",
    "target_uz",
];

/// Write via a temporary sibling file and rename, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Decimal with `digits` significant digits, fixed notation for moderate
/// exponents and scientific otherwise, trailing zeros trimmed.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..digits as i32).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

/// Nine significant digits, the precision of every report and hit file.
pub fn fmt9(v: f64) -> String {
    fmt_sig(v, 9)
}

mod hex_seed {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:#018x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(s.trim_start_matches("0x"), 16).map_err(serde::de::Error::custom)
    }
}

/// Seeds of every random stage of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSeeds {
    #[serde(with = "hex_seed")]
    pub placement: u64,
    #[serde(with = "hex_seed")]
    pub kmeans: u64,
    #[serde(with = "hex_seed")]
    pub gmm: u64,
    #[serde(with = "hex_seed")]
    pub correction: u64,
}

impl ScenarioSeeds {
    pub fn new(master: u64, index: usize) -> Self {
        let i = index as u64;
        Self {
            placement: rng::derive(&[tag::PLACEMENT, master, i]),
            kmeans: rng::derive(&[tag::KMEANS, master, i]),
            gmm: rng::derive(&[tag::CLUSTER, master, i]),
            correction: rng::derive(&[tag::MCD, master, i]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub schema_version: u32,
    pub index: usize,
    pub true_sizes: Vec<u64>,
    pub surviving: u64,
    /// False when too few molecules arrived to cluster.
    pub has_features: bool,
    pub seeds: ScenarioSeeds,
    pub config: ScenarioConfig,
}

impl ScenarioMeta {
    pub fn true_directions(&self) -> Vec<Vec3> {
        self.config
            .tx_positions
            .iter()
            .map(|p| p.try_normalize(0.0).expect("transmitters lie outside the receiver"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub dir: String,
    pub seeds: ScenarioSeeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub complete: bool,
    pub physical: Physical,
    pub experiment: Experiment,
    pub scenarios: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn k(&self) -> usize {
        self.experiment.k
    }

    pub fn n_emitted(&self) -> u64 {
        self.physical.n_molecules_per_tx
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::parse(&path, e.message()))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(&path, format!("unsupported schema {}", m.schema_version)));
        }
        Ok(m)
    }

    fn save(&self, root: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::parse(root.join(MANIFEST_FILE), e))?;
        write_atomic(&root.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Entries belonging to `split`.
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        let n = self.scenarios.len();
        self.scenarios
            .iter()
            .filter(|e| split.contains(e.index, n))
            .collect()
    }
}

/// 80/10/10 partition of scenarios by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    All,
    Train,
    Val,
    Test,
}

impl Split {
    pub fn from_slug(s: &str) -> Option<Split> {
        match s {
            "all" => Some(Split::All),
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Split::All => "all",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn contains(self, index: usize, n: usize) -> bool {
        let train_end = n * 8 / 10;
        let val_end = n * 9 / 10;
        match self {
            Split::All => true,
            Split::Train => index < train_end,
            Split::Val => (train_end..val_end).contains(&index),
            Split::Test => index >= val_end,
        }
    }
}

pub fn scenario_dir_name(index: usize) -> String {
    format!("scenario_{index:05}")
}

pub fn write_hits_csv(path: &Path, hits: &[Hit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::parse(path, e);
    w.write_record(HITS_HEADER).map_err(to_err)?;
    for h in hits {
        w.write_record([
            fmt9(h.position.x),
            fmt9(h.position.y),
            fmt9(h.position.z),
            fmt9(h.time_s),
            h.source_tx.to_string(),
        ])
        .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e))?;
    write_atomic(path, &bytes)
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    let found = r.headers().map_err(|e| Error::parse(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::parse(path, format!("expected header {}", header.join(","))));
    }
    r.records()
        .map(|rec| rec.map_err(|e| Error::parse(path, e)))
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, format!("line {line}: bad value in column {}", i + 1)))
}

pub fn read_hits_csv(path: &Path) -> Result<Vec<Hit>> {
    read_rows(path, &HITS_HEADER)?
        .iter()
        .map(|rec| {
            Ok(Hit {
                position: Vec3::new(field(path, rec, 0)?, field(path, rec, 1)?, field(path, rec, 2)?),
                time_s: field(path, rec, 3)?,
                source_tx: field(path, rec, 4)?,
            })
        })
        .collect()
}

pub fn write_clusters_csv(path: &Path, clusters: &ClusterSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::parse(path, e);
    w.write_record(CLUSTERS_HEADER).map_err(to_err)?;
    for (i, c) in clusters.clusters.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt9(c.centroid.x),
            fmt9(c.centroid.y),
            fmt9(c.centroid.z),
            fmt9(c.direction.x),
            fmt9(c.direction.y),
            fmt9(c.direction.z),
            c.size.to_string(),
        ])
        .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e))?;
    write_atomic(path, &bytes)
}

/// A scenario read back from disk.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dir: PathBuf,
    pub meta: ScenarioMeta,
    pub hits: Vec<Hit>,
}

impl Scenario {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = load_meta(dir)?;
        let hits = read_hits_csv(&dir.join(HITS_FILE))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            hits,
        })
    }

    pub fn points(&self) -> Vec<Vec3> {
        self.hits.iter().map(|h| h.position).collect()
    }

    pub fn k(&self) -> usize {
        self.meta.config.num_tx()
    }

    pub fn kmeans(&self) -> Result<ClusterSet> {
        kmeans(&self.points(), self.k(), self.meta.seeds.kmeans)
    }

    /// Run one clustering method with this scenario's seeds.
    pub fn cluster(&self, method: Method, k_nn: usize, support_fraction: f64) -> Result<ClusterSet> {
        let points = self.points();
        match method {
            Method::KMeans => self.kmeans(),
            Method::Gmm => gmm(&points, self.k(), self.meta.seeds.gmm),
            m => {
                let params = crate::clustering::CorrectionParams {
                    k_nn,
                    support_fraction,
                    seed: self.meta.seeds.correction,
                };
                correct_centers(&points, &self.kmeans()?, m, &params)
            }
        }
    }
}

pub fn load_meta(dir: &Path) -> Result<ScenarioMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ScenarioMeta = toml::from_str(&text).map_err(|e| Error::parse(&path, e.message()))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(&path, format!("unsupported schema {}", meta.schema_version)));
    }
    Ok(meta)
}

fn scenario_config(cfg: &RunConfig, index: usize, seeds: &ScenarioSeeds) -> Result<ScenarioConfig> {
    let p = &cfg.physical;
    let tx_positions = sample_tx_placement_separated(
        cfg.experiment.k,
        p.d_min_um,
        p.d_max_um,
        p.rx_radius_um,
        cfg.experiment.min_separation_deg,
        seeds.placement,
    )?;
    Ok(ScenarioConfig {
        tx_positions,
        n_molecules_per_tx: p.n_molecules_per_tx,
        channel: p.channel(),
        dt_s: p.dt_s,
        master_seed: cfg.experiment.seed,
        scenario_index: index as u64,
        stepping: p.stepping,
    })
}

fn write_features_csv(path: &Path, clusters: &ClusterSet, meta: &ScenarioMeta) -> Result<()> {
    let dirs = clusters.directions();
    let sizes: Vec<f64> = clusters.sizes().iter().map(|&s| s as f64).collect();
    let order = canonical_order(&dirs, &sizes);
    let ordered: Vec<Vec3> = order.iter().map(|&i| dirs[i]).collect();
    let truth = meta.true_directions();
    let perm = match_clusters(&ordered, &truth)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::parse(path, e);
    w.write_record(FEATURES_HEADER).map_err(to_err)?;
    for (slot, (&ci, &tx)) in order.iter().zip(&perm).enumerate() {
        let u = dirs[ci];
        let t = truth[tx];
        // Shortest round-trip formatting keeps features bit-exact.
        w.write_record([
            slot.to_string(),
            ci.to_string(),
            clusters.clusters[ci].size.to_string(),
            u.x.to_string(),
            u.y.to_string(),
            u.z.to_string(),
            tx.to_string(),
            meta.true_sizes[tx].to_string(),
            t.x.to_string(),
            t.y.to_string(),
            t.z.to_string(),
        ])
        .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e))?;
    write_atomic(path, &bytes)
}

/// Simulate scenario `index` of `cfg` into `dir` and cluster it with
/// K-means. An existing complete scenario with the same configuration is
/// left untouched.
pub fn generate_scenario(cfg: &RunConfig, dir: &Path, index: usize) -> Result<ScenarioMeta> {
    let seeds = ScenarioSeeds::new(cfg.experiment.seed, index);
    let config = scenario_config(cfg, index, &seeds)?;
    if let Ok(meta) = load_meta(dir) {
        if meta.config == config && meta.seeds == seeds {
            return Ok(meta);
        }
        log::warn!("{}: stale scenario, regenerating", dir.display());
    }
    let dir = dir.to_path_buf();
    let hs = simulate_scenario(&config)?;
    write_hits_csv(&dir.join(HITS_FILE), &hs.hits)?;
    let mut meta = ScenarioMeta {
        schema_version: SCHEMA_VERSION,
        index,
        true_sizes: hs.true_sizes,
        surviving: hs.surviving,
        has_features: false,
        seeds,
        config,
    };
    // Cluster what a reader of hits.csv sees, not the unrounded positions.
    let scenario = Scenario {
        dir: dir.clone(),
        meta: meta.clone(),
        hits: read_hits_csv(&dir.join(HITS_FILE))?,
    };
    match scenario.kmeans() {
        Ok(km) => {
            write_clusters_csv(&dir.join("clusters_kmeans.csv"), &km)?;
            write_features_csv(&dir.join(FEATURES_FILE), &km, &meta)?;
            meta.has_features = true;
        }
        Err(e) => log::warn!("{}: no features ({e})", dir.display()),
    }
    let text = toml::to_string(&meta).map_err(|e| Error::parse(dir.join(META_FILE), e))?;
    write_atomic(&dir.join(META_FILE), text.as_bytes())?;
    Ok(meta)
}

/// Simulate and cluster every scenario of `cfg` under `root`.
///
/// Completed scenario directories are reused, so an interrupted run can be
/// resumed. The manifest is rewritten atomically at the start (incomplete)
/// and at the end (complete); its content depends only on `cfg`.
pub fn gen_dataset(cfg: &RunConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let hash = cfg.dataset_hash();
    if let Ok(existing) = Manifest::load(root) {
        if existing.config_hash != hash {
            return Err(Error::InvalidInput(format!(
                "{} holds a dataset with a different configuration (hash {})",
                root.display(),
                existing.config_hash
            )));
        }
    }
    let n = cfg.experiment.scenarios;
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        complete: false,
        physical: cfg.physical.clone(),
        experiment: cfg.experiment.clone(),
        scenarios: (0..n)
            .map(|i| ManifestEntry {
                index: i,
                dir: scenario_dir_name(i),
                seeds: ScenarioSeeds::new(cfg.experiment.seed, i),
            })
            .collect(),
    };
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    manifest.save(root)?;
    let done = std::sync::atomic::AtomicUsize::new(0);
    (0..n).into_par_iter().try_for_each(|i| {
        generate_scenario(cfg, &root.join(scenario_dir_name(i)), i)?;
        let d = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if d.is_multiple_of(100) || d == n {
            log::info!("generated {d}/{n} scenarios");
        }
        Ok::<(), Error>(())
    })?;
    manifest.complete = true;
    manifest.save(root)?;
    Ok(manifest)
}

/// Load a complete dataset's manifest, failing with a message naming the path.
pub fn open_dataset(root: &Path) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let m = Manifest::load(root)?;
    if !m.complete {
        return Err(Error::InvalidInput(format!(
            "dataset at {} is incomplete; rerun gen-dataset",
            root.display()
        )));
    }
    Ok(m)
}

/// Training samples of one split, read from the stored features.
pub fn load_training_samples(root: &Path, split: Split, frame: Frame) -> Result<Vec<TrainingSample>> {
    let manifest = open_dataset(root)?;
    let n_emitted = manifest.n_emitted() as f64;
    let entries = manifest.split(split);
    let loaded: Vec<Option<TrainingSample>> = entries
        .par_iter()
        .map(|e| {
            let dir = root.join(&e.dir);
            let meta = load_meta(&dir)?;
            if !meta.has_features {
                return Ok(None);
            }
            let path = dir.join(FEATURES_FILE);
            let rows = read_rows(&path, &FEATURES_HEADER)?;
            let mut dirs = Vec::new();
            let mut sizes = Vec::new();
            let mut t_dirs = Vec::new();
            let mut t_sizes = Vec::new();
            for rec in &rows {
                dirs.push(Vec3::new(field(&path, rec, 3)?, field(&path, rec, 4)?, field(&path, rec, 5)?));
                sizes.push(field::<u64>(&path, rec, 2)? as f64);
                t_sizes.push(field::<u64>(&path, rec, 7)? as f64);
                t_dirs.push(Vec3::new(field(&path, rec, 8)?, field(&path, rec, 9)?, field(&path, rec, 10)?));
            }
            let features = features_from_parts(&dirs, &sizes, n_emitted, frame)?;
            let target_dirs = features.order.iter().map(|&i| t_dirs[i]).collect();
            let target_sizes = features.order.iter().map(|&i| t_sizes[i]).collect();
            Ok(Some(TrainingSample {
                features,
                target_dirs,
                target_sizes,
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = loaded.iter().filter(|s| s.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} scenarios without features skipped");
    }
    Ok(loaded.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(1.0), "1");
        assert_eq!(fmt9(-4.99999999987), "-5");
        assert_eq!(fmt9(1.23456789012345), "1.23456789");
        assert_eq!(fmt9(123456.789012), "123456.789");
        assert_eq!(fmt9(0.000123456789012), "0.000123456789");
        assert_eq!(fmt9(1.5e-7), "1.5e-7");
        assert_eq!(fmt9(2.5e12), "2.5e12");
        assert_eq!(fmt9(0.25), "0.25");
        for v in [1.234567891234, -0.00098765432101, 7.0e-12, 9.999999999e8] {
            let back: f64 = fmt9(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 5e-9, "{v} -> {}", fmt9(v));
        }
    }

    #[test]
    fn splits_partition_indices() {
        for n in [1, 7, 10, 1000] {
            let mut counts = [0usize; 3];
            for i in 0..n {
                let hits: Vec<bool> = [Split::Train, Split::Val, Split::Test]
                    .iter()
                    .map(|s| s.contains(i, n))
                    .collect();
                assert_eq!(hits.iter().filter(|h| **h).count(), 1);
                for (c, h) in counts.iter_mut().zip(&hits) {
                    *c += *h as usize;
                }
            }
            if n == 1000 {
                assert_eq!(counts, [800, 100, 100]);
            }
        }
    }

    #[test]
    fn seeds_round_trip_through_toml() {
        let s = ScenarioSeeds::new(u64::MAX, 3);
        #[derive(Serialize, Deserialize)]
        struct W {
            s: ScenarioSeeds,
        }
        let text = toml::to_string(&W { s }).unwrap();
        assert_eq!(toml::from_str::<W>(&text).unwrap().s, s);
    }
}
