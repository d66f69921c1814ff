use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::metrics::{
    angular_error_deg, ecdf, imbalance_analysis, localization_mape, localize, match_clusters,
    size_metrics, BinStats, LocalizationSummary, SizeMetrics,
};
use crate::channel::ChannelParams;
use crate::clustering::{imbalance, ClusterSet, Method};
use crate::config::RunConfig;
use crate::dataset::{fmt9, open_dataset, write_atomic, Manifest, ManifestEntry, Scenario, Split};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nn::{build_features, forward_angle, forward_size, ModelKind, ModelWeights};

/// Source of the direction estimates. Declaration order is the row order
/// of the angular table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CenterMethod {
    AngleNn,
    DensityMinCovDet,
    MinCovDet,
    Density,
    KMeans,
    Gmm,
}

impl CenterMethod {
    pub const ALL: [CenterMethod; 6] = [
        CenterMethod::AngleNn,
        CenterMethod::DensityMinCovDet,
        CenterMethod::MinCovDet,
        CenterMethod::Density,
        CenterMethod::KMeans,
        CenterMethod::Gmm,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            CenterMethod::AngleNn => "anglenn",
            CenterMethod::DensityMinCovDet => "density-mincovdet",
            CenterMethod::MinCovDet => "mincovdet",
            CenterMethod::Density => "density",
            CenterMethod::KMeans => "kmeans",
            CenterMethod::Gmm => "gmm",
        }
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.slug() == s)
    }

    fn clustering(self) -> Option<Method> {
        match self {
            CenterMethod::AngleNn => None,
            CenterMethod::DensityMinCovDet => Some(Method::DensityMinCovDet),
            CenterMethod::MinCovDet => Some(Method::MinCovDet),
            CenterMethod::Density => Some(Method::Density),
            CenterMethod::KMeans => Some(Method::KMeans),
            CenterMethod::Gmm => Some(Method::Gmm),
        }
    }
}

impl fmt::Display for CenterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

/// Source of the received-count estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeMethod {
    SizeNn,
    KMeans,
}

impl SizeMethod {
    pub fn slug(self) -> &'static str {
        match self {
            SizeMethod::SizeNn => "sizenn",
            SizeMethod::KMeans => "kmeans",
        }
    }
}

impl fmt::Display for SizeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

/// Center/size combinations of the localization table, in row order.
pub const LOCALIZATION_PAIRS: [(CenterMethod, SizeMethod); 7] = [
    (CenterMethod::AngleNn, SizeMethod::SizeNn),
    (CenterMethod::AngleNn, SizeMethod::KMeans),
    (CenterMethod::DensityMinCovDet, SizeMethod::KMeans),
    (CenterMethod::MinCovDet, SizeMethod::KMeans),
    (CenterMethod::Density, SizeMethod::KMeans),
    (CenterMethod::KMeans, SizeMethod::SizeNn),
    (CenterMethod::KMeans, SizeMethod::KMeans),
];

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub split: Split,
    pub k_nn: usize,
    pub support_fraction: f64,
    pub imbalance_bin_width: f64,
    pub inversion_d_max_um: f64,
    pub angle_weights: Option<ModelWeights>,
    pub size_weights: Option<ModelWeights>,
    /// Restrict the direction methods reported; `None` reports all available.
    pub methods: Option<Vec<CenterMethod>>,
}

impl ReportOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            split: Split::All,
            k_nn: cfg.methods.k_nn,
            support_fraction: cfg.methods.support_fraction,
            imbalance_bin_width: cfg.methods.imbalance_bin_width,
            inversion_d_max_um: cfg.methods.inversion_d_max_um,
            angle_weights: None,
            size_weights: None,
            methods: None,
        }
    }

    fn center_methods(&self) -> Vec<CenterMethod> {
        CenterMethod::ALL
            .into_iter()
            .filter(|m| *m != CenterMethod::AngleNn || self.angle_weights.is_some())
            .filter(|m| self.methods.as_ref().is_none_or(|v| v.contains(m)))
            .collect()
    }

    fn size_methods(&self) -> Vec<SizeMethod> {
        let mut v = Vec::new();
        if self.size_weights.is_some() {
            v.push(SizeMethod::SizeNn);
        }
        v.push(SizeMethod::KMeans);
        v
    }
}

/// Everything measured on one scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioRecord {
    pub index: usize,
    /// Imbalance of the K-means cluster sizes.
    pub imbalance: Option<f64>,
    /// Matched angular errors (degrees), one per transmitter, per method.
    pub angular: BTreeMap<CenterMethod, Vec<f64>>,
    /// True absorbed counts per transmitter.
    pub size_truth: Vec<f64>,
    /// Size estimates per transmitter, matched through the K-means directions.
    pub sizes: BTreeMap<SizeMethod, Vec<f64>>,
    /// Relative position errors per transmitter; `None` when unlocalizable.
    pub localization: BTreeMap<(CenterMethod, SizeMethod), Vec<Option<f64>>>,
    /// Methods that failed on this scenario, with the reason.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularSummary {
    pub mean_deg: Option<f64>,
    pub instances: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub k: usize,
    pub split: Split,
    pub bin_width: f64,
    pub center_methods: Vec<CenterMethod>,
    pub size_methods: Vec<SizeMethod>,
    pub scenarios: Vec<ScenarioRecord>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt9).unwrap_or_default()
}

impl MetricsReport {
    pub fn pairs(&self) -> Vec<(CenterMethod, SizeMethod)> {
        LOCALIZATION_PAIRS
            .into_iter()
            .filter(|(c, s)| self.center_methods.contains(c) && self.size_methods.contains(s))
            .collect()
    }

    fn failures_of(&self, label: &str) -> usize {
        self.scenarios
            .iter()
            .filter(|s| s.failures.iter().any(|(m, _)| m == label || m == "scenario"))
            .count()
    }

    /// Per-instance angular errors pooled over scenarios, in scenario order.
    pub fn angular_errors(&self, m: CenterMethod) -> Vec<f64> {
        self.scenarios
            .iter()
            .filter_map(|s| s.angular.get(&m))
            .flatten()
            .copied()
            .collect()
    }

    pub fn angular_summary(&self, m: CenterMethod) -> AngularSummary {
        let e = self.angular_errors(m);
        AngularSummary {
            mean_deg: (!e.is_empty()).then(|| e.iter().sum::<f64>() / e.len() as f64),
            instances: e.len(),
            failures: self.failures_of(m.slug()),
        }
    }

    pub fn size_summary(&self, m: SizeMethod) -> Option<SizeMetrics> {
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for s in &self.scenarios {
            if let Some(p) = s.sizes.get(&m) {
                pred.extend_from_slice(p);
                truth.extend_from_slice(&s.size_truth);
            }
        }
        size_metrics(&pred, &truth).ok()
    }

    pub fn localization_summary(&self, pair: (CenterMethod, SizeMethod)) -> LocalizationSummary {
        // Errors are already relative, so feed them as (estimate, truth)
        // pairs on a unit axis.
        localization_mape(
            self.scenarios
                .iter()
                .filter_map(|s| s.localization.get(&pair))
                .flatten()
                .map(|e| e.map(|r| (Vec3::X * (1.0 + r), Vec3::X))),
        )
    }

    pub fn imbalance_bins(&self, m: CenterMethod) -> Result<Vec<BinStats>> {
        let recs: Vec<(f64, f64)> = self
            .scenarios
            .iter()
            .filter_map(|s| Some((s.imbalance?, s.angular.get(&m)?)))
            .flat_map(|(imb, errs)| errs.iter().map(move |e| (imb, *e)))
            .collect();
        imbalance_analysis(&recs, self.bin_width)
    }

    pub fn table1_csv(&self) -> String {
        let mut s = String::from("method,k,mean_deg,instances,failures\n");
        for m in &self.center_methods {
            let a = self.angular_summary(*m);
            s += &format!("{},{},{},{},{}\n", m, self.k, fmt_opt(a.mean_deg), a.instances, a.failures);
        }
        s
    }

    pub fn table2_csv(&self) -> String {
        let mut s = String::from("method,k,mape_pct,rmse,instances,skipped_zero_truth,failures\n");
        for m in &self.size_methods {
            let fails = self.failures_of(m.slug());
            match self.size_summary(*m) {
                Some(x) => {
                    s += &format!(
                        "{},{},{},{},{},{},{}\n",
                        m,
                        self.k,
                        fmt_opt(x.mape_pct),
                        fmt9(x.rmse),
                        x.n,
                        x.skipped_zero_truth,
                        fails
                    )
                }
                None => s += &format!("{},{},,,0,0,{}\n", m, self.k, fails),
            }
        }
        s
    }

    pub fn table3_csv(&self) -> String {
        let mut s = String::from("center,size,k,mape_pct,instances,unlocalizable,failures\n");
        for (c, z) in self.pairs() {
            let l = self.localization_summary((c, z));
            let fails = self
                .scenarios
                .iter()
                .filter(|r| !r.localization.contains_key(&(c, z)))
                .count();
            s += &format!(
                "{},{},{},{},{},{},{}\n",
                c,
                z,
                self.k,
                fmt_opt(l.mape_pct),
                l.instances,
                l.unlocalizable,
                fails
            );
        }
        s
    }

    pub fn ecdf_csv(&self, m: CenterMethod) -> String {
        let mut s = String::from("x_deg,F\n");
        if let Ok(points) = ecdf(&self.angular_errors(m)) {
            for (x, f) in points {
                s += &format!("{},{}\n", fmt9(x), fmt9(f));
            }
        }
        s
    }

    pub fn imbalance_csv(&self, m: CenterMethod) -> Result<String> {
        let mut s = String::from("bin_lo,bin_hi,count,q1,median,q3,min,max\n");
        for b in self.imbalance_bins(m)? {
            let q = b.quartiles;
            s += &format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt9(b.lo),
                fmt9(b.hi),
                b.count,
                fmt_opt(q.map(|q| q.q1)),
                fmt_opt(q.map(|q| q.median)),
                fmt_opt(q.map(|q| q.q3)),
                fmt_opt(q.map(|q| q.min)),
                fmt_opt(q.map(|q| q.max)),
            );
        }
        Ok(s)
    }

    /// Write every CSV into `dir`; returns the written paths.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files = vec![
            ("table1_angular.csv".to_string(), self.table1_csv()),
            ("table2_sizes.csv".to_string(), self.table2_csv()),
            ("table3_localization.csv".to_string(), self.table3_csv()),
        ];
        for m in &self.center_methods {
            files.push((format!("ecdf_{m}.csv"), self.ecdf_csv(*m)));
            files.push((format!("imbalance_{m}.csv"), self.imbalance_csv(*m)?));
        }
        files
            .into_iter()
            .map(|(name, text)| {
                let p = dir.join(name);
                write_atomic(&p, text.as_bytes())?;
                Ok(p)
            })
            .collect()
    }
}

struct Context<'a> {
    opts: &'a ReportOptions,
    channel: ChannelParams,
    n_emitted: f64,
}

fn evaluate_scenario(root: &Path, entry: &ManifestEntry, k: usize, ctx: &Context) -> ScenarioRecord {
    let mut rec = ScenarioRecord {
        index: entry.index,
        ..Default::default()
    };
    if let Err(e) = fill_record(root, entry, k, ctx, &mut rec) {
        log::warn!("{}: {e}", entry.dir);
        rec.failures.push(("scenario".into(), e.to_string()));
    }
    rec
}

fn fill_record(
    root: &Path,
    entry: &ManifestEntry,
    k: usize,
    ctx: &Context,
    rec: &mut ScenarioRecord,
) -> Result<()> {
    let scn = Scenario::load(&root.join(&entry.dir))?;
    if scn.k() != k {
        return Err(Error::InvalidInput(format!("scenario has K = {}, dataset K = {k}", scn.k())));
    }
    let truth = scn.meta.true_directions();
    rec.size_truth = scn.meta.true_sizes.iter().map(|&s| s as f64).collect();
    let km = scn.kmeans()?;
    let km_sizes: Vec<f64> = km.sizes().iter().map(|&s| s as f64).collect();
    rec.imbalance = imbalance(&km_sizes).ok().map(|i| i.value);

    // Directions indexed like the K-means clusters (GMM has its own).
    let mut centers: BTreeMap<CenterMethod, Vec<Vec3>> = BTreeMap::new();
    let record_failure = |rec: &mut ScenarioRecord, label: &str, e: Error| {
        log::debug!("{}: {label} failed ({e})", entry.dir);
        rec.failures.push((label.to_string(), e.to_string()));
    };
    for m in ctx.opts.center_methods() {
        let result: Result<Vec<Vec3>> = match m.clustering() {
            Some(Method::KMeans) => Ok(km.directions()),
            Some(method) => scn
                .cluster(method, ctx.opts.k_nn, ctx.opts.support_fraction)
                .map(|cs: ClusterSet| cs.directions()),
            None => angle_nn(&km, ctx),
        };
        match result {
            Ok(dirs) => {
                centers.insert(m, dirs);
            }
            Err(e) => record_failure(rec, m.slug(), e),
        }
    }

    let mut sizes: BTreeMap<SizeMethod, Vec<f64>> = BTreeMap::new();
    sizes.insert(SizeMethod::KMeans, km_sizes);
    if let Some(w) = &ctx.opts.size_weights {
        match size_nn(&km, w, ctx) {
            Ok(s) => {
                sizes.insert(SizeMethod::SizeNn, s);
            }
            Err(e) => record_failure(rec, SizeMethod::SizeNn.slug(), e),
        }
    }

    let mut perms: BTreeMap<CenterMethod, Vec<usize>> = BTreeMap::new();
    for (m, dirs) in &centers {
        let perm = match_clusters(dirs, &truth)?;
        let mut errs = vec![0.0; k];
        for (j, &t) in perm.iter().enumerate() {
            errs[t] = angular_error_deg(dirs[j], truth[t]);
        }
        rec.angular.insert(*m, errs);
        perms.insert(*m, perm);
    }

    let km_perm = &match_clusters(&km.directions(), &truth)?;
    for (m, s) in &sizes {
        let mut by_tx = vec![0.0; k];
        for (j, &t) in km_perm.iter().enumerate() {
            by_tx[t] = s[j];
        }
        rec.sizes.insert(*m, by_tx);
    }

    for (c, z) in LOCALIZATION_PAIRS {
        let (Some(dirs), Some(sz)) = (centers.get(&c), sizes.get(&z)) else {
            continue;
        };
        let perm = &perms[&c];
        let mut errs = vec![None; k];
        for (j, &t) in perm.iter().enumerate() {
            let truth_pos = scn.meta.config.tx_positions[t];
            errs[t] = localize(
                dirs[j],
                sz[j],
                ctx.n_emitted,
                &ctx.channel,
                ctx.opts.inversion_d_max_um,
            )
            .ok()
            .map(|p| (p - truth_pos).norm() / truth_pos.norm());
        }
        rec.localization.insert((c, z), errs);
    }
    Ok(())
}

fn angle_nn(km: &ClusterSet, ctx: &Context) -> Result<Vec<Vec3>> {
    let w = ctx.opts.angle_weights.as_ref().expect("listed only with weights");
    let f = build_features(km, ctx.n_emitted as u64, Some(w.arch.k), w.arch.frame)?;
    let out = forward_angle(w, &f, false, None)?;
    let mut dirs = vec![Vec3::ZERO; km.k()];
    for (c, &i) in f.order.iter().enumerate() {
        dirs[i] = out.directions[c];
    }
    Ok(dirs)
}

fn size_nn(km: &ClusterSet, w: &ModelWeights, ctx: &Context) -> Result<Vec<f64>> {
    let f = build_features(km, ctx.n_emitted as u64, Some(w.arch.k), w.arch.frame)?;
    let out = forward_size(w, &f, false, None)?;
    let mut sizes = vec![0.0; km.k()];
    for (c, &i) in f.order.iter().enumerate() {
        sizes[i] = out[c];
    }
    Ok(sizes)
}

fn check_weights(w: &Option<ModelWeights>, kind: ModelKind, manifest: &Manifest) -> Result<()> {
    if let Some(w) = w {
        if w.arch.kind != kind {
            return Err(Error::InvalidInput(format!(
                "expected {} weights, got {}",
                kind.slug(),
                w.arch.kind.slug()
            )));
        }
        if w.arch.k != manifest.k() {
            return Err(Error::InvalidInput(format!(
                "weights are for K = {}, dataset has K = {}",
                w.arch.k,
                manifest.k()
            )));
        }
    }
    Ok(())
}

/// Evaluate every method on the scenarios of `opts.split`.
///
/// Scenarios are processed in parallel and collected in index order, so
/// the report does not depend on the thread count. Per-scenario failures
/// are recorded in the report rather than aborting the run.
pub fn run_report(root: &Path, opts: &ReportOptions) -> Result<MetricsReport> {
    let manifest = open_dataset(root)?;
    check_weights(&opts.angle_weights, ModelKind::Angle, &manifest)?;
    check_weights(&opts.size_weights, ModelKind::Size, &manifest)?;
    if !(opts.imbalance_bin_width > 0.0 && opts.imbalance_bin_width <= 1.0) {
        return Err(Error::config("methods.imbalance_bin_width", "must lie in (0, 1]"));
    }
    let ctx = Context {
        opts,
        channel: manifest.physical.channel(),
        n_emitted: manifest.n_emitted() as f64,
    };
    let k = manifest.k();
    let scenarios: Vec<ScenarioRecord> = manifest
        .split(opts.split)
        .par_iter()
        .map(|e| evaluate_scenario(root, e, k, &ctx))
        .collect();
    let failed = scenarios.iter().filter(|s| !s.failures.is_empty()).count();
    if failed > 0 {
        log::warn!("{failed} of {} scenarios had failures", scenarios.len());
    }
    Ok(MetricsReport {
        k,
        split: opts.split,
        bin_width: opts.imbalance_bin_width,
        center_methods: opts.center_methods(),
        size_methods: opts.size_methods(),
        scenarios,
    })
}
