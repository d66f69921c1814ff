use crate::channel::{invert_distance, ChannelParams};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Largest K accepted by [`match_clusters`]; K! grows quickly beyond it.
pub const MAX_MATCH_K: usize = 8;

/// Angle between two unit vectors in degrees, in `[0, 180]`.
pub fn angular_error_deg(u: Vec3, v: Vec3) -> f64 {
    u.dot(v).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Assignment of estimates to truths with minimum total angular error.
///
/// `perm[i]` is the truth index matched to estimate `i`. Ties go to the
/// lexicographically first permutation.
pub fn match_clusters(est: &[Vec3], truth: &[Vec3]) -> Result<Vec<usize>> {
    let k = est.len();
    if truth.len() != k {
        return Err(Error::InvalidInput(format!(
            "cannot match {k} estimates to {} truths",
            truth.len()
        )));
    }
    if k > MAX_MATCH_K {
        return Err(Error::InvalidInput(format!("matching supports K <= {MAX_MATCH_K}, got {k}")));
    }
    let cost: Vec<Vec<f64>> = est
        .iter()
        .map(|e| truth.iter().map(|t| angular_error_deg(*e, *t)).collect())
        .collect();
    let mut best = (f64::INFINITY, (0..k).collect::<Vec<_>>());
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; k];
    search(&cost, &mut current, &mut used, 0.0, &mut best);
    Ok(best.1)
}

fn search(
    cost: &[Vec<f64>],
    current: &mut Vec<usize>,
    used: &mut [bool],
    acc: f64,
    best: &mut (f64, Vec<usize>),
) {
    let i = current.len();
    if i == cost.len() {
        if acc < best.0 {
            *best = (acc, current.clone());
        }
        return;
    }
    for j in 0..cost.len() {
        if !used[j] {
            used[j] = true;
            current.push(j);
            search(cost, current, used, acc + cost[i][j], best);
            current.pop();
            used[j] = false;
        }
    }
}

/// Total angular error of an assignment, in degrees.
pub fn total_angular_error(est: &[Vec3], truth: &[Vec3], perm: &[usize]) -> f64 {
    est.iter()
        .zip(perm)
        .map(|(e, &j)| angular_error_deg(*e, truth[j]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeMetrics {
    /// Mean absolute percentage error over entries with non-zero truth.
    pub mape_pct: Option<f64>,
    pub rmse: f64,
    pub n: usize,
    /// Entries left out of the MAPE because their truth is zero.
    pub skipped_zero_truth: usize,
}

pub fn size_metrics(pred: &[f64], truth: &[f64]) -> Result<SizeMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!(
            "size metrics need equal non-empty inputs, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut ape = 0.0;
    let mut counted = 0usize;
    let mut sq = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        sq += (p - t) * (p - t);
        if *t != 0.0 {
            ape += ((t - p) / t).abs();
            counted += 1;
        }
    }
    Ok(SizeMetrics {
        mape_pct: (counted > 0).then(|| 100.0 * ape / counted as f64),
        rmse: (sq / pred.len() as f64).sqrt(),
        n: pred.len(),
        skipped_zero_truth: pred.len() - counted,
    })
}

/// Position estimate from a direction and a received-count estimate.
pub fn localize(
    direction: Vec3,
    size_est: f64,
    n_emitted: f64,
    params: &ChannelParams,
    d_max: f64,
) -> Result<Vec3> {
    if !(n_emitted > 0.0) {
        return Err(Error::InvalidInput("emitted count must be positive".into()));
    }
    let d = invert_distance(size_est / n_emitted, params, d_max)?;
    Ok(direction * d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationSummary {
    pub mape_pct: Option<f64>,
    pub instances: usize,
    pub unlocalizable: usize,
}

/// Relative position error `|y - ŷ| / |y|`.
pub fn relative_position_error(est: Vec3, truth: Vec3) -> f64 {
    (truth - est).norm() / truth.norm()
}

/// MAPE over all transmitter instances; `None` entries are unlocalizable
/// estimates, counted but excluded.
pub fn localization_mape<I>(pairs: I) -> LocalizationSummary
where
    I: IntoIterator<Item = Option<(Vec3, Vec3)>>,
{
    let mut sum = 0.0;
    let mut instances = 0;
    let mut unlocalizable = 0;
    for p in pairs {
        match p {
            Some((est, truth)) => {
                sum += relative_position_error(est, truth);
                instances += 1;
            }
            None => unlocalizable += 1,
        }
    }
    LocalizationSummary {
        mape_pct: (instances > 0).then(|| 100.0 * sum / instances as f64),
        instances,
        unlocalizable,
    }
}

/// Step points `(x, F(x))` of the empirical CDF at each distinct value.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("ECDF of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("ECDF sample contains NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = f,
            _ => out.push((*x, f)),
        }
    }
    Ok(out)
}

/// Sample quantile with linear interpolation between order statistics
/// (the default method of R and NumPy). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub quartiles: Option<Quartiles>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

/// Number of bins of width `w` covering `[0, 1]`.
fn bin_count(w: f64) -> usize {
    ((1.0 / w) - 1e-9).ceil().max(1.0) as usize
}

/// Bin index of `v`: bins are `[i w, (i + 1) w)`, the last one closed at 1.
pub fn imbalance_bin(v: f64, w: f64) -> usize {
    let nb = bin_count(w);
    let mut i = ((v / w).floor().max(0.0) as usize).min(nb - 1);
    while i > 0 && v < i as f64 * w {
        i -= 1;
    }
    while i + 1 < nb && v >= (i + 1) as f64 * w {
        i += 1;
    }
    i
}

/// Error statistics per imbalance bin. `records` pairs a scenario's
/// imbalance with one angular error; every bin is reported, empty or not.
pub fn imbalance_analysis(records: &[(f64, f64)], bin_width: f64) -> Result<Vec<BinStats>> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::InvalidInput(format!("bin width {bin_width} outside (0, 1]")));
    }
    let nb = bin_count(bin_width);
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); nb];
    for &(imb, err) in records {
        if !(0.0..=1.0).contains(&imb) {
            return Err(Error::InvalidInput(format!("imbalance {imb} outside [0, 1]")));
        }
        bins[imbalance_bin(imb, bin_width)].push(err);
    }
    Ok(bins
        .iter()
        .enumerate()
        .map(|(i, v)| BinStats {
            lo: i as f64 * bin_width,
            hi: ((i + 1) as f64 * bin_width).min(1.0),
            count: v.len(),
            quartiles: Quartiles::of(v),
        })
        .collect())
}
