//! Particle-based Brownian motion simulator with a fully absorbing spherical
//! receiver centered at the origin.
//!
//! Each molecule walks independently from its transmitter with Gaussian
//! increments of per-axis standard deviation `sqrt(2 D h)` for a step of
//! duration `h`. A molecule is absorbed the first time a step segment
//! enters the receiver ball; the hit is recorded at the segment/sphere
//! intersection with a linearly interpolated time.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::{self, tag};

/// Default observation window (s).
pub const DEFAULT_OBS_TIME_S: f64 = 0.4;
/// Default step size (s) for dataset-scale runs.
pub const DEFAULT_DT_S: f64 = 1e-4;
/// Default far-field safety factor for [`Stepping::Adaptive`].
pub const DEFAULT_SAFETY_SIGMAS: f64 = 10.0;

/// Time stepping policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stepping {
    /// Every step has duration `dt`.
    Fixed,
    /// Far from the receiver, consecutive `dt` steps are merged into one
    /// Gaussian step of duration `m * dt` while the gap to the sphere stays at
    /// least `safety_sigmas` per-axis standard deviations of the merged step.
    /// The sum of `m` independent increments has exactly the merged
    /// distribution, so only crossings that would need a `safety_sigmas`
    /// excursion inside one merged step can be missed.
    Adaptive { safety_sigmas: f64 },
}

impl Default for Stepping {
    fn default() -> Self {
        Stepping::Adaptive {
            safety_sigmas: DEFAULT_SAFETY_SIGMAS,
        }
    }
}

/// One simulated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tx_positions: Vec<Vec3>,
    pub n_molecules_per_tx: u64,
    pub channel: ChannelParams,
    pub dt_s: f64,
    pub master_seed: u64,
    pub scenario_index: u64,
    #[serde(default)]
    pub stepping: Stepping,
}

impl ScenarioConfig {
    pub fn num_tx(&self) -> usize {
        self.tx_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.tx_positions.is_empty() {
            return Err(Error::InvalidInput("at least one transmitter required".into()));
        }
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return Err(Error::InvalidInput(format!("dt_s must be > 0, got {}", self.dt_s)));
        }
        if self.n_molecules_per_tx == 0 {
            return Err(Error::InvalidInput("n_molecules_per_tx must be > 0".into()));
        }
        if self.n_molecules_per_tx > u32::MAX as u64 {
            return Err(Error::InvalidInput("n_molecules_per_tx too large".into()));
        }
        for (i, p) in self.tx_positions.iter().enumerate() {
            if !p.is_finite() || p.norm() <= self.channel.rx_radius_um {
                return Err(Error::InvalidInput(format!(
                    "transmitter {i} at {p:?} is not strictly outside the receiver"
                )));
            }
        }
        if let Stepping::Adaptive { safety_sigmas } = self.stepping {
            if !(safety_sigmas.is_finite() && safety_sigmas >= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "adaptive safety factor must be >= 1, got {safety_sigmas}"
                )));
            }
        }
        Ok(())
    }

    /// Number of `dt` steps covering the observation window (last one may be partial).
    pub fn num_steps(&self) -> u64 {
        (self.channel.obs_time_s / self.dt_s - 1e-9).ceil().max(1.0) as u64
    }
}

/// One absorbed molecule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub position: Vec3,
    pub time_s: f64,
    pub source_tx: usize,
}

/// Result of a simulated episode, ordered by (transmitter, molecule).
#[derive(Debug, Clone, PartialEq)]
pub struct HitSet {
    pub config: ScenarioConfig,
    pub hits: Vec<Hit>,
    /// Absorbed molecule count per transmitter.
    pub true_sizes: Vec<u64>,
    /// Molecules still free at the end of the observation window.
    pub surviving: u64,
}

impl HitSet {
    pub fn positions(&self) -> Vec<Vec3> {
        self.hits.iter().map(|h| h.position).collect()
    }
}

/// First crossing of the segment `p_from -> p_to` into the ball of radius `r`.
///
/// Returns the intersection point and its parametric fraction in `[0, 1]`.
/// `p_from` must lie strictly outside the ball.
pub fn segment_sphere_hit(p_from: Vec3, p_to: Vec3, r: f64) -> Option<(Vec3, f64)> {
    let dir = p_to - p_from;
    let a = dir.norm_sq();
    if a == 0.0 {
        return None;
    }
    let b = p_from.dot(dir);
    if b >= 0.0 {
        // Moving away from (or tangent to) the center: both roots are <= 0.
        return None;
    }
    let c = p_from.norm_sq() - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    // Stable smaller root of a s^2 + 2 b s + c = 0 with b < 0, c > 0.
    let q = -b + disc.sqrt();
    let s = c / q;
    if !(0.0..=1.0).contains(&s) {
        return None;
    }
    let p = p_from + dir * s;
    // Project onto the sphere to remove rounding in the radial direction.
    let p = p * (r / p.norm());
    Some((p, s))
}

/// Random transmitter positions: isotropic directions (normalized Gaussian
/// draws) and radii uniform in `[d_min, d_max]`.
pub fn sample_tx_placement(
    k: usize,
    d_min: f64,
    d_max: f64,
    rx_radius: f64,
    seed: u64,
) -> Result<Vec<Vec3>> {
    sample_tx_placement_separated(k, d_min, d_max, rx_radius, 0.0, seed)
}

/// Like [`sample_tx_placement`] but rejects draws whose pairwise direction
/// angle is below `min_separation_deg`.
pub fn sample_tx_placement_separated(
    k: usize,
    d_min: f64,
    d_max: f64,
    rx_radius: f64,
    min_separation_deg: f64,
    seed: u64,
) -> Result<Vec<Vec3>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if !(d_min > rx_radius) {
        return Err(Error::InvalidInput(format!(
            "d_min = {d_min} must be strictly greater than the receiver radius {rx_radius}"
        )));
    }
    if !(d_max > d_min) || !d_max.is_finite() {
        return Err(Error::InvalidInput(format!("d_max = {d_max} must exceed d_min = {d_min}")));
    }
    if !(0.0..180.0).contains(&min_separation_deg) {
        return Err(Error::InvalidInput(format!(
            "min_separation_deg = {min_separation_deg} outside [0, 180)"
        )));
    }
    let cos_limit = min_separation_deg.to_radians().cos();
    let mut rng = rng::stream(&[tag::PLACEMENT, seed]);
    let mut out: Vec<Vec3> = Vec::with_capacity(k);
    let mut attempts = 0usize;
    while out.len() < k {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidInput(format!(
                "could not place {k} transmitters {min_separation_deg} degrees apart"
            )));
        }
        let dir = loop {
            let g = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            if let Some(u) = g.try_normalize(1e-12) {
                break u;
            }
        };
        let radius = d_min + (d_max - d_min) * rng.random::<f64>();
        if min_separation_deg > 0.0
            && out
                .iter()
                .any(|p| (*p / p.norm()).dot(dir) > cos_limit)
        {
            continue;
        }
        out.push(dir * radius);
    }
    Ok(out)
}

enum Fate {
    Absorbed(Vec3, f64),
    Survived,
}

fn simulate_molecule(config: &ScenarioConfig, tx: usize, molecule: u64, n_steps: u64) -> Fate {
    let mut rng = rng::stream(&[
        tag::MOLECULE,
        config.master_seed,
        config.scenario_index,
        tx as u64,
        molecule,
    ]);
    let r = config.channel.rx_radius_um;
    let dt = config.dt_s;
    let t_end = config.channel.obs_time_s;
    let two_d = 2.0 * config.channel.diffusion_coeff;
    // Largest step multiple with `gap >= safety * sqrt(2 D m dt)` is
    // m = gap^2 / (safety^2 * 2 D dt).
    let merge_scale = match config.stepping {
        Stepping::Fixed => 0.0,
        Stepping::Adaptive { safety_sigmas } => 1.0 / (safety_sigmas * safety_sigmas * two_d * dt),
    };

    let mut pos = config.tx_positions[tx];
    let mut step: u64 = 0;
    while step < n_steps {
        let mut m: u64 = 1;
        if merge_scale > 0.0 {
            let gap = pos.norm() - r;
            let fm = gap * gap * merge_scale;
            if fm >= 2.0 {
                m = (fm as u64).min(n_steps - step);
            }
        }
        let t0 = step as f64 * dt;
        let t1 = ((step + m) as f64 * dt).min(t_end);
        let h = t1 - t0;
        let sigma = (two_d * h).sqrt();
        let next = pos
            + Vec3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ) * sigma;
        if let Some((p, frac)) = segment_sphere_hit(pos, next, r) {
            let t = (t0 + frac * h).clamp(f64::MIN_POSITIVE, t_end);
            return Fate::Absorbed(p, t);
        }
        pos = next;
        step += m;
    }
    Fate::Survived
}

/// Simulate every molecule of every transmitter.
///
/// Output is a pure function of `config`; molecule-level work runs on the
/// current rayon pool and is collected in (transmitter, molecule) order.
pub fn simulate_scenario(config: &ScenarioConfig) -> Result<HitSet> {
    config.validate()?;
    let n_steps = config.num_steps();
    let k = config.num_tx();
    let mut hits = Vec::new();
    let mut true_sizes = vec![0u64; k];
    let mut surviving = 0u64;
    for tx in 0..k {
        let fates: Vec<Fate> = (0..config.n_molecules_per_tx)
            .into_par_iter()
            .map(|m| simulate_molecule(config, tx, m, n_steps))
            .collect();
        for fate in fates {
            match fate {
                Fate::Absorbed(position, time_s) => {
                    true_sizes[tx] += 1;
                    hits.push(Hit {
                        position,
                        time_s,
                        source_tx: tx,
                    });
                }
                Fate::Survived => surviving += 1,
            }
        }
    }
    Ok(HitSet {
        config: config.clone(),
        hits,
        true_sizes,
        surviving,
    })
}
