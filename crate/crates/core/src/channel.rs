//! Closed-form channel quantities for a point transmitter and a fully
//! absorbing spherical receiver in an unbounded 3D medium.
//!
//! The cumulative first-hit probability is
//!
//! ```text
//! F_hit(t, d, r) = (r / d) * erfc((d - r) / sqrt(4 D t))
//! ```
//!
//! and the expected received count is `n_tx * F_hit`. Because `F_hit` is
//! strictly decreasing in `d`, an observed hit fraction determines the
//! transmitter distance; [`invert_distance`] recovers it by bisection.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Default upper bracket for distance inversion (µm).
pub const DEFAULT_D_MAX_UM: f64 = 30.0;

const BISECTION_MAX_ITER: usize = 200;

/// Receiver radius, diffusion coefficient and observation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub rx_radius_um: f64,
    pub diffusion_coeff: f64,
    pub obs_time_s: f64,
}

impl ChannelParams {
    pub fn new(rx_radius_um: f64, diffusion_coeff: f64, obs_time_s: f64) -> Result<Self> {
        let p = Self {
            rx_radius_um,
            diffusion_coeff,
            obs_time_s,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("rx_radius_um", self.rx_radius_um),
            ("diffusion_coeff", self.diffusion_coeff),
            ("obs_time_s", self.obs_time_s),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HitProbability(f64);

impl HitProbability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("probability {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Probability that a molecule released at distance `d` from the receiver
/// center is absorbed before `params.obs_time_s`.
pub fn hit_probability(d: f64, params: &ChannelParams) -> Result<HitProbability> {
    params.validate()?;
    let r = params.rx_radius_um;
    if !d.is_finite() || d < r {
        return Err(Error::Domain(format!(
            "transmitter distance {d} µm is inside the receiver (r = {r} µm)"
        )));
    }
    let scale = (4.0 * params.diffusion_coeff * params.obs_time_s).sqrt();
    let v = (r / d) * erfc((d - r) / scale);
    Ok(HitProbability(v.clamp(0.0, 1.0)))
}

/// Expected number of absorbed molecules out of `n_tx` released.
pub fn expected_received(n_tx: u64, d: f64, params: &ChannelParams) -> Result<f64> {
    Ok(n_tx as f64 * hit_probability(d, params)?.value())
}

/// Distance at which the first-hit probability equals `p_hit`.
///
/// Bisection on `[r, d_max]`. Fails with [`Error::Bracket`] when `p_hit` is
/// not in `[F_hit(d_max), 1]`; callers treat that as an unlocalizable estimate.
pub fn invert_distance(p_hit: f64, params: &ChannelParams, d_max: f64) -> Result<f64> {
    params.validate()?;
    let r = params.rx_radius_um;
    if !(d_max > r) {
        return Err(Error::Domain(format!("d_max {d_max} must exceed r = {r}")));
    }
    let p_lo = hit_probability(d_max, params)?.value();
    if !(p_hit > 0.0 && p_hit >= p_lo && p_hit <= 1.0) {
        return Err(Error::Bracket {
            p_hit,
            lo: p_lo,
            hi: 1.0,
        });
    }
    if p_hit == 1.0 {
        return Ok(r);
    }

    // Invariant: F(lo) >= p_hit >= F(hi).
    let (mut lo, mut hi) = (r, d_max);
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hit_probability(mid, params)?.value() >= p_hit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_params(t: f64) -> ChannelParams {
        ChannelParams::new(5.0, 79.4, t).unwrap()
    }

    #[test]
    fn boundary_is_certain() {
        for t in [1e-3, 0.2, 0.5, 10.0] {
            assert_eq!(hit_probability(5.0, &paper_params(t)).unwrap().value(), 1.0);
        }
    }

    #[test]
    fn long_time_limit_is_geometric() {
        let p = hit_probability(10.0, &paper_params(1e12)).unwrap().value();
        assert!((p - 0.5).abs() < 1e-6, "{p}");
    }

    #[test]
    fn matches_high_precision_value() {
        // 40-digit erfc evaluation of (5/10) erfc(5 / sqrt(4 * 79.4 * 0.5)).
        let p = hit_probability(10.0, &paper_params(0.5)).unwrap().value();
        assert!((p - 0.287_356_103_927_464_27).abs() < 1e-13, "{p}");
        let p = hit_probability(10.0, &paper_params(0.2)).unwrap().value();
        assert!((p - 0.187_481_094_265_404_78).abs() < 1e-13, "{p}");
    }

    #[test]
    fn inside_receiver_is_domain_error() {
        assert!(matches!(
            hit_probability(4.999, &paper_params(0.5)),
            Err(Error::Domain(_))
        ));
        assert!(ChannelParams::new(0.0, 1.0, 1.0).is_err());
        assert!(ChannelParams::new(5.0, -1.0, 1.0).is_err());
        assert!(ChannelParams::new(5.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn expected_count() {
        let p = paper_params(0.5);
        assert_eq!(expected_received(0, 10.0, &p).unwrap(), 0.0);
        assert_eq!(expected_received(10_000, 5.0, &p).unwrap(), 10_000.0);
        let n = expected_received(10_000, 10.0, &p).unwrap();
        assert!((n - 2873.561_039_274_642_7).abs() < 1e-9, "{n}");
        assert!(expected_received(10, 1.0, &p).is_err());
    }

    #[test]
    fn inversion_boundary_and_round_trip() {
        let p = paper_params(0.4);
        assert_eq!(invert_distance(1.0, &p, DEFAULT_D_MAX_UM).unwrap(), 5.0);
        let target = 12.34;
        let f = hit_probability(target, &p).unwrap().value();
        let d = invert_distance(f, &p, DEFAULT_D_MAX_UM).unwrap();
        assert!(((d - target) / target).abs() < 1e-9, "{d}");
    }

    #[test]
    fn inversion_rejects_out_of_bracket() {
        let p = paper_params(0.4);
        let floor = hit_probability(DEFAULT_D_MAX_UM, &p).unwrap().value();
        assert!(matches!(
            invert_distance(floor * 0.5, &p, DEFAULT_D_MAX_UM),
            Err(Error::Bracket { .. })
        ));
        assert!(invert_distance(0.0, &p, DEFAULT_D_MAX_UM).is_err());
        assert!(invert_distance(1.2, &p, DEFAULT_D_MAX_UM).is_err());
    }
}
