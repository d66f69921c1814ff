//! Run configuration: a versioned TOML document with strict keys.
//!
//! ```toml
//! schema_version = 1
//!
//! [physical]
//! rx_radius_um = 5.0
//! diffusion_coeff = 79.4
//! obs_time_s = 0.4
//! dt_s = 1e-4
//! d_min_um = 5.5
//! d_max_um = 15.0
//! n_molecules_per_tx = 2000
//!
//! [experiment]
//! k = 2
//! scenarios = 1000
//! seed = 0
//! ```
//!
//! Every section and key is optional; missing values take the desk-scale
//! defaults of [`RunConfig::default`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelParams, DEFAULT_D_MAX_UM};
use crate::clustering::{CorrectionParams, DEFAULT_K_NN, DEFAULT_SUPPORT_FRACTION};
use crate::error::{Error, Result};
use crate::nn::{Frame, Hyperparams, DEFAULT_BLOCKS, DEFAULT_HIDDEN};
use crate::sim::{Stepping, DEFAULT_DT_S, DEFAULT_OBS_TIME_S};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physical {
    pub rx_radius_um: f64,
    pub diffusion_coeff: f64,
    pub obs_time_s: f64,
    pub dt_s: f64,
    pub d_min_um: f64,
    pub d_max_um: f64,
    pub n_molecules_per_tx: u64,
    pub stepping: Stepping,
}

impl Default for Physical {
    fn default() -> Self {
        Self {
            rx_radius_um: 5.0,
            diffusion_coeff: 79.4,
            obs_time_s: DEFAULT_OBS_TIME_S,
            dt_s: DEFAULT_DT_S,
            d_min_um: 5.5,
            d_max_um: 15.0,
            n_molecules_per_tx: 2000,
            stepping: Stepping::default(),
        }
    }
}

impl Physical {
    pub fn channel(&self) -> ChannelParams {
        ChannelParams {
            rx_radius_um: self.rx_radius_um,
            diffusion_coeff: self.diffusion_coeff,
            obs_time_s: self.obs_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub k: usize,
    pub scenarios: usize,
    pub seed: u64,
    /// Minimum pairwise angle between transmitter directions; 0 disables.
    pub min_separation_deg: f64,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            k: 2,
            scenarios: 1000,
            seed: 0,
            min_separation_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Methods {
    pub k_nn: usize,
    pub support_fraction: f64,
    pub imbalance_bin_width: f64,
    /// Upper end of the distance search used for localization.
    pub inversion_d_max_um: f64,
}

impl Default for Methods {
    fn default() -> Self {
        Self {
            k_nn: DEFAULT_K_NN,
            support_fraction: DEFAULT_SUPPORT_FRACTION,
            imbalance_bin_width: 0.1,
            inversion_d_max_um: DEFAULT_D_MAX_UM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Network {
    pub hidden: usize,
    pub blocks: usize,
    pub frame: Frame,
}

impl Default for Network {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            blocks: DEFAULT_BLOCKS,
            frame: Frame::Canonical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dataset_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("dataset"),
            report_dir: PathBuf::from("report"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub physical: Physical,
    pub experiment: Experiment,
    pub methods: Methods,
    pub training: Hyperparams,
    pub network: Network,
    pub output: Output,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            physical: Physical::default(),
            experiment: Experiment::default(),
            methods: Methods::default(),
            training: Hyperparams::default(),
            network: Network::default(),
            output: Output::default(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be a positive finite number, got {v}")))
    }
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunConfig {
    /// Molecule count and step size of the original study.
    pub fn paper() -> Self {
        let mut c = Self::default();
        c.physical.n_molecules_per_tx = 10_000;
        c.physical.dt_s = 1e-6;
        c
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::parse(path, e.message()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let p = &self.physical;
        positive("physical.rx_radius_um", p.rx_radius_um)?;
        positive("physical.diffusion_coeff", p.diffusion_coeff)?;
        positive("physical.obs_time_s", p.obs_time_s)?;
        positive("physical.dt_s", p.dt_s)?;
        positive("physical.d_min_um", p.d_min_um)?;
        if p.d_min_um <= p.rx_radius_um {
            return Err(Error::config("physical.d_min_um", "must exceed the receiver radius"));
        }
        if !(p.d_max_um.is_finite() && p.d_max_um > p.d_min_um) {
            return Err(Error::config("physical.d_max_um", "must exceed d_min_um"));
        }
        if p.n_molecules_per_tx == 0 || p.n_molecules_per_tx > u32::MAX as u64 {
            return Err(Error::config("physical.n_molecules_per_tx", "must lie in [1, 2^32)"));
        }
        if let Stepping::Adaptive { safety_sigmas } = p.stepping {
            if !(safety_sigmas.is_finite() && safety_sigmas >= 1.0) {
                return Err(Error::config("physical.stepping.safety_sigmas", "must be >= 1"));
            }
        }
        let e = &self.experiment;
        if !(1..=crate::eval::MAX_MATCH_K).contains(&e.k) {
            return Err(Error::config(
                "experiment.k",
                format!("must lie in [1, {}]", crate::eval::MAX_MATCH_K),
            ));
        }
        if e.scenarios == 0 {
            return Err(Error::config("experiment.scenarios", "must be >= 1"));
        }
        if !(0.0..180.0).contains(&e.min_separation_deg) {
            return Err(Error::config("experiment.min_separation_deg", "must lie in [0, 180)"));
        }
        let m = &self.methods;
        if m.k_nn == 0 {
            return Err(Error::config("methods.k_nn", "must be >= 1"));
        }
        if !(m.support_fraction > 0.5 && m.support_fraction <= 1.0) {
            return Err(Error::config("methods.support_fraction", "must lie in (0.5, 1]"));
        }
        if !(m.imbalance_bin_width > 0.0 && m.imbalance_bin_width <= 1.0) {
            return Err(Error::config("methods.imbalance_bin_width", "must lie in (0, 1]"));
        }
        if !(m.inversion_d_max_um.is_finite() && m.inversion_d_max_um > p.rx_radius_um) {
            return Err(Error::config("methods.inversion_d_max_um", "must exceed the receiver radius"));
        }
        self.training.validate()?;
        if self.network.hidden == 0 {
            return Err(Error::config("network.hidden", "must be >= 1"));
        }
        Ok(())
    }

    pub fn correction_params(&self, seed: u64) -> CorrectionParams {
        CorrectionParams {
            k_nn: self.methods.k_nn,
            support_fraction: self.methods.support_fraction,
            seed,
        }
    }

    /// Hash of the fields that determine a generated dataset.
    pub fn dataset_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            schema_version: u32,
            physical: &'a Physical,
            experiment: &'a Experiment,
        }
        let key = Key {
            schema_version: self.schema_version,
            physical: &self.physical,
            experiment: &self.experiment,
        };
        sha256_hex(&toml::to_string(&key).expect("serializable"))
    }

    /// Hash of every semantic field; output locations are excluded.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output = Output::default();
        sha256_hex(&c.to_toml())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig> {
        RunConfig::from_toml_str(s, Path::new("test.toml"))
    }

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.physical.rx_radius_um, 5.0);
        assert_eq!(c.physical.diffusion_coeff, 79.4);
        assert_eq!((c.physical.d_min_um, c.physical.d_max_um), (5.5, 15.0));
        assert_eq!(RunConfig::paper().physical.n_molecules_per_tx, 10_000);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::paper();
        c.experiment.k = 4;
        c.physical.stepping = Stepping::Fixed;
        c.network.frame = Frame::Ambient;
        assert_eq!(parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_key() {
        let e = parse("[physical]\ndt_s = 0.0\n").unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "physical.dt_s"), "{e}");
        let e = parse("[physical]\ndt_s = -1e-4\n").unwrap_err();
        assert!(e.to_string().contains("physical.dt_s"));
        let e = parse("[training]\nlearning_rate = 0.0\n").unwrap_err();
        assert!(e.to_string().contains("training.learning_rate"));
        let e = parse("[experiment]\nk = 0\n").unwrap_err();
        assert!(e.to_string().contains("experiment.k"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse("[physical]\ndiffusion_coef = 79.4\n").unwrap_err();
        assert_eq!(e.category(), "parse");
        assert!(e.to_string().contains("diffusion_coef"));
        assert!(parse("[phys]\n").is_err());
        assert!(parse("schema_version = 2\n").is_err());
    }

    #[test]
    fn hashes_track_semantic_fields() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output.dataset_dir = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.dataset_hash(), b.dataset_hash());
        b.training.learning_rate = 2e-3;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.dataset_hash(), b.dataset_hash());
        b.physical.obs_time_s = 0.5;
        assert_ne!(a.dataset_hash(), b.dataset_hash());
        let mut c = a.clone();
        c.experiment.seed = 1;
        assert_ne!(a.dataset_hash(), c.dataset_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
