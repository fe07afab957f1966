//! Experiment specifications and the per-point configuration they imply.

use std::path::{Path, PathBuf};

use gpipris_core::joint::{JointSettings, LineSearchPlan};
use gpipris_core::scenario::SystemConfig;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{HarnessError, Result};
use crate::experiment::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Sweeps `tx_power_dbm`.
    PowerSweep,
    /// Sweeps the elements per RIS `M`.
    RisElemsSweep,
    /// Sweeps the BS antenna count `N`.
    AntennasSweep,
    /// Sweeps the uplink training power `rho_UL` in dBm.
    CsitSweep,
    /// Sweeps `tx_power_dbm` and records the outer objective trace.
    Convergence,
    /// Sweeps a fixed regularization weight `mu`.
    MuStudy,
    /// Sweeps `L` with `M = m_total / L`.
    Scalability,
    /// Times the phase-shift stage over `L` with `M = m_total / L`.
    Bench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::PowerSweep => "power_sweep",
            Self::RisElemsSweep => "ris_elems_sweep",
            Self::AntennasSweep => "antennas_sweep",
            Self::CsitSweep => "csit_sweep",
            Self::Convergence => "convergence",
            Self::MuStudy => "mu_study",
            Self::Scalability => "scalability",
            Self::Bench => "bench",
        }
    }

    fn integer_sweep(self) -> bool {
        matches!(
            self,
            Self::RisElemsSweep | Self::AntennasSweep | Self::Scalability | Self::Bench
        )
    }

    pub(crate) fn default_schemes(self) -> Vec<Scheme> {
        match self {
            Self::Convergence | Self::MuStudy => vec![Scheme::GpiPris],
            _ => Scheme::ALL.to_vec(),
        }
    }
}

/// Scenario referenced by path (relative to the spec file) or given inline.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ConfigSource {
    Path(PathBuf),
    Inline(Box<SystemConfig>),
}

impl<'de> Deserialize<'de> for ConfigSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(p) => Ok(Self::Path(p.into())),
            v @ serde_json::Value::Object(_) => serde_json::from_value(v)
                .map(|c| Self::Inline(Box::new(c)))
                .map_err(D::Error::custom),
            _ => Err(D::Error::custom(
                "base_config must be a path string or an inline configuration object",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Experiment id written to every row; defaults to the kind name.
    #[serde(default)]
    pub id: Option<String>,
    pub kind: ExperimentKind,
    pub sweep_values: Vec<f64>,
    pub n_seeds: usize,
    pub base_config: ConfigSource,
    pub output_path: PathBuf,
    /// First seed; seed `i` of every sweep point is `seed + i`. Defaults to
    /// the base configuration's `rng_seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub plan: LineSearchPlan,
    #[serde(default)]
    pub settings: JointSettings,
    /// Replaces the line search by a single `mu`.
    #[serde(default)]
    pub fixed_mu: Option<f64>,
    /// `L M`, required by `scalability` and `bench`.
    #[serde(default)]
    pub m_total: Option<usize>,
    /// Monte Carlo draws for the instantaneous-SE column; off when absent.
    #[serde(default)]
    pub mc_draws: Option<usize>,
    #[serde(default)]
    pub schemes: Option<Vec<Scheme>>,
    /// Timing repetitions for `bench`; defaults to `n_seeds`.
    #[serde(default)]
    pub repetitions: Option<usize>,
}

/// `mu` used by `scalability` and `bench` when `fixed_mu` is absent.
pub const DEFAULT_TIMING_MU: f64 = 1.0;

impl ExperimentSpec {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| HarnessError::parse(origin, &e))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec and resolves a relative `base_config` path against the
    /// spec's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut spec = Self::from_json_str(&text, path)?;
        if let ConfigSource::Path(p) = &mut spec.base_config {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(spec)
    }

    pub fn experiment_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        self.schemes.clone().unwrap_or_else(|| self.kind.default_schemes())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Spec(m));
        if self.sweep_values.is_empty() {
            return fail("sweep_values must not be empty".into());
        }
        if self.n_seeds == 0 {
            return fail("n_seeds must be at least 1".into());
        }
        if let Some(v) = self.sweep_values.iter().find(|v| !v.is_finite()) {
            return fail(format!("sweep value {v} is not finite"));
        }
        if self.kind.integer_sweep() {
            if let Some(v) = self.sweep_values.iter().find(|v| !(**v >= 1.0) || v.fract() != 0.0) {
                return fail(format!("{} needs positive integer sweep values, got {v}", self.kind.name()));
            }
        }
        if self.kind == ExperimentKind::MuStudy {
            if let Some(v) = self.sweep_values.iter().find(|v| **v < 0.0) {
                return fail(format!("mu must be nonnegative, got {v}"));
            }
        }
        if matches!(self.kind, ExperimentKind::Scalability | ExperimentKind::Bench) {
            let Some(total) = self.m_total else {
                return fail(format!("{} requires m_total", self.kind.name()));
            };
            if let Some(l) = self.sweep_values.iter().find(|l| total % (**l as usize) != 0) {
                return fail(format!("m_total {total} is not divisible by L = {l}"));
            }
        }
        if let Some(mu) = self.fixed_mu {
            if !(mu >= 0.0) || !mu.is_finite() {
                return fail(format!("fixed_mu must be nonnegative, got {mu}"));
            }
        }
        if self.mc_draws == Some(0) {
            return fail("mc_draws must be at least 1 when given".into());
        }
        if self.repetitions == Some(0) {
            return fail("repetitions must be at least 1 when given".into());
        }
        if self.schemes.as_ref().is_some_and(|s| s.is_empty()) {
            return fail("schemes must not be empty when given".into());
        }
        self.plan.validate()?;
        self.settings.validate()?;
        Ok(())
    }

    pub fn load_base_config(&self) -> Result<SystemConfig> {
        match &self.base_config {
            ConfigSource::Inline(c) => {
                c.validate()?;
                Ok((**c).clone())
            }
            ConfigSource::Path(p) => load_config(p),
        }
    }

    /// Line search used by GPI-PRIS at one sweep value.
    pub fn plan_for(&self, value: f64) -> LineSearchPlan {
        match (self.kind, self.fixed_mu) {
            (ExperimentKind::MuStudy, _) => LineSearchPlan::single(value),
            (ExperimentKind::Scalability, None) => LineSearchPlan::single(DEFAULT_TIMING_MU),
            (_, Some(mu)) => LineSearchPlan::single(mu),
            (_, None) => self.plan,
        }
    }

    /// Base configuration with the sweep value applied.
    pub fn point_config(&self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut cfg = base.clone();
        match self.kind {
            ExperimentKind::PowerSweep | ExperimentKind::Convergence => cfg.tx_power_dbm = value,
            ExperimentKind::CsitSweep => cfg.ul_train_power_dbm = value,
            ExperimentKind::AntennasSweep => cfg.n_bs_antennas = value as usize,
            ExperimentKind::MuStudy => {}
            ExperimentKind::RisElemsSweep => {
                let (my, mz) = split_elems(value as usize);
                cfg = cfg.with_ris_elems(my, mz);
            }
            ExperimentKind::Scalability | ExperimentKind::Bench => {
                let l = value as usize;
                let total = self.m_total.expect("validated");
                let (my, mz) = split_elems(total / l);
                cfg = cfg.with_n_ris(l).with_ris_elems(my, mz);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and validates a scenario configuration.
pub fn load_config(path: impl AsRef<Path>) -> Result<SystemConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let cfg: SystemConfig = serde_json::from_str(&text).map_err(|e| HarnessError::parse(path, &e))?;
    cfg.validate().map_err(|source| HarnessError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(cfg)
}

/// `(M_y, M_z)` with `M_y >= M_z` and `M_z` the largest divisor of `m` not
/// above `sqrt(m)`, e.g. `32 -> (8, 4)`.
pub fn split_elems(m: usize) -> (usize, usize) {
    let mz = (1..=m).take_while(|d| d * d <= m).filter(|d| m % d == 0).last().unwrap_or(1);
    (m / mz, mz)
}
