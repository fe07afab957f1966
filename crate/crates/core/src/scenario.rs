//! System dimensions, network geometry, pathloss and noise.
//!
//! Power quantities follow the normalized-noise convention: with pathloss
//! enabled the noise variance is 1 and path gains absorb the thermal noise
//! floor, so a transmit power in dBm converts to linear units directly. With
//! pathloss disabled every path gain is 1 and `tx_power_dbm` acts as the SNR
//! `P / sigma^2` in dB.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Point = [f64; 2];

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Large-scale mmWave pathloss `alpha + beta * 10 log10(d) + chi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossModel {
    pub alpha_pl: f64,
    pub beta_pl: f64,
    /// Shadowing variance in dB^2.
    pub shadow_var_db: f64,
    /// When false every path gain is exactly 1.
    pub enabled: bool,
}

impl Default for PathlossModel {
    /// 28 GHz parameters.
    fn default() -> Self {
        Self {
            alpha_pl: 61.4,
            beta_pl: 2.0,
            shadow_var_db: 5.8,
            enabled: true,
        }
    }
}

impl PathlossModel {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_pl >= 0.0) {
            return Err(Error::Config(format!("beta_pl must be >= 0, got {}", self.beta_pl)));
        }
        if !(self.shadow_var_db >= 0.0) {
            return Err(Error::Config(format!(
                "shadow_var_db must be >= 0, got {}",
                self.shadow_var_db
            )));
        }
        Ok(())
    }
}

/// Pathloss in dB at distance `d` meters; `shadow_draw` is a standard-normal
/// sample scaled by the model's shadowing deviation.
pub fn pathloss_db(model: &PathlossModel, d: f64, shadow_draw: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("link distance must be positive, got {d}")));
    }
    let chi = shadow_draw * model.shadow_var_db.sqrt();
    Ok(model.alpha_pl + model.beta_pl * 10.0 * d.log10() + chi)
}

/// Thermal noise power `-174 + 10 log10(W) + n_f` in dBm.
pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::Domain(format!(
            "bandwidth must be positive, got {bandwidth_hz}"
        )));
    }
    Ok(-174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db)
}

/// Noise-normalized linear path gain `10^(-(PL + P_noise)/10)`.
pub fn path_gain_linear(
    model: &PathlossModel,
    d: f64,
    shadow_draw: f64,
    noise_dbm: f64,
) -> Result<f64> {
    if !model.enabled {
        return Ok(1.0);
    }
    let pl = pathloss_db(model, d, shadow_draw)?;
    Ok(db_to_linear(-(pl + noise_dbm)))
}

/// 2D layout: BS, a disc of users, and the RIS positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub bs_position: Point,
    pub circle_center_distance: f64,
    pub user_radius: f64,
    pub ris_positions: Vec<Point>,
}

impl Geometry {
    /// BS at the origin, user disc centered at `(60, 0)` with radius 20 m,
    /// and `n_ris` surfaces laid out by [`default_ris_positions`].
    pub fn standard(n_ris: usize) -> Self {
        Self {
            bs_position: [0.0, 0.0],
            circle_center_distance: 60.0,
            user_radius: 20.0,
            ris_positions: default_ris_positions(n_ris, 20.0, 20.0),
        }
    }

    pub fn user_center(&self) -> Point {
        [
            self.bs_position[0] + self.circle_center_distance,
            self.bs_position[1],
        ]
    }

    pub fn validate(&self, n_ris: usize) -> Result<()> {
        if !(self.circle_center_distance >= 0.0) || !(self.user_radius >= 0.0) {
            return Err(Error::Config("geometry distances must be >= 0".into()));
        }
        if self.ris_positions.len() != n_ris {
            return Err(Error::Config(format!(
                "expected {n_ris} RIS positions, got {}",
                self.ris_positions.len()
            )));
        }
        Ok(())
    }
}

/// RIS 1 at `(dx, dy)`, RIS 2 at `(dx, -dy)`, then further surfaces on the
/// same vertical line at `+-2dy`, `+-3dy`, ...
pub fn default_ris_positions(n_ris: usize, dx: f64, dy: f64) -> Vec<Point> {
    (0..n_ris)
        .map(|i| {
            let rung = (i / 2 + 1) as f64;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            [dx, sign * rung * dy]
        })
        .collect()
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Draws `k` user positions uniformly in the user disc.
pub fn place_users<R: Rng + ?Sized>(geometry: &Geometry, k: usize, rng: &mut R) -> Vec<Point> {
    let [cx, cy] = geometry.user_center();
    (0..k)
        .map(|_| {
            let u: f64 = rng.random();
            let theta: f64 = rng.random::<f64>() * 2.0 * PI;
            let r = geometry.user_radius * u.sqrt();
            [cx + r * theta.cos(), cy + r * theta.sin()]
        })
        .collect()
}

/// How the RIS-user small-scale fading coefficient is attached to the paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingMode {
    /// One CN(0,1) coefficient per path.
    #[default]
    PerPath,
    /// A single CN(0,1) coefficient per (user, RIS) link shared by all paths.
    PerLink,
}

/// Complete description of one simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_bs_antennas: usize,
    pub n_users: usize,
    pub n_ris: usize,
    pub ris_elems_y: usize,
    pub ris_elems_z: usize,
    pub tx_power_dbm: f64,
    /// Linear noise variance (1 under the normalized convention).
    pub noise_variance: f64,
    /// `[Delta_B, Delta_y, Delta_z] / lambda_c`.
    pub carrier_spacing_ratios: [f64; 3],
    pub n_paths_bs_ris: usize,
    pub n_paths_ris_user: usize,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub ul_train_power_dbm: f64,
    pub ul_train_len: usize,
    pub rng_seed: u64,
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
    #[serde(default)]
    pub pathloss: PathlossModel,
    #[serde(default)]
    pub fading: FadingMode,
}

fn default_geometry() -> Geometry {
    Geometry::standard(2)
}

impl Default for SystemConfig {
    /// N=16, K=4, L=2, M=8x8, P=20 dBm, 28 GHz pathloss, W=1 GHz, n_f=5 dB.
    fn default() -> Self {
        let (n_users, my, mz) = (4, 8, 8);
        Self {
            n_bs_antennas: 16,
            n_users,
            n_ris: 2,
            ris_elems_y: my,
            ris_elems_z: mz,
            tx_power_dbm: 20.0,
            noise_variance: 1.0,
            carrier_spacing_ratios: [0.5, 0.5, 0.5],
            n_paths_bs_ris: 2,
            n_paths_ris_user: 2,
            bandwidth_hz: 1e9,
            noise_figure_db: 5.0,
            ul_train_power_dbm: 0.0,
            ul_train_len: my * mz * n_users,
            rng_seed: 0,
            geometry: Geometry::standard(2),
            pathloss: PathlossModel::default(),
            fading: FadingMode::PerPath,
        }
    }
}

impl SystemConfig {
    /// Elements per RIS, `M = M_y * M_z`.
    pub fn n_elems(&self) -> usize {
        self.ris_elems_y * self.ris_elems_z
    }

    /// Total relaxed phase dimension `L * M`.
    pub fn n_phase(&self) -> usize {
        self.n_ris * self.n_elems()
    }

    pub fn tx_power_linear(&self) -> f64 {
        db_to_linear(self.tx_power_dbm)
    }

    /// `sigma^2 / P`, the noise term of every SINR.
    pub fn noise_over_power(&self) -> f64 {
        self.noise_variance / self.tx_power_linear()
    }

    pub fn ul_train_power_linear(&self) -> f64 {
        db_to_linear(self.ul_train_power_dbm)
    }

    pub fn noise_dbm(&self) -> Result<f64> {
        noise_power_dbm(self.bandwidth_hz, self.noise_figure_db)
    }

    /// Sets `M = my * mz` and keeps the training length at the `M K` minimum.
    pub fn with_ris_elems(mut self, my: usize, mz: usize) -> Self {
        self.ris_elems_y = my;
        self.ris_elems_z = mz;
        self.ul_train_len = self.ul_train_len.max(self.n_elems() * self.n_users);
        self
    }

    /// Sets `L` and regenerates the default RIS layout.
    pub fn with_n_ris(mut self, l: usize) -> Self {
        self.n_ris = l;
        self.geometry.ris_positions = default_ris_positions(l, 20.0, 20.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_bs_antennas", self.n_bs_antennas),
            ("n_users", self.n_users),
            ("n_ris", self.n_ris),
            ("ris_elems_y", self.ris_elems_y),
            ("ris_elems_z", self.ris_elems_z),
            ("n_paths_bs_ris", self.n_paths_bs_ris),
            ("n_paths_ris_user", self.n_paths_ris_user),
            ("ul_train_len", self.ul_train_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let mk = self.n_elems() * self.n_users;
        if self.ul_train_len < mk {
            return Err(Error::Config(format!(
                "ul_train_len must satisfy T_UL >= M K = {mk}, got {}",
                self.ul_train_len
            )));
        }
        if self.carrier_spacing_ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("carrier spacing ratios must be > 0".into()));
        }
        if !(self.noise_variance > 0.0) {
            return Err(Error::Config("noise_variance must be > 0".into()));
        }
        if !self.tx_power_dbm.is_finite() || !self.ul_train_power_dbm.is_finite() {
            return Err(Error::Config("power levels must be finite".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config("bandwidth_hz must be > 0".into()));
        }
        self.geometry.validate(self.n_ris)?;
        self.pathloss.validate()?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}
