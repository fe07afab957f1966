//! Saleh-Valenzuela channel synthesis and LMMSE estimation statistics.
//!
//! Cascaded channels are stored per `(user, ris)` as `N x M` matrices and are
//! vectorized column-major everywhere (`vec(X)[n + N m] = X[n, m]`).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{hermitian_pd_inverse, identity, psd_sqrt, vec_cols, CMat, CVec};
use crate::scalar::{cis, lit, real, Real};
use crate::scenario::{distance, path_gain_linear, place_users, FadingMode, Point, SystemConfig};
use crate::{Error, Result};

/// ULA response, element `i` is `exp(j 2 pi i ratio sin(angle))`.
pub fn steering_ula<T: Real>(n: usize, spacing_ratio: T, angle: T) -> CVec<T> {
    let step = T::two_pi() * spacing_ratio * angle.sin();
    CVec::from_iterator(n, (0..n).map(|i| cis(step * lit(i as f64))))
}

/// UPA response `a_y (x) a_z` on the yz-plane.
pub fn steering_upa<T: Real>(
    m_y: usize,
    m_z: usize,
    ratio_y: T,
    ratio_z: T,
    azimuth: T,
    elevation: T,
) -> CVec<T> {
    let step_y = T::two_pi() * ratio_y * azimuth.sin() * elevation.sin();
    let step_z = T::two_pi() * ratio_z * elevation.cos();
    let a_y = (0..m_y).map(|i| cis(step_y * lit(i as f64)));
    let a_z: Vec<Complex<T>> = (0..m_z).map(|i| cis(step_z * lit(i as f64))).collect();
    let mut out = Vec::with_capacity(m_y * m_z);
    for y in a_y {
        out.extend(a_z.iter().map(|z| y * z));
    }
    CVec::from_vec(out)
}

/// One BS-RIS propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsRisPath {
    pub bs_aod: f64,
    pub ris_azimuth: f64,
    pub ris_elevation: f64,
}

/// One RIS-user propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisUserPath {
    pub azimuth: f64,
    pub elevation: f64,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// AoD in `[0, pi]`, azimuth in `[-pi, pi]`, elevation in `[-pi/2, pi/2]`.
pub fn draw_bs_ris_paths<R: Rng + ?Sized>(n_paths: usize, rng: &mut R) -> Vec<BsRisPath> {
    (0..n_paths)
        .map(|_| BsRisPath {
            bs_aod: uniform(rng, 0.0, PI),
            ris_azimuth: uniform(rng, -PI, PI),
            ris_elevation: uniform(rng, -PI / 2.0, PI / 2.0),
        })
        .collect()
}

pub fn draw_ris_user_paths<R: Rng + ?Sized>(n_paths: usize, rng: &mut R) -> Vec<RisUserPath> {
    (0..n_paths)
        .map(|_| RisUserPath {
            azimuth: uniform(rng, -PI, PI),
            elevation: uniform(rng, -PI / 2.0, PI / 2.0),
        })
        .collect()
}

/// One `CN(0, 1)` sample.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex<f64> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// Small-scale fading coefficients for the paths of one RIS-user link.
pub fn draw_fading<R: Rng + ?Sized>(n_paths: usize, mode: FadingMode, rng: &mut R) -> Vec<Complex<f64>> {
    match mode {
        FadingMode::PerPath => (0..n_paths).map(|_| complex_normal(rng)).collect(),
        FadingMode::PerLink => vec![complex_normal(rng); n_paths],
    }
}

fn ratios<T: Real>(cfg: &SystemConfig) -> (T, T, T) {
    let [b, y, z] = cfg.carrier_spacing_ratios;
    (lit(b), lit(y), lit(z))
}

/// BS-RIS channel `(1/sqrt(L_BR)) sum_i sqrt(gain) a_B(aod_i) a_R(az_i, el_i)^H`.
pub fn synth_bs_ris<T: Real>(cfg: &SystemConfig, gain: f64, paths: &[BsRisPath]) -> Result<CMat<T>> {
    if paths.is_empty() {
        return Err(Error::Domain("BS-RIS channel needs at least one path".into()));
    }
    if !(gain >= 0.0) {
        return Err(Error::Domain(format!("path gain must be >= 0, got {gain}")));
    }
    let (rb, ry, rz) = ratios::<T>(cfg);
    let n = cfg.n_bs_antennas;
    let m = cfg.n_elems();
    let amp = real(lit::<T>((gain / paths.len() as f64).sqrt()));
    let mut h = CMat::zeros(n, m);
    for p in paths {
        let a_b = steering_ula(n, rb, lit(p.bs_aod));
        let a_r = steering_upa(
            cfg.ris_elems_y,
            cfg.ris_elems_z,
            ry,
            rz,
            lit(p.ris_azimuth),
            lit(p.ris_elevation),
        );
        h += (a_b * a_r.adjoint()) * amp;
    }
    Ok(h)
}

/// RIS-user channel `(1/sqrt(L_RU)) sum_i sqrt(gain) alpha_i a_R(az_i, el_i)`.
pub fn synth_ris_user<T: Real>(
    cfg: &SystemConfig,
    gain: f64,
    paths: &[RisUserPath],
    fading: &[Complex<f64>],
) -> Result<CVec<T>> {
    if paths.is_empty() {
        return Err(Error::Domain("RIS-user channel needs at least one path".into()));
    }
    if fading.len() != paths.len() {
        return Err(Error::Shape(format!(
            "{} fading coefficients for {} paths",
            fading.len(),
            paths.len()
        )));
    }
    if !(gain >= 0.0) {
        return Err(Error::Domain(format!("path gain must be >= 0, got {gain}")));
    }
    let (_, ry, rz) = ratios::<T>(cfg);
    let amp = (gain / paths.len() as f64).sqrt();
    let mut h = CVec::zeros(cfg.n_elems());
    for (p, a) in paths.iter().zip(fading) {
        let coef = Complex::new(lit::<T>(amp * a.re), lit::<T>(amp * a.im));
        let a_r = steering_upa(
            cfg.ris_elems_y,
            cfg.ris_elems_z,
            ry,
            rz,
            lit(p.azimuth),
            lit(p.elevation),
        );
        h += a_r * coef;
    }
    Ok(h)
}

/// `H1 diag(h2)`: column `m` of `h1` scaled by `h2[m]`.
pub fn cascade<T: Real>(h1: &CMat<T>, h2: &CVec<T>) -> Result<CMat<T>> {
    if h1.ncols() != h2.len() {
        return Err(Error::Shape(format!(
            "BS-RIS channel has {} columns, RIS-user channel has {} entries",
            h1.ncols(),
            h2.len()
        )));
    }
    let mut out = h1.clone();
    for (mut col, s) in out.column_iter_mut().zip(h2.iter()) {
        col *= *s;
    }
    Ok(out)
}

/// True channels of one realization.
#[derive(Debug, Clone)]
pub struct ChannelSet<T: Real> {
    /// `H_{1,l}`, one `N x M` matrix per RIS.
    pub bs_ris: Vec<CMat<T>>,
    /// `h_{2,k,l}` indexed `[ris][user]`.
    pub ris_user: Vec<Vec<CVec<T>>>,
    /// `H^r_{k,l}` indexed `[user][ris]`.
    pub cascaded: Vec<Vec<CMat<T>>>,
    pub gain_bs_ris: Vec<f64>,
    /// `gamma_{2,k,l}` indexed `[user][ris]`.
    pub gain_ris_user: Vec<Vec<f64>>,
    pub user_positions: Vec<Point>,
}

impl<T: Real> ChannelSet<T> {
    pub fn from_parts(
        bs_ris: Vec<CMat<T>>,
        ris_user: Vec<Vec<CVec<T>>>,
        gain_bs_ris: Vec<f64>,
        gain_ris_user: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let l = bs_ris.len();
        if ris_user.len() != l || gain_bs_ris.len() != l {
            return Err(Error::Shape("per-RIS lists disagree on L".into()));
        }
        let k = ris_user.first().map_or(0, |u| u.len());
        if ris_user.iter().any(|u| u.len() != k) || gain_ris_user.len() != k {
            return Err(Error::Shape("per-user lists disagree on K".into()));
        }
        let mut cascaded = Vec::with_capacity(k);
        for user in 0..k {
            let row = (0..l)
                .map(|ris| cascade(&bs_ris[ris], &ris_user[ris][user]))
                .collect::<Result<Vec<_>>>()?;
            cascaded.push(row);
        }
        Ok(Self {
            bs_ris,
            ris_user,
            cascaded,
            gain_bs_ris,
            gain_ris_user,
            user_positions: Vec::new(),
        })
    }

    /// Draws a full realization: user drop, shadowed path gains, angles and
    /// small-scale fading.
    pub fn synthesize<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let noise_dbm = cfg.noise_dbm()?;
        let users = place_users(&cfg.geometry, cfg.n_users, rng);
        let bs = cfg.geometry.bs_position;

        let mut bs_ris = Vec::with_capacity(cfg.n_ris);
        let mut gain_bs_ris = Vec::with_capacity(cfg.n_ris);
        for ris in &cfg.geometry.ris_positions {
            let shadow: f64 = rng.sample(StandardNormal);
            let gain = path_gain_linear(&cfg.pathloss, distance(bs, *ris), shadow, noise_dbm)?;
            let paths = draw_bs_ris_paths(cfg.n_paths_bs_ris, rng);
            bs_ris.push(synth_bs_ris(cfg, gain, &paths)?);
            gain_bs_ris.push(gain);
        }

        let mut ris_user = vec![Vec::with_capacity(cfg.n_users); cfg.n_ris];
        let mut gain_ris_user = vec![Vec::with_capacity(cfg.n_ris); cfg.n_users];
        for (k, user) in users.iter().enumerate() {
            for (l, ris) in cfg.geometry.ris_positions.iter().enumerate() {
                let shadow: f64 = rng.sample(StandardNormal);
                let gain = path_gain_linear(&cfg.pathloss, distance(*ris, *user), shadow, noise_dbm)?;
                let paths = draw_ris_user_paths(cfg.n_paths_ris_user, rng);
                let fading = draw_fading(paths.len(), cfg.fading, rng);
                ris_user[l].push(synth_ris_user(cfg, gain, &paths, &fading)?);
                gain_ris_user[k].push(gain);
            }
        }

        let mut set = Self::from_parts(bs_ris, ris_user, gain_bs_ris, gain_ris_user)?;
        set.user_positions = users;
        Ok(set)
    }

    pub fn n_users(&self) -> usize {
        self.cascaded.len()
    }

    pub fn n_ris(&self) -> usize {
        self.bs_ris.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.bs_ris.first().map_or(0, |h| h.nrows())
    }

    pub fn n_elems(&self) -> usize {
        self.bs_ris.first().map_or(0, |h| h.ncols())
    }

    /// Cascaded gain `gamma_{k,l} = gamma_{1,l} gamma_{2,k,l}`.
    pub fn cascaded_gain(&self, user: usize, ris: usize) -> f64 {
        self.gain_bs_ris[ris] * self.gain_ris_user[user][ris]
    }
}

/// Hermitian covariance with a scaled-identity fast path.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance<T: Real> {
    ScaledIdentity { dim: usize, scale: T },
    Dense(CMat<T>),
}

impl<T: Real> Covariance<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::ScaledIdentity { dim, .. } => *dim,
            Self::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> CMat<T> {
        match self {
            Self::ScaledIdentity { dim, scale } => identity::<T>(*dim) * real(*scale),
            Self::Dense(m) => m.clone(),
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        match self {
            Self::ScaledIdentity { dim, scale } => Self::ScaledIdentity {
                dim: *dim,
                scale: *scale * factor,
            },
            Self::Dense(m) => Self::Dense(m * real(factor)),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::ScaledIdentity { scale, .. } => scale.is_zero(),
            Self::Dense(m) => m.iter().all(|z| z.re.is_zero() && z.im.is_zero()),
        }
    }

    /// Draws `e ~ CN(0, self)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CVec<T>> {
        let n = self.dim();
        let z = CVec::from_iterator(
            n,
            (0..n).map(|_| {
                let c = complex_normal(rng);
                Complex::new(lit::<T>(c.re), lit::<T>(c.im))
            }),
        );
        match self {
            Self::ScaledIdentity { scale, .. } => {
                if *scale < T::zero() {
                    return Err(Error::NotPositiveDefinite { index: 0 });
                }
                Ok(z * real(scale.sqrt()))
            }
            Self::Dense(m) => Ok(psd_sqrt(m)? * z),
        }
    }
}

/// Training SNR factor `T_UL rho_UL / (gamma sigma^2)`.
pub fn training_scalar(t_ul: usize, rho_ul_linear: f64, gamma: f64, sigma2: f64) -> Result<f64> {
    if t_ul == 0 {
        return Err(Error::Domain("training length must be positive".into()));
    }
    if !(rho_ul_linear > 0.0) || !(gamma > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::Domain(format!(
            "training power, gain and noise must be positive (rho={rho_ul_linear}, gamma={gamma}, sigma2={sigma2})"
        )));
    }
    Ok(t_ul as f64 * rho_ul_linear / (gamma * sigma2))
}

/// LMMSE error covariance under DFT training, `(C^-1 + s I)^-1` with
/// `s = T_UL rho_UL / (gamma sigma^2)`.
pub fn error_covariance_dft<T: Real>(
    prior_cov: &CMat<T>,
    t_ul: usize,
    rho_ul_linear: f64,
    gamma: f64,
    sigma2: f64,
) -> Result<CMat<T>> {
    let s = training_scalar(t_ul, rho_ul_linear, gamma, sigma2)?;
    error_covariance_from_scalar(prior_cov, s)
}

pub fn error_covariance_from_scalar<T: Real>(prior_cov: &CMat<T>, s: f64) -> Result<CMat<T>> {
    if prior_cov.nrows() != prior_cov.ncols() {
        return Err(Error::Shape("prior covariance must be square".into()));
    }
    let inv = hermitian_pd_inverse(prior_cov, "prior covariance")?;
    let n = prior_cov.nrows();
    let precision = inv + identity::<T>(n) * real(lit::<T>(s));
    hermitian_pd_inverse(&precision, "posterior precision")
}

/// Same map on the covariance enum, keeping the scaled-identity form.
pub fn error_covariance<T: Real>(prior: &Covariance<T>, s: f64) -> Result<Covariance<T>> {
    match prior {
        Covariance::ScaledIdentity { dim, scale } => {
            if !(*scale > T::zero()) {
                return Err(Error::Singular {
                    context: "prior covariance".into(),
                    condition: f64::INFINITY,
                });
            }
            let s = lit::<T>(s);
            Ok(Covariance::ScaledIdentity {
                dim: *dim,
                scale: *scale / (T::one() + *scale * s),
            })
        }
        Covariance::Dense(c) => Ok(Covariance::Dense(error_covariance_from_scalar(c, s)?)),
    }
}

/// Imperfect CSIT: estimated cascaded channels and their error statistics.
#[derive(Debug, Clone)]
pub struct ChannelEstimate<T: Real> {
    /// `Hhat^r_{k,l}` indexed `[user][ris]`.
    pub cascaded_est: Vec<Vec<CMat<T>>>,
    /// `R^e_{k,l}` indexed `[user][ris]`, dimension `N M`.
    pub error_cov: Vec<Vec<Covariance<T>>>,
    /// `C_{k,l}` indexed `[user][ris]`.
    pub prior_cov: Vec<Vec<Covariance<T>>>,
}

impl<T: Real> ChannelEstimate<T> {
    /// Perfect CSIT: estimates equal the truth and all error covariances vanish.
    pub fn perfect(truth: &ChannelSet<T>) -> Self {
        let dim = truth.n_antennas() * truth.n_elems();
        let zero = Covariance::ScaledIdentity {
            dim,
            scale: T::zero(),
        };
        let l = truth.n_ris();
        Self {
            cascaded_est: truth.cascaded.clone(),
            error_cov: vec![vec![zero.clone(); l]; truth.n_users()],
            prior_cov: (0..truth.n_users())
                .map(|k| {
                    (0..l)
                        .map(|r| Covariance::ScaledIdentity {
                            dim,
                            scale: lit(truth.cascaded_gain(k, r)),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.cascaded_est.len()
    }

    pub fn n_ris(&self) -> usize {
        self.cascaded_est.first().map_or(0, |r| r.len())
    }

    pub fn n_antennas(&self) -> usize {
        self.cascaded_est
            .first()
            .and_then(|r| r.first())
            .map_or(0, |h| h.nrows())
    }

    pub fn n_elems(&self) -> usize {
        self.cascaded_est
            .first()
            .and_then(|r| r.first())
            .map_or(0, |h| h.ncols())
    }

    /// Same estimate with every error covariance multiplied by `factor`.
    pub fn with_scaled_error(&self, factor: T) -> Self {
        let mut out = self.clone();
        for row in &mut out.error_cov {
            for c in row.iter_mut() {
                *c = c.scaled(factor);
            }
        }
        out
    }
}

/// Draws `chat` jointly Gaussian with the truth so that `c = chat + e` with
/// `e ~ CN(0, R^e)` independent of `chat`.
///
/// `chat = W c + v` with `W = I - R^e C^{-1}` and
/// `v ~ CN(0, (C - R^e) C^{-1} R^e)`, which gives `Cov(chat) = C - R^e`.
pub fn draw_estimate<T: Real, R: Rng + ?Sized>(
    truth: &ChannelSet<T>,
    error_cov: Vec<Vec<Covariance<T>>>,
    prior_cov: Vec<Vec<Covariance<T>>>,
    rng: &mut R,
) -> Result<ChannelEstimate<T>> {
    let n = truth.n_antennas();
    let m = truth.n_elems();
    let grid_ok = |g: &Vec<Vec<Covariance<T>>>| {
        g.len() == truth.n_users() && g.iter().all(|r| r.len() == truth.n_ris())
    };
    if !grid_ok(&error_cov) || !grid_ok(&prior_cov) {
        return Err(Error::Shape("covariance grid does not match K x L".into()));
    }
    let mut est = Vec::with_capacity(truth.n_users());
    for (k, row) in error_cov.iter().enumerate() {
        let mut est_row = Vec::with_capacity(row.len());
        for (l, err) in row.iter().enumerate() {
            let prior = &prior_cov[k][l];
            if err.dim() != n * m || prior.dim() != n * m {
                return Err(Error::Shape(format!(
                    "covariance ({k},{l}) has dimension {}/{}, expected {}",
                    err.dim(),
                    prior.dim(),
                    n * m
                )));
            }
            let c = vec_cols(&truth.cascaded[k][l]);
            let chat = estimate_vector(&c, prior, err, rng)?;
            est_row.push(CMat::from_column_slice(n, m, chat.as_slice()));
        }
        est.push(est_row);
    }
    Ok(ChannelEstimate {
        cascaded_est: est,
        error_cov,
        prior_cov,
    })
}

fn estimate_vector<T: Real, R: Rng + ?Sized>(
    c: &CVec<T>,
    prior: &Covariance<T>,
    err: &Covariance<T>,
    rng: &mut R,
) -> Result<CVec<T>> {
    if err.is_zero() {
        return Ok(c.clone());
    }
    match (prior, err) {
        (Covariance::ScaledIdentity { dim, scale: g }, Covariance::ScaledIdentity { scale: r, .. }) => {
            if !(*g > T::zero()) || *r > *g {
                return Err(Error::Domain(format!("error variance {r} exceeds prior {g}")));
            }
            let w = T::one() - *r / *g;
            let noise = Covariance::ScaledIdentity {
                dim: *dim,
                scale: w * *r,
            };
            Ok(c * real(w) + noise.sample(rng)?)
        }
        _ => {
            let (cd, rd) = (prior.to_dense(), err.to_dense());
            let c_inv = hermitian_pd_inverse(&cd, "prior covariance")?;
            let gain = &rd * &c_inv;
            let w = identity::<T>(c.len()) - &gain;
            let noise = Covariance::Dense((&cd - &rd) * c_inv * &rd);
            Ok(w * c + noise.sample(rng)?)
        }
    }
}

/// Estimates every cascaded channel from explicit priors under DFT training.
pub fn estimate_with_priors<T: Real, R: Rng + ?Sized>(
    truth: &ChannelSet<T>,
    priors: Vec<Vec<Covariance<T>>>,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelEstimate<T>> {
    let rho = cfg.ul_train_power_linear();
    let mut errs = Vec::with_capacity(priors.len());
    for (k, row) in priors.iter().enumerate() {
        let mut err_row = Vec::with_capacity(row.len());
        for (l, prior) in row.iter().enumerate() {
            let s = training_scalar(
                cfg.ul_train_len,
                rho,
                truth.cascaded_gain(k, l),
                cfg.noise_variance,
            )?;
            err_row.push(error_covariance(prior, s)?);
        }
        errs.push(err_row);
    }
    draw_estimate(truth, errs, priors, rng)
}

/// Default estimation: prior `C_{k,l} = gamma_{k,l} I_{NM}`.
pub fn estimate_channels<T: Real, R: Rng + ?Sized>(
    truth: &ChannelSet<T>,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelEstimate<T>> {
    let dim = truth.n_antennas() * truth.n_elems();
    let priors = (0..truth.n_users())
        .map(|k| {
            (0..truth.n_ris())
                .map(|l| Covariance::ScaledIdentity {
                    dim,
                    scale: lit(truth.cascaded_gain(k, l)),
                })
                .collect()
        })
        .collect();
    estimate_with_priors(truth, priors, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigenvalues, unvec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type C = Complex<f64>;

    fn rand_cmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat<f64> {
        CMat::from_fn(r, c, |_, _| complex_normal(rng))
    }

    fn rand_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec<f64> {
        CVec::from_fn(n, |_, _| complex_normal(rng))
    }

    fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> CMat<f64> {
        let a = rand_cmat(rng, n, n);
        &a * a.adjoint() + identity::<f64>(n) * C::new(0.5, 0.0)
    }

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            n_bs_antennas: 3,
            n_users: 2,
            n_ris: 2,
            ris_elems_y: 2,
            ris_elems_z: 2,
            ul_train_len: 8,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn ula_edge_cases() {
        let v = steering_ula(5, 0.5, 0.0);
        assert!(v.iter().all(|z| (z - C::new(1.0, 0.0)).norm() < 1e-15));
        let one = steering_ula(1, 0.5, 1.234);
        assert_eq!(one.len(), 1);
        assert!((one[0] - C::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ula_matches_elementwise_formula() {
        let v = steering_ula(4, 0.5, PI / 6.0);
        for i in 0..4 {
            let want = C::from_polar(1.0, PI * i as f64 * 0.5);
            assert!((v[i] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn upa_edge_cases() {
        let v = steering_upa(3, 4, 0.5, 0.5, 0.7, PI / 2.0);
        // a_z is all-ones; each a_y entry repeats 4 times.
        for y in 0..3 {
            for z in 0..4 {
                assert!((v[y * 4 + z] - v[y * 4]).norm() < 1e-12);
            }
        }
        let one = steering_upa(1, 1, 0.5, 0.5, 0.3, 0.2);
        assert!((one[0] - C::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn upa_matches_kronecker_of_axis_vectors() {
        let (az, el) = (PI / 4.0, PI / 3.0);
        let v = steering_upa(2, 2, 0.5, 0.5, az, el);
        let py = 2.0 * PI * 0.5 * az.sin() * el.sin();
        let pz = 2.0 * PI * 0.5 * el.cos();
        let want = [
            C::from_polar(1.0, 0.0),
            C::from_polar(1.0, pz),
            C::from_polar(1.0, py),
            C::from_polar(1.0, py + pz),
        ];
        for i in 0..4 {
            assert!((v[i] - want[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn bs_ris_single_path_at_broadside_is_all_ones() {
        let mut cfg = small_cfg();
        cfg.n_paths_bs_ris = 1;
        let zero_angles = BsRisPath {
            bs_aod: 0.0,
            ris_azimuth: 0.0,
            ris_elevation: 0.0,
        };
        // cos(0) = 1 puts a half-wavelength phase step along z, so the
        // zero-angle response alternates in sign along the z axis.
        let h = synth_bs_ris::<f64>(&cfg, 1.0, &[zero_angles]).unwrap();
        for n in 0..cfg.n_bs_antennas {
            for m in 0..cfg.n_elems() {
                let sign = if (m % cfg.ris_elems_z) % 2 == 0 { 1.0 } else { -1.0 };
                assert!((h[(n, m)] - C::new(sign, 0.0)).norm() < 1e-12);
            }
        }
        let path = BsRisPath {
            ris_elevation: PI / 2.0,
            ..zero_angles
        };
        let h = synth_bs_ris::<f64>(&cfg, 1.0, &[path]).unwrap();
        assert!(h.iter().all(|z| (z - C::new(1.0, 0.0)).norm() < 1e-12));
        let z = synth_bs_ris::<f64>(&cfg, 0.0, &[path]).unwrap();
        assert!(z.iter().all(|z| z.norm() == 0.0));
        assert!(synth_bs_ris::<f64>(&cfg, 1.0, &[]).is_err());
    }

    #[test]
    fn bs_ris_frobenius_norm_single_path() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let paths = draw_bs_ris_paths(1, &mut rng);
            let gain = 0.37;
            let h = synth_bs_ris::<f64>(&cfg, gain, &paths).unwrap();
            let want = gain * (cfg.n_bs_antennas * cfg.n_elems()) as f64;
            assert!((h.norm_squared() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn ris_user_edge_cases() {
        let cfg = small_cfg();
        let path = RisUserPath {
            azimuth: 0.0,
            elevation: PI / 2.0,
        };
        let one = [C::new(1.0, 0.0)];
        let h = synth_ris_user::<f64>(&cfg, 0.0, &[path], &one).unwrap();
        assert!(h.iter().all(|z| z.norm() == 0.0));
        let h = synth_ris_user::<f64>(&cfg, 4.0, &[path], &one).unwrap();
        assert!(h.iter().all(|z| (z - C::new(2.0, 0.0)).norm() < 1e-12));
        assert!(synth_ris_user::<f64>(&cfg, 1.0, &[], &[]).is_err());
    }

    #[test]
    fn ris_user_energy_matches_gain() {
        let cfg = small_cfg();
        let gain = 2.5;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 10_000;
        let samples: Vec<f64> = (0..draws)
            .map(|_| {
                let paths = draw_ris_user_paths(cfg.n_paths_ris_user, &mut rng);
                let fading = draw_fading(paths.len(), FadingMode::PerPath, &mut rng);
                synth_ris_user::<f64>(&cfg, gain, &paths, &fading)
                    .unwrap()
                    .norm_squared()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let want = gain * cfg.n_elems() as f64;
        assert!((mean - want).abs() < 3.0 * se, "mean {mean} want {want} se {se}");
    }

    #[test]
    fn per_link_fading_repeats_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = draw_fading(3, FadingMode::PerLink, &mut rng);
        assert!(f.iter().all(|z| *z == f[0]));
        let g = draw_fading(3, FadingMode::PerPath, &mut rng);
        assert!(g[0] != g[1]);
    }

    #[test]
    fn cascade_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h1 = rand_cmat(&mut rng, 2, 3);
        let ones = CVec::from_element(3, C::new(1.0, 0.0));
        assert_eq!(cascade(&h1, &ones).unwrap(), h1);
        let zero = CVec::zeros(3);
        assert!(cascade(&h1, &zero).unwrap().iter().all(|z| z.norm() == 0.0));
        let h2 = rand_cvec(&mut rng, 3);
        let dense = &h1 * CMat::from_diagonal(&h2);
        assert!((cascade(&h1, &h2).unwrap() - dense).norm() < 1e-14);
        assert!(matches!(cascade(&h1, &rand_cvec(&mut rng, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn synthesized_set_is_consistent() {
        let cfg = small_cfg();
        let set = ChannelSet::<f64>::synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(set.n_users(), 2);
        assert_eq!(set.n_ris(), 2);
        for k in 0..2 {
            for l in 0..2 {
                let dense = &set.bs_ris[l] * CMat::from_diagonal(&set.ris_user[l][k]);
                let rel = (&set.cascaded[k][l] - &dense).norm() / dense.norm();
                assert!(rel < 1e-12);
                assert_eq!(set.cascaded[k][l].shape(), (3, 4));
            }
        }
        let again = ChannelSet::<f64>::synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(again.cascaded, set.cascaded);
    }

    #[test]
    fn error_covariance_identity_case() {
        let c = identity::<f64>(4);
        let r = error_covariance_dft(&c, 1, 1.0, 1.0, 1.0).unwrap();
        assert!((r - identity::<f64>(4) * C::new(0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn error_covariance_vanishes_with_strong_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = rand_spd(&mut rng, 6);
        let r = error_covariance_from_scalar(&c, 1e12).unwrap();
        assert!(r.norm() <= 1e-10 * c.norm());
    }

    #[test]
    fn error_covariance_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = rand_spd(&mut rng, 6);
        let s = 2.7;
        let r = error_covariance_from_scalar(&c, s).unwrap();
        let oracle = (c.clone().try_inverse().unwrap() + identity::<f64>(6) * C::new(s, 0.0))
            .try_inverse()
            .unwrap();
        assert!((&r - &oracle).norm() / oracle.norm() < 1e-9);
        assert!(crate::linalg::hermitian_defect(&r) < 1e-10);
        assert!(hermitian_eigenvalues(&r)[0] > -1e-10);
        // R^e below C in Loewner order.
        assert!(hermitian_eigenvalues(&(c - r))[0] > -1e-10);
    }

    #[test]
    fn error_covariance_rejects_singular_prior() {
        let mut c = identity::<f64>(3);
        c[(2, 2)] = C::new(0.0, 0.0);
        match error_covariance_from_scalar(&c, 1.0) {
            Err(Error::Singular { condition, .. }) => assert!(condition.is_infinite() || condition > 1e12),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn scaled_identity_fast_path_matches_dense() {
        let prior = Covariance::ScaledIdentity { dim: 4, scale: 0.3 };
        let fast = error_covariance(&prior, 5.0).unwrap().to_dense();
        let dense = error_covariance_from_scalar(&prior.to_dense(), 5.0).unwrap();
        assert!((fast - dense).norm() < 1e-14);
    }

    #[test]
    fn error_covariance_monotone_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = rand_spd(&mut rng, 5);
        let weak = error_covariance_from_scalar(&c, 0.5).unwrap();
        let strong = error_covariance_from_scalar(&c, 5.0).unwrap();
        assert!(hermitian_eigenvalues(&(weak - strong))[0] >= -1e-9);
    }

    #[test]
    fn zero_error_estimate_is_exact() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let truth = ChannelSet::<f64>::synthesize(&cfg, &mut rng).unwrap();
        let est = ChannelEstimate::perfect(&truth);
        let redrawn = draw_estimate(&truth, est.error_cov.clone(), est.prior_cov.clone(), &mut rng).unwrap();
        assert_eq!(redrawn.cascaded_est, truth.cascaded);
    }

    #[test]
    fn estimate_is_deterministic() {
        let cfg = small_cfg();
        let truth = ChannelSet::<f64>::synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
        let a = estimate_channels(&truth, &cfg, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
        let b = estimate_channels(&truth, &cfg, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
        assert_eq!(a.cascaded_est, b.cascaded_est);
    }

    #[test]
    fn error_samples_follow_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let r = rand_spd(&mut rng, 4);
        let cov = Covariance::Dense(r.clone());
        let draws = 10_000;
        let mut acc = CMat::<f64>::zeros(4, 4);
        for _ in 0..draws {
            let e = cov.sample(&mut rng).unwrap();
            acc += &e * e.adjoint();
        }
        acc /= C::new(draws as f64, 0.0);
        assert!((&acc - &r).norm() / r.norm() < 0.05);
    }

    proptest! {
        #[test]
        fn vec_unvec_round_trip(seed in 0u64..1000, r in 1usize..6, c in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_cmat(&mut rng, r, c);
            let v = vec_cols(&x);
            for j in 0..c {
                for i in 0..r {
                    prop_assert_eq!(v[i + r * j], x[(i, j)]);
                }
            }
            prop_assert_eq!(unvec(&v, r, c).unwrap(), x);
        }

        #[test]
        fn cascade_is_linear(seed in 0u64..1000, a_re in -2.0f64..2.0, b_im in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h1 = rand_cmat(&mut rng, 3, 4);
            let u = rand_cvec(&mut rng, 4);
            let v = rand_cvec(&mut rng, 4);
            let (a, b) = (C::new(a_re, 0.3), C::new(0.1, b_im));
            let lhs = cascade(&h1, &(&u * a + &v * b)).unwrap();
            let rhs = cascade(&h1, &u).unwrap() * a + cascade(&h1, &v).unwrap() * b;
            prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + h1.norm()));
        }

        #[test]
        fn steering_entries_unit_modulus(n in 1usize..32, ang in -3.2f64..3.2, el in -1.6f64..1.6) {
            for z in steering_ula(n, 0.5, ang).iter() {
                prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            }
            for z in steering_upa(4, 3, 0.5, 0.5, ang, el).iter() {
                prop_assert!((z.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
