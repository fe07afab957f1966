//! Alternating precoder / phase-shift optimization inside a grid search
//! over the regularization weight `mu`.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{default_rzf_regularizer, random_phases, rzf_for_phases};
use crate::channel::ChannelEstimate;
use crate::gpi_precoder::{build_precoder_quadratics, run_gpi_precoder, GpiSettings};
use crate::gpi_ris::{build_ris_quadratics, run_gpi_ris, RegularizerSettings};
use crate::metrics::{lower_bound_sum_se, PhaseShifts, Precoder};
use crate::scalar::{lit, to_f64, Real};
use crate::scenario::SystemConfig;
use crate::{Error, Result};

/// `n_points` values linearly spaced over `[mu_min, mu_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearchPlan {
    pub mu_min: f64,
    pub mu_max: f64,
    pub n_points: usize,
}

impl Default for LineSearchPlan {
    fn default() -> Self {
        Self {
            mu_min: 0.0,
            mu_max: 100.0,
            n_points: 30,
        }
    }
}

impl LineSearchPlan {
    pub fn single(mu: f64) -> Self {
        Self {
            mu_min: mu,
            mu_max: mu,
            n_points: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::Config("line search needs at least one point".into()));
        }
        if !(self.mu_min >= 0.0) || !(self.mu_max >= self.mu_min) || !self.mu_max.is_finite() {
            return Err(Error::Config(format!(
                "invalid mu range [{}, {}]",
                self.mu_min, self.mu_max
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        if self.n_points == 1 {
            return vec![self.mu_min];
        }
        let step = (self.mu_max - self.mu_min) / (self.n_points - 1) as f64;
        (0..self.n_points).map(|i| self.mu_min + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointSettings {
    pub precoder: GpiSettings,
    pub ris: GpiSettings,
    /// Relative objective change that ends the alternation.
    pub outer_tol: f64,
    pub outer_max_iters: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    /// RZF loading; `None` means `K sigma^2 / P`.
    pub rzf_regularizer: Option<f64>,
    /// Evaluate grid points on the rayon pool.
    pub parallel_mu: bool,
}

impl Default for JointSettings {
    fn default() -> Self {
        Self {
            precoder: GpiSettings::default(),
            ris: GpiSettings::default(),
            outer_tol: 0.01,
            outer_max_iters: 20,
            alpha1: 2.0,
            alpha2: 2.0,
            rzf_regularizer: None,
            parallel_mu: false,
        }
    }
}

impl JointSettings {
    pub fn validate(&self) -> Result<()> {
        self.precoder.validate()?;
        self.ris.validate()?;
        if !(self.outer_tol > 0.0) || self.outer_max_iters == 0 {
            return Err(Error::Config("outer loop needs a positive tolerance and at least one iteration".into()));
        }
        if let Some(r) = self.rzf_regularizer {
            if !(r > 0.0) {
                return Err(Error::Config(format!("RZF regularizer must be positive, got {r}")));
            }
        }
        Ok(())
    }

    pub fn rzf_loading(&self, n_users: usize, noise_over_power: f64) -> f64 {
        self.rzf_regularizer
            .unwrap_or_else(|| default_rzf_regularizer(n_users, noise_over_power))
    }
}

/// Summary of the alternation at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuOutcome {
    pub mu: f64,
    /// Best objective over the alternation iterates.
    pub objective: f64,
    /// Objective after every alternation step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Unit-modulus deviation of the relaxed phases at the best iterate.
    pub nmse: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTiming {
    pub precoder_secs: f64,
    /// Loop-body time of the phase GPI only.
    pub ris_secs: f64,
    pub ris_iterations: usize,
    pub total_secs: f64,
}

#[derive(Debug, Clone)]
pub struct JointResult<T: Real> {
    pub best_precoder: Precoder<T>,
    /// Always projected onto the unit circle.
    pub best_phases: PhaseShifts<T>,
    pub best_mu: f64,
    pub best_objective: f64,
    pub best_index: usize,
    pub r_sigma: f64,
    pub initial_objective: f64,
    pub per_mu: Vec<MuOutcome>,
    pub timing: StageTiming,
}

impl<T: Real> JointResult<T> {
    pub fn best(&self) -> &MuOutcome {
        &self.per_mu[self.best_index]
    }
}

/// Sum-SE normalizer: the bound achieved by the initial pair.
pub fn compute_r_sigma<T: Real>(
    est: &ChannelEstimate<T>,
    f0: &Precoder<T>,
    phi0: &PhaseShifts<T>,
    noise_over_power: T,
) -> Result<T> {
    let r = lower_bound_sum_se(est, f0, phi0, noise_over_power)?;
    if !(r > T::zero()) || !to_f64(r).is_finite() {
        return Err(Error::Config(format!("degenerate sum-SE normalizer {r}")));
    }
    Ok(r)
}

/// Random projected phases and the RZF precoder for them.
pub fn initial_point<T: Real, R: Rng + ?Sized>(
    est: &ChannelEstimate<T>,
    noise_over_power: f64,
    settings: &JointSettings,
    rng: &mut R,
) -> Result<(Precoder<T>, PhaseShifts<T>)> {
    let phi0 = random_phases(est.n_ris(), est.n_elems(), rng);
    let reg = settings.rzf_loading(est.n_users(), noise_over_power);
    let f0 = rzf_for_phases(est, &phi0, lit(reg))?;
    Ok((f0, phi0))
}

struct MuRun<T: Real> {
    outcome: MuOutcome,
    best: Option<(Precoder<T>, PhaseShifts<T>)>,
    timing: StageTiming,
}

#[allow(clippy::too_many_arguments)]
fn alternate<T: Real>(
    est: &ChannelEstimate<T>,
    noise_over_power: T,
    f0: &Precoder<T>,
    phi0: &PhaseShifts<T>,
    r_sigma: f64,
    initial: f64,
    mu: f64,
    settings: &JointSettings,
) -> Result<MuRun<T>> {
    let n = est.n_antennas();
    let reg = RegularizerSettings {
        mu,
        tau: 1.0 / (est.n_ris() * est.n_elems()) as f64,
        r_sigma,
        alpha1: settings.alpha1,
        alpha2: settings.alpha2,
    };
    let mut f = f0.clone();
    let mut phi = phi0.clone();
    let mut prev = initial;
    let mut trace = Vec::with_capacity(settings.outer_max_iters);
    let mut best: Option<(f64, Precoder<T>, PhaseShifts<T>, f64)> = None;
    let mut timing = StageTiming::default();
    let mut converged = false;
    for _ in 0..settings.outer_max_iters {
        let t0 = Instant::now();
        let pq = build_precoder_quadratics(est, &phi, noise_over_power)?;
        let pout = run_gpi_precoder(&pq, &f.stacked(), &settings.precoder)?;
        f = pout.precoder(n)?;
        timing.precoder_secs += t0.elapsed().as_secs_f64();

        let rq = build_ris_quadratics(est, &f, noise_over_power)?;
        let rout = run_gpi_ris(&rq, &reg, &phi.normalized(), &settings.ris)?;
        timing.ris_secs += rout.loop_secs;
        timing.ris_iterations += rout.iterations;
        phi = rout.phases;

        let obj = to_f64(lower_bound_sum_se(est, &f, &phi, noise_over_power)?);
        trace.push(obj);
        if best.as_ref().map_or(true, |b| obj > b.0) {
            best = Some((obj, f.clone(), phi.clone(), to_f64(rout.nmse)));
        }
        let change = (obj - prev).abs() / prev.abs();
        prev = obj;
        if change <= settings.outer_tol {
            converged = true;
            break;
        }
    }
    let (objective, bf, bphi, nmse) = best.ok_or_else(|| Error::Domain("no alternation step ran".into()))?;
    Ok(MuRun {
        outcome: MuOutcome {
            mu,
            objective,
            iterations: trace.len(),
            trace,
            converged,
            nmse,
            error: None,
        },
        best: Some((bf, bphi)),
        timing,
    })
}

/// Runs the line search from a given initial pair.
pub fn run_joint_from<T: Real>(
    est: &ChannelEstimate<T>,
    noise_over_power: f64,
    f0: &Precoder<T>,
    phi0: &PhaseShifts<T>,
    plan: &LineSearchPlan,
    settings: &JointSettings,
) -> Result<JointResult<T>> {
    plan.validate()?;
    settings.validate()?;
    let start = Instant::now();
    let nop = lit::<T>(noise_over_power);
    let phi0 = phi0.project();
    let r_sigma = to_f64(compute_r_sigma(est, f0, &phi0, nop)?);
    let grid = plan.grid();
    let one = |mu: f64| match alternate(est, nop, f0, &phi0, r_sigma, r_sigma, mu, settings) {
        Ok(run) => run,
        Err(e) => MuRun {
            outcome: MuOutcome {
                mu,
                objective: f64::NAN,
                trace: Vec::new(),
                iterations: 0,
                converged: false,
                nmse: f64::NAN,
                error: Some(e.to_string()),
            },
            best: None,
            timing: StageTiming::default(),
        },
    };
    let runs: Vec<MuRun<T>> = if settings.parallel_mu {
        grid.par_iter().map(|&mu| one(mu)).collect()
    } else {
        grid.iter().map(|&mu| one(mu)).collect()
    };

    let mut best_index = None;
    for (i, run) in runs.iter().enumerate() {
        if run.best.is_some() && best_index.map_or(true, |b: usize| run.outcome.objective > runs[b].outcome.objective) {
            best_index = Some(i);
        }
    }
    let best_index = best_index.ok_or_else(|| {
        let first = runs.iter().find_map(|r| r.outcome.error.clone()).unwrap_or_default();
        Error::Domain(format!("every line-search point failed: {first}"))
    })?;
    let mut timing = StageTiming::default();
    for run in &runs {
        timing.precoder_secs += run.timing.precoder_secs;
        timing.ris_secs += run.timing.ris_secs;
        timing.ris_iterations += run.timing.ris_iterations;
    }
    let (best_precoder, best_phases) = runs[best_index].best.clone().expect("checked above");
    let per_mu: Vec<MuOutcome> = runs.into_iter().map(|r| r.outcome).collect();
    timing.total_secs = start.elapsed().as_secs_f64();
    Ok(JointResult {
        best_precoder,
        best_phases,
        best_mu: per_mu[best_index].mu,
        best_objective: per_mu[best_index].objective,
        best_index,
        r_sigma,
        initial_objective: r_sigma,
        per_mu,
        timing,
    })
}

/// Full optimizer: draws the random initial phases, builds RZF, then runs
/// the line search.
pub fn run_joint<T: Real, R: Rng + ?Sized>(
    est: &ChannelEstimate<T>,
    cfg: &SystemConfig,
    plan: &LineSearchPlan,
    settings: &JointSettings,
    rng: &mut R,
) -> Result<JointResult<T>> {
    check_config(est, cfg)?;
    let nop = cfg.noise_over_power();
    let (f0, phi0) = initial_point(est, nop, settings, rng)?;
    run_joint_from(est, nop, &f0, &phi0, plan, settings)
}

/// Single-`mu` variant used for timing.
pub fn run_joint_fixed_mu<T: Real, R: Rng + ?Sized>(
    est: &ChannelEstimate<T>,
    cfg: &SystemConfig,
    mu: f64,
    settings: &JointSettings,
    rng: &mut R,
) -> Result<JointResult<T>> {
    run_joint(est, cfg, &LineSearchPlan::single(mu), settings, rng)
}

fn check_config<T: Real>(est: &ChannelEstimate<T>, cfg: &SystemConfig) -> Result<()> {
    if est.n_users() != cfg.n_users
        || est.n_ris() != cfg.n_ris
        || est.n_antennas() != cfg.n_bs_antennas
        || est.n_elems() != cfg.n_elems()
    {
        return Err(Error::Shape(format!(
            "estimate N={} K={} L={} M={} does not match the configuration",
            est.n_antennas(),
            est.n_users(),
            est.n_ris(),
            est.n_elems()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{estimate_channels, ChannelSet};
    use crate::metrics::exact_sum_se;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::default().with_ris_elems(2, 2);
        cfg.n_bs_antennas = 4;
        cfg.n_users = 2;
        cfg.ul_train_len = cfg.ul_train_len.max(cfg.n_elems() * cfg.n_users);
        cfg
    }

    fn setup(seed: u64) -> (SystemConfig, ChannelEstimate<f64>) {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = ChannelSet::synthesize(&cfg, &mut rng).unwrap();
        let est = estimate_channels(&truth, &cfg, &mut rng).unwrap();
        (cfg, est)
    }

    #[test]
    fn grid_spacing() {
        let g = LineSearchPlan::default().grid();
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 0.0);
        assert!((g[29] - 100.0).abs() < 1e-12);
        assert_eq!(LineSearchPlan::single(3.0).grid(), vec![3.0]);
        assert!(LineSearchPlan { mu_min: 2.0, mu_max: 1.0, n_points: 3 }.validate().is_err());
        assert!(LineSearchPlan { mu_min: 0.0, mu_max: 1.0, n_points: 0 }.validate().is_err());
    }

    #[test]
    fn zero_precoder_normalizer_rejected() {
        let (cfg, est) = setup(1);
        let phi = PhaseShifts::ones(cfg.n_ris, cfg.n_elems());
        let f = Precoder::zeros(cfg.n_bs_antennas, cfg.n_users);
        assert!(matches!(compute_r_sigma(&est, &f, &phi, 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn single_user_normalizer_is_exact_se() {
        let mut cfg = small_cfg();
        cfg.n_users = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = ChannelSet::<f64>::synthesize(&cfg, &mut rng).unwrap();
        let est = ChannelEstimate::perfect(&truth);
        let phi = random_phases(cfg.n_ris, cfg.n_elems(), &mut rng);
        let h = crate::metrics::effective_channels(&est.cascaded_est, &phi);
        let f = Precoder::new(vec![&h[0] / nalgebra::Complex::new(h[0].norm(), 0.0)]).unwrap();
        let nop = cfg.noise_over_power();
        let r = compute_r_sigma(&est, &f, &phi, nop).unwrap();
        assert!((r - exact_sum_se(&truth.cascaded, &f, &phi, nop).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_under_seed() {
        let (cfg, est) = setup(3);
        let plan = LineSearchPlan { mu_min: 0.0, mu_max: 10.0, n_points: 3 };
        let s = JointSettings::default();
        let a = run_joint(&est, &cfg, &plan, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = run_joint(&est, &cfg, &plan, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.per_mu, b.per_mu);
        assert_eq!(a.best_phases, b.best_phases);
        let par = JointSettings { parallel_mu: true, ..s };
        let c = run_joint(&est, &cfg, &plan, &par, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.per_mu, c.per_mu);
    }

    #[test]
    fn argmax_contract_and_output_constraints() {
        let (cfg, est) = setup(4);
        let plan = LineSearchPlan { mu_min: 0.0, mu_max: 20.0, n_points: 4 };
        let r = run_joint(&est, &cfg, &plan, &JointSettings::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let max = r.per_mu.iter().map(|m| m.objective).fold(f64::MIN, f64::max);
        assert_eq!(r.best_objective, max);
        assert!(r.best_phases.projected);
        assert!(r.best_phases.max_modulus_error() < 1e-12);
        assert!((r.best_precoder.total_power() - 1.0).abs() < 1e-9);
        let check = lower_bound_sum_se(&est, &r.best_precoder, &r.best_phases, cfg.noise_over_power()).unwrap();
        assert!((check - r.best_objective).abs() < 1e-12);
        for m in &r.per_mu {
            assert!(m.trace.len() <= 20);
        }
    }

    #[test]
    fn one_outer_iteration_cap() {
        let (cfg, est) = setup(5);
        let s = JointSettings { outer_max_iters: 1, ..JointSettings::default() };
        let r = run_joint_fixed_mu(&est, &cfg, 0.0, &s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(r.per_mu[0].trace.len(), 1);
        assert_eq!(r.per_mu[0].iterations, 1);
    }

    #[test]
    fn fixed_mu_equals_single_point_plan() {
        let (cfg, est) = setup(6);
        let s = JointSettings::default();
        let a = run_joint_fixed_mu(&est, &cfg, 5.0, &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = run_joint(&est, &cfg, &LineSearchPlan::single(5.0), &s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.per_mu, b.per_mu);
        assert!(a.timing.precoder_secs >= 0.0 && a.timing.ris_secs >= 0.0 && a.timing.total_secs >= 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut cfg, est) = setup(7);
        cfg.n_users += 1;
        let err = run_joint(&est, &cfg, &LineSearchPlan::single(0.0), &JointSettings::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}
