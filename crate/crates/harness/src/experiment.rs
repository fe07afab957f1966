//! Seeded sweeps: channel synthesis, estimation and every enabled scheme per
//! (sweep value, seed) point.

use std::time::Instant;

use gpipris_core::baselines::gpi_for_phases;
use gpipris_core::channel::{estimate_channels, ChannelEstimate, ChannelSet};
use gpipris_core::joint::{initial_point, run_joint_from, LineSearchPlan, JointSettings};
use gpipris_core::metrics::{
    exact_sum_se, lower_bound_sum_se, mc_instantaneous_se, nmse_unit_modulus, PhaseShifts, Precoder,
};
use gpipris_core::scenario::SystemConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::spec::{ExperimentKind, ExperimentSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// RZF precoder with random phases.
    RzfRandom,
    /// GPI precoder with random phases.
    GpiRandom,
    /// Joint GPI precoder and regularized GPI phases.
    GpiPris,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::RzfRandom, Scheme::GpiRandom, Scheme::GpiPris];

    pub fn name(self) -> &'static str {
        match self {
            Self::RzfRandom => "rzf_random",
            Self::GpiRandom => "gpi_random",
            Self::GpiPris => "gpi_pris",
        }
    }
}

/// One scheme evaluated at one (sweep value, seed) point. Metric fields are
/// `None` on error rows and for quantities a scheme does not produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub lower_bound_se: Option<f64>,
    /// Sum SE on the true channels.
    pub exact_se: Option<f64>,
    pub mc_se: Option<f64>,
    pub nmse: Option<f64>,
    pub selected_mu: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub precoder_secs: f64,
    pub ris_secs: f64,
    pub ris_iterations: usize,
    pub total_secs: f64,
    pub error: Option<String>,
    /// Outer objective per iteration at the selected `mu` (JSON lines only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl ResultRow {
    fn new(experiment: &str, seed: u64, sweep_value: f64, scheme: Scheme) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed,
            sweep_value,
            scheme,
            lower_bound_se: None,
            exact_se: None,
            mc_se: None,
            nmse: None,
            selected_mu: None,
            iterations: None,
            converged: None,
            precoder_secs: 0.0,
            ris_secs: 0.0,
            ris_iterations: 0,
            total_secs: 0.0,
            error: None,
            trace: Vec::new(),
        }
    }

    fn failed(experiment: &str, seed: u64, sweep_value: f64, scheme: Scheme, message: String) -> Self {
        Self {
            error: Some(message),
            ..Self::new(experiment, seed, sweep_value, scheme)
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Every present numeric field is finite.
    pub fn is_finite(&self) -> bool {
        [self.lower_bound_se, self.exact_se, self.mc_se, self.nmse, self.selected_mu]
            .iter()
            .flatten()
            .chain([self.sweep_value, self.precoder_secs, self.ris_secs, self.total_secs].iter())
            .chain(self.trace.iter())
            .all(|v| v.is_finite())
    }

    /// Mean wall time of one phase-shift GPI iteration.
    pub fn ris_secs_per_iteration(&self) -> Option<f64> {
        (self.ris_iterations > 0).then(|| self.ris_secs / self.ris_iterations as f64)
    }
}

/// Seed-averaged view of one (sweep value, scheme) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_lower_bound_se: f64,
    pub mean_exact_se: f64,
    pub mean_nmse: f64,
    pub mean_ris_secs_per_iteration: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Whether every sweep value has at least one successful row.
    pub fn every_point_succeeded(&self, sweep_values: &[f64]) -> bool {
        sweep_values
            .iter()
            .all(|v| self.rows.iter().any(|r| r.sweep_value == *v && r.is_ok()))
    }

    pub fn summary(&self) -> Vec<CellSummary> {
        let mut keys: Vec<(f64, Scheme)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.sweep_value, r.scheme)) {
                keys.push((r.sweep_value, r.scheme));
            }
        }
        keys.into_iter()
            .map(|(v, s)| {
                let cell: Vec<&ResultRow> = self.rows.iter().filter(|r| r.sweep_value == v && r.scheme == s).collect();
                let ok: Vec<&&ResultRow> = cell.iter().filter(|r| r.is_ok()).collect();
                let mean = |f: &dyn Fn(&ResultRow) -> Option<f64>| {
                    let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                    if vals.is_empty() {
                        f64::NAN
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    }
                };
                CellSummary {
                    sweep_value: v,
                    scheme: s,
                    n_ok: ok.len(),
                    n_failed: cell.len() - ok.len(),
                    mean_lower_bound_se: mean(&|r| r.lower_bound_se),
                    mean_exact_se: mean(&|r| r.exact_se),
                    mean_nmse: mean(&|r| r.nmse),
                    mean_ris_secs_per_iteration: mean(&|r| r.ris_secs_per_iteration()),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Overrides the spec's first seed.
    pub seed: Option<u64>,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

/// Runs every (sweep value, seed) point of a spec. Rows come back in
/// (sweep value, seed, scheme) order whatever the completion order.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ResultTable> {
    spec.validate()?;
    if spec.kind == ExperimentKind::Bench {
        return Err(HarnessError::Spec("bench specs run through the bench command".into()));
    }
    let base = spec.load_base_config()?;
    let first_seed = opts.seed.or(spec.seed).unwrap_or(base.rng_seed);
    let id = spec.experiment_id();
    let schemes = spec.schemes();
    let mut points = Vec::new();
    for &value in &spec.sweep_values {
        let cfg = spec.point_config(&base, value)?;
        for i in 0..spec.n_seeds as u64 {
            points.push((value, cfg.clone(), first_seed + i));
        }
    }
    let job = || -> Vec<Vec<ResultRow>> {
        points
            .par_iter()
            .map(|(value, cfg, seed)| {
                let ctx = PointContext {
                    experiment: &id,
                    sweep_value: *value,
                    seed: *seed,
                    plan: spec.plan_for(*value),
                    settings: &spec.settings,
                    mc_draws: spec.mc_draws,
                    record_trace: spec.kind == ExperimentKind::Convergence,
                };
                run_point(&ctx, cfg, &schemes)
            })
            .collect()
    };
    let rows = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Spec(format!("cannot build a pool of {n} threads: {e}")))?
            .install(job),
        None => job(),
    };
    Ok(ResultTable {
        rows: rows.into_iter().flatten().collect(),
    })
}

pub struct PointContext<'a> {
    pub experiment: &'a str,
    pub sweep_value: f64,
    pub seed: u64,
    pub plan: LineSearchPlan,
    pub settings: &'a JointSettings,
    pub mc_draws: Option<usize>,
    pub record_trace: bool,
}

/// All schemes at one point. Channel and initial-point failures turn every
/// scheme's row into an error row.
pub fn run_point(ctx: &PointContext, cfg: &SystemConfig, schemes: &[Scheme]) -> Vec<ResultRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let nop = cfg.noise_over_power();
    let setup = (|| -> gpipris_core::Result<_> {
        let truth = ChannelSet::<f64>::synthesize(cfg, &mut rng)?;
        let est = estimate_channels(&truth, cfg, &mut rng)?;
        let (f0, phi0) = initial_point(&est, nop, ctx.settings, &mut rng)?;
        Ok((truth, est, f0, phi0))
    })();
    let (truth, est, f0, phi0) = match setup {
        Ok(s) => s,
        Err(e) => {
            return schemes
                .iter()
                .map(|&s| ResultRow::failed(ctx.experiment, ctx.seed, ctx.sweep_value, s, e.to_string()))
                .collect()
        }
    };
    let mut mc_rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    mc_rng.set_stream(1);
    schemes
        .iter()
        .map(|&scheme| {
            let start = Instant::now();
            let outcome = run_scheme(scheme, ctx, &est, nop, &f0, &phi0).and_then(|mut run| {
                check_output_contract(&run.f, &run.phi)?;
                let (lb, exact) = (
                    lower_bound_sum_se(&est, &run.f, &run.phi, nop)?,
                    exact_sum_se(&truth.cascaded, &run.f, &run.phi, nop)?,
                );
                run.row.lower_bound_se = Some(lb);
                run.row.exact_se = Some(exact);
                if let Some(n) = ctx.mc_draws {
                    run.row.mc_se = Some(mc_instantaneous_se(&est, &run.f, &run.phi, nop, n, &mut mc_rng)?.mean);
                }
                Ok(run.row)
            });
            match outcome {
                Ok(mut row) => {
                    row.total_secs = start.elapsed().as_secs_f64();
                    if !row.is_finite() {
                        return ResultRow::failed(
                            ctx.experiment,
                            ctx.seed,
                            ctx.sweep_value,
                            scheme,
                            "non-finite result".into(),
                        );
                    }
                    row
                }
                Err(e) => ResultRow::failed(ctx.experiment, ctx.seed, ctx.sweep_value, scheme, e.to_string()),
            }
        })
        .collect()
}

/// Largest tolerated `| |phi| - 1 |` of reported phases, a few rounding steps.
pub const MODULUS_TOL: f64 = 4.0 * f64::EPSILON;
/// Largest tolerated `|P - 1|` of a reported precoder.
pub const POWER_TOL: f64 = 1e-9;

/// Checks the unit-modulus phase and unit-power precoder contract.
pub fn check_output_contract(f: &Precoder<f64>, phi: &PhaseShifts<f64>) -> gpipris_core::Result<()> {
    let modulus = phi.max_modulus_error();
    if !phi.projected || !(modulus <= MODULUS_TOL) {
        return Err(gpipris_core::Error::Domain(format!(
            "phase shifts off the unit circle by {modulus:e}"
        )));
    }
    let power = f.total_power();
    if !((power - 1.0).abs() <= POWER_TOL) {
        return Err(gpipris_core::Error::Domain(format!("precoder power {power} is not 1")));
    }
    Ok(())
}

struct SchemeRun {
    f: Precoder<f64>,
    phi: PhaseShifts<f64>,
    row: ResultRow,
}

fn run_scheme(
    scheme: Scheme,
    ctx: &PointContext,
    est: &ChannelEstimate<f64>,
    nop: f64,
    f0: &Precoder<f64>,
    phi0: &PhaseShifts<f64>,
) -> gpipris_core::Result<SchemeRun> {
    let mut row = ResultRow::new(ctx.experiment, ctx.seed, ctx.sweep_value, scheme);
    row.nmse = Some(nmse_unit_modulus(&phi0.normalized())?);
    match scheme {
        Scheme::RzfRandom => Ok(SchemeRun {
            f: f0.clone(),
            phi: phi0.clone(),
            row,
        }),
        Scheme::GpiRandom => {
            let t = Instant::now();
            let reg = ctx.settings.rzf_loading(est.n_users(), nop);
            let (f, out) = gpi_for_phases(est, phi0, nop, reg, &ctx.settings.precoder)?;
            row.precoder_secs = t.elapsed().as_secs_f64();
            row.iterations = Some(out.iterations);
            row.converged = Some(out.converged);
            Ok(SchemeRun {
                f,
                phi: phi0.clone(),
                row,
            })
        }
        Scheme::GpiPris => {
            let res = run_joint_from(est, nop, f0, phi0, &ctx.plan, ctx.settings)?;
            let best = res.best();
            row.nmse = Some(best.nmse);
            row.selected_mu = Some(res.best_mu);
            row.iterations = Some(best.iterations);
            row.converged = Some(best.converged);
            row.precoder_secs = res.timing.precoder_secs;
            row.ris_secs = res.timing.ris_secs;
            row.ris_iterations = res.timing.ris_iterations;
            if ctx.record_trace {
                row.trace = best.trace.clone();
            }
            Ok(SchemeRun {
                f: res.best_precoder,
                phi: res.best_phases,
                row,
            })
        }
    }
}
