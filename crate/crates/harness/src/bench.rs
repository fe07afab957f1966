//! Timing of the phase-shift GPI stage at fixed `L M`.

use gpipris_core::baselines::gpi_for_phases;
use gpipris_core::channel::{estimate_channels, ChannelSet};
use gpipris_core::gpi_precoder::GpiSettings;
use gpipris_core::gpi_ris::{build_ris_quadratics, run_gpi_ris, RegularizerSettings, RisQuadratics};
use gpipris_core::joint::{compute_r_sigma, initial_point, JointSettings};
use gpipris_core::metrics::PhaseShifts;
use gpipris_core::scenario::SystemConfig;
use gpipris_core::linalg::CVec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::experiment::RunOptions;
use crate::spec::{ExperimentKind, ExperimentSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub repetitions: usize,
    /// GPI iterations per timed run; the tolerance is disabled.
    pub iterations: usize,
    pub mu: f64,
    pub seed: u64,
    pub settings: JointSettings,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repetitions: 15,
            iterations: 20,
            mu: crate::spec::DEFAULT_TIMING_MU,
            seed: 0,
            settings: JointSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub n_ris: usize,
    pub n_elems: usize,
    /// Median over repetitions of the wall time per GPI iteration.
    pub median_secs: f64,
    pub samples: Vec<f64>,
    /// Fewer than two repetitions back the median.
    pub low_confidence: bool,
    /// Projected phases of the last timed run.
    #[serde(skip)]
    pub phases: PhaseShifts<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchTable {
    pub m_total: usize,
    pub points: Vec<BenchPoint>,
    /// Least-squares slope of `ln(median time)` against `ln L`; `None` with
    /// fewer than two distinct `L`.
    pub slope: Option<f64>,
}

impl BenchTable {
    pub fn ratio(&self, l_num: usize, l_den: usize) -> Option<f64> {
        let t = |l| self.points.iter().find(|p| p.n_ris == l).map(|p| p.median_secs);
        Some(t(l_num)? / t(l_den)?)
    }
}

struct Prepared {
    q: RisQuadratics<f64>,
    reg: RegularizerSettings,
    w0: CVec<f64>,
}

fn prepare(cfg: &SystemConfig, opts: &BenchOptions) -> gpipris_core::Result<Prepared> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let truth = ChannelSet::<f64>::synthesize(cfg, &mut rng)?;
    let est = estimate_channels(&truth, cfg, &mut rng)?;
    let nop = cfg.noise_over_power();
    let (f0, phi0) = initial_point(&est, nop, &opts.settings, &mut rng)?;
    let reg = opts.settings.rzf_loading(est.n_users(), nop);
    let (f, _) = gpi_for_phases(&est, &phi0, nop, reg, &opts.settings.precoder)?;
    let r_sigma = compute_r_sigma(&est, &f0, &phi0, nop)?;
    let mut reg = RegularizerSettings::new(opts.mu, r_sigma, cfg.n_phase());
    reg.alpha1 = opts.settings.alpha1;
    reg.alpha2 = opts.settings.alpha2;
    Ok(Prepared {
        q: build_ris_quadratics(&est, &f, nop)?,
        reg,
        w0: phi0.normalized(),
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Median wall time per phase-shift GPI iteration for each configuration.
///
/// Channels, the precoder and the quadratic forms are built outside the
/// clock. Repetitions cycle through all configurations in turn so slow drift
/// of the machine affects every `L` alike.
pub fn bench_ris_stage(cfgs: &[SystemConfig], opts: &BenchOptions) -> Result<BenchTable> {
    let Some(first) = cfgs.first() else {
        return Err(HarnessError::Spec("bench needs at least one configuration".into()));
    };
    let m_total = first.n_phase();
    if let Some(c) = cfgs.iter().find(|c| c.n_phase() != m_total) {
        return Err(HarnessError::Spec(format!(
            "bench configurations must share L M = {m_total}, got {}",
            c.n_phase()
        )));
    }
    if opts.repetitions == 0 || opts.iterations == 0 {
        return Err(HarnessError::Spec("bench needs at least one repetition and iteration".into()));
    }
    let prepared = cfgs.iter().map(|c| prepare(c, opts)).collect::<gpipris_core::Result<Vec<_>>>()?;
    let gpi = GpiSettings {
        tol: f64::MIN_POSITIVE,
        max_iters: opts.iterations,
    };
    let mut samples = vec![Vec::with_capacity(opts.repetitions); cfgs.len()];
    let mut phases: Vec<Option<PhaseShifts<f64>>> = vec![None; cfgs.len()];
    for _ in 0..opts.repetitions {
        for (i, p) in prepared.iter().enumerate() {
            let out = run_gpi_ris(&p.q, &p.reg, &p.w0, &gpi)?;
            // the loop runs one step before the first iteration
            samples[i].push(out.loop_secs / (out.iterations + 1) as f64);
            phases[i] = Some(out.phases);
        }
    }
    let points: Vec<BenchPoint> = cfgs
        .iter()
        .zip(samples)
        .zip(phases)
        .map(|((c, s), phi)| BenchPoint {
            n_ris: c.n_ris,
            n_elems: c.n_elems(),
            median_secs: median(&s),
            low_confidence: s.len() < 2,
            samples: s,
            phases: phi.expect("at least one repetition"),
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .map(|p| ((p.n_ris as f64).ln(), p.median_secs.ln()))
        .unzip();
    Ok(BenchTable {
        m_total,
        slope: fit_slope(&x, &y),
        points,
    })
}

/// Runs a `bench` spec: one configuration per `L` in the sweep.
pub fn bench_from_spec(spec: &ExperimentSpec, run: &RunOptions) -> Result<BenchTable> {
    spec.validate()?;
    if spec.kind != ExperimentKind::Bench {
        return Err(HarnessError::Spec(format!(
            "bench command needs kind bench, got {}",
            spec.kind.name()
        )));
    }
    let base = spec.load_base_config()?;
    let cfgs = spec
        .sweep_values
        .iter()
        .map(|&l| spec.point_config(&base, l))
        .collect::<Result<Vec<_>>>()?;
    let opts = BenchOptions {
        repetitions: spec.repetitions.unwrap_or(spec.n_seeds),
        iterations: spec.settings.ris.max_iters,
        mu: spec.fixed_mu.unwrap_or(crate::spec::DEFAULT_TIMING_MU),
        seed: run.seed.or(spec.seed).unwrap_or(base.rng_seed),
        settings: spec.settings,
    };
    bench_ris_stage(&cfgs, &opts)
}

/// Writes the timing table as CSV, replacing any previous file.
pub fn write_bench_csv(path: &std::path::Path, table: &BenchTable) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::output(path, e.to_string()))?;
    let fail = |e: csv::Error| HarnessError::output(path, e.to_string());
    w.write_record(["n_ris", "n_elems", "m_total", "median_secs", "n_samples", "low_confidence"])
        .map_err(fail)?;
    for p in &table.points {
        w.write_record([
            p.n_ris.to_string(),
            p.n_elems.to_string(),
            table.m_total.to_string(),
            format!("{:?}", p.median_secs),
            p.samples.len().to_string(),
            p.low_confidence.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x: Vec<f64> = [2.0f64, 4.0, 8.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [2.0f64, 4.0, 8.0].iter().map(|v| (3.0 * v.powi(-2)).ln()).collect();
        assert!((fit_slope(&x, &y).unwrap() + 2.0).abs() < 1e-12);
        assert!(fit_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
