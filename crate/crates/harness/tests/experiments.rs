use std::path::Path;

use gpipris_core::joint::JointSettings;
use gpipris_core::scenario::SystemConfig;
use gpipris_harness::output::{append_rows, read_jsonl, CSV_HEADER, TIMING_COLUMNS};
use gpipris_harness::{
    bench_ris_stage, run_experiment, run_point, BenchOptions, ConfigSource, ExperimentKind, ExperimentSpec, HarnessError,
    PointContext, ResultRow, RunOptions, Scheme,
};

fn small_config() -> SystemConfig {
    let mut c = SystemConfig::default().with_ris_elems(2, 2);
    c.n_bs_antennas = 4;
    c.n_users = 2;
    c.ul_train_len = 8;
    c
}

fn small_spec(kind: ExperimentKind, values: Vec<f64>, n_seeds: usize) -> ExperimentSpec {
    let mut settings = JointSettings::default();
    settings.outer_max_iters = 5;
    ExperimentSpec {
        id: None,
        kind,
        sweep_values: values,
        n_seeds,
        base_config: ConfigSource::Inline(Box::new(small_config())),
        output_path: "unused.csv".into(),
        seed: Some(7),
        plan: gpipris_core::joint::LineSearchPlan {
            mu_min: 0.0,
            mu_max: 10.0,
            n_points: 3,
        },
        settings,
        fixed_mu: None,
        m_total: None,
        mc_draws: None,
        schemes: None,
        repetitions: None,
    }
}

/// Row content with the clock-dependent fields cleared.
fn stripped(rows: &[ResultRow]) -> Vec<ResultRow> {
    rows.iter()
        .map(|r| ResultRow {
            precoder_secs: 0.0,
            ris_secs: 0.0,
            total_secs: 0.0,
            ..r.clone()
        })
        .collect()
}

#[test]
fn power_sweep_cardinality_and_order() {
    let spec = small_spec(ExperimentKind::PowerSweep, vec![0.0, 10.0, 20.0], 2);
    let table = run_experiment(&spec, &RunOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 3 * 2 * 3);
    let mut expect = Vec::new();
    for v in [0.0, 10.0, 20.0] {
        for seed in [7, 8] {
            for s in Scheme::ALL {
                expect.push((v, seed, s));
            }
        }
    }
    let got: Vec<(f64, u64, Scheme)> = table.rows.iter().map(|r| (r.sweep_value, r.seed, r.scheme)).collect();
    assert_eq!(got, expect);
    assert!(table.rows.iter().all(|r| r.is_ok() && r.is_finite()));
    assert!(table.every_point_succeeded(&spec.sweep_values));
    assert!(table.rows.iter().all(|r| r.experiment == "power_sweep"));
}

#[test]
fn deterministic_across_runs_and_thread_counts() {
    let spec = small_spec(ExperimentKind::CsitSweep, vec![-10.0, 10.0], 3);
    let a = run_experiment(&spec, &RunOptions { seed: None, threads: Some(1) }).unwrap();
    let b = run_experiment(&spec, &RunOptions { seed: None, threads: Some(3) }).unwrap();
    assert_eq!(stripped(&a.rows), stripped(&b.rows));
    let c = run_experiment(&spec, &RunOptions { seed: Some(100), threads: None }).unwrap();
    assert_eq!(c.rows[0].seed, 100);
    assert_ne!(a.rows[0].lower_bound_se, c.rows[0].lower_bound_se);
}

#[test]
fn mu_study_runs_fixed_mu_only() {
    let spec = small_spec(ExperimentKind::MuStudy, vec![0.0, 50.0], 2);
    let table = run_experiment(&spec, &RunOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 4);
    for r in &table.rows {
        assert_eq!(r.scheme, Scheme::GpiPris);
        assert_eq!(r.selected_mu, Some(r.sweep_value));
        assert!(r.nmse.unwrap() >= 0.0);
    }
}

#[test]
fn convergence_rows_carry_traces() {
    let spec = small_spec(ExperimentKind::Convergence, vec![20.0], 2);
    let table = run_experiment(&spec, &RunOptions::default()).unwrap();
    for r in &table.rows {
        assert_eq!(r.trace.len(), r.iterations.unwrap());
        assert_eq!(r.trace.iter().cloned().fold(f64::MIN, f64::max), r.lower_bound_se.unwrap());
    }
}

#[test]
fn scalability_uses_fixed_total_elements() {
    let mut spec = small_spec(ExperimentKind::Scalability, vec![1.0, 2.0, 4.0], 1);
    spec.m_total = Some(8);
    let table = run_experiment(&spec, &RunOptions::default()).unwrap();
    assert!(table.rows.iter().all(|r| r.is_ok()));
    let summary = table.summary();
    assert_eq!(summary.len(), 3 * 3);
    let pris: Vec<_> = summary.iter().filter(|c| c.scheme == Scheme::GpiPris).collect();
    assert!(pris.iter().all(|c| c.mean_ris_secs_per_iteration > 0.0));
    assert!(pris.iter().all(|c| c.mean_lower_bound_se.is_finite()));
}

#[test]
fn bench_kind_rejected_by_run() {
    let mut spec = small_spec(ExperimentKind::Bench, vec![1.0, 2.0], 1);
    spec.m_total = Some(8);
    assert!(matches!(run_experiment(&spec, &RunOptions::default()), Err(HarnessError::Spec(_))));
}

#[test]
fn algorithm_failures_become_error_rows() {
    let cfg = small_config();
    let settings = JointSettings {
        rzf_regularizer: Some(0.0),
        ..JointSettings::default()
    };
    let ctx = PointContext {
        experiment: "broken",
        sweep_value: 1.0,
        seed: 3,
        plan: gpipris_core::joint::LineSearchPlan::single(0.0),
        settings: &settings,
        mc_draws: None,
        record_trace: false,
    };
    let rows = run_point(&ctx, &cfg, &Scheme::ALL);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| !r.is_ok() && r.lower_bound_se.is_none()));
    assert!(rows[0].error.as_ref().unwrap().contains("regularizer"));
}

#[test]
fn csv_append_and_jsonl_mirror() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("out.csv");
    let mut spec = small_spec(ExperimentKind::PowerSweep, vec![10.0], 2);
    spec.mc_draws = Some(50);
    let table = run_experiment(&spec, &RunOptions::default()).unwrap();
    append_rows(&path, &table.rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(text.lines().count(), 1 + table.rows.len());
    assert_eq!(read_jsonl(&path.with_extension("jsonl")).unwrap(), table.rows);
    assert!(table.rows.iter().all(|r| r.mc_se.is_some()));

    // same keys again are refused and nothing is appended
    assert!(append_rows(&path, &table.rows).is_err());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);

    // a different seed range appends below the existing header
    let more = run_experiment(&spec, &RunOptions { seed: Some(50), threads: None }).unwrap();
    append_rows(&path, &more.rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * table.rows.len());
    assert_eq!(text.matches("experiment,seed").count(), 1);
}

#[test]
fn foreign_header_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    let spec = small_spec(ExperimentKind::PowerSweep, vec![10.0], 1);
    let table = run_experiment(&spec, &RunOptions::default()).unwrap();
    assert!(append_rows(&path, &table.rows).is_err());
}

fn numeric_columns(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !TIMING_COLUMNS.contains(&header[i].as_str()))
        .collect();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            keep.iter().map(|&i| r[i].to_string()).collect()
        })
        .collect()
}

#[test]
fn rerun_reproduces_numeric_columns_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(ExperimentKind::AntennasSweep, vec![2.0, 4.0], 2);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    append_rows(&a, &run_experiment(&spec, &RunOptions::default()).unwrap().rows).unwrap();
    append_rows(&b, &run_experiment(&spec, &RunOptions { seed: None, threads: Some(2) }).unwrap().rows).unwrap();
    assert_eq!(numeric_columns(&a), numeric_columns(&b));
}

#[test]
fn bench_reports_slope_and_low_confidence() {
    let cfgs: Vec<SystemConfig> = [1usize, 2, 4]
        .iter()
        .map(|&l| {
            let (my, mz) = gpipris_harness::spec::split_elems(8 / l);
            small_config().with_n_ris(l).with_ris_elems(my, mz)
        })
        .collect();
    let opts = BenchOptions {
        repetitions: 1,
        iterations: 3,
        ..BenchOptions::default()
    };
    let table = bench_ris_stage(&cfgs, &opts).unwrap();
    assert_eq!(table.m_total, 8);
    assert_eq!(table.points.len(), 3);
    assert!(table.points.iter().all(|p| p.low_confidence && p.samples.len() == 1 && p.median_secs > 0.0));
    assert!(table.slope.unwrap().is_finite());
    for p in &table.points {
        assert!(p.phases.max_modulus_error() <= gpipris_harness::experiment::MODULUS_TOL);
    }

    let opts = BenchOptions {
        repetitions: 3,
        iterations: 3,
        ..BenchOptions::default()
    };
    assert!(bench_ris_stage(&cfgs, &opts).unwrap().points.iter().all(|p| !p.low_confidence));

    let mut mixed = cfgs.clone();
    mixed.push(small_config().with_n_ris(1).with_ris_elems(3, 3));
    assert!(bench_ris_stage(&mixed, &opts).is_err());
}
