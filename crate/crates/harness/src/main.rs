use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpipris_harness::bench::write_bench_csv;
use gpipris_harness::output::{append_rows, jsonl_path};
use gpipris_harness::{bench_from_spec, load_config, run_experiment, ExperimentSpec, RunOptions};

#[derive(Parser)]
#[command(name = "gpipris", version, about = "Multi-RIS MU-MIMO beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// First seed, overriding the spec and the base configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV path, overriding the spec's output_path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep and append its rows to CSV and JSON lines.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Time the phase-shift stage over L at fixed L M.
    Bench {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check a scenario configuration or an experiment spec.
    Validate { path: PathBuf },
}

fn run(spec_path: PathBuf, common: Common) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let spec = ExperimentSpec::from_file(&spec_path)?;
    let opts = RunOptions {
        seed: common.seed,
        threads: common.threads,
    };
    let table = run_experiment(&spec, &opts)?;
    let out = common.out.unwrap_or_else(|| spec.output_path.clone());
    append_rows(&out, &table.rows)?;
    println!("{:>12} {:>11} {:>4} {:>4} {:>10} {:>10} {:>10} {:>12}", "sweep", "scheme", "ok", "err", "lb_se", "exact_se", "nmse", "ris_s/iter");
    for c in table.summary() {
        println!(
            "{:>12} {:>11} {:>4} {:>4} {:>10.4} {:>10.4} {:>10.2e} {:>12.3e}",
            c.sweep_value,
            c.scheme.name(),
            c.n_ok,
            c.n_failed,
            c.mean_lower_bound_se,
            c.mean_exact_se,
            c.mean_nmse,
            c.mean_ris_secs_per_iteration
        );
    }
    for r in table.rows.iter().filter(|r| !r.is_ok()) {
        eprintln!(
            "seed {} sweep {} {}: {}",
            r.seed,
            r.sweep_value,
            r.scheme.name(),
            r.error.as_deref().unwrap_or_default()
        );
    }
    println!("wrote {} rows to {} and {}", table.rows.len(), out.display(), jsonl_path(&out).display());
    Ok(if table.every_point_succeeded(&spec.sweep_values) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn bench(spec_path: PathBuf, common: Common) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let spec = ExperimentSpec::from_file(&spec_path)?;
    let opts = RunOptions {
        seed: common.seed,
        threads: common.threads,
    };
    let table = bench_from_spec(&spec, &opts)?;
    let out = common.out.unwrap_or_else(|| spec.output_path.clone());
    write_bench_csv(&out, &table)?;
    println!("M_tot = {}", table.m_total);
    println!("{:>4} {:>4} {:>14} {:>5}", "L", "M", "median_s/iter", "reps");
    for p in &table.points {
        let flag = if p.low_confidence { "  (low confidence)" } else { "" };
        println!("{:>4} {:>4} {:>14.4e} {:>5}{flag}", p.n_ris, p.n_elems, p.median_secs, p.samples.len());
    }
    match table.slope {
        Some(s) => println!("log-log slope of time vs L: {s:.3}"),
        None => println!("log-log slope of time vs L: n/a"),
    }
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn validate(path: PathBuf) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let is_spec = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("kind").cloned())
        .is_some();
    if is_spec {
        let spec = ExperimentSpec::from_file(&path)?;
        spec.load_base_config()?;
        println!(
            "ok: {} spec, {} sweep values x {} seeds",
            spec.kind.name(),
            spec.sweep_values.len(),
            spec.n_seeds
        );
    } else {
        let cfg = load_config(&path)?;
        println!(
            "ok: N={} K={} L={} M={} ({}x{}) P={} dBm",
            cfg.n_bs_antennas,
            cfg.n_users,
            cfg.n_ris,
            cfg.n_elems(),
            cfg.ris_elems_y,
            cfg.ris_elems_z,
            cfg.tx_power_dbm
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { spec, common } => run(spec, common),
        Command::Bench { spec, common } => bench(spec, common),
        Command::Validate { path } => validate(path),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
