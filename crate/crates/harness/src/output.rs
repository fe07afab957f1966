//! CSV results with a JSON-lines mirror next to them.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::experiment::ResultRow;

pub const CSV_HEADER: [&str; 16] = [
    "experiment",
    "seed",
    "sweep_value",
    "scheme",
    "lower_bound_se",
    "exact_se",
    "mc_se",
    "nmse",
    "selected_mu",
    "iterations",
    "converged",
    "precoder_secs",
    "ris_secs",
    "ris_iterations",
    "total_secs",
    "error",
];

/// Columns that depend on the machine's clock rather than the seed.
pub const TIMING_COLUMNS: [&str; 3] = ["precoder_secs", "ris_secs", "total_secs"];

/// Shortest round-trip form, in exponent notation for extreme magnitudes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record(r: &ResultRow) -> [String; 16] {
    [
        r.experiment.clone(),
        r.seed.to_string(),
        num(r.sweep_value),
        r.scheme.name().to_string(),
        opt_num(r.lower_bound_se),
        opt_num(r.exact_se),
        opt_num(r.mc_se),
        opt_num(r.nmse),
        opt_num(r.selected_mu),
        opt(r.iterations),
        opt(r.converged),
        num(r.precoder_secs),
        num(r.ris_secs),
        r.ris_iterations.to_string(),
        num(r.total_secs),
        r.error.clone().unwrap_or_default(),
    ]
}

type RowKey = (String, String, String, String);

fn key(r: &ResultRow) -> RowKey {
    (
        r.experiment.clone(),
        r.seed.to_string(),
        num(r.sweep_value),
        r.scheme.name().to_string(),
    )
}

/// The JSON-lines mirror: `results.csv` -> `results.jsonl`.
pub fn jsonl_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("jsonl")
}

fn existing_keys(path: &Path) -> Result<HashSet<RowKey>> {
    let mut keys = HashSet::new();
    let nonempty = std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    if !nonempty {
        return Ok(keys);
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::output(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| HarnessError::output(path, e.to_string()))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(HarnessError::output(path, "existing file has a different header"));
    }
    for rec in reader.records() {
        let rec = rec.map_err(|e| HarnessError::output(path, e.to_string()))?;
        keys.insert((rec[0].to_string(), rec[1].to_string(), rec[2].to_string(), rec[3].to_string()));
    }
    Ok(keys)
}

/// Appends rows to the CSV (writing the header to a new file) and to its
/// JSON-lines mirror. Rows whose (experiment, seed, sweep value, scheme) key
/// is already present are refused before anything is written.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut seen = existing_keys(path)?;
    for r in rows {
        let k = key(r);
        if !seen.insert(k.clone()) {
            return Err(HarnessError::output(
                path,
                format!("duplicate row for experiment {} seed {} sweep value {} scheme {}", k.0, k.1, k.2, k.3),
            ));
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER).map_err(|e| HarnessError::output(path, e.to_string()))?;
    }
    for r in rows {
        w.write_record(record(r)).map_err(|e| HarnessError::output(path, e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;

    let jpath = jsonl_path(path);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&jpath)
        .map_err(|e| HarnessError::io(&jpath, e))?;
    let mut jw = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut jw, r).map_err(|e| HarnessError::output(&jpath, e.to_string()))?;
        jw.write_all(b"\n").map_err(|e| HarnessError::io(&jpath, e))?;
    }
    jw.flush().map_err(|e| HarnessError::io(&jpath, e))?;
    Ok(())
}

/// Reads rows back from a JSON-lines mirror.
pub fn read_jsonl(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::parse(path, &e)))
        .collect()
}
