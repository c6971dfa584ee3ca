//! CSV and JSON writers. Floats use 17 significant digits so every value
//! parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::CliError;
use crate::analysis::TransferEstimate;
use crate::engine::Trajectory;

pub const TRAJECTORY_COLUMNS: [&str; 6] = ["k", "alpha_k", "beta_k", "consensus_error", "dist_to_opt", "value_gap"];
pub const SUMMARY_FILE: &str = "summary.json";
pub const REFERENCE_FILE: &str = "reference.json";
pub const LEMMA1_REPORT_FILE: &str = "lemma1.json";
pub const LEMMA1_CURVE_FILE: &str = "lemma1_curve.csv";
pub const LEMMA1_INNER_FILE: &str = "lemma1_inner_sums.csv";

pub fn trajectory_file_name(replication: u64) -> String {
    format!("trajectory_{replication:04}.csv")
}

pub fn path_file_name(replication: u64) -> String {
    format!("switching_{replication:04}.csv")
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

/// Header for a trajectory file, with `x{agent}_{coord}` columns when states
/// are dumped.
pub fn trajectory_header(states: Option<(usize, usize)>) -> Vec<String> {
    let mut h: Vec<String> = TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()).collect();
    if let Some((n_agents, dim)) = states {
        for i in 0..n_agents {
            for c in 0..dim {
                h.push(format!("x{i}_{c}"));
            }
        }
    }
    h
}

pub fn trajectory_csv(t: &Trajectory, n_agents: usize, dim: usize) -> String {
    let header = trajectory_header(t.states.as_ref().map(|_| (n_agents, dim)));
    let mut out = header.join(",");
    out.push('\n');
    for (i, s) in t.samples.iter().enumerate() {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            s.k,
            fmt_f64(s.alpha_k),
            fmt_f64(s.beta_k),
            fmt_f64(s.consensus_error),
            fmt_opt(s.dist_to_opt),
            fmt_opt(s.value_gap)
        );
        if let Some(states) = &t.states {
            for v in &states[i] {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory_csv(path: &Path, t: &Trajectory, n_agents: usize, dim: usize) -> Result<(), CliError> {
    write_text(path, &trajectory_csv(t, n_agents, dim))
}

pub fn write_path_csv(path: &Path, states: &[usize]) -> Result<(), CliError> {
    let mut out = String::from("k,theta\n");
    for (k, s) in states.iter().enumerate() {
        let _ = writeln!(out, "{k},{s}");
    }
    write_text(path, &out)
}

pub fn write_lemma1_curve(path: &Path, estimates: &[TransferEstimate]) -> Result<(), CliError> {
    let mut out = String::from("k,s,replications,sum_alpha,mean_norm,log_mean_norm,half_width\n");
    for e in estimates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.k,
            e.s,
            e.replications,
            fmt_f64(e.sum_alpha),
            fmt_f64(e.mean_norm),
            fmt_f64(e.log_mean_norm),
            fmt_opt(e.half_width)
        );
    }
    write_text(path, &out)
}

pub fn write_inner_sums(path: &Path, sums: &[f64]) -> Result<(), CliError> {
    let mut out = String::from("k,inner_sum\n");
    for (k, v) in sums.iter().enumerate() {
        let _ = writeln!(out, "{k},{}", fmt_f64(*v));
    }
    write_text(path, &out)
}

/// Parsed CSV: header plus rows with empty fields as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn parse_csv(text: &str) -> Result<Table, String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or("empty file")?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some)
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", n + 2))?;
        if row.len() != header.len() {
            return Err(format!(
                "line {}: {} fields, header has {}",
                n + 2,
                row.len(),
                header.len()
            ));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}
