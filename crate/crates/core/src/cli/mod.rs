//! Command-line front end: `run`, `lemma1` and `reference`, all driven by one
//! JSON experiment config.

mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

pub use commands::{cmd_lemma1, cmd_reference, cmd_run, resolve_reference, Lemma1Args, ReferenceArgs};
pub use config::{
    example5_config, parse_config, ConfigError, Connectivity, ExperimentConfig, ReferenceConfig, Validated,
};

use crate::engine::LogStride;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad input, 3 for numeric trouble, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Output { .. } => 1,
        }
    }
}

/// Flags that take precedence over config fields. Echoed in every output.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for replications.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// `N`, `every:N`, `geometric` or `geometric:P` (P points per decade).
    #[arg(long, value_parser = parse_log_stride)]
    pub log_stride: Option<LogStride>,
    /// Adds one column per agent coordinate to trajectory CSVs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump_states: Option<bool>,
    /// `false` accepts step exponents outside the admissible region with a warning.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub strict_steps: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, config: &ExperimentConfig) -> ExperimentConfig {
        let mut c = config.clone();
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.runs {
            c.runs = v;
        }
        if let Some(v) = self.horizon {
            c.horizon = v;
        }
        if let Some(v) = &self.out {
            c.output.dir = v.clone();
        }
        if self.jobs.is_some() {
            c.jobs = self.jobs;
        }
        if let Some(v) = self.log_stride {
            c.log_stride = v;
        }
        if let Some(v) = self.dump_states {
            c.output.dump_states = v;
        }
        if let Some(v) = self.strict_steps {
            c.step.strict = v;
        }
        c
    }
}

pub fn parse_log_stride(s: &str) -> Result<LogStride, String> {
    let bad = || format!("invalid log stride {s:?}: expected N, every:N, geometric or geometric:P");
    let positive = |t: &str| t.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
    match s.split_once(':') {
        None if s == "geometric" => Ok(LogStride::default()),
        None => positive(s).map(LogStride::Every),
        Some(("every", n)) => positive(n).map(LogStride::Every),
        Some(("geometric", p)) => positive(p).map(|per_decade| LogStride::Geometric { per_decade }),
        Some(_) => Err(bad()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "markov-subgrad",
    version,
    about = "Consensus subgradient simulations over Markovian switching digraphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo ensemble of the distributed iteration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Transfer-matrix decay and summability study.
    Lemma1 {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        study: Lemma1Args,
    },
    /// Centralized grid + polish solution of the global objective.
    Reference {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        search: ReferenceArgs,
    },
}

/// Parses `args` (program name first), dispatches, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run { config, overrides } => load(config).and_then(|c| cmd_run(&c, overrides)),
        Command::Lemma1 {
            config,
            overrides,
            study,
        } => load_unchecked(config).and_then(|c| cmd_lemma1(&c, overrides, study)),
        Command::Reference {
            config,
            overrides,
            search,
        } => load(config).and_then(|c| cmd_reference(&c, overrides, search)),
    };
    match result {
        Ok(path) => {
            eprintln!("wrote {}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(path: &std::path::Path) -> Result<ExperimentConfig, CliError> {
    Ok(parse_config(path)?)
}

/// Parses without validating; `lemma1` validates with relaxed connectivity.
fn load_unchecked(path: &std::path::Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ExperimentConfig::from_json(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_stride_forms() {
        assert_eq!(parse_log_stride("100"), Ok(LogStride::Every(100)));
        assert_eq!(parse_log_stride("every:5"), Ok(LogStride::Every(5)));
        assert_eq!(parse_log_stride("geometric"), Ok(LogStride::default()));
        assert_eq!(
            parse_log_stride("geometric:4"),
            Ok(LogStride::Geometric { per_decade: 4 })
        );
        for bad in ["0", "every:0", "fast", "geometric:x", "every:"] {
            assert!(parse_log_stride(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn flags_parse_and_apply() {
        let cli = Cli::try_parse_from([
            "markov-subgrad",
            "run",
            "--config",
            "x.cfg",
            "--seed",
            "9",
            "--runs",
            "3",
            "--dump-states",
            "--strict-steps",
            "false",
            "--log-stride",
            "every:10",
        ])
        .unwrap();
        let Command::Run { overrides, .. } = cli.command else {
            panic!()
        };
        let c = overrides.apply(&example5_config());
        assert_eq!((c.seed, c.runs), (9, 3));
        assert!(c.output.dump_states);
        assert!(!c.step.strict);
        assert_eq!(c.log_stride, LogStride::Every(10));
        assert_eq!(Overrides::default().apply(&example5_config()), example5_config());
    }

    #[test]
    fn missing_config_is_exit_2() {
        assert_eq!(
            main_with_args(["markov-subgrad", "run", "--config", "/nonexistent/x.cfg"]),
            2
        );
        assert_eq!(main_with_args(["markov-subgrad", "bogus"]), 2);
    }
}
