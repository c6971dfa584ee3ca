//! Experiment configuration: one JSON document drives every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::SearchBox;
use crate::engine::{InitPolicy, LogStride};
use crate::graph::{self, GraphSet, DEFAULT_STOCHASTIC_TOL};
use crate::markov::{self, InitialState, MarkovChain};
use crate::objective::{build_example_suite, build_quadratic_suite, Normalization, ObjectiveSuite};
use crate::schedule::{make_schedule, StepSchedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{} validation error(s):\n  {}", .0.len(), .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub transition: Vec<Vec<f64>>,
    #[serde(default)]
    pub initial: InitialState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Example5,
    Quadratic { centers: Vec<Vec<f64>>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub a1: f64,
    pub a2: f64,
    pub delta1: f64,
    pub delta2: f64,
    #[serde(default = "yes")]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    #[default]
    None,
    ClosedForm,
    Oracle {
        #[serde(default)]
        search_box: SearchBox,
        #[serde(default = "default_grid")]
        grid_pts: usize,
        #[serde(default = "default_polish")]
        polish_iters: usize,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFiles {
    #[default]
    All,
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default)]
    pub trajectories: TrajectoryFiles,
    #[serde(default)]
    pub dump_states: bool,
    #[serde(default)]
    pub dump_path: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out(),
            trajectories: TrajectoryFiles::All,
            dump_states: false,
            dump_path: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma1Config {
    /// Final indices `k` of the decay study.
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    /// Common start index `s`.
    #[serde(default)]
    pub s: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Horizon of the dense study behind the truncated sums; 0 disables it.
    #[serde(default = "default_sum_horizon")]
    pub sum_horizon: usize,
    #[serde(default = "default_sum_replications")]
    pub sum_replications: usize,
}

impl Default for Lemma1Config {
    fn default() -> Self {
        Self {
            ks: default_ks(),
            s: 0,
            replications: default_replications(),
            sum_horizon: default_sum_horizon(),
            sum_replications: default_sum_replications(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Row-major adjacency matrices.
    pub graphs: Vec<Vec<Vec<f64>>>,
    #[serde(default = "default_graph_tol")]
    pub graph_tolerance: f64,
    pub chain: ChainConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub normalization: Normalization,
    pub step: StepConfig,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default)]
    pub log_stride: LogStride,
    #[serde(default)]
    pub reference: ReferenceConfig,
    /// Final consensus error counted as converged in ensemble summaries.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub lemma1: Lemma1Config,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn yes() -> bool {
    true
}
fn default_grid() -> usize {
    400
}
fn default_polish() -> usize {
    100_000
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}
fn default_ks() -> Vec<usize> {
    vec![10, 100, 1000, 10_000]
}
fn default_replications() -> usize {
    200
}
fn default_sum_horizon() -> usize {
    3000
}
fn default_sum_replications() -> usize {
    20
}
fn default_graph_tol() -> f64 {
    DEFAULT_STOCHASTIC_TOL
}
fn default_horizon() -> usize {
    1000
}
fn default_runs() -> usize {
    1
}
fn default_tolerance() -> f64 {
    0.05
}

/// Domain objects built from a config.
#[derive(Debug, Clone)]
pub struct Validated {
    pub graphs: GraphSet,
    pub chain: MarkovChain,
    pub schedule: StepSchedule,
    pub suite: ObjectiveSuite,
    /// Non-fatal findings.
    pub warnings: Vec<String>,
}

/// Whether a disconnected union graph is fatal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Required,
    /// Diagnostics may study graph sets that violate the assumption.
    WarnOnly,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    /// Builds every domain object, collecting all violations.
    pub fn validate(&self, connectivity: Connectivity) -> Result<Validated, ConfigError> {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();

        let mut graphs = Vec::new();
        for (i, rows) in self.graphs.iter().enumerate() {
            match graph::validate_rows(rows, self.graph_tolerance) {
                Ok(g) => graphs.push(g),
                Err(e) => errors.push(format!("graphs[{i}]: {e}")),
            }
        }
        if self.graphs.is_empty() {
            errors.push("graphs: at least one graph is required".into());
        }
        let graph_set = if graphs.len() == self.graphs.len() && !graphs.is_empty() {
            match GraphSet::new(graphs.clone()) {
                Ok(gs) => Some(gs),
                Err(e @ graph::GraphError::UnionNotStronglyConnected { .. })
                    if connectivity == Connectivity::WarnOnly =>
                {
                    warnings.push(format!("graphs: {e}"));
                    GraphSet::unchecked(graphs).ok()
                }
                Err(e) => {
                    errors.push(format!("graphs: {e}"));
                    None
                }
            }
        } else {
            None
        };

        let chain = match markov::validate_rows(&self.chain.transition, self.chain.initial.clone()) {
            Ok(c) => Some(c),
            Err(e) => {
                errors.push(format!("chain: {e}"));
                None
            }
        };
        if self.chain.transition.len() != self.graphs.len() {
            errors.push(format!(
                "chain states ≠ graph count ({} states, {} graphs)",
                self.chain.transition.len(),
                self.graphs.len()
            ));
        }

        let suite = match &self.objective {
            ObjectiveConfig::Example5 => Some(build_example_suite()),
            ObjectiveConfig::Quadratic { centers, weights } => match build_quadratic_suite(centers, weights) {
                Ok(s) => Some(s),
                Err(e) => {
                    errors.push(format!("objective: {e}"));
                    None
                }
            },
        };
        let n_agents = self.graphs.first().map(Vec::len);
        if let (Some(s), Some(n)) = (&suite, n_agents) {
            if s.len() != n {
                errors.push(format!("objective: {} local objectives for {n} agents", s.len()));
            }
        }

        let schedule = match make_schedule(
            self.step.a1,
            self.step.a2,
            self.step.delta1,
            self.step.delta2,
            self.step.strict,
        ) {
            Ok(s) => {
                warnings.extend(s.warnings.iter().cloned());
                Some(s)
            }
            Err(e) => {
                errors.push(format!("step: {e}"));
                None
            }
        };

        if let (InitPolicy::Explicit { rows }, Some(n), Some(s)) = (&self.init, n_agents, &suite) {
            if rows.len() != n || rows.iter().any(|r| r.len() != s.dim()) {
                errors.push(format!("init: explicit rows must be {n} x {}", s.dim()));
            }
        }
        if let InitPolicy::Uniform { low, high } = self.init {
            if !(low.is_finite() && high.is_finite() && low <= high) {
                errors.push(format!("init: invalid box [{low}, {high}]"));
            }
        }
        if let LogStride::Every(0) = self.log_stride {
            errors.push("log_stride: stride must be positive".into());
        }
        if self.runs == 0 {
            errors.push("runs: at least one run is required".into());
        }
        match (&self.reference, &self.objective) {
            (ReferenceConfig::ClosedForm, ObjectiveConfig::Example5) => {
                errors.push("reference: closed_form needs the quadratic objective".into())
            }
            (
                ReferenceConfig::Oracle {
                    search_box, grid_pts, ..
                },
                _,
            ) => {
                if search_box.low.partial_cmp(&search_box.high) != Some(std::cmp::Ordering::Less) || *grid_pts < 2 {
                    errors.push("reference: oracle needs low < high and grid_pts >= 2".into());
                }
                if let Some(s) = &suite {
                    if s.dim() > 3 {
                        errors.push(format!(
                            "reference: grid oracle supports n <= 3, objective has n = {}",
                            s.dim()
                        ));
                    }
                }
            }
            _ => {}
        }
        if self.lemma1.replications == 0 {
            errors.push("lemma1: replications must be positive".into());
        }
        if let Some(k) = self.lemma1.ks.iter().find(|&&k| k + 1 < self.lemma1.s) {
            errors.push(format!("lemma1: k = {k} is below s - 1 = {}", self.lemma1.s - 1));
        }
        if self.jobs == Some(0) {
            errors.push("jobs: must be positive".into());
        }

        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        Ok(Validated {
            graphs: graph_set.expect("no errors"),
            chain: chain.expect("no errors"),
            schedule: schedule.expect("no errors"),
            suite: suite.expect("no errors"),
            warnings,
        })
    }
}

/// Reads and parses a config file and checks it can drive a run.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config = ExperimentConfig::from_json(&text)?;
    config.validate(Connectivity::Required)?;
    Ok(config)
}

/// The five-agent example as a config.
pub fn example5_config() -> ExperimentConfig {
    ExperimentConfig {
        graphs: graph::example_adjacencies().to_vec(),
        graph_tolerance: DEFAULT_STOCHASTIC_TOL,
        chain: ChainConfig {
            transition: markov::example_transition(),
            initial: InitialState::Fixed(0),
        },
        objective: ObjectiveConfig::Example5,
        normalization: Normalization::Stacked,
        step: StepConfig {
            a1: 1.0,
            a2: 1.0,
            delta1: 0.3,
            delta2: 0.9,
            strict: true,
        },
        horizon: 100_000,
        runs: 100,
        seed: 7,
        init: InitPolicy::default(),
        log_stride: LogStride::default(),
        reference: ReferenceConfig::Oracle {
            search_box: SearchBox::default(),
            grid_pts: default_grid(),
            polish_iters: default_polish(),
        },
        tolerance: default_tolerance(),
        output: OutputConfig::default(),
        lemma1: Lemma1Config::default(),
        jobs: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "graphs": [[[0.5, 0.5], [0.5, 0.5]]],
            "chain": {"transition": [[1.0]]},
            "objective": {"kind": "quadratic", "centers": [[0.0], [2.0]], "weights": [1.0, 1.0]},
            "step": {"a1": 1.0, "a2": 1.0, "delta1": 0.3, "delta2": 0.9}
        })
    }

    #[test]
    fn defaults_are_filled() {
        let c = ExperimentConfig::from_json(&minimal().to_string()).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.runs, 1);
        assert_eq!(c.chain.initial, InitialState::Fixed(0));
        assert_eq!(c.reference, ReferenceConfig::None);
        assert!(c.step.strict);
        c.validate(Connectivity::Required).unwrap();
    }

    #[test]
    fn example_config_validates() {
        let v = example5_config().validate(Connectivity::Required).unwrap();
        assert_eq!((v.graphs.len(), v.graphs.n_agents()), (3, 5));
        assert!(v.warnings.is_empty());
    }

    #[test]
    fn chain_graph_count_mismatch() {
        let mut c = example5_config();
        c.graphs.pop();
        match c.validate(Connectivity::Required) {
            Err(ConfigError::Invalid(errs)) => assert!(
                errs.iter().any(|e| e.contains("chain states ≠ graph count")),
                "{errs:?}"
            ),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let mut c = example5_config();
        c.graphs[0][0][3] = 0.4;
        c.chain.transition = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        c.step.delta1 = 0.5;
        c.step.delta2 = 0.8;
        c.runs = 0;
        match c.validate(Connectivity::Required) {
            Err(ConfigError::Invalid(errs)) => {
                assert!(errs.len() >= 4, "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("RowSum") || e.contains("row 0 sums")));
                assert!(errs.iter().any(|e| e.contains("irreducible")));
                assert!(errs.iter().any(|e| e.contains("Gap")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_location() {
        match ExperimentConfig::from_json("{\n  \"graphs\": [,]\n}") {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let mut v = minimal();
        v["bogus"] = serde_json::json!(1);
        assert!(matches!(
            ExperimentConfig::from_json(&v.to_string()),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn disconnected_union_is_a_warning_for_diagnostics() {
        let mut v = minimal();
        v["graphs"] = serde_json::json!([[[1.0, 0.0], [0.0, 1.0]]]);
        let c = ExperimentConfig::from_json(&v.to_string()).unwrap();
        assert!(c.validate(Connectivity::Required).is_err());
        let ok = c.validate(Connectivity::WarnOnly).unwrap();
        assert_eq!(ok.warnings.len(), 1);
    }

    #[test]
    fn echo_round_trips() {
        let c = example5_config();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }
}
