//! Python bindings. Matrices go in and out as nested lists; reports come back
//! as plain dicts built from the same JSON the command line writes.

use markov_subgrad::analysis::{centralized_reference, estimate_transfer_norm, fit_decay, SearchBox, TransferPair};
use markov_subgrad::cli::{ConfigError, Connectivity, ExperimentConfig, ReferenceConfig};
use markov_subgrad::engine::{monte_carlo, Scenario};
use markov_subgrad::graph::{self, DEFAULT_STOCHASTIC_TOL};
use markov_subgrad::markov::{self, InitialState};
use markov_subgrad::schedule::{make_schedule, StepSchedule};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn invalid(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn numeric(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(numeric)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A validated doubly stochastic digraph.
#[pyclass(name = "Digraph", frozen)]
struct PyDigraph(graph::WeightedDigraph);

#[pymethods]
impl PyDigraph {
    #[new]
    #[pyo3(signature = (adjacency, tol = DEFAULT_STOCHASTIC_TOL))]
    fn new(adjacency: Vec<Vec<f64>>, tol: f64) -> PyResult<Self> {
        graph::validate_rows(&adjacency, tol).map(Self).map_err(invalid)
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.0.n_agents()
    }

    fn adjacency(&self) -> Vec<Vec<f64>> {
        rows(self.0.adjacency())
    }

    fn laplacian(&self) -> Vec<Vec<f64>> {
        rows(&graph::laplacian(&self.0))
    }

    /// Edges `(i, j)` with `a_ij > 0`, i.e. `j` sends to `i`.
    fn edges(&self) -> Vec<(usize, usize)> {
        self.0.edges().iter().copied().collect()
    }

    fn is_strongly_connected(&self) -> bool {
        graph::is_strongly_connected(&self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "Digraph(n_agents={}, edges={})",
            self.0.n_agents(),
            self.0.edges().len()
        )
    }
}

/// A validated irreducible switching chain.
#[pyclass(name = "MarkovChain", frozen)]
struct PyChain(markov::MarkovChain);

#[pymethods]
impl PyChain {
    /// `initial` is a state index, `"stationary"`, or a distribution.
    #[new]
    #[pyo3(signature = (transition, initial = None))]
    fn new(transition: Vec<Vec<f64>>, initial: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let initial = match initial {
            None => InitialState::default(),
            Some(v) => {
                if let Ok(i) = v.extract::<usize>() {
                    InitialState::Fixed(i)
                } else if let Ok(d) = v.extract::<Vec<f64>>() {
                    InitialState::Distribution(d)
                } else if v.extract::<String>()? == "stationary" {
                    InitialState::Stationary
                } else {
                    return Err(PyValueError::new_err(
                        "initial must be an index, \"stationary\" or a distribution",
                    ));
                }
            }
        };
        markov::validate_rows(&transition, initial).map(Self).map_err(invalid)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.0.n_states()
    }

    fn stationary_distribution(&self) -> PyResult<Vec<f64>> {
        markov::stationary_distribution(&self.0).map_err(numeric)
    }

    /// `theta(0), ..., theta(horizon)`.
    fn sample_path(&self, horizon: usize, seed: u64) -> Vec<usize> {
        markov::sample_path(&self.0, horizon, seed).states
    }
}

#[pyclass(name = "StepSchedule", frozen)]
struct PySchedule(StepSchedule);

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (a1 = 1.0, a2 = 1.0, delta1 = 0.3, delta2 = 0.9, strict = true))]
    fn new(a1: f64, a2: f64, delta1: f64, delta2: f64, strict: bool) -> PyResult<Self> {
        make_schedule(a1, a2, delta1, delta2, strict).map(Self).map_err(invalid)
    }

    fn alpha(&self, k: usize) -> f64 {
        self.0.alpha(k)
    }

    fn beta(&self, k: usize) -> f64 {
        self.0.beta(k)
    }

    fn step_sizes(&self, k: usize) -> (f64, f64) {
        self.0.step_sizes(k)
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }
}

/// An experiment config, as read by the command line.
#[pyclass(name = "Experiment")]
struct PyExperiment(ExperimentConfig);

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_json(text).map(Self).map_err(invalid)
    }

    #[staticmethod]
    fn example() -> Self {
        Self(markov_subgrad::cli::example5_config())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(numeric)
    }

    /// Validation errors as a list; empty when the config is usable.
    fn errors(&self) -> Vec<String> {
        match self.0.validate(Connectivity::Required) {
            Ok(_) => Vec::new(),
            Err(ConfigError::Invalid(list)) => list,
            Err(e) => vec![e.to_string()],
        }
    }

    /// Centralized reference `{x_star, f_star, ...}`.
    #[pyo3(signature = (low = None, high = None, grid = None, polish = None))]
    fn reference<'py>(
        &self,
        py: Python<'py>,
        low: Option<f64>,
        high: Option<f64>,
        grid: Option<usize>,
        polish: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = self.0.validate(Connectivity::Required).map_err(invalid)?;
        let (b, g, p) = match &self.0.reference {
            ReferenceConfig::Oracle {
                search_box,
                grid_pts,
                polish_iters,
            } => (*search_box, *grid_pts, *polish_iters),
            _ => (SearchBox::default(), 400, 100_000),
        };
        let b = SearchBox {
            low: low.unwrap_or(b.low),
            high: high.unwrap_or(b.high),
        };
        let r = py
            .detach(|| centralized_reference(&v.suite, b, grid.unwrap_or(g), polish.unwrap_or(p)))
            .map_err(numeric)?;
        to_py(py, &r)
    }

    /// Monte Carlo ensemble summary. Trajectories are returned when
    /// `trajectories` is true.
    #[pyo3(signature = (seed = None, runs = None, horizon = None, trajectories = false))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        seed: Option<u64>,
        runs: Option<usize>,
        horizon: Option<usize>,
        trajectories: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let c = &self.0;
        let v = c.validate(Connectivity::Required).map_err(invalid)?;
        let reference = markov_subgrad::cli::resolve_reference(c, &v).map_err(numeric)?;
        let scenario = Scenario {
            graphs: v.graphs,
            chain: v.chain,
            schedule: v.schedule,
            suite: v.suite,
            normalization: c.normalization,
            horizon: horizon.unwrap_or(c.horizon),
            log_stride: c.log_stride,
            reference,
            init: c.init.clone(),
            record_states: c.output.dump_states,
            record_path: c.output.dump_path,
        };
        let (seed, runs) = (seed.unwrap_or(c.seed), runs.unwrap_or(c.runs));
        let out = py
            .detach(|| monte_carlo(&scenario, seed, runs, c.tolerance))
            .map_err(numeric)?;
        let report = if trajectories {
            serde_json::json!({"summary": out.summary, "trajectories": out.trajectories})
        } else {
            serde_json::json!({"summary": out.summary})
        };
        to_py(py, &report)
    }

    /// Mean transfer-matrix norms for `Phi(k, s)` and the decay fit.
    #[pyo3(signature = (ks, s = 0, replications = 200, seed = None))]
    fn lemma1<'py>(
        &self,
        py: Python<'py>,
        ks: Vec<usize>,
        s: usize,
        replications: usize,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = self.0.validate(Connectivity::WarnOnly).map_err(invalid)?;
        let pairs = ks
            .iter()
            .map(|&k| TransferPair::new(k, s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(invalid)?;
        let seed = seed.unwrap_or(self.0.seed);
        let estimates = py
            .detach(|| estimate_transfer_norm(&v.chain, &v.graphs, &v.schedule, &pairs, replications, seed))
            .map_err(numeric)?;
        let fit = fit_decay(&estimates, &v.schedule).ok();
        to_py(
            py,
            &serde_json::json!({"estimates": estimates, "fit": fit, "warnings": v.warnings}),
        )
    }
}

/// The example graphs `A1, A2, A3` as nested lists.
#[pyfunction]
fn example_graphs() -> Vec<Vec<Vec<f64>>> {
    graph::example_adjacencies().to_vec()
}

#[pyfunction]
fn example_transition() -> Vec<Vec<f64>> {
    markov::example_transition()
}

#[pymodule]
fn markov_subgrad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDigraph>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(example_graphs, m)?)?;
    m.add_function(wrap_pyfunction!(example_transition, m)?)?;
    Ok(())
}
