//! Independent replications of a scenario and their aggregate statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{mean_state, run, EngineError, Scenario, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("at least one run is required")]
    NoRuns,
    #[error("invalid scenario: {0}")]
    Scenario(EngineError),
    #[error("{} run(s) failed, first: run {}: {}", .0.len(), .0[0].0, .0[0].1)]
    RunsFailed(Vec<(usize, EngineError)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFinal {
    pub run: usize,
    pub consensus_error: f64,
    pub dist_to_opt: Option<f64>,
    pub value_gap: Option<f64>,
    pub mean_state: Vec<f64>,
    pub switch_path_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Self {
            min: v[0],
            median,
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub consensus_error: Spread,
    pub dist_to_opt: Option<Spread>,
    pub value_gap: Option<Spread>,
    /// Largest distance between two runs' final mean states.
    pub max_pairwise_mean_distance: f64,
    pub tolerance: f64,
    /// Runs whose final consensus error is below `tolerance`.
    pub runs_within_tolerance: usize,
    /// `(k, median consensus error)` at every logged iteration.
    pub median_consensus_by_k: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub master_seed: u64,
    pub runs: Vec<RunFinal>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub summary: EnsembleSummary,
    pub trajectories: Vec<Trajectory>,
}

/// Runs `runs` replications; replication `r` draws its initial state and
/// switching path from substreams `(master_seed, r)`. Results are indexed by
/// run, so the outcome does not depend on scheduling.
pub fn monte_carlo(
    scenario: &Scenario,
    master_seed: u64,
    runs: usize,
    tolerance: f64,
) -> Result<EnsembleOutcome, EnsembleError> {
    if runs == 0 {
        return Err(EnsembleError::NoRuns);
    }
    scenario.validate().map_err(EnsembleError::Scenario)?;
    let (n_agents, dim) = (scenario.graphs.n_agents(), scenario.suite.dim());
    let results: Vec<Result<Trajectory, EngineError>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let init = scenario.init.sample(n_agents, dim, master_seed, r as u64)?;
            run(scenario, init, master_seed, r as u64)
        })
        .collect();

    let mut trajectories = Vec::with_capacity(runs);
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(t) => trajectories.push(t),
            Err(e) => failures.push((r, e)),
        }
    }
    if !failures.is_empty() {
        return Err(EnsembleError::RunsFailed(failures));
    }
    Ok(EnsembleOutcome {
        summary: summarize(&trajectories, master_seed, tolerance),
        trajectories,
    })
}

fn summarize(trajectories: &[Trajectory], master_seed: u64, tolerance: f64) -> EnsembleSummary {
    let runs: Vec<RunFinal> = trajectories
        .iter()
        .enumerate()
        .map(|(run, t)| {
            let last = t.last();
            RunFinal {
                run,
                consensus_error: last.consensus_error,
                dist_to_opt: last.dist_to_opt,
                value_gap: last.value_gap,
                mean_state: mean_state(&t.final_state),
                switch_path_digest: t.switch_path_digest.clone(),
            }
        })
        .collect();

    let mut max_pairwise: f64 = 0.0;
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            let d = a
                .mean_state
                .iter()
                .zip(&b.mean_state)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            max_pairwise = max_pairwise.max(d);
        }
    }

    let median_consensus_by_k = trajectories[0]
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let spread = Spread::of(trajectories.iter().map(|t| t.samples[i].consensus_error)).expect("non-empty");
            (s.k, spread.median)
        })
        .collect();

    let aggregates = Aggregates {
        consensus_error: Spread::of(runs.iter().map(|r| r.consensus_error)).expect("non-empty"),
        dist_to_opt: Spread::of(runs.iter().filter_map(|r| r.dist_to_opt)),
        value_gap: Spread::of(runs.iter().filter_map(|r| r.value_gap)),
        max_pairwise_mean_distance: max_pairwise,
        tolerance,
        runs_within_tolerance: runs.iter().filter(|r| r.consensus_error < tolerance).count(),
        median_consensus_by_k,
    };
    EnsembleSummary {
        master_seed,
        runs,
        aggregates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Reference;
    use crate::engine::{InitPolicy, LogStride};
    use crate::graph::{example_graph_set, union_graph, GraphSet};
    use crate::markov::{example_transition, validate_rows, InitialState};
    use crate::objective::{build_example_suite, build_quadratic_suite, Normalization};
    use crate::schedule::StepSchedule;

    fn scenario(horizon: usize) -> Scenario {
        Scenario {
            graphs: example_graph_set(),
            chain: validate_rows(&example_transition(), InitialState::Fixed(0)).unwrap(),
            schedule: StepSchedule::example(),
            suite: build_example_suite(),
            normalization: Normalization::Stacked,
            horizon,
            log_stride: LogStride::default(),
            reference: None,
            init: InitPolicy::default(),
            record_states: false,
            record_path: false,
        }
    }

    #[test]
    fn spread_median() {
        let s = Spread::of([3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.min, s.median, s.max), (1.0, 2.0, 3.0));
        assert_eq!(Spread::of([4.0, 1.0]).unwrap().median, 2.5);
        assert!(Spread::of(Vec::<f64>::new()).is_none());
    }

    #[test]
    fn single_run_summary_is_that_run() {
        let sc = scenario(200);
        let out = monte_carlo(&sc, 5, 1, 0.05).unwrap();
        let t = &out.trajectories[0];
        let r = &out.summary.runs[0];
        assert_eq!(r.consensus_error, t.last().consensus_error);
        assert_eq!(out.summary.aggregates.consensus_error.median, r.consensus_error);
        assert_eq!(out.summary.aggregates.max_pairwise_mean_distance, 0.0);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let sc = scenario(300);
        let a = monte_carlo(&sc, 17, 6, 0.05).unwrap().summary;
        let b = monte_carlo(&sc, 17, 6, 0.05).unwrap().summary;
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| monte_carlo(&sc, 17, 6, 0.05).unwrap().summary);
        assert_eq!(a, c);
        let d = monte_carlo(&sc, 18, 6, 0.05).unwrap().summary;
        assert_ne!(a.runs[0].switch_path_digest, d.runs[0].switch_path_digest);
    }

    #[test]
    fn failures_are_collected_by_run() {
        let mut sc = scenario(50);
        sc.schedule = crate::schedule::make_schedule(1.0, 1e308, 0.3, 0.9, true).unwrap();
        sc.normalization = Normalization::Off;
        match monte_carlo(&sc, 1, 3, 0.05) {
            Err(EnsembleError::RunsFailed(f)) => assert_eq!(f.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]),
            other => panic!("{other:?}"),
        }
        assert_eq!(monte_carlo(&sc, 1, 0, 0.05).unwrap_err(), EnsembleError::NoRuns);
    }

    #[test]
    fn quadratic_single_graph_converges() {
        let centers = vec![
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![-1.0, 1.0],
            vec![2.0, -1.0],
            vec![0.5, 0.5],
        ];
        let suite = build_quadratic_suite(&centers, &[1.0; 5]).unwrap();
        let xstar = suite.closed_form_minimizer().unwrap().to_vec();
        let mut sc = scenario(20_000);
        sc.graphs = GraphSet::new(vec![union_graph(&example_graph_set())]).unwrap();
        sc.chain = validate_rows(&[vec![1.0]], InitialState::Fixed(0)).unwrap();
        sc.reference = Some(Reference::exact(&suite, xstar));
        sc.suite = suite;
        sc.normalization = Normalization::Off;
        let out = monte_carlo(&sc, 2, 2, 0.05).unwrap();
        assert!(out.summary.aggregates.dist_to_opt.unwrap().max < 0.02);
        assert_eq!(out.summary.aggregates.runs_within_tolerance, 2);
    }
}
