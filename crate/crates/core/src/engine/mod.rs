//! The consensus subgradient iteration
//!
//! ```text
//! x_i(k+1) = x_i(k) + alpha_k sum_j a_ij(k) (x_j(k) - x_i(k)) - beta_k d_i(k)
//! ```
//!
//! with `a_ij(k)` taken from the graph selected by the Markov switching
//! signal at iteration `k`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Reference;
use crate::graph::{laplacian, GraphSet, WeightedDigraph};
use crate::markov::{MarkovChain, PathDigest};
use crate::objective::{normalize_in_place, Normalization, ObjectiveSuite, NORM_EPS};
use crate::rng::{self, Purpose};
use crate::schedule::StepSchedule;

mod ensemble;

pub use ensemble::{monte_carlo, Aggregates, EnsembleError, EnsembleOutcome, EnsembleSummary, RunFinal, Spread};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("non-finite state for agent {agent} after iteration {iteration}")]
    NonFiniteState { iteration: usize, agent: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Agent estimates stored row-major: row `i` is `x_i(k)`. The flat buffer is
/// the stacked vector `X(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    n_agents: usize,
    dim: usize,
    values: Vec<f64>,
    pub iteration: usize,
}

impl AgentState {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EngineError> {
        let n_agents = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if n_agents == 0 || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(EngineError::DimensionMismatch(
                "agent rows must be non-empty and of equal length".into(),
            ));
        }
        Ok(Self {
            n_agents,
            dim,
            values: rows.concat(),
            iteration: 0,
        })
    }

    pub fn from_stacked(n_agents: usize, dim: usize, values: Vec<f64>) -> Result<Self, EngineError> {
        if values.len() != n_agents * dim || n_agents == 0 || dim == 0 {
            return Err(EngineError::DimensionMismatch(format!(
                "{} values for {n_agents} agents of dimension {dim}",
                values.len()
            )));
        }
        Ok(Self {
            n_agents,
            dim,
            values,
            iteration: 0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn stacked(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}

/// Result of one iteration, with the (possibly normalized) subgradients that
/// were actually applied.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: AgentState,
    pub subgradients: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

fn check_dims(state: &AgentState, graph: &WeightedDigraph, suite: &ObjectiveSuite) -> Result<(), EngineError> {
    if graph.n_agents() != state.n_agents || suite.len() != state.n_agents {
        return Err(EngineError::DimensionMismatch(format!(
            "state has {} agents, graph {}, suite {}",
            state.n_agents,
            graph.n_agents(),
            suite.len()
        )));
    }
    if suite.dim() != state.dim {
        return Err(EngineError::DimensionMismatch(format!(
            "state dimension {} but oracle dimension {}",
            state.dim,
            suite.dim()
        )));
    }
    Ok(())
}

/// Evaluates every agent's subgradient at its own estimate into `d`.
pub(crate) fn local_subgradients(
    state: &AgentState,
    suite: &ObjectiveSuite,
    normalization: Normalization,
    d: &mut [f64],
) {
    let n = state.dim;
    for (i, chunk) in d.chunks_exact_mut(n).enumerate() {
        suite.oracle(i).subgradient_into(state.row(i), chunk);
        if normalization == Normalization::PerAgent {
            normalize_in_place(chunk, NORM_EPS);
        }
    }
    if normalization == Normalization::Stacked {
        normalize_in_place(d, NORM_EPS);
        let rms_scale = (state.n_agents() as f64).sqrt();
        d.iter_mut().for_each(|v| *v *= rms_scale);
    }
}

fn step_into(
    state: &AgentState,
    graph: &WeightedDigraph,
    alpha: f64,
    beta: f64,
    d: &[f64],
    next: &mut Vec<f64>,
) -> Result<(), EngineError> {
    let (n_agents, dim) = (state.n_agents, state.dim);
    next.clear();
    next.extend_from_slice(&state.values);
    for i in 0..n_agents {
        let xi = state.row(i);
        let out = &mut next[i * dim..(i + 1) * dim];
        for j in 0..n_agents {
            let a = graph.weight(i, j);
            if j == i || a == 0.0 {
                continue;
            }
            let xj = state.row(j);
            for c in 0..dim {
                out[c] += alpha * a * (xj[c] - xi[c]);
            }
        }
        for c in 0..dim {
            out[c] -= beta * d[i * dim + c];
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFiniteState {
                iteration: state.iteration,
                agent: i,
            });
        }
    }
    Ok(())
}

/// One iteration with explicit step sizes.
pub fn step_with(
    state: &AgentState,
    graph: &WeightedDigraph,
    alpha: f64,
    beta: f64,
    suite: &ObjectiveSuite,
    normalization: Normalization,
) -> Result<StepOutcome, EngineError> {
    check_dims(state, graph, suite)?;
    let mut d = vec![0.0; state.values.len()];
    local_subgradients(state, suite, normalization, &mut d);
    let mut values = Vec::with_capacity(d.len());
    step_into(state, graph, alpha, beta, &d, &mut values)?;
    Ok(StepOutcome {
        next: AgentState {
            values,
            iteration: state.iteration + 1,
            ..*state
        },
        subgradients: d,
        alpha,
        beta,
    })
}

/// One iteration using `alpha_k, beta_k` at `k = state.iteration`.
pub fn step(
    state: &AgentState,
    graph: &WeightedDigraph,
    schedule: &StepSchedule,
    suite: &ObjectiveSuite,
    normalization: Normalization,
) -> Result<AgentState, EngineError> {
    let (alpha, beta) = schedule.step_sizes(state.iteration);
    step_with(state, graph, alpha, beta, suite, normalization).map(|o| o.next)
}

/// The stacked form `X(k+1) = X(k) - alpha (L kron I_n) X(k) - beta d(k)`,
/// computed with explicit Kronecker products.
pub fn stacked_step(state: &AgentState, graph: &WeightedDigraph, alpha: f64, beta: f64, d: &[f64]) -> Vec<f64> {
    let l = laplacian(graph);
    let lk = l.kronecker(&DMatrix::<f64>::identity(state.dim, state.dim));
    let x = DVector::from_column_slice(&state.values);
    let dv = DVector::from_column_slice(d);
    let next = &x - alpha * (lk * &x) - beta * dv;
    next.iter().copied().collect()
}

/// `y(k) = (1/N) sum_i x_i(k)`.
pub fn mean_state(state: &AgentState) -> Vec<f64> {
    let mut y = vec![0.0; state.dim];
    for row in state.rows() {
        y.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let n = state.n_agents as f64;
    y.iter_mut().for_each(|v| *v /= n);
    y
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `sum_i |x_i(k) - y(k)|`.
pub fn consensus_error(state: &AgentState) -> f64 {
    let y = mean_state(state);
    state.rows().map(|r| dist(r, &y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub k: usize,
    pub alpha_k: f64,
    pub beta_k: f64,
    pub consensus_error: f64,
    pub dist_to_opt: Option<f64>,
    pub value_gap: Option<f64>,
}

pub fn metrics(
    state: &AgentState,
    reference: Option<&Reference>,
    suite: &ObjectiveSuite,
    schedule: &StepSchedule,
) -> MetricsSample {
    let y = mean_state(state);
    let (alpha_k, beta_k) = schedule.step_sizes(state.iteration);
    MetricsSample {
        k: state.iteration,
        alpha_k,
        beta_k,
        consensus_error: state.rows().map(|r| dist(r, &y)).sum(),
        dist_to_opt: reference.map(|r| dist(&y, &r.x_star)),
        value_gap: reference.map(|r| (suite.value(&y) - r.f_star).abs()),
    }
}

/// Which iterations are logged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogStride {
    /// Every `n` iterations.
    Every(usize),
    /// `round(10^(j / per_decade))` for `j = 0, 1, ...`.
    Geometric { per_decade: usize },
}

impl Default for LogStride {
    fn default() -> Self {
        LogStride::Geometric { per_decade: 20 }
    }
}

impl LogStride {
    /// Sorted logged iterations in `0..=horizon`, always including both ends.
    pub fn checkpoints(&self, horizon: usize) -> Vec<usize> {
        let mut ks = vec![0, horizon];
        match *self {
            LogStride::Every(n) => ks.extend((0..=horizon).step_by(n.max(1))),
            LogStride::Geometric { per_decade } => {
                let p = per_decade.max(1) as f64;
                for j in 0.. {
                    let k = 10f64.powf(j as f64 / p).round() as usize;
                    if k > horizon {
                        break;
                    }
                    ks.push(k);
                }
            }
        }
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

/// Initial agent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitPolicy {
    /// i.i.d. uniform on `[low, high]^n`.
    Uniform {
        low: f64,
        high: f64,
    },
    Explicit {
        rows: Vec<Vec<f64>>,
    },
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::Uniform { low: -10.0, high: 10.0 }
    }
}

impl InitPolicy {
    pub fn sample(
        &self,
        n_agents: usize,
        dim: usize,
        master_seed: u64,
        replication: u64,
    ) -> Result<AgentState, EngineError> {
        match self {
            InitPolicy::Explicit { rows } => {
                let s = AgentState::from_rows(rows)?;
                if s.n_agents != n_agents || s.dim != dim {
                    return Err(EngineError::DimensionMismatch(format!(
                        "explicit init is {}x{}, expected {n_agents}x{dim}",
                        s.n_agents, s.dim
                    )));
                }
                Ok(s)
            }
            InitPolicy::Uniform { low, high } => {
                let mut rng = rng::substream(master_seed, replication, Purpose::Init);
                let values = (0..n_agents * dim).map(|_| rng.random_range(*low..=*high)).collect();
                AgentState::from_stacked(n_agents, dim, values)
            }
        }
    }
}

/// Everything a single run needs besides the initial state and seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graphs: GraphSet,
    pub chain: MarkovChain,
    pub schedule: StepSchedule,
    pub suite: ObjectiveSuite,
    pub normalization: Normalization,
    pub horizon: usize,
    pub log_stride: LogStride,
    pub reference: Option<Reference>,
    pub init: InitPolicy,
    pub record_states: bool,
    pub record_path: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), EngineError> {
        let n = self.graphs.n_agents();
        if self.suite.len() != n {
            return Err(EngineError::DimensionMismatch(format!(
                "{} oracles for {n} agents",
                self.suite.len()
            )));
        }
        if self.chain.n_states() != self.graphs.len() {
            return Err(EngineError::DimensionMismatch(format!(
                "{} chain states for {} graphs",
                self.chain.n_states(),
                self.graphs.len()
            )));
        }
        if let Some(r) = &self.reference {
            if r.x_star.len() != self.suite.dim() {
                return Err(EngineError::DimensionMismatch("reference dimension".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<MetricsSample>,
    /// Stacked states at each sample, when recorded.
    pub states: Option<Vec<Vec<f64>>>,
    /// `theta(0..K-1)`, when recorded.
    pub path: Option<Vec<usize>>,
    pub final_state: AgentState,
    pub seed: u64,
    pub replication: u64,
    /// SHA-256 of the switching states used.
    pub switch_path_digest: String,
}

impl Trajectory {
    pub fn last(&self) -> &MetricsSample {
        self.samples.last().expect("trajectory always has the k = 0 sample")
    }

    pub fn sample_at(&self, k: usize) -> Option<&MetricsSample> {
        self.samples.iter().find(|s| s.k == k)
    }
}

/// Runs `scenario.horizon` iterations from `init`, drawing the switching path
/// from substream `(seed, replication)`.
pub fn run(scenario: &Scenario, init: AgentState, seed: u64, replication: u64) -> Result<Trajectory, EngineError> {
    scenario.validate()?;
    check_dims(&init, scenario.graphs.get(0), &scenario.suite)?;
    let checkpoints = scenario.log_stride.checkpoints(scenario.horizon);
    let mut next_log = checkpoints.iter().peekable();
    let mut rng = rng::substream(seed, replication, Purpose::Switching);
    let mut sampler = scenario.chain.sampler(&mut rng);
    let mut digest = PathDigest::default();

    let mut samples = Vec::with_capacity(checkpoints.len());
    let mut states = scenario.record_states.then(Vec::new);
    let mut path = scenario.record_path.then(|| Vec::with_capacity(scenario.horizon));
    let mut state = init;
    state.iteration = 0;
    let mut d = vec![0.0; state.values.len()];
    let mut buf = Vec::with_capacity(d.len());

    loop {
        if next_log.peek() == Some(&&state.iteration) {
            next_log.next();
            samples.push(metrics(
                &state,
                scenario.reference.as_ref(),
                &scenario.suite,
                &scenario.schedule,
            ));
            if let Some(s) = states.as_mut() {
                s.push(state.values.clone());
            }
        }
        if state.iteration >= scenario.horizon {
            break;
        }
        let theta = sampler.next().expect("infinite sampler");
        digest.push(theta);
        if let Some(p) = path.as_mut() {
            p.push(theta);
        }
        let (alpha, beta) = scenario.schedule.step_sizes(state.iteration);
        local_subgradients(&state, &scenario.suite, scenario.normalization, &mut d);
        step_into(&state, scenario.graphs.get(theta), alpha, beta, &d, &mut buf)?;
        std::mem::swap(&mut state.values, &mut buf);
        state.iteration += 1;
    }

    Ok(Trajectory {
        samples,
        states,
        path,
        final_state: state,
        seed,
        replication,
        switch_path_digest: digest.finish(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{example_graph_set, validate_rows, DEFAULT_STOCHASTIC_TOL};
    use crate::markov::{example_transition, validate_rows as chain_rows, InitialState};
    use crate::objective::{build_example_suite, build_quadratic_suite};
    use approx::assert_abs_diff_eq;

    fn graph(rows: &[&[f64]]) -> WeightedDigraph {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        validate_rows(&v, DEFAULT_STOCHASTIC_TOL).unwrap()
    }

    /// Quadratics centred at the origin: zero subgradient there.
    fn flat_suite(n_agents: usize, dim: usize) -> ObjectiveSuite {
        build_quadratic_suite(&vec![vec![0.0; dim]; n_agents], &vec![1.0; n_agents]).unwrap()
    }

    #[test]
    fn consensus_with_zero_gradients_is_fixed() {
        let g = example_graph_set();
        let s = AgentState::from_rows(&vec![vec![0.0, 0.0]; 5]).unwrap();
        let out = step_with(&s, g.get(0), 0.7, 0.3, &flat_suite(5, 2), Normalization::Off).unwrap();
        assert_eq!(out.next.stacked(), s.stacked());
        assert_eq!(out.next.iteration, 1);
    }

    #[test]
    fn two_agent_hand_example() {
        let g = graph(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let s = AgentState::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let out = step_with(&s, &g, 0.5, 0.0, &flat_suite(2, 1), Normalization::Off).unwrap();
        assert_eq!(out.next.stacked(), &[0.25, 0.75]);
    }

    #[test]
    fn single_agent_is_subgradient_descent() {
        let g = graph(&[&[1.0]]);
        let suite = build_quadratic_suite(&[vec![3.0]], &[1.0]).unwrap();
        let s = AgentState::from_rows(&[vec![1.0]]).unwrap();
        let out = step_with(&s, &g, 0.9, 0.1, &suite, Normalization::Off).unwrap();
        // d = 2 (1 - 3) = -4
        assert_abs_diff_eq!(out.next.stacked()[0], 1.4, epsilon = 1e-15);
    }

    #[test]
    fn mean_state_examples() {
        let s = AgentState::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(mean_state(&s), vec![1.0, 1.0]);
        let s = AgentState::from_rows(&vec![vec![3.5, -1.0]; 4]).unwrap();
        assert_eq!(mean_state(&s), vec![3.5, -1.0]);
        let s = AgentState::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, -1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(mean_state(&s), vec![0.0, 0.0]);
    }

    #[test]
    fn metrics_examples() {
        let suite = build_quadratic_suite(&[vec![0.0], vec![2.0]], &[1.0, 1.0]).unwrap();
        let schedule = StepSchedule::example();
        let s = AgentState::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(metrics(&s, None, &suite, &schedule).consensus_error, 2.0);
        let xstar = suite.closed_form_minimizer().unwrap().to_vec();
        let r = Reference::exact(&suite, xstar);
        let s = AgentState::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let m = metrics(&s, Some(&r), &suite, &schedule);
        assert_eq!(
            (m.consensus_error, m.dist_to_opt, m.value_gap),
            (0.0, Some(0.0), Some(0.0))
        );
    }

    #[test]
    fn non_finite_state_aborts() {
        let g = graph(&[&[1.0]]);
        let suite = flat_suite(1, 1);
        let s = AgentState::from_rows(&[vec![f64::MAX]]).unwrap();
        let err = step_with(&s, &g, 0.5, 1e300, &suite, Normalization::Off).unwrap_err();
        assert_eq!(err, EngineError::NonFiniteState { iteration: 0, agent: 0 });
    }

    #[test]
    fn dimension_checks() {
        let g = example_graph_set();
        let s = AgentState::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            step_with(&s, g.get(0), 0.1, 0.1, &build_example_suite(), Normalization::Off),
            Err(EngineError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn checkpoints_cover_ends_and_decades() {
        let ks = LogStride::default().checkpoints(100_000);
        assert_eq!(ks[0], 0);
        assert_eq!(*ks.last().unwrap(), 100_000);
        for p in [1, 10, 100, 1000, 10_000] {
            assert!(ks.contains(&p));
        }
        assert!(ks.len() < 120);
        assert_eq!(LogStride::Every(3).checkpoints(7), vec![0, 3, 6, 7]);
        assert_eq!(LogStride::Every(3).checkpoints(0), vec![0]);
    }

    fn example_scenario(horizon: usize) -> Scenario {
        Scenario {
            graphs: example_graph_set(),
            chain: chain_rows(&example_transition(), InitialState::Fixed(0)).unwrap(),
            schedule: StepSchedule::example(),
            suite: build_example_suite(),
            normalization: Normalization::Stacked,
            horizon,
            log_stride: LogStride::default(),
            reference: None,
            init: InitPolicy::default(),
            record_states: false,
            record_path: true,
        }
    }

    #[test]
    fn zero_horizon_has_single_sample() {
        let sc = example_scenario(0);
        let init = sc.init.sample(5, 2, 1, 0).unwrap();
        let t = run(&sc, init.clone(), 1, 0).unwrap();
        assert_eq!(t.samples.len(), 1);
        assert_eq!(t.final_state, init);
        assert_eq!(t.path.as_deref(), Some(&[][..]));
    }

    #[test]
    fn run_is_reproducible_and_matches_manual_steps() {
        let sc = example_scenario(300);
        let init = sc.init.sample(5, 2, 9, 2).unwrap();
        let a = run(&sc, init.clone(), 9, 2).unwrap();
        let b = run(&sc, init.clone(), 9, 2).unwrap();
        assert_eq!(a, b);
        let path = a.path.clone().unwrap();
        let mut s = init;
        for &theta in &path {
            s = step(&s, sc.graphs.get(theta), &sc.schedule, &sc.suite, sc.normalization).unwrap();
        }
        assert_eq!(s, a.final_state);
        let mut digest = PathDigest::default();
        path.iter().for_each(|&t| digest.push(t));
        assert_eq!(digest.finish(), a.switch_path_digest);
        let c = run(&sc, a.final_state.clone(), 10, 2).unwrap();
        assert_ne!(c.switch_path_digest, a.switch_path_digest);
    }

    #[test]
    fn beta_zero_preserves_average() {
        let gs = example_graph_set();
        let suite = build_example_suite();
        let mut s = InitPolicy::default().sample(5, 2, 4, 0).unwrap();
        for k in 0..200 {
            let y0 = mean_state(&s);
            s = step_with(&s, gs.get(k % 3), 0.8, 0.0, &suite, Normalization::Off)
                .unwrap()
                .next;
            let y1 = mean_state(&s);
            assert!(dist(&y0, &y1) <= 1e-12);
        }
    }
}
