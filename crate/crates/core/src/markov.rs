//! The switching signal: a finite stationary Markov chain over graph indices.
//!
//! States are zero-based internally. Config files and CSV dumps use the same
//! zero-based indices as the graph list.

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::first_unreachable_pair;
use crate::rng::{self, Purpose, Rng};

pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("transition matrix is empty")]
    Empty,
    #[error("transition matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("transition matrix is not row stochastic: row {row} ({detail})")]
    NotRowStochastic { row: usize, detail: String },
    #[error("chain is not irreducible: state {to} is unreachable from state {from}")]
    NotIrreducible { from: usize, to: usize },
    #[error("invalid initial state policy: {0}")]
    InvalidInitial(String),
    #[error("stationary system is singular")]
    SingularSystem,
}

/// How `theta(0)` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// A fixed state index.
    Fixed(usize),
    /// Drawn from the stationary distribution.
    Stationary,
    /// Drawn from an explicit distribution over states.
    Distribution(Vec<f64>),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Fixed(0)
    }
}

#[derive(Debug, Clone)]
pub struct MarkovChain {
    transition: DMatrix<f64>,
    initial: InitialState,
    rows: Vec<WeightedIndex<f64>>,
    initial_dist: Vec<f64>,
}

impl MarkovChain {
    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn initial(&self) -> &InitialState {
        &self.initial
    }

    /// Distribution of `theta(0)` implied by the initial state policy.
    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Infinite iterator `theta(0), theta(1), ...` driven by `rng`.
    pub fn sampler<'a>(&'a self, rng: &'a mut Rng) -> SwitchSampler<'a> {
        SwitchSampler {
            chain: self,
            rng,
            current: None,
        }
    }
}

pub fn validate_rows(rows: &[Vec<f64>], initial: InitialState) -> Result<MarkovChain, ChainError> {
    let m = rows.len();
    if m == 0 {
        return Err(ChainError::Empty);
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != m) {
        return Err(ChainError::NotSquare {
            rows: m,
            cols: bad.len(),
        });
    }
    validate_chain(&DMatrix::from_fn(m, m, |i, j| rows[i][j]), initial)
}

/// Row-stochasticity and irreducibility (strong connectivity of the state
/// digraph with an edge `i -> j` whenever `p_ij > 0`).
pub fn validate_chain(p: &DMatrix<f64>, initial: InitialState) -> Result<MarkovChain, ChainError> {
    let (rows, cols) = p.shape();
    if rows == 0 {
        return Err(ChainError::Empty);
    }
    if rows != cols {
        return Err(ChainError::NotSquare { rows, cols });
    }
    let m = rows;
    for i in 0..m {
        for j in 0..m {
            let v = p[(i, j)];
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(ChainError::NotRowStochastic {
                    row: i,
                    detail: format!("entry {j} = {v} outside [0, 1]"),
                });
            }
        }
        let sum = p.row(i).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(ChainError::NotRowStochastic {
                row: i,
                detail: format!("sums to {sum}"),
            });
        }
    }
    if let Some((from, to)) = first_unreachable_pair(m, |u, v| p[(u, v)] > 0.0) {
        return Err(ChainError::NotIrreducible { from, to });
    }

    let row_samplers = (0..m)
        .map(|i| {
            WeightedIndex::new(p.row(i).iter().copied()).map_err(|e| ChainError::NotRowStochastic {
                row: i,
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut chain = MarkovChain {
        transition: p.clone(),
        initial: initial.clone(),
        rows: row_samplers,
        initial_dist: Vec::new(),
    };
    chain.initial_dist = match &initial {
        InitialState::Fixed(s) => {
            if *s >= m {
                return Err(ChainError::InvalidInitial(format!(
                    "state {s} out of range for {m} states"
                )));
            }
            let mut d = vec![0.0; m];
            d[*s] = 1.0;
            d
        }
        InitialState::Stationary => stationary_distribution(&chain)?,
        InitialState::Distribution(d) => {
            if d.len() != m
                || d.iter().any(|x| !x.is_finite() || *x < 0.0)
                || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(ChainError::InvalidInitial(format!(
                    "{d:?} is not a distribution over {m} states"
                )));
            }
            d.clone()
        }
    };
    Ok(chain)
}

/// Unique `pi` with `pi P = pi`, `sum pi = 1`, from the linear system
/// `(P^T - I) pi = 0` with its last equation replaced by normalization.
pub fn stationary_distribution(chain: &MarkovChain) -> Result<Vec<f64>, ChainError> {
    let m = chain.n_states();
    let mut a = chain.transition.transpose() - DMatrix::identity(m, m);
    let mut b = DVector::zeros(m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    b[m - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(ChainError::SingularSystem)?;
    if pi.iter().any(|x| !x.is_finite()) {
        return Err(ChainError::SingularSystem);
    }
    Ok(pi.iter().copied().collect())
}

/// Lazily sampled switching path.
pub struct SwitchSampler<'a> {
    chain: &'a MarkovChain,
    rng: &'a mut Rng,
    current: Option<usize>,
}

impl Iterator for SwitchSampler<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let next = match self.current {
            None => match &self.chain.initial {
                InitialState::Fixed(s) => *s,
                _ => WeightedIndex::new(self.chain.initial_dist.iter().copied())
                    .expect("validated distribution")
                    .sample(self.rng),
            },
            Some(s) => self.chain.rows[s].sample(self.rng),
        };
        self.current = Some(next);
        Some(next)
    }
}

/// A realised path `theta(0), ..., theta(K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPath {
    pub states: Vec<usize>,
    pub seed: u64,
    pub horizon: usize,
}

impl SwitchPath {
    pub fn digest(&self) -> String {
        let mut d = PathDigest::default();
        for &s in &self.states {
            d.push(s);
        }
        d.finish()
    }
}

/// Incremental SHA-256 of a state sequence (each state as little-endian u32).
#[derive(Default, Clone)]
pub struct PathDigest(Sha256);

impl PathDigest {
    pub fn push(&mut self, state: usize) {
        self.0.update((state as u32).to_le_bytes());
    }

    pub fn finish(self) -> String {
        self.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Samples `theta(0..=horizon)` from the switching substream of `seed`.
pub fn sample_path(chain: &MarkovChain, horizon: usize, seed: u64) -> SwitchPath {
    let mut rng = rng::substream(seed, 0, Purpose::Switching);
    let states = chain.sampler(&mut rng).take(horizon + 1).collect();
    SwitchPath { states, seed, horizon }
}

/// Transition matrix of the five-agent example.
pub fn example_transition() -> Vec<Vec<f64>> {
    vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.6, 0.4], vec![0.2, 0.0, 0.8]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain(rows: &[&[f64]], init: InitialState) -> Result<MarkovChain, ChainError> {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        validate_rows(&v, init)
    }

    #[test]
    fn validation_examples() {
        validate_rows(&example_transition(), InitialState::Fixed(0)).unwrap();
        let eye = chain(
            &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]],
            InitialState::Fixed(0),
        );
        assert!(matches!(eye, Err(ChainError::NotIrreducible { .. })));
        chain(&[&[0.0, 1.0], &[1.0, 0.0]], InitialState::Fixed(0)).unwrap();
        let bad = chain(&[&[0.5, 0.4], &[1.0, 0.0]], InitialState::Fixed(0));
        assert!(matches!(bad, Err(ChainError::NotRowStochastic { row: 0, .. })));
        let bad = chain(&[&[0.0, 1.0], &[1.0, 0.0]], InitialState::Fixed(2));
        assert!(matches!(bad, Err(ChainError::InvalidInitial(_))));
    }

    #[test]
    fn reducible_reports_pair() {
        // state 2 is absorbing, so neither 1 nor 2 leads back to 0
        let err = chain(
            &[&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &[0.0, 0.0, 1.0]],
            InitialState::Fixed(0),
        )
        .unwrap_err();
        assert_eq!(err, ChainError::NotIrreducible { from: 1, to: 0 });
    }

    #[test]
    fn stationary_examples() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]], InitialState::Fixed(0)).unwrap();
        let pi = stationary_distribution(&c).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[1], 0.5, epsilon = 1e-14);
        let c = chain(&[&[1.0]], InitialState::Fixed(0)).unwrap();
        assert_eq!(stationary_distribution(&c).unwrap(), vec![1.0]);
        // example chain: hand solution of pi P = pi gives (4/19, 5/19, 10/19)
        let c = validate_rows(&example_transition(), InitialState::Fixed(0)).unwrap();
        let pi = stationary_distribution(&c).unwrap();
        for (a, b) in pi.iter().zip([4.0 / 19.0, 5.0 / 19.0, 10.0 / 19.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn deterministic_rows_alternate() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]], InitialState::Fixed(0)).unwrap();
        for seed in 0..5 {
            let p = sample_path(&c, 7, seed);
            assert_eq!(p.states, vec![0, 1, 0, 1, 0, 1, 0, 1]);
        }
        let c = chain(&[&[1.0]], InitialState::Fixed(0)).unwrap();
        assert!(sample_path(&c, 50, 3).states.iter().all(|&s| s == 0));
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let c = validate_rows(&example_transition(), InitialState::Stationary).unwrap();
        let a = sample_path(&c, 1000, 11);
        assert_eq!(a, sample_path(&c, 1000, 11));
        assert_eq!(a.digest(), sample_path(&c, 1000, 11).digest());
        assert_ne!(a.states, sample_path(&c, 1000, 12).states);
        assert_eq!(a.states.len(), 1001);
    }

    #[test]
    fn stationary_start_draws_every_state() {
        let c = validate_rows(&example_transition(), InitialState::Stationary).unwrap();
        let mut seen = [0usize; 3];
        for seed in 0..300 {
            seen[sample_path(&c, 0, seed).states[0]] += 1;
        }
        assert!(seen.iter().all(|&n| n > 30), "{seen:?}");
    }

    #[test]
    fn transition_frequencies_match() {
        let c = validate_rows(&example_transition(), InitialState::Fixed(0)).unwrap();
        let path = sample_path(&c, 100_000, 5);
        let mut counts = [[0usize; 3]; 3];
        for w in path.states.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        let p = example_transition();
        for i in 0..3 {
            let total: usize = counts[i].iter().sum();
            for j in 0..3 {
                let freq = counts[i][j] as f64 / total as f64;
                assert!((freq - p[i][j]).abs() < 0.02, "({i},{j}) {freq}");
            }
        }
    }

    #[test]
    fn occupation_converges_to_stationary() {
        let c = validate_rows(&example_transition(), InitialState::Fixed(0)).unwrap();
        let pi = stationary_distribution(&c).unwrap();
        let k = 100_000;
        for seed in 0..20 {
            let path = sample_path(&c, k, seed);
            let mut freq = [0.0; 3];
            for &s in &path.states {
                freq[s] += 1.0 / path.states.len() as f64;
            }
            let dev = freq.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 3.0 / (k as f64).sqrt(), "seed {seed}: {dev}");
        }
        let long = sample_path(&c, 1_000_000, 99);
        for (s, p) in pi.iter().enumerate() {
            let f = long.states.iter().filter(|&&x| x == s).count() as f64 / long.states.len() as f64;
            assert!((f - p).abs() < 0.01);
        }
    }
}
