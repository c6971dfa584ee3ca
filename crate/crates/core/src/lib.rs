//! Distributed convex optimization over Markovian switching digraphs.
//!
//! Each agent mixes its neighbours' estimates with a consensus step
//! `alpha_k` and descends its own subgradient with an innovation step
//! `beta_k`, while the communication graph is chosen at every iteration by
//! a finite irreducible Markov chain over a set of weight-balanced digraphs.
//!
//! | module | contents |
//! |--------|----------|
//! | [`graph`] | doubly stochastic digraphs, Laplacians, union graph, connectivity |
//! | [`markov`] | switching chain validation, sampling, stationary distribution |
//! | [`objective`] | subgradient oracles, example and quadratic suites |
//! | [`schedule`] | two time-scale step sizes |
//! | [`engine`] | the iteration, metrics, runs and Monte Carlo ensembles |
//! | [`analysis`] | disagreement reduction, transfer matrices, reference solver |
//! | [`cli`] | experiment config, subcommands and file outputs |

pub mod analysis;
pub mod cli;
pub mod engine;
pub mod graph;
pub mod markov;
pub mod objective;
pub mod rng;
pub mod schedule;

pub use analysis::{Reduction, Reference, TransferEstimate};
pub use engine::{AgentState, MetricsSample, Scenario, Trajectory};
pub use graph::{GraphSet, WeightedDigraph};
pub use markov::{InitialState, MarkovChain, SwitchPath};
pub use objective::{Normalization, ObjectiveSuite, SubgradientOracle};
pub use schedule::StepSchedule;
