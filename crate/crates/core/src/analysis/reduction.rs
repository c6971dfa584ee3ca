use nalgebra::{DMatrix, DVector};

use super::AnalysisError;
use crate::engine::AgentState;
use crate::graph::WeightedDigraph;

/// `Q1` with `Q1 1 = 0`, `Q1 Q1^T = I`, and the disagreement projector
/// `Gamma = I - 1 1^T / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub q1: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl Reduction {
    pub fn n_agents(&self) -> usize {
        self.q1.ncols()
    }
}

/// Helmert rows: row `j` (1-based) has `j` entries `1/sqrt(j(j+1))`, then
/// `-j/sqrt(j(j+1))`, then zeros.
pub fn build_reduction(n: usize) -> Result<Reduction, AnalysisError> {
    if n < 2 {
        return Err(AnalysisError::TooFewAgents(n));
    }
    let mut q1 = DMatrix::zeros(n - 1, n);
    for j in 1..n {
        let scale = ((j * (j + 1)) as f64).sqrt();
        for c in 0..j {
            q1[(j - 1, c)] = 1.0 / scale;
        }
        q1[(j - 1, j)] = -(j as f64) / scale;
    }
    let gamma = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    Ok(Reduction { q1, gamma })
}

/// `xi = (Q1 kron I_n) X`, laid out as `N-1` blocks of length `n`.
pub fn disagreement_state(state: &AgentState, red: &Reduction) -> Result<Vec<f64>, AnalysisError> {
    if state.n_agents() != red.n_agents() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "state has {} agents, reduction {}",
            state.n_agents(),
            red.n_agents()
        )));
    }
    Ok(kron_apply(&red.q1, state.stacked(), state.dim()))
}

/// `(M kron I_n) v` without forming the Kronecker product.
pub(crate) fn kron_apply(m: &DMatrix<f64>, v: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows() * n];
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let w = m[(r, c)];
            if w == 0.0 {
                continue;
            }
            for t in 0..n {
                out[r * n + t] += w * v[c * n + t];
            }
        }
    }
    out
}

/// `H = Q1 A Q1^T - I`.
pub fn h_matrix(red: &Reduction, graph: &WeightedDigraph) -> DMatrix<f64> {
    let n = red.n_agents();
    &red.q1 * graph.adjacency() * red.q1.transpose() - DMatrix::identity(n - 1, n - 1)
}

/// `xi(k+1) = xi + alpha (H kron I_n) xi - beta (Q1 kron I_n) d`.
pub fn reduced_step(
    xi: &[f64],
    h: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    red: &Reduction,
    d: &[f64],
    dim: usize,
) -> Vec<f64> {
    let hx = kron_apply(h, xi, dim);
    let qd = kron_apply(&red.q1, d, dim);
    xi.iter()
        .zip(hx)
        .zip(qd)
        .map(|((x, h), q)| x + alpha * h - beta * q)
        .collect()
}

/// `|(Gamma kron I_n) X|`.
pub fn gamma_norm(state: &AgentState, red: &Reduction) -> f64 {
    DVector::from_vec(kron_apply(&red.gamma, state.stacked(), state.dim())).norm()
}
