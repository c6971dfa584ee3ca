//! Weighted directed communication graphs with doubly stochastic adjacency.
//!
//! Entry `(i, j)` of the adjacency matrix is the weight agent `i` puts on the
//! state of agent `j`, so a positive off-diagonal `a_ij` means the directed
//! edge `(j, i)` exists.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Tolerance used for exact literal inputs.
pub const DEFAULT_STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency matrix is empty")]
    Empty,
    #[error("adjacency matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum} (deviation {deviation:e} exceeds tolerance)")]
    RowSumViolation { row: usize, sum: f64, deviation: f64 },
    #[error("column {col} sums to {sum} (deviation {deviation:e} exceeds tolerance)")]
    ColumnSumViolation { col: usize, sum: f64, deviation: f64 },
    #[error("graph set is empty")]
    EmptySet,
    #[error("graph {index} has {found} agents, expected {expected}")]
    AgentCountMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("union graph is not strongly connected: agent {to} cannot be reached from agent {from}")]
    UnionNotStronglyConnected { from: usize, to: usize },
}

/// A validated weight-balanced digraph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    adjacency: DMatrix<f64>,
    edges: BTreeSet<(usize, usize)>,
}

impl WeightedDigraph {
    pub fn n_agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// Directed edges `(j, i)`: agent `i` receives from agent `j`.
    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    /// In-neighbours of agent `i` (excluding `i`).
    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_agents()).filter(move |&j| j != i && self.adjacency[(i, j)] > 0.0)
    }

    /// Largest weighted in-degree `sum_{j != i} a_ij`.
    pub fn max_row_degree(&self) -> f64 {
        let n = self.n_agents();
        (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| self.adjacency[(i, j)]).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Validates a row-major adjacency matrix.
pub fn validate_rows(rows: &[Vec<f64>], tol: f64) -> Result<WeightedDigraph, GraphError> {
    let n = rows.len();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(GraphError::NotSquare {
            rows: n,
            cols: bad.len(),
        });
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    validate_adjacency(&m, tol)
}

/// Checks nonnegativity and double stochasticity, then derives the edge set
/// from the nonzero off-diagonal weights.
pub fn validate_adjacency(matrix: &DMatrix<f64>, tol: f64) -> Result<WeightedDigraph, GraphError> {
    let (rows, cols) = matrix.shape();
    if rows == 0 || cols == 0 {
        return Err(GraphError::Empty);
    }
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    let n = rows;
    for i in 0..n {
        for j in 0..n {
            let v = matrix[(i, j)];
            if !v.is_finite() {
                return Err(GraphError::NonFinite { row: i, col: j });
            }
            if v < 0.0 {
                return Err(GraphError::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }

    let worst = |sums: Vec<f64>| {
        sums.into_iter()
            .enumerate()
            .map(|(idx, s)| (idx, s, (s - 1.0).abs()))
            .fold(None, |acc: Option<(usize, f64, f64)>, cur| match acc {
                Some(best) if best.2 >= cur.2 => Some(best),
                _ => Some(cur),
            })
            .expect("n >= 1")
    };
    let (row, sum, deviation) = worst((0..n).map(|i| matrix.row(i).sum()).collect());
    if deviation > tol {
        return Err(GraphError::RowSumViolation { row, sum, deviation });
    }
    let (col, sum, deviation) = worst((0..n).map(|j| matrix.column(j).sum()).collect());
    if deviation > tol {
        return Err(GraphError::ColumnSumViolation { col, sum, deviation });
    }

    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && matrix[(i, j)] > 0.0 {
                edges.insert((j, i));
            }
        }
    }
    Ok(WeightedDigraph {
        adjacency: matrix.clone(),
        edges,
    })
}

/// `D - A` with `D` the diagonal of row sums; equals `I - A` here.
pub fn laplacian(g: &WeightedDigraph) -> DMatrix<f64> {
    let a = g.adjacency();
    let n = g.n_agents();
    let mut l = -a.clone();
    for i in 0..n {
        l[(i, i)] += a.row(i).sum();
    }
    l
}

/// Symmetric part `(L + L^T) / 2` of the Laplacian, i.e. the Laplacian of the
/// undirected mirror graph.
pub fn mirror_laplacian(g: &WeightedDigraph) -> DMatrix<f64> {
    let l = laplacian(g);
    (&l + l.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Returns the first `(from, to)` pair for which `to` is unreachable from
/// `from`, or `None` if the pattern is strongly connected. `edge(u, v)` means
/// a directed edge from `u` to `v`.
pub(crate) fn first_unreachable_pair(n: usize, edge: impl Fn(usize, usize) -> bool) -> Option<(usize, usize)> {
    if n <= 1 {
        return None;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for (v, s) in seen.iter_mut().enumerate() {
                let linked = if forward { edge(u, v) } else { edge(v, u) };
                if v != u && linked && !*s {
                    *s = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    if let Some(v) = reach(true).iter().position(|s| !s) {
        return Some((0, v));
    }
    if let Some(v) = reach(false).iter().position(|s| !s) {
        return Some((v, 0));
    }
    None
}

/// Forward and reverse reachability from agent 0 along positive off-diagonal weights.
pub fn is_strongly_connected(g: &WeightedDigraph) -> bool {
    // edge (j, i) exists when a_ij > 0
    first_unreachable_pair(g.n_agents(), |u, v| g.weight(v, u) > 0.0).is_none()
}

/// The finite set of switching topologies, all over the same agents.
#[derive(Debug, Clone)]
pub struct GraphSet {
    graphs: Vec<WeightedDigraph>,
}

impl GraphSet {
    /// Requires a uniform agent count and a strongly connected union graph.
    pub fn new(graphs: Vec<WeightedDigraph>) -> Result<Self, GraphError> {
        let set = Self::unchecked(graphs)?;
        let union = union_graph(&set);
        let n = union.n_agents();
        if let Some((from, to)) = first_unreachable_pair(n, |u, v| union.weight(v, u) > 0.0) {
            return Err(GraphError::UnionNotStronglyConnected { from, to });
        }
        Ok(set)
    }

    /// Uniform agent count only; the union may be disconnected.
    pub fn unchecked(graphs: Vec<WeightedDigraph>) -> Result<Self, GraphError> {
        let first = graphs.first().ok_or(GraphError::EmptySet)?;
        let expected = first.n_agents();
        for (index, g) in graphs.iter().enumerate() {
            if g.n_agents() != expected {
                return Err(GraphError::AgentCountMismatch {
                    index,
                    expected,
                    found: g.n_agents(),
                });
            }
        }
        Ok(Self { graphs })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.graphs[0].n_agents()
    }

    pub fn get(&self, index: usize) -> &WeightedDigraph {
        &self.graphs[index]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, WeightedDigraph> {
        self.graphs.iter()
    }
}

/// Union graph with adjacency equal to the mean of the member adjacencies.
pub fn union_graph(gs: &GraphSet) -> WeightedDigraph {
    let n = gs.n_agents();
    let mut sum = DMatrix::zeros(n, n);
    for g in gs.iter() {
        sum += g.adjacency();
    }
    let adjacency = sum / gs.len() as f64;
    let mut edges = BTreeSet::new();
    for g in gs.iter() {
        edges.extend(g.edges().iter().copied());
    }
    WeightedDigraph { adjacency, edges }
}

/// The three switching topologies of the five-agent example.
pub fn example_adjacencies() -> [Vec<Vec<f64>>; 3] {
    [
        vec![
            vec![0.0, 0.0, 0.0, 0.5, 0.5],
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.5, 0.0, 0.5, 0.0],
            vec![0.0, 0.0, 0.5, 0.0, 0.5],
        ],
        vec![
            vec![0.0, 0.0, 0.0, 0.5, 0.5],
            vec![0.0, 1.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.5, 0.5, 0.0],
            vec![0.0, 0.0, 0.5, 0.0, 0.5],
        ],
        vec![
            vec![0.5, 0.0, 0.0, 0.0, 0.5],
            vec![0.0, 0.5, 0.0, 0.0, 0.5],
            vec![0.5, 0.5, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0, 0.0],
        ],
    ]
}

/// Validated graph set for the five-agent example.
pub fn example_graph_set() -> GraphSet {
    let graphs = example_adjacencies()
        .iter()
        .map(|rows| validate_rows(rows, DEFAULT_STOCHASTIC_TOL).expect("example graph is doubly stochastic"))
        .collect();
    GraphSet::new(graphs).expect("example union graph is strongly connected")
}
