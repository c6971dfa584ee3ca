//! Transfer matrices `Phi(k, s) = (I + alpha_k H(k)) ... (I + alpha_s H(s))`
//! and Monte Carlo estimates of their expected spectral norm.
//!
//! Products are tracked as `exp(log_scale) * M` with `M` rescaled whenever its
//! entries drift below `RESCALE_BELOW`; norms at `k = 10^4` are near the
//! bottom of the f64 range otherwise.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::reduction::{h_matrix, Reduction};
use super::AnalysisError;
use crate::graph::{symmetric_eigenvalues, GraphSet, WeightedDigraph};
use crate::markov::MarkovChain;
use crate::rng::{self, Purpose};
use crate::schedule::StepSchedule;

const POWER_TOL: f64 = 1e-10;
/// Past this budget the top singular values are nearly tied and an exact
/// symmetric eigensolve is cheaper.
const POWER_MAX_ITERS: usize = 64;
const RESCALE_BELOW: f64 = 1e-100;
/// Replications evaluated concurrently before merging in index order.
const BATCH: usize = 16;

/// `(k, s)` with `s <= k + 1`; `(s - 1, s)` is the empty product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TransferPair {
    pub k: usize,
    pub s: usize,
}

impl TransferPair {
    pub fn new(k: usize, s: usize) -> Result<Self, AnalysisError> {
        if s > k + 1 {
            return Err(AnalysisError::Invalid(format!("pair (k={k}, s={s}) needs s <= k + 1")));
        }
        Ok(Self { k, s })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEstimate {
    pub k: usize,
    pub s: usize,
    pub replications: usize,
    /// `sum_{i=s}^{k+1} alpha_i`
    pub sum_alpha: f64,
    pub mean_norm: f64,
    pub log_mean_norm: f64,
    /// 95% normal-approximation half width; `None` when `R = 1`.
    pub half_width: Option<f64>,
}

/// Ordered product for graphs at iterations `s, s+1, ..., s + len - 1`,
/// newest factor leftmost. Empty input gives the identity.
pub fn transfer_matrix(
    graphs: &[&WeightedDigraph],
    s: usize,
    schedule: &StepSchedule,
    red: &Reduction,
) -> DMatrix<f64> {
    let d = red.n_agents() - 1;
    let mut phi = DMatrix::identity(d, d);
    for (offset, g) in graphs.iter().enumerate() {
        let factor = DMatrix::identity(d, d) + schedule.alpha(s + offset) * h_matrix(red, g);
        phi = factor * phi;
    }
    phi
}

/// Power iteration on `M^T M` for a flat row-major `d x d` matrix, warm
/// started from `v` (which is updated to the converged singular vector).
fn power_norm(m: &[f64], d: usize, v: &mut [f64], w: &mut [f64], u: &mut [f64], gram: &mut Vec<f64>) -> f64 {
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !vn.is_finite() || vn <= 0.0 {
        for (i, x) in v.iter_mut().enumerate() {
            *x = 1.0 + i as f64 / d as f64;
        }
    }
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= vn);
    let mut lambda = 0.0;
    let mut converged = false;
    for _ in 0..POWER_MAX_ITERS {
        for r in 0..d {
            w[r] = (0..d).map(|c| m[r * d + c] * v[c]).sum();
        }
        for c in 0..d {
            u[c] = (0..d).map(|r| m[r * d + c] * w[r]).sum();
        }
        let next = w.iter().map(|x| x * x).sum::<f64>();
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if un == 0.0 {
            return 0.0;
        }
        v.iter_mut().zip(u.iter()).for_each(|(a, b)| *a = b / un);
        converged = (next - lambda).abs() <= POWER_TOL * next;
        lambda = next;
        if converged {
            break;
        }
    }
    if !converged {
        return gram_top_eigenvalue(m, d, gram).max(0.0).sqrt();
    }
    // Rayleigh quotient with the final vector
    for r in 0..d {
        w[r] = (0..d).map(|c| m[r * d + c] * v[c]).sum();
    }
    w.iter().map(|x| x * x).sum::<f64>().max(lambda).sqrt()
}

/// Largest eigenvalue of `M^T M` by cyclic Jacobi rotations.
fn gram_top_eigenvalue(m: &[f64], d: usize, a: &mut Vec<f64>) -> f64 {
    a.clear();
    a.resize(d * d, 0.0);
    for i in 0..d {
        for j in i..d {
            let g: f64 = (0..d).map(|r| m[r * d + i] * m[r * d + j]).sum();
            a[i * d + j] = g;
            a[j * d + i] = g;
        }
    }
    for _sweep in 0..64 {
        let off: f64 = (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j].powi(2))
            .sum();
        let scale: f64 = (0..d).map(|i| a[i * d + i].powi(2)).sum();
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k * d + p], a[k * d + q]);
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p * d + k], a[q * d + k]);
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i * d + i]).fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral norm by power iteration on `M^T M`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    assert_eq!(m.nrows(), m.ncols(), "square matrices only");
    let d = m.nrows();
    if d == 0 {
        return 0.0;
    }
    let flat: Vec<f64> = (0..d * d).map(|i| m[(i / d, i % d)]).collect();
    let (mut v, mut w, mut u) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    power_norm(&flat, d, &mut v, &mut w, &mut u, &mut Vec::new())
}

/// Flat `I + alpha H` factors are formed on the fly from these.
struct FlatH {
    d: usize,
    per_graph: Vec<Vec<f64>>,
}

impl FlatH {
    fn new(graphs: &GraphSet, red: &Reduction) -> Self {
        let d = red.n_agents() - 1;
        let per_graph = graphs
            .iter()
            .map(|g| {
                let h = h_matrix(red, g);
                (0..d * d).map(|i| h[(i / d, i % d)]).collect()
            })
            .collect();
        Self { d, per_graph }
    }
}

/// Running product with separate log scale.
struct Product {
    d: usize,
    m: Vec<f64>,
    tmp: Vec<f64>,
    log_scale: f64,
    v: Vec<f64>,
    w: Vec<f64>,
    u: Vec<f64>,
    gram: Vec<f64>,
}

impl Product {
    fn new(d: usize) -> Self {
        let mut p = Self {
            d,
            m: vec![0.0; d * d],
            tmp: vec![0.0; d * d],
            log_scale: 0.0,
            v: vec![0.0; d],
            w: vec![0.0; d],
            u: vec![0.0; d],
            gram: Vec::with_capacity(d * d),
        };
        p.reset();
        p
    }

    fn reset(&mut self) {
        let d = self.d;
        self.m.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..d {
            self.m[i * d + i] = 1.0;
        }
        self.log_scale = 0.0;
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }

    /// `M <- (I + alpha H) M`.
    fn push(&mut self, h: &[f64], alpha: f64) {
        let d = self.d;
        for r in 0..d {
            for c in 0..d {
                let hm: f64 = (0..d).map(|t| h[r * d + t] * self.m[t * d + c]).sum();
                self.tmp[r * d + c] = self.m[r * d + c] + alpha * hm;
            }
        }
        std::mem::swap(&mut self.m, &mut self.tmp);
        let peak = self.m.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if peak > 0.0 && peak < RESCALE_BELOW {
            self.m.iter_mut().for_each(|x| *x /= peak);
            self.log_scale += peak.ln();
        }
    }

    fn log_norm(&mut self) -> f64 {
        let n = power_norm(&self.m, self.d, &mut self.v, &mut self.w, &mut self.u, &mut self.gram);
        if n == 0.0 {
            f64::NEG_INFINITY
        } else {
            n.ln() + self.log_scale
        }
    }
}

/// Log norms for every requested pair along one sampled switching path.
#[allow(clippy::too_many_arguments)]
fn replicate(
    chain: &MarkovChain,
    hs: &FlatH,
    schedule: &StepSchedule,
    by_start: &BTreeMap<usize, Vec<(usize, usize)>>,
    k_max: usize,
    seed: u64,
    replication: u64,
    n_pairs: usize,
) -> Vec<f64> {
    let mut rng = rng::substream(seed, replication, Purpose::Switching);
    let path: Vec<usize> = chain.sampler(&mut rng).take(k_max + 2).collect();
    let mut out = vec![0.0; n_pairs];
    let mut prod = Product::new(hs.d);
    for (&s, targets) in by_start {
        // targets: (k, output slot), sorted by k
        prod.reset();
        let mut t = s;
        for &(k, slot) in targets {
            while t <= k {
                prod.push(&hs.per_graph[path[t]], schedule.alpha(t));
                t += 1;
            }
            out[slot] = prod.log_norm();
        }
    }
    out
}

/// Online `log(sum exp)` accumulator for the mean and second moment.
#[derive(Clone, Copy)]
struct LogMoments {
    max: f64,
    s1: f64,
    s2: f64,
}

impl LogMoments {
    const EMPTY: Self = Self {
        max: f64::NEG_INFINITY,
        s1: 0.0,
        s2: 0.0,
    };

    fn push(&mut self, l: f64) {
        if l == f64::NEG_INFINITY {
            return;
        }
        if l > self.max {
            let r = (self.max - l).exp();
            self.s1 *= r;
            self.s2 *= r * r;
            self.max = l;
        }
        let e = (l - self.max).exp();
        self.s1 += e;
        self.s2 += e * e;
    }
}

/// Monte Carlo estimate of `E|Phi(k, s)|` (spectral norm) over `replications`
/// independent switching paths. Bit-reproducible for a fixed seed.
pub fn estimate_transfer_norm(
    chain: &MarkovChain,
    graphs: &GraphSet,
    schedule: &StepSchedule,
    pairs: &[TransferPair],
    replications: usize,
    seed: u64,
) -> Result<Vec<TransferEstimate>, AnalysisError> {
    if replications == 0 {
        return Err(AnalysisError::Invalid("at least one replication is required".into()));
    }
    if chain.n_states() != graphs.len() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "{} chain states for {} graphs",
            chain.n_states(),
            graphs.len()
        )));
    }
    for p in pairs {
        TransferPair::new(p.k, p.s)?;
    }
    let red = super::build_reduction(graphs.n_agents())?;
    let hs = FlatH::new(graphs, &red);
    let mut by_start: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (slot, p) in pairs.iter().enumerate() {
        by_start.entry(p.s).or_default().push((p.k, slot));
    }
    by_start.values_mut().for_each(|v| v.sort_unstable());
    let k_max = pairs.iter().map(|p| p.k).max().unwrap_or(0);

    let mut moments = vec![LogMoments::EMPTY; pairs.len()];
    let mut start = 0;
    while start < replications {
        let end = (start + BATCH).min(replications);
        let batch: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|r| replicate(chain, &hs, schedule, &by_start, k_max, seed, r as u64, pairs.len()))
            .collect();
        for logs in &batch {
            for (m, &l) in moments.iter_mut().zip(logs) {
                m.push(l);
            }
        }
        start = end;
    }

    let mut alpha_prefix = Vec::with_capacity(k_max + 3);
    alpha_prefix.push(0.0);
    for i in 0..=k_max + 1 {
        alpha_prefix.push(alpha_prefix[i] + schedule.alpha(i));
    }
    let r = replications as f64;
    Ok(pairs
        .iter()
        .zip(&moments)
        .map(|(p, m)| {
            let (log_mean_norm, half_width) = if m.s1 == 0.0 {
                (f64::NEG_INFINITY, (replications > 1).then_some(0.0))
            } else {
                let mean_scaled = m.s1 / r;
                let hw = (replications > 1).then(|| {
                    let var = ((m.s2 - r * mean_scaled * mean_scaled) / (r - 1.0)).max(0.0);
                    1.96 * (var / r).sqrt() * m.max.exp()
                });
                (m.max + mean_scaled.ln(), hw)
            };
            TransferEstimate {
                k: p.k,
                s: p.s,
                replications,
                sum_alpha: alpha_prefix[p.k + 2] - alpha_prefix[p.s],
                mean_norm: log_mean_norm.exp(),
                log_mean_norm,
                half_width,
            }
        })
        .collect())
}

/// Every `(k, 0)` and `(k, s + 1)` with `s <= k <= horizon`: the pairs the
/// truncated summability checks need.
pub fn summability_pairs(horizon: usize) -> Vec<TransferPair> {
    let mut pairs: Vec<TransferPair> = (0..=horizon).map(|k| TransferPair { k, s: 0 }).collect();
    for k in 0..=horizon {
        for s in 0..=k {
            pairs.push(TransferPair { k, s: s + 1 });
        }
    }
    pairs
}

/// Largest eigenvalue of the average over sampled windows of
/// `sum_{t in window} (H(t) + H(t)^T)`.
pub fn window_average_max_eigenvalue(
    chain: &MarkovChain,
    graphs: &GraphSet,
    window: usize,
    windows: usize,
    seed: u64,
) -> Result<f64, AnalysisError> {
    if window == 0 || windows == 0 {
        return Err(AnalysisError::Invalid(
            "window length and count must be positive".into(),
        ));
    }
    let red = super::build_reduction(graphs.n_agents())?;
    let sym: Vec<DMatrix<f64>> = graphs
        .iter()
        .map(|g| {
            let h = h_matrix(&red, g);
            &h + h.transpose()
        })
        .collect();
    let d = red.n_agents() - 1;
    let mut rng = rng::substream(seed, 0, Purpose::Switching);
    let mut sampler = chain.sampler(&mut rng);
    let mut acc = DMatrix::zeros(d, d);
    for _ in 0..windows * window {
        acc += &sym[sampler.next().expect("infinite sampler")];
    }
    acc /= windows as f64;
    Ok(*symmetric_eigenvalues(&acc).last().expect("d >= 1"))
}
