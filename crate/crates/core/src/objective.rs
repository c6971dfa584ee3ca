//! Local convex objectives with value and subgradient oracles.

use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Purpose};

/// Below this norm a subgradient is treated as zero when normalizing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("point has dimension {found}, oracle expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("suite has no oracles")]
    Empty,
    #[error("oracle {index} has dimension {found}, suite dimension is {expected}")]
    MixedDimensions {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid quadratic parameters: {0}")]
    InvalidQuadratic(String),
}

/// A convex function on R^n with a deterministic subgradient selection.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn label(&self) -> String;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes one element of the subdifferential at `x` into `out`.
    fn subgradient_into(&self, x: &[f64], out: &mut [f64]);
}

pub type SubgradientOracle = Arc<dyn Objective>;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub subgradient: Vec<f64>,
}

pub fn evaluate(oracle: &dyn Objective, x: &[f64]) -> Result<Evaluation, ObjectiveError> {
    if x.len() != oracle.dim() {
        return Err(ObjectiveError::DimensionMismatch {
            expected: oracle.dim(),
            found: x.len(),
        });
    }
    let mut subgradient = vec![0.0; x.len()];
    oracle.subgradient_into(x, &mut subgradient);
    Ok(Evaluation {
        value: oracle.value(x),
        subgradient,
    })
}

#[inline]
fn sign(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean projection onto the closed unit ball.
pub fn project_unit_ball(x: &[f64]) -> Vec<f64> {
    let r = norm(x);
    if r <= 1.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / r).collect()
    }
}

/// `d / |d|`, or zero when `|d| <= eps`.
pub fn normalize_subgradient(d: &[f64], eps: f64) -> Vec<f64> {
    let mut out = d.to_vec();
    normalize_in_place(&mut out, eps);
    out
}

pub(crate) fn normalize_in_place(d: &mut [f64], eps: f64) {
    let r = norm(d);
    if r > eps {
        d.iter_mut().for_each(|v| *v /= r);
    } else {
        d.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// How subgradients are rescaled before the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Off,
    /// Each agent's subgradient scaled to unit norm.
    PerAgent,
    /// One common factor for all agents, chosen so that the root mean square
    /// of the agents' norms is 1. Keeps the relative weights of the local
    /// subgradients, so the fixed point is still the minimizer of `sum f_i`.
    Stacked,
}

/// The five local objectives of the two-dimensional example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleFn {
    /// `ln(e^{0.1 x1} + e^{0.2 x2}) + 5 dist(x, unit ball)`
    F1,
    /// `3 x1^2 ln(x1^2 + 1) + 2 x2^2`
    F2,
    /// `3 (x1 - 10)^2 + 0.2 (x2 - 8)^2 + 2|x1| + 2|x2|`
    F3,
    /// `4 x1^2 / sqrt(2 x1^2 + 1) + 0.1 (x1 + x2)^2`
    F4,
    /// `(x1 + 5 x2 - 10)^2 + 4 max{x1 + x2, (x1 + x2)^2}`
    F5,
}

impl ExampleFn {
    pub const ALL: [ExampleFn; 5] = [Self::F1, Self::F2, Self::F3, Self::F4, Self::F5];
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Objective for ExampleFn {
    fn dim(&self) -> usize {
        2
    }

    fn label(&self) -> String {
        format!("{self:?}").to_lowercase()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        match self {
            Self::F1 => log_sum_exp2(0.1 * x1, 0.2 * x2) + 5.0 * (x1.hypot(x2) - 1.0).max(0.0),
            Self::F2 => 3.0 * x1 * x1 * (x1 * x1 + 1.0).ln() + 2.0 * x2 * x2,
            Self::F3 => 3.0 * (x1 - 10.0).powi(2) + 0.2 * (x2 - 8.0).powi(2) + 2.0 * x1.abs() + 2.0 * x2.abs(),
            Self::F4 => 4.0 * x1 * x1 / (2.0 * x1 * x1 + 1.0).sqrt() + 0.1 * (x1 + x2).powi(2),
            Self::F5 => {
                let t = x1 + x2;
                (x1 + 5.0 * x2 - 10.0).powi(2) + 4.0 * t.max(t * t)
            }
        }
    }

    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        let (g1, g2) = match self {
            Self::F1 => {
                let (a, b) = (0.1 * x1, 0.2 * x2);
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                let s = ea + eb;
                let (mut g1, mut g2) = (0.1 * ea / s, 0.2 * eb / s);
                let r = x1.hypot(x2);
                // (x - P x) / |x - P x| = x / |x| outside the ball; zero on or inside it
                if r > 1.0 {
                    g1 += 5.0 * x1 / r;
                    g2 += 5.0 * x2 / r;
                }
                (g1, g2)
            }
            Self::F2 => {
                let s = x1 * x1 + 1.0;
                (6.0 * x1 * s.ln() + 6.0 * x1.powi(3) / s, 4.0 * x2)
            }
            Self::F3 => (6.0 * (x1 - 10.0) + 2.0 * sign(x1), 0.4 * (x2 - 8.0) + 2.0 * sign(x2)),
            Self::F4 => {
                let q = (2.0 * x1 * x1 + 1.0).sqrt();
                let c = 0.2 * (x1 + x2);
                (8.0 * x1 / q - 8.0 * x1.powi(3) / q.powi(3) + c, c)
            }
            Self::F5 => {
                let u = 2.0 * (x1 + 5.0 * x2 - 10.0);
                let t = x1 + x2;
                // ties go to the linear branch
                let m = if t >= t * t { 4.0 } else { 8.0 * t };
                (u + m, 5.0 * u + m)
            }
        };
        out[0] = g1;
        out[1] = g2;
    }
}

/// `w |x - c|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub center: Vec<f64>,
    pub weight: f64,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn label(&self) -> String {
        format!("quadratic(w={})", self.weight)
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.weight * x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
    }

    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, a), c) in out.iter_mut().zip(x).zip(&self.center) {
            *o = 2.0 * self.weight * (a - c);
        }
    }
}

/// `|x|_1` with subgradient `sign(x)`, zero at kinks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Norm {
    pub dim: usize,
}

impl Objective for L1Norm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> String {
        "l1".into()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs()).sum()
    }

    fn subgradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = sign(*v);
        }
    }
}

/// The agents' local objectives; the global objective is their sum.
#[derive(Debug, Clone)]
pub struct ObjectiveSuite {
    name: String,
    oracles: Vec<SubgradientOracle>,
    dim: usize,
    minimizer: Option<Vec<f64>>,
}

impl ObjectiveSuite {
    pub fn new(name: impl Into<String>, oracles: Vec<SubgradientOracle>) -> Result<Self, ObjectiveError> {
        let dim = oracles.first().ok_or(ObjectiveError::Empty)?.dim();
        for (index, o) in oracles.iter().enumerate() {
            if o.dim() != dim {
                return Err(ObjectiveError::MixedDimensions {
                    index,
                    expected: dim,
                    found: o.dim(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            oracles,
            dim,
            minimizer: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.oracles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oracles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn oracle(&self, i: usize) -> &dyn Objective {
        self.oracles[i].as_ref()
    }

    pub fn oracles(&self) -> &[SubgradientOracle] {
        &self.oracles
    }

    /// Closed-form global minimizer, when the family has one.
    pub fn closed_form_minimizer(&self) -> Option<&[f64]> {
        self.minimizer.as_deref()
    }

    /// `f(x) = sum_i f_i(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.oracles.iter().map(|o| o.value(x)).sum()
    }

    /// Sum of the local subgradient selections at a common point.
    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        for o in &self.oracles {
            o.subgradient_into(x, &mut buf);
            total.iter_mut().zip(&buf).for_each(|(t, b)| *t += b);
        }
        total
    }
}

/// The five-agent example suite over R^2.
pub fn build_example_suite() -> ObjectiveSuite {
    let oracles = ExampleFn::ALL
        .iter()
        .map(|f| Arc::new(*f) as SubgradientOracle)
        .collect();
    ObjectiveSuite::new("example5", oracles).expect("uniform dimension")
}

/// `f_i(x) = w_i |x - c_i|^2` with minimizer `sum w_i c_i / sum w_i`.
pub fn build_quadratic_suite(centers: &[Vec<f64>], weights: &[f64]) -> Result<ObjectiveSuite, ObjectiveError> {
    if centers.len() != weights.len() {
        return Err(ObjectiveError::InvalidQuadratic(format!(
            "{} centers but {} weights",
            centers.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(ObjectiveError::InvalidQuadratic(format!("weight {w} is not positive")));
    }
    let oracles = centers
        .iter()
        .zip(weights)
        .map(|(c, &w)| {
            Arc::new(Quadratic {
                center: c.clone(),
                weight: w,
            }) as SubgradientOracle
        })
        .collect();
    let mut suite = ObjectiveSuite::new("quadratic", oracles)?;
    let total: f64 = weights.iter().sum();
    let mut xstar = vec![0.0; suite.dim];
    for (c, w) in centers.iter().zip(weights) {
        xstar.iter_mut().zip(c).for_each(|(x, ci)| *x += w * ci / total);
    }
    suite.minimizer = Some(xstar);
    Ok(suite)
}

/// Largest local subgradient norm over uniform samples of the box
/// `[low, high]^n`; an empirical stand-in for the uniform bound `l`.
pub fn estimate_subgradient_bound(suite: &ObjectiveSuite, low: f64, high: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = rng::substream(seed, 0, Purpose::Aux);
    let mut x = vec![0.0; suite.dim()];
    let mut d = vec![0.0; suite.dim()];
    let mut bound: f64 = 0.0;
    for _ in 0..samples {
        x.iter_mut().for_each(|v| *v = rng.random_range(low..=high));
        for o in suite.oracles() {
            o.subgradient_into(&x, &mut d);
            bound = bound.max(norm(&d));
        }
    }
    bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn l1_examples() {
        let f = L1Norm { dim: 2 };
        let e = evaluate(&f, &[2.0, -3.0]).unwrap();
        assert_eq!((e.value, e.subgradient), (5.0, vec![1.0, -1.0]));
        let e = evaluate(&f, &[0.0, 1.0]).unwrap();
        assert_eq!((e.value, e.subgradient), (1.0, vec![0.0, 1.0]));
        assert_eq!(
            evaluate(&f, &[1.0]),
            Err(ObjectiveError::DimensionMismatch { expected: 2, found: 1 })
        );
    }

    #[test]
    fn f5_tie_takes_linear_branch() {
        let e = evaluate(&ExampleFn::F5, &[0.0, 0.0]).unwrap();
        assert_eq!(e.value, 100.0);
        assert_eq!(e.subgradient, vec![-16.0, -96.0]);
    }

    #[test]
    fn example_values() {
        assert_abs_diff_eq!(ExampleFn::F2.value(&[1.0, 1.0]), 3.0 * 2f64.ln() + 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ExampleFn::F2.value(&[1.0, 1.0]), 4.0794, epsilon = 1e-4);
        assert_abs_diff_eq!(ExampleFn::F1.value(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(ExampleFn::F4.value(&[0.0, 0.0]), 0.0);
        let s = build_example_suite();
        assert_eq!((s.len(), s.dim()), (5, 2));
    }

    #[test]
    fn f1_is_overflow_safe() {
        let v = ExampleFn::F1.value(&[1e4, -1e4]);
        assert!(v.is_finite());
        let mut d = [0.0; 2];
        ExampleFn::F1.subgradient_into(&[1e4, 1e4], &mut d);
        assert!(d.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_unit_ball(&[0.3, 0.4]), vec![0.3, 0.4]);
        let p = project_unit_ball(&[3.0, 4.0]);
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-15);
        assert_eq!(project_unit_ball(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_subgradient(&[3.0, 4.0], NORM_EPS);
        assert_abs_diff_eq!(n[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(n[1], 0.8, epsilon = 1e-15);
        assert_eq!(normalize_subgradient(&[0.0, 0.0], NORM_EPS), vec![0.0, 0.0]);
        assert_eq!(normalize_subgradient(&[1e-18, 0.0], 1e-12), vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_minimizers() {
        let s = build_quadratic_suite(&[vec![0.0], vec![2.0]], &[1.0, 1.0]).unwrap();
        assert_eq!(s.closed_form_minimizer(), Some(&[1.0][..]));
        let s = build_quadratic_suite(&[vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]], &[1.0; 3]).unwrap();
        let x = s.closed_form_minimizer().unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
        let s = build_quadratic_suite(&[vec![0.0], vec![3.0]], &[2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s.closed_form_minimizer().unwrap()[0], 1.0, epsilon = 1e-15);
        // the sum's gradient vanishes there
        assert_abs_diff_eq!(s.subgradient(&[1.0])[0], 0.0, epsilon = 1e-15);
        assert!(build_quadratic_suite(&[vec![0.0]], &[0.0]).is_err());
        assert!(build_quadratic_suite(&[vec![0.0], vec![0.0, 1.0]], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn bound_estimate_is_reproducible() {
        let s = build_example_suite();
        let a = estimate_subgradient_bound(&s, -20.0, 20.0, 200, 3);
        assert_eq!(a, estimate_subgradient_bound(&s, -20.0, 20.0, 200, 3));
        assert!(a > 10.0);
    }

    fn oracles() -> Vec<SubgradientOracle> {
        let mut v: Vec<SubgradientOracle> = ExampleFn::ALL
            .iter()
            .map(|f| Arc::new(*f) as SubgradientOracle)
            .collect();
        v.push(Arc::new(Quadratic {
            center: vec![1.0, -2.0],
            weight: 0.7,
        }));
        v.push(Arc::new(L1Norm { dim: 2 }));
        v
    }

    #[test]
    fn subgradient_inequality_on_random_pairs() {
        use rand::Rng;
        let mut rng = rng::substream(42, 0, Purpose::Aux);
        for o in oracles() {
            // f4 is convex only on the strip |x1| <= 1
            let r1 = if o.label() == "f4" { 1.0 } else { 20.0 };
            for _ in 0..1000 {
                let x = [rng.random_range(-r1..=r1), rng.random_range(-20.0..20.0)];
                let z = [rng.random_range(-r1..=r1), rng.random_range(-20.0..20.0)];
                let e = evaluate(o.as_ref(), &x).unwrap();
                let lin: f64 = e
                    .subgradient
                    .iter()
                    .zip(z.iter().zip(&x))
                    .map(|(d, (a, b))| d * (a - b))
                    .sum();
                assert!(o.value(&z) >= e.value + lin - 1e-9, "{} at {x:?} vs {z:?}", o.label());
            }
        }
    }

    #[test]
    fn f4_is_not_convex_beyond_unit_strip() {
        // midpoint convexity fails along x1 once |x1| > 1
        let f = |x1: f64| ExampleFn::F4.value(&[x1, -x1]);
        assert!(f(3.0) > 0.5 * (f(2.0) + f(4.0)));
        assert!(f(0.5) <= 0.5 * (f(0.25) + f(0.75)));
    }

    #[test]
    fn subgradients_at_kinks_are_valid() {
        // points on the kinks of |.|, the ball boundary and the max tie
        let kinks: [[f64; 2]; 5] = [[0.0, 0.0], [0.0, 3.0], [0.6, 0.8], [1.0, 0.0], [0.5, 0.5]];
        for o in oracles().into_iter().filter(|o| o.label() != "f4") {
            for x in kinks {
                let e = evaluate(o.as_ref(), &x).unwrap();
                for dz in [[1e-3, 0.0], [-1e-3, 0.0], [0.0, 1e-3], [0.0, -1e-3], [2.0, -3.0]] {
                    let z = [x[0] + dz[0], x[1] + dz[1]];
                    let lin = e.subgradient[0] * dz[0] + e.subgradient[1] * dz[1];
                    assert!(o.value(&z) >= e.value + lin - 1e-9, "{} at {x:?}", o.label());
                }
            }
        }
    }

    /// True when no kink of the example functions lies within `h` of `x`.
    fn smooth_at(x: &[f64; 2], h: f64) -> bool {
        let t = x[0] + x[1];
        let r = x[0].hypot(x[1]);
        x[0].abs() > h && x[1].abs() > h && (r - 1.0).abs() > 2.0 * h && t.abs() > 2.0 * h && (t - 1.0).abs() > 2.0 * h
    }

    proptest! {
        #[test]
        fn gradients_match_central_differences(x1 in -20.0..20.0f64, x2 in -20.0..20.0f64) {
            let x = [x1, x2];
            let h = 1e-6;
            prop_assume!(smooth_at(&x, 1e-3));
            for o in oracles() {
                let e = evaluate(o.as_ref(), &x).unwrap();
                for c in 0..2 {
                    let mut p = x; p[c] += h;
                    let mut m = x; m[c] -= h;
                    let fd = (o.value(&p) - o.value(&m)) / (2.0 * h);
                    let g = e.subgradient[c];
                    // absolute floor for components that vanish
                    let scale = g.abs().max(1e-2 * o.value(&x).abs().max(1.0));
                    prop_assert!((fd - g).abs() <= 1e-5 * scale, "{} comp {} fd {} g {}", o.label(), c, fd, g);
                }
            }
        }

        #[test]
        fn normalized_norm_is_zero_or_one(d in prop::collection::vec(-1e6..1e6f64, 1..5)) {
            let n = norm(&normalize_subgradient(&d, NORM_EPS));
            prop_assert!(n == 0.0 || (n - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn projection_idempotent_nonexpansive(a in prop::array::uniform2(-50.0..50.0f64), b in prop::array::uniform2(-50.0..50.0f64)) {
            let pa = project_unit_ball(&a);
            let pb = project_unit_ball(&b);
            let ppa = project_unit_ball(&pa);
            prop_assert!((pa[0] - ppa[0]).abs() < 1e-15 && (pa[1] - ppa[1]).abs() < 1e-15);
            let dp = (pa[0] - pb[0]).hypot(pa[1] - pb[1]);
            prop_assert!(dp <= (a[0] - b[0]).hypot(a[1] - b[1]) + 1e-12);
        }
    }
}
