//! Centralized reference solution for the global objective, computed by
//! grid search followed by a normalized subgradient polish. Shares no code
//! with the distributed iteration.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::objective::ObjectiveSuite;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub low: f64,
    pub high: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self { low: -20.0, high: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    GridPolish {
        search_box: SearchBox,
        grid_pts: usize,
        polish_iters: usize,
        step_scale: f64,
    },
    File {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub provenance: Provenance,
}

impl Reference {
    /// Known minimizer; `f_star` is evaluated from the suite.
    pub fn exact(suite: &ObjectiveSuite, x_star: Vec<f64>) -> Self {
        Self {
            f_star: suite.value(&x_star),
            x_star,
            provenance: Provenance::ClosedForm,
        }
    }
}

/// Grid minimization of `f = sum f_i` over `[low, high]^n`, then
/// `x <- x - (c / sqrt(t)) g / |g|` from the best grid point with `c` the grid
/// spacing. Fails with `BoxTooSmall` if the answer sits within one grid
/// spacing of the boundary.
pub fn centralized_reference(
    suite: &ObjectiveSuite,
    search_box: SearchBox,
    grid_pts: usize,
    polish_iters: usize,
) -> Result<Reference, AnalysisError> {
    let n = suite.dim();
    if n > 3 {
        return Err(AnalysisError::TooManyDimensions(n));
    }
    let SearchBox { low, high } = search_box;
    if !(low.is_finite() && high.is_finite() && low < high) || grid_pts < 2 {
        return Err(AnalysisError::Invalid(format!(
            "box [{low}, {high}] with {grid_pts} points per axis"
        )));
    }
    let h = (high - low) / (grid_pts - 1) as f64;
    let coord = |i: usize| low + h * i as f64;

    let mut best_idx = vec![0usize; n];
    let mut best_val = f64::INFINITY;
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    'grid: loop {
        for (xc, &ic) in x.iter_mut().zip(&idx) {
            *xc = coord(ic);
        }
        let v = suite.value(&x);
        if v < best_val {
            best_val = v;
            best_idx.clone_from(&idx);
        }
        for i in idx.iter_mut() {
            *i += 1;
            if *i < grid_pts {
                continue 'grid;
            }
            *i = 0;
        }
        break;
    }

    let mut x: Vec<f64> = best_idx.iter().map(|&i| coord(i)).collect();
    let mut best_x = x.clone();
    for t in 1..=polish_iters {
        let g = suite.subgradient(&x);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn == 0.0 {
            break;
        }
        let step = h / (t as f64).sqrt() / gn;
        x.iter_mut().zip(&g).for_each(|(xc, gc)| *xc -= step * gc);
        let v = suite.value(&x);
        if v < best_val {
            best_val = v;
            best_x.clone_from(&x);
        }
    }

    if best_x.iter().any(|&c| c <= low + h || c >= high - h) {
        return Err(AnalysisError::BoxTooSmall { x: best_x });
    }
    Ok(Reference {
        f_star: suite.value(&best_x),
        x_star: best_x,
        provenance: Provenance::GridPolish {
            search_box,
            grid_pts,
            polish_iters,
            step_scale: h,
        },
    })
}
