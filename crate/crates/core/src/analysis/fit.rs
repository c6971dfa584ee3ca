//! Exponential decay fit `E|Phi(k,s)| ~ c0 exp(-c1 sum alpha)` and truncated
//! surrogates for the three summability statements about transfer norms.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::transfer::TransferEstimate;
use super::AnalysisError;
use crate::schedule::StepSchedule;

/// Below this fitted rate the estimates are considered flat.
const NO_DECAY_RATE: f64 = 1e-8;
/// Last-decade share below which a truncated series counts as summable.
pub const TAIL_RATIO_LIMIT: f64 = 0.05;
const TOP_DECADE_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayVerdict {
    Decay,
    NoDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesCheck {
    /// Largest `k` included.
    pub horizon: usize,
    pub total: f64,
    /// Share of the total contributed by `k > horizon / 10`.
    pub last_decade_ratio: f64,
    pub summable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSumCheck {
    pub horizon: usize,
    /// `sum_{s<=k} beta_s E|Phi(k, s+1)|` for `k = 0..=horizon`.
    pub sums: Vec<f64>,
    /// Means of `sums` over log-spaced bins of the top decade.
    pub top_decade_bin_means: Vec<f64>,
    pub decreasing: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SumChecks {
    /// `sum_k beta_{k+1} E|Phi(k,0)|`
    pub series_k0: Option<SeriesCheck>,
    /// `sum_{s<=k} beta_s E|Phi(k,s+1)|` as a sequence in `k`
    pub inner: Option<InnerSumCheck>,
    /// `sum_k beta_{k+1} sum_{s<=k} beta_s E|Phi(k,s+1)|`
    pub double: Option<SeriesCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c0: f64,
    pub c1: f64,
    pub r_squared: f64,
    pub points: usize,
    pub verdict: DecayVerdict,
    pub sum_checks: SumChecks,
}

/// Least squares of `log mean_norm` on `sum_alpha` over all estimates with a
/// positive mean, plus whatever summability checks the estimates support.
pub fn fit_decay(estimates: &[TransferEstimate], schedule: &StepSchedule) -> Result<DecayFit, AnalysisError> {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.log_mean_norm.is_finite())
        .map(|e| (e.sum_alpha, e.log_mean_norm))
        .collect();
    if pts.len() < 3 {
        return Err(AnalysisError::InsufficientData(format!(
            "{} estimates with positive mean norm, need at least 3",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(AnalysisError::InsufficientData(
            "all estimates share one value of sum alpha".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot <= 1e-300 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    let c1 = -slope;
    Ok(DecayFit {
        c0: intercept.exp(),
        c1,
        r_squared,
        points: pts.len(),
        verdict: if c1 > NO_DECAY_RATE {
            DecayVerdict::Decay
        } else {
            DecayVerdict::NoDecay
        },
        sum_checks: summability(estimates, schedule),
    })
}

fn series(terms: &[f64]) -> SeriesCheck {
    let horizon = terms.len() - 1;
    let total: f64 = terms.iter().sum();
    let tail: f64 = terms.iter().skip(horizon / 10 + 1).sum();
    let last_decade_ratio = if total > 0.0 { tail / total } else { 0.0 };
    SeriesCheck {
        horizon,
        total,
        last_decade_ratio,
        summable: last_decade_ratio < TAIL_RATIO_LIMIT,
    }
}

/// Truncated sums over the longest contiguous `k = 0, 1, ...` prefix the
/// estimates cover.
pub fn summability(estimates: &[TransferEstimate], schedule: &StepSchedule) -> SumChecks {
    let lookup: HashMap<(usize, usize), f64> = estimates.iter().map(|e| ((e.k, e.s), e.mean_norm)).collect();

    let k0: Vec<f64> = (0..)
        .map_while(|k| lookup.get(&(k, 0)).map(|m| schedule.beta(k + 1) * m))
        .collect();

    let inner_sums: Vec<f64> = (0..)
        .map_while(|k| {
            (0..=k)
                .map(|s| lookup.get(&(k, s + 1)).map(|m| schedule.beta(s) * m))
                .sum::<Option<f64>>()
        })
        .collect();

    let series_k0 = (k0.len() >= 10).then(|| series(&k0));
    let (inner, double) = if inner_sums.len() >= 10 {
        let horizon = inner_sums.len() - 1;
        let lo = (horizon as f64 / 10.0).max(1.0);
        let edges: Vec<usize> = (0..=TOP_DECADE_BINS)
            .map(|b| (lo * 10f64.powf(b as f64 / TOP_DECADE_BINS as f64)).round() as usize)
            .collect();
        let bin_means: Vec<f64> = edges
            .windows(2)
            .map(|w| {
                let hi = w[1].min(horizon);
                let slice = &inner_sums[w[0]..=hi];
                slice.iter().sum::<f64>() / slice.len() as f64
            })
            .collect();
        let decreasing = bin_means.windows(2).all(|w| w[1] < w[0]);
        let outer: Vec<f64> = inner_sums
            .iter()
            .enumerate()
            .map(|(k, s)| schedule.beta(k + 1) * s)
            .collect();
        (
            Some(InnerSumCheck {
                horizon,
                sums: inner_sums,
                top_decade_bin_means: bin_means,
                decreasing,
            }),
            Some(series(&outer)),
        )
    } else {
        (None, None)
    };
    SumChecks {
        series_k0,
        inner,
        double,
    }
}
