//! Two time-scale step sizes `alpha_k = a1 / (k+1)^d1`, `beta_k = a2 / (k+1)^d2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentClause {
    /// `0 < delta1 < delta2`
    Ordering,
    /// `delta2 <= 1`
    UpperBound,
    /// `delta2 - delta1 >= 1/2`
    Gap,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("invalid exponents (delta1 = {delta1}, delta2 = {delta2}): {clause:?} clause violated")]
    InvalidExponents {
        clause: ExponentClause,
        delta1: f64,
        delta2: f64,
    },
    #[error("coefficient {name} = {value} must be positive")]
    NonpositiveCoefficient { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub a1: f64,
    pub a2: f64,
    pub delta1: f64,
    pub delta2: f64,
    #[serde(default = "default_strict")]
    pub strict: bool,
    /// Non-fatal findings (relaxed exponent checks, `alpha_0 > 1`).
    #[serde(default, skip_deserializing)]
    pub warnings: Vec<String>,
}

fn default_strict() -> bool {
    true
}

fn exponent_violation(delta1: f64, delta2: f64) -> Option<ExponentClause> {
    if !(delta1 > 0.0 && delta1 < delta2) {
        Some(ExponentClause::Ordering)
    } else if delta2 > 1.0 {
        Some(ExponentClause::UpperBound)
    } else if delta2 - delta1 < 0.5 {
        Some(ExponentClause::Gap)
    } else {
        None
    }
}

/// Strict mode rejects exponents outside the sufficient region; relaxed mode
/// only requires positive exponents and records a warning.
pub fn make_schedule(a1: f64, a2: f64, delta1: f64, delta2: f64, strict: bool) -> Result<StepSchedule, ScheduleError> {
    for (name, value) in [("a1", a1), ("a2", a2)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(ScheduleError::NonpositiveCoefficient { name, value });
        }
    }
    let mut warnings = Vec::new();
    if let Some(clause) = exponent_violation(delta1, delta2) {
        let relaxed_ok = delta1.is_finite() && delta2.is_finite() && delta1 > 0.0 && delta2 > 0.0;
        if strict || !relaxed_ok {
            return Err(ScheduleError::InvalidExponents { clause, delta1, delta2 });
        }
        warnings.push(format!(
            "exponents ({delta1}, {delta2}) violate the {clause:?} clause; accepted in relaxed mode"
        ));
    }
    if a1 > 1.0 {
        warnings.push(format!(
            "alpha_0 = {a1} > 1: the consensus step is not a convex combination early on"
        ));
    }
    Ok(StepSchedule {
        a1,
        a2,
        delta1,
        delta2,
        strict,
        warnings,
    })
}

impl StepSchedule {
    /// Re-runs validation on deserialized fields.
    pub fn validated(&self) -> Result<StepSchedule, ScheduleError> {
        make_schedule(self.a1, self.a2, self.delta1, self.delta2, self.strict)
    }

    #[inline]
    pub fn alpha(&self, k: usize) -> f64 {
        self.a1 / ((k + 1) as f64).powf(self.delta1)
    }

    #[inline]
    pub fn beta(&self, k: usize) -> f64 {
        self.a2 / ((k + 1) as f64).powf(self.delta2)
    }

    pub fn step_sizes(&self, k: usize) -> (f64, f64) {
        (self.alpha(k), self.beta(k))
    }

    /// `sum_{i=from}^{to} alpha_i`, zero when `from > to`.
    pub fn alpha_sum(&self, from: usize, to: usize) -> f64 {
        (from..=to).map(|i| self.alpha(i)).sum()
    }

    /// The schedule of the five-agent example.
    pub fn example() -> StepSchedule {
        make_schedule(1.0, 1.0, 0.3, 0.9, true).expect("valid exponents")
    }
}
