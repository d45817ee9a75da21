use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CoefficientSpec, DelaySpec, HistorySpec, ImpulseSchedule};
use crate::error::{Error, Result};

/// Number of periods a periodic schedule is unrolled to when no horizon is given.
pub const DEFAULT_PERIODS: f64 = 20.0;

/// One delayed term `A_k(t) x[h_k(t)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coefficient: CoefficientSpec,
    pub delay: DelaySpec,
}

impl Term {
    pub fn new(coefficient: CoefficientSpec, delay: DelaySpec) -> Self {
        Term { coefficient, delay }
    }
}

/// `ẋ(t) − Σ_k A_k(t) x[h_k(t)] = r(t)`, `x(ξ) = φ(ξ)` for `ξ < 0`,
/// `x(τ_j) = B_j x(τ_j − 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub terms: Vec<Term>,
    #[serde(default)]
    pub impulses: ImpulseSchedule,
    #[serde(default)]
    pub history: HistorySpec,
    #[serde(default)]
    pub forcing: CoefficientSpec,
    pub x0: f64,
    /// Finite horizon standing in for `t → ∞` in suprema and simulations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Hypothesis {
    A1,
    A2,
    A3,
    A4,
    /// The equation needs at least one term.
    Structure,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::A1 => "(a1)",
            Hypothesis::A2 => "(a2)",
            Hypothesis::A3 => "(a3)",
            Hypothesis::A4 => "(a4)",
            Hypothesis::Structure => "(structure)",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub hypothesis: Hypothesis,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.hypothesis, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Every `A_k ≥ 0` on the analysis horizon.
    pub nonnegative_coefficients: bool,
    /// Every `B_j ≥ 0`.
    pub nonnegative_gains: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("OK");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Splits a message of the form `"(aN): text"` into hypothesis and text.
fn tagged(default: Hypothesis, msg: String) -> Violation {
    for (tag, h) in [
        ("(a1): ", Hypothesis::A1),
        ("(a2): ", Hypothesis::A2),
        ("(a3): ", Hypothesis::A3),
        ("(a4): ", Hypothesis::A4),
    ] {
        if let Some(rest) = msg.strip_prefix(tag) {
            return Violation {
                hypothesis: h,
                message: rest.to_string(),
            };
        }
    }
    Violation {
        hypothesis: default,
        message: msg,
    }
}

impl Problem {
    pub fn new(terms: Vec<Term>, impulses: ImpulseSchedule, x0: f64) -> Self {
        Problem {
            terms,
            impulses,
            history: HistorySpec::Zero,
            forcing: CoefficientSpec::default(),
            x0,
            horizon: None,
        }
    }

    /// Single-term convenience constructor.
    pub fn single(coefficient: CoefficientSpec, delay: DelaySpec, impulses: ImpulseSchedule) -> Self {
        Problem::new(vec![Term::new(coefficient, delay)], impulses, 1.0)
    }

    pub fn with_history(mut self, history: HistorySpec) -> Self {
        self.history = history;
        self
    }

    pub fn with_forcing(mut self, forcing: CoefficientSpec) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn with_impulses(mut self, impulses: ImpulseSchedule) -> Self {
        self.impulses = impulses;
        self
    }

    /// Number of delayed terms `m`.
    pub fn m(&self) -> usize {
        self.terms.len()
    }

    /// Horizon used for finite-horizon suprema: the explicit horizon, else
    /// the last listed impulse for finite schedules, else the last listed
    /// impulse plus `DEFAULT_PERIODS` periods of the periodic rule.
    pub fn analysis_horizon(&self) -> Option<f64> {
        if let Some(h) = self.horizon {
            return Some(h);
        }
        let last = self.impulses.times.last().copied();
        match (self.impulses.periodic, last) {
            (Some(rule), _) => Some(last.unwrap_or(0.0) + DEFAULT_PERIODS * rule.period),
            (None, Some(t)) => Some(t),
            (None, None) => None,
        }
    }

    /// Largest lag `t − h_k(t)` over all terms.
    pub fn max_lag(&self) -> f64 {
        self.terms.iter().map(|t| t.delay.max_lag()).fold(0.0, f64::max)
    }

    pub fn coefficients_nonnegative(&self, horizon: f64) -> bool {
        self.terms.iter().all(|t| t.coefficient.range(0.0, horizon).0 >= 0.0)
    }

    pub fn gains_nonnegative(&self, horizon: f64) -> bool {
        self.impulses.until(horizon).iter().all(|i| i.gain >= 0.0)
    }

    /// Checks the representable parts of (a1)–(a4).
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.terms.is_empty() {
            violations.push(Violation {
                hypothesis: Hypothesis::Structure,
                message: "at least one delayed term is required (m ≥ 1)".to_string(),
            });
        }
        for m in self.impulses.structural_issues() {
            violations.push(tagged(Hypothesis::A1, m));
        }
        for (k, term) in self.terms.iter().enumerate() {
            for m in term.coefficient.structural_issues() {
                violations.push(Violation {
                    hypothesis: Hypothesis::A2,
                    message: format!("coefficient {}: {m}", k + 1),
                });
            }
            for m in term.delay.structural_issues() {
                violations.push(tagged(Hypothesis::A3, m));
            }
        }
        for m in self.forcing.structural_issues() {
            violations.push(Violation {
                hypothesis: Hypothesis::A2,
                message: format!("forcing: {m}"),
            });
        }
        for m in self.history.structural_issues() {
            violations.push(tagged(Hypothesis::A4, m));
        }
        if !self.x0.is_finite() {
            violations.push(Violation {
                hypothesis: Hypothesis::A2,
                message: "x0 is not finite".to_string(),
            });
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                violations.push(Violation {
                    hypothesis: Hypothesis::Structure,
                    message: format!("horizon must be positive (got {h})"),
                });
            }
        }
        let (nonneg_a, nonneg_b) = if violations.is_empty() {
            let h = self.analysis_horizon().unwrap_or(1.0);
            (self.coefficients_nonnegative(h), self.gains_nonnegative(h))
        } else {
            (false, false)
        };
        ValidationReport {
            violations,
            nonnegative_coefficients: nonneg_a,
            nonnegative_gains: nonneg_b,
        }
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Invalid(report))
        }
    }

    /// Parses the JSON problem format. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Problem> {
        serde_json::from_str(text).map_err(|e| Error::Parse(describe_json_error(&e)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }
}

fn describe_json_error(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return format!(
                "unknown key: {} (line {}, column {})",
                &rest[..end],
                e.line(),
                e.column()
            );
        }
    }
    msg
}
