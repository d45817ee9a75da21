use serde::{Deserialize, Serialize};

use super::coefficient::table_value;

/// Prehistory `φ(ξ)` for `ξ < 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistorySpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `values[i]` on `[breakpoints[i], breakpoints[i + 1])`; `values[0]`
    /// also holds before the first breakpoint.
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// Linear interpolation, clamped to the nearest sample outside the table.
    Table {
        points: Vec<[f64; 2]>,
    },
}

impl HistorySpec {
    pub fn constant(value: f64) -> Self {
        HistorySpec::Constant { value }
    }

    pub fn value(&self, xi: f64) -> f64 {
        match self {
            HistorySpec::Zero => 0.0,
            HistorySpec::Constant { value } => *value,
            HistorySpec::Piecewise { breakpoints, values } => {
                values[breakpoints.partition_point(|&b| b <= xi).saturating_sub(1)]
            }
            HistorySpec::Table { points } => table_value(points, xi),
        }
    }

    /// `sup |φ|`.
    pub fn sup_abs(&self) -> f64 {
        match self {
            HistorySpec::Zero => 0.0,
            HistorySpec::Constant { value } => value.abs(),
            HistorySpec::Piecewise { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
            HistorySpec::Table { points } => points.iter().fold(0.0, |m, p| m.max(p[1].abs())),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            HistorySpec::Zero => true,
            HistorySpec::Constant { value } => *value >= 0.0,
            HistorySpec::Piecewise { values, .. } => values.iter().all(|&v| v >= 0.0),
            HistorySpec::Table { points } => points.iter().all(|p| p[1] >= 0.0),
        }
    }

    /// Breakpoints / sample times, all negative.
    pub fn knots(&self) -> Vec<f64> {
        match self {
            HistorySpec::Piecewise { breakpoints, .. } => breakpoints.clone(),
            HistorySpec::Table { points } => points.iter().map(|p| p[0]).collect(),
            _ => Vec::new(),
        }
        .into_iter()
        .filter(|&t| t < 0.0)
        .collect()
    }

    pub(crate) fn structural_issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            HistorySpec::Zero => {}
            HistorySpec::Constant { value } => {
                if !value.is_finite() {
                    out.push("(a4): history value is not finite".to_string());
                }
            }
            HistorySpec::Piecewise { breakpoints, values } => {
                if breakpoints.is_empty() || breakpoints.len() != values.len() {
                    out.push("(a4): history piecewise needs one value per breakpoint".to_string());
                } else if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    out.push("(a4): history breakpoints not strictly increasing".to_string());
                }
                if breakpoints.iter().chain(values).any(|v| !v.is_finite()) {
                    out.push("(a4): history contains a non-finite number".to_string());
                }
            }
            HistorySpec::Table { points } => {
                if points.is_empty() {
                    out.push("(a4): history table has no points".to_string());
                } else if points.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                    out.push("(a4): history table times not strictly increasing".to_string());
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    out.push("(a4): history contains a non-finite number".to_string());
                }
            }
        }
        out
    }
}
