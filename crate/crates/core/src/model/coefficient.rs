//! Coefficient functions `A_k(t)` and forcing `r(t)`.
//!
//! Three representations are supported: a constant, a right-continuous
//! piecewise-constant function (optionally periodic), and a sampled table
//! interpolated linearly and held constant beyond its end samples. All
//! integrals are exact for these classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        value: f64,
    },
    /// `values[i]` holds on `[breakpoints[i], breakpoints[i + 1])`; the last
    /// value extends to infinity, or to `period` when the function repeats.
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<f64>,
    },
    /// `(t, value)` samples with strictly increasing `t`.
    Table {
        points: Vec<[f64; 2]>,
    },
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Constant { value: 0.0 }
    }
}

/// Index of the piece containing `u` under the right-continuous convention.
fn piece_index(breakpoints: &[f64], u: f64) -> usize {
    breakpoints.partition_point(|&b| b <= u).saturating_sub(1)
}

/// Index of the piece immediately to the left of `u`.
fn piece_index_left(breakpoints: &[f64], u: f64) -> usize {
    breakpoints.partition_point(|&b| b < u).saturating_sub(1)
}

/// Reduces `t` to `(k, u)` with `t = k * period + u` and `u` in `[0, period)`.
fn reduce(t: f64, period: f64) -> (f64, f64) {
    let k = (t / period).floor();
    let u = t - k * period;
    if u < 0.0 {
        (k - 1.0, (u + period).min(period))
    } else if u >= period {
        (k + 1.0, 0.0)
    } else {
        (k, u)
    }
}

/// Reduced position of `t` in a periodic piecewise function, snapped onto a
/// breakpoint (or the period start) when rounding left it a few ulps away.
fn reduce_snapped(breakpoints: &[f64], t: f64, period: f64) -> f64 {
    let u = reduce(t, period).1;
    let tol = 1e-12 * t.abs().max(period);
    if period - u <= tol {
        return 0.0;
    }
    let i = breakpoints.partition_point(|&b| b < u);
    for &b in [i.checked_sub(1), Some(i)]
        .iter()
        .flatten()
        .filter_map(|&j| breakpoints.get(j))
    {
        if (u - b).abs() <= tol {
            return b;
        }
    }
    u
}

pub(crate) fn table_value(points: &[[f64; 2]], t: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if t <= first[0] {
        return first[1];
    }
    if t >= last[0] {
        return last[1];
    }
    let i = points.partition_point(|p| p[0] <= t) - 1;
    let (a, b) = (points[i], points[i + 1]);
    let w = (t - a[0]) / (b[0] - a[0]);
    a[1] + w * (b[1] - a[1])
}

fn table_primitive(points: &[[f64; 2]], t: f64) -> f64 {
    let first = points[0];
    if t <= first[0] {
        return first[1] * (t - first[0]);
    }
    let mut acc = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if t >= b[0] {
            acc += 0.5 * (a[1] + b[1]) * (b[0] - a[0]);
        } else {
            let v = table_value(points, t);
            acc += 0.5 * (a[1] + v) * (t - a[0]);
            return acc;
        }
    }
    let last = points[points.len() - 1];
    acc + last[1] * (t - last[0])
}

impl CoefficientSpec {
    pub fn constant(value: f64) -> Self {
        CoefficientSpec::Constant { value }
    }

    pub fn piecewise(breakpoints: Vec<f64>, values: Vec<f64>) -> Self {
        CoefficientSpec::Piecewise {
            breakpoints,
            values,
            period: None,
        }
    }

    pub fn periodic(breakpoints: Vec<f64>, values: Vec<f64>, period: f64) -> Self {
        CoefficientSpec::Piecewise {
            breakpoints,
            values,
            period: Some(period),
        }
    }

    pub fn table(points: Vec<[f64; 2]>) -> Self {
        CoefficientSpec::Table { points }
    }

    /// Value at `t`, right-continuous at breakpoints.
    pub fn value(&self, t: f64) -> f64 {
        match self {
            CoefficientSpec::Constant { value } => *value,
            CoefficientSpec::Piecewise {
                breakpoints,
                values,
                period,
            } => {
                let u = match period {
                    Some(p) => reduce_snapped(breakpoints, t, *p),
                    None => t,
                };
                values[piece_index(breakpoints, u)]
            }
            CoefficientSpec::Table { points } => table_value(points, t),
        }
    }

    /// Left limit `A(t - 0)`.
    pub fn value_left(&self, t: f64) -> f64 {
        match self {
            CoefficientSpec::Piecewise {
                breakpoints,
                values,
                period,
            } => match period {
                Some(p) => {
                    let u = reduce_snapped(breakpoints, t, *p);
                    if u == 0.0 {
                        values[values.len() - 1]
                    } else {
                        values[piece_index_left(breakpoints, u)]
                    }
                }
                None => values[piece_index_left(breakpoints, t)],
            },
            _ => self.value(t),
        }
    }

    fn primitive(&self, t: f64) -> f64 {
        match self {
            CoefficientSpec::Constant { value } => value * t,
            CoefficientSpec::Piecewise {
                breakpoints,
                values,
                period,
            } => {
                let partial = |u: f64| -> f64 {
                    let idx = piece_index(breakpoints, u);
                    let mut acc = 0.0;
                    for i in 0..idx {
                        acc += values[i] * (breakpoints[i + 1] - breakpoints[i]);
                    }
                    acc + values[idx] * (u - breakpoints[idx])
                };
                match period {
                    Some(p) => {
                        let (k, u) = reduce(t, *p);
                        k * partial(*p) + partial(u)
                    }
                    None => partial(t),
                }
            }
            CoefficientSpec::Table { points } => table_primitive(points, t),
        }
    }

    /// Exact `∫_a^b A(s) ds`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        match self {
            CoefficientSpec::Constant { value } => value * (b - a),
            _ => self.primitive(b) - self.primitive(a),
        }
    }

    /// Discontinuity or kink locations strictly inside `(a, b)`, ascending.
    pub fn knots(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            CoefficientSpec::Constant { .. } => {}
            CoefficientSpec::Piecewise {
                breakpoints, period, ..
            } => match period {
                Some(p) => {
                    let k0 = (a / p).floor() as i64;
                    let k1 = (b / p).ceil() as i64;
                    for k in k0..=k1 {
                        for &bp in breakpoints {
                            let t = k as f64 * p + bp;
                            if t > a && t < b {
                                out.push(t);
                            }
                        }
                    }
                }
                None => out.extend(breakpoints.iter().copied().filter(|&t| t > a && t < b)),
            },
            CoefficientSpec::Table { points } => out.extend(points.iter().map(|p| p[0]).filter(|&t| t > a && t < b)),
        }
        out
    }

    /// Decomposes `A = A⁺ − A⁻` with both parts nonnegative.
    pub fn split_signs(&self) -> (CoefficientSpec, CoefficientSpec) {
        let pos = |v: f64| if v > 0.0 { v } else { 0.0 };
        let neg = |v: f64| if v < 0.0 { -v } else { 0.0 };
        match self {
            CoefficientSpec::Constant { value } => (
                CoefficientSpec::constant(pos(*value)),
                CoefficientSpec::constant(neg(*value)),
            ),
            CoefficientSpec::Piecewise {
                breakpoints,
                values,
                period,
            } => (
                CoefficientSpec::Piecewise {
                    breakpoints: breakpoints.clone(),
                    values: values.iter().map(|&v| pos(v)).collect(),
                    period: *period,
                },
                CoefficientSpec::Piecewise {
                    breakpoints: breakpoints.clone(),
                    values: values.iter().map(|&v| neg(v)).collect(),
                    period: *period,
                },
            ),
            CoefficientSpec::Table { points } => {
                // zero crossings become samples so both parts stay exact
                let mut refined = Vec::with_capacity(points.len() * 2);
                for (i, p) in points.iter().enumerate() {
                    if i > 0 {
                        let q = points[i - 1];
                        if (q[1] < 0.0 && p[1] > 0.0) || (q[1] > 0.0 && p[1] < 0.0) {
                            let t = q[0] + q[1] * (p[0] - q[0]) / (q[1] - p[1]);
                            if t > q[0] && t < p[0] {
                                refined.push([t, 0.0]);
                            }
                        }
                    }
                    refined.push(*p);
                }
                (
                    CoefficientSpec::table(refined.iter().map(|p| [p[0], pos(p[1])]).collect()),
                    CoefficientSpec::table(refined.iter().map(|p| [p[0], neg(p[1])]).collect()),
                )
            }
        }
    }

    /// `sup_{0 ≤ t ≤ horizon − window} ∫_t^{t+window} A(s) ds`.
    ///
    /// The window integral is piecewise quadratic in `t` with joints where
    /// `t` or `t + window` meets a knot; between joints its derivative is
    /// linear, so the supremum is attained at a joint or at the single
    /// stationary point of a piece. All candidates are evaluated exactly.
    pub fn sliding_sup_integral(&self, window: f64, horizon: f64) -> Result<f64> {
        if !(window > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "window and horizon must be positive (window {window}, horizon {horizon})"
            )));
        }
        if window > horizon {
            return Err(Error::WindowExceedsHorizon { window, horizon });
        }
        if let CoefficientSpec::Constant { value } = self {
            return Ok(value * window);
        }
        let hi = horizon - window;
        let mut cands = vec![0.0, hi];
        for k in self.knots(0.0, horizon) {
            for c in [k, k - window] {
                if c > 0.0 && c < hi {
                    cands.push(c);
                }
            }
        }
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let window_integral = |t: f64| self.integral(t, t + window);
        let mut best = f64::NEG_INFINITY;
        for (i, &c) in cands.iter().enumerate() {
            best = best.max(window_integral(c));
            if let (CoefficientSpec::Table { .. }, Some(&d)) = (self, cands.get(i + 1)) {
                let g0 = self.value(c + window) - self.value(c);
                let g1 = self.value_left(d + window) - self.value_left(d);
                if g0 > 0.0 && g1 < 0.0 {
                    let r = c + g0 / (g0 - g1) * (d - c);
                    best = best.max(window_integral(r));
                }
            }
        }
        Ok(best)
    }

    /// `(min, max)` of the function over `[a, b)`.
    pub fn range(&self, a: f64, b: f64) -> (f64, f64) {
        let mut lo = self.value(a);
        let mut hi = lo;
        for t in self.knots(a, b) {
            let v = self.value(t);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if b > a {
            let v = self.value_left(b);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Finiteness and structural problems, phrased for a validation report.
    pub(crate) fn structural_issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            CoefficientSpec::Constant { value } => {
                if !value.is_finite() {
                    out.push("constant value is not finite".to_string());
                }
            }
            CoefficientSpec::Piecewise {
                breakpoints,
                values,
                period,
            } => {
                if breakpoints.is_empty() || breakpoints.len() != values.len() {
                    out.push(format!(
                        "piecewise needs one value per breakpoint (got {} breakpoints, {} values)",
                        breakpoints.len(),
                        values.len()
                    ));
                    return out;
                }
                if breakpoints[0] != 0.0 {
                    out.push(format!(
                        "piecewise breakpoints must start at 0 (got {})",
                        breakpoints[0]
                    ));
                }
                if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    out.push("piecewise breakpoints not strictly increasing".to_string());
                }
                if breakpoints.iter().chain(values).any(|v| !v.is_finite()) {
                    out.push("piecewise contains a non-finite number".to_string());
                }
                if let Some(p) = period {
                    if !(p.is_finite() && *p > 0.0) {
                        out.push(format!("period must be positive (got {p})"));
                    } else if breakpoints.last().is_some_and(|b| b >= p) {
                        out.push(format!("breakpoints must lie inside one period [0, {p})"));
                    }
                }
            }
            CoefficientSpec::Table { points } => {
                if points.is_empty() {
                    out.push("table has no points".to_string());
                    return out;
                }
                if points.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                    out.push("table times not strictly increasing".to_string());
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    out.push("table contains a non-finite number".to_string());
                }
            }
        }
        out
    }
}

/// `sup_{t ∈ [a, b)} Σ_k f_k(t)` for right-continuous piecewise functions.
pub fn sup_of_sum(specs: &[CoefficientSpec], a: f64, b: f64) -> f64 {
    let mut pts = vec![a];
    for s in specs {
        pts.extend(s.knots(a, b));
    }
    let sum = |t: f64| specs.iter().map(|s| s.value(t)).sum::<f64>();
    let mut best = pts.iter().map(|&t| sum(t)).fold(f64::NEG_INFINITY, f64::max);
    if b > a {
        best = best.max(specs.iter().map(|s| s.value_left(b)).sum());
    }
    best
}
