//! Delay functions `h_k(t) ≤ t`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    /// `h(t) = t`
    Identity,
    /// `h(t) = t − delta`
    ConstantLag { delta: f64 },
    /// Piecewise-linear `(t, h)` samples with nondecreasing `t`. A repeated
    /// time encodes a jump; the later sample holds from that time on
    /// (right-continuous). Outside the sampled range the lag `t − h(t)` is
    /// held at its end value. With `period = P` the table covers `[0, P]`
    /// and repeats as `h(t + P) = h(t) + P`.
    Table {
        points: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<f64>,
    },
}

/// One linear piece `(t0, h0) → (t1, h1)` of a delay on a bounded range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Piece {
    pub t0: f64,
    pub h0: f64,
    pub t1: f64,
    pub h1: f64,
}

/// `(k, u)` with `t = k·period + u`, `u` in `[0, period)` (or `(0, period]`
/// for left limits). `u` is snapped onto a table time when rounding left it
/// a few ulps away, so one-sided values at jumps are taken correctly.
fn reduce_table(points: &[[f64; 2]], t: f64, period: f64, left: bool) -> (f64, f64) {
    let tol = 1e-12 * t.abs().max(period);
    let mut k = if left {
        (t / period).ceil() - 1.0
    } else {
        (t / period).floor()
    };
    let mut u = (t - k * period).clamp(0.0, period);
    if !left && period - u <= tol {
        k += 1.0;
        u = 0.0;
    } else if left && u <= tol {
        k -= 1.0;
        u = period;
    }
    let i = points.partition_point(|p| p[0] < u);
    for j in [i.checked_sub(1), Some(i)].into_iter().flatten() {
        if let Some(p) = points.get(j) {
            if (p[0] - u).abs() <= tol {
                u = p[0];
            }
        }
    }
    (k, u)
}

fn interp(points: &[[f64; 2]], u: f64, left: bool) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if u < first[0] || (left && u == first[0]) {
        return u - (first[0] - first[1]);
    }
    if u > last[0] || (!left && u == last[0]) {
        return u - (last[0] - last[1]);
    }
    // left: a.t < u <= b.t (earlier duplicate); right: a.t <= u < b.t (later duplicate)
    let idx = if left {
        points.partition_point(|p| p[0] < u)
    } else {
        points.partition_point(|p| p[0] <= u)
    };
    let (a, b) = (points[idx - 1], points[idx]);
    a[1] + (u - a[0]) * (b[1] - a[1]) / (b[0] - a[0])
}

impl DelaySpec {
    pub fn constant_lag(delta: f64) -> Self {
        DelaySpec::ConstantLag { delta }
    }

    pub fn table(points: Vec<[f64; 2]>) -> Self {
        DelaySpec::Table { points, period: None }
    }

    pub fn periodic_table(points: Vec<[f64; 2]>, period: f64) -> Self {
        DelaySpec::Table {
            points,
            period: Some(period),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, DelaySpec::Identity) || matches!(self, DelaySpec::ConstantLag { delta } if *delta == 0.0)
    }

    /// `h(t)`, right-continuous at table jumps.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DelaySpec::Identity => t,
            DelaySpec::ConstantLag { delta } => t - delta,
            DelaySpec::Table { points, period } => match period {
                Some(p) => {
                    let (k, u) = reduce_table(points, t, *p, false);
                    k * p + interp(points, u, false)
                }
                None => interp(points, t, false),
            },
        }
    }

    /// Left limit `h(t − 0)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self {
            DelaySpec::Table { points, period } => match period {
                Some(p) => {
                    let (k, u) = reduce_table(points, t, *p, true);
                    k * p + interp(points, u, true)
                }
                None => interp(points, t, true),
            },
            _ => self.eval(t),
        }
    }

    /// Linear pieces covering `[a, b]`, in order.
    pub(crate) fn pieces(&self, a: f64, b: f64) -> Vec<Piece> {
        match self {
            DelaySpec::Identity => vec![Piece {
                t0: a,
                h0: a,
                t1: b,
                h1: b,
            }],
            DelaySpec::ConstantLag { delta } => vec![Piece {
                t0: a,
                h0: a - delta,
                t1: b,
                h1: b - delta,
            }],
            DelaySpec::Table { .. } => {
                let mut cuts = vec![a];
                cuts.extend(self.knots(a, b));
                cuts.push(b);
                cuts.dedup();
                // evaluate each piece through the table segment holding its
                // midpoint, so rounding at the cuts cannot pick a neighbour
                cuts.windows(2)
                    .map(|w| {
                        let line = self.line_at(0.5 * (w[0] + w[1]));
                        Piece {
                            t0: w[0],
                            h0: line(w[0]),
                            t1: w[1],
                            h1: line(w[1]),
                        }
                    })
                    .collect()
            }
        }
    }

    /// The linear function that coincides with `h` near `t`.
    fn line_at(&self, t: f64) -> impl Fn(f64) -> f64 {
        let (shift, u) = match self {
            DelaySpec::Table { period: Some(p), .. } => {
                let k = (t / p).floor();
                (k * p, (t - k * p).clamp(0.0, *p))
            }
            _ => (0.0, t),
        };
        let (h0, slope) = match self {
            DelaySpec::Identity => (u, 1.0),
            DelaySpec::ConstantLag { delta } => (u - delta, 1.0),
            DelaySpec::Table { points, .. } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if u < first[0] || u >= last[0] || points.len() == 1 {
                    (interp(points, u, false), 1.0)
                } else {
                    let idx = points.partition_point(|p| p[0] <= u);
                    let (a, b) = (points[idx - 1], points[idx]);
                    let slope = (b[1] - a[1]) / (b[0] - a[0]);
                    (a[1] + (u - a[0]) * slope, slope)
                }
            }
        };
        let t_ref = shift + u;
        move |x: f64| shift + h0 + (x - t_ref) * slope
    }

    /// Table sample times strictly inside `(a, b)`, ascending.
    pub fn knots(&self, a: f64, b: f64) -> Vec<f64> {
        let DelaySpec::Table { points, period } = self else {
            return Vec::new();
        };
        let mut out = Vec::new();
        match period {
            Some(p) => {
                let k0 = (a / p).floor() as i64;
                let k1 = (b / p).ceil() as i64;
                for k in k0..=k1 {
                    for pt in points {
                        let t = k as f64 * p + pt[0];
                        if t > a && t < b {
                            out.push(t);
                        }
                    }
                }
            }
            None => out.extend(points.iter().map(|p| p[0]).filter(|&t| t > a && t < b)),
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// `(min, max)` of the lag `t − h(t)` over all `t`.
    pub fn lag_bounds(&self) -> (f64, f64) {
        match self {
            DelaySpec::Identity => (0.0, 0.0),
            DelaySpec::ConstantLag { delta } => (*delta, *delta),
            DelaySpec::Table { points, .. } => points
                .iter()
                .map(|p| p[0] - p[1])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| (lo.min(l), hi.max(l))),
        }
    }

    pub fn max_lag(&self) -> f64 {
        self.lag_bounds().1
    }

    /// Times `t` in `(a, b]` with `h(t) = d` for some `d` in `targets`
    /// (sorted ascending). Identity delays are skipped: their crossings
    /// coincide with the targets themselves.
    pub(crate) fn crossings(&self, targets: &[f64], a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            DelaySpec::Identity => {}
            DelaySpec::ConstantLag { delta } => {
                if *delta > 0.0 {
                    out.extend(targets.iter().map(|d| d + delta).filter(|&t| t > a && t <= b));
                }
            }
            DelaySpec::Table { .. } => {
                for pc in self.pieces(a, b) {
                    if pc.h1 == pc.h0 {
                        continue;
                    }
                    let (lo, hi) = (pc.h0.min(pc.h1), pc.h0.max(pc.h1));
                    let start = targets.partition_point(|&d| d < lo);
                    for &d in targets[start..].iter().take_while(|&&d| d <= hi) {
                        let t = pc.t0 + (d - pc.h0) * (pc.t1 - pc.t0) / (pc.h1 - pc.h0);
                        if t > a && t <= b {
                            out.push(t);
                        }
                    }
                }
            }
        }
        out
    }

    pub(crate) fn structural_issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            DelaySpec::Identity => {}
            DelaySpec::ConstantLag { delta } => {
                if !delta.is_finite() {
                    out.push("(a3): delay lag is not finite".to_string());
                } else if *delta < 0.0 {
                    out.push(format!("(a3): h(t) > t for lag {delta} < 0"));
                }
            }
            DelaySpec::Table { points, period } => {
                if points.is_empty() {
                    out.push("(a3): delay table has no points".to_string());
                    return out;
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    out.push("(a3): delay table contains a non-finite number".to_string());
                    return out;
                }
                if points.windows(2).any(|w| w[1][0] < w[0][0]) {
                    out.push("(a3): delay table times decrease".to_string());
                }
                if points.windows(3).any(|w| w[0][0] == w[1][0] && w[1][0] == w[2][0]) {
                    out.push("(a3): delay table repeats a time more than twice".to_string());
                }
                for p in points {
                    if p[1] > p[0] + 1e-12 * p[0].abs().max(1.0) {
                        out.push(format!("(a3): h(t) > t at t={}", p[0]));
                    }
                }
                if let Some(p) = period {
                    let first = points[0][0];
                    let last = points[points.len() - 1][0];
                    if !(p.is_finite() && *p > 0.0) {
                        out.push(format!("(a3): delay period must be positive (got {p})"));
                    } else if first != 0.0 || last != *p {
                        out.push(format!(
                            "(a3): periodic delay table must span [0, {p}] (got [{first}, {last}])"
                        ));
                    }
                }
            }
        }
        out
    }
}
