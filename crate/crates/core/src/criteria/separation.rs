use serde::Serialize;

use crate::model::{DelaySpec, Impulse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeparationKind {
    /// `h ≤ τ_j` on `[τ_j, t_j)`, `h ≥ τ_j` on `[t_j, τ_{j+1})`
    Simple,
    /// finitely many alternations around `τ_j`
    General,
    /// `h ≤ τ_j` on the whole interval; `t_j = τ_{j+1}`
    AllBelow,
}

/// Classification of `h` on `[τ_j, τ_{j+1})`.
///
/// `points` are the region ends `t¹ < … < t^k = τ_{j+1}` (the first may
/// equal `τ_j`). Regions alternate starting with `h ≤ τ_j` on
/// `[τ_j, t¹)`, then `h ≥ τ_j` on `[t¹, t²)`, and so on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalSeparation {
    pub j: usize,
    pub tau: f64,
    pub next_tau: f64,
    pub kind: SeparationKind,
    pub points: Vec<f64>,
}

impl IntervalSeparation {
    /// The single separation point `t_j` of simple or all-below intervals.
    pub fn t_j(&self) -> Option<f64> {
        match self.kind {
            SeparationKind::Simple | SeparationKind::AllBelow => Some(self.points[0]),
            SeparationKind::General => None,
        }
    }

    /// `(start, end, below)` regions.
    pub fn regions(&self) -> Vec<(f64, f64, bool)> {
        let mut start = self.tau;
        self.points
            .iter()
            .enumerate()
            .map(|(n, &end)| {
                let r = (start, end, n % 2 == 0);
                start = end;
                r
            })
            .collect()
    }

    /// Whether the alternation closes on a region where `h ≤ τ_j` after
    /// at least one region above it.
    pub fn ends_below(&self) -> bool {
        self.kind == SeparationKind::General && self.points.len() % 2 == 1
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Below,
    Above,
    On,
}

fn side(tau: f64, h: f64) -> Side {
    if h < tau {
        Side::Below
    } else if h > tau {
        Side::Above
    } else {
        Side::On
    }
}

/// Classifies one interval. Crossings of `h(t) = τ_j` are located exactly on
/// the linear pieces of the delay.
pub fn classify(delay: &DelaySpec, j: usize, tau: f64, next_tau: f64) -> IntervalSeparation {
    let points = match delay {
        DelaySpec::Identity => vec![tau, next_tau],
        DelaySpec::ConstantLag { delta } => {
            let t = tau + delta;
            if t < next_tau {
                vec![t, next_tau]
            } else {
                vec![next_tau]
            }
        }
        DelaySpec::Table { .. } => table_points(delay, tau, next_tau),
    };
    let kind = match points.len() {
        1 => SeparationKind::AllBelow,
        2 => SeparationKind::Simple,
        _ => SeparationKind::General,
    };
    IntervalSeparation {
        j,
        tau,
        next_tau,
        kind,
        points,
    }
}

fn table_points(delay: &DelaySpec, tau: f64, next_tau: f64) -> Vec<f64> {
    // sub-pieces on which the side of h relative to τ is fixed
    let mut parts: Vec<(f64, f64, Side)> = Vec::new();
    for pc in delay.pieces(tau, next_tau) {
        if pc.t1 <= pc.t0 {
            continue;
        }
        let (s0, s1) = (side(tau, pc.h0), side(tau, pc.h1));
        let crossing = matches!((s0, s1), (Side::Below, Side::Above) | (Side::Above, Side::Below));
        if crossing {
            let tc = pc.t0 + (tau - pc.h0) * (pc.t1 - pc.t0) / (pc.h1 - pc.h0);
            parts.push((pc.t0, tc, s0));
            parts.push((tc, pc.t1, s1));
        } else {
            let s = match (s0, s1) {
                (Side::On, s) | (s, Side::On) => s,
                (s, _) => s,
            };
            parts.push((pc.t0, pc.t1, s));
        }
    }
    // merge into alternating regions; `On` parts join their neighbours
    let mut points: Vec<f64> = Vec::new();
    let mut below = true;
    for (t0, _, s) in parts {
        let is_below = match s {
            Side::On => continue,
            Side::Below => true,
            Side::Above => false,
        };
        if is_below != below {
            points.push(t0);
            below = is_below;
        }
    }
    points.push(next_tau);
    points
}

/// Separation analysis of `delay` on every complete impulse interval.
/// `j` is the 1-based index of the impulse opening the interval.
pub fn find_separation_points(delay: &DelaySpec, impulses: &[Impulse]) -> Vec<IntervalSeparation> {
    impulses
        .windows(2)
        .enumerate()
        .map(|(i, w)| classify(delay, i + 1, w[0].time, w[1].time))
        .collect()
}
