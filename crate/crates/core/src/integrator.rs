//! Method-of-steps solver for the impulsive initial value problem.
//!
//! The mesh always contains the start time, every impulse time, every
//! coefficient/delay knot, and the first-generation discontinuities
//! `h_k(t) = τ_j`, `h_k(t) = start`, `h_k(t) = ` history knot. Between mesh
//! points the classical RK4 scheme runs with a uniform step no larger than
//! the requested one. Each step stores the value and one-sided derivatives
//! at both ends, which gives a cubic Hermite interpolant used both for
//! delayed lookups and for dense output.
//!
//! A delayed argument falling inside the step being taken (lag smaller
//! than the step) is approximated from the step's start: `x_n + θ·k1`
//! during the stages and by the chord `x_n → x_{n+1}` for the end
//! derivative. A zero lag uses the stage value itself, so `h(t) = t`
//! reduces exactly to RK4 for the ordinary equation.

use crate::error::{Error, Result};
use crate::model::{time_slack, CoefficientSpec, HistorySpec, Impulse, Problem, Term};

/// Hard cap on the number of integration steps in one solve.
pub const MAX_STEPS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Linear,
    #[default]
    CubicHermite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Base step; clamped to a quarter of the smallest impulse gap.
    pub step: f64,
    pub horizon: f64,
    pub interpolation: Interpolation,
}

impl SolveOptions {
    pub fn new(step: f64, horizon: f64) -> Self {
        SolveOptions {
            step,
            horizon,
            interpolation: Interpolation::CubicHermite,
        }
    }

    pub fn with_horizon(self, horizon: f64) -> Self {
        SolveOptions { horizon, ..self }
    }
}

/// Values used for arguments before the start time.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Prehistory {
    Spec(HistorySpec),
    Constant(f64),
}

impl Prehistory {
    fn value(&self, xi: f64) -> f64 {
        match self {
            Prehistory::Spec(h) => h.value(xi),
            Prehistory::Constant(c) => *c,
        }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    start: f64,
    times: Vec<f64>,
    values: Vec<f64>,
    /// Right derivative at `times[i]`, one per step.
    d_start: Vec<f64>,
    /// Left derivative at `times[i + 1]`, one per step.
    d_end: Vec<f64>,
}

impl Segment {
    fn new(start: f64, x: f64) -> Self {
        Segment {
            start,
            times: vec![start],
            values: vec![x],
            d_start: Vec::new(),
            d_end: Vec::new(),
        }
    }

    fn last_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    fn value(&self, t: f64, interp: Interpolation) -> f64 {
        let steps = self.d_end.len();
        if steps == 0 {
            return self.values[0];
        }
        let i = (self.times.partition_point(|&s| s <= t).max(1) - 1).min(steps - 1);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (x0, x1) = (self.values[i], self.values[i + 1]);
        let h = t1 - t0;
        let th = ((t - t0) / h).clamp(0.0, 1.0);
        match interp {
            Interpolation::Linear => x0 + th * (x1 - x0),
            Interpolation::CubicHermite => {
                let th2 = th * th;
                let th3 = th2 * th;
                (2.0 * th3 - 3.0 * th2 + 1.0) * x0
                    + (th3 - 2.0 * th2 + th) * h * self.d_start[i]
                    + (-2.0 * th3 + 3.0 * th2) * x1
                    + (th3 - th2) * h * self.d_end[i]
            }
        }
    }
}

/// A jump `x(τ) = gain · x(τ − 0)` recorded during integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub gain: f64,
    pub left: f64,
    pub right: f64,
}

/// One mesh row of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub is_impulse: bool,
    /// `x(t − 0)` at impulse rows.
    pub left_limit: Option<f64>,
}

/// Piecewise-smooth numerical solution on `[start, horizon]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    start: f64,
    horizon: f64,
    interpolation: Interpolation,
    prehistory: Prehistory,
    segments: Vec<Segment>,
    jumps: Vec<Jump>,
}

impl Trajectory {
    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// Total number of integration steps.
    pub fn step_count(&self) -> usize {
        self.segments.iter().map(|s| s.d_end.len()).sum()
    }

    fn value_at(&self, t: f64) -> f64 {
        if t < self.start {
            return self.prehistory.value(t);
        }
        let idx = self.segments.partition_point(|s| s.start <= t).max(1) - 1;
        self.segments[idx].value(t, self.interpolation)
    }

    /// Delayed value `x(td)` from the side given by `left`. Arguments within
    /// rounding distance of the start or of an impulse time are treated as
    /// that time, so the correct one-sided value is taken there.
    fn delayed_value(&self, td: f64, left: bool) -> f64 {
        let tol = 1e-12 * td.abs().max(1.0);
        if (td - self.start).abs() <= tol {
            return if left {
                self.prehistory.value(self.start)
            } else {
                self.value_at(self.start)
            };
        }
        if td < self.start {
            // nudge past a prehistory knot that rounding may have missed
            return self.prehistory.value(if left { td - tol } else { td + tol });
        }
        let i = self.jumps.partition_point(|j| j.time < td - tol);
        if let Some(j) = self.jumps.get(i) {
            if (j.time - td).abs() <= tol {
                return if left { j.left } else { j.right };
            }
        }
        self.value_at(td)
    }

    fn check_range(&self, t: f64) -> Result<()> {
        if t > self.horizon + time_slack(self.horizon) || t.is_nan() {
            return Err(Error::OutOfRange {
                t,
                start: self.start,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// `x(t)`, right-continuous at impulse times; the prehistory before the start.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        Ok(self.value_at(t))
    }

    /// Left limit `x(t − 0)`.
    pub fn eval_left(&self, t: f64) -> Result<f64> {
        self.check_range(t)?;
        let i = self.jumps.partition_point(|j| j.time < t);
        if let Some(j) = self.jumps.get(i) {
            if j.time == t {
                return Ok(j.left);
            }
        }
        if t == self.start {
            return Ok(self.prehistory.value(t));
        }
        Ok(self.value_at(t))
    }

    /// Mesh rows in time order. Segment ends that coincide with an impulse
    /// are folded into the impulse row as its left limit.
    pub fn samples(&self) -> Vec<Sample> {
        let mut out = Vec::with_capacity(self.step_count() + self.segments.len());
        for (i, seg) in self.segments.iter().enumerate() {
            let last = if i + 1 < self.segments.len() {
                seg.times.len() - 1
            } else {
                seg.times.len()
            };
            for k in 0..last {
                let jump = if k == 0 && i > 0 { Some(self.jumps[i - 1]) } else { None };
                out.push(Sample {
                    t: seg.times[k],
                    x: seg.values[k],
                    is_impulse: jump.is_some(),
                    left_limit: jump.map(|j| j.left),
                });
            }
        }
        out
    }

    /// `(t, |x|)` pairs: every mesh value plus every left limit.
    pub(crate) fn abs_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.segments
            .iter()
            .flat_map(|seg| seg.times.iter().zip(&seg.values).map(|(&t, &x)| (t, x.abs())))
    }

    /// For every impulse interval `[start or τ_j, τ_{j+1})` ending at an
    /// impulse, the largest `|x|` including the left limit, with the time at
    /// which it occurs.
    pub(crate) fn interval_maxima(&self) -> Vec<(f64, f64)> {
        self.segments
            .iter()
            .take(self.jumps.len())
            .map(|seg| {
                seg.times
                    .iter()
                    .zip(&seg.values)
                    .fold((seg.start, -1.0f64), |(bt, bv), (&t, &x)| {
                        if x.abs() >= bv {
                            (t, x.abs())
                        } else {
                            (bt, bv)
                        }
                    })
            })
            .collect()
    }

    /// Largest and smallest stored value (mesh values and left limits).
    pub fn value_range(&self) -> (f64, f64) {
        self.segments
            .iter()
            .flat_map(|s| s.values.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }

    /// Final value `x(horizon)`.
    pub fn final_value(&self) -> f64 {
        self.segments[self.segments.len() - 1].last_value()
    }

    /// Left limit at the horizon, before any impulse located there.
    pub fn final_left_value(&self) -> f64 {
        match self.jumps.last() {
            Some(j) if j.time == self.horizon => j.left,
            _ => self.final_value(),
        }
    }

    /// CSV with header `t,x,is_impulse,left_limit`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,is_impulse,left_limit\n");
        for s in self.samples() {
            match s.left_limit {
                Some(l) => out.push_str(&format!("{},{},1,{}\n", s.t, s.x, l)),
                None => out.push_str(&format!("{},{},0,\n", s.t, s.x)),
            }
        }
        out
    }
}

/// A linear impulsive initial value problem started at an arbitrary time.
pub(crate) struct Ivp<'a> {
    pub terms: &'a [Term],
    pub forcing: Option<&'a CoefficientSpec>,
    pub start: f64,
    pub x_start: f64,
    pub prehistory: Prehistory,
    /// Impulses applied at times strictly after `start`.
    pub impulses: Vec<Impulse>,
}

/// How the delayed value is obtained when `h(t)` falls inside the current step.
#[derive(Clone, Copy)]
enum InStep {
    /// `x_n + (t_d − t_n)·k1`
    Taylor { tn: f64, xn: f64, k1: f64 },
    /// chord from `(t_n, x_n)` to `(t_{n+1}, x_{n+1})`
    Chord { tn: f64, xn: f64, t1: f64, x1: f64 },
}

impl Ivp<'_> {
    fn rhs(&self, traj: &Trajectory, t: f64, x: f64, left: bool, in_step: InStep) -> f64 {
        let tn = match in_step {
            InStep::Taylor { tn, .. } | InStep::Chord { tn, .. } => tn,
        };
        let mut f = match self.forcing {
            Some(r) if left => r.value_left(t),
            Some(r) => r.value(t),
            None => 0.0,
        };
        for term in self.terms {
            let (a, td) = if left {
                (term.coefficient.value_left(t), term.delay.eval_left(t))
            } else {
                (term.coefficient.value(t), term.delay.eval(t))
            };
            if a == 0.0 {
                continue;
            }
            let delayed = if td >= t {
                x
            } else if td > tn {
                match in_step {
                    InStep::Taylor { tn, xn, k1 } => xn + (td - tn) * k1,
                    InStep::Chord { tn, xn, t1, x1 } => xn + (td - tn) / (t1 - tn) * (x1 - xn),
                }
            } else {
                traj.delayed_value(td, left)
            };
            f += a * delayed;
        }
        f
    }

    fn structural_points(&self, horizon: f64) -> Vec<f64> {
        let start = self.start;
        let mut pts = Vec::new();
        for term in self.terms {
            pts.extend(term.coefficient.knots(start, horizon));
            pts.extend(term.delay.knots(start, horizon));
        }
        if let Some(r) = self.forcing {
            pts.extend(r.knots(start, horizon));
        }
        let mut targets = vec![start];
        targets.extend(self.impulses.iter().map(|i| i.time));
        if let Prehistory::Spec(h) = &self.prehistory {
            targets.extend(h.knots().into_iter().filter(|&k| k < start));
        }
        targets.sort_by(f64::total_cmp);
        targets.dedup();
        for term in self.terms {
            pts.extend(term.delay.crossings(&targets, start, horizon));
        }
        pts.sort_by(f64::total_cmp);
        pts
    }

    pub fn integrate(self, opts: &SolveOptions) -> Result<Trajectory> {
        let horizon = opts.horizon;
        if !(opts.step > 0.0) || !opts.step.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step must be positive (got {})",
                opts.step
            )));
        }
        if !(horizon >= self.start) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} precedes the start time {}",
                self.start
            )));
        }
        let jumps: Vec<Impulse> = self
            .impulses
            .iter()
            .copied()
            .filter(|i| i.time > self.start && i.time <= horizon + time_slack(horizon))
            .collect();

        let mut step = opts.step;
        for w in jumps.windows(2) {
            step = step.min((w[1].time - w[0].time) / 4.0);
        }

        // segment boundaries: start, impulse times, horizon
        let mut bounds = vec![self.start];
        bounds.extend(jumps.iter().map(|j| j.time));
        let last_bound = bounds[bounds.len() - 1];
        let terminal_jump = !jumps.is_empty() && last_bound >= horizon - time_slack(horizon);
        if !terminal_jump && horizon > last_bound {
            bounds.push(horizon);
        }
        let horizon = bounds[bounds.len() - 1];

        let structural = self.structural_points(horizon);
        let mut plans: Vec<Vec<f64>> = Vec::with_capacity(bounds.len());
        let mut total: u64 = 0;
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            let tol = 1e-10 * b.abs().max(1.0);
            let lo = structural.partition_point(|&p| p <= a + tol);
            let mut pts = vec![a];
            for &p in &structural[lo..] {
                if p >= b - tol {
                    break;
                }
                if p - pts[pts.len() - 1] > tol {
                    pts.push(p);
                }
            }
            pts.push(b);
            for q in pts.windows(2) {
                total += ((q[1] - q[0]) / step - 1e-9).ceil().max(1.0) as u64;
            }
            if total > MAX_STEPS {
                return Err(Error::StepUnderflow {
                    steps: total,
                    limit: MAX_STEPS,
                });
            }
            plans.push(pts);
        }

        let mut traj = Trajectory {
            start: self.start,
            horizon,
            interpolation: opts.interpolation,
            prehistory: self.prehistory.clone(),
            segments: Vec::with_capacity(bounds.len()),
            jumps: Vec::with_capacity(jumps.len()),
        };
        let mut x = self.x_start;
        for (si, pts) in plans.iter().enumerate() {
            let (a, b) = (pts[0], pts[pts.len() - 1]);
            traj.segments.push(Segment::new(a, x));
            for q in pts.windows(2) {
                let (p0, p1) = (q[0], q[1]);
                let n = ((p1 - p0) / step - 1e-9).ceil().max(1.0) as usize;
                let h = (p1 - p0) / n as f64;
                let mut k1 = f64::NAN;
                for i in 0..n {
                    let tn = if i == 0 { p0 } else { p0 + i as f64 * h };
                    let t1 = if i + 1 == n { p1 } else { p0 + (i + 1) as f64 * h };
                    let hs = t1 - tn;
                    let tm = tn + 0.5 * hs;
                    if i == 0 {
                        let ctx = InStep::Taylor { tn, xn: x, k1: 0.0 };
                        k1 = self.rhs(&traj, tn, x, false, ctx);
                    }
                    let ctx = InStep::Taylor { tn, xn: x, k1 };
                    let k2 = self.rhs(&traj, tm, x + 0.5 * hs * k1, false, ctx);
                    let k3 = self.rhs(&traj, tm, x + 0.5 * hs * k2, false, ctx);
                    let k4 = self.rhs(&traj, t1, x + hs * k3, true, ctx);
                    let x1 = x + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    let chord = InStep::Chord { tn, xn: x, t1, x1 };
                    let d_end = self.rhs(&traj, t1, x1, true, chord);
                    let seg = traj.segments.last_mut().expect("segment pushed");
                    seg.times.push(t1);
                    seg.values.push(x1);
                    seg.d_start.push(k1);
                    seg.d_end.push(d_end);
                    x = x1;
                    k1 = d_end;
                }
            }
            if si < jumps.len() {
                let jump = jumps[si];
                debug_assert_eq!(jump.time, b);
                let right = jump.gain * x;
                traj.jumps.push(Jump {
                    time: b,
                    gain: jump.gain,
                    left: x,
                    right,
                });
                x = right;
            }
        }
        if terminal_jump {
            traj.segments.push(Segment::new(horizon, x));
        } else if plans.is_empty() {
            traj.segments.push(Segment::new(self.start, x));
        }
        Ok(traj)
    }
}

/// Solves the impulsive problem from `t = 0` with the problem's own data.
pub fn solve(problem: &Problem, opts: &SolveOptions) -> Result<Trajectory> {
    problem.ensure_valid()?;
    check_coverage(problem, opts.horizon)?;
    Ivp {
        terms: &problem.terms,
        forcing: Some(&problem.forcing),
        start: 0.0,
        x_start: problem.x0,
        prehistory: Prehistory::Spec(problem.history.clone()),
        impulses: problem.impulses.until(opts.horizon),
    }
    .integrate(opts)
}

pub(crate) fn check_coverage(problem: &Problem, horizon: f64) -> Result<()> {
    let last = problem.impulses.coverage();
    if horizon > last + time_slack(last) {
        return Err(Error::ScheduleExhausted { horizon, last });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelaySpec, ImpulseSchedule};

    fn ode(a: f64, impulses: ImpulseSchedule) -> Problem {
        Problem::single(CoefficientSpec::constant(a), DelaySpec::Identity, impulses)
    }

    #[test]
    fn exponential_growth() {
        let p = ode(1.0, ImpulseSchedule::default());
        let tr = solve(&p, &SolveOptions::new(1e-3, 1.0)).unwrap();
        let x1 = tr.eval(1.0).unwrap();
        assert!((x1 / std::f64::consts::E - 1.0).abs() < 1e-8, "{x1}");
    }

    #[test]
    fn impulses_scale_the_ode() {
        let p = ode(1.0, ImpulseSchedule::uniform(1.0, 0.25));
        let tr = solve(&p, &SolveOptions::new(1e-3, 2.0)).unwrap();
        let e = std::f64::consts::E;
        assert!((tr.eval(1.0).unwrap() - 0.25 * e).abs() < 1e-9);
        assert!((tr.eval_left(2.0).unwrap() - 0.25 * e * e).abs() < 1e-9);
        assert!((tr.eval_left(1.0).unwrap() - e).abs() < 1e-9);
        for j in tr.jumps() {
            assert_eq!(j.right, j.gain * j.left);
            assert_eq!(tr.eval(j.time).unwrap(), j.right);
        }
    }

    #[test]
    fn zero_rhs_is_constant() {
        let p = ode(0.0, ImpulseSchedule::uniform(0.7, 1.0)).with_x0(3.5);
        let tr = solve(&p, &SolveOptions::new(0.01, 5.0)).unwrap();
        assert!(tr.samples().iter().all(|s| s.x == 3.5));
    }

    #[test]
    fn delayed_argument_in_prehistory() {
        let p = Problem::single(
            CoefficientSpec::constant(0.4),
            DelaySpec::constant_lag(1.5),
            ImpulseSchedule::uniform(1.0, 0.5),
        )
        .with_history(HistorySpec::constant(1.0));
        let tr = solve(&p, &SolveOptions::new(1e-3, 3.0)).unwrap();
        assert!((tr.eval_left(1.0).unwrap() - 1.4).abs() < 1e-12);
        assert!((tr.eval(1.0).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn eval_conventions() {
        let p = ode(0.0, ImpulseSchedule::new(vec![1.0, 2.0], vec![0.0, 1.0])).with_history(HistorySpec::constant(2.0));
        let tr = solve(&p, &SolveOptions::new(0.1, 2.0)).unwrap();
        assert_eq!(tr.eval(-1.0).unwrap(), 2.0);
        assert_eq!(tr.eval(0.5).unwrap(), 1.0);
        assert_eq!(tr.eval_left(0.5).unwrap(), tr.eval(0.5).unwrap());
        assert!(tr.eval_left(1.0).unwrap() > 0.0);
        assert_eq!(tr.eval(1.0).unwrap(), 0.0);
        assert!(matches!(tr.eval(2.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn schedule_exhausted() {
        let p = ode(0.1, ImpulseSchedule::new(vec![1.0, 2.0], vec![0.5, 0.5]));
        assert!(matches!(
            solve(&p, &SolveOptions::new(0.01, 3.0)),
            Err(Error::ScheduleExhausted { .. })
        ));
    }

    #[test]
    fn step_underflow_is_reported() {
        let p = ode(0.1, ImpulseSchedule::default());
        assert!(matches!(
            solve(&p, &SolveOptions::new(1e-9, 1.0)),
            Err(Error::StepUnderflow { .. })
        ));
    }

    #[test]
    fn csv_rows_mark_impulses() {
        let p = ode(0.0, ImpulseSchedule::uniform(1.0, 0.5));
        let tr = solve(&p, &SolveOptions::new(0.5, 2.0)).unwrap();
        let csv = tr.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x,is_impulse,left_limit");
        assert_eq!(lines[1], "0,1,0,");
        assert!(lines.contains(&"1,0.5,1,1"));
        assert_eq!(*lines.last().unwrap(), "2,0.25,1,0.5");
    }

    #[test]
    fn invalid_problem_is_rejected() {
        let p = Problem::new(vec![], ImpulseSchedule::default(), 1.0);
        assert!(matches!(
            solve(&p, &SolveOptions::new(0.1, 1.0)),
            Err(Error::Invalid(_))
        ));
    }
}
