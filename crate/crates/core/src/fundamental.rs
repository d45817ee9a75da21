//! Fundamental functions and the solution representation formula.
//!
//! `X(t, s)` solves the homogeneous equation from `t = s` with `x(s) = 1`,
//! zero prehistory before `s`, and the impulses `τ_j > s`. `C(t, s)` is the
//! same object with all impulses removed. Both are computed by direct
//! simulation with the [`integrator`](crate::integrator).

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::integrator::{check_coverage, Ivp, Prehistory, SolveOptions, Trajectory};
use crate::model::{time_slack, Impulse, Problem};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FundamentalKind {
    /// `X(t, s)` of the impulsive equation
    Impulsive,
    /// `C(t, s)` of the equation without impulses
    NonImpulsive,
}

pub fn fundamental_of_kind(
    problem: &Problem,
    s: f64,
    kind: FundamentalKind,
    opts: &SolveOptions,
) -> Result<Trajectory> {
    problem.ensure_valid()?;
    if !(s >= 0.0) || s > opts.horizon {
        return Err(Error::InvalidArgument(format!(
            "initial point s = {s} must lie in [0, {}]",
            opts.horizon
        )));
    }
    let impulses = match kind {
        FundamentalKind::Impulsive => {
            check_coverage(problem, opts.horizon)?;
            problem.impulses.until(opts.horizon)
        }
        FundamentalKind::NonImpulsive => Vec::new(),
    };
    Ivp {
        terms: &problem.terms,
        forcing: None,
        start: s,
        x_start: 1.0,
        prehistory: Prehistory::Constant(0.0),
        impulses,
    }
    .integrate(opts)
}

/// `t ↦ X(t, s)`.
pub fn fundamental(problem: &Problem, s: f64, opts: &SolveOptions) -> Result<Trajectory> {
    fundamental_of_kind(problem, s, FundamentalKind::Impulsive, opts)
}

/// `t ↦ C(t, s)`.
pub fn cauchy(problem: &Problem, s: f64, opts: &SolveOptions) -> Result<Trajectory> {
    fundamental_of_kind(problem, s, FundamentalKind::NonImpulsive, opts)
}

/// Fundamental runs for a grid of initial points `s`.
#[derive(Debug, Clone)]
pub struct FundamentalTable {
    kind: FundamentalKind,
    s_grid: Vec<f64>,
    runs: Vec<Trajectory>,
    step: f64,
    impulses: Vec<Impulse>,
}

/// Computes one fundamental run per grid point; runs are independent and
/// evaluated in parallel when enabled.
pub fn fundamental_table(
    problem: &Problem,
    s_grid: &[f64],
    kind: FundamentalKind,
    opts: &SolveOptions,
) -> Result<FundamentalTable> {
    if s_grid.is_empty() {
        return Err(Error::InvalidArgument("empty s-grid".to_string()));
    }
    if s_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("s-grid must be strictly increasing".to_string()));
    }
    let runs: Result<Vec<Trajectory>> = par::map(s_grid.len(), |i| fundamental_of_kind(problem, s_grid[i], kind, opts))
        .into_iter()
        .collect();
    let impulses = match kind {
        FundamentalKind::Impulsive => problem.impulses.until(opts.horizon),
        FundamentalKind::NonImpulsive => Vec::new(),
    };
    Ok(FundamentalTable {
        kind,
        s_grid: s_grid.to_vec(),
        runs: runs?,
        step: opts.step,
        impulses,
    })
}

/// Uniform grid on `[0, horizon)` refined with every point where the
/// integrand of the representation formula may jump: impulse times,
/// coefficient and forcing knots, and the times where a delayed argument
/// leaves the prehistory or crosses one of its knots.
pub fn representation_grid(problem: &Problem, spacing: f64, horizon: f64) -> Vec<f64> {
    let n = (horizon / spacing).ceil() as usize;
    let mut pts: Vec<f64> = (0..n).map(|i| i as f64 * spacing).collect();
    pts.extend(problem.forcing.knots(0.0, horizon));
    let mut targets = vec![0.0];
    targets.extend(problem.history.knots());
    targets.sort_by(f64::total_cmp);
    for term in &problem.terms {
        pts.extend(term.coefficient.knots(0.0, horizon));
        pts.extend(term.delay.knots(0.0, horizon));
        pts.extend(term.delay.crossings(&targets, 0.0, horizon));
    }
    pts.retain(|&s| s >= 0.0 && s < horizon);
    // an impulse at the horizon still needs its own run for additive jumps
    pts.extend(problem.impulses.until(horizon).iter().map(|i| i.time));
    pts.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = Vec::with_capacity(pts.len());
    for p in pts {
        match grid.last() {
            Some(&q) if p - q <= 1e-12 * p.abs().max(1.0) => {}
            _ => grid.push(p),
        }
    }
    grid
}

impl FundamentalTable {
    pub fn kind(&self) -> FundamentalKind {
        self.kind
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn runs(&self) -> &[Trajectory] {
        &self.runs
    }

    /// `X(t, s_i)`; zero for `t < s_i`.
    pub fn value(&self, i: usize, t: f64) -> Result<f64> {
        if t < self.s_grid[i] {
            return Ok(0.0);
        }
        self.runs[i].eval(t)
    }

    /// `(s, t, X)` for every stored mesh value, left limits included.
    pub fn samples(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for (s, run) in self.s_grid.iter().zip(&self.runs) {
            for smp in run.samples() {
                if let Some(l) = smp.left_limit {
                    out.push((*s, smp.t, l));
                }
                out.push((*s, smp.t, smp.x));
            }
        }
        out
    }

    pub fn min_value(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.value_range().0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.value_range().1)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV `s,t,X` with one row per mesh point of every run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,t,X\n");
        for (s, run) in self.s_grid.iter().zip(&self.runs) {
            for smp in run.samples() {
                out.push_str(&format!("{},{},{}\n", s, smp.t, smp.x));
            }
        }
        out
    }
}

/// Evaluates
/// `x(t) = X(t,0)x(0) + ∫₀ᵗ X(t,s) r(s) ds + Σ_k ∫₀ᵗ X(t,s) A_k(s) φ[h_k(s)] ds`
/// by the trapezoidal rule on the table's s-grid, with `φ(ζ) = 0` for `ζ ≥ 0`.
/// Panels end exactly at impulse times, where `s ↦ X(t, s)` jumps: the
/// left limit there is `X(t, τ_j − 0) = B_j X(t, τ_j)`.
pub fn representation_solution(problem: &Problem, table: &FundamentalTable, t: f64) -> Result<f64> {
    representation_solution_with_jumps(problem, table, t, &[])
}

/// As [`representation_solution`], adding `Σ_{τ_j ≤ t} X(t, τ_j) α_j` for
/// additive impulses `x(τ_j) = B_j x(τ_j − 0) + α_j`.
pub fn representation_solution_with_jumps(
    problem: &Problem,
    table: &FundamentalTable,
    t: f64,
    alphas: &[f64],
) -> Result<f64> {
    let grid = &table.s_grid;
    if grid[0] != 0.0 {
        return Err(Error::GridTooCoarse(format!(
            "the s-grid must start at 0 (starts at {})",
            grid[0]
        )));
    }
    let required = 8.0 * table.step;
    let used = grid.partition_point(|&s| s <= t);
    let mut widest: f64 = 0.0;
    for i in 0..used {
        let next = if i + 1 < used { grid[i + 1] } else { t };
        widest = widest.max(next - grid[i]);
    }
    if widest > required * (1.0 + 1e-9) {
        return Err(Error::GridTooCoarse(format!(
            "panel width {widest} exceeds the required spacing {required} (8 × step)"
        )));
    }
    let impulses: Vec<Impulse> = table
        .impulses
        .iter()
        .copied()
        .filter(|i| i.time <= t + time_slack(t))
        .collect();
    let run_at = |time: f64| grid.iter().position(|&s| s == time);
    for imp in &impulses {
        if run_at(imp.time).is_none() {
            return Err(Error::GridTooCoarse(format!(
                "impulse time {} is not an s-grid point",
                imp.time
            )));
        }
    }

    // one-sided φ(ζ); arguments a few ulps off a knot are nudged past it
    let phi = |zeta: f64, left: bool| -> f64 {
        let tol = 1e-12 * zeta.abs().max(1.0);
        let zeta = if left { zeta - tol } else { zeta + tol };
        if zeta < 0.0 {
            problem.history.value(zeta)
        } else {
            0.0
        }
    };
    let source = |s: f64, left: bool| -> f64 {
        let mut g = if left {
            problem.forcing.value_left(s)
        } else {
            problem.forcing.value(s)
        };
        for term in &problem.terms {
            let (a, h) = if left {
                (term.coefficient.value_left(s), term.delay.eval_left(s))
            } else {
                (term.coefficient.value(s), term.delay.eval(s))
            };
            g += a * phi(h, left);
        }
        g
    };
    let gain_at = |s: f64| impulses.iter().find(|i| i.time == s).map(|i| i.gain);

    let mut integral = 0.0;
    for i in 0..used {
        let s0 = grid[i];
        let s1 = if i + 1 < used { grid[i + 1] } else { t };
        if s1 <= s0 {
            continue;
        }
        let x0 = table.value(i, t)?;
        let x1 = if i + 1 < used {
            let right = table.value(i + 1, t)?;
            gain_at(s1).map_or(right, |b| b * right)
        } else {
            gain_at(t).unwrap_or(1.0)
        };
        integral += 0.5 * (s1 - s0) * (x0 * source(s0, false) + x1 * source(s1, true));
    }
    let mut x = table.value(0, t)? * problem.x0 + integral;
    for (imp, alpha) in impulses.iter().zip(alphas) {
        let i = run_at(imp.time).expect("checked above");
        x += table.value(i, t)? * alpha;
    }
    Ok(x)
}

fn serialize_finite<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

/// Empirical envelope `|X(t,s)| ≤ N e^{−λ(t−s)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    #[serde(rename = "N")]
    pub n: f64,
    /// Decay rate; positive means decay. `+∞` (serialized as null) marks an
    /// identically zero table.
    #[serde(serialize_with = "serialize_finite")]
    pub lambda: f64,
    /// Largest log-domain deviation of the fitted maxima from the line.
    pub residual: f64,
}

impl EnvelopeFit {
    pub fn is_trivial(&self) -> bool {
        self.n == 0.0 && self.lambda == f64::INFINITY
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

/// Least-squares line through `(dt, ln v)`, then the smallest `N` making
/// the envelope dominate every sample in `all`.
pub(crate) fn fit_points(maxima: &[(f64, f64)], all: &[(f64, f64)]) -> EnvelopeFit {
    let pts: Vec<(f64, f64)> = maxima
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(dt, v)| (dt, v.ln()))
        .collect();
    if pts.is_empty() {
        return EnvelopeFit {
            n: 0.0,
            lambda: f64::INFINITY,
            residual: 0.0,
        };
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residual = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).abs())
        .fold(0.0, f64::max);
    let lambda = 0.0 - slope;
    let n_hat = all.iter().map(|&(dt, v)| v * (lambda * dt).exp()).fold(0.0, f64::max);
    EnvelopeFit {
        n: n_hat,
        lambda,
        residual,
    }
}

type Samples = Vec<(f64, f64)>;

/// Per-interval maxima of `|x|` for one run, as `(t − s, max)`, falling back
/// to every sample when the run crosses fewer than two impulses.
pub(crate) fn run_maxima(run: &Trajectory) -> (Samples, Samples) {
    let s = run.start();
    let all: Vec<(f64, f64)> = run.abs_points().map(|(t, v)| (t - s, v)).collect();
    let maxima = if run.jumps().len() >= 2 {
        run.interval_maxima().into_iter().map(|(t, v)| (t - s, v)).collect()
    } else {
        all.clone()
    };
    (maxima, all)
}

/// Fits `N̂, λ̂` to the per-impulse-interval maxima of `|X(t,s)|` pooled over
/// the table; `N̂` is then raised until the envelope covers every sample.
pub fn fit_envelope(table: &FundamentalTable) -> EnvelopeFit {
    let mut maxima = Vec::new();
    let mut all = Vec::new();
    for run in &table.runs {
        let (m, a) = run_maxima(run);
        maxima.extend(m);
        all.extend(a);
    }
    fit_points(&maxima, &all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSpec, DelaySpec, HistorySpec, ImpulseSchedule};

    fn ode(a: f64, impulses: ImpulseSchedule) -> Problem {
        Problem::single(CoefficientSpec::constant(a), DelaySpec::Identity, impulses)
    }

    #[test]
    fn ode_fundamental_is_exponential() {
        let p = ode(1.0, ImpulseSchedule::default());
        let x = fundamental(&p, 0.5, &SolveOptions::new(1e-3, 1.5)).unwrap();
        assert!((x.eval(1.5).unwrap() / std::f64::consts::E - 1.0).abs() < 1e-8);
        assert_eq!(x.eval(0.4).unwrap(), 0.0);
        assert_eq!(x.eval(0.5).unwrap(), 1.0);
    }

    #[test]
    fn pure_jump_product() {
        let p = ode(0.0, ImpulseSchedule::new(vec![1.0, 2.0, 3.0], vec![0.5, 3.0, 0.1]));
        let x = fundamental(&p, 1.0, &SolveOptions::new(0.1, 3.0)).unwrap();
        assert_eq!(x.eval(1.5).unwrap(), 1.0);
        assert_eq!(x.eval(2.5).unwrap(), 3.0);
        assert!((x.eval(3.0).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cauchy_ignores_impulses() {
        let p = ode(0.0, ImpulseSchedule::uniform(1.0, 0.5));
        let c = cauchy(&p, 0.0, &SolveOptions::new(0.1, 3.0)).unwrap();
        assert_eq!(c.eval(3.0).unwrap(), 1.0);
    }

    #[test]
    fn envelope_of_pure_jumps() {
        let p = ode(0.0, ImpulseSchedule::uniform(1.0, 0.25));
        let t = fundamental_table(&p, &[0.0], FundamentalKind::Impulsive, &SolveOptions::new(0.1, 10.0)).unwrap();
        let fit = fit_envelope(&t);
        assert!((fit.lambda - 4f64.ln()).abs() < 1e-12, "{fit:?}");
        // X = 1 up to the first impulse, so N = e^{λ}
        assert!((fit.n - 4.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_of_constant_solution() {
        let p = ode(0.0, ImpulseSchedule::uniform(1.0, 1.0));
        let t = fundamental_table(
            &p,
            &[0.0, 0.5],
            FundamentalKind::Impulsive,
            &SolveOptions::new(0.1, 10.0),
        )
        .unwrap();
        let fit = fit_envelope(&t);
        assert!(fit.lambda.abs() < 1e-9);
        assert_eq!(fit.n, 1.0);
    }

    #[test]
    fn zero_table_is_trivial() {
        let p = ode(0.0, ImpulseSchedule::uniform(1.0, 0.0));
        let t = fundamental_table(&p, &[0.0], FundamentalKind::Impulsive, &SolveOptions::new(0.1, 5.0)).unwrap();
        // the first interval still carries X = 1
        assert!(!fit_envelope(&t).is_trivial());
        assert!(fit_points(&[(1.0, 0.0)], &[(1.0, 0.0)]).is_trivial());
        assert_eq!(
            fit_points(&[], &[]).to_json(),
            r#"{"N":0.0,"lambda":null,"residual":0.0}"#
        );
    }

    #[test]
    fn representation_collapses_without_sources() {
        let p = Problem::single(
            CoefficientSpec::constant(0.3),
            DelaySpec::constant_lag(0.5),
            ImpulseSchedule::uniform(1.0, 0.5),
        )
        .with_x0(2.0);
        let opts = SolveOptions::new(0.01, 3.0);
        let grid = representation_grid(&p, 0.05, 3.0);
        let t = fundamental_table(&p, &grid, FundamentalKind::Impulsive, &opts).unwrap();
        let x = representation_solution(&p, &t, 2.5).unwrap();
        assert!((x - 2.0 * t.value(0, 2.5).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn representation_variation_of_constants() {
        let p = ode(1.0, ImpulseSchedule::default())
            .with_x0(0.0)
            .with_forcing(CoefficientSpec::constant(1.0));
        let opts = SolveOptions::new(1e-3, 1.0);
        let grid = representation_grid(&p, 0.008, 1.0);
        let t = fundamental_table(&p, &grid, FundamentalKind::Impulsive, &opts).unwrap();
        let x = representation_solution(&p, &t, 1.0).unwrap();
        let exact = std::f64::consts::E - 1.0;
        assert!((x / exact - 1.0).abs() < 1e-4, "{x}");
    }

    #[test]
    fn representation_rejects_coarse_grid() {
        let p = ode(1.0, ImpulseSchedule::default());
        let opts = SolveOptions::new(1e-3, 1.0);
        let t = fundamental_table(&p, &[0.0, 0.5], FundamentalKind::Impulsive, &opts).unwrap();
        let err = representation_solution(&p, &t, 1.0).unwrap_err();
        assert!(err.to_string().contains("0.008"), "{err}");
    }

    #[test]
    fn representation_matches_direct_solve_with_delay() {
        let p = Problem::single(
            CoefficientSpec::constant(0.4),
            DelaySpec::constant_lag(1.5),
            ImpulseSchedule::uniform(1.0, 0.5),
        )
        .with_history(HistorySpec::constant(1.0));
        let opts = SolveOptions::new(1e-3, 2.0);
        let grid = representation_grid(&p, 0.008, 2.0);
        let t = fundamental_table(&p, &grid, FundamentalKind::Impulsive, &opts).unwrap();
        let direct = crate::integrator::solve(&p, &opts).unwrap().eval(1.5).unwrap();
        let rep = representation_solution(&p, &t, 1.5).unwrap();
        assert!((rep - direct).abs() / direct.abs() < 1e-4, "{rep} vs {direct}");
    }

    #[test]
    fn additive_jumps_enter_linearly() {
        let p = ode(0.0, ImpulseSchedule::new(vec![1.0, 2.0], vec![0.5, 0.5]));
        let opts = SolveOptions::new(0.01, 2.0);
        let grid = representation_grid(&p, 0.05, 2.0);
        let t = fundamental_table(&p, &grid, FundamentalKind::Impulsive, &opts).unwrap();
        let x = representation_solution_with_jumps(&p, &t, 2.0, &[1.0, 0.0]).unwrap();
        // x(1) = 0.5 + 1 = 1.5, x(2) = 0.75
        assert!((x - 0.75).abs() < 1e-14);
    }
}
