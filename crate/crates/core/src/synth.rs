//! Impulse schedules certified by construction.

use serde::{Deserialize, Serialize};

use crate::criteria::{self, classify, CheckOptions, CriterionId, CriterionReport, SeparationKind, AUTO_ORDER};
use crate::error::{Error, Result};
use crate::model::{ImpulseSchedule, Problem, DEFAULT_PERIODS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Stable,
    ExponentiallyStable,
}

/// Gains below this are reported as practically zero.
pub const NEAR_ZERO_GAIN: f64 = 1e-3;

/// Bisection steps when the spacing is chosen automatically.
pub const BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    /// The equation; its impulses are replaced.
    pub problem: Problem,
    pub target: Target,
    /// Impulse spacing; `None` chooses it.
    pub sigma: Option<f64>,
    /// Fraction of the feasible gain to use, in `(0, 1]`.
    pub safety: f64,
}

impl SynthesisRequest {
    pub fn new(problem: Problem, target: Target) -> Self {
        SynthesisRequest {
            problem,
            target,
            sigma: None,
            safety: 0.9,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn with_safety(mut self, safety: f64) -> Self {
        self.safety = safety;
        self
    }

    fn validate(&self) -> Result<()> {
        self.problem.ensure_valid()?;
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "safety must lie in (0, 1] (got {})",
                self.safety
            )));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("sigma must be positive (got {s})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    /// The input equation with the synthesized impulses and a horizon.
    pub problem: Problem,
    /// Report of the criterion the design targets.
    pub report: CriterionReport,
    /// Other criteria that also certify the schedule.
    pub additional: Vec<CriterionReport>,
    pub notes: Vec<String>,
}

impl Synthesis {
    pub fn schedule(&self) -> &ImpulseSchedule {
        &self.problem.impulses
    }
}

fn require_nonnegative(problem: &Problem, horizon: f64) -> Result<()> {
    if problem.coefficients_nonnegative(horizon) {
        Ok(())
    } else {
        Err(Error::Infeasible(
            "coefficients take negative values; synthesis needs A_k ≥ 0".to_string(),
        ))
    }
}

fn finish(problem: Problem, report: CriterionReport, mut notes: Vec<String>) -> Result<Synthesis> {
    if !report.is_certified() {
        return Err(Error::Infeasible(format!(
            "synthesized schedule is not certified by {}: {}",
            report.criterion,
            report.reasons.join("; ")
        )));
    }
    let mut additional = Vec::new();
    for id in AUTO_ORDER {
        if id == report.criterion {
            continue;
        }
        let r = criteria::check_lenient(&problem, id, &CheckOptions::default())?;
        if r.is_certified() {
            additional.push(r);
        }
    }
    let gains: Vec<f64> = problem
        .impulses
        .gains
        .iter()
        .copied()
        .chain(problem.impulses.periodic.map(|r| r.gain))
        .collect();
    if gains.iter().any(|&b| b < NEAR_ZERO_GAIN) {
        notes.push(format!(
            "near-zero gains (below {NEAR_ZERO_GAIN}): the schedule nearly resets the state"
        ));
    }
    Ok(Synthesis {
        problem,
        report,
        additional,
        notes,
    })
}

/// Uniform schedule `τ_j = jσ` with one gain from the uniform mass bound:
/// `B = safety·(1 − mq)` for stability, or `B = safety·(1 − mq − ε)` with
/// `ε = (1 − safety)(1 − mq)/2` for exponential stability.
///
/// With `sigma = None` the spacing starts at 1 and is bisected down while
/// `q(σ) > (1/m)(1 − 10⁻⁶)`.
pub fn synthesize_uniform(request: &SynthesisRequest) -> Result<Synthesis> {
    request.validate()?;
    let problem = &request.problem;
    let m = problem.m() as f64;
    let horizon_for = |sigma: f64| problem.horizon.unwrap_or(DEFAULT_PERIODS * sigma);
    let q_of = |sigma: f64| -> Result<f64> {
        let h = horizon_for(sigma);
        let mut q: f64 = 0.0;
        for term in &problem.terms {
            q = q.max(term.coefficient.sliding_sup_integral(sigma, h)?);
        }
        Ok(q)
    };
    let mut notes = Vec::new();
    if !problem.impulses.is_empty() {
        notes.push("the input impulse schedule was replaced".to_string());
    }
    let sigma = match request.sigma {
        Some(sigma) => {
            require_nonnegative(problem, horizon_for(sigma))?;
            let q = q_of(sigma)?;
            if q > 1.0 / m {
                return Err(Error::Infeasible(format!("q = {q} > {}", 1.0 / m)));
            }
            sigma
        }
        None => {
            let target = (1.0 / m) * (1.0 - 1e-6);
            require_nonnegative(problem, horizon_for(1.0))?;
            if q_of(1.0)? <= target {
                1.0
            } else {
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if q_of(mid)? <= target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if lo == 0.0 {
                    return Err(Error::Infeasible(format!(
                        "q(σ) stays above 1/m = {} for every σ > 0",
                        1.0 / m
                    )));
                }
                notes.push(format!("spacing reduced to σ = {lo} so that q(σ) < 1/m"));
                lo
            }
        }
    };
    let q = q_of(sigma)?;
    let slack = 1.0 - m * q;
    let gain = match request.target {
        Target::Stable => request.safety * slack,
        Target::ExponentiallyStable => {
            if problem.max_lag() > sigma {
                notes.push(format!(
                    "largest lag {} exceeds σ = {sigma}: exponential certificate unavailable, stability only",
                    problem.max_lag()
                ));
            }
            let epsilon = (1.0 - request.safety) * slack / 2.0;
            request.safety * (slack - epsilon)
        }
    };
    let designed = problem
        .clone()
        .with_impulses(ImpulseSchedule::uniform(sigma, gain))
        .with_horizon(horizon_for(sigma));
    let report = criteria::check_thm5(&designed, &CheckOptions::default())?;
    finish(designed, report, notes)
}

/// Per-interval gains at the given impulse times (single delayed term):
/// each interval's bound is affine in its gain, `value = B·P + Q`, and
/// `B_j = safety·(1 − Q)/P`. The last impulse reuses the previous gain.
pub fn synthesize_per_interval(request: &SynthesisRequest, impulse_times: &[f64]) -> Result<Synthesis> {
    request.validate()?;
    let problem = &request.problem;
    let a = match problem.terms.as_slice() {
        [term] => &term.coefficient,
        terms => return Err(Error::RequiresSingleDelay(terms.len())),
    };
    if impulse_times.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least two impulse times are needed".to_string(),
        ));
    }
    if !(impulse_times[0] > 0.0) || impulse_times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "impulse times must be positive and strictly increasing".to_string(),
        ));
    }
    let horizon = impulse_times[impulse_times.len() - 1];
    require_nonnegative(problem, horizon)?;
    let delay = &problem.terms[0].delay;
    let mut gains = Vec::with_capacity(impulse_times.len());
    let mut general = false;
    for (i, w) in impulse_times.windows(2).enumerate() {
        let sep = classify(delay, i + 1, w[0], w[1]);
        general |= sep.kind == SeparationKind::General;
        let (mut p, mut q) = (1.0, 0.0);
        for (t0, t1, below) in sep.regions() {
            let mass = a.integral(t0, t1);
            if below {
                q += mass;
            } else {
                let f = mass.exp();
                p *= f;
                q *= f;
            }
        }
        if q > 1.0 {
            return Err(Error::Infeasible(format!(
                "interval {} infeasible; tighten impulse times (bound {q} > 1 even with zero gain)",
                i + 1
            )));
        }
        gains.push(request.safety * (1.0 - q) / p);
    }
    gains.push(gains[gains.len() - 1]);
    let mut notes = Vec::new();
    if !problem.impulses.is_empty() {
        notes.push("the input impulse schedule was replaced".to_string());
    }
    let designed = problem
        .clone()
        .with_impulses(ImpulseSchedule::new(impulse_times.to_vec(), gains))
        .with_horizon(horizon);
    let criterion = if general { CriterionId::Thm4 } else { CriterionId::Thm3 };
    let report = criteria::check(&designed, criterion, &CheckOptions::default())?;
    finish(designed, report, notes)
}
