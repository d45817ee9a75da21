//! Sufficient stability conditions for impulsive delay equations.
//!
//! Every checker returns a [`CriterionReport`] whose verdict is one of
//! stable, exponentially stable or inconclusive. Suprema over `t ≥ 0` are
//! taken over the finite analysis horizon: [`CheckOptions::horizon`], else
//! the problem's own horizon, else one derived from its impulse schedule.

mod report;
mod separation;

pub use report::{Certificate, CriterionId, CriterionReport, IntervalRecord, Verdict};
pub use separation::{classify, find_separation_points, IntervalSeparation, SeparationKind};

use crate::error::{Error, Result};
use crate::integrator::{check_coverage, Ivp, Prehistory, SolveOptions};
use crate::model::{sup_of_sum, CoefficientSpec, Impulse, Problem, Term};
use crate::par;

/// Relative margin for strict inequalities.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOptions {
    /// Overrides the problem's analysis horizon.
    pub horizon: Option<f64>,
    /// Only intervals opened by `τ_j` with `j ≥ tail_from` are checked.
    pub tail_from: usize,
    /// Safety margin for quantities obtained by numerical integration.
    pub m0: f64,
    /// Replaces the maximal feasible ε of the exponential estimate.
    pub epsilon: Option<f64>,
    /// Integration step for auxiliary problems.
    pub step: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            horizon: None,
            tail_from: 1,
            m0: 1e-6,
            epsilon: None,
            step: 1e-3,
        }
    }
}

/// Resolved horizon and impulses of a checked problem.
#[derive(Debug, Clone)]
struct Context {
    horizon: f64,
    impulses: Vec<Impulse>,
    tail_from: usize,
}

/// One checked interval: `(j, τ_j, B_j, τ_{j+1})`.
type Interval = (usize, f64, f64, f64);

impl Context {
    fn new(problem: &Problem, opts: &CheckOptions) -> Result<Context> {
        problem.ensure_valid()?;
        let horizon = resolve_horizon(problem, opts)?;
        check_coverage(problem, horizon)?;
        Ok(Context {
            horizon,
            impulses: problem.impulses.until(horizon),
            tail_from: opts.tail_from.max(1),
        })
    }

    fn intervals(&self) -> Vec<Interval> {
        self.impulses
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i + 1, w[0].time, w[0].gain, w[1].time))
            .filter(|iv| iv.0 >= self.tail_from)
            .collect()
    }

    /// Impulses `τ_j` with `j ≥ tail_from`.
    fn tail(&self) -> &[Impulse] {
        let skip = (self.tail_from - 1).min(self.impulses.len());
        &self.impulses[skip..]
    }

    /// `(ρ, σ)`: smallest and largest gap of `0 = τ_0 < τ_1 < …`.
    fn spacing(&self) -> Option<(f64, f64)> {
        let mut prev = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in &self.impulses {
            lo = lo.min(i.time - prev);
            hi = hi.max(i.time - prev);
            prev = i.time;
        }
        (!self.impulses.is_empty()).then_some((lo, hi))
    }
}

/// The analysis horizon for `problem` under `opts`.
pub fn resolve_horizon(problem: &Problem, opts: &CheckOptions) -> Result<f64> {
    opts.horizon
        .or_else(|| problem.analysis_horizon())
        .ok_or_else(|| Error::InvalidArgument("no analysis horizon: set \"horizon\" or provide impulses".to_string()))
}

/// `exp{Σ_k sup_t ∫_t^{t+σ} A_k}`, the bound on `|X(t,s)|` shared by the
/// per-interval criteria.
fn mass_bound(terms: &[Term], sigma: f64, horizon: f64) -> Result<f64> {
    let mut sum = 0.0;
    for term in terms {
        sum += term.coefficient.sliding_sup_integral(sigma, horizon)?;
    }
    Ok(sum.exp())
}

/// Reports an unmet sign precondition, if any.
fn sign_preconditions(problem: &Problem, ctx: &Context, id: CriterionId) -> Option<CriterionReport> {
    if !problem.coefficients_nonnegative(ctx.horizon) {
        return Some(CriterionReport::unmet(
            id,
            "coefficients take negative values; try thm6",
        ));
    }
    if !problem.gains_nonnegative(ctx.horizon) {
        return Some(CriterionReport::unmet(id, "negative impulse gains"));
    }
    None
}

fn describe_failures(records: &[IntervalRecord], limit: f64, what: &str) -> Vec<String> {
    let bad: Vec<&IntervalRecord> = records.iter().filter(|r| r.value > limit).collect();
    let mut out: Vec<String> = bad
        .iter()
        .take(5)
        .map(|r| {
            format!(
                "interval j = {} (τ = {}): {what} = {} exceeds {limit}",
                r.j, r.tau, r.value
            )
        })
        .collect();
    if bad.len() > 5 {
        out.push(format!("... and {} more intervals", bad.len() - 5));
    }
    out
}

/// Shared tail of the per-interval criteria: margin, verdict, certificate.
fn finish_per_interval(
    mut report: CriterionReport,
    problem: &Problem,
    ctx: &Context,
    limit: f64,
    what: &str,
) -> Result<CriterionReport> {
    report.margin = report
        .intervals
        .iter()
        .map(|r| limit - r.value)
        .fold(f64::INFINITY, f64::min);
    if report.margin >= 0.0 {
        let (_, sigma) = ctx.spacing().expect("intervals imply impulses");
        report.verdict = Verdict::Stable;
        report.certificate = Some(Certificate {
            sigma: Some(sigma),
            k: Some(mass_bound(&problem.terms, sigma, ctx.horizon)?),
            ..Certificate::default()
        });
    } else {
        let reasons = describe_failures(&report.intervals, limit, what);
        report.reasons.extend(reasons);
    }
    Ok(report)
}

fn no_intervals(id: CriterionId) -> CriterionReport {
    CriterionReport::unmet(id, "no complete impulse interval within the horizon")
}

/// Solves `ẏ = Σ A_k y[h_k]` on each interval with `y ≡ 1` before `τ_j` and
/// `y(τ_j) = B_j`, and requires `y(τ_{j+1} − 0) ≤ 1 − m₀`.
pub fn check_thm2(problem: &Problem, opts: &CheckOptions) -> Result<CriterionReport> {
    let id = CriterionId::Thm2;
    let ctx = Context::new(problem, opts)?;
    if let Some(r) = sign_preconditions(problem, &ctx, id) {
        return Ok(r);
    }
    let intervals = ctx.intervals();
    if intervals.is_empty() {
        return Ok(no_intervals(id));
    }
    let values: Result<Vec<f64>> = par::map(intervals.len(), |i| {
        let (_, tau, gain, next) = intervals[i];
        let traj = Ivp {
            terms: &problem.terms,
            forcing: None,
            start: tau,
            x_start: gain,
            prehistory: Prehistory::Constant(1.0),
            impulses: Vec::new(),
        }
        .integrate(&SolveOptions::new(opts.step, next))?;
        Ok(traj.final_value())
    })
    .into_iter()
    .collect();
    let mut report = CriterionReport::new(id);
    report.intervals = intervals
        .iter()
        .zip(values?)
        .map(|(&(j, tau, _, _), value)| IntervalRecord {
            j,
            tau,
            value,
            points: Vec::new(),
        })
        .collect();
    finish_per_interval(report, problem, &ctx, 1.0 - opts.m0, "y(τ_{j+1})")
}

fn single_coefficient(problem: &Problem) -> Result<&CoefficientSpec> {
    match problem.terms.as_slice() {
        [term] => Ok(&term.coefficient),
        terms => Err(Error::RequiresSingleDelay(terms.len())),
    }
}

/// `sup_j (B_j + ∫_{τ_j}^{t_j} A) exp{∫_{t_j}^{τ_{j+1}} A} ≤ 1` under the
/// separation condition.
pub fn check_thm3(problem: &Problem, opts: &CheckOptions) -> Result<CriterionReport> {
    let id = CriterionId::Thm3;
    let a = single_coefficient(problem)?;
    let ctx = Context::new(problem, opts)?;
    if let Some(r) = sign_preconditions(problem, &ctx, id) {
        return Ok(r);
    }
    let intervals = ctx.intervals();
    if intervals.is_empty() {
        return Ok(no_intervals(id));
    }
    let delay = &problem.terms[0].delay;
    let mut report = CriterionReport::new(id);
    for &(j, tau, gain, next) in &intervals {
        let sep = classify(delay, j, tau, next);
        let Some(tj) = sep.t_j() else {
            return Ok(CriterionReport::unmet(
                id,
                format!(
                    "interval j = {j}: the delay crosses τ_j {} times (separation condition fails); use thm4 or thm2",
                    sep.points.len() - 1
                ),
            ));
        };
        let value = (gain + a.integral(tau, tj)) * a.integral(tj, next).exp();
        report.intervals.push(IntervalRecord {
            j,
            tau,
            value,
            points: vec![tj],
        });
    }
    finish_per_interval(report, problem, &ctx, 1.0, "value")
}

/// Constant-lag closed form: `μ_j ≤ 1` with
/// `μ_j = (B_j + ∫_{τ_j}^{τ_j+δ} A) exp{∫_{τ_j+δ}^{τ_{j+1}} A}` when
/// `δ < τ_{j+1} − τ_j`, else `B_j + ∫_{τ_j}^{τ_{j+1}} A`.
pub fn check_mu(problem: &Problem, opts: &CheckOptions) -> Result<CriterionReport> {
    let id = CriterionId::Mu;
    let a = single_coefficient(problem)?;
    let delta = match problem.terms[0].delay {
        crate::model::DelaySpec::Identity => 0.0,
        crate::model::DelaySpec::ConstantLag { delta } => delta,
        _ => return Err(Error::RequiresConstantLag),
    };
    let ctx = Context::new(problem, opts)?;
    if let Some(r) = sign_preconditions(problem, &ctx, id) {
        return Ok(r);
    }
    let intervals = ctx.intervals();
    if intervals.is_empty() {
        return Ok(no_intervals(id));
    }
    let mut report = CriterionReport::new(id);
    for &(j, tau, gain, next) in &intervals {
        let value = if delta < next - tau {
            let t = tau + delta;
            (gain + a.integral(tau, t)) * a.integral(t, next).exp()
        } else {
            gain + a.integral(tau, next)
        };
        report.intervals.push(IntervalRecord {
            j,
            tau,
            value,
            points: Vec::new(),
        });
    }
    finish_per_interval(report, problem, &ctx, 1.0, "mu_j")
}

/// Nested bound under the general separation condition: starting from
/// `B_j`, each region with `h ≤ τ_j` adds `∫A`, each region with `h ≥ τ_j`
/// multiplies by `exp{∫A}`.
pub fn check_thm4(problem: &Problem, opts: &CheckOptions) -> Result<CriterionReport> {
    let id = CriterionId::Thm4;
    let a = single_coefficient(problem)?;
    let ctx = Context::new(problem, opts)?;
    if let Some(r) = sign_preconditions(problem, &ctx, id) {
        return Ok(r);
    }
    let intervals = ctx.intervals();
    if intervals.is_empty() {
        return Ok(no_intervals(id));
    }
    let delay = &problem.terms[0].delay;
    let mut report = CriterionReport::new(id);
    let mut open_ended = Vec::new();
    for &(j, tau, gain, next) in &intervals {
        let sep = classify(delay, j, tau, next);
        let mut value = gain;
        for (t0, t1, below) in sep.regions() {
            let mass = a.integral(t0, t1);
            if below {
                value += mass;
            } else {
                value *= mass.exp();
            }
        }
        if sep.ends_below() {
            open_ended.push(j);
        }
        report.intervals.push(IntervalRecord {
            j,
            tau,
            value,
            points: sep.points,
        });
    }
    let mut report = finish_per_interval(report, problem, &ctx, 1.0, "nested value")?;
    if !open_ended.is_empty() {
        report.reasons.push(format!(
            "alternation ends below τ_j on {} interval(s) (first j = {}); the final region contributes its integral additively",
            open_ended.len(),
            open_ended[0]
        ));
    }
    Ok(report)
}

/// `q`, stability and exponential estimate for nonnegative coefficients.
fn thm5_core(id: CriterionId, problem: &Problem, ctx: &Context, opts: &CheckOptions) -> Result<CriterionReport> {
    let Some((rho, sigma)) = ctx.spacing() else {
        return Ok(CriterionReport::unmet(id, "no impulses within the horizon"));
    };
    let tail = ctx.tail();
    if tail.is_empty() {
        return Ok(CriterionReport::unmet(id, "no impulses from tail_from on"));
    }
    let m = problem.m() as f64;
    let mut q: f64 = 0.0;
    for term in &problem.terms {
        q = q.max(term.coefficient.sliding_sup_integral(sigma, ctx.horizon)?);
    }
    let sup_b = tail.iter().map(|i| i.gain).fold(f64::NEG_INFINITY, f64::max);
    let mut report = CriterionReport::new(id);
    report.intervals = tail
        .iter()
        .enumerate()
        .map(|(i, imp)| IntervalRecord {
            j: ctx.tail_from + i,
            tau: imp.time,
            value: m * q + imp.gain,
            points: Vec::new(),
        })
        .collect();
    report.margin = (1.0 / m - q).min(1.0 - m * q - sup_b);
    let mut cert = Certificate {
        q: Some(q),
        sigma: Some(sigma),
        ..Certificate::default()
    };
    if q > 1.0 / m {
        report.reasons.push(format!("q = {q} > 1/m = {}", 1.0 / m));
        report.certificate = Some(cert);
        return Ok(report);
    }
    if report.margin < 0.0 {
        report
            .reasons
            .extend(describe_failures(&report.intervals, 1.0, "mq + B_j"));
        report.certificate = Some(cert);
        return Ok(report);
    }
    cert.k = Some((m * q).exp());
    report.verdict = Verdict::Stable;

    let epsilon = opts.epsilon.unwrap_or(1.0 - m * q - sup_b);
    let max_lag = problem.max_lag();
    if !(epsilon > 0.0) {
        report
            .reasons
            .push("no ε > 0 with B_j ≤ 1 − mq − ε; exponential estimate unavailable".to_string());
    } else if sup_b > 1.0 - m * q - epsilon {
        report.reasons.push(format!(
            "supplied ε = {epsilon} exceeds 1 − mq − sup B_j = {}",
            1.0 - m * q - sup_b
        ));
    } else if max_lag > rho {
        report.reasons.push(format!(
            "largest lag {max_lag} exceeds the smallest impulse spacing ρ = {rho}; exponential estimate unavailable"
        ));
    } else {
        let n = (m * q).exp() / (1.0 - epsilon);
        let lambda = -(1.0 - epsilon).ln() / rho;
        cert.rho = Some(rho);
        cert.epsilon = Some(epsilon);
        cert.n = Some(n);
        cert.lambda = Some(lambda);
        report.verdict = Verdict::ExponentiallyStable;
    }
    report.certificate = Some(cert);
    Ok(report)
}

/// `q = max_k sup_t ∫_t^{t+σ} A_k ≤ 1/m` and `0 ≤ B_j ≤ 1 − mq`; with
/// `B_j ≤ 1 − mq − ε` and all lags at most the smallest spacing `ρ`, also
/// the estimate `N = e^{mq}/(1−ε)`, `λ = −ln(1−ε)/ρ`.
pub fn check_thm5(problem: &Problem, opts: &CheckOptions) -> Result<CriterionReport> {
    let id = CriterionId::Thm5;
    let ctx = Context::new(problem, opts)?;
    if let Some(r) = sign_preconditions(problem, &ctx, id) {
        return Ok(r);
    }
    thm5_core(id, problem, &ctx, opts)
}

/// Splits `A_k = A_k⁺ − A_k⁻`, takes `N`, `λ` from the positive part and
/// requires `sup Σ_k A_k⁻ < λ/N`.
pub fn check_thm6(problem: &Problem, opts: &CheckOptions) -> Result<CriterionReport> {
    let id = CriterionId::Thm6;
    let ctx = Context::new(problem, opts)?;
    if !problem.gains_nonnegative(ctx.horizon) {
        return Ok(CriterionReport::unmet(id, "negative impulse gains"));
    }
    let mut positive = problem.clone();
    let mut negatives = Vec::with_capacity(problem.m());
    for term in &mut positive.terms {
        let (plus, minus) = term.coefficient.split_signs();
        term.coefficient = plus;
        negatives.push(minus);
    }
    let neg_sup = sup_of_sum(&negatives, 0.0, ctx.horizon).max(0.0);
    let mut report = thm5_core(id, &positive, &ctx, opts)?;
    if neg_sup == 0.0 {
        report
            .reasons
            .push("negative parts vanish; the nonnegative criterion applies unchanged".to_string());
        return Ok(report);
    }
    let Some(cert) = report.certificate.as_mut() else {
        return Ok(report);
    };
    cert.negative_sup = Some(neg_sup);
    let (Some(n), Some(lambda)) = (cert.n, cert.lambda) else {
        report.verdict = Verdict::Inconclusive;
        report.margin = f64::NEG_INFINITY;
        report
            .reasons
            .push("no exponential estimate for the positive part".to_string());
        return Ok(report);
    };
    let bound = lambda / n;
    report.margin = bound * (1.0 - STRICT_MARGIN) - neg_sup;
    if report.margin < 0.0 {
        report.verdict = Verdict::Inconclusive;
        report
            .reasons
            .push(format!("sup Σ A_k⁻ = {neg_sup} is not below λ/N = {bound}"));
    }
    Ok(report)
}

/// Dispatches to one criterion. `thm1` needs a reference problem and is
/// available only through [`check_dominance`].
pub fn check(problem: &Problem, criterion: CriterionId, opts: &CheckOptions) -> Result<CriterionReport> {
    match criterion {
        CriterionId::Thm1 => Err(Error::InvalidArgument(
            "thm1 needs a reference problem; use check_dominance".to_string(),
        )),
        CriterionId::Thm2 => check_thm2(problem, opts),
        CriterionId::Thm3 => check_thm3(problem, opts),
        CriterionId::Mu => check_mu(problem, opts),
        CriterionId::Thm4 => check_thm4(problem, opts),
        CriterionId::Thm5 => check_thm5(problem, opts),
        CriterionId::Thm6 => check_thm6(problem, opts),
    }
}

/// Order used by [`check_auto`]: closed forms first, then the numerical
/// auxiliary problem, then the perturbation criterion.
pub const AUTO_ORDER: [CriterionId; 6] = [
    CriterionId::Thm5,
    CriterionId::Mu,
    CriterionId::Thm3,
    CriterionId::Thm4,
    CriterionId::Thm2,
    CriterionId::Thm6,
];

/// Runs `criterion`, turning inapplicability into an inconclusive report.
pub fn check_lenient(problem: &Problem, criterion: CriterionId, opts: &CheckOptions) -> Result<CriterionReport> {
    match check(problem, criterion, opts) {
        Err(e @ (Error::RequiresSingleDelay(_) | Error::RequiresConstantLag)) => {
            Ok(CriterionReport::unmet(criterion, e.to_string()))
        }
        other => other,
    }
}

/// Tries [`AUTO_ORDER`] and returns the first certifying report. If none
/// certifies, returns the attempt with the largest margin, carrying every
/// attempt's reasons prefixed by its criterion.
pub fn check_auto(problem: &Problem, opts: &CheckOptions) -> Result<CriterionReport> {
    let mut attempts = Vec::new();
    for id in AUTO_ORDER {
        let report = check_lenient(problem, id, opts)?;
        if report.is_certified() {
            return Ok(report);
        }
        attempts.push(report);
    }
    let reasons: Vec<String> = attempts
        .iter()
        .flat_map(|r| r.reasons.iter().map(move |m| format!("{}: {m}", r.criterion)))
        .collect();
    let mut best = attempts
        .into_iter()
        .reduce(|a, b| if b.margin > a.margin { b } else { a })
        .expect("at least one attempt");
    best.reasons = reasons;
    Ok(best)
}

/// Certifies `candidate` by pointwise domination: same delays and impulse
/// times, `0 ≤ Ã_k ≤ A_k` and `0 ≤ B̃_j ≤ B_j`. The candidate inherits the
/// verdict and certificate of `reference_report`.
pub fn check_dominance(
    candidate: &Problem,
    reference: &Problem,
    reference_report: &CriterionReport,
    opts: &CheckOptions,
) -> Result<CriterionReport> {
    let id = CriterionId::Thm1;
    candidate.ensure_valid()?;
    let horizon = resolve_horizon(reference, opts)?;
    check_coverage(candidate, horizon)?;
    check_coverage(reference, horizon)?;
    if candidate.m() != reference.m() {
        return Err(Error::StructuralMismatch(format!(
            "{} delayed terms versus {} in the reference",
            candidate.m(),
            reference.m()
        )));
    }
    for (k, (c, r)) in candidate.terms.iter().zip(&reference.terms).enumerate() {
        if c.delay != r.delay {
            return Err(Error::StructuralMismatch(format!(
                "delay of term {} differs from the reference",
                k + 1
            )));
        }
    }
    let ci = candidate.impulses.until(horizon);
    let ri = reference.impulses.until(horizon);
    if ci.len() != ri.len() || ci.iter().zip(&ri).any(|(a, b)| a.time != b.time) {
        return Err(Error::StructuralMismatch(
            "impulse times differ from the reference".to_string(),
        ));
    }
    for (a, b) in ci.iter().zip(&ri) {
        if !(a.gain >= 0.0 && a.gain <= b.gain) {
            return Err(Error::DominanceViolated(format!(
                "gain {} at τ = {} is outside [0, {}]",
                a.gain, a.time, b.gain
            )));
        }
    }
    const GRID: usize = 1000;
    for (k, (c, r)) in candidate.terms.iter().zip(&reference.terms).enumerate() {
        let mut pts: Vec<f64> = (0..=GRID).map(|i| horizon * i as f64 / GRID as f64).collect();
        pts.extend(c.coefficient.knots(0.0, horizon));
        pts.extend(r.coefficient.knots(0.0, horizon));
        pts.sort_by(f64::total_cmp);
        for &t in &pts {
            let mut sides = vec![(c.coefficient.value(t), r.coefficient.value(t))];
            if t > 0.0 {
                sides.push((c.coefficient.value_left(t), r.coefficient.value_left(t)));
            }
            for (ct, rt) in sides {
                if !(ct >= 0.0 && ct <= rt) {
                    return Err(Error::DominanceViolated(format!(
                        "coefficient {}: candidate value {ct} is outside [0, {rt}] at t = {t}",
                        k + 1
                    )));
                }
            }
        }
    }
    let mut report = CriterionReport::new(id);
    if !reference_report.is_certified() {
        report
            .reasons
            .push(format!("reference is not certified by {}", reference_report.criterion));
        return Ok(report);
    }
    report.verdict = reference_report.verdict;
    report.margin = reference_report.margin;
    report.certificate = reference_report.certificate.clone();
    report.reasons.push(format!(
        "dominated by a reference certified by {}",
        reference_report.criterion
    ));
    Ok(report)
}
