//! Empirical confirmation of certified verdicts by simulation.
//!
//! Random initial data come from a counter-based generator: trial `i` of a
//! run seeded with `seed` always uses stream `i` of `ChaCha8(seed)`, so the
//! draws do not depend on the order in which trials execute.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::criteria::{self, CheckOptions, CriterionId, CriterionReport, Verdict, AUTO_ORDER};
use crate::error::{Error, Result};
use crate::fundamental::{fit_points, EnvelopeFit};
use crate::integrator::{solve, SolveOptions};
use crate::model::{CoefficientSpec, DelaySpec, HistorySpec, ImpulseSchedule, Problem, Term};
use crate::par;

/// Largest number of constant pieces of a random prehistory.
pub const MAX_HISTORY_PIECES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Boundedness {
    /// `max_{trial, t} |x(t)| / (|x0| + sup|φ|)`
    pub k_emp: f64,
    pub worst_trial: usize,
    pub trials: usize,
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial data of trial `trial`. Trial 0 is `x0 = 1, φ ≡ 0`, trial 1 is
/// `x0 = 1, φ ≡ 1`; later trials draw `|x0| ≤ 1` and a piecewise-constant
/// `φ` with at most [`MAX_HISTORY_PIECES`] pieces on `[−max_lag, 0)` and
/// `sup|φ| ≤ 1`.
pub fn draw_initial_data(max_lag: f64, trial: usize, seed: u64) -> (f64, HistorySpec) {
    match trial {
        0 => return (1.0, HistorySpec::Zero),
        1 => return (1.0, HistorySpec::constant(1.0)),
        _ => {}
    }
    let mut rng = trial_rng(seed, trial as u64);
    let x0 = rng.random_range(-1.0..=1.0);
    if max_lag <= 0.0 {
        return (x0, HistorySpec::Zero);
    }
    let pieces = rng.random_range(1..=MAX_HISTORY_PIECES);
    let mut breakpoints: Vec<f64> = (1..pieces).map(|_| -max_lag * rng.random::<f64>()).collect();
    breakpoints.push(-max_lag);
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    let values = (0..breakpoints.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    (x0, HistorySpec::Piecewise { breakpoints, values })
}

/// Runs `trials` homogeneous solutions with random bounded initial data
/// and reports the worst amplification.
pub fn empirical_boundedness(problem: &Problem, trials: usize, opts: &SolveOptions, seed: u64) -> Result<Boundedness> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".to_string()));
    }
    let max_lag = problem.max_lag();
    let ratios: Result<Vec<f64>> = par::map(trials, |i| {
        let (x0, history) = draw_initial_data(max_lag, i, seed);
        let scale = x0.abs() + history.sup_abs();
        let p = problem
            .clone()
            .with_x0(x0)
            .with_history(history)
            .with_forcing(CoefficientSpec::default());
        let traj = solve(&p, opts)?;
        let peak = traj.abs_points().map(|(_, v)| v).fold(0.0, f64::max);
        Ok(if scale > 0.0 { peak / scale } else { 0.0 })
    })
    .into_iter()
    .collect();
    let ratios = ratios?;
    let (worst_trial, k_emp) =
        ratios.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, r)| if r > best.1 { (i, r) } else { best },
        );
    Ok(Boundedness {
        k_emp,
        worst_trial,
        trials,
    })
}

/// Decay fit of the per-impulse-interval maxima of `|x|` for `x0 = 1`,
/// `φ ≡ 1` and zero forcing.
pub fn empirical_decay(problem: &Problem, opts: &SolveOptions) -> Result<EnvelopeFit> {
    let p = problem
        .clone()
        .with_x0(1.0)
        .with_history(HistorySpec::constant(1.0))
        .with_forcing(CoefficientSpec::default());
    let traj = solve(&p, opts)?;
    let maxima = traj.interval_maxima();
    let nonzero = maxima.iter().filter(|m| m.1 > 0.0).count();
    if nonzero < 3 {
        return Err(Error::InsufficientData(format!(
            "{nonzero} impulse intervals with nonzero maxima (need 3)"
        )));
    }
    let all: Vec<(f64, f64)> = traj.abs_points().collect();
    Ok(fit_points(&maxima, &all))
}

/// `Σ_k ∫_0^{lag_k} |A_k|`: the weight of the prehistory in the solution.
fn history_weight(problem: &Problem) -> f64 {
    problem
        .terms
        .iter()
        .map(|t| {
            let lag = t.delay.max_lag().max(0.0);
            let (plus, minus) = t.coefficient.split_signs();
            plus.integral(0.0, lag) + minus.integral(0.0, lag)
        })
        .sum()
}

/// Bound on `sup_t |x(t)| / (|x0| + sup|φ|)` implied by a certifying
/// report: `K·max(1, I)` from a uniform bound `|X| ≤ K`, or
/// `N·max(1, I)/(1 − θ)` with `θ = N sup ΣA⁻ / λ` for sign-indefinite
/// coefficients, where `I = Σ_k ∫_0^{lag_k} |A_k|`.
pub fn certified_solution_bound(problem: &Problem, report: &CriterionReport) -> Option<f64> {
    if !report.is_certified() {
        return None;
    }
    let cert = report.certificate.as_ref()?;
    let weight = history_weight(problem).max(1.0);
    match (cert.negative_sup, cert.n, cert.lambda) {
        (Some(neg), Some(n), Some(lambda)) => {
            let theta = n * neg / lambda;
            (theta < 1.0).then(|| n * weight / (1.0 - theta))
        }
        _ => cert.k.map(|k| k * weight),
    }
}

/// Parameter ranges of randomly generated in-scope problems.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFamily {
    /// Range of coefficient values.
    pub coefficient: (f64, f64),
    /// Probability that a coefficient is periodic with a negative phase.
    pub negative_probability: f64,
    /// Largest magnitude of that negative phase.
    pub negative_max: f64,
    /// Range of the impulse spacing.
    pub sigma: (f64, f64),
    /// Range of constant lags relative to the spacing.
    pub lag_ratio: (f64, f64),
    /// Probability of `h(t) = t`.
    pub identity_probability: f64,
    /// Probability of a delay alternating around each impulse time.
    pub alternating_probability: f64,
    /// Largest number of delayed terms.
    pub max_terms: usize,
    /// Range of the gain as a fraction of the reference bound.
    pub gain_factor: (f64, f64),
    /// Horizon in impulse periods.
    pub periods: f64,
}

impl Default for SweepFamily {
    fn default() -> Self {
        SweepFamily {
            coefficient: (0.0, 1.0),
            negative_probability: 0.25,
            negative_max: 0.1,
            sigma: (0.5, 2.0),
            lag_ratio: (0.0, 1.5),
            identity_probability: 0.15,
            alternating_probability: 0.15,
            max_terms: 2,
            gain_factor: (0.0, 1.1),
            periods: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOptions {
    pub trials: usize,
    pub step: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { trials: 20, step: 0.01 }
    }
}

/// One confirmation of a certified verdict. For boundedness rows `bound`
/// is the certified amplification and `observed` the empirical one; for
/// `<criterion>/decay` rows `bound` is half the certified rate and
/// `observed` the fitted rate. `ratio > 1` beyond the tolerance is flagged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub sample_id: usize,
    pub criterion: String,
    pub verdict: Verdict,
    pub bound: f64,
    pub observed: f64,
    pub ratio: f64,
    pub flag: bool,
}

/// Relative excess over a certified amplification bound that counts as a
/// discrepancy.
pub const BOUND_TOLERANCE: f64 = 0.05;

fn alternating_delay(sigma: f64) -> DelaySpec {
    let pts = [
        [0.0, -0.5],
        [0.3, -0.2],
        [0.3, 0.1],
        [0.6, 0.1],
        [0.6, -0.4],
        [1.0, 0.0],
    ];
    DelaySpec::periodic_table(pts.iter().map(|p| [p[0] * sigma, p[1] * sigma]).collect(), sigma)
}

/// Draws sample `id` of `family`.
pub fn sample_problem(family: &SweepFamily, id: usize, seed: u64) -> Problem {
    let mut rng = trial_rng(seed, id as u64);
    let sigma = rng.random_range(family.sigma.0..=family.sigma.1);
    let m = rng.random_range(1..=family.max_terms.max(1));
    let (lo, hi) = family.coefficient;
    let terms: Vec<Term> = (0..m)
        .map(|_| {
            let coefficient = if rng.random_bool(family.negative_probability) {
                let period = rng.random_range(0.5..=3.0);
                let split = rng.random_range(0.2..=0.8) * period;
                let neg = -family.negative_max * rng.random::<f64>();
                CoefficientSpec::periodic(vec![0.0, split], vec![rng.random_range(lo..=hi), neg], period)
            } else {
                CoefficientSpec::constant(rng.random_range(lo..=hi))
            };
            let u: f64 = rng.random();
            let delay = if u < family.identity_probability {
                DelaySpec::Identity
            } else if u < family.identity_probability + family.alternating_probability {
                alternating_delay(sigma)
            } else {
                DelaySpec::constant_lag(sigma * rng.random_range(family.lag_ratio.0..=family.lag_ratio.1))
            };
            Term { coefficient, delay }
        })
        .collect();
    let horizon = family.periods * sigma;
    // reference gain: the uniform bound when it is positive, else the
    // per-interval growth of the undelayed equation
    let mut q: f64 = 0.0;
    let mut mass = 0.0;
    for t in &terms {
        let plus = t.coefficient.split_signs().0;
        let s = plus.sliding_sup_integral(sigma, horizon).unwrap_or(f64::INFINITY);
        q = q.max(s);
        mass += s;
    }
    let uniform = 1.0 - m as f64 * q;
    let reference = if uniform > 0.0 { uniform } else { (-mass).exp() };
    let factor = rng.random_range(family.gain_factor.0..=family.gain_factor.1);
    Problem::new(terms, ImpulseSchedule::uniform(sigma, factor * reference), 1.0).with_horizon(horizon)
}

/// Criteria exercised by the sweep.
pub const SWEEP_CRITERIA: [CriterionId; 6] = AUTO_ORDER;

/// Checks every sample with every criterion and confirms each certified
/// verdict by simulation. Rows with `flag` set are discrepancies.
pub fn falsification_sweep(
    family: &SweepFamily,
    samples: usize,
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<SweepRecord>> {
    let rows: Result<Vec<Vec<SweepRecord>>> = par::map(samples, |id| sweep_sample(family, id, seed, opts))
        .into_iter()
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

fn sweep_sample(family: &SweepFamily, id: usize, seed: u64, opts: &SweepOptions) -> Result<Vec<SweepRecord>> {
    let problem = sample_problem(family, id, seed);
    let check_opts = CheckOptions {
        step: opts.step,
        ..CheckOptions::default()
    };
    let mut certified = Vec::new();
    for crit in SWEEP_CRITERIA {
        let report = criteria::check_lenient(&problem, crit, &check_opts)?;
        if report.is_certified() {
            certified.push(report);
        }
    }
    let mut out = Vec::new();
    if certified.is_empty() {
        return Ok(out);
    }
    let solve_opts = SolveOptions::new(opts.step, problem.horizon.expect("sampled with horizon"));
    let trial_seed = seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let emp = empirical_boundedness(&problem, opts.trials, &solve_opts, trial_seed)?;
    let needs_decay = certified.iter().any(|r| r.verdict == Verdict::ExponentiallyStable);
    let decay = if needs_decay {
        Some(empirical_decay(&problem, &solve_opts)?)
    } else {
        None
    };
    for report in &certified {
        if let Some(bound) = certified_solution_bound(&problem, report) {
            let ratio = emp.k_emp / bound;
            out.push(SweepRecord {
                sample_id: id,
                criterion: report.criterion.to_string(),
                verdict: report.verdict,
                bound,
                observed: emp.k_emp,
                ratio,
                flag: ratio > 1.0 + BOUND_TOLERANCE,
            });
        }
        if report.verdict == Verdict::ExponentiallyStable {
            let lambda = report
                .certificate
                .as_ref()
                .and_then(|c| c.lambda)
                .expect("exponential verdicts carry a rate");
            let fit = decay.expect("computed above");
            let bound = 0.5 * lambda;
            let ratio = if fit.lambda.is_infinite() {
                0.0
            } else {
                bound / fit.lambda
            };
            out.push(SweepRecord {
                sample_id: id,
                criterion: format!("{}/decay", report.criterion),
                verdict: report.verdict,
                bound,
                observed: fit.lambda,
                ratio,
                flag: !(fit.lambda >= bound),
            });
        }
    }
    Ok(out)
}

/// CSV `sample_id,criterion,verdict,bound,observed,ratio,flag`.
pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from("sample_id,criterion,verdict,bound,observed,ratio,flag\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.sample_id, r.criterion, r.verdict, r.bound, r.observed, r.ratio, r.flag
        ));
    }
    out
}
