//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL`
//! line; the process fails if any criterion fails.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use impstab::criteria::{self, CheckOptions, CriterionReport, SeparationKind, Verdict};
use impstab::fundamental::{self, FundamentalKind};
use impstab::integrator::{solve, SolveOptions};
use impstab::model::{CoefficientSpec, DelaySpec, HistorySpec, ImpulseSchedule, Problem, Term};
use impstab::synth::{self, SynthesisRequest, Target};
use impstab::verify::{self, SweepFamily, SweepOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn benchmark() -> Problem {
    Problem::single(
        CoefficientSpec::constant(1.0),
        DelaySpec::Identity,
        ImpulseSchedule::uniform(1.0, 0.25),
    )
}

/// `0.25^⌊t⌋ e^t` and its left limit: each unit interval multiplies by
/// `e/4`, so the decay rate is `ln 4 − 1`.
fn benchmark_exact(t: f64, left: bool) -> f64 {
    let mut k = t.floor();
    if left && t == k && k > 0.0 {
        k -= 1.0;
    }
    0.25f64.powf(k) * t.exp()
}

fn benchmark_max_error(step: f64) -> Result<(f64, f64), String> {
    let traj = solve(&benchmark(), &SolveOptions::new(step, 10.0)).map_err(|e| e.to_string())?;
    let mut abs = 0.0f64;
    let mut rel = 0.0f64;
    for s in traj.samples() {
        let mut pairs = vec![(s.x, benchmark_exact(s.t, false))];
        if let Some(l) = s.left_limit {
            pairs.push((l, benchmark_exact(s.t, true)));
        }
        for (x, exact) in pairs {
            abs = abs.max((x - exact).abs());
            rel = rel.max((x - exact).abs() / exact.abs());
        }
    }
    Ok((abs, rel))
}

fn criterion_1() -> Outcome {
    let (_, rel) = benchmark_max_error(1e-3)?;
    ensure(rel < 1e-6, || format!("max relative error {rel:.3e}"))?;
    let fit = verify::empirical_decay(&benchmark(), &SolveOptions::new(1e-3, 10.0)).map_err(|e| e.to_string())?;
    let target = 4f64.ln() - 1.0;
    let ratio = fit.lambda / target;
    ensure((0.98..=1.02).contains(&ratio), || {
        format!("fitted rate {} vs {target}", fit.lambda)
    })?;
    Ok(format!(
        "max rel error {rel:.2e}, fitted rate {:.6} ({ratio:.4} of ln 4 - 1)",
        fit.lambda
    ))
}

fn random_coefficient(r: &mut ChaCha8Rng, nonnegative: bool) -> CoefficientSpec {
    let lo = if nonnegative { 0.0 } else { -0.4 };
    if r.random_bool(0.5) {
        CoefficientSpec::constant(r.random_range(lo..=1.0))
    } else {
        let period = r.random_range(0.7..=2.0);
        let cut = r.random_range(0.2..=0.8) * period;
        CoefficientSpec::periodic(
            vec![0.0, cut],
            vec![r.random_range(lo..=1.0), r.random_range(lo..=1.0)],
            period,
        )
    }
}

fn random_delay(r: &mut ChaCha8Rng) -> DelaySpec {
    match r.random_range(0..4) {
        0 => DelaySpec::Identity,
        1 => DelaySpec::periodic_table(vec![[0.0, -0.5], [0.4, -0.1], [0.4, 0.2], [1.0, 0.6]], 1.0),
        _ => DelaySpec::constant_lag(r.random_range(0.0..=1.5)),
    }
}

fn random_history(r: &mut ChaCha8Rng, max_lag: f64, nonnegative: bool) -> HistorySpec {
    let lo = if nonnegative { 0.0 } else { -1.0 };
    if max_lag <= 0.0 {
        return HistorySpec::Zero;
    }
    let cut = -r.random_range(0.2..=0.8) * max_lag;
    HistorySpec::Piecewise {
        breakpoints: vec![-max_lag, cut],
        values: vec![r.random_range(lo..=1.0), r.random_range(lo..=1.0)],
    }
}

/// Random problem of the supported class; `nonnegative` restricts all data
/// to `A ≥ 0`, `B ≥ 0`, `φ ≥ 0`.
fn random_problem(r: &mut ChaCha8Rng, nonnegative: bool) -> Problem {
    let m = r.random_range(1..=2);
    let terms: Vec<Term> = (0..m)
        .map(|_| Term::new(random_coefficient(r, nonnegative), random_delay(r)))
        .collect();
    let period = r.random_range(0.5..=1.5);
    let gain = if nonnegative {
        r.random_range(0.0..=1.5)
    } else {
        r.random_range(-0.5..=1.5)
    };
    let mut p = Problem::new(
        terms,
        ImpulseSchedule::uniform(period, gain),
        r.random_range(-1.0..=1.0),
    );
    let lag = p.max_lag();
    p = p.with_history(random_history(r, lag, nonnegative));
    p
}

fn criterion_2() -> Outcome {
    let horizon = 4.0;
    let step = 1e-3;
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut r = rng(0x5EED_0002 + i);
        let problem = random_problem(&mut r, false).with_forcing(CoefficientSpec::periodic(
            vec![0.0, 0.5],
            vec![r.random_range(0.2..=1.0), -r.random_range(0.2..=1.0)],
            1.3,
        ));
        let opts = SolveOptions::new(step, horizon);
        let direct = solve(&problem, &opts).map_err(|e| e.to_string())?;
        let grid = fundamental::representation_grid(&problem, 4.0 * step, horizon);
        let table = fundamental::fundamental_table(&problem, &grid, FundamentalKind::Impulsive, &opts)
            .map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let t = r.random_range(0.05..=horizon);
            let rep = fundamental::representation_solution(&problem, &table, t).map_err(|e| e.to_string())?;
            let x = direct.eval(t).map_err(|e| e.to_string())?;
            let err = (rep - x).abs() / (1.0 + x.abs());
            worst = worst.max(err);
            ensure(err < 1e-3, || {
                format!("problem {i}, t = {t}: representation {rep} vs direct {x}")
            })?;
        }
    }
    Ok(format!("200 probes, worst scaled error {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let grid: Vec<f64> = (0..=6).map(|i| 0.5 * i as f64).collect();
    let opts = SolveOptions::new(5e-3, 6.0);
    let mut min = f64::INFINITY;
    for i in 0..100u64 {
        let problem = random_problem(&mut rng(0x5EED_0003 + i), true);
        let table = fundamental::fundamental_table(&problem, &grid, FundamentalKind::Impulsive, &opts)
            .map_err(|e| e.to_string())?;
        let v = table.min_value();
        min = min.min(v);
        ensure(v >= -1e-12, || format!("problem {i}: min X = {v:e}"))?;
    }
    Ok(format!("100 tables, smallest X = {min:.3e}"))
}

/// Same structure with every coefficient value and the gain scaled into
/// `[0, 1]` of the original, so both problems share their integration mesh.
fn dominated(r: &mut ChaCha8Rng, p: &Problem) -> Problem {
    let mut q = p.clone();
    for term in &mut q.terms {
        match &mut term.coefficient {
            CoefficientSpec::Constant { value } => *value *= r.random_range(0.0..=1.0),
            CoefficientSpec::Piecewise { values, .. } => {
                for v in values {
                    *v *= r.random_range(0.0..=1.0);
                }
            }
            CoefficientSpec::Table { .. } => unreachable!("not generated"),
        }
    }
    if let Some(rule) = &mut q.impulses.periodic {
        rule.gain *= r.random_range(0.0..=1.0);
    }
    q
}

fn criterion_4() -> Outcome {
    let grid: Vec<f64> = (0..=8).map(|i| 0.5 * i as f64).collect();
    let opts = SolveOptions::new(5e-3, 6.0);
    let mut shared = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..50u64 {
        let mut r = rng(0x5EED_0004 + i);
        let reference = random_problem(&mut r, true);
        let candidate = dominated(&mut r, &reference);
        let big = fundamental::fundamental_table(&reference, &grid, FundamentalKind::Impulsive, &opts)
            .map_err(|e| e.to_string())?;
        let small = fundamental::fundamental_table(&candidate, &grid, FundamentalKind::Impulsive, &opts)
            .map_err(|e| e.to_string())?;
        let mut pair_shared = 0;
        for ((s, run_big), run_small) in grid.iter().zip(big.runs()).zip(small.runs()) {
            // keyed by time and by whether the value is a left limit
            let mut index: HashMap<(u64, bool), f64> = HashMap::new();
            for smp in run_big.samples() {
                index.insert((smp.t.to_bits(), false), smp.x);
                if let Some(l) = smp.left_limit {
                    index.insert((smp.t.to_bits(), true), l);
                }
            }
            for smp in run_small.samples() {
                let mut values = vec![(false, smp.x)];
                values.extend(smp.left_limit.map(|l| (true, l)));
                for (left, x_small) in values {
                    if let Some(&x_big) = index.get(&(smp.t.to_bits(), left)) {
                        pair_shared += 1;
                        worst = worst.max(x_small - x_big);
                        ensure(x_small <= x_big + 1e-9, || {
                            format!("pair {i}: X~({}, {s}) = {x_small} > X = {x_big}", smp.t)
                        })?;
                    }
                }
            }
        }
        ensure(pair_shared > 0, || format!("pair {i}: no shared samples"))?;
        shared += pair_shared;
    }
    Ok(format!("{shared} shared samples, largest excess {worst:.2e}"))
}

fn criterion_5() -> Outcome {
    let records = verify::falsification_sweep(&SweepFamily::default(), 200, 42, &SweepOptions::default())
        .map_err(|e| e.to_string())?;
    let flagged: Vec<_> = records.iter().filter(|r| r.flag).collect();
    let mut counts: Vec<(String, usize)> = Vec::new();
    for r in &records {
        match counts.iter_mut().find(|c| c.0 == r.criterion) {
            Some(c) => c.1 += 1,
            None => counts.push((r.criterion.clone(), 1)),
        }
    }
    counts.sort();
    let summary = counts
        .iter()
        .map(|(c, n)| format!("{c}={n}"))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(flagged.is_empty(), || {
        format!(
            "{} discrepancies, first: sample {} {} ratio {}",
            flagged.len(),
            flagged[0].sample_id,
            flagged[0].criterion,
            flagged[0].ratio
        )
    })?;
    ensure(records.len() > 50, || format!("only {} confirmations", records.len()))?;
    Ok(format!("{} confirmations, 0 discrepancies [{summary}]", records.len()))
}

fn thm5_example() -> Problem {
    Problem::single(
        CoefficientSpec::constant(0.5),
        DelaySpec::constant_lag(0.5),
        ImpulseSchedule::uniform(1.0, 0.3),
    )
    .with_horizon(20.0)
}

fn criterion_6() -> Outcome {
    let problem = thm5_example();
    let report = criteria::check_thm5(&problem, &CheckOptions::default()).map_err(|e| e.to_string())?;
    let cert = report.certificate.clone().ok_or("no certificate")?;
    let (n, lambda) = (cert.n.ok_or("no N")?, cert.lambda.ok_or("no lambda")?);
    ensure((n - 2.0609).abs() < 1e-4 && (lambda - 0.22314).abs() < 1e-5, || {
        format!("certificate N = {n}, lambda = {lambda}")
    })?;
    let grid: Vec<f64> = (0..=60).map(|i| 0.25 * i as f64).collect();
    let table = fundamental::fundamental_table(
        &problem,
        &grid,
        FundamentalKind::Impulsive,
        &SolveOptions::new(1e-3, 20.0),
    )
    .map_err(|e| e.to_string())?;
    let mut count = 0usize;
    let mut slack = f64::INFINITY;
    for (s, t, x) in table.samples() {
        let bound = 2.0609 * (-0.22314 * (t - s)).exp() + 1e-6;
        slack = slack.min(bound - x);
        ensure(x <= bound, || format!("X({t}, {s}) = {x} exceeds {bound}"))?;
        ensure(x <= n * (-lambda * (t - s)).exp() + 1e-6, || {
            format!("X({t}, {s}) = {x} exceeds the computed envelope")
        })?;
        count += 1;
    }
    Ok(format!("{count} samples, smallest slack {slack:.3e}"))
}

fn same_intervals(a: &CriterionReport, b: &CriterionReport) -> Result<f64, String> {
    ensure(a.intervals.len() == b.intervals.len(), || {
        format!("{} vs {} intervals", a.intervals.len(), b.intervals.len())
    })?;
    let mut worst = 0.0f64;
    for (x, y) in a.intervals.iter().zip(&b.intervals) {
        worst = worst.max((x.value - y.value).abs());
    }
    ensure(worst < 1e-12, || format!("interval values differ by {worst:e}"))?;
    ensure(a.verdict == b.verdict, || {
        format!("verdicts {} vs {}", a.verdict, b.verdict)
    })?;
    Ok(worst)
}

fn criterion_7() -> Outcome {
    let opts = CheckOptions::default();
    let mut worst = 0.0f64;
    for i in 0..40u64 {
        let mut r = rng(0x5EED_0007 + i);
        let sigma = r.random_range(0.5..=1.5);
        let delay = if r.random_bool(0.3) {
            DelaySpec::Identity
        } else {
            DelaySpec::constant_lag(r.random_range(0.0..sigma))
        };
        let problem = Problem::single(
            random_coefficient(&mut r, true),
            delay,
            ImpulseSchedule::uniform(sigma, r.random_range(0.0..=1.2)),
        )
        .with_horizon(10.0 * sigma);
        let seps = criteria::find_separation_points(&problem.terms[0].delay, &problem.impulses.until(10.0 * sigma));
        ensure(seps.iter().all(|s| s.kind == SeparationKind::Simple), || {
            format!("problem {i}: separation not simple")
        })?;
        let thm3 = criteria::check_thm3(&problem, &opts).map_err(|e| e.to_string())?;
        let thm4 = criteria::check_thm4(&problem, &opts).map_err(|e| e.to_string())?;
        worst = worst.max(same_intervals(&thm3, &thm4).map_err(|e| format!("thm4/thm3 {i}: {e}"))?);

        let identity = Problem {
            terms: vec![Term::new(problem.terms[0].coefficient.clone(), DelaySpec::Identity)],
            ..problem.clone()
        };
        let reference = criteria::check_thm3(&identity, &opts).map_err(|e| e.to_string())?;
        for delta in [0.0, 1e-15] {
            let lagged = Problem {
                terms: vec![Term::new(
                    identity.terms[0].coefficient.clone(),
                    DelaySpec::constant_lag(delta),
                )],
                ..identity.clone()
            };
            let mu = criteria::check_mu(&lagged, &opts).map_err(|e| e.to_string())?;
            worst = worst.max(same_intervals(&mu, &reference).map_err(|e| format!("mu/thm3 {i}: {e}"))?);
        }

        let mut general = random_problem(&mut r, true);
        general.horizon = Some(8.0);
        let t5 = criteria::check_thm5(&general, &opts).map_err(|e| e.to_string())?;
        let t6 = criteria::check_thm6(&general, &opts).map_err(|e| e.to_string())?;
        ensure(t5.verdict == t6.verdict, || {
            format!("thm6/thm5 {i}: {} vs {}", t6.verdict, t5.verdict)
        })?;
        ensure(t5.certificate == t6.certificate, || {
            format!("thm6/thm5 {i}: certificates differ")
        })?;
        ensure(t5.margin == t6.margin || (t5.margin - t6.margin).abs() < 1e-12, || {
            format!("thm6/thm5 {i}: margins {} vs {}", t6.margin, t5.margin)
        })?;
    }
    Ok(format!("40 instances per reduction, largest difference {worst:.1e}"))
}

fn impstab(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_impstab"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * x.abs().max(1.0),
        _ => false,
    }
}

fn round_trip(
    name: &str,
    equation: &Problem,
    cli_args: &[&str],
    request: SynthesisRequest,
    times: Option<&[f64]>,
) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("equation.json");
    let output = dir.path().join("designed.json");
    std::fs::write(&input, equation.to_json()).map_err(|e| e.to_string())?;
    let path = |p: &Path| p.to_str().unwrap().to_string();

    let mut args = vec![
        "synthesize".to_string(),
        path(&input),
        "--out".to_string(),
        path(&output),
    ];
    args.extend(cli_args.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = impstab(&args)?;
    ensure(out.status.code() == Some(0), || {
        format!(
            "{name}: synthesize exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    let designed =
        Problem::from_json(&std::fs::read_to_string(&output).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    let expected = match times {
        Some(t) => synth::synthesize_per_interval(&request, t),
        None => synth::synthesize_uniform(&request),
    }
    .map_err(|e| e.to_string())?;
    ensure(designed == expected.problem, || {
        format!("{name}: CLI and library schedules differ")
    })?;

    let crit = expected.report.criterion.as_str();
    let out = impstab(&["check", &path(&output), "--criterion", crit, "--report", "-"])?;
    ensure(out.status.code() == Some(0), || {
        format!("{name}: check exited {:?}", out.status.code())
    })?;
    let text = String::from_utf8_lossy(&out.stdout);
    let report = CriterionReport::from_json(&text).map_err(|e| e.to_string())?;
    ensure(report.verdict == expected.report.verdict, || {
        format!("{name}: verdict {} vs {}", report.verdict, expected.report.verdict)
    })?;
    let (a, b) = (
        report.certificate.clone().unwrap_or_default(),
        expected.report.certificate.clone().unwrap_or_default(),
    );
    let fields = [
        ("q", a.q, b.q),
        ("sigma", a.sigma, b.sigma),
        ("rho", a.rho, b.rho),
        ("epsilon", a.epsilon, b.epsilon),
        ("N", a.n, b.n),
        ("lambda", a.lambda, b.lambda),
        ("K", a.k, b.k),
        ("negative_sup", a.negative_sup, b.negative_sup),
    ];
    for (field, x, y) in fields {
        ensure(close(x, y), || format!("{name}: certificate {field} {x:?} vs {y:?}"))?;
    }
    ensure(close(Some(report.margin), Some(expected.report.margin)), || {
        format!("{name}: margin {} vs {}", report.margin, expected.report.margin)
    })?;

    let horizon = designed.horizon.ok_or("designed problem has no horizon")?;
    let opts = SolveOptions::new(1e-3, horizon);
    let emp = verify::empirical_boundedness(&designed, 20, &opts, 42).map_err(|e| e.to_string())?;
    let mut detail = format!("{name}: {crit} K_emp {:.3}", emp.k_emp);
    let bound = verify::certified_solution_bound(&designed, &report).ok_or("no certified bound")?;
    ensure(emp.k_emp <= 1.05 * bound, || {
        format!("{name}: K_emp {} above bound {bound}", emp.k_emp)
    })?;
    detail.push_str(&format!(" <= {bound:.3}"));
    if report.verdict == Verdict::ExponentiallyStable {
        let lambda = report.certificate.as_ref().and_then(|c| c.lambda).ok_or("no rate")?;
        let fit = verify::empirical_decay(&designed, &opts).map_err(|e| e.to_string())?;
        ensure(fit.lambda >= 0.5 * lambda, || {
            format!("{name}: fitted rate {} below half of {lambda}", fit.lambda)
        })?;
        detail.push_str(&format!(", rate {:.3} >= {:.3}", fit.lambda, 0.5 * lambda));
    }
    Ok(detail)
}

fn criterion_8() -> Outcome {
    let identity = Problem::single(
        CoefficientSpec::constant(0.5),
        DelaySpec::Identity,
        ImpulseSchedule::default(),
    );
    let lagged = Problem::single(
        CoefficientSpec::constant(0.5),
        DelaySpec::constant_lag(0.5),
        ImpulseSchedule::default(),
    );
    let two_terms = Problem::new(
        vec![
            Term::new(CoefficientSpec::constant(0.3), DelaySpec::Identity),
            Term::new(
                CoefficientSpec::periodic(vec![0.0, 1.0], vec![0.4, 0.1], 2.0),
                DelaySpec::constant_lag(0.3),
            ),
        ],
        ImpulseSchedule::default(),
        1.0,
    );
    let times = [1.0, 2.0, 3.5, 4.0, 5.0, 6.0];
    let lines = [
        round_trip(
            "uniform stable",
            &identity,
            &["--sigma", "1"],
            SynthesisRequest::new(identity.clone(), Target::Stable).with_sigma(1.0),
            None,
        )?,
        round_trip(
            "uniform exponential",
            &lagged,
            &["--target", "exponentially-stable"],
            SynthesisRequest::new(lagged.clone(), Target::ExponentiallyStable),
            None,
        )?,
        round_trip(
            "two terms",
            &two_terms,
            &["--target", "exponentially-stable", "--safety", "0.8"],
            SynthesisRequest::new(two_terms.clone(), Target::ExponentiallyStable).with_safety(0.8),
            None,
        )?,
        round_trip(
            "per interval",
            &lagged,
            &["--times", "1,2,3.5,4,5,6"],
            SynthesisRequest::new(lagged.clone(), Target::Stable),
            Some(&times),
        )?,
    ];
    Ok(lines.join("; "))
}

fn criterion_9() -> Outcome {
    let steps = [0.1, 0.05, 0.025, 0.0125];
    let errors: Vec<f64> = steps
        .iter()
        .map(|&h| benchmark_max_error(h).map(|e| e.0))
        .collect::<Result<_, _>>()?;
    let factors: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    ensure(factors.iter().all(|&f| f >= 4.0), || {
        format!("errors {errors:?}, factors {factors:?}")
    })?;
    Ok(format!("max errors {errors:?}, halving factors {factors:?}"))
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 9] = [
        ("closed-form ODE benchmark", criterion_1),
        ("representation formula", criterion_2),
        ("positivity", criterion_3),
        ("comparison", criterion_4),
        ("criterion soundness sweep", criterion_5),
        ("certificate envelope", criterion_6),
        ("consistency reductions", criterion_7),
        ("synthesis round-trip", criterion_8),
        ("integrator convergence", criterion_9),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(format!(
                "panicked: {:?}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            ))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {} ({name}, {secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}, {secs:.1}s): {detail}", i + 1);
            }
        }
    }
    let _ = panic::take_hook();
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
