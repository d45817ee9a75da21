//! The `impstab` command line.
//!
//! Exit codes: 0 success or certified, 1 inconclusive, infeasible or
//! unbounded, 2 input error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use impstab::criteria::{self, CheckOptions, CriterionId, CriterionReport, Verdict};
use impstab::fundamental::{fit_envelope, fundamental_table, FundamentalKind};
use impstab::integrator::{solve, Interpolation, SolveOptions};
use impstab::model::Problem;
use impstab::synth::{self, SynthesisRequest, Target};
use impstab::verify::{self, SweepFamily, SweepOptions};
use impstab::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Environment variable capping the worker threads (0 = automatic).
pub const THREADS_ENV: &str = "IMPULSE_STAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "impstab",
    version,
    about = "Stability analysis and impulsive stabilization of delay equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    Auto,
    Thm2,
    Thm3,
    Mu,
    Thm4,
    Thm5,
    Thm6,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InterpolationArg {
    Linear,
    CubicHermite,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Stable,
    ExponentiallyStable,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Impulsive,
    NonImpulsive,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a problem file and report violated hypotheses.
    Validate { path: PathBuf },
    /// Integrate a problem and write the trajectory as CSV.
    Simulate {
        path: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, value_enum, default_value = "cubic-hermite")]
        interpolation: InterpolationArg,
        /// Output CSV (standard output when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a stability criterion.
    Check {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        criterion: CriterionArg,
        /// Check only intervals opened by impulse j ≥ J.
        #[arg(long, value_name = "J")]
        tail_from: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Use this ε instead of the largest feasible one.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Write the JSON report here ("-" for standard output).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Design an impulse schedule for an equation.
    Synthesize {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "stable")]
        target: TargetArg,
        /// Impulse spacing, or "auto".
        #[arg(long, default_value = "auto")]
        sigma: String,
        #[arg(long, default_value_t = 0.9)]
        safety: f64,
        /// Per-interval design at these times ("a:step:b" or a comma list).
        #[arg(long)]
        times: Option<String>,
        /// Output problem file (standard output when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confirm a verdict by simulating random initial data.
    Verify {
        path: PathBuf,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Write a JSON summary here ("-" for standard output).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Tabulate fundamental functions X(t, s) as CSV `s,t,X`.
    Fundamental {
        path: PathBuf,
        /// Initial points ("a:step:b" or a comma list).
        #[arg(long)]
        s_grid: Option<String>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, value_enum, default_value = "impulsive")]
        kind: KindArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized soundness sweep over all criteria.
    Sweep {
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
enum Failure {
    Input(String),
    Negative(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(_) | Error::DominanceViolated(_) | Error::InsufficientData(_) => {
                Failure::Negative(e.to_string())
            }
            _ => Failure::Input(e.to_string()),
        }
    }
}

type Outcome = Result<i32, Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let outcome = match cli.command {
        Command::Validate { path } => cmd_validate(&path),
        Command::Simulate {
            path,
            horizon,
            step,
            interpolation,
            out,
        } => cmd_simulate(&path, horizon, step, interpolation, out.as_deref()),
        Command::Check {
            path,
            criterion,
            tail_from,
            horizon,
            step,
            epsilon,
            report,
        } => {
            let opts = CheckOptions {
                horizon,
                tail_from: tail_from.unwrap_or(1),
                epsilon,
                step,
                ..CheckOptions::default()
            };
            cmd_check(&path, criterion, &opts, report.as_deref())
        }
        Command::Synthesize {
            path,
            target,
            sigma,
            safety,
            times,
            out,
        } => cmd_synthesize(&path, target, &sigma, safety, times.as_deref(), out.as_deref()),
        Command::Verify {
            path,
            trials,
            seed,
            horizon,
            step,
            report,
        } => cmd_verify(&path, trials, seed, horizon, step, report.as_deref()),
        Command::Fundamental {
            path,
            s_grid,
            horizon,
            step,
            kind,
            out,
        } => cmd_fundamental(&path, s_grid.as_deref(), horizon, step, kind, out.as_deref()),
        Command::Sweep {
            samples,
            seed,
            trials,
            step,
            out,
        } => cmd_sweep(samples, seed, trials, step, out.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
        Err(Failure::Negative(msg)) => {
            eprintln!("{msg}");
            EXIT_NEGATIVE
        }
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(0) => {}
        Ok(n) => {
            // a pool built earlier in this process keeps its size
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Err(_) => eprintln!("warning: ignoring {THREADS_ENV}={value}"),
    }
}

fn load(path: &Path) -> Result<Problem, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(Problem::from_json(&text)?)
}

/// Writes through a temporary sibling so readers never see partial output.
fn write_output(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(p) if p == Path::new("-") => {
            print!("{content}");
            Ok(())
        }
        Some(p) => {
            let mut tmp = p.as_os_str().to_owned();
            tmp.push(".tmp");
            let tmp = PathBuf::from(tmp);
            fs::write(&tmp, content)
                .and_then(|_| fs::rename(&tmp, p))
                .map_err(|e| Failure::Input(format!("cannot write {}: {e}", p.display())))
        }
    }
}

/// Parses "a:step:b" (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("not a number: {s:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [a, step, b] => {
            let (a, step, b) = (num(a)?, num(step)?, num(b)?);
            if step.is_nan() || step <= 0.0 || b < a {
                return Err(format!("bad range {spec:?}"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + i as f64 * step).collect())
        }
        [_] => spec.split(',').map(num).collect(),
        _ => Err(format!("bad grid {spec:?}: use a:step:b or a comma list")),
    }
}

/// Simulation horizon: the problem's own, else the last listed impulse
/// plus five periods of a periodic rule, else the last impulse.
fn default_horizon(problem: &Problem) -> Result<f64, Failure> {
    if let Some(h) = problem.horizon {
        return Ok(h);
    }
    let last = problem.impulses.times.last().copied();
    match (problem.impulses.periodic, last) {
        (Some(rule), _) => Ok(last.unwrap_or(0.0) + 5.0 * rule.period),
        (None, Some(t)) => Ok(t),
        (None, None) => Err(Failure::Input(
            "no horizon: pass --horizon or set \"horizon\" in the problem".to_string(),
        )),
    }
}

fn cmd_validate(path: &Path) -> Outcome {
    let problem = load(path)?;
    let report = problem.validate();
    println!("{report}");
    Ok(if report.is_valid() { EXIT_OK } else { EXIT_INPUT })
}

fn cmd_simulate(
    path: &Path,
    horizon: Option<f64>,
    step: f64,
    interpolation: InterpolationArg,
    out: Option<&Path>,
) -> Outcome {
    let problem = load(path)?;
    let horizon = match horizon {
        Some(h) => h,
        None => default_horizon(&problem)?,
    };
    let mut opts = SolveOptions::new(step, horizon);
    opts.interpolation = match interpolation {
        InterpolationArg::Linear => Interpolation::Linear,
        InterpolationArg::CubicHermite => Interpolation::CubicHermite,
    };
    let traj = solve(&problem, &opts)?;
    write_output(out, &traj.to_csv())?;
    if out.is_some() {
        println!(
            "simulated [0, {horizon}] in {} steps; x({horizon}) = {}",
            traj.step_count(),
            traj.final_value()
        );
    }
    Ok(EXIT_OK)
}

fn run_criterion(problem: &Problem, criterion: CriterionArg, opts: &CheckOptions) -> Result<CriterionReport, Failure> {
    let id = match criterion {
        CriterionArg::Auto => return Ok(criteria::check_auto(problem, opts)?),
        CriterionArg::Thm2 => CriterionId::Thm2,
        CriterionArg::Thm3 => CriterionId::Thm3,
        CriterionArg::Mu => CriterionId::Mu,
        CriterionArg::Thm4 => CriterionId::Thm4,
        CriterionArg::Thm5 => CriterionId::Thm5,
        CriterionArg::Thm6 => CriterionId::Thm6,
    };
    Ok(criteria::check(problem, id, opts)?)
}

fn print_report(report: &CriterionReport) {
    println!("{}", report.summary());
    for reason in &report.reasons {
        println!("  - {reason}");
    }
}

fn cmd_check(path: &Path, criterion: CriterionArg, opts: &CheckOptions, report_path: Option<&Path>) -> Outcome {
    let problem = load(path)?;
    let report = run_criterion(&problem, criterion, opts)?;
    if report_path != Some(Path::new("-")) {
        print_report(&report);
    }
    if let Some(p) = report_path {
        write_output(Some(p), &(report.to_json() + "\n"))?;
    }
    Ok(if report.is_certified() { EXIT_OK } else { EXIT_NEGATIVE })
}

fn cmd_synthesize(
    path: &Path,
    target: TargetArg,
    sigma: &str,
    safety: f64,
    times: Option<&str>,
    out: Option<&Path>,
) -> Outcome {
    let problem = load(path)?;
    let target = match target {
        TargetArg::Stable => Target::Stable,
        TargetArg::ExponentiallyStable => Target::ExponentiallyStable,
    };
    let mut request = SynthesisRequest::new(problem, target).with_safety(safety);
    if sigma != "auto" {
        let s = sigma
            .parse::<f64>()
            .map_err(|_| Failure::Input(format!("--sigma expects a number or \"auto\" (got {sigma:?})")))?;
        request = request.with_sigma(s);
    }
    let result = match times {
        Some(spec) => {
            let times = parse_grid(spec).map_err(Failure::Input)?;
            synth::synthesize_per_interval(&request, &times)?
        }
        None => synth::synthesize_uniform(&request)?,
    };
    let json = result.problem.to_json() + "\n";
    match out {
        Some(p) if p != Path::new("-") => {
            write_output(Some(p), &json)?;
            print_report(&result.report);
            for r in &result.additional {
                println!("also {}", r.summary());
            }
            for note in &result.notes {
                println!("note: {note}");
            }
        }
        _ => {
            write_output(None, &json)?;
            eprintln!("{}", result.report.summary());
            for note in &result.notes {
                eprintln!("note: {note}");
            }
        }
    }
    Ok(EXIT_OK)
}

/// Relative excess of the empirical amplification over the certified bound
/// that still counts as confirmation.
const VERIFY_TOLERANCE: f64 = 0.05;

fn cmd_verify(
    path: &Path,
    trials: usize,
    seed: u64,
    horizon: Option<f64>,
    step: f64,
    report_path: Option<&Path>,
) -> Outcome {
    let problem = load(path)?;
    let opts = CheckOptions {
        horizon,
        step,
        ..CheckOptions::default()
    };
    let horizon = match horizon {
        Some(h) => h,
        None => criteria::resolve_horizon(&problem, &opts)?,
    };
    let report = criteria::check_auto(&problem, &opts)?;
    let solve_opts = SolveOptions::new(step, horizon);
    let emp = verify::empirical_boundedness(&problem, trials, &solve_opts, seed)?;
    let bound = verify::certified_solution_bound(&problem, &report);
    let decay = if report.verdict == Verdict::ExponentiallyStable {
        verify::empirical_decay(&problem, &solve_opts).ok()
    } else {
        None
    };
    let lambda = report.certificate.as_ref().and_then(|c| c.lambda);

    let bounded = bound.is_some_and(|b| emp.k_emp <= b * (1.0 + VERIFY_TOLERANCE));
    let decays = match (decay, lambda) {
        (Some(fit), Some(l)) => fit.lambda >= 0.5 * l,
        _ => true,
    };
    let human = report_path != Some(Path::new("-"));
    if human {
        println!("{}", report.summary());
        println!(
            "K_emp = {} (worst trial {} of {trials}, horizon {horizon})",
            emp.k_emp, emp.worst_trial
        );
        match bound {
            Some(b) => println!("certified bound = {b}"),
            None => println!("no certified bound"),
        }
        if let Some(fit) = decay {
            println!(
                "fitted decay rate = {} (certificate {})",
                fit.lambda,
                lambda.unwrap_or(f64::NAN)
            );
        }
    }
    if let Some(p) = report_path {
        let summary = json!({
            "report": report,
            "k_emp": emp.k_emp,
            "worst_trial": emp.worst_trial,
            "trials": trials,
            "horizon": horizon,
            "bound": bound,
            "decay": decay,
            "confirmed": bounded && decays,
        });
        write_output(Some(p), &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
    }
    Ok(if bounded && decays { EXIT_OK } else { EXIT_NEGATIVE })
}

fn cmd_fundamental(
    path: &Path,
    s_grid: Option<&str>,
    horizon: Option<f64>,
    step: f64,
    kind: KindArg,
    out: Option<&Path>,
) -> Outcome {
    let problem = load(path)?;
    let horizon = match horizon {
        Some(h) => h,
        None => default_horizon(&problem)?,
    };
    let grid = match s_grid {
        Some(spec) => parse_grid(spec).map_err(Failure::Input)?,
        None => (0..10).map(|i| horizon * i as f64 / 10.0).collect(),
    };
    let kind = match kind {
        KindArg::Impulsive => FundamentalKind::Impulsive,
        KindArg::NonImpulsive => FundamentalKind::NonImpulsive,
    };
    let table = fundamental_table(&problem, &grid, kind, &SolveOptions::new(step, horizon))?;
    write_output(out, &table.to_csv())?;
    let fit = fit_envelope(&table);
    if out.is_some() {
        println!("{}", fit.to_json());
    } else {
        eprintln!("{}", fit.to_json());
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(samples: usize, seed: u64, trials: usize, step: f64, out: Option<&Path>) -> Outcome {
    let opts = SweepOptions { trials, step };
    let records = verify::falsification_sweep(&SweepFamily::default(), samples, seed, &opts)?;
    write_output(out, &verify::sweep_csv(&records))?;
    let flagged = records.iter().filter(|r| r.flag).count();
    let line = format!(
        "{samples} samples, {} confirmations, {flagged} discrepancies",
        records.len()
    );
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(if flagged == 0 { EXIT_OK } else { EXIT_NEGATIVE })
}
