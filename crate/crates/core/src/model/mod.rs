//! Problem description: coefficients, delays, impulses, prehistory, and
//! validation against the standing hypotheses (a1)–(a4).

mod coefficient;
mod delay;
mod history;
mod problem;
mod schedule;

pub use coefficient::{sup_of_sum, CoefficientSpec};
pub use delay::DelaySpec;
pub use history::HistorySpec;
pub use problem::{Hypothesis, Problem, Term, ValidationReport, Violation, DEFAULT_PERIODS};
pub(crate) use schedule::time_slack;
pub use schedule::{Impulse, ImpulseSchedule, PeriodicRule};
