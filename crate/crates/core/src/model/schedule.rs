use serde::{Deserialize, Serialize};

/// Continuation of a finite impulse list: after the last listed time (or
/// from 0 when none are listed) impulses recur every `period` with `gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicRule {
    pub period: f64,
    pub gain: f64,
}

/// Impulse moments `τ_j` with gains `B_j`, so that `x(τ_j) = B_j x(τ_j − 0)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSchedule {
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub gains: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<PeriodicRule>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impulse {
    pub time: f64,
    pub gain: f64,
}

/// Relative slack used when comparing a horizon against impulse times.
pub(crate) fn time_slack(t: f64) -> f64 {
    1e-12 * t.abs().max(1.0)
}

impl ImpulseSchedule {
    pub fn new(times: Vec<f64>, gains: Vec<f64>) -> Self {
        ImpulseSchedule {
            times,
            gains,
            periodic: None,
        }
    }

    /// `τ_j = j·period` with constant gain.
    pub fn uniform(period: f64, gain: f64) -> Self {
        ImpulseSchedule {
            times: Vec::new(),
            gains: Vec::new(),
            periodic: Some(PeriodicRule { period, gain }),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty() && self.periodic.is_none()
    }

    /// Last time the schedule covers; infinite for periodic or empty schedules.
    pub fn coverage(&self) -> f64 {
        if self.periodic.is_some() || self.times.is_empty() {
            f64::INFINITY
        } else {
            self.times[self.times.len() - 1]
        }
    }

    /// All impulses with `τ_j ≤ horizon`, the periodic rule unrolled.
    pub fn until(&self, horizon: f64) -> Vec<Impulse> {
        let limit = horizon + time_slack(horizon);
        let mut out: Vec<Impulse> = self
            .times
            .iter()
            .zip(&self.gains)
            .take_while(|(t, _)| **t <= limit)
            .map(|(&time, &gain)| Impulse { time, gain })
            .collect();
        if let Some(rule) = self.periodic {
            if rule.period > 0.0 {
                let base = self.times.last().copied().unwrap_or(0.0);
                let mut k = 1u64;
                loop {
                    let time = base + k as f64 * rule.period;
                    if time > limit {
                        break;
                    }
                    out.push(Impulse { time, gain: rule.gain });
                    k += 1;
                }
            }
        }
        out
    }

    /// `(ρ, σ)`: smallest and largest gap among `0 = τ_0 < τ_1 < … ≤ horizon`.
    pub fn spacing_bounds(&self, horizon: f64) -> Option<(f64, f64)> {
        let imp = self.until(horizon);
        if imp.is_empty() {
            return None;
        }
        let mut prev = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in &imp {
            let gap = i.time - prev;
            lo = lo.min(gap);
            hi = hi.max(gap);
            prev = i.time;
        }
        Some((lo, hi))
    }

    pub(crate) fn structural_issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.times.len() != self.gains.len() {
            out.push(format!(
                "(a1): {} impulse times but {} gains",
                self.times.len(),
                self.gains.len()
            ));
        }
        if self.times.iter().chain(&self.gains).any(|v| !v.is_finite()) {
            out.push("(a1): impulse data contains a non-finite number".to_string());
        }
        if let Some(&first) = self.times.first() {
            if !(first > 0.0) {
                out.push(format!("(a1): first impulse time {first} is not positive"));
            }
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            out.push("(a1): times not strictly increasing".to_string());
        }
        if let Some(rule) = self.periodic {
            if !(rule.period.is_finite() && rule.period > 0.0) || !rule.gain.is_finite() {
                out.push(format!(
                    "(a1): periodic rule needs a positive finite period and finite gain (period {}, gain {})",
                    rule.period, rule.gain
                ));
            }
        }
        out
    }
}
