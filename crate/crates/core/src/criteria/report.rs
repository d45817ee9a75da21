use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionId {
    /// dominance by a certified reference problem
    Thm1,
    /// auxiliary per-interval problem, solved numerically
    Thm2,
    /// closed-form bound under the separation condition
    Thm3,
    /// constant-lag closed form
    Mu,
    /// closed-form bound under the general separation condition
    Thm4,
    /// uniform bound from the sliding coefficient mass
    Thm5,
    /// sign-indefinite coefficients as a perturbation of the positive part
    Thm6,
}

impl CriterionId {
    pub const ALL: [CriterionId; 7] = [
        CriterionId::Thm1,
        CriterionId::Thm2,
        CriterionId::Thm3,
        CriterionId::Mu,
        CriterionId::Thm4,
        CriterionId::Thm5,
        CriterionId::Thm6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionId::Thm1 => "thm1",
            CriterionId::Thm2 => "thm2",
            CriterionId::Thm3 => "thm3",
            CriterionId::Mu => "mu",
            CriterionId::Thm4 => "thm4",
            CriterionId::Thm5 => "thm5",
            CriterionId::Thm6 => "thm6",
        }
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriterionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        CriterionId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown criterion: {s}")))
    }
}

/// Outcome of a sufficient condition. There is no "unstable" verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    ExponentiallyStable,
    Inconclusive,
}

impl Verdict {
    pub fn is_certified(self) -> bool {
        self != Verdict::Inconclusive
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::ExponentiallyStable => "exponentially-stable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Constants backing a verdict. `K` bounds `|X(t,s)|`; `N`, `lambda` give
/// the exponential estimate `|X(t,s)| ≤ N e^{−λ(t−s)}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// `sup Σ_k A_k⁻`, present for sign-indefinite coefficients
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_sup: Option<f64>,
}

/// Checked quantity on the impulse interval `[τ_j, τ_{j+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalRecord {
    pub j: usize,
    pub tau: f64,
    pub value: f64,
    /// Separation or alternation points used for the value.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionReport {
    pub criterion: CriterionId,
    pub verdict: Verdict,
    /// Distance to the checked bound; negative exactly when inconclusive.
    /// `−∞` (JSON null) marks an unmet precondition.
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_neg_inf")]
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    #[serde(default)]
    pub intervals: Vec<IntervalRecord>,
    #[serde(default)]
    pub reasons: Vec<String>,
}

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_neg_inf<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

impl CriterionReport {
    pub(crate) fn new(criterion: CriterionId) -> Self {
        CriterionReport {
            criterion,
            verdict: Verdict::Inconclusive,
            margin: f64::NEG_INFINITY,
            certificate: None,
            intervals: Vec::new(),
            reasons: Vec::new(),
        }
    }

    /// An inconclusive report for an unmet precondition.
    pub(crate) fn unmet(criterion: CriterionId, reason: impl Into<String>) -> Self {
        let mut r = CriterionReport::new(criterion);
        r.reasons.push(reason.into());
        r
    }

    pub fn is_certified(&self) -> bool {
        self.verdict.is_certified()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        let mut s = format!("{}: {}", self.criterion, self.verdict);
        if self.margin.is_finite() {
            s.push_str(&format!(" (margin {:.6})", self.margin));
        }
        if let Some(c) = &self.certificate {
            let fields = [
                ("q", c.q),
                ("sigma", c.sigma),
                ("rho", c.rho),
                ("epsilon", c.epsilon),
                ("N", c.n),
                ("lambda", c.lambda),
                ("K", c.k),
            ];
            let parts: Vec<String> = fields
                .iter()
                .filter_map(|(name, v)| v.map(|v| format!("{name}={v:.6}")))
                .collect();
            if !parts.is_empty() {
                s.push_str(&format!(" [{}]", parts.join(", ")));
            }
        }
        s
    }
}
