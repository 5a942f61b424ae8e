//! Fractionalization indices and the prevented-cases counterfactual.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::econ::EventStudyResult;
use crate::epidemic::Panel;
use crate::error::{param, Error, Result};

/// Population shares of the groups present in one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShares(Vec<f64>);

impl GroupShares {
    pub fn new(shares: Vec<f64>) -> Result<Self> {
        if shares.is_empty() {
            return param("at least one group share is required");
        }
        if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return param("group shares must be finite and nonnegative");
        }
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return param(format!("group shares sum to {total}, not 1"));
        }
        Ok(Self(shares))
    }

    /// Normalises nonnegative group counts into shares.
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return param("group counts must have a positive total");
        }
        Self::new(counts.iter().map(|c| c / total).collect())
    }

    pub fn shares(&self) -> &[f64] {
        &self.0
    }
}

/// `1 - Σ π_i²`: probability that two random members belong to different groups.
pub fn fractionalization(shares: &GroupShares) -> f64 {
    1.0 - shares.0.iter().map(|p| p * p).sum::<f64>()
}

/// How a monthly event-study coefficient is turned into prevented cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PreventionMethod {
    /// `max(0, -β) · gap · cases`.
    #[default]
    Linear,
    /// `cases · (1 - exp(β · gap))`, floored at zero; reads β as a log effect.
    Exponential,
}

impl PreventionMethod {
    fn prevented(self, beta: f64, gap: f64, cases: f64) -> f64 {
        match self {
            Self::Linear => (-beta).max(0.0) * gap * cases,
            Self::Exponential => (cases * (1.0 - (beta * gap).exp())).max(0.0),
        }
    }

    fn other(self) -> Self {
        match self {
            Self::Linear => Self::Exponential,
            Self::Exponential => Self::Linear,
        }
    }
}

/// Which locations count as lacking the treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UntreatedFilter {
    /// Locations whose local coverage share is at most `max_coverage`.
    Coverage { max_coverage: f64 },
    /// Every location.
    All,
}

impl Default for UntreatedFilter {
    fn default() -> Self {
        Self::Coverage { max_coverage: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPrevented {
    pub month: usize,
    pub tau: i64,
    pub beta: f64,
    /// New cases in the untreated locations that month.
    pub cases: f64,
    pub prevented: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub prevented_by_month: Vec<MonthlyPrevented>,
    pub prevented_total: f64,
    #[serde(rename = "share", alias = "share_of_total_epidemic")]
    pub share_of_total_epidemic: f64,
    pub method: PreventionMethod,
    pub coverage_gap: f64,
    pub untreated_cases: f64,
    pub total_cases: f64,
    /// Total under the other method, reported to show how much the
    /// linearisation matters.
    pub alternative_total: f64,
}

/// Back-of-envelope count of cases the treatment would have prevented had
/// the untreated locations been given `coverage_gap` more coverage (a share
/// in `[0, 1]`, the same unit the event-study coefficients are expressed
/// per). Every post-launch month of the panel (`τ >= 0`, optionally clipped
/// to `window`) needs a coefficient.
pub fn prevented_cases(
    esr: &EventStudyResult,
    panel: &Panel,
    coverage_gap: f64,
    untreated: UntreatedFilter,
    method: PreventionMethod,
    window: Option<(i64, i64)>,
) -> Result<CounterfactualResult> {
    if !(coverage_gap.is_finite() && coverage_gap >= 0.0) {
        return param(format!("coverage gap must be finite and nonnegative, got {coverage_gap}"));
    }
    if let UntreatedFilter::Coverage { max_coverage } = untreated {
        if !(0.0..=1.0).contains(&max_coverage) {
            return param(format!("untreated coverage threshold must lie in [0, 1], got {max_coverage}"));
        }
    }
    if panel.is_empty() {
        return param("panel has no observations");
    }
    let (lo, hi) = window.unwrap_or((0, i64::MAX));
    let mut cases: BTreeMap<usize, f64> = BTreeMap::new();
    for o in &panel.observations {
        let tau = panel.timeline.event_time(o.month);
        if tau < 0 || tau < lo || tau > hi {
            continue;
        }
        let slot = cases.entry(o.month).or_insert(0.0);
        let keep = match untreated {
            UntreatedFilter::All => true,
            UntreatedFilter::Coverage { max_coverage } => o.cov_local <= max_coverage,
        };
        if keep {
            *slot += o.cases as f64;
        }
    }
    if cases.is_empty() {
        return Err(Error::Missing("no post-launch months in the panel".into()));
    }
    let mut by_month = Vec::with_capacity(cases.len());
    let mut alternative_total = 0.0;
    for (&month, &c) in &cases {
        let tau = panel.timeline.event_time(month);
        let beta = esr
            .beta(tau)
            .ok_or_else(|| Error::Missing(format!("no event-study coefficient for event time {tau}")))?;
        alternative_total += method.other().prevented(beta, coverage_gap, c);
        by_month.push(MonthlyPrevented {
            month,
            tau,
            beta,
            cases: c,
            prevented: method.prevented(beta, coverage_gap, c),
        });
    }
    let prevented_total = by_month.iter().map(|m| m.prevented).sum();
    let total_cases = panel.total_cases() as f64;
    let untreated_cases = by_month.iter().map(|m| m.cases).sum();
    Ok(CounterfactualResult {
        prevented_by_month: by_month,
        prevented_total,
        share_of_total_epidemic: if total_cases > 0.0 { prevented_total / total_cases } else { 0.0 },
        method,
        coverage_gap,
        untreated_cases,
        total_cases,
        alternative_total,
    })
}
