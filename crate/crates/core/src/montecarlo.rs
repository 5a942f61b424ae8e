//! Monte Carlo validation of the event-study pipeline on a fixed world.
//!
//! The geography, roster and coverage stay fixed; every replication draws
//! fresh epidemic shocks, re-estimates the event study with the cluster
//! bootstrap and records how the estimates compare with the injected path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::econ::{critical_value, event_study, pretrend_test, Dataset, EventStudyResult, Inference};
use crate::epidemic::{simulate_panel, EpidemicConfig, SubPrefecture};
use crate::error::{param, Result};
use crate::metrics::prevented_cases;
use crate::rng::derive_seed;
use crate::scenario::Scenario;

/// Nominal level of the pre-trend test.
pub const PRETREND_LEVEL: f64 = 0.05;

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReplication {
    pub seed: u64,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub window_estimate: f64,
    pub window_se: f64,
    pub pretrend_p_value: f64,
    pub counterfactual_share: f64,
    pub bootstrap_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub tau: i64,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Share of replications whose CI covers the truth.
    pub coverage: f64,
    /// Share of replications with `|β̂/SE| < 2`.
    pub within_2se: f64,
    pub omitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub first: i64,
    pub last: i64,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub relative_bias: f64,
    pub rmse: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub reps: usize,
    pub bootstrap_reps: usize,
    pub base_seed: u64,
    pub null: bool,
    pub ci_level: f64,
    pub per_tau: Vec<TauSummary>,
    pub window: WindowSummary,
    /// Coverage pooled over all estimated event times.
    pub pooled_coverage: f64,
    pub pretrend_rejection_rate: f64,
    pub pretrend_level: f64,
    pub counterfactual_share_mean: f64,
    pub bootstrap_failures: usize,
}

/// Average of the coefficients on `[first, last]` and its standard error
/// from the full covariance.
pub fn window_average(esr: &EventStudyResult, first: i64, last: i64) -> Result<(f64, f64)> {
    let idx: Vec<usize> = esr
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.tau >= first && e.tau <= last)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return param(format!("no event times in [{first}, {last}]"));
    }
    let m = idx.len() as f64;
    let est = idx.iter().map(|&i| esr.entries[i].beta).sum::<f64>() / m;
    let se = match &esr.vcov {
        Some(v) => (idx.iter().map(|&i| idx.iter().map(|&j| v[i][j]).sum::<f64>()).sum::<f64>() / (m * m))
            .max(0.0)
            .sqrt(),
        None => f64::NAN,
    };
    Ok((est, se))
}

/// Epidemic configuration used by the replications (the injected effect is
/// dropped for a null study).
pub fn study_config(s: &Scenario) -> Result<EpidemicConfig> {
    let mut cfg = s.epidemic_config()?;
    if s.montecarlo.null {
        cfg.target_response(&[]);
    }
    Ok(cfg)
}

/// Runs the replications in parallel; results come back in replication order.
pub fn replications(s: &Scenario, subprefs: &[SubPrefecture], epicenter: usize) -> Result<Vec<McReplication>> {
    let mc = &s.montecarlo;
    if mc.reps == 0 {
        return param("Monte Carlo needs at least one replication");
    }
    let cfg = study_config(s)?;
    let spec = &s.estimation.event_study;
    let [first, last] = mc.window;
    (0..mc.reps)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(mc.base_seed, r as u64);
            let panel = simulate_panel(subprefs, &s.timeline, &cfg, epicenter, seed)?;
            let data = Dataset::from_panel(&panel)?;
            let inference = Inference::Bootstrap {
                reps: mc.bootstrap_reps,
                seed: derive_seed(seed, 0xB007),
            };
            let esr = event_study(&data, spec, inference, s.estimation.ci_level)?;
            let (window_estimate, window_se) = window_average(&esr, first, last)?;
            let pretrend = pretrend_test(&esr, None, s.estimation.pretrend)?;
            let cf = &s.counterfactual;
            let counterfactual = prevented_cases(
                &esr,
                &panel,
                cf.coverage_gap,
                cf.untreated,
                cf.method,
                cf.window.map(|[a, b]| (a, b)),
            )?;
            Ok(McReplication {
                seed,
                beta: esr.entries.iter().map(|e| e.beta).collect(),
                se: esr.entries.iter().map(|e| e.se).collect(),
                window_estimate,
                window_se,
                pretrend_p_value: pretrend.p_value,
                counterfactual_share: counterfactual.share_of_total_epidemic,
                bootstrap_failures: esr.bootstrap_failures,
            })
        })
        .collect()
}

/// Aggregates replications against the injected response.
pub fn summarize(s: &Scenario, reps: &[McReplication]) -> Result<McSummary> {
    if reps.is_empty() {
        return param("nothing to summarise");
    }
    let cfg = study_config(s)?;
    let truth = cfg.implied_response(&s.timeline);
    let omitted = s.estimation.event_study.omitted;
    let z = critical_value(s.estimation.ci_level)?;
    let n = reps.len() as f64;
    if reps.iter().any(|r| r.beta.len() != truth.len()) {
        return param("replications do not cover every event time");
    }
    let share = |f: &dyn Fn(&McReplication) -> bool| reps.iter().filter(|r| f(r)).count() as f64 / n;

    let mut per_tau = Vec::with_capacity(truth.len());
    let (mut covered, mut estimated) = (0usize, 0usize);
    for (k, &(tau, t)) in truth.iter().enumerate() {
        let mean = reps.iter().map(|r| r.beta[k]).sum::<f64>() / n;
        let mse = reps.iter().map(|r| (r.beta[k] - t).powi(2)).sum::<f64>() / n;
        let is_omitted = tau == omitted;
        let covers = |r: &McReplication| (r.beta[k] - t).abs() <= z * r.se[k];
        if !is_omitted {
            covered += reps.iter().filter(|r| covers(r)).count();
            estimated += reps.len();
        }
        per_tau.push(TauSummary {
            tau,
            truth: t,
            mean,
            bias: mean - t,
            rmse: mse.sqrt(),
            coverage: if is_omitted { 1.0 } else { share(&covers) },
            within_2se: if is_omitted { 1.0 } else { share(&|r| r.beta[k].abs() < 2.0 * r.se[k]) },
            omitted: is_omitted,
        });
    }

    let [first, last] = s.montecarlo.window;
    let in_window: Vec<f64> = truth.iter().filter(|(t, _)| *t >= first && *t <= last).map(|(_, v)| *v).collect();
    if in_window.is_empty() {
        return param("Monte Carlo window holds no event times");
    }
    let wtruth = in_window.iter().sum::<f64>() / in_window.len() as f64;
    let wmean = reps.iter().map(|r| r.window_estimate).sum::<f64>() / n;
    let wmse = reps.iter().map(|r| (r.window_estimate - wtruth).powi(2)).sum::<f64>() / n;
    let window = WindowSummary {
        first,
        last,
        truth: wtruth,
        mean: wmean,
        bias: wmean - wtruth,
        relative_bias: if wtruth != 0.0 { (wmean - wtruth) / wtruth.abs() } else { f64::NAN },
        rmse: wmse.sqrt(),
        coverage: share(&|r| (r.window_estimate - wtruth).abs() <= z * r.window_se),
    };

    Ok(McSummary {
        reps: reps.len(),
        bootstrap_reps: s.montecarlo.bootstrap_reps,
        base_seed: s.montecarlo.base_seed,
        null: s.montecarlo.null,
        ci_level: s.estimation.ci_level,
        per_tau,
        window,
        pooled_coverage: covered as f64 / estimated.max(1) as f64,
        pretrend_rejection_rate: share(&|r| r.pretrend_p_value < PRETREND_LEVEL),
        pretrend_level: PRETREND_LEVEL,
        counterfactual_share_mean: reps.iter().map(|r| r.counterfactual_share).sum::<f64>() / n,
        bootstrap_failures: reps.iter().map(|r| r.bootstrap_failures).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econ::EventStudyEntry;

    fn esr(betas: &[(i64, f64)]) -> EventStudyResult {
        let k = betas.len();
        EventStudyResult {
            treatment: "t".into(),
            entries: betas
                .iter()
                .map(|&(tau, beta)| EventStudyEntry {
                    tau,
                    beta,
                    se: 0.1,
                    ci_low: beta - 0.2,
                    ci_high: beta + 0.2,
                    omitted: tau == -1,
                })
                .collect(),
            vcov: Some((0..k).map(|i| (0..k).map(|j| if i == j { 0.01 } else { 0.005 }).collect()).collect()),
            n: 1,
            n_clusters: 2,
            inference: "fixture".into(),
            bootstrap_failures: 0,
            ci_level: 0.95,
        }
    }

    #[test]
    fn window_average_uses_covariances() {
        let r = esr(&[(-1, 0.0), (0, -1.0), (1, -2.0), (2, 5.0)]);
        let (est, se) = window_average(&r, 0, 1).unwrap();
        assert_eq!(est, -1.5);
        // (0.01 + 0.01 + 2·0.005) / 4
        assert!((se - 0.0075f64.sqrt()).abs() < 1e-15);
        assert!(window_average(&r, 5, 9).is_err());
    }

    #[test]
    fn zero_reps_is_a_parameter_error() {
        let mut s = Scenario::default();
        s.montecarlo.reps = 0;
        assert!(matches!(replications(&s, &[], 0), Err(crate::Error::Parameter(_))));
    }

    #[test]
    fn summary_of_perfect_replications() {
        let s = Scenario::default();
        let truth = study_config(&s).unwrap().implied_response(&s.timeline);
        let rep = McReplication {
            seed: 0,
            beta: truth.iter().map(|t| t.1).collect(),
            se: vec![0.1; truth.len()],
            window_estimate: -1.6,
            window_se: 0.1,
            pretrend_p_value: 0.5,
            counterfactual_share: 0.1,
            bootstrap_failures: 0,
        };
        let sum = summarize(&s, &[rep.clone(), rep]).unwrap();
        assert!(sum.per_tau.iter().all(|t| t.bias == 0.0 && t.coverage == 1.0));
        assert_eq!(sum.pooled_coverage, 1.0);
        assert_eq!(sum.pretrend_rejection_rate, 0.0);
        let expected = -(1.3 + 1.5 + 1.6 + 1.8 + 1.7 + 1.5) / 6.0;
        assert!((sum.window.truth - expected).abs() < 1e-12);
    }
}
