//! Serialised regression results.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::event_study::{critical_value, EventStudyResult};
use super::fe::FitResult;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefReport {
    pub est: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// `{coef: {name: {est, se, ci_low, ci_high}}, n, n_clusters, diagnostics}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsReport {
    pub coef: BTreeMap<String, CoefReport>,
    pub n: usize,
    pub n_clusters: Option<usize>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

impl ResultsReport {
    pub fn from_fit(fit: &FitResult, ci_level: f64) -> Result<Self> {
        let z = critical_value(ci_level)?;
        let coef = fit
            .names
            .iter()
            .zip(fit.coef.iter().zip(&fit.se))
            .map(|(name, (&est, &se))| {
                (
                    name.clone(),
                    CoefReport {
                        est,
                        se,
                        ci_low: est - z * se,
                        ci_high: est + z * se,
                    },
                )
            })
            .collect();
        Ok(Self {
            coef,
            n: fit.n,
            n_clusters: fit.n_clusters,
            diagnostics: fit.diagnostics.clone(),
        })
    }

    /// Event-study coefficients are keyed `<treatment>@<tau>`.
    pub fn from_event_study(esr: &EventStudyResult) -> Self {
        let coef = esr
            .entries
            .iter()
            .map(|e| {
                (
                    format!("{}@{}", esr.treatment, e.tau),
                    CoefReport {
                        est: e.beta,
                        se: e.se,
                        ci_low: e.ci_low,
                        ci_high: e.ci_high,
                    },
                )
            })
            .collect();
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("bootstrap_failures".into(), esr.bootstrap_failures as f64);
        diagnostics.insert("ci_level".into(), esr.ci_level);
        Self {
            coef,
            n: esr.n,
            n_clusters: Some(esr.n_clusters),
            diagnostics,
        }
    }
}

/// One row per event time: `treatment,tau,beta,se,ci_low,ci_high,omitted`.
pub fn write_event_study_csv<W: Write>(w: W, paths: &[&EventStudyResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["treatment", "tau", "beta", "se", "ci_low", "ci_high", "omitted"])?;
    for esr in paths {
        for e in &esr.entries {
            out.write_record([
                esr.treatment.clone(),
                e.tau.to_string(),
                e.beta.to_string(),
                e.se.to_string(),
                e.ci_low.to_string(),
                e.ci_high.to_string(),
                u8::from(e.omitted).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per coefficient: `term,est,se,ci_low,ci_high`.
pub fn write_coef_csv<W: Write>(w: W, report: &ResultsReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["term", "est", "se", "ci_low", "ci_high"])?;
    for (name, c) in &report.coef {
        out.write_record([
            name.clone(),
            c.est.to_string(),
            c.se.to_string(),
            c.ci_low.to_string(),
            c.ci_high.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads back the event-study rows written by [`write_event_study_csv`].
pub fn read_event_study_csv<R: std::io::Read>(r: R) -> Result<Vec<EventStudyResult>> {
    #[derive(Deserialize)]
    struct Row {
        treatment: String,
        tau: i64,
        beta: f64,
        se: f64,
        ci_low: f64,
        ci_high: f64,
        omitted: u8,
    }
    let mut paths: Vec<EventStudyResult> = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: Row = row?;
        if paths.last().is_none_or(|p| p.treatment != row.treatment) {
            paths.push(EventStudyResult {
                treatment: row.treatment.clone(),
                entries: Vec::new(),
                vcov: None,
                n: 0,
                n_clusters: 0,
                inference: "file".into(),
                bootstrap_failures: 0,
                ci_level: 0.95,
            });
        }
        let p = paths.last_mut().expect("pushed above");
        p.entries.push(super::event_study::EventStudyEntry {
            tau: row.tau,
            beta: row.beta,
            se: row.se,
            ci_low: row.ci_low,
            ci_high: row.ci_high,
            omitted: row.omitted != 0,
        });
    }
    Ok(paths)
}
