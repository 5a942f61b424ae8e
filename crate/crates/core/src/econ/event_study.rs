use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::bootstrap::{cluster_bootstrap, cluster_draws, BootstrapDraws, MIN_BOOTSTRAP_REPS};
use super::data::{dense_ids, Dataset};
use super::fe::{complete_rows, fe_ols, solve_normal, FitResult, RegressionSpec};
use crate::error::{param, Result};

/// Roles of the panel columns in the event-study and DiD regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventStudySpec {
    pub outcome: String,
    /// Continuous treatment intensity, constant within unit.
    pub treatment: String,
    pub event_time: String,
    /// Event time whose dummy is dropped.
    pub omitted: i64,
    /// Controls interacted with every event-time dummy (or with the post
    /// dummy in the DiD).
    pub interacted_controls: Vec<String>,
    /// Controls entering without interaction.
    pub controls: Vec<String>,
    pub unit: String,
    pub time: String,
    pub cluster: String,
    /// Post indicator used by the DiD.
    pub post: String,
    /// Adds last month's outcome as a regressor.
    pub lagged_dependent: bool,
}

impl Default for EventStudySpec {
    fn default() -> Self {
        Self {
            outcome: "log_outcome".into(),
            treatment: "cov_local".into(),
            event_time: "event_time".into(),
            omitted: -1,
            interacted_controls: ["cov_comm", "cov_national", "cov_private", "dist_epicenter_km", "log_population"]
                .map(String::from)
                .to_vec(),
            controls: Vec::new(),
            unit: "subpref_id".into(),
            time: "month".into(),
            cluster: "pref_id".into(),
            post: "post_official".into(),
            lagged_dependent: false,
        }
    }
}

impl EventStudySpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let roles = [&self.outcome, &self.treatment, &self.event_time, &self.unit, &self.time]
            .into_iter()
            .chain(&self.interacted_controls)
            .chain(&self.controls);
        for name in roles {
            if !seen.insert(name.as_str()) {
                return param(format!("column '{name}' appears in more than one role"));
            }
        }
        Ok(())
    }
}

/// How standard errors are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inference {
    /// Cluster-robust sandwich.
    Analytic,
    /// Pairs-cluster bootstrap.
    Bootstrap { reps: usize, seed: u64 },
}

impl Inference {
    fn label(&self) -> String {
        match self {
            Inference::Analytic => "analytic_cluster".into(),
            Inference::Bootstrap { reps, .. } => format!("cluster_bootstrap_{reps}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyEntry {
    pub tau: i64,
    pub beta: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub omitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyResult {
    pub treatment: String,
    pub entries: Vec<EventStudyEntry>,
    /// Covariance of the `beta` column, omitted row and column included as zeros.
    pub vcov: Option<Vec<Vec<f64>>>,
    pub n: usize,
    pub n_clusters: usize,
    pub inference: String,
    pub bootstrap_failures: usize,
    pub ci_level: f64,
}

impl EventStudyResult {
    pub fn entry(&self, tau: i64) -> Option<&EventStudyEntry> {
        self.entries.iter().find(|e| e.tau == tau)
    }

    pub fn beta(&self, tau: i64) -> Option<f64> {
        self.entry(tau).map(|e| e.beta)
    }

    pub fn taus(&self) -> Vec<i64> {
        self.entries.iter().map(|e| e.tau).collect()
    }
}

/// Two-sided normal critical value for a confidence level.
pub fn critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return param(format!("confidence level must lie in (0, 1), got {level}"));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

fn coef_name(treatment: &str, tau: i64) -> String {
    format!("{treatment}@{tau}")
}

/// Sorted distinct event times, checking that the omitted one is present.
fn event_times(data: &Dataset, spec: &EventStudySpec) -> Result<Vec<i64>> {
    let all: BTreeSet<i64> = data.labels(&spec.event_time)?.into_iter().collect();
    if !all.contains(&spec.omitted) {
        return param(format!("omitted event time {} is not in the data", spec.omitted));
    }
    Ok(all.into_iter().collect())
}

/// Adds the lagged outcome (previous period of the same unit) as `lag_outcome`.
fn with_lag(data: &Dataset, spec: &EventStudySpec) -> Result<(Dataset, Option<String>)> {
    if !spec.lagged_dependent {
        return Ok((data.clone(), None));
    }
    let unit = data.labels(&spec.unit)?;
    let time = data.labels(&spec.time)?;
    let y = data.column(&spec.outcome)?;
    let index: BTreeMap<(i64, i64), usize> = (0..data.n_rows()).map(|r| ((unit[r], time[r]), r)).collect();
    let lag = (0..data.n_rows())
        .map(|r| index.get(&(unit[r], time[r] - 1)).map_or(f64::NAN, |&p| y[p]))
        .collect();
    let name = "lag_outcome".to_string();
    let with = data.clone().with(name.clone(), lag)?;
    // periods without a lag drop out entirely, so their event times vanish
    let keep = complete_rows(&with, &[&name])?;
    Ok((with.select_rows(&keep), Some(name)))
}

/// Event-time interactions for the generic (dummy-variable) path.
fn generic_design(
    data: &Dataset,
    spec: &EventStudySpec,
    treatments: &[String],
    taus: &[i64],
    lag: Option<&str>,
) -> Result<(Dataset, RegressionSpec, Vec<String>)> {
    let et = data.labels(&spec.event_time)?;
    let mut out = data.clone();
    let mut regressors = Vec::new();
    let mut treatment_names = Vec::new();
    for t in treatments {
        let v = data.column(t)?;
        for &tau in taus.iter().filter(|&&tau| tau != spec.omitted) {
            let name = coef_name(t, tau);
            out.insert(&name, v.iter().zip(&et).map(|(x, &e)| if e == tau { *x } else { 0.0 }).collect())?;
            regressors.push(name.clone());
            treatment_names.push(name);
        }
    }
    for c in &spec.interacted_controls {
        let v = data.column(c)?.to_vec();
        for &tau in taus.iter().filter(|&&tau| tau != spec.omitted) {
            let name = coef_name(c, tau);
            out.insert(&name, v.iter().zip(&et).map(|(x, &e)| if e == tau { *x } else { 0.0 }).collect())?;
            regressors.push(name);
        }
    }
    regressors.extend(spec.controls.iter().cloned());
    regressors.extend(lag.map(String::from));
    let reg = RegressionSpec {
        outcome: spec.outcome.clone(),
        regressors,
        unit_fe: Some(spec.unit.clone()),
        time_fe: Some(spec.time.clone()),
        cluster: Some(spec.cluster.clone()),
    };
    Ok((out, reg, treatment_names))
}

fn generic_estimate(
    data: &Dataset,
    spec: &EventStudySpec,
    treatments: &[String],
    taus: &[i64],
    lag: Option<&str>,
) -> Result<(FitResult, Vec<usize>)> {
    let (d, reg, names) = generic_design(data, spec, treatments, taus, lag)?;
    let fit = fe_ols(&d, &reg)?;
    let idx = names
        .iter()
        .map(|n| fit.names.iter().position(|m| m == n).expect("treatment column in fit"))
        .collect();
    Ok((fit, idx))
}

/// Closed form for balanced panels in which every regressor is a
/// unit-level variable interacted with event-time dummies: with unit and
/// time effects, the coefficients at event time τ equal the cross-sectional
/// OLS slopes of `y(τ) - y(omitted)` on the unit-level variables. Per-cluster
/// cross-products are kept so that a cluster-bootstrap replication only
/// re-weights them.
struct FastEventStudy {
    names: Vec<String>,
    n_treat: usize,
    /// Per cluster: `X'X` (p × p) and `X'D` (p × T').
    xtx: Vec<DMatrix<f64>>,
    xtd: Vec<DMatrix<f64>>,
    n: usize,
}

impl FastEventStudy {
    fn prepare(data: &Dataset, spec: &EventStudySpec, treatments: &[String], taus: &[i64]) -> Result<Option<Self>> {
        if spec.lagged_dependent || !spec.controls.is_empty() {
            return Ok(None);
        }
        let mut cols: Vec<&str> = vec![&spec.outcome, &spec.unit, &spec.time, &spec.event_time, &spec.cluster];
        cols.extend(treatments.iter().map(String::as_str));
        cols.extend(spec.interacted_controls.iter().map(String::as_str));
        if complete_rows(data, &cols)?.len() != data.n_rows() {
            return Ok(None);
        }
        let (unit, n_units) = dense_ids(&data.labels(&spec.unit)?);
        let (time, n_times) = dense_ids(&data.labels(&spec.time)?);
        let (cluster, n_clusters) = dense_ids(&data.labels(&spec.cluster)?);
        let et = data.labels(&spec.event_time)?;
        if data.n_rows() != n_units * n_times {
            return Ok(None);
        }
        let y = data.column(&spec.outcome)?;
        let level_cols: Vec<&[f64]> = treatments
            .iter()
            .chain(&spec.interacted_controls)
            .map(|c| data.column(c))
            .collect::<Result<_>>()?;
        let p = 1 + level_cols.len();
        let mut row_of = vec![usize::MAX; n_units * n_times];
        let mut time_et = vec![None; n_times];
        for r in 0..data.n_rows() {
            let slot = &mut row_of[unit[r] * n_times + time[r]];
            if *slot != usize::MAX {
                return Ok(None);
            }
            *slot = r;
            match time_et[time[r]] {
                None => time_et[time[r]] = Some(et[r]),
                Some(e) if e != et[r] => return Ok(None),
                _ => {}
            }
        }
        // event time -> time slot
        let slot_of: BTreeMap<i64, usize> = time_et
            .iter()
            .enumerate()
            .map(|(t, e)| (e.expect("every time observed"), t))
            .collect();
        if slot_of.len() != n_times || taus.iter().any(|tau| !slot_of.contains_key(tau)) {
            return Ok(None);
        }
        let base = slot_of[&spec.omitted];
        let kept: Vec<usize> = taus.iter().filter(|&&t| t != spec.omitted).map(|t| slot_of[t]).collect();
        let mut xtx = vec![DMatrix::zeros(p, p); n_clusters];
        let mut xtd = vec![DMatrix::zeros(p, kept.len()); n_clusters];
        let mut unit_cluster = vec![usize::MAX; n_units];
        for u in 0..n_units {
            let rows = &row_of[u * n_times..(u + 1) * n_times];
            let r0 = rows[0];
            let c = cluster[r0];
            let mut x = vec![1.0];
            for col in &level_cols {
                x.push(col[r0]);
            }
            for &r in rows {
                if cluster[r] != c || level_cols.iter().any(|col| col[r] != col[r0]) {
                    return Ok(None);
                }
            }
            unit_cluster[u] = c;
            let y0 = y[rows[base]];
            for i in 0..p {
                for j in 0..p {
                    xtx[c][(i, j)] += x[i] * x[j];
                }
                for (k, &t) in kept.iter().enumerate() {
                    xtd[c][(i, k)] += x[i] * (y[rows[t]] - y0);
                }
            }
        }
        let mut names = vec!["const".to_string()];
        names.extend(treatments.iter().cloned());
        names.extend(spec.interacted_controls.iter().cloned());
        Ok(Some(Self {
            names,
            n_treat: treatments.len(),
            xtx,
            xtd,
            n: data.n_rows(),
        }))
    }

    /// Treatment coefficients, treatment-major, under cluster weights.
    fn estimate(&self, weights: &[f64]) -> Result<Vec<f64>> {
        let mut a = DMatrix::zeros(self.xtx[0].nrows(), self.xtx[0].ncols());
        let mut b = DMatrix::zeros(self.xtd[0].nrows(), self.xtd[0].ncols());
        for ((w, xx), xd) in weights.iter().zip(&self.xtx).zip(&self.xtd) {
            if *w != 0.0 {
                a += xx * *w;
                b += xd * *w;
            }
        }
        let coef = solve_normal(&a, &b, &self.names)?;
        let mut out = Vec::with_capacity(self.n_treat * b.ncols());
        for t in 0..self.n_treat {
            out.extend(coef.row(1 + t).iter().copied());
        }
        Ok(out)
    }
}

/// Joint event study for several treatment columns.
fn event_study_paths(
    data: &Dataset,
    spec: &EventStudySpec,
    treatments: &[String],
    inference: Inference,
    ci_level: f64,
) -> Result<Vec<EventStudyResult>> {
    spec.validate()?;
    let z = critical_value(ci_level)?;
    let (data, lag) = with_lag(data, spec)?;
    let lag = lag.as_deref();
    let taus = event_times(&data, spec)?;
    if taus.len() < 2 {
        return param("event study needs at least two event times");
    }
    let fast = FastEventStudy::prepare(&data, spec, treatments, &taus)?;
    let (_, n_clusters_total) = dense_ids(&data.labels(&spec.cluster)?);
    if n_clusters_total < 2 {
        return param("event study inference needs at least two clusters");
    }

    let (beta, vcov, n, failures) = match inference {
        Inference::Analytic => {
            let (fit, idx) = generic_estimate(&data, spec, treatments, &taus, lag)?;
            let beta: Vec<f64> = idx.iter().map(|&i| fit.coef[i]).collect();
            let vcov: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| fit.vcov[i][j]).collect()).collect();
            (beta, vcov, fit.n, 0)
        }
        Inference::Bootstrap { reps, seed } => {
            if reps < MIN_BOOTSTRAP_REPS {
                return param(format!("bootstrap needs at least {MIN_BOOTSTRAP_REPS} replications, got {reps}"));
            }
            match &fast {
                Some(f) => {
                    let beta = f.estimate(&vec![1.0; n_clusters_total])?;
                    let draws = cluster_draws(n_clusters_total, reps, seed);
                    let results: Vec<Result<Vec<f64>>> = draws
                        .par_iter()
                        .map(|d| {
                            let mut w = vec![0.0; n_clusters_total];
                            for &c in d {
                                w[c] += 1.0;
                            }
                            f.estimate(&w)
                        })
                        .collect();
                    let boot = BootstrapDraws::collect(results)?;
                    (beta, boot.vcov(), f.n, boot.failures)
                }
                None => {
                    let (fit, idx) = generic_estimate(&data, spec, treatments, &taus, lag)?;
                    let beta: Vec<f64> = idx.iter().map(|&i| fit.coef[i]).collect();
                    let boot = cluster_bootstrap(&data, &spec.cluster, Some(&spec.unit), reps, seed, |d| {
                        let (f, idx) = generic_estimate(d, spec, treatments, &taus, lag)?;
                        Ok(idx.iter().map(|&i| f.coef[i]).collect())
                    })?;
                    (beta, boot.vcov(), fit.n, boot.failures)
                }
            }
        }
    };

    let per = taus.len() - 1;
    let mut out = Vec::with_capacity(treatments.len());
    for (t, name) in treatments.iter().enumerate() {
        let mut entries = Vec::with_capacity(taus.len());
        let mut index = Vec::with_capacity(taus.len());
        let mut k = 0;
        for &tau in &taus {
            if tau == spec.omitted {
                entries.push(EventStudyEntry {
                    tau,
                    beta: 0.0,
                    se: 0.0,
                    ci_low: 0.0,
                    ci_high: 0.0,
                    omitted: true,
                });
                index.push(None);
            } else {
                let i = t * per + k;
                let b = beta[i];
                let se = vcov[i][i].max(0.0).sqrt();
                entries.push(EventStudyEntry {
                    tau,
                    beta: b,
                    se,
                    ci_low: b - z * se,
                    ci_high: b + z * se,
                    omitted: false,
                });
                index.push(Some(i));
                k += 1;
            }
        }
        let full: Vec<Vec<f64>> = index
            .iter()
            .map(|a| {
                index
                    .iter()
                    .map(|b| match (a, b) {
                        (Some(i), Some(j)) => vcov[*i][*j],
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        out.push(EventStudyResult {
            treatment: name.clone(),
            entries,
            vcov: Some(full),
            n,
            n_clusters: n_clusters_total,
            inference: inference.label(),
            bootstrap_failures: failures,
            ci_level,
        });
    }
    Ok(out)
}

/// Flexible event study: one coefficient on the treatment per event time,
/// the omitted one normalised to zero, with unit and time fixed effects and
/// the interacted controls given their own event-time profiles.
pub fn event_study(data: &Dataset, spec: &EventStudySpec, inference: Inference, ci_level: f64) -> Result<EventStudyResult> {
    Ok(event_study_paths(data, spec, std::slice::from_ref(&spec.treatment), inference, ci_level)?.remove(0))
}

/// Event study with the treatment split by a binary, unit-level column:
/// returns the paths for `split = 1` and `split = 0`, estimated jointly.
pub fn event_study_heterogeneous(
    data: &Dataset,
    spec: &EventStudySpec,
    split: &str,
    inference: Inference,
    ci_level: f64,
) -> Result<(EventStudyResult, EventStudyResult)> {
    let s = data.column(split)?;
    if s.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return param(format!("split column '{split}' must be 0/1"));
    }
    let treat = data.column(&spec.treatment)?;
    let one: Vec<f64> = treat.iter().zip(s).map(|(t, s)| t * s).collect();
    let zero: Vec<f64> = treat.iter().zip(s).map(|(t, s)| t * (1.0 - s)).collect();
    for (cell, v) in [("1", &one), ("0", &zero)] {
        if v.iter().all(|x| *x == 0.0) {
            return param(format!("split '{split}' = {cell} has no treatment variation"));
        }
    }
    let n1 = format!("{}_{split}1", spec.treatment);
    let n0 = format!("{}_{split}0", spec.treatment);
    let d = data.clone().with(n1.clone(), one)?.with(n0.clone(), zero)?;
    let mut paths = event_study_paths(&d, spec, &[n1, n0], inference, ci_level)?;
    let zero_path = paths.pop().expect("two paths");
    let one_path = paths.pop().expect("two paths");
    Ok((one_path, zero_path))
}

/// Difference in differences: treatment × post with unit and time effects,
/// interacted controls × post and plain controls. The coefficient is named
/// `<treatment>:post`.
pub fn did(data: &Dataset, spec: &EventStudySpec, inference: Inference) -> Result<FitResult> {
    spec.validate()?;
    let (data, lag) = with_lag(data, spec)?;
    let post = data.column(&spec.post)?.to_vec();
    let mut d = data.clone();
    let mut regressors = Vec::new();
    for c in std::iter::once(&spec.treatment).chain(&spec.interacted_controls) {
        let name = format!("{c}:post");
        let v: Vec<f64> = data.column(c)?.iter().zip(&post).map(|(x, p)| x * p).collect();
        d.insert(&name, v)?;
        regressors.push(name);
    }
    regressors.extend(spec.controls.iter().cloned());
    regressors.extend(lag);
    let reg = RegressionSpec {
        outcome: spec.outcome.clone(),
        regressors,
        unit_fe: Some(spec.unit.clone()),
        time_fe: Some(spec.time.clone()),
        cluster: Some(spec.cluster.clone()),
    };
    let mut fit = fe_ols(&d, &reg)?;
    if let Inference::Bootstrap { reps, seed } = inference {
        let boot = cluster_bootstrap(&d, &spec.cluster, Some(&spec.unit), reps, seed, |b| Ok(fe_ols(b, &reg)?.coef))?;
        fit.set_vcov(boot.vcov());
        fit.diagnostics.insert("bootstrap_failures".into(), boot.failures as f64);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    /// Balanced panel: units × periods, event time = period - launch,
    /// `y = unit effect + time effect + Σ effect[τ]·treat + 0.3·ctrl·t + noise`.
    fn synthetic(units: usize, periods: usize, launch: i64, effect: &dyn Fn(i64) -> f64, noise: f64, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let treat: Vec<f64> = (0..units).map(|_| rng.random_range(0.0..1.0)).collect();
        let ctrl: Vec<f64> = (0..units).map(|_| rng.random_range(0.0..1.0)).collect();
        let ue: Vec<f64> = (0..units).map(|_| rng.random_range(-2.0..2.0)).collect();
        let te: Vec<f64> = (0..periods).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for u in 0..units {
            for t in 0..periods {
                let tau = t as i64 - launch;
                let e: f64 = rng.sample(StandardNormal);
                let y = ue[u] + te[t] + effect(tau) * treat[u] + 0.3 * ctrl[u] * t as f64 + noise * e;
                for (k, v) in [
                    ("unit", u as f64),
                    ("time", t as f64),
                    ("event_time", tau as f64),
                    ("cluster", (u % 12) as f64),
                    ("treat", treat[u]),
                    ("ctrl", ctrl[u]),
                    ("post", f64::from(u8::from(tau >= 0))),
                    ("split", f64::from(u8::from(u % 2 == 0))),
                    ("y", y),
                ] {
                    cols.entry(k).or_default().push(v);
                }
            }
        }
        cols.into_iter().fold(Dataset::new(), |d, (k, v)| d.with(k, v).unwrap())
    }

    fn spec() -> EventStudySpec {
        EventStudySpec {
            outcome: "y".into(),
            treatment: "treat".into(),
            interacted_controls: vec!["ctrl".into()],
            unit: "unit".into(),
            time: "time".into(),
            cluster: "cluster".into(),
            post: "post".into(),
            ..EventStudySpec::default()
        }
    }

    #[test]
    fn exact_recovery_without_noise() {
        let eff = |tau: i64| if tau >= 2 { -1.5 } else { 0.0 };
        let d = synthetic(40, 8, 3, &eff, 0.0, 1);
        let r = event_study(&d, &spec(), Inference::Analytic, 0.95).unwrap();
        for e in &r.entries {
            assert!((e.beta - eff(e.tau)).abs() < 1e-9, "tau {}: {}", e.tau, e.beta);
        }
        let omitted = r.entry(-1).unwrap();
        assert!(omitted.omitted && omitted.beta == 0.0 && omitted.se == 0.0);
    }

    #[test]
    fn fast_path_equals_dummy_regression() {
        let eff = |tau: i64| 0.2 * tau as f64;
        let d = synthetic(30, 7, 2, &eff, 1.0, 4);
        let s = spec();
        let taus = event_times(&d, &s).unwrap();
        let treatments = vec!["treat".to_string()];
        let fast = FastEventStudy::prepare(&d, &s, &treatments, &taus).unwrap().unwrap();
        let quick = fast.estimate(&[1.0; 12]).unwrap();
        let (fit, idx) = generic_estimate(&d, &s, &treatments, &taus, None).unwrap();
        for (q, &i) in quick.iter().zip(&idx) {
            assert!((q - fit.coef[i]).abs() < 1e-9, "{q} vs {}", fit.coef[i]);
        }
    }

    #[test]
    fn fast_and_generic_bootstrap_agree() {
        let eff = |tau: i64| if tau >= 0 { -0.5 } else { 0.0 };
        let d = synthetic(36, 6, 2, &eff, 1.0, 8);
        let inf = Inference::Bootstrap { reps: 60, seed: 3 };
        let fast = event_study(&d, &spec(), inf, 0.95).unwrap();
        let s = spec();
        let taus = event_times(&d, &s).unwrap();
        let treatments = vec!["treat".to_string()];
        let boot = cluster_bootstrap(&d, "cluster", Some("unit"), 60, 3, |b| {
            let (f, idx) = generic_estimate(b, &s, &treatments, &taus, None)?;
            Ok(idx.iter().map(|&i| f.coef[i]).collect())
        })
        .unwrap();
        let se = boot.se();
        let fast_se: Vec<f64> = fast.entries.iter().filter(|e| !e.omitted).map(|e| e.se).collect();
        for (a, b) in fast_se.iter().zip(&se) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b), "{a} vs {b}");
        }
    }

    #[test]
    fn constant_treatment_profile_matches_did_identity() {
        // without controls: DiD = mean(post β) − mean(pre β, omitted included)
        let eff = |tau: i64| if tau >= 0 { -0.8 + 0.1 * tau as f64 } else { 0.05 * tau as f64 };
        let d = synthetic(24, 9, 4, &eff, 0.7, 12);
        let s = EventStudySpec {
            interacted_controls: vec![],
            ..spec()
        };
        let es = event_study(&d, &s, Inference::Analytic, 0.95).unwrap();
        let fit = did(&d, &s, Inference::Analytic).unwrap();
        let post: Vec<f64> = es.entries.iter().filter(|e| e.tau >= 0).map(|e| e.beta).collect();
        let pre: Vec<f64> = es.entries.iter().filter(|e| e.tau < 0).map(|e| e.beta).collect();
        let implied = post.iter().sum::<f64>() / post.len() as f64 - pre.iter().sum::<f64>() / pre.len() as f64;
        assert!((fit.coef("treat:post").unwrap() - implied).abs() < 1e-9);
    }

    #[test]
    fn scale_equivariance() {
        let d = synthetic(20, 6, 2, &|t| if t > 0 { 1.0 } else { 0.0 }, 1.0, 2);
        let base = event_study(&d, &spec(), Inference::Analytic, 0.95).unwrap();
        let scaled = d
            .clone()
            .with("treat", d.column("treat").unwrap().iter().map(|v| v * 4.0).collect())
            .unwrap();
        let s = event_study(&scaled, &spec(), Inference::Analytic, 0.95).unwrap();
        for (a, b) in base.entries.iter().zip(&s.entries) {
            assert!((a.beta - 4.0 * b.beta).abs() < 1e-9);
        }
    }

    #[test]
    fn heterogeneous_one_sided() {
        let mut d = synthetic(60, 6, 2, &|_| 0.0, 0.0, 5);
        let y: Vec<f64> = {
            let y = d.column("y").unwrap();
            let et = d.column("event_time").unwrap();
            let tr = d.column("treat").unwrap();
            let sp = d.column("split").unwrap();
            (0..d.n_rows()).map(|i| y[i] + if et[i] >= 0.0 && sp[i] == 1.0 { -2.0 * tr[i] } else { 0.0 }).collect()
        };
        d.insert("y", y).unwrap();
        let (one, zero) = event_study_heterogeneous(&d, &spec(), "split", Inference::Analytic, 0.95).unwrap();
        for (a, b) in one.entries.iter().zip(&zero.entries) {
            let expected = if a.tau >= 0 { -2.0 } else { 0.0 };
            assert!((a.beta - expected).abs() < 1e-9);
            assert!(b.beta.abs() < 1e-9);
        }
        let all_one = d.clone().with("split", vec![1.0; d.n_rows()]).unwrap();
        assert!(event_study_heterogeneous(&all_one, &spec(), "split", Inference::Analytic, 0.95).is_err());
    }

    #[test]
    fn lagged_dependent_variable_runs() {
        let d = synthetic(20, 7, 3, &|t| if t >= 1 { -1.0 } else { 0.0 }, 0.5, 9);
        let s = EventStudySpec {
            lagged_dependent: true,
            ..spec()
        };
        let r = event_study(&d, &s, Inference::Analytic, 0.95).unwrap();
        // the first period is lost to the lag
        assert_eq!(r.n, 20 * 6);
        assert!(r.entries.iter().all(|e| e.ci_low <= e.beta && e.beta <= e.ci_high));
    }

    #[test]
    fn contracts() {
        let d = synthetic(10, 4, 1, &|_| 0.0, 1.0, 1);
        let s = EventStudySpec { omitted: -7, ..spec() };
        assert!(event_study(&d, &s, Inference::Analytic, 0.95).is_err());
        assert!(event_study(&d, &spec(), Inference::Analytic, 1.5).is_err());
        assert!(event_study(&d, &spec(), Inference::Bootstrap { reps: 10, seed: 1 }, 0.95).is_err());
        let one_cluster = d.clone().with("cluster", vec![0.0; d.n_rows()]).unwrap();
        assert!(event_study(&one_cluster, &spec(), Inference::Analytic, 0.95).is_err());
        let dup = EventStudySpec {
            interacted_controls: vec!["treat".into()],
            ..spec()
        };
        assert!(event_study(&d, &dup, Inference::Analytic, 0.95).is_err());
    }

    #[test]
    fn zero_residual_bootstrap_se_is_zero() {
        let d = synthetic(30, 5, 2, &|t| if t >= 0 { 1.0 } else { 0.0 }, 0.0, 3);
        let r = event_study(&d, &spec(), Inference::Bootstrap { reps: 50, seed: 1 }, 0.95).unwrap();
        assert!(r.entries.iter().all(|e| e.se < 1e-9));
    }
}
