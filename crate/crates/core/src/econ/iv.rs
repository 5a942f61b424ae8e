use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::data::{dense_ids, Dataset};
use super::fe::{cluster_sandwich, complete_rows, fe_ols, gram, solve_normal, FitResult, RegressionSpec};
use crate::error::{param, Error, Result};

/// First-stage F below which an instrument is flagged as weak.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvSpec {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    /// Included exogenous regressors; a constant is always added.
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub cluster: Option<String>,
}

fn columns(data: &Dataset, names: &[String], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    names
        .iter()
        .map(|n| {
            let c = data.column(n)?;
            Ok(rows.iter().map(|&r| c[r]).collect())
        })
        .collect()
}

/// OLS fit of `y` on `x`: coefficients and residual sum of squares.
fn fit_rss(y: &[f64], x: &[Vec<f64>], names: &[String]) -> Result<(Vec<f64>, f64)> {
    let xtx = gram(x);
    let xty = DMatrix::from_iterator(x.len(), 1, x.iter().map(|c| c.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()));
    let b: Vec<f64> = solve_normal(&xtx, &xty, names)?.iter().copied().collect();
    let rss = (0..y.len())
        .map(|i| {
            let fit: f64 = x.iter().zip(&b).map(|(c, bj)| c[i] * bj).sum();
            (y[i] - fit).powi(2)
        })
        .sum();
    Ok((b, rss))
}

/// Two-stage least squares.
///
/// Each endogenous regressor is projected on the instruments and the
/// exogenous regressors; the outcome is then regressed on the projections.
/// Residuals use the actual regressors. The first-stage F statistic of the
/// excluded instruments is reported per endogenous regressor as
/// `first_stage_F:<name>`; values under [`WEAK_INSTRUMENT_F`] add a note.
pub fn two_sls(data: &Dataset, spec: &IvSpec) -> Result<FitResult> {
    if spec.endogenous.is_empty() {
        return param("2SLS needs at least one endogenous regressor");
    }
    if spec.instruments.len() < spec.endogenous.len() {
        return param(format!(
            "under-identified: {} instruments for {} endogenous regressors",
            spec.instruments.len(),
            spec.endogenous.len()
        ));
    }
    let mut used: Vec<&str> = vec![&spec.outcome];
    for n in spec.endogenous.iter().chain(&spec.instruments).chain(&spec.exogenous) {
        used.push(n);
    }
    used.extend(spec.cluster.iter().map(String::as_str));
    let rows = complete_rows(data, &used)?;
    let n = rows.len();
    let y = columns(data, std::slice::from_ref(&spec.outcome), &rows)?.remove(0);
    let endog = columns(data, &spec.endogenous, &rows)?;
    let mut w = vec![vec![1.0; n]];
    w.extend(columns(data, &spec.exogenous, &rows)?);
    let mut w_names = vec!["const".to_string()];
    w_names.extend(spec.exogenous.iter().cloned());
    let mut z = w.clone();
    z.extend(columns(data, &spec.instruments, &rows)?);
    let mut z_names = w_names.clone();
    z_names.extend(spec.instruments.iter().cloned());
    if n <= z.len() {
        return param(format!("2SLS with {n} rows and {} first-stage regressors", z.len()));
    }

    let mut diagnostics = BTreeMap::new();
    let mut notes = Vec::new();
    let q = spec.instruments.len() as f64;
    let mut fitted = Vec::with_capacity(endog.len());
    for (x, name) in endog.iter().zip(&spec.endogenous) {
        let (b, rss_u) = fit_rss(x, &z, &z_names)?;
        let (_, rss_r) = fit_rss(x, &w, &w_names)?;
        let f = ((rss_r - rss_u) / q) / (rss_u / (n as f64 - z.len() as f64));
        diagnostics.insert(format!("first_stage_F:{name}"), f);
        if !(f >= WEAK_INSTRUMENT_F) {
            notes.push(format!("weak instrument for {name}: first-stage F = {f:.2}"));
        }
        fitted.push((0..n).map(|i| z.iter().zip(&b).map(|(c, bj)| c[i] * bj).sum()).collect::<Vec<f64>>());
    }

    let mut names = spec.endogenous.clone();
    names.extend(w_names);
    let mut xhat = fitted;
    xhat.extend(w.iter().cloned());
    let mut xact = endog;
    xact.extend(w);
    let k = xhat.len();
    let xtx = gram(&xhat);
    let xty = DMatrix::from_iterator(k, 1, xhat.iter().map(|c| c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()));
    let beta: Vec<f64> = solve_normal(&xtx, &xty, &names)?
        .iter()
        .copied()
        .collect();
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - xact.iter().zip(&beta).map(|(c, b)| c[i] * b).sum::<f64>())
        .collect();
    let bread = xtx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient { columns: names.clone() })?
        .inverse();
    let (vcov, n_clusters) = match &spec.cluster {
        Some(c) => {
            let labels = data.labels(c)?;
            let (ids, g) = dense_ids(&rows.iter().map(|&r| labels[r]).collect::<Vec<_>>());
            (cluster_sandwich(&bread, &xhat, &resid, &ids, k)?, Some(g))
        }
        None => {
            let s2 = resid.iter().map(|r| r * r).sum::<f64>() / (n as f64 - k as f64);
            (bread * s2, None)
        }
    };
    let vcov: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| vcov[(i, j)]).collect()).collect();
    let se = (0..k).map(|i| vcov[i][i].max(0.0).sqrt()).collect();
    Ok(FitResult {
        names,
        coef: beta,
        se,
        vcov,
        n,
        n_clusters,
        diagnostics,
        notes,
    })
}

/// OLS counterpart of [`two_sls`] (same regressors, no instruments).
pub fn micro_ols(data: &Dataset, outcome: &str, regressors: &[String], cluster: Option<&str>) -> Result<FitResult> {
    let spec = RegressionSpec {
        outcome: outcome.into(),
        regressors: regressors.to_vec(),
        unit_fe: None,
        time_fe: None,
        cluster: cluster.map(String::from),
    };
    fe_ols(data, &spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeerSpec {
    pub outcome: String,
    /// Leave-one-out share of peers exposed to media.
    pub peer: String,
    /// Interior bin edges; the default gives `< 0.5`, `0.5-0.7`, `> 0.7`.
    pub edges: Vec<f64>,
    pub controls: Vec<String>,
    pub cluster: Option<String>,
}

impl Default for PeerSpec {
    fn default() -> Self {
        Self {
            outcome: "belief_neighbors_seek_treatment".into(),
            peer: "peer_share_media".into(),
            edges: vec![0.5, 0.7],
            controls: ["any_info", "age", "education", "wealth", "female", "urban"]
                .map(String::from)
                .to_vec(),
            cluster: Some("subpref_id".into()),
        }
    }
}

/// Bin index of a peer share: `[0, e0)`, `[e0, e1]`, `(e1, 1]` and so on,
/// the middle bins closed on both sides as in the `50-70%` convention.
fn bin_of(p: f64, edges: &[f64]) -> usize {
    let last = edges.len();
    for (i, &e) in edges.iter().enumerate() {
        let below = if i == 0 { p < e } else { p <= e };
        if below {
            return i;
        }
    }
    last
}

fn bin_label(i: usize, edges: &[f64]) -> String {
    let pct = |v: f64| format!("{}", (v * 100.0).round());
    match i {
        0 => format!("peer<{}%", pct(edges[0])),
        i if i == edges.len() => format!("peer>{}%", pct(edges[i - 1])),
        i => format!("peer{}-{}%", pct(edges[i - 1]), pct(edges[i])),
    }
}

/// One slope on the peer share per bin of the peer share, plus controls and
/// a constant. Bins without observations (or without variation) are left
/// out and reported in the notes.
pub fn binned_peer_effects(data: &Dataset, spec: &PeerSpec) -> Result<FitResult> {
    if spec.edges.windows(2).any(|w| w[0] >= w[1]) || spec.edges.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return param("peer bin edges must be increasing and inside [0, 1]");
    }
    let peer = data.column(&spec.peer)?;
    let n_bins = spec.edges.len() + 1;
    let bins: Vec<usize> = peer.iter().map(|&p| bin_of(p, &spec.edges)).collect();
    let mut d = data.clone();
    let mut regressors = Vec::new();
    let mut notes = Vec::new();
    for b in 0..n_bins {
        let label = bin_label(b, &spec.edges);
        let col: Vec<f64> = peer.iter().zip(&bins).map(|(p, &k)| if k == b { *p } else { 0.0 }).collect();
        let members = bins.iter().filter(|&&k| k == b).count();
        if members == 0 || col.iter().all(|v| *v == 0.0) {
            notes.push(format!("bin {label} omitted: {members} respondents with no peer exposure variation"));
            continue;
        }
        d.insert(&label, col)?;
        regressors.push(label);
    }
    if regressors.is_empty() {
        return param("no peer-share bin has data");
    }
    regressors.extend(spec.controls.iter().cloned());
    let mut fit = micro_ols(&d, &spec.outcome, &regressors, spec.cluster.as_deref())?;
    fit.notes.extend(notes);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn iv_data(n: usize, pi: f64, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for i in 0..n {
            let z: f64 = rng.random_range(0.0..1.0);
            let w: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            let x = pi * z + 0.3 * w + v;
            let e: f64 = rng.sample(StandardNormal);
            let y = 1.0 + 0.5 * x + 0.2 * w + 0.8 * v + e;
            for (k, val) in [("z", z), ("w", w), ("x", x), ("y", y), ("g", (i % 40) as f64)] {
                cols.entry(k).or_default().push(val);
            }
        }
        cols.into_iter().fold(Dataset::new(), |d, (k, v)| d.with(k, v).unwrap())
    }

    fn spec(exog: &[&str]) -> IvSpec {
        IvSpec {
            outcome: "y".into(),
            endogenous: vec!["x".into()],
            instruments: vec!["z".into()],
            exogenous: exog.iter().map(|s| s.to_string()).collect(),
            cluster: None,
        }
    }

    #[test]
    fn wald_ratio_identity() {
        let d = iv_data(500, 2.0, 1);
        let iv = two_sls(&d, &spec(&[])).unwrap();
        let rf = micro_ols(&d, "y", &["z".into()], None).unwrap();
        let fs = micro_ols(&d, "x", &["z".into()], None).unwrap();
        let ratio = rf.coef("z").unwrap() / fs.coef("z").unwrap();
        assert!((iv.coef("x").unwrap() - ratio).abs() < 1e-10);
        // with a covariate the identity holds after partialling it out
        let iv = two_sls(&d, &spec(&["w"])).unwrap();
        let rf = micro_ols(&d, "y", &["z".into(), "w".into()], None).unwrap();
        let fs = micro_ols(&d, "x", &["z".into(), "w".into()], None).unwrap();
        let ratio = rf.coef("z").unwrap() / fs.coef("z").unwrap();
        assert!((iv.coef("x").unwrap() - ratio).abs() < 1e-10);
    }

    #[test]
    fn first_stage_f_matches_t_squared() {
        // one instrument: F equals the squared classical t statistic
        let d = iv_data(400, 1.0, 2);
        let iv = two_sls(&d, &spec(&["w"])).unwrap();
        let fs = micro_ols(&d, "x", &["z".into(), "w".into()], None).unwrap();
        let t = fs.coef("z").unwrap() / fs.se("z").unwrap();
        let f = iv.diagnostics["first_stage_F:x"];
        assert!((f - t * t).abs() < 1e-8 * f.max(1.0));
    }

    #[test]
    fn irrelevant_instrument_is_flagged() {
        let d = iv_data(300, 0.0, 3);
        let iv = two_sls(&d, &spec(&[])).unwrap();
        assert!(iv.diagnostics["first_stage_F:x"] < WEAK_INSTRUMENT_F);
        assert!(iv.notes.iter().any(|n| n.contains("weak instrument")));
    }

    #[test]
    fn rank_and_identification_errors() {
        let d = iv_data(100, 1.0, 4);
        let zero = d.clone().with("z0", vec![0.0; 100]).unwrap();
        let s = IvSpec {
            instruments: vec!["z0".into()],
            ..spec(&[])
        };
        assert!(matches!(two_sls(&zero, &s), Err(Error::RankDeficient { .. })));
        let s = IvSpec {
            instruments: vec![],
            ..spec(&[])
        };
        assert!(two_sls(&d, &s).is_err());
    }

    #[test]
    fn clustered_iv_runs() {
        let d = iv_data(400, 1.5, 5);
        let s = IvSpec {
            cluster: Some("g".into()),
            ..spec(&["w"])
        };
        let fit = two_sls(&d, &s).unwrap();
        assert_eq!(fit.n_clusters, Some(40));
        assert!(fit.se.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn bins_follow_the_convention() {
        let e = [0.5, 0.7];
        assert_eq!(bin_of(0.49, &e), 0);
        assert_eq!(bin_of(0.5, &e), 1);
        assert_eq!(bin_of(0.7, &e), 1);
        assert_eq!(bin_of(0.71, &e), 2);
        assert_eq!(bin_label(0, &e), "peer<50%");
        assert_eq!(bin_label(1, &e), "peer50-70%");
        assert_eq!(bin_label(2, &e), "peer>70%");
    }

    fn peer_data(n: usize, effect: &dyn Fn(f64) -> f64, lo: f64, hi: f64, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        let y: Vec<f64> = p.iter().map(|&v| effect(v) + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        Dataset::new().with("p", p).unwrap().with("y", y).unwrap()
    }

    fn peer_spec() -> PeerSpec {
        PeerSpec {
            outcome: "y".into(),
            peer: "p".into(),
            controls: vec![],
            cluster: None,
            ..PeerSpec::default()
        }
    }

    #[test]
    fn flat_and_convex_peer_effects() {
        let flat = binned_peer_effects(&peer_data(3000, &|p| 0.8 * p, 0.0, 1.0, 1), &peer_spec()).unwrap();
        let bins = ["peer<50%", "peer50-70%", "peer>70%"];
        let b: Vec<f64> = bins.iter().map(|n| flat.coef(n).unwrap()).collect();
        assert!(b.iter().all(|v| (v - 0.8).abs() < 0.05), "{b:?}");
        let convex = binned_peer_effects(&peer_data(3000, &|p| 2.0 * p * p, 0.0, 1.0, 2), &peer_spec()).unwrap();
        let c: Vec<f64> = bins.iter().map(|n| convex.coef(n).unwrap()).collect();
        assert!(c[0] < c[1] && c[1] < c[2], "{c:?}");
    }

    #[test]
    fn degenerate_support_omits_bins() {
        let fit = binned_peer_effects(&peer_data(200, &|p| p, 0.8, 0.95, 3), &peer_spec()).unwrap();
        assert_eq!(fit.names, vec!["const".to_string(), "peer>70%".to_string()]);
        assert_eq!(fit.notes.len(), 2);
    }
}
