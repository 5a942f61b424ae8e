use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::{dense_ids, Dataset};
use crate::error::{param, Error, Result};

/// Tolerance of the alternating-projection demeaning.
pub const DEMEAN_TOL: f64 = 1e-10;
pub const DEMEAN_MAX_SWEEPS: usize = 10_000;

/// Relative pivot below which a regressor counts as collinear with the
/// ones before it.
const COLLINEAR_TOL: f64 = 1e-10;

/// Linear regression with up to two absorbed fixed-effect dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub outcome: String,
    pub regressors: Vec<String>,
    #[serde(default)]
    pub unit_fe: Option<String>,
    #[serde(default)]
    pub time_fe: Option<String>,
    /// Cluster-robust standard errors when set; classical ones otherwise.
    #[serde(default)]
    pub cluster: Option<String>,
}

impl RegressionSpec {
    pub fn new(outcome: &str, regressors: &[&str]) -> Self {
        Self {
            outcome: outcome.into(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            unit_fe: None,
            time_fe: None,
            cluster: None,
        }
    }

    pub fn with_fe(mut self, unit: &str, time: &str) -> Self {
        self.unit_fe = Some(unit.into());
        self.time_fe = Some(time.into());
        self
    }

    pub fn with_cluster(mut self, cluster: &str) -> Self {
        self.cluster = Some(cluster.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let roles = std::iter::once(&self.outcome)
            .chain(&self.regressors)
            .chain(self.unit_fe.iter())
            .chain(self.time_fe.iter());
        for name in roles {
            if !seen.insert(name) {
                return param(format!("column '{name}' appears in more than one role"));
            }
        }
        if self.regressors.is_empty() {
            return param("regression needs at least one regressor");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub n: usize,
    pub n_clusters: Option<usize>,
    pub diagnostics: BTreeMap<String, f64>,
    /// Human-readable remarks, e.g. omitted bins or weak instruments.
    pub notes: Vec<String>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coef[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.se[i])
    }

    /// Replaces the covariance (and standard errors) with an external one,
    /// e.g. from a bootstrap.
    pub fn set_vcov(&mut self, vcov: Vec<Vec<f64>>) {
        self.se = vcov.iter().enumerate().map(|(i, r)| r[i].max(0.0).sqrt()).collect();
        self.vcov = vcov;
    }
}

/// Subtracts group means for each dimension in turn until no value moves
/// by more than [`DEMEAN_TOL`]. Returns the number of sweeps.
pub(crate) fn demean(cols: &mut [Vec<f64>], groups: &[(Vec<usize>, usize)]) -> Result<usize> {
    if groups.is_empty() || cols.is_empty() {
        return Ok(0);
    }
    let counts: Vec<Vec<f64>> = groups
        .iter()
        .map(|(g, k)| {
            let mut c = vec![0.0; *k];
            for &i in g {
                c[i] += 1.0;
            }
            c
        })
        .collect();
    let mut sums: Vec<f64> = Vec::new();
    for sweep in 1..=DEMEAN_MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for ((g, k), cnt) in groups.iter().zip(&counts) {
            for col in cols.iter_mut() {
                sums.clear();
                sums.resize(*k, 0.0);
                for (v, &gi) in col.iter().zip(g) {
                    sums[gi] += v;
                }
                for (s, c) in sums.iter_mut().zip(cnt) {
                    *s /= c;
                }
                for (v, &gi) in col.iter_mut().zip(g) {
                    *v -= sums[gi];
                    change = change.max(sums[gi].abs());
                }
            }
        }
        // one dimension is exact after a single pass
        if change < DEMEAN_TOL || groups.len() == 1 {
            return Ok(sweep);
        }
    }
    Err(Error::Convergence {
        iterations: DEMEAN_MAX_SWEEPS,
        last_change: f64::NAN,
        last_iterate: Vec::new(),
    })
}

/// Cross-product `X'X` of column-stored regressors.
pub(crate) fn gram(x: &[Vec<f64>]) -> DMatrix<f64> {
    let k = x.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Names of regressors that are (numerically) linear combinations of the
/// regressors listed before them, found by a pivot-free Cholesky sweep.
pub(crate) fn collinear_columns(xtx: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let k = xtx.nrows();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut kept: Vec<usize> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..k {
        let diag = xtx[(j, j)];
        // row of L for column j against kept columns
        let mut row = vec![0.0; kept.len()];
        for (a, &i) in kept.iter().enumerate() {
            let mut s = xtx[(i, j)];
            for (b, rb) in row.iter().enumerate().take(a) {
                s -= l[(i, kept[b])] * rb;
            }
            row[a] = s / l[(i, i)];
        }
        let resid = diag - row.iter().map(|v| v * v).sum::<f64>();
        if !(diag > 0.0) || resid <= COLLINEAR_TOL * diag {
            bad.push(names[j].clone());
            continue;
        }
        for (a, &i) in kept.iter().enumerate() {
            l[(j, i)] = row[a];
        }
        l[(j, j)] = resid.sqrt();
        kept.push(j);
    }
    bad
}

/// A regression problem after fixed effects have been absorbed.
pub(crate) struct Design {
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub cluster: Option<Vec<usize>>,
    /// Degrees of freedom used up by absorbed effects.
    pub absorbed: usize,
}

/// Solves `X'X b = X'y` after checking rank.
pub(crate) fn solve_normal(xtx: &DMatrix<f64>, xty: &DMatrix<f64>, names: &[String]) -> Result<DMatrix<f64>> {
    let bad = collinear_columns(xtx, names);
    if !bad.is_empty() {
        return Err(Error::RankDeficient { columns: bad });
    }
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient { columns: names.to_vec() })?;
    Ok(chol.solve(xty))
}

pub(crate) fn least_squares(d: Design) -> Result<FitResult> {
    let n = d.y.len();
    let k = d.x.len();
    let xtx = gram(&d.x);
    let xty = DMatrix::from_iterator(k, 1, d.x.iter().map(|c| c.iter().zip(&d.y).map(|(a, b)| a * b).sum::<f64>()));
    let beta = solve_normal(&xtx, &xty, &d.names)?;
    let beta: Vec<f64> = beta.iter().copied().collect();
    let mut resid = d.y.clone();
    for (c, b) in d.x.iter().zip(&beta) {
        for (r, v) in resid.iter_mut().zip(c) {
            *r -= b * v;
        }
    }
    let xtx_inv = xtx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient { columns: d.names.clone() })?
        .inverse();
    let (vcov, n_clusters) = match &d.cluster {
        Some(cl) => (cluster_sandwich(&xtx_inv, &d.x, &resid, cl, k)?, Some(count_groups(cl))),
        None => {
            let dof = n as f64 - k as f64 - d.absorbed as f64;
            if !(dof > 0.0) {
                return param(format!("no residual degrees of freedom ({n} rows, {k} regressors)"));
            }
            let s2 = resid.iter().map(|r| r * r).sum::<f64>() / dof;
            (xtx_inv * s2, None)
        }
    };
    let vcov: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| vcov[(i, j)]).collect()).collect();
    let se = (0..k).map(|i| vcov[i][i].max(0.0).sqrt()).collect();
    Ok(FitResult {
        names: d.names,
        coef: beta,
        se,
        vcov,
        n,
        n_clusters,
        diagnostics: BTreeMap::new(),
        notes: Vec::new(),
    })
}

fn count_groups(g: &[usize]) -> usize {
    g.iter().copied().max().map_or(0, |m| m + 1)
}

/// Cluster-robust sandwich with the usual `G/(G-1) · (N-1)/(N-K)` correction.
pub(crate) fn cluster_sandwich(
    bread: &DMatrix<f64>,
    x: &[Vec<f64>],
    resid: &[f64],
    cluster: &[usize],
    k: usize,
) -> Result<DMatrix<f64>> {
    let g = count_groups(cluster);
    if g < 2 {
        return param("clustered standard errors need at least two clusters");
    }
    let n = resid.len();
    let mut scores = DMatrix::<f64>::zeros(g, k);
    for (j, col) in x.iter().enumerate() {
        for ((v, r), &c) in col.iter().zip(resid).zip(cluster) {
            scores[(c, j)] += v * r;
        }
    }
    let meat = scores.transpose() * &scores;
    let adj = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64).max(1.0));
    Ok(bread * meat * bread * adj)
}

/// Rows where every listed column is finite.
pub(crate) fn complete_rows(data: &Dataset, cols: &[&str]) -> Result<Vec<usize>> {
    let columns: Vec<&[f64]> = cols.iter().map(|c| data.column(c)).collect::<Result<_>>()?;
    Ok((0..data.n_rows())
        .filter(|&r| columns.iter().all(|c| c[r].is_finite()))
        .collect())
}

/// Two-way (or one-way, or no) fixed-effects OLS.
///
/// Fixed effects are absorbed by alternating projections; without any fixed
/// effect a constant named `const` is added. Rows with a missing value in
/// any used column are dropped.
pub fn fe_ols(data: &Dataset, spec: &RegressionSpec) -> Result<FitResult> {
    spec.validate()?;
    let mut used: Vec<&str> = vec![spec.outcome.as_str()];
    used.extend(spec.regressors.iter().map(String::as_str));
    used.extend(spec.unit_fe.iter().map(String::as_str));
    used.extend(spec.time_fe.iter().map(String::as_str));
    used.extend(spec.cluster.iter().map(String::as_str));
    let rows = complete_rows(data, &used)?;
    if rows.is_empty() {
        return param("no complete rows to estimate on");
    }
    let pick = |name: &str| -> Result<Vec<f64>> {
        let c = data.column(name)?;
        Ok(rows.iter().map(|&r| c[r]).collect())
    };
    let ids = |name: &str| -> Result<(Vec<usize>, usize)> {
        let l = data.labels(name)?;
        Ok(dense_ids(&rows.iter().map(|&r| l[r]).collect::<Vec<_>>()))
    };
    let mut y = pick(&spec.outcome)?;
    let mut x: Vec<Vec<f64>> = spec.regressors.iter().map(|r| pick(r)).collect::<Result<_>>()?;
    let mut names = spec.regressors.clone();
    let mut groups = Vec::new();
    for fe in spec.unit_fe.iter().chain(spec.time_fe.iter()) {
        groups.push(ids(fe)?);
    }
    let absorbed = match groups.len() {
        0 => {
            x.insert(0, vec![1.0; rows.len()]);
            names.insert(0, "const".into());
            0
        }
        1 => groups[0].1,
        _ => groups[0].1 + groups[1].1 - 1,
    };
    if !groups.is_empty() {
        let mut all = Vec::with_capacity(x.len() + 1);
        all.push(std::mem::take(&mut y));
        all.append(&mut x);
        demean(&mut all, &groups)?;
        y = all.remove(0);
        x = all;
    }
    let cluster = match &spec.cluster {
        Some(c) => Some(ids(c)?.0),
        None => None,
    };
    least_squares(Design {
        y,
        x,
        names,
        cluster,
        absorbed,
    })
}

/// Plain least squares on explicit columns (used by the oracles in tests).
pub fn ols_columns(y: &[f64], x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = x.len();
    let xm = DMatrix::from_fn(y.len(), k, |i, j| x[j][i]);
    let yv = DVector::from_column_slice(y);
    let svd = xm.svd(true, true);
    let b = svd.solve(&yv, 1e-12).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(b.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn panel_data(units: usize, periods: usize, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = units * periods;
        let unit: Vec<f64> = (0..n).map(|i| (i / periods) as f64).collect();
        let time: Vec<f64> = (0..n).map(|i| (i % periods) as f64).collect();
        let mut col = || (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (a, b, y) = (col(), col(), col());
        Dataset::new()
            .with("unit", unit)
            .unwrap()
            .with("time", time)
            .unwrap()
            .with("a", a)
            .unwrap()
            .with("b", b)
            .unwrap()
            .with("y", y)
            .unwrap()
    }

    /// Explicit-dummy regression: regressors, unit dummies, time dummies but one.
    fn dummy_ols(d: &Dataset, regs: &[&str]) -> Vec<f64> {
        let unit = d.labels("unit").unwrap();
        let time = d.labels("time").unwrap();
        let nu = *unit.iter().max().unwrap() as usize + 1;
        let nt = *time.iter().max().unwrap() as usize + 1;
        let mut x: Vec<Vec<f64>> = regs.iter().map(|r| d.column(r).unwrap().to_vec()).collect();
        for u in 0..nu {
            x.push(unit.iter().map(|&v| f64::from(u8::from(v as usize == u))).collect());
        }
        for t in 1..nt {
            x.push(time.iter().map(|&v| f64::from(u8::from(v as usize == t))).collect());
        }
        ols_columns(d.column("y").unwrap(), &x).unwrap()[..regs.len()].to_vec()
    }

    #[test]
    fn two_by_two_did() {
        let y = vec![1.0, 4.0, 2.0, 3.5];
        let d = Dataset::new()
            .with("unit", vec![0.0, 0.0, 1.0, 1.0])
            .unwrap()
            .with("time", vec![0.0, 1.0, 0.0, 1.0])
            .unwrap()
            .with("treat_post", vec![0.0, 1.0, 0.0, 0.0])
            .unwrap()
            .with("y", y.clone())
            .unwrap();
        let spec = RegressionSpec::new("y", &["treat_post"]).with_fe("unit", "time");
        // no residual degrees of freedom for classical errors
        assert!(matches!(fe_ols(&d, &spec), Err(Error::Parameter(_))));
        let fit = fe_ols(&d, &spec.with_cluster("unit")).unwrap();
        let expected = (y[1] - y[0]) - (y[3] - y[2]);
        assert_eq!(fit.coef[0], expected);
    }

    #[test]
    fn level_shift_is_absorbed() {
        let d = panel_data(6, 5, 3);
        let spec = RegressionSpec::new("y", &["a", "b"]).with_fe("unit", "time");
        let base = fe_ols(&d, &spec).unwrap();
        let shifted: Vec<f64> = d.column("y").unwrap().iter().map(|v| v + 7.0).collect();
        let d2 = d.clone().with("y", shifted).unwrap();
        let again = fe_ols(&d2, &spec).unwrap();
        for (p, q) in base.coef.iter().zip(&again.coef) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_dummy_regression_unbalanced() {
        let d = panel_data(7, 6, 11);
        let keep: Vec<usize> = (0..d.n_rows()).filter(|i| i % 5 != 3).collect();
        let d = d.select_rows(&keep);
        let fit = fe_ols(&d, &RegressionSpec::new("y", &["a", "b"]).with_fe("unit", "time")).unwrap();
        let oracle = dummy_ols(&d, &["a", "b"]);
        for (p, q) in fit.coef.iter().zip(&oracle) {
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
    }

    #[test]
    fn collinear_columns_are_named() {
        let d = panel_data(5, 4, 1);
        let a = d.column("a").unwrap().to_vec();
        let d = d.with("a2", a.iter().map(|v| 2.0 * v).collect()).unwrap();
        let err = fe_ols(&d, &RegressionSpec::new("y", &["a", "b", "a2"]).with_fe("unit", "time")).unwrap_err();
        match err {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["a2".to_string()]),
            other => panic!("unexpected {other}"),
        }
        // a time-invariant regressor is absorbed by the unit effects
        let unit = d.column("unit").unwrap().to_vec();
        let d = d.with("u2", unit.iter().map(|v| v * v).collect()).unwrap();
        assert!(matches!(
            fe_ols(&d, &RegressionSpec::new("y", &["u2"]).with_fe("unit", "time")),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn spec_and_cluster_contracts() {
        let d = panel_data(4, 3, 2);
        assert!(fe_ols(&d, &RegressionSpec::new("y", &["y"])).is_err());
        assert!(fe_ols(&d, &RegressionSpec::new("y", &["nope"])).is_err());
        let one = d.clone().with("c", vec![0.0; d.n_rows()]).unwrap();
        assert!(fe_ols(&one, &RegressionSpec::new("y", &["a"]).with_cluster("c")).is_err());
    }

    #[test]
    fn no_fixed_effects_adds_constant() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 0.5 * v).collect();
        let d = Dataset::new().with("x", x).unwrap().with("y", y).unwrap();
        let fit = fe_ols(&d, &RegressionSpec::new("y", &["x"])).unwrap();
        assert!((fit.coef("const").unwrap() - 3.0).abs() < 1e-10);
        assert!((fit.coef("x").unwrap() - 0.5).abs() < 1e-12);
        assert!(fit.se("x").unwrap() < 1e-6);
    }

    #[test]
    fn analytic_cluster_se_matches_hand_computation() {
        // one regressor, no FE: V = (X'X)^-1 Σ_g (Σ x u)^2 (X'X)^-1 · adj
        let d = panel_data(6, 4, 9);
        let fit = fe_ols(&d, &RegressionSpec::new("y", &["a"]).with_cluster("unit")).unwrap();
        let y = d.column("y").unwrap();
        let a = d.column("a").unwrap();
        let unit = d.labels("unit").unwrap();
        let n = y.len() as f64;
        let xm = DMatrix::from_fn(y.len(), 2, |i, j| if j == 0 { 1.0 } else { a[i] });
        let bread = (xm.transpose() * &xm).try_inverse().unwrap();
        let b = [fit.coef[0], fit.coef[1]];
        let mut meat = DMatrix::<f64>::zeros(2, 2);
        for g in 0..6 {
            let mut s = DVector::<f64>::zeros(2);
            for i in (0..y.len()).filter(|&i| unit[i] == g) {
                let u = y[i] - b[0] - b[1] * a[i];
                s[0] += u;
                s[1] += a[i] * u;
            }
            meat += &s * s.transpose();
        }
        let v = &bread * meat * &bread * (6.0 / 5.0) * ((n - 1.0) / (n - 2.0));
        assert!((fit.se[1] - v[(1, 1)].sqrt()).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn within_equals_dummies(seed in 0u64..1_000_000, units in 3usize..=8, periods in 3usize..=6) {
            let d = panel_data(units, periods, seed);
            let fit = fe_ols(&d, &RegressionSpec::new("y", &["a", "b"]).with_fe("unit", "time")).unwrap();
            let oracle = dummy_ols(&d, &["a", "b"]);
            for (p, q) in fit.coef.iter().zip(&oracle) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }

        #[test]
        fn row_order_and_scale(seed in 0u64..1_000_000, c in 0.1f64..10.0) {
            let d = panel_data(5, 4, seed);
            let spec = RegressionSpec::new("y", &["a", "b"]).with_fe("unit", "time");
            let base = fe_ols(&d, &spec).unwrap();
            let rev: Vec<usize> = (0..d.n_rows()).rev().collect();
            let flipped = fe_ols(&d.select_rows(&rev), &spec).unwrap();
            let scaled_a: Vec<f64> = d.column("a").unwrap().iter().map(|v| v * c).collect();
            let scaled = fe_ols(&d.clone().with("a", scaled_a).unwrap(), &spec).unwrap();
            prop_assert!((base.coef[0] - flipped.coef[0]).abs() < 1e-10);
            prop_assert!((base.coef[0] - scaled.coef[0] * c).abs() < 1e-9 * (1.0 + base.coef[0].abs()));
            prop_assert!((base.coef[1] - scaled.coef[1]).abs() < 1e-9);
        }
    }
}
