use rand::Rng;
use rayon::prelude::*;

use super::data::{dense_ids, Dataset};
use crate::error::{param, Error, Result};
use crate::rng::stream_rng;

pub const MIN_BOOTSTRAP_REPS: usize = 50;

/// Largest tolerated share of failed bootstrap replications.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// Cluster draws of one pairs-cluster bootstrap replication: the indices
/// (into the sorted distinct clusters) of the `G` clusters drawn with
/// replacement.
pub fn cluster_draws(n_clusters: usize, reps: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..reps)
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            (0..n_clusters).map(|_| rng.random_range(0..n_clusters)).collect()
        })
        .collect()
}

/// Coefficient draws from a bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub draws: Vec<Vec<f64>>,
    pub failures: usize,
    pub reps: usize,
}

impl BootstrapDraws {
    /// Collects per-replication outcomes, failing when more than
    /// [`MAX_FAILURE_SHARE`] of them errored.
    pub fn collect(results: Vec<Result<Vec<f64>>>) -> Result<Self> {
        let reps = results.len();
        let mut draws = Vec::with_capacity(reps);
        let mut failures = 0;
        for r in results {
            match r {
                Ok(d) => draws.push(d),
                Err(_) => failures += 1,
            }
        }
        if failures as f64 > MAX_FAILURE_SHARE * reps as f64 || draws.len() < 2 {
            return Err(Error::Bootstrap { failures, reps });
        }
        Ok(Self { draws, failures, reps })
    }

    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    /// Sample covariance of the draws (divisor `B - 1`).
    pub fn vcov(&self) -> Vec<Vec<f64>> {
        let k = self.dim();
        let b = self.draws.len() as f64;
        let mean: Vec<f64> = (0..k)
            .map(|j| self.draws.iter().map(|d| d[j]).sum::<f64>() / b)
            .collect();
        let mut v = vec![vec![0.0; k]; k];
        for d in &self.draws {
            for i in 0..k {
                let di = d[i] - mean[i];
                for j in 0..=i {
                    v[i][j] += di * (d[j] - mean[j]);
                }
            }
        }
        for i in 0..k {
            for j in 0..=i {
                v[i][j] /= b - 1.0;
                v[j][i] = v[i][j];
            }
        }
        v
    }

    pub fn se(&self) -> Vec<f64> {
        self.vcov().iter().enumerate().map(|(i, r)| r[i].max(0.0).sqrt()).collect()
    }
}

/// Rebuilds a dataset from drawn clusters. Each draw becomes a distinct
/// cluster, and units inside it get fresh labels so that a cluster drawn
/// twice contributes two sets of units.
pub fn resample(data: &Dataset, cluster_col: &str, unit_col: Option<&str>, draw: &[usize]) -> Result<Dataset> {
    let (cl, g) = dense_ids(&data.labels(cluster_col)?);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); g];
    for (row, &c) in cl.iter().enumerate() {
        members[c].push(row);
    }
    let units = match unit_col {
        Some(u) => Some(dense_ids(&data.labels(u)?)),
        None => None,
    };
    let mut rows = Vec::with_capacity(data.n_rows());
    let mut new_cluster = Vec::with_capacity(data.n_rows());
    let mut new_unit = Vec::with_capacity(data.n_rows());
    for (pos, &c) in draw.iter().enumerate() {
        for &r in &members[c] {
            rows.push(r);
            new_cluster.push(pos as f64);
            if let Some((u, nu)) = &units {
                new_unit.push((pos * nu + u[r]) as f64);
            }
        }
    }
    let mut out = data.select_rows(&rows);
    out.insert(cluster_col, new_cluster)?;
    if let Some(u) = unit_col {
        out.insert(u, new_unit)?;
    }
    Ok(out)
}

/// Pairs-cluster bootstrap of an arbitrary estimator.
///
/// Clusters are resampled with replacement (as many as there are), the
/// estimator is re-run on each pseudo-sample, and the spread of its output
/// gives standard errors. Replications run in parallel on independent
/// streams derived from `seed`, so the result does not depend on the
/// thread count.
pub fn cluster_bootstrap<F>(
    data: &Dataset,
    cluster_col: &str,
    unit_col: Option<&str>,
    reps: usize,
    seed: u64,
    estimator: F,
) -> Result<BootstrapDraws>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if reps < MIN_BOOTSTRAP_REPS {
        return param(format!("bootstrap needs at least {MIN_BOOTSTRAP_REPS} replications, got {reps}"));
    }
    let (_, g) = dense_ids(&data.labels(cluster_col)?);
    if g < 2 {
        return param("cluster bootstrap needs at least two clusters");
    }
    let draws = cluster_draws(g, reps, seed);
    let results: Vec<Result<Vec<f64>>> = draws
        .par_iter()
        .map(|d| estimator(&resample(data, cluster_col, unit_col, d)?))
        .collect();
    BootstrapDraws::collect(results)
}

/// Bootstrap standard errors of every coefficient of an estimator.
pub fn bootstrap_se<F>(data: &Dataset, cluster_col: &str, unit_col: Option<&str>, reps: usize, seed: u64, estimator: F) -> Result<Vec<f64>>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    Ok(cluster_bootstrap(data, cluster_col, unit_col, reps, seed, estimator)?.se())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econ::fe::{fe_ols, RegressionSpec};

    fn clustered(n_clusters: usize, per: usize, noise: f64) -> Dataset {
        let n = n_clusters * per;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| 1.0 + 2.0 * v + noise * (((i * 104_729) % 17) as f64 / 17.0 - 0.5))
            .collect();
        Dataset::new()
            .with("g", (0..n).map(|i| (i / per) as f64).collect())
            .unwrap()
            .with("x", x)
            .unwrap()
            .with("y", y)
            .unwrap()
    }

    fn slope(d: &Dataset) -> Result<Vec<f64>> {
        Ok(fe_ols(d, &RegressionSpec::new("y", &["x"]))?.coef)
    }

    #[test]
    fn exact_fit_has_zero_se() {
        let d = clustered(8, 5, 0.0);
        let se = bootstrap_se(&d, "g", None, 99, 1, slope).unwrap();
        assert!(se.iter().all(|s| *s < 1e-10), "{se:?}");
    }

    #[test]
    fn contracts() {
        let d = clustered(1, 10, 1.0);
        assert!(cluster_bootstrap(&d, "g", None, 99, 1, slope).is_err());
        let d = clustered(5, 10, 1.0);
        assert!(cluster_bootstrap(&d, "g", None, 10, 1, slope).is_err());
        let always_fail = |_: &Dataset| -> Result<Vec<f64>> { param("nope") };
        assert!(matches!(
            cluster_bootstrap(&d, "g", None, 60, 1, always_fail),
            Err(Error::Bootstrap { failures: 60, reps: 60 })
        ));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let d = clustered(10, 6, 1.0);
        let a = bootstrap_se(&d, "g", None, 99, 5, slope).unwrap();
        let b = bootstrap_se(&d, "g", None, 99, 5, slope).unwrap();
        let c = bootstrap_se(&d, "g", None, 99, 6, slope).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a[1] > 0.0);
    }

    #[test]
    fn resample_relabels_duplicates() {
        let d = clustered(3, 2, 1.0).with("u", vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let r = resample(&d, "g", Some("u"), &[2, 2, 0]).unwrap();
        assert_eq!(r.n_rows(), 6);
        assert_eq!(r.column("g").unwrap(), &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        let u = r.column("u").unwrap();
        let distinct: std::collections::BTreeSet<i64> = u.iter().map(|v| *v as i64).collect();
        assert_eq!(distinct.len(), 6);
        assert_eq!(r.column("x").unwrap()[0], d.column("x").unwrap()[4]);
    }

    #[test]
    fn cluster_relabelling_is_harmless() {
        let d = clustered(9, 4, 1.0);
        let relabelled = d
            .clone()
            .with("g", d.column("g").unwrap().iter().map(|g| 100.0 - 3.0 * g).collect())
            .unwrap();
        let a = slope(&d).unwrap();
        let b = slope(&relabelled).unwrap();
        assert_eq!(a, b);
    }
}
