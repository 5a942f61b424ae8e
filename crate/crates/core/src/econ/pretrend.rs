use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use super::event_study::EventStudyResult;
use crate::error::{param, Error, Result};

/// Null hypothesis on the pre-period coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PretrendHypothesis {
    /// All tested coefficients share a common value.
    #[default]
    Equal,
    /// All tested coefficients are zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrendTest {
    pub taus: Vec<i64>,
    pub wald: f64,
    pub df: usize,
    /// Denominator degrees of freedom when the F reference is used.
    pub df_denominator: Option<usize>,
    pub p_value: f64,
}

/// Wald test on the pre-period event-study coefficients.
///
/// `pre_window` bounds the tested event times (inclusive); by default every
/// estimated τ < 0 is used. With `G` clusters the Wald statistic `W` on `q`
/// restrictions enters as the Hotelling form `W/q · (G-q)/(G-1)` referred to
/// `F(q, G-q)`; without clusters the χ² reference is used.
pub fn pretrend_test(
    esr: &EventStudyResult,
    pre_window: Option<(i64, i64)>,
    hypothesis: PretrendHypothesis,
) -> Result<PretrendTest> {
    let vcov = esr
        .vcov
        .as_ref()
        .ok_or_else(|| Error::Missing("event-study covariance".into()))?;
    let (lo, hi) = pre_window.unwrap_or((i64::MIN, -1));
    let picked: Vec<usize> = esr
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.omitted && e.tau < 0 && e.tau >= lo && e.tau <= hi)
        .map(|(i, _)| i)
        .collect();
    if picked.len() < 2 {
        return param(format!(
            "pre-trend test needs at least two pre-period coefficients, got {}",
            picked.len()
        ));
    }
    let m = picked.len();
    let beta = DVector::from_iterator(m, picked.iter().map(|&i| esr.entries[i].beta));
    let v = DMatrix::from_fn(m, m, |a, b| vcov[picked[a]][picked[b]]);
    let r = match hypothesis {
        PretrendHypothesis::Zero => DMatrix::identity(m, m),
        PretrendHypothesis::Equal => DMatrix::from_fn(m - 1, m, |a, b| {
            if b == a {
                1.0
            } else if b == a + 1 {
                -1.0
            } else {
                0.0
            }
        }),
    };
    let q = r.nrows();
    let rb = &r * beta;
    let rvr = &r * v * r.transpose();
    let inv = rvr
        .cholesky()
        .ok_or_else(|| Error::Domain("pre-period covariance is singular".into()))?
        .inverse();
    let wald = (rb.transpose() * inv * &rb)[(0, 0)];
    let g = esr.n_clusters;
    let (p_value, df_denominator) = if g >= 2 {
        if g <= q {
            return Err(Error::Domain(format!("{q} restrictions cannot be tested with {g} clusters")));
        }
        let d2 = g - q;
        let f = FisherSnedecor::new(q as f64, d2 as f64).map_err(|e| Error::Domain(e.to_string()))?;
        let stat = wald / q as f64 * (g - q) as f64 / (g - 1) as f64;
        (1.0 - f.cdf(stat), Some(d2))
    } else {
        let c = ChiSquared::new(q as f64).map_err(|e| Error::Domain(e.to_string()))?;
        (1.0 - c.cdf(wald), None)
    };
    Ok(PretrendTest {
        taus: picked.iter().map(|&i| esr.entries[i].tau).collect(),
        wald,
        df: q,
        df_denominator,
        p_value,
    })
}
