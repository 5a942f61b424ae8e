use crate::epidemic::{MicroRespondent, Panel};
use crate::error::{param, Error, Result};

/// Named numeric columns of equal length.
///
/// Identifiers and indicators are stored as `f64` too; missing values are
/// `NaN` and rows containing them are dropped by the estimators.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    n_rows: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    /// Adds or replaces a column.
    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.names.is_empty() {
            self.n_rows = values.len();
        } else if values.len() != self.n_rows {
            return param(format!(
                "column '{name}' has {} rows, dataset has {}",
                values.len(),
                self.n_rows
            ));
        }
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.columns[i] = values,
            None => {
                self.names.push(name);
                self.columns.push(values);
            }
        }
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.insert(name, values)?;
        Ok(self)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Missing(format!("column '{name}'")))
    }

    /// Integer labels of a column, e.g. unit or cluster identifiers.
    pub fn labels(&self, name: &str) -> Result<Vec<i64>> {
        self.column(name)?
            .iter()
            .map(|&v| {
                if v.is_finite() && v.fract() == 0.0 {
                    Ok(v as i64)
                } else {
                    param(format!("column '{name}' holds non-integer label {v}"))
                }
            })
            .collect()
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            n_rows: rows.len(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    /// Estimation dataset for the sub-prefecture × month panel.
    ///
    /// Besides the file columns it carries `event_time`, `log_population`
    /// and `lag_log_outcome` (the previous month's outcome, `NaN` in the
    /// first month). Missing distances become `NaN`; an undefined language
    /// match becomes 0.
    pub fn from_panel(panel: &Panel) -> Result<Self> {
        let obs = &panel.observations;
        let col = |f: &dyn Fn(&crate::epidemic::PanelObservation) -> f64| obs.iter().map(f).collect::<Vec<f64>>();
        let flag = |b: bool| f64::from(u8::from(b));
        let mut lag = vec![f64::NAN; obs.len()];
        for i in 1..obs.len() {
            if obs[i - 1].subpref_id == obs[i].subpref_id && obs[i - 1].month + 1 == obs[i].month {
                lag[i] = obs[i - 1].log_outcome;
            }
        }
        let tl = panel.timeline;
        Self::new()
            .with("subpref_id", col(&|o| o.subpref_id as f64))?
            .with("pref_id", col(&|o| o.pref_id as f64))?
            .with("month", col(&|o| o.month as f64))?
            .with("event_time", col(&|o| tl.event_time(o.month) as f64))?
            .with("cases", col(&|o| o.cases as f64))?
            .with("population", col(&|o| o.population))?
            .with(
                "log_population",
                col(&|o| (o.population / crate::epidemic::REFERENCE_POPULATION).ln()),
            )?
            .with("log_outcome", col(&|o| o.log_outcome))?
            .with("lag_log_outcome", lag)?
            .with("cov_local", col(&|o| o.cov_local))?
            .with("cov_comm", col(&|o| o.cov_comm))?
            .with("cov_national", col(&|o| o.cov_national))?
            .with("cov_private", col(&|o| o.cov_private))?
            .with("cov_ethnic", col(&|o| o.cov_ethnic))?
            .with("dist_epicenter_km", col(&|o| o.dist_epicenter_km))?
            .with("dist_tx_comm_km", col(&|o| o.dist_tx_comm_km.unwrap_or(f64::NAN)))?
            .with("dist_tx_nat_km", col(&|o| o.dist_tx_nat_km.unwrap_or(f64::NAN)))?
            .with("lang_match", col(&|o| flag(o.lang_match == Some(true))))?
            .with("post_official", col(&|o| flag(o.post_official)))?
            .with("post_effective", col(&|o| flag(o.post_effective)))
    }

    /// Estimation dataset for the micro survey, including `any_info` and the
    /// leave-one-out `peer_share_media`.
    pub fn from_survey(rows: &[MicroRespondent]) -> Result<Self> {
        let col = |f: &dyn Fn(&MicroRespondent) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
        let flag = |b: bool| f64::from(u8::from(b));
        Self::new()
            .with("id", col(&|r| r.id as f64))?
            .with("subpref_id", col(&|r| r.subpref_id as f64))?
            .with("pref_id", col(&|r| r.pref_id as f64))?
            .with("cov_local", col(&|r| r.cov_local))?
            .with("heard_on_media", col(&|r| flag(r.heard_on_media)))?
            .with("heard_other_source", col(&|r| flag(r.heard_other_source)))?
            .with("any_info", col(&|r| flag(r.any_info())))?
            .with("peer_share_media", col(&|r| r.peer_share_media))?
            .with("belief_neighbors_seek_treatment", col(&|r| r.belief_neighbors_seek_treatment))?
            .with("chlorine_use", col(&|r| r.chlorine_use))?
            .with("age", col(&|r| r.age))?
            .with("education", col(&|r| r.education))?
            .with("wealth", col(&|r| r.wealth))?
            .with("female", col(&|r| flag(r.female)))?
            .with("urban", col(&|r| flag(r.urban)))
    }
}

/// Dense relabelling of integer labels to `0..k`, in order of first appearance.
pub fn dense_ids(labels: &[i64]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let ids = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (ids, map.len())
}
