//! CSV formats for the panel and the survey.
//!
//! Booleans are written as `0`/`1`; missing distances and an undefined
//! language match are empty fields.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CampaignTimeline, MicroRespondent, Panel, PanelObservation};
use crate::error::{param, Result};

pub const PANEL_HEADER: [&str; 17] = [
    "subpref_id",
    "pref_id",
    "month",
    "cases",
    "population",
    "log_outcome",
    "cov_local",
    "cov_comm",
    "cov_national",
    "cov_private",
    "cov_ethnic",
    "dist_epicenter_km",
    "dist_tx_comm_km",
    "dist_tx_nat_km",
    "lang_match",
    "post_official",
    "post_effective",
];

pub const SURVEY_HEADER: [&str; 14] = [
    "id",
    "subpref_id",
    "pref_id",
    "cov_local",
    "heard_on_media",
    "heard_other_source",
    "peer_share_media",
    "belief_neighbors_seek_treatment",
    "chlorine_use",
    "age",
    "education",
    "wealth",
    "female",
    "urban",
];

mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}

mod opt_flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_u8(u8::from(*b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
        match Option::<u8>::deserialize(d)? {
            None => Ok(None),
            Some(0) => Ok(Some(false)),
            Some(1) => Ok(Some(true)),
            Some(other) => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PanelRow {
    subpref_id: usize,
    pref_id: usize,
    month: usize,
    cases: u64,
    population: f64,
    log_outcome: f64,
    cov_local: f64,
    cov_comm: f64,
    cov_national: f64,
    cov_private: f64,
    cov_ethnic: f64,
    dist_epicenter_km: f64,
    dist_tx_comm_km: Option<f64>,
    dist_tx_nat_km: Option<f64>,
    #[serde(with = "opt_flag")]
    lang_match: Option<bool>,
    #[serde(with = "flag")]
    post_official: bool,
    #[serde(with = "flag")]
    post_effective: bool,
}

impl From<&PanelObservation> for PanelRow {
    fn from(o: &PanelObservation) -> Self {
        Self {
            subpref_id: o.subpref_id,
            pref_id: o.pref_id,
            month: o.month,
            cases: o.cases,
            population: o.population,
            log_outcome: o.log_outcome,
            cov_local: o.cov_local,
            cov_comm: o.cov_comm,
            cov_national: o.cov_national,
            cov_private: o.cov_private,
            cov_ethnic: o.cov_ethnic,
            dist_epicenter_km: o.dist_epicenter_km,
            dist_tx_comm_km: o.dist_tx_comm_km,
            dist_tx_nat_km: o.dist_tx_nat_km,
            lang_match: o.lang_match,
            post_official: o.post_official,
            post_effective: o.post_effective,
        }
    }
}

impl From<PanelRow> for PanelObservation {
    fn from(r: PanelRow) -> Self {
        Self {
            subpref_id: r.subpref_id,
            pref_id: r.pref_id,
            month: r.month,
            cases: r.cases,
            population: r.population,
            log_outcome: r.log_outcome,
            cov_local: r.cov_local,
            cov_comm: r.cov_comm,
            cov_national: r.cov_national,
            cov_private: r.cov_private,
            cov_ethnic: r.cov_ethnic,
            dist_epicenter_km: r.dist_epicenter_km,
            dist_tx_comm_km: r.dist_tx_comm_km,
            dist_tx_nat_km: r.dist_tx_nat_km,
            lang_match: r.lang_match,
            post_official: r.post_official,
            post_effective: r.post_effective,
        }
    }
}

pub fn write_panel<W: Write>(writer: W, panel: &Panel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in &panel.observations {
        w.serialize(PanelRow::from(o))?;
    }
    if panel.observations.is_empty() {
        w.write_record(PANEL_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a panel; the campaign dates are recovered from the post indicators.
pub fn read_panel<R: Read>(reader: R) -> Result<Panel> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != PANEL_HEADER {
        return param(format!("unexpected panel header {header:?}"));
    }
    let mut observations = Vec::new();
    for row in rdr.deserialize() {
        let row: PanelRow = row?;
        observations.push(PanelObservation::from(row));
    }
    if observations.is_empty() {
        return param("panel file has no rows");
    }
    let horizon = observations.iter().map(|o| o.month).max().unwrap_or(0) + 1;
    let first = |pick: fn(&PanelObservation) -> bool, what: &str| {
        observations
            .iter()
            .filter(|o| pick(o))
            .map(|o| o.month)
            .min()
            .ok_or_else(|| crate::Error::Parameter(format!("panel has no {what} months")))
    };
    let timeline = CampaignTimeline {
        official_launch: first(|o| o.post_official, "post-launch")?,
        effective_adoption: first(|o| o.post_effective, "post-adoption")?,
        horizon,
    };
    timeline.validate()?;
    observations.sort_by_key(|o| (o.subpref_id, o.month));
    Ok(Panel {
        timeline,
        observations,
    })
}

#[derive(Serialize, Deserialize)]
struct SurveyRow {
    id: usize,
    subpref_id: usize,
    pref_id: usize,
    cov_local: f64,
    #[serde(with = "flag")]
    heard_on_media: bool,
    #[serde(with = "flag")]
    heard_other_source: bool,
    peer_share_media: f64,
    belief_neighbors_seek_treatment: f64,
    chlorine_use: f64,
    age: f64,
    education: f64,
    wealth: f64,
    #[serde(with = "flag")]
    female: bool,
    #[serde(with = "flag")]
    urban: bool,
}

pub fn write_survey<W: Write>(writer: W, rows: &[MicroRespondent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(SURVEY_HEADER)?;
    }
    for r in rows {
        w.serialize(SurveyRow {
            id: r.id,
            subpref_id: r.subpref_id,
            pref_id: r.pref_id,
            cov_local: r.cov_local,
            heard_on_media: r.heard_on_media,
            heard_other_source: r.heard_other_source,
            peer_share_media: r.peer_share_media,
            belief_neighbors_seek_treatment: r.belief_neighbors_seek_treatment,
            chlorine_use: r.chlorine_use,
            age: r.age,
            education: r.education,
            wealth: r.wealth,
            female: r.female,
            urban: r.urban,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_survey<R: Read>(reader: R) -> Result<Vec<MicroRespondent>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != SURVEY_HEADER {
        return param(format!("unexpected survey header {header:?}"));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: SurveyRow = row?;
        if r.heard_on_media && r.heard_other_source {
            return param(format!("respondent {} heard on media and from another source", r.id));
        }
        out.push(MicroRespondent {
            id: r.id,
            subpref_id: r.subpref_id,
            pref_id: r.pref_id,
            cov_local: r.cov_local,
            heard_on_media: r.heard_on_media,
            heard_other_source: r.heard_other_source,
            peer_share_media: r.peer_share_media,
            belief_neighbors_seek_treatment: r.belief_neighbors_seek_treatment,
            chlorine_use: r.chlorine_use,
            age: r.age,
            education: r.education,
            wealth: r.wealth,
            female: r.female,
            urban: r.urban,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epidemic::panel::tests::unit;
    use crate::epidemic::{simulate_panel, simulate_survey, EpidemicConfig, SurveyConfig};

    #[test]
    fn panel_round_trip() {
        let subs = vec![unit(0, 0.4, 30_000.0, 0.0), unit(1, 0.0, 25_000.0, 55.0)];
        let tl = CampaignTimeline::default();
        let panel = simulate_panel(&subs, &tl, &EpidemicConfig::default(), 0, 9).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &panel).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&(PANEL_HEADER.join(",") + "\n")));
        let back = read_panel(buf.as_slice()).unwrap();
        assert_eq!(back, panel);
    }

    #[test]
    fn survey_round_trip() {
        let subs: Vec<_> = (0..6).map(|i| unit(i, 0.2 * i as f64, 10_000.0, 1.0)).collect();
        let cfg = SurveyConfig {
            n_respondents: 60,
            n_clusters: 6,
            ..SurveyConfig::default()
        };
        let rs = simulate_survey(&subs, &cfg, 2).unwrap();
        let mut buf = Vec::new();
        write_survey(&mut buf, &rs).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(&SURVEY_HEADER.join(",")));
        assert_eq!(read_survey(buf.as_slice()).unwrap(), rs);
    }

    #[test]
    fn bad_files_rejected() {
        assert!(read_panel("a,b\n1,2\n".as_bytes()).is_err());
        let header = PANEL_HEADER.join(",");
        assert!(read_panel(format!("{header}\n").as_bytes()).is_err());
        let row = "0,0,0,1,100,0,0,0,0,0,0,0,,,2,0,0";
        assert!(read_panel(format!("{header}\n{row}\n").as_bytes()).is_err());
    }
}
