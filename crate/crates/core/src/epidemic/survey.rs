use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SubPrefecture;
use crate::error::{param, Result};
use crate::rng::{derive_seed, stream_rng};

/// Stream tag separating survey draws from the epidemic shocks.
const SURVEY_STREAM: u64 = 0x5355_5256;

/// Exposure and outcome model of the synthetic micro survey.
///
/// Each respondent carries an unobserved taste `v ~ N(0,1)` that raises both
/// the chance of hearing about the epidemic on the radio and the belief that
/// neighbours seek treatment; `endogeneity_*` control how strongly, and
/// setting either to zero removes the selection bias of naive OLS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub n_respondents: usize,
    /// Number of sub-prefectures sampled; respondents are split evenly.
    pub n_clusters: usize,
    /// `P(heard_on_media) = logistic(a0 + a1·coverage_local + endogeneity_exposure·v)`.
    pub a0: f64,
    pub a1: f64,
    pub endogeneity_exposure: f64,
    /// Probability of hearing from another source among those not reached by media.
    pub p_other: f64,
    pub b0: f64,
    pub b1: f64,
    /// Peer term `b2 · peer_share^peer_power`; a power above one makes it convex.
    pub b2: f64,
    pub peer_power: f64,
    pub endogeneity_outcome: f64,
    /// Loadings on `[age, education, wealth, female, urban]`.
    pub gamma: Vec<f64>,
    pub belief_noise_sd: f64,
    pub c0: f64,
    pub c1: f64,
    /// Extra chlorine effect of media over other sources.
    pub c_media: f64,
    pub chlorine_noise_sd: f64,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            n_respondents: 2466,
            n_clusters: 137,
            a0: -1.2,
            a1: 3.0,
            endogeneity_exposure: 1.5,
            p_other: 0.6,
            b0: 0.0,
            b1: 0.4,
            b2: 0.3,
            peer_power: 1.0,
            endogeneity_outcome: 0.8,
            gamma: vec![0.05, 0.1, 0.1, -0.05, 0.1],
            belief_noise_sd: 1.0,
            c0: 0.0,
            c1: 0.3,
            c_media: 0.0,
            chlorine_noise_sd: 1.0,
        }
    }
}

impl SurveyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n_respondents < 2 * self.n_clusters {
            return param(format!(
                "survey needs at least two respondents in each of {} sub-prefectures, got {} respondents",
                self.n_clusters, self.n_respondents
            ));
        }
        if !(0.0..=1.0).contains(&self.p_other) {
            return param(format!("p_other must lie in [0, 1], got {}", self.p_other));
        }
        if !(self.peer_power > 0.0) {
            return param("peer_power must be positive");
        }
        if self.gamma.len() > N_DEMOGRAPHICS {
            return param(format!("at most {N_DEMOGRAPHICS} demographic loadings"));
        }
        if !(self.belief_noise_sd >= 0.0 && self.chlorine_noise_sd >= 0.0) {
            return param("survey noise must be nonnegative");
        }
        Ok(())
    }
}

pub const N_DEMOGRAPHICS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroRespondent {
    pub id: usize,
    pub subpref_id: usize,
    pub pref_id: usize,
    pub cov_local: f64,
    pub heard_on_media: bool,
    pub heard_other_source: bool,
    /// Share of the other respondents in the same sub-prefecture who heard on media.
    pub peer_share_media: f64,
    pub belief_neighbors_seek_treatment: f64,
    pub chlorine_use: f64,
    pub age: f64,
    pub education: f64,
    pub wealth: f64,
    pub female: bool,
    pub urban: bool,
}

impl MicroRespondent {
    pub fn any_info(&self) -> bool {
        self.heard_on_media || self.heard_other_source
    }

    pub fn demographics(&self) -> [f64; N_DEMOGRAPHICS] {
        [
            self.age,
            self.education,
            self.wealth,
            f64::from(u8::from(self.female)),
            f64::from(u8::from(self.urban)),
        ]
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Leave-one-out mean of `flags` at each position.
pub fn leave_one_out_shares(flags: &[bool]) -> Result<Vec<f64>> {
    if flags.len() < 2 {
        return param("leave-one-out share needs at least two respondents");
    }
    let total = flags.iter().filter(|&&f| f).count() as f64;
    let others = (flags.len() - 1) as f64;
    Ok(flags
        .iter()
        .map(|&f| (total - f64::from(u8::from(f))) / others)
        .collect())
}

/// Draws the micro survey.
///
/// `n_clusters` sub-prefectures are sampled without replacement and the
/// respondents split as evenly as possible between them. Exposure is drawn
/// first for everybody in a sub-prefecture, then peer shares are computed
/// leave-one-out, then outcomes.
pub fn simulate_survey(subprefs: &[SubPrefecture], cfg: &SurveyConfig, seed: u64) -> Result<Vec<MicroRespondent>> {
    cfg.validate()?;
    if cfg.n_clusters > subprefs.len() {
        return param(format!(
            "survey asks for {} sub-prefectures but only {} exist",
            cfg.n_clusters,
            subprefs.len()
        ));
    }
    let base = derive_seed(seed, SURVEY_STREAM);
    let mut pick = stream_rng(base, u64::MAX);
    let mut chosen = rand::seq::index::sample(&mut pick, subprefs.len(), cfg.n_clusters).into_vec();
    chosen.sort_unstable();

    let per = cfg.n_respondents / cfg.n_clusters;
    let extra = cfg.n_respondents % cfg.n_clusters;
    let other = Bernoulli::new(cfg.p_other).map_err(|e| crate::Error::Parameter(e.to_string()))?;
    let mut out = Vec::with_capacity(cfg.n_respondents);
    for (k, &s) in chosen.iter().enumerate() {
        let sp = &subprefs[s];
        let n = per + usize::from(k < extra);
        let mut rng = stream_rng(base, sp.id as u64);
        let cov = sp.coverage.share_local_community;

        struct Draft {
            v: f64,
            media: bool,
            other: bool,
            demo: [f64; N_DEMOGRAPHICS],
        }
        let drafts: Vec<Draft> = (0..n)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                let media = rng.random::<f64>() < logistic(cfg.a0 + cfg.a1 * cov + cfg.endogeneity_exposure * v);
                let heard_other = !media && other.sample(&mut rng);
                let demo = [
                    rng.sample(StandardNormal),
                    f64::from(rng.random_range(0u8..4)),
                    rng.sample(StandardNormal),
                    f64::from(u8::from(rng.random_bool(0.5))),
                    f64::from(u8::from(rng.random_bool(0.3))),
                ];
                Draft {
                    v,
                    media,
                    other: heard_other,
                    demo,
                }
            })
            .collect();
        let flags: Vec<bool> = drafts.iter().map(|d| d.media).collect();
        let peers = leave_one_out_shares(&flags)?;

        for (d, peer) in drafts.into_iter().zip(peers) {
            let demo_term: f64 = cfg.gamma.iter().zip(&d.demo).map(|(g, x)| g * x).sum();
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            let media = f64::from(u8::from(d.media));
            let any = f64::from(u8::from(d.media || d.other));
            let belief = cfg.b0
                + cfg.b1 * media
                + cfg.b2 * peer.powf(cfg.peer_power)
                + demo_term
                + cfg.endogeneity_outcome * d.v
                + cfg.belief_noise_sd * e1;
            let chlorine = cfg.c0 + cfg.c1 * any + cfg.c_media * media + cfg.chlorine_noise_sd * e2;
            out.push(MicroRespondent {
                id: out.len(),
                subpref_id: sp.id,
                pref_id: sp.prefecture_id,
                cov_local: cov,
                heard_on_media: d.media,
                heard_other_source: d.other,
                peer_share_media: peer,
                belief_neighbors_seek_treatment: belief,
                chlorine_use: chlorine,
                age: d.demo[0],
                education: d.demo[1],
                wealth: d.demo[2],
                female: d.demo[3] > 0.5,
                urban: d.demo[4] > 0.5,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epidemic::panel::tests::unit;

    fn units(n: usize) -> Vec<SubPrefecture> {
        (0..n).map(|i| unit(i, (i % 5) as f64 / 4.0, 20_000.0, 10.0)).collect()
    }

    #[test]
    fn deterministic_and_sized() {
        let cfg = SurveyConfig {
            n_respondents: 300,
            n_clusters: 20,
            ..SurveyConfig::default()
        };
        let a = simulate_survey(&units(40), &cfg, 3).unwrap();
        let b = simulate_survey(&units(40), &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        let c = simulate_survey(&units(40), &cfg, 4).unwrap();
        assert_ne!(a, c);
        for r in &a {
            assert!(!(r.heard_on_media && r.heard_other_source));
            assert!((0.0..=1.0).contains(&r.peer_share_media));
            assert!(r.belief_neighbors_seek_treatment.is_finite() && r.chlorine_use.is_finite());
        }
    }

    #[test]
    fn leave_one_out_excludes_self() {
        let flags = vec![true, false, true, true, false];
        let base = leave_one_out_shares(&flags).unwrap();
        for i in 0..flags.len() {
            let mut flipped = flags.clone();
            flipped[i] = !flipped[i];
            let again = leave_one_out_shares(&flipped).unwrap();
            assert_eq!(again[i], base[i], "respondent {i}");
        }
        assert_eq!(base[0], 2.0 / 4.0);
        assert_eq!(base[1], 3.0 / 4.0);
        assert!(leave_one_out_shares(&[true]).is_err());
    }

    #[test]
    fn peer_share_matches_brute_force() {
        let cfg = SurveyConfig {
            n_respondents: 200,
            n_clusters: 10,
            ..SurveyConfig::default()
        };
        let rs = simulate_survey(&units(10), &cfg, 8).unwrap();
        for r in &rs {
            let others: Vec<_> = rs.iter().filter(|o| o.subpref_id == r.subpref_id && o.id != r.id).collect();
            let share = others.iter().filter(|o| o.heard_on_media).count() as f64 / others.len() as f64;
            assert!((share - r.peer_share_media).abs() < 1e-15);
        }
    }

    #[test]
    fn too_few_respondents_per_cluster() {
        let cfg = SurveyConfig {
            n_respondents: 30,
            n_clusters: 20,
            ..SurveyConfig::default()
        };
        assert!(simulate_survey(&units(40), &cfg, 1).is_err());
        let cfg = SurveyConfig {
            n_respondents: 100,
            n_clusters: 50,
            ..SurveyConfig::default()
        };
        assert!(simulate_survey(&units(40), &cfg, 1).is_err());
    }

    #[test]
    fn exposure_tracks_coverage_only_when_relevant() {
        let subs = units(100);
        let share = |rs: &[MicroRespondent], hi: bool| {
            let g: Vec<_> = rs.iter().filter(|r| (r.cov_local > 0.5) == hi).collect();
            g.iter().filter(|r| r.heard_on_media).count() as f64 / g.len() as f64
        };
        let cfg = SurveyConfig {
            n_respondents: 4000,
            n_clusters: 100,
            ..SurveyConfig::default()
        };
        let rs = simulate_survey(&subs, &cfg, 5).unwrap();
        assert!(share(&rs, true) - share(&rs, false) > 0.3);
        let flat = SurveyConfig { a1: 0.0, ..cfg };
        let rs = simulate_survey(&subs, &flat, 5).unwrap();
        assert!((share(&rs, true) - share(&rs, false)).abs() < 0.05);
    }
}
