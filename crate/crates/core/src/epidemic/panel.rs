use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SubPrefecture;
use crate::error::{param, Result};
use crate::game::{behavior_response, GamePrimitives};
use crate::rng::stream_rng;

/// Campaign dates as month indices from the start of the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignTimeline {
    /// Event time zero.
    pub official_launch: usize,
    pub effective_adoption: usize,
    pub horizon: usize,
}

impl Default for CampaignTimeline {
    /// January 2014 is month 0: launch in June 2014, effective adoption in
    /// September 2014, 29 months of data.
    fn default() -> Self {
        Self {
            official_launch: 5,
            effective_adoption: 8,
            horizon: 29,
        }
    }
}

impl CampaignTimeline {
    pub fn validate(&self) -> Result<()> {
        if !(self.official_launch < self.effective_adoption && self.effective_adoption < self.horizon) {
            return param(format!(
                "timeline needs launch < adoption < horizon, got {} / {} / {}",
                self.official_launch, self.effective_adoption, self.horizon
            ));
        }
        Ok(())
    }

    pub fn event_time(&self, month: usize) -> i64 {
        month as i64 - self.official_launch as i64
    }

    /// Event times present in the panel, in order.
    pub fn event_times(&self) -> Vec<i64> {
        (0..self.horizon).map(|m| self.event_time(m)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeTransform {
    /// `log(cases per 100k + log_offset)`.
    PerCapitaOffset,
    /// `log(cases + 1)`.
    CountPlusOne,
}

/// How coverage enters the transmission term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentChannel {
    /// `beta1_path[τ] · coverage`.
    Linear,
    /// `beta1_path[τ] · (b(coverage) - b(0))`, with `b` the population-average
    /// action of the coordination game.
    Structural {
        game: GamePrimitives,
        theta: f64,
        theta_pre: f64,
        public: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpidemicConfig {
    /// Persistence of log cases.
    pub rho: f64,
    /// Baseline log transmission.
    pub beta0: f64,
    /// Effect on log cases per unit of local coverage, indexed by event time
    /// `τ = 0, 1, ...`; missing entries are zero.
    pub beta1_path: Vec<f64>,
    /// Loadings on `[distance to epicentre / 100 km, log(population / 33,000)]`.
    pub beta2: Vec<f64>,
    /// Month-specific shift common to every sub-prefecture.
    pub common_trend: Vec<f64>,
    pub noise_sd: f64,
    pub log_offset: f64,
    pub per_capita_base: f64,
    pub seed_cases: f64,
    pub transform: OutcomeTransform,
    pub channel: TreatmentChannel,
}

/// Target response of log cases to full local coverage, by event time
/// `τ = 0..15`: nothing for six months, then -1.3 to -1.8 for months 7-12
/// and a taper. Per percentage point this is -0.013 to -0.018.
pub const DEFAULT_RESPONSE: [f64; 16] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.3, -1.5, -1.6, -1.8, -1.7, -1.5, -1.0, -0.5, 0.0,
];

/// Gaussian bump in log incidence per 100k, the common path every
/// sub-prefecture is steered towards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpidemicCurve {
    pub base: f64,
    pub amplitude: f64,
    /// Month of the peak (may be fractional).
    pub peak_month: f64,
    /// Standard deviation of the bump, months.
    pub width: f64,
}

impl Default for EpidemicCurve {
    fn default() -> Self {
        Self {
            base: 4.5,
            amplitude: 3.5,
            peak_month: 10.5,
            width: 5.0,
        }
    }
}

impl EpidemicCurve {
    pub fn validate(&self) -> Result<()> {
        if ![self.base, self.amplitude, self.peak_month].iter().all(|v| v.is_finite()) || !(self.width > 0.0) {
            return param("epidemic curve needs finite base, amplitude and peak and a positive width");
        }
        Ok(())
    }

    pub fn values(&self, horizon: usize) -> Vec<f64> {
        (0..horizon)
            .map(|t| {
                let z = (t as f64 - self.peak_month) / self.width;
                self.base + self.amplitude * (-0.5 * z * z).exp()
            })
            .collect()
    }
}

/// Log-incidence curve of the default scenario.
pub fn default_epidemic_curve(horizon: usize) -> Vec<f64> {
    EpidemicCurve::default().values(horizon)
}

impl Default for EpidemicConfig {
    fn default() -> Self {
        let rho = 0.9;
        let beta0 = 0.2;
        let horizon = CampaignTimeline::default().horizon;
        let log_offset: f64 = 0.01;
        let mut curve = default_epidemic_curve(horizon);
        curve[0] = log_offset.ln();
        Self {
            rho,
            beta0,
            beta1_path: impulse_for_response(&DEFAULT_RESPONSE, rho),
            beta2: vec![-0.03, 0.05],
            common_trend: trend_for_curve(&curve, rho, beta0),
            noise_sd: 0.25,
            log_offset,
            per_capita_base: 100_000.0,
            seed_cases: 5.0,
            transform: OutcomeTransform::PerCapitaOffset,
            channel: TreatmentChannel::Linear,
        }
    }
}

impl EpidemicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return param(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return param(format!("noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if !(self.log_offset > 0.0) {
            return param(format!("log_offset must be positive, got {}", self.log_offset));
        }
        if !(self.per_capita_base > 0.0) || !(self.seed_cases >= 0.0) {
            return param("per_capita_base must be positive and seed_cases nonnegative");
        }
        if self.beta2.len() > N_COVARIATES {
            return param(format!("at most {N_COVARIATES} covariate loadings"));
        }
        let all_finite = self
            .beta1_path
            .iter()
            .chain(&self.beta2)
            .chain(&self.common_trend)
            .chain(std::iter::once(&self.beta0))
            .all(|v| v.is_finite());
        if !all_finite {
            return param("epidemic coefficients must be finite");
        }
        if let TreatmentChannel::Structural { game, public, .. } = &self.channel {
            game.validate()?;
            if public.len() != game.alphas.len() {
                return param("structural channel: one public draw per public signal");
            }
        }
        Ok(())
    }

    /// Steers the common trend so that an untreated sub-prefecture at the
    /// reference covariates follows `curve` from month 1 on (month 0 is the
    /// empty start, `ln(log_offset)`).
    pub fn follow_curve(&mut self, curve: &EpidemicCurve, horizon: usize) -> Result<()> {
        curve.validate()?;
        let mut path = curve.values(horizon);
        if let Some(first) = path.first_mut() {
            *first = self.log_offset.ln();
        }
        self.common_trend = trend_for_curve(&path, self.rho, self.beta0);
        Ok(())
    }

    /// Sets the impulse path so that the total effect of full coverage at
    /// event time `τ` equals `response[τ]`.
    pub fn target_response(&mut self, response: &[f64]) {
        self.beta1_path = impulse_for_response(response, self.rho);
    }

    pub fn beta1(&self, tau: i64) -> f64 {
        if tau < 0 {
            0.0
        } else {
            self.beta1_path.get(tau as usize).copied().unwrap_or(0.0)
        }
    }

    /// Total effect of one unit of coverage on log cases at each event time,
    /// `δ_τ = Σ_j ρ^j β1[τ-j]`; this is what an event study recovers.
    pub fn implied_response(&self, timeline: &CampaignTimeline) -> Vec<(i64, f64)> {
        let mut out = Vec::with_capacity(timeline.horizon);
        let mut delta = 0.0;
        for tau in timeline.event_times() {
            delta = self.rho * delta + self.beta1(tau);
            out.push((tau, delta));
        }
        out
    }

    fn treatment_dose(&self, coverage: f64) -> Result<f64> {
        match &self.channel {
            TreatmentChannel::Linear => Ok(coverage),
            TreatmentChannel::Structural {
                game,
                theta,
                theta_pre,
                public,
            } => Ok(behavior_response(game, coverage, *theta, *theta_pre, public)?
                - behavior_response(game, 0.0, *theta, *theta_pre, public)?),
        }
    }
}

/// Inverts `δ_τ = ρ δ_{τ-1} + β1[τ]`: the per-period impulses that make the
/// accumulated response follow `target`.
pub fn impulse_for_response(target: &[f64], rho: f64) -> Vec<f64> {
    let mut prev = 0.0;
    target
        .iter()
        .map(|&d| {
            let b = d - rho * prev;
            prev = d;
            b
        })
        .collect()
}

/// Common trend such that a unit starting at `curve[0]` with no covariates,
/// treatment or noise follows `curve` exactly.
pub fn trend_for_curve(curve: &[f64], rho: f64, beta0: f64) -> Vec<f64> {
    let mut out = vec![0.0; curve.len()];
    for t in 1..curve.len() {
        out[t] = curve[t] - rho * curve[t - 1] - beta0;
    }
    out
}

pub const N_COVARIATES: usize = 2;

/// Reference population for the log-population covariate.
pub const REFERENCE_POPULATION: f64 = 33_000.0;

/// Covariates entering the transmission term.
pub fn covariates(sp: &SubPrefecture) -> [f64; N_COVARIATES] {
    [
        sp.distance_to_epicenter_km / 100.0,
        (sp.population / REFERENCE_POPULATION).ln(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub subpref_id: usize,
    pub pref_id: usize,
    pub month: usize,
    pub cases: u64,
    pub population: f64,
    pub log_outcome: f64,
    pub cov_local: f64,
    pub cov_comm: f64,
    pub cov_national: f64,
    pub cov_private: f64,
    pub cov_ethnic: f64,
    pub dist_epicenter_km: f64,
    pub dist_tx_comm_km: Option<f64>,
    pub dist_tx_nat_km: Option<f64>,
    pub lang_match: Option<bool>,
    pub post_official: bool,
    pub post_effective: bool,
}

/// Sub-prefecture × month panel, sorted by sub-prefecture then month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub timeline: CampaignTimeline,
    pub observations: Vec<PanelObservation>,
}

impl Panel {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn total_cases(&self) -> u64 {
        self.observations.iter().map(|o| o.cases).sum()
    }

    /// Units, in order of first appearance.
    pub fn units(&self) -> Vec<usize> {
        let mut seen = std::collections::BTreeSet::new();
        self.observations
            .iter()
            .filter(|o| seen.insert(o.subpref_id))
            .map(|o| o.subpref_id)
            .collect()
    }
}

/// Recomputes the stored outcome from cases.
pub fn outcome_from_cases(cases: u64, population: f64, cfg: &EpidemicConfig) -> f64 {
    match cfg.transform {
        OutcomeTransform::PerCapitaOffset => {
            (cases as f64 / population * cfg.per_capita_base + cfg.log_offset).ln()
        }
        OutcomeTransform::CountPlusOne => (cases as f64 + 1.0).ln(),
    }
}

/// Simulates the log-linear epidemic.
///
/// For each sub-prefecture the latent log incidence per 100k follows
/// `L_t = ρ L_{t-1} + β0 + trend_t + β1[t-τ0]·d_s·1[t ≥ τ0] + β2·X_s + u_t`,
/// starting from the seed cases at the epicentre and zero cases elsewhere,
/// where `d_s` is the local community coverage (or its structural
/// transform). Monthly cases are `round(max(e^L - offset, 0) · pop / 100k)`.
/// Each sub-prefecture draws its shocks from its own stream derived from
/// `seed`, so changing treatment parameters keeps the noise fixed.
pub fn simulate_panel(
    subprefs: &[SubPrefecture],
    timeline: &CampaignTimeline,
    cfg: &EpidemicConfig,
    epicenter: usize,
    seed: u64,
) -> Result<Panel> {
    timeline.validate()?;
    cfg.validate()?;
    if subprefs.is_empty() {
        return param("no sub-prefectures to simulate");
    }
    if let Some(sp) = subprefs.iter().find(|s| !(s.population > 0.0)) {
        return param(format!("sub-prefecture {} has no population", sp.id));
    }
    let noise = Normal::new(0.0, cfg.noise_sd.max(0.0))
        .map_err(|e| crate::Error::Parameter(e.to_string()))?;
    let doses: Vec<f64> = subprefs
        .iter()
        .map(|sp| cfg.treatment_dose(sp.coverage.share_local_community))
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<PanelObservation>> = subprefs
        .par_iter()
        .zip(doses.par_iter())
        .map(|(sp, &dose)| {
            let mut rng = stream_rng(seed, sp.id as u64);
            let x = covariates(sp);
            let level: f64 = cfg.beta2.iter().zip(&x).map(|(b, v)| b * v).sum();
            let initial_cases = if sp.id == epicenter { cfg.seed_cases } else { 0.0 };
            let mut latent = (initial_cases / sp.population * cfg.per_capita_base + cfg.log_offset).ln();
            let mut out = Vec::with_capacity(timeline.horizon);
            for month in 0..timeline.horizon {
                if month > 0 {
                    let tau = timeline.event_time(month);
                    let shock = if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    latent = cfg.rho * latent
                        + cfg.beta0
                        + cfg.common_trend.get(month).copied().unwrap_or(0.0)
                        + cfg.beta1(tau) * dose
                        + level
                        + shock;
                }
                let per_capita = (latent.exp() - cfg.log_offset).max(0.0);
                let cases = (per_capita * sp.population / cfg.per_capita_base).round() as u64;
                out.push(observation(sp, month, cases, timeline, cfg));
            }
            out
        })
        .collect();
    Ok(Panel {
        timeline: *timeline,
        observations: rows.into_iter().flatten().collect(),
    })
}

fn observation(
    sp: &SubPrefecture,
    month: usize,
    cases: u64,
    timeline: &CampaignTimeline,
    cfg: &EpidemicConfig,
) -> PanelObservation {
    let c = &sp.coverage;
    PanelObservation {
        subpref_id: sp.id,
        pref_id: sp.prefecture_id,
        month,
        cases,
        population: sp.population,
        log_outcome: outcome_from_cases(cases, sp.population, cfg),
        cov_local: c.share_local_community,
        cov_comm: c.share_any_community,
        cov_national: c.share_national,
        cov_private: c.share_private,
        cov_ethnic: c.share_ethnic_match,
        dist_epicenter_km: sp.distance_to_epicenter_km,
        dist_tx_comm_km: c.dist_community_km,
        dist_tx_nat_km: c.dist_national_km,
        lang_match: sp.lang_match_local,
        post_official: month >= timeline.official_launch,
        post_effective: month >= timeline.effective_adoption,
    }
}
