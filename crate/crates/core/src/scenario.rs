//! Scenario files: one sectioned TOML document describing a whole run.
//!
//! Every section has defaults, so an empty file is the default scenario and
//! `print-defaults` shows every parameter in use. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::econ::{EventStudySpec, Inference, IvSpec, PeerSpec, PretrendHypothesis, MIN_BOOTSTRAP_REPS};
use crate::epidemic::{
    CampaignTimeline, EpidemicConfig, EpidemicCurve, OutcomeTransform, RegionConfig, RosterConfig, SurveyConfig,
    TreatmentChannel, DEFAULT_RESPONSE, N_COVARIATES,
};
use crate::error::{Error, Result};
use crate::game::GamePrimitives;
use crate::metrics::{PreventionMethod, UntreatedFilter};
use crate::rng::derive_seed;
use crate::terrain::{PropagationParams, Transmitter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 20_140_601,
            out_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSection {
    pub nx: usize,
    pub ny: usize,
    /// Cell edge, metres.
    pub cell_size: f64,
    pub ruggedness: f64,
    /// Elevation raster to load instead of synthesising one (`.csv` or binary).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_path: Option<PathBuf>,
}

impl Default for TerrainSection {
    fn default() -> Self {
        Self {
            nx: 160,
            ny: 160,
            cell_size: 3000.0,
            ruggedness: 15.0,
            grid_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RosterSource {
    #[default]
    Synthetic,
    File,
    Inline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosterSection {
    pub source: RosterSource,
    pub synthetic: RosterConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub transmitters: Vec<Transmitter>,
}

impl Default for RosterSection {
    fn default() -> Self {
        Self {
            source: RosterSource::Synthetic,
            synthetic: RosterConfig {
                community_prefecture_share: 0.95,
                community_power_kw: 1.2e-3,
                ..RosterConfig::default()
            },
            path: None,
            transmitters: Vec::new(),
        }
    }
}

/// Coordination-game primitives with one public signal per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub r: f64,
    pub beta_priv: f64,
    #[serde(rename = "alpha_L")]
    pub alpha_l: f64,
    #[serde(rename = "alpha_N")]
    pub alpha_n: f64,
    #[serde(rename = "alpha_F")]
    pub alpha_f: f64,
    #[serde(rename = "P")]
    pub p: f64,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            r: 0.5,
            beta_priv: 1.0,
            alpha_l: 2.0,
            alpha_n: 1.0,
            alpha_f: 0.5,
            p: 0.5,
        }
    }
}

impl GameSection {
    pub fn primitives(&self) -> GamePrimitives {
        GamePrimitives::new(self.r, self.beta_priv, vec![self.alpha_l, self.alpha_n, self.alpha_f], self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    Linear,
    /// Coverage acts through the game's average action.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpidemicSection {
    pub rho: f64,
    pub beta0: f64,
    /// Target effect of full local coverage on log cases, by event time from 0.
    pub response: Vec<f64>,
    /// Loadings on `[distance to epicentre / 100 km, log(population / 33,000)]`.
    pub beta2: Vec<f64>,
    pub noise_sd: f64,
    pub log_offset: f64,
    pub per_capita_base: f64,
    pub seed_cases: f64,
    pub transform: OutcomeTransform,
    pub channel: ChannelKind,
    /// Structural channel only: true state, pre-campaign anchor and public draws.
    pub theta: f64,
    pub theta_pre: f64,
    pub public: Vec<f64>,
    pub curve: EpidemicCurve,
}

impl Default for EpidemicSection {
    fn default() -> Self {
        let cfg = EpidemicConfig::default();
        Self {
            rho: cfg.rho,
            beta0: cfg.beta0,
            response: DEFAULT_RESPONSE.to_vec(),
            beta2: cfg.beta2,
            noise_sd: cfg.noise_sd,
            log_offset: cfg.log_offset,
            per_capita_base: cfg.per_capita_base,
            seed_cases: cfg.seed_cases,
            transform: cfg.transform,
            channel: ChannelKind::Linear,
            theta: 1.0,
            theta_pre: 0.0,
            public: vec![1.0; 3],
            curve: EpidemicCurve::default(),
        }
    }
}

impl EpidemicSection {
    pub fn config(&self, game: &GameSection, timeline: &CampaignTimeline) -> Result<EpidemicConfig> {
        let channel = match self.channel {
            ChannelKind::Linear => TreatmentChannel::Linear,
            ChannelKind::Structural => TreatmentChannel::Structural {
                game: game.primitives(),
                theta: self.theta,
                theta_pre: self.theta_pre,
                public: self.public.clone(),
            },
        };
        let mut cfg = EpidemicConfig {
            rho: self.rho,
            beta0: self.beta0,
            beta2: self.beta2.clone(),
            noise_sd: self.noise_sd,
            log_offset: self.log_offset,
            per_capita_base: self.per_capita_base,
            seed_cases: self.seed_cases,
            transform: self.transform,
            channel,
            ..EpidemicConfig::default()
        };
        cfg.target_response(&self.response);
        cfg.follow_curve(&self.curve, timeline.horizon)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InferenceKind {
    #[default]
    Bootstrap,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub inference: InferenceKind,
    pub bootstrap_reps: usize,
    /// Bootstrap seed; derived from the run seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_seed: Option<u64>,
    pub ci_level: f64,
    pub pretrend: PretrendHypothesis,
    /// Binary unit-level column splitting the treatment path, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub event_study: EventStudySpec,
    pub iv: IvSpec,
    pub peer: PeerSpec,
}

/// Default 2SLS: media exposure instrumented by local coverage, with the
/// leave-one-out peer share and demographics as controls.
pub fn default_iv_spec() -> IvSpec {
    IvSpec {
        outcome: "belief_neighbors_seek_treatment".into(),
        endogenous: vec!["heard_on_media".into()],
        instruments: vec!["cov_local".into()],
        exogenous: ["peer_share_media", "age", "education", "wealth", "female", "urban"]
            .map(String::from)
            .to_vec(),
        cluster: Some("subpref_id".into()),
    }
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            inference: InferenceKind::Bootstrap,
            bootstrap_reps: 999,
            bootstrap_seed: None,
            ci_level: 0.95,
            pretrend: PretrendHypothesis::Equal,
            split: None,
            event_study: EventStudySpec::default(),
            iv: default_iv_spec(),
            peer: PeerSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub reps: usize,
    pub base_seed: u64,
    pub bootstrap_reps: usize,
    /// Event-time window whose average effect is summarised.
    pub window: [i64; 2],
    /// Drop the injected effect.
    pub null: bool,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            reps: 200,
            base_seed: 1,
            bootstrap_reps: 199,
            window: [7, 12],
            null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualSection {
    /// Extra local coverage given to the untreated places, as a share.
    pub coverage_gap: f64,
    pub untreated: UntreatedFilter,
    pub method: PreventionMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[i64; 2]>,
}

impl Default for CounterfactualSection {
    fn default() -> Self {
        Self {
            coverage_gap: 0.62,
            untreated: UntreatedFilter::default(),
            method: PreventionMethod::Linear,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub run: RunSection,
    pub terrain: TerrainSection,
    pub regions: RegionConfig,
    pub roster: RosterSection,
    pub propagation: PropagationParams,
    pub game: GameSection,
    pub timeline: CampaignTimeline,
    pub epidemic: EpidemicSection,
    pub survey: SurveyConfig,
    pub estimation: EstimationSection,
    pub montecarlo: MonteCarloSection,
    pub counterfactual: CounterfactualSection,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a scenario file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut s.run.out_dir);
        if let Some(p) = s.terrain.grid_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = s.roster.path.as_mut() {
            resolve(p);
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of everything that influences results. The output directory
    /// and thread count are left out: neither changes any number.
    pub fn hash(&self) -> Result<String> {
        let mut content = self.clone();
        content.run.out_dir = PathBuf::new();
        content.run.threads = None;
        let bytes = serde_json::to_vec(&content)?;
        Ok(hex(&Sha256::digest(&bytes)))
    }

    pub fn epidemic_config(&self) -> Result<EpidemicConfig> {
        self.epidemic.config(&self.game, &self.timeline)
    }

    pub fn inference(&self) -> Inference {
        match self.estimation.inference {
            InferenceKind::Analytic => Inference::Analytic,
            InferenceKind::Bootstrap => Inference::Bootstrap {
                reps: self.estimation.bootstrap_reps,
                seed: self.bootstrap_seed(),
            },
        }
    }

    pub fn bootstrap_seed(&self) -> u64 {
        self.estimation
            .bootstrap_seed
            .unwrap_or_else(|| derive_seed(self.run.seed, 0xB007))
    }

    /// Checks every section before anything is computed.
    pub fn validate(&self) -> Result<()> {
        let t = &self.terrain;
        if t.nx < 2 || t.ny < 2 || !(t.cell_size > 0.0) || !(t.ruggedness >= 0.0) {
            return Err(Error::Config("terrain needs nx, ny >= 2, cell_size > 0 and ruggedness >= 0".into()));
        }
        if let Some(p) = &t.grid_path {
            require_file(p)?;
        }
        self.regions.validate()?;
        match self.roster.source {
            RosterSource::File => match &self.roster.path {
                Some(p) => require_file(p)?,
                None => return Err(Error::Config("roster.source = \"file\" needs roster.path".into())),
            },
            RosterSource::Synthetic | RosterSource::Inline => {}
        }
        self.propagation.validate()?;
        self.game.primitives().validate()?;
        self.timeline.validate()?;
        if self.epidemic.beta2.len() > N_COVARIATES {
            return Err(Error::Config(format!("epidemic.beta2 takes at most {N_COVARIATES} loadings")));
        }
        self.epidemic_config()?;
        self.survey.validate()?;
        let e = &self.estimation;
        if !(e.ci_level > 0.0 && e.ci_level < 1.0) {
            return Err(Error::Config(format!("estimation.ci_level must lie in (0, 1), got {}", e.ci_level)));
        }
        if e.inference == InferenceKind::Bootstrap && e.bootstrap_reps < MIN_BOOTSTRAP_REPS {
            return Err(Error::Config(format!(
                "estimation.bootstrap_reps must be at least {MIN_BOOTSTRAP_REPS}"
            )));
        }
        e.event_study.validate()?;
        let m = &self.montecarlo;
        if m.reps == 0 {
            return Err(Error::Parameter("montecarlo.reps must be positive".into()));
        }
        if m.bootstrap_reps < MIN_BOOTSTRAP_REPS {
            return Err(Error::Config(format!(
                "montecarlo.bootstrap_reps must be at least {MIN_BOOTSTRAP_REPS}"
            )));
        }
        if m.window[0] > m.window[1] {
            return Err(Error::Config("montecarlo.window must be [first, last]".into()));
        }
        let c = &self.counterfactual;
        if !(c.coverage_gap >= 0.0 && c.coverage_gap <= 1.0) {
            return Err(Error::Config(format!(
                "counterfactual.coverage_gap is a share in [0, 1], got {}",
                c.coverage_gap
            )));
        }
        if let Some(threads) = self.run.threads {
            if threads == 0 {
                return Err(Error::Config("run.threads must be positive".into()));
            }
        }
        Ok(())
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("referenced file {} does not exist", p.display())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
