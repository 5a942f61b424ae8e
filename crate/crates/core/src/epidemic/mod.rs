//! Synthetic regions, the log-linear epidemic panel and the micro survey.

pub mod io;
mod panel;
mod regions;
mod survey;

pub use panel::{
    covariates, default_epidemic_curve, impulse_for_response, outcome_from_cases, simulate_panel,
    trend_for_curve, CampaignTimeline, EpidemicConfig, EpidemicCurve, OutcomeTransform, Panel, PanelObservation,
    TreatmentChannel, DEFAULT_RESPONSE, N_COVARIATES, REFERENCE_POPULATION,
};
pub use regions::{
    attach_coverage, build_regions, synth_roster, RegionConfig, RegionLayout, RosterConfig, SubPrefecture,
};
pub use survey::{leave_one_out_shares, simulate_survey, MicroRespondent, SurveyConfig, N_DEMOGRAPHICS};
