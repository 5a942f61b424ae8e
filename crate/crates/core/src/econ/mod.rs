//! Panel and micro econometrics: fixed-effects OLS, event studies, the
//! pairs-cluster bootstrap, pre-trend tests and two-stage least squares.

mod bootstrap;
mod data;
mod event_study;
mod fe;
mod iv;
pub mod output;
mod pretrend;

pub use bootstrap::{bootstrap_se, cluster_bootstrap, cluster_draws, resample, BootstrapDraws, MAX_FAILURE_SHARE, MIN_BOOTSTRAP_REPS};
pub use data::{dense_ids, Dataset};
pub use event_study::{
    critical_value, did, event_study, event_study_heterogeneous, EventStudyEntry, EventStudyResult, EventStudySpec,
    Inference,
};
pub use fe::{fe_ols, ols_columns, FitResult, RegressionSpec};
pub use iv::{binned_peer_effects, micro_ols, two_sls, IvSpec, PeerSpec, WEAK_INSTRUMENT_F};
pub use output::{CoefReport, ResultsReport};
pub use pretrend::{pretrend_test, PretrendHypothesis, PretrendTest};
