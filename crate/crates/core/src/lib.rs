//! A synthetic laboratory for media-driven coordination during an epidemic.
//!
//! The crate wires together five pieces:
//!
//! * [`terrain`]: synthetic elevation rasters, ITM-lite radio propagation and
//!   per-sub-prefecture coverage shares by radio class;
//! * [`game`]: the public/private-signal coordination game, in closed form and
//!   by best-response iteration;
//! * [`epidemic`]: synthetic regions, the log-linear epidemic panel and a
//!   micro survey;
//! * [`econ`]: two-way fixed-effects OLS, event studies, DiD, cluster
//!   bootstrap, pre-trend tests, 2SLS and binned peer effects;
//! * [`metrics`]: fractionalization and the prevented-cases counterfactual.
//!
//! [`scenario`], [`pipeline`] and [`montecarlo`] orchestrate them from a
//! single configuration file.

pub mod error;
pub mod econ;
pub mod game;
pub mod epidemic;
pub mod metrics;
pub mod montecarlo;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod terrain;

pub use error::{Error, Result};
