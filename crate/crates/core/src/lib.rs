//! Decide whether step-level failure-prediction interventions help an agent,
//! and measure critics, policies and mechanisms on real or simulated runs.

pub mod calibration;
pub mod episode;
pub mod error;
pub mod fixtures;
pub mod framework;
pub mod io;
pub mod oracle;
pub mod pilot;
pub mod seeding;
pub mod simulator;
pub mod stats;

pub use error::{Error, ErrorCategory, Result};
pub use framework::{compute_profile, decide, delta_success, threshold, Decision, DrProfile, OutcomeTable, Verdict};
