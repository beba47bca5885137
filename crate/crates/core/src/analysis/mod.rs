//! Certificates: the constants of the rate theorem evaluated for a concrete
//! problem and schedule, the intermediate lemma bounds, rate fits, and the
//! checks that compare them with simulated trajectories.

mod certificate;
mod lemmas;
mod rates;
mod verify;

pub use certificate::{
    compute_certificate, mk_constants, step_cap, BoundCertificate, MkConstants, MkInputs, StepCap,
};
pub use lemmas::{lemma1_bound, lemma5_check, ConsensusBound, ConvolutionCheck};
pub use rates::{rate_fit, RateFit};
pub use verify::{
    verify_ensemble, verify_trajectory, Check, CheckStatus, VerificationReport, IDENTITY_TOL,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("constants missing: {}", .0.join(", "))]
    IncompleteConstants(Vec<String>),
    #[error("rate fit: {0}")]
    Fit(String),
    #[error("report: {0}")]
    Report(String),
}
