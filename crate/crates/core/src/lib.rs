//! Decentralized stochastic approximation (DSA) with Markovian samples.
//!
//! The crate runs the consensus-plus-update recursion
//! `θ⁽ᵗ⁺¹⁾ = (A⁽ᵗ⁾ ⊗ I) θ⁽ᵗ⁾ − γ_{t+1} H(θ⁽ᵗ⁾; X^{t+1})` over a network of agents
//! whose samples come from finite Markov chains, and evaluates the finite-time
//! guarantees for it (consensus-error convolution bound, Markov-noise constants,
//! mean-field convergence certificates) against simulated trajectories.
//!
//! Modules, bottom-up:
//!
//! * [`topology`]: graphs, Metropolis mixing matrices, projection basis,
//!   time-varying schedules with joint-connectivity certificates.
//! * [`markov`]: finite kernels, stationary laws, TV mixing profiles, exact
//!   Poisson-equation solutions and seeded sample streams.
//! * [`problems`]: problem oracles (decentralized SGD on ergodic data,
//!   decentralized TD(0)) and estimators for the assumption constants.
//! * [`engine`]: step sizes, the recursion itself, decomposition into the
//!   consensual part and consensus error, random terminating time, ensembles.
//! * [`analysis`]: bound certificates, the convolution lemmas, rate fits and
//!   trajectory verification.

pub mod analysis;
pub mod engine;
pub mod linalg;
pub mod markov;
pub mod problems;
pub mod rng;
pub mod topology;

pub use analysis::{BoundCertificate, RateFit, VerificationReport};
pub use engine::{NetworkState, StepSchedule, TrajectoryRecord};
pub use markov::{MarkovModel, PoissonSolution, SampleStream};
pub use problems::{ConstantsBundle, LinearProblem, MdpSpec, ProblemOracle};
pub use topology::{Graph, MixingMatrix, MixingSchedule, ProjectionBasis};
