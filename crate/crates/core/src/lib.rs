//! Quench dynamics of the two-band quantum anomalous Hall model under classical
//! white noise.
//!
//! * [`model`]: Bloch Hamiltonian, Chern number, band-inversion surface.
//! * [`sse`]: Trotterized stochastic trajectories and ensemble averages.
//! * [`liouville`]: exact noise-averaged evolution, eigenmodes, exceptional points.
//! * [`fitting`]: mode extraction from sampled trajectories, rescaling, time averages.
//! * [`topology`]: dBIS, dynamical winding, Liouvillian polarization, transitions.
//! * [`runner`]: JSON-configured pipelines and output files.

pub mod contour;
pub mod fitting;
pub mod liouville;
pub mod metrics;
pub mod model;
pub mod runner;
pub mod sse;
pub mod topology;

pub use fitting::{FitConfig, FitError, FitResult, RescaledTrajectory};
pub use liouville::{EigenSystem, EpCluster, LiouvilleError, Liouvillian, ModeDecomposition, Transient};
pub use model::{BlochVector, ModelError, Momentum, MomentumGrid, NoiseStrengths, QahParams};
pub use runner::{RunConfig, RunError, RunSummary};
pub use sse::{EvolutionSchedule, NoiseDraw, SpinState, SpinTrajectory, SseError};
pub use topology::{DbisCurve, TextureGrid, TopologyError, TransitionPhase};
