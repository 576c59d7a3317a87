//! Numerical laboratory for nonlinear string vibration: exact modal
//! simulation with a sparse cubic coupling tensor, dataset generation,
//! training of a neural drop-in for the coupling term by differentiating
//! through the integrator, and evaluation/rendering of the results.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod excitation;
pub mod integrator;
pub mod modal;
pub mod neural;
pub mod nonlinearity;
pub mod oscillator;
pub mod render;
pub mod training;

pub use dataset::{generate_dataset, open_dataset, DatasetManifest, DatasetSource, TrajectoryBundle};
pub use error::{Error, Result};
pub use evaluation::{evaluate_model, parse_horizons, EvalReport, Horizon, RelMse};
pub use excitation::{ParameterRanges, PluckParams};
pub use integrator::{check_stability, rollout, Nonlinearity, SimulationGrid, StateTrajectory, ZeroNonlinearity};
pub use modal::{build_modal_system, scale_physical, ModalSystem, PhysicalStringParams, ScaledStringParams, State};
pub use neural::{AdamState, GradBuffer, MlpNetwork};
pub use nonlinearity::{CouplingTensor, LumpedNonlinearity};
pub use oscillator::{generate_oscillator_dataset, OscillatorConfig};
pub use training::{train, TrainOutcome, TrainingConfig};
