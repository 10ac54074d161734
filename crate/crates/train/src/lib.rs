//! Pretraining, held-out occupancy evaluation, downstream probes, latent
//! separability probes and the ablation harness.

pub mod ablation;
pub mod data;
pub mod eval;
pub mod pretrain;
pub mod probe;
pub mod report;

pub use ablation::{
    ablation_harness, AblationAxis, AblationSetup, AblationTable, AxisValue, Harness,
};
pub use data::{DataConfig, Frame, Scan, SceneRange};
pub use eval::{evaluate_occupancy, threshold_sweep, HeldOutFrame, OccupancyMetrics};
pub use pretrain::{pretrain, pretrain_with, PretrainConfig, PretrainOutcome, Snapshot};
pub use probe::{
    probe, separability_probes, ProbeConfig, ProbeMetrics, ProbeMode, SeparabilityMetrics,
};
pub use report::{EpochMetrics, MetricsReport};

use visocc_core::CoreError;
use visocc_model::ModelError;
use visocc_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scene ranges {0} and {1} overlap")]
    OverlappingScenes(String, String),
    #[error("non-finite training state at epoch {epoch}, step {step}")]
    NonFinite {
        epoch: usize,
        step: usize,
        snapshot: Box<Snapshot>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
