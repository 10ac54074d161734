//! Point encoder, occupancy/intensity decoder and the pretext objective.

pub mod decoder;
pub mod encoder;
pub mod model;
pub mod objective;
pub mod plan;

pub use encoder::{EncoderInput, LATENT_DIM};
pub use model::{encode, encode_bev, encoder_input, LatentField, Model, ModelConfig, PreparedScan};
pub use objective::{
    objective_weights, LossParts, LossWeighting, ObjectiveConfig, RowTargets, RowWeights,
};
pub use plan::{DecodePlan, Head, SupportMode, Supports};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("encoder needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no support has any query in range")]
    NoSupervision,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] visocc_nn::NnError),
    #[error(transparent)]
    Core(#[from] visocc_core::CoreError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
