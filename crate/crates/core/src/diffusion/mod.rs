//! Score-based diffusion over fine wavelet coefficients.

pub mod model;
pub mod sampler;
pub mod schedule;

pub use model::{AnalyticGaussianScore, LocalScoreArch, LocalScoreNet, ScoreModel, TrainableScoreModel, ZeroScore};
pub use sampler::{
    dsm_loss, forward_noise, hybrid_sample, physics_correction, physics_correction_backtracking, reverse_step,
    score_from_eps, DsmItem, ReverseMode, SamplerConfig, SamplingContext,
};
pub use schedule::NoiseSchedule;
