//! Unconditional denoisers: an exact one for Gaussian-mixture data and a
//! small trainable noise predictor.

pub mod gmm;
pub mod mlp;

pub use gmm::{gmm_denoise, gmm_posterior_x0_mean, GaussianMixturePrior, GmmDenoiser};
pub use mlp::{mlp_denoise, mlp_predict_eps, mlp_train, MlpDenoiser, TimeEmbedding, TrainHyper, TrainReport};
