//! The two learned stages of the simulator: a VAE-GAN that maps road frames
//! to Gaussian latent codes and back, and a recurrent transition model that
//! predicts the next code from the current one and the driver's controls.

pub mod ae_train;
pub mod arch;
mod error;
pub mod frames;
pub mod latent;
pub mod metrics;
pub mod rnn_train;
pub mod transition;
pub mod vaegan;

pub use ae_train::{
    encode_frames, eval_reconstruction, psnr, train_ae, AeTrainConfig, AeTrainReport, AeTrainer, ReconstructionReport,
};
pub use arch::AeArch;
pub use error::{CoreError, Result};
pub use frames::FrameSet;
pub use latent::{latent_stats, LatentStats};
pub use rnn_train::{checkpoint_controls, heldout_loss, train_rnn, CodeDataset, RnnTrainConfig, RnnTrainReport, RnnTrainer};
pub use transition::{rnn_loss, sequence_loss, Rnn, RnnConfig, SequenceBatch, Unrolled, CONTROL_DIM};
pub use vaegan::{
    discriminator_fakes, discriminator_loss, dis_objective, encoder_generator_loss, feature_loss, gan_losses, gen_objective, kl_loss, reparametrize, train_step, AeOptimizers, LatentSample,
    LossBreakdown, LossWeights, Objective, StepNoise, StepSettings, VaeGan,
};
