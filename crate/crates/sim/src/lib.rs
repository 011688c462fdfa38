//! Live simulation on top of the trained networks: sessions primed from a
//! recorded episode, stepped under driver actions, decoded to frames and
//! checked against the Gaussian norm band. Served over a websocket.

pub mod band;
mod error;
pub mod rollout;
pub mod server;
pub mod session;

pub use band::{chi2_quantile, default_band, rho_band, NormBand};
pub use error::{Result, SimError};
pub use rollout::{frame_file_name, ppm_bytes, read_actions, rollout_to_files, RolloutSummary};
pub use server::{serve, ServerConfig};
pub use session::{ActionCommand, ActionLimits, FrameMessage, Session, SessionSeed, SimModel, DEFAULT_WARMUP};
