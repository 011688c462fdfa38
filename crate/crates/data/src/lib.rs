//! Training data for the simulator: a procedural road world, frame
//! preprocessing, sensor synchronisation, rate subsampling and windowing.

pub mod codes;
pub mod episode;
mod error;
pub mod manifest;
pub mod preprocess;
pub mod resample;
pub mod synth;
pub mod window;

pub use codes::CodeSequence;
pub use episode::{subsample_rate, Episode, Geometry, GroundTruth, EPISODE_MAGIC};
pub use error::{DataError, Result};
pub use manifest::{EpisodeEntry, Manifest, MANIFEST_FILE};
pub use preprocess::{planar_to_rgb, preprocess_frame, to_u8, RawFrame};
pub use resample::{integrate_linear, resample_linear};
pub use synth::{row_distances, synth_generate, LeadingCar, Policy, SyntheticRoadConfig};
pub use window::{window_batches, ControlStats, WindowBatch, WindowSampler, WindowStream, DEFAULT_WINDOW};
