//! Feed-forward layer stacks, the Adam optimizer and the binary containers
//! used for checkpoints and recorded episodes.

pub mod adam;
pub mod checkpoint;
pub mod container;
mod error;
pub mod layer;
pub mod network;

pub use adam::{Adam, AdamConfig, StepReport};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use container::{ArrayData, Container, ContainerError, NamedArray};
pub use error::{NnError, Result};
pub use layer::{Activation, Layer, LayerKind, LayerSpec, Param};
pub use network::{ForwardOutput, Mode, Network, Pass};
