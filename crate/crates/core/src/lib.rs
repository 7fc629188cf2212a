//! Multi-task spiking neural networks with task selection by firing
//! threshold or external current.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod graph;
pub mod lif;
pub mod optim;
pub mod spikes;
pub mod train;

pub use error::{Error, Result};
pub use grad::{backward, SurrogateKind, SurrogateSpec};
pub use graph::{build_mtsnn, forward, Control, Network, Topology};
pub use lif::{NeuronConfig, ResetMode};
pub use spikes::SpikeTensor;
pub use train::{ControlMode, Task, TrainConfig, Trainer};
