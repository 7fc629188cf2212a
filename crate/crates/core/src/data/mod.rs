//! N-MNIST event data: AER decoding, binning, labels, dataset indexing,
//! acquisition and synthetic fixtures.

pub mod aer;
pub mod binning;
pub mod dataset;
pub mod fetch;
pub mod synth;

pub use aer::{encode_events, parse_nmnist_file, Event};
pub use binning::{bin_events, Binning, NMNIST_FEATURES};
pub use dataset::{derive_labels, load_dataset, DatasetIndex, LabeledSample, SampleRef, Split};
