//! Dataset index over an N-MNIST tree laid out as `<root>/<split>/<digit>/*.bin`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::aer::parse_nmnist_file;
use super::binning::{bin_events, Binning};
use crate::error::{Error, Result};
use crate::spikes::SpikeTensor;

pub const NUM_DIGITS: u8 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// Task labels for a digit: (digit identity, parity with 0 = even, 1 = odd).
pub fn derive_labels(digit: u8) -> Result<(u8, u8)> {
    if digit >= NUM_DIGITS {
        return Err(Error::DigitOutOfRange(digit));
    }
    Ok((digit, digit % 2))
}

/// A sample on disk, not yet decoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub path: PathBuf,
    pub digit: u8,
}

impl SampleRef {
    pub fn parity(&self) -> u8 {
        self.digit % 2
    }

    pub fn load(&self, binning: Binning) -> Result<LabeledSample> {
        let bytes = fs::read(&self.path).map_err(|source| Error::UnreadableFile { path: self.path.clone(), source })?;
        let events = parse_nmnist_file(&bytes).map_err(|e| match e {
            Error::TruncatedRecord(_) | Error::CoordinateOutOfRange { .. } => Error::UnreadableFile {
                path: self.path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
            },
            other => other,
        })?;
        let tensor = bin_events(&events, binning.t_steps, binning.bin_width_us);
        LabeledSample::new(tensor, self.digit)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub tensor: SpikeTensor,
    pub digit: u8,
    pub parity: u8,
}

impl LabeledSample {
    pub fn new(tensor: SpikeTensor, digit: u8) -> Result<Self> {
        let (digit, parity) = derive_labels(digit)?;
        Ok(Self { tensor, digit, parity })
    }
}

/// Immutable, ordered list of samples for one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub split: Split,
    pub samples: Vec<SampleRef>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Decodes and bins every sample. Files are decoded in parallel; the
    /// output order matches the index.
    pub fn load_all(&self, binning: Binning) -> Result<Vec<LabeledSample>> {
        self.samples.par_iter().map(|s| s.load(binning)).collect()
    }
}

fn list_bin_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::UnreadableFile { path: dir.to_path_buf(), source })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::UnreadableFile { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "bin") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Indexes a split. With `limit`, returns a class-balanced subsample drawn
/// deterministically from `seed`: `limit / 10` per digit, the remainder going
/// to the lowest digits.
pub fn load_dataset(root: &Path, split: Split, limit: Option<usize>, seed: u64) -> Result<DatasetIndex> {
    let split_dir = root.join(split.dir_name());
    if !split_dir.is_dir() {
        return Err(Error::MissingDirectory(split_dir));
    }
    let mut per_digit = Vec::with_capacity(NUM_DIGITS as usize);
    for digit in 0..NUM_DIGITS {
        let dir = split_dir.join(digit.to_string());
        if !dir.is_dir() {
            return Err(Error::MissingDirectory(dir));
        }
        per_digit.push(list_bin_files(&dir)?);
    }

    let mut samples = Vec::new();
    match limit {
        None => {
            for (digit, files) in per_digit.into_iter().enumerate() {
                samples.extend(files.into_iter().map(|path| SampleRef { path, digit: digit as u8 }));
            }
        }
        Some(limit) => {
            let base = limit / NUM_DIGITS as usize;
            let extra = limit % NUM_DIGITS as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (digit, mut files) in per_digit.into_iter().enumerate() {
                files.shuffle(&mut rng);
                let take = base + usize::from(digit < extra);
                files.truncate(take);
                files.sort();
                samples.extend(files.into_iter().map(|path| SampleRef { path, digit: digit as u8 }));
            }
        }
    }
    Ok(DatasetIndex { split, samples })
}
