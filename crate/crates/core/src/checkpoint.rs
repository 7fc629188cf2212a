//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "MTSNNCKP"  u32 version
//! u32 header length, header as UTF-8 `key=value` lines
//! for each block (feature, label, task):
//!     u32 layer count
//!     per layer: u32 rows (out), u32 cols (in), u8 has_recurrent,
//!                f64 tau_mem, tau_syn, dt, threshold, i_ext, u8 reset mode,
//!                rows*cols f64 W (row-major), then rows*rows f64 V if present
//! 32-byte SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Block, LayerSpec, Network, Weights};
use crate::lif::{NeuronConfig, ResetMode};

pub const MAGIC: &[u8; 8] = b"MTSNNCKP";
pub const VERSION: u32 = 1;

/// Free-form metadata stored in the header next to the required keys.
pub type Metadata = BTreeMap<String, String>;

const RESERVED: [&str; 5] = ["num_labels_task1", "num_labels_task2", "seed", "init_gain", "precision"];

pub fn to_bytes(net: &Network, meta: &Metadata) -> Result<Vec<u8>> {
    let mut header = String::new();
    header.push_str(&format!("num_labels_task1={}\n", net.num_labels_task1));
    header.push_str(&format!("num_labels_task2={}\n", net.num_labels_task2));
    header.push_str(&format!("seed={}\n", net.seed));
    header.push_str(&format!("init_gain={}\n", net.init_gain));
    header.push_str("precision=f64le\n");
    for (k, v) in meta {
        if RESERVED.contains(&k.as_str()) || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("invalid metadata key {k:?}")));
        }
        header.push_str(&format!("{k}={v}\n"));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for block in Block::ALL {
        let layers = net.block(block);
        out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for layer in layers {
            out.extend_from_slice(&(layer.out_size as u32).to_le_bytes());
            out.extend_from_slice(&(layer.in_size as u32).to_le_bytes());
            out.push(u8::from(layer.recurrent.is_some()));
            let n = &layer.neuron;
            for v in [n.tau_mem, n.tau_syn, n.dt, n.threshold, n.i_ext] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(match n.reset_mode {
                ResetMode::SubtractSpike => 0,
                ResetMode::SubtractThreshold => 1,
            });
            for w in std::iter::once(&layer.weights).chain(layer.recurrent.as_ref()) {
                for v in w.to_row_major() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Weights> {
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint("matrix too large".into()))?;
        if n.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let vals: Result<Vec<f64>> = (0..n).map(|_| self.f64()).collect();
        Ok(Weights::from_row_major(rows, cols, &vals?))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Network, Metadata)> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::CheckpointVersion { found: version, supported: VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let header_len = r.u32()? as usize;
    let header =
        std::str::from_utf8(r.take(header_len)?).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let mut meta = Metadata::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Checkpoint(format!("bad header line {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let mut required = |key: &str| meta.remove(key).ok_or_else(|| Error::Checkpoint(format!("header lacks {key}")));
    let parse_err = |key: &str| Error::Checkpoint(format!("bad value for {key}"));
    let n1: usize = required("num_labels_task1")?.parse().map_err(|_| parse_err("num_labels_task1"))?;
    let n2: usize = required("num_labels_task2")?.parse().map_err(|_| parse_err("num_labels_task2"))?;
    let seed: u64 = required("seed")?.parse().map_err(|_| parse_err("seed"))?;
    let init_gain: f64 = required("init_gain")?.parse().map_err(|_| parse_err("init_gain"))?;
    let precision = required("precision")?;
    if precision != "f64le" {
        return Err(Error::Checkpoint(format!("unsupported precision {precision}")));
    }

    let mut blocks: Vec<Vec<LayerSpec>> = Vec::new();
    for _ in Block::ALL {
        let count = r.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let has_rec = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(Error::Checkpoint(format!("bad recurrence flag {other}"))),
            };
            let (tau_mem, tau_syn, dt, threshold, i_ext) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let reset_mode = match r.u8()? {
                0 => ResetMode::SubtractSpike,
                1 => ResetMode::SubtractThreshold,
                other => return Err(Error::Checkpoint(format!("bad reset mode {other}"))),
            };
            let neuron = NeuronConfig { tau_mem, tau_syn, dt, threshold, i_ext, reset_mode };
            neuron.validate()?;
            let w = r.matrix(rows, cols)?;
            let v = if has_rec { Some(r.matrix(rows, rows)?) } else { None };
            layers.push(LayerSpec::new(w, v, neuron));
        }
        blocks.push(layers);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let task = blocks.pop().unwrap();
    let label = blocks.pop().unwrap();
    let feature = blocks.pop().unwrap();
    let mut net = Network::new(feature, label, task, n1, n2)?;
    net.seed = seed;
    net.init_gain = init_gain;
    Ok((net, meta))
}

pub fn save_checkpoint(path: &Path, net: &Network, meta: &Metadata) -> Result<()> {
    let bytes = to_bytes(net, meta)?;
    std::fs::write(path, bytes).map_err(|source| Error::UnreadableFile { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, Metadata)> {
    let bytes = std::fs::read(path).map_err(|source| Error::UnreadableFile { path: path.to_path_buf(), source })?;
    from_bytes(&bytes)
}
