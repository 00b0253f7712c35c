//! Binary model checkpoints. The byte layout is documented in `docs/FORMATS.md`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::{Activation, LayerParams, LayerSpec, ModelState, NetworkSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SNCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const KIND_CONV: u8 = 0;
const KIND_DENSE: u8 = 1;
const KIND_POOL: u8 = 2;
const KIND_FLATTEN: u8 = 3;
const ACT_LEAKY: u8 = 0;
const ACT_LINEAR: u8 = 1;
const ACT_NONE: u8 = 0xff;

fn stream_err(e: std::io::Error) -> Error {
    Error::io("<checkpoint stream>", e)
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn encode_activation(a: Activation) -> u8 {
    match a {
        Activation::LeakyRelu => ACT_LEAKY,
        Activation::Linear => ACT_LINEAR,
    }
}

fn decode_activation(b: u8) -> Result<Activation> {
    match b {
        ACT_LEAKY => Ok(Activation::LeakyRelu),
        ACT_LINEAR => Ok(Activation::Linear),
        other => Err(malformed(format!("unknown activation code {other}"))),
    }
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &ModelState,
    metadata: &serde_json::Value,
) -> Result<()> {
    let spec = model.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&model.seed().to_le_bytes());
    buf.extend_from_slice(&spec.leaky_slope.to_le_bytes());
    buf.extend_from_slice(&(spec.frozen_prefix as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.layers.len() as u32).to_le_bytes());
    for layer in &spec.layers {
        let (kind, act, dims) = match *layer {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_width,
                activation,
            } => (
                KIND_CONV,
                encode_activation(activation),
                [in_channels, out_channels, kernel_width],
            ),
            LayerSpec::Dense {
                inputs,
                outputs,
                activation,
            } => (KIND_DENSE, encode_activation(activation), [inputs, outputs, 0]),
            LayerSpec::GlobalAvgPool => (KIND_POOL, ACT_NONE, [0; 3]),
            LayerSpec::Flatten => (KIND_FLATTEN, ACT_NONE, [0; 3]),
        };
        buf.push(kind);
        buf.push(act);
        buf.extend_from_slice(&0u16.to_le_bytes());
        for d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    let meta = serde_json::to_vec(metadata)?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    for p in model.params() {
        for v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(stream_err)?;
    w.flush().map_err(stream_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(malformed(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelState, serde_json::Value)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(stream_err)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = c.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    c.u16()?;
    let seed = c.u64()?;
    let leaky_slope = f32::from_le_bytes(c.take(4)?.try_into().unwrap());
    let frozen_prefix = c.u32()? as usize;
    let n_layers = c.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = c.u8()?;
        let act = c.u8()?;
        c.u16()?;
        let a = c.u32()? as usize;
        let b = c.u32()? as usize;
        let k = c.u32()? as usize;
        layers.push(match kind {
            KIND_CONV => LayerSpec::Conv1d {
                in_channels: a,
                out_channels: b,
                kernel_width: k,
                activation: decode_activation(act)?,
            },
            KIND_DENSE => LayerSpec::Dense {
                inputs: a,
                outputs: b,
                activation: decode_activation(act)?,
            },
            KIND_POOL => LayerSpec::GlobalAvgPool,
            KIND_FLATTEN => LayerSpec::Flatten,
            other => return Err(malformed(format!("unknown layer kind {other}"))),
        });
    }
    let meta_len = c.u32()? as usize;
    let metadata: serde_json::Value = serde_json::from_slice(c.take(meta_len)?)?;
    let spec = NetworkSpec {
        layers,
        frozen_prefix,
        leaky_slope,
    };
    let mut params = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let p = match *layer {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_width,
                ..
            } => LayerParams {
                weight: c.f32s(kernel_width * in_channels * out_channels)?,
                bias: c.f32s(out_channels)?,
            },
            LayerSpec::Dense {
                inputs, outputs, ..
            } => LayerParams {
                weight: c.f32s(inputs * outputs)?,
                bias: c.f32s(outputs)?,
            },
            _ => LayerParams::default(),
        };
        params.push(p);
    }
    if c.pos != bytes.len() {
        return Err(malformed(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok((ModelState::with_params(spec, params, seed)?, metadata))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &ModelState,
    metadata: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), model, metadata).map_err(|e| relabel(e, path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelState, serde_json::Value)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f)).map_err(|e| relabel(e, path))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}
