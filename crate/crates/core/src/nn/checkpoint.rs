//! Binary checkpoint format, little-endian:
//!
//! ```text
//! "NKBF" | u32 version | u32 scalar width (4|8) | u32 dim | u32 b | u32 m
//! | u32 n_layers | per layer: u32 rows, u32 cols, rows*cols weights, rows bias
//! | u32 CRC32 of everything before it
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Serialize;

use super::mlp::{Dense, Mlp, MlpConfig};
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"NKBF";
pub const VERSION: u32 = 1;

/// A checkpoint loaded at whatever precision it was written in.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyMlp {
    F32(Mlp<f32>),
    F64(Mlp<f64>),
}

impl AnyMlp {
    pub fn config(&self) -> &MlpConfig {
        match self {
            AnyMlp::F32(m) => &m.config,
            AnyMlp::F64(m) => &m.config,
        }
    }

    pub fn to_f64(&self) -> Mlp<f64> {
        match self {
            AnyMlp::F32(m) => m.cast(),
            AnyMlp::F64(m) => m.clone(),
        }
    }
}

impl From<Mlp<f32>> for AnyMlp {
    fn from(m: Mlp<f32>) -> Self {
        AnyMlp::F32(m)
    }
}

impl From<Mlp<f64>> for AnyMlp {
    fn from(m: Mlp<f64>) -> Self {
        AnyMlp::F64(m)
    }
}

pub fn encode<T: Real>(model: &Mlp<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let c = &model.config;
    for v in [
        VERSION,
        T::BYTES,
        c.dim as u32,
        c.b as u32,
        c.m as u32,
        model.layers.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in &model.layers {
        out.extend_from_slice(&(layer.weight.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.weight.ncols() as u32).to_le_bytes());
        for &w in layer.weight.iter() {
            w.write_le(&mut out);
        }
        for &b in layer.bias.iter() {
            b.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint<T: Real>(model: &Mlp<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model))?;
    Ok(())
}

/// Write `<path>.meta.json` next to a checkpoint. Ignored on load.
pub fn save_sidecar(path: impl AsRef<Path>, meta: &impl Serialize) -> Result<()> {
    let mut name = path.as_ref().as_os_str().to_owned();
    name.push(".meta.json");
    fs::write(name, serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AnyMlp> {
    decode(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::MalformedCheckpoint("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<AnyMlp> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch);
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    match r.u32()? {
        4 => Ok(AnyMlp::F32(read_body(&mut r)?)),
        8 => Ok(AnyMlp::F64(read_body(&mut r)?)),
        w => Err(Error::MalformedCheckpoint(format!("scalar width {w}"))),
    }
}

fn read_body<T: Real>(r: &mut Reader) -> Result<Mlp<T>> {
    let dim = r.u32()? as usize;
    let b = r.u32()? as usize;
    let m = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let width = T::BYTES as usize;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let wbytes = r.take(rows * cols * width)?;
        let weight = Array2::from_shape_vec(
            (rows, cols),
            wbytes.chunks_exact(width).map(T::read_le).collect(),
        )
        .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let bbytes = r.take(rows * width)?;
        let bias = Array1::from_vec(bbytes.chunks_exact(width).map(T::read_le).collect());
        layers.push(Dense { weight, bias });
    }
    if r.pos != r.bytes.len() {
        return Err(Error::MalformedCheckpoint("trailing bytes".into()));
    }
    let hidden = if n_layers > 1 { layers[0].weight.nrows() } else { 1 };
    let config = MlpConfig::new(dim, b, m, n_layers, hidden);
    let model = Mlp { config, layers };
    let expected = model.config.layer_shapes();
    let got: Vec<_> = model.layers.iter().map(|l| l.weight.dim()).collect();
    if expected != got {
        return Err(Error::MalformedCheckpoint(format!(
            "layer shapes {got:?} do not chain for dim={dim} b={b} m={m}"
        )));
    }
    Ok(model)
}
