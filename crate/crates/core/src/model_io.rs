//! Model file round-trip in the `.lrw` format.
//!
//! Layout, all little-endian, all floats f32 row-major:
//!
//! ```text
//! magic    b"LRW3"        4 bytes
//! version  u16
//! layers   u16
//! per layer:
//!   kind   u8             0 spatial · 1 winograd · 2 winograd + low-rank
//!                         3 compact column-sparse · 4 linear · 5 relu
//!                         6 max-pool
//!   c_out  u32
//!   c_in   u32
//!   m      u8             (max-pool keeps its window here)
//!   r      u8
//!   pad    u8
//!   payload                kind-specific, see below
//! ```
//!
//! Payloads: kind 0 stores the spatial kernel (`C_o·C_i·r³` floats); kind 1
//! the Winograd weights `G_W` (`C_o·C_i x t³`); kind 2 the rank `s` (u16)
//! followed by `G_W`, `G_r`, `G_c` and the column mask as a t³-bit LSB-first
//! bitset; kind 3 the live count `l` (u16), the kept column indices
//! (`l x u16`, strictly ascending) and the gathered weights `Ḡ_W`
//! (`C_o·C_i x l`); kind 4 the classifier matrix (`C_o x C_i`) then its bias
//! (`C_o`); kinds 5 and 6 carry no payload. A Winograd layer holding a
//! non-trivial mask but no factors is stored as kind 2 with s = 0, so every
//! in-memory model round-trips losslessly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layer::{CompactLayer, WinogradLayer};
use crate::tensor::{Matrix, Tensor};
use crate::trainer::{Layer, Model};

pub const LRW_MAGIC: &[u8; 4] = b"LRW3";
pub const LRW_VERSION: u16 = 1;

const KIND_SPATIAL: u8 = 0;
const KIND_WINOGRAD: u8 = 1;
const KIND_LOWRANK: u8 = 2;
const KIND_COMPACT: u8 = 3;
const KIND_LINEAR: u8 = 4;
const KIND_RELU: u8 = 5;
const KIND_MAXPOOL: u8 = 6;

/// Fixed per-record header: kind, c_out, c_in, m, r, pad.
const RECORD_HEADER: usize = 1 + 4 + 4 + 1 + 1 + 1;

/// A dense Winograd layer needs the kind-2 record exactly when it carries
/// factors or a mask that actually drops columns.
fn winograd_kind(layer: &WinogradLayer<f32>) -> u8 {
    if layer.rank() > 0 || layer.mask().iter().any(|&b| !b) {
        KIND_LOWRANK
    } else {
        KIND_WINOGRAD
    }
}

/// Exact on-disk size of one layer record, header included.
pub fn record_byte_len(layer: &Layer<f32>) -> Result<usize> {
    let payload = match layer {
        Layer::SpatialConv { kernel, .. } => 4 * kernel.data().len(),
        Layer::Winograd(w) => {
            let g_w = 4 * w.g_w.rows() * w.g_w.cols();
            if winograd_kind(w) == KIND_LOWRANK {
                let factors = 4 * (w.g_r.rows() * w.g_r.cols() + w.g_c.rows() * w.g_c.cols());
                2 + g_w + factors + w.spec.t3().div_ceil(8)
            } else {
                g_w
            }
        }
        Layer::WinogradCompact(c) => 2 + 2 * c.l() + 4 * c.g_bar.rows() * c.g_bar.cols(),
        Layer::Linear { w, b } => 4 * (w.rows() * w.cols() + b.len()),
        Layer::Relu | Layer::MaxPool { .. } => 0,
    };
    Ok(RECORD_HEADER + payload)
}

/// Exact on-disk size of a whole model file.
pub fn lrw_byte_len(model: &Model<f32>) -> Result<usize> {
    let mut n = 4 + 2 + 2;
    for layer in &model.layers {
        n += record_byte_len(layer)?;
    }
    Ok(n)
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for &v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_record_header(out: &mut Vec<u8>, kind: u8, c_out: usize, c_in: usize, m: u8, r: u8, pad: u8) {
    out.push(kind);
    push_u32(out, c_out as u32);
    push_u32(out, c_in as u32);
    out.push(m);
    out.push(r);
    out.push(pad);
}

fn encode_layer(out: &mut Vec<u8>, layer: &Layer<f32>) -> Result<()> {
    match layer {
        Layer::SpatialConv { kernel, pad } => {
            let d = kernel.dims();
            if kernel.ndim() != 5 || d[2] != d[3] || d[2] != d[4] {
                return Err(Error::Shape(format!(
                    "spatial kernel must be (C_o, C_i, r, r, r), got {d:?}"
                )));
            }
            push_record_header(out, KIND_SPATIAL, d[0], d[1], 0, d[2] as u8, *pad as u8);
            push_f32s(out, kernel.data());
        }
        Layer::Winograd(w) => {
            let (m, r) = (w.spec.m as u8, w.spec.r as u8);
            let kind = winograd_kind(w);
            push_record_header(out, kind, w.c_out, w.c_in, m, r, w.pad as u8);
            if kind == KIND_LOWRANK {
                push_u16(out, w.rank() as u16);
                push_f32s(out, w.g_w.data());
                push_f32s(out, w.g_r.data());
                push_f32s(out, w.g_c.data());
                let mut bits = vec![0u8; w.spec.t3().div_ceil(8)];
                for (i, &keep) in w.mask().iter().enumerate() {
                    if keep {
                        bits[i / 8] |= 1 << (i % 8);
                    }
                }
                out.extend_from_slice(&bits);
            } else {
                push_f32s(out, w.g_w.data());
            }
        }
        Layer::WinogradCompact(c) => {
            let (m, r) = (c.spec.m as u8, c.spec.r as u8);
            push_record_header(out, KIND_COMPACT, c.c_out, c.c_in, m, r, c.pad as u8);
            push_u16(out, c.l() as u16);
            for &loc in &c.locations {
                push_u16(out, loc as u16);
            }
            push_f32s(out, c.g_bar.data());
        }
        Layer::Linear { w, b } => {
            if b.len() != w.rows() {
                return Err(Error::Shape(format!(
                    "bias length {} != output rows {}",
                    b.len(),
                    w.rows()
                )));
            }
            push_record_header(out, KIND_LINEAR, w.rows(), w.cols(), 0, 0, 0);
            push_f32s(out, w.data());
            push_f32s(out, b);
        }
        Layer::Relu => push_record_header(out, KIND_RELU, 0, 0, 0, 0, 0),
        Layer::MaxPool { window } => {
            if *window == 0 || *window > u8::MAX as usize {
                return Err(Error::Shape(format!("pool window {window} out of range")));
            }
            push_record_header(out, KIND_MAXPOOL, 0, 0, *window as u8, 0, 0);
        }
    }
    Ok(())
}

pub fn encode_model(model: &Model<f32>) -> Result<Vec<u8>> {
    if model.layers.len() > u16::MAX as usize {
        return Err(Error::Format(format!(
            "{} layers exceed the u16 layer count",
            model.layers.len()
        )));
    }
    let mut out = Vec::with_capacity(lrw_byte_len(model)?);
    out.extend_from_slice(LRW_MAGIC);
    push_u16(&mut out, LRW_VERSION);
    push_u16(&mut out, model.layers.len() as u16);
    for layer in &model.layers {
        encode_layer(&mut out, layer)?;
    }
    Ok(out)
}

// ── decoding ────────────────────────────────────────────────────────────────

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.off < n {
            return Err(Error::Format(format!("truncated .lrw: missing {what}")));
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Winograd record headers must name the one tile size this crate builds
/// transforms for.
fn check_tile(m: u8, r: u8) -> Result<()> {
    if m != 2 || r != 3 {
        return Err(Error::Format(format!(
            "unsupported Winograd tile F({m}, {r}); only F(2, 3) is defined"
        )));
    }
    Ok(())
}

fn decode_layer(rd: &mut Reader) -> Result<Layer<f32>> {
    let kind = rd.u8("record kind")?;
    let c_out = rd.u32("c_out")? as usize;
    let c_in = rd.u32("c_in")? as usize;
    let m = rd.u8("m")?;
    let r = rd.u8("r")?;
    let pad = rd.u8("pad")? as usize;
    match kind {
        KIND_SPATIAL => {
            let rr = r as usize;
            if c_out == 0 || c_in == 0 || rr == 0 {
                return Err(Error::Format("spatial record with zero extent".into()));
            }
            let data = rd.f32s(c_out * c_in * rr * rr * rr, "spatial kernel")?;
            let kernel = Tensor::new(vec![c_out, c_in, rr, rr, rr], data)?;
            Ok(Layer::SpatialConv { kernel, pad })
        }
        KIND_WINOGRAD | KIND_LOWRANK => {
            check_tile(m, r)?;
            let t3 = (m as usize + r as usize - 1).pow(3);
            if c_out == 0 || c_in == 0 {
                return Err(Error::Format("winograd record with zero channels".into()));
            }
            let (s, g_w) = if kind == KIND_LOWRANK {
                let s = rd.u16("rank")? as usize;
                (s, rd.f32s(c_out * c_in * t3, "winograd weights")?)
            } else {
                (0, rd.f32s(c_out * c_in * t3, "winograd weights")?)
            };
            let g_w = Matrix::new(c_out * c_in, t3, g_w)?;
            let (g_r, g_c, mask) = if kind == KIND_LOWRANK {
                let g_r = Matrix::new(c_out * c_in, s, rd.f32s(c_out * c_in * s, "column factor")?)?;
                let g_c = Matrix::new(s, t3, rd.f32s(s * t3, "row factor")?)?;
                let bits = rd.take(t3.div_ceil(8), "column mask")?;
                let mask = (0..t3).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
                (g_r, g_c, mask)
            } else {
                (
                    Matrix::zeros(c_out * c_in, 0),
                    Matrix::zeros(0, t3),
                    vec![true; t3],
                )
            };
            Ok(Layer::Winograd(WinogradLayer::from_parts(
                c_out, c_in, pad, g_w, g_r, g_c, mask,
            )?))
        }
        KIND_COMPACT => {
            check_tile(m, r)?;
            if c_out == 0 || c_in == 0 {
                return Err(Error::Format("compact record with zero channels".into()));
            }
            let l = rd.u16("live column count")? as usize;
            let mut locations = Vec::with_capacity(l);
            for _ in 0..l {
                locations.push(rd.u16("kept column index")? as usize);
            }
            let g_bar = Matrix::new(c_out * c_in, l, rd.f32s(c_out * c_in * l, "gathered weights")?)?;
            Ok(Layer::WinogradCompact(CompactLayer::from_parts(
                c_out, c_in, pad, g_bar, locations,
            )?))
        }
        KIND_LINEAR => {
            if c_out == 0 || c_in == 0 {
                return Err(Error::Format("linear record with zero extent".into()));
            }
            let w = Matrix::new(c_out, c_in, rd.f32s(c_out * c_in, "classifier matrix")?)?;
            let b = rd.f32s(c_out, "classifier bias")?;
            Ok(Layer::Linear { w, b })
        }
        KIND_RELU => Ok(Layer::Relu),
        KIND_MAXPOOL => {
            if m == 0 {
                return Err(Error::Format("max-pool record with zero window".into()));
            }
            Ok(Layer::MaxPool { window: m as usize })
        }
        other => Err(Error::Format(format!("unknown layer kind {other}"))),
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>> {
    let mut rd = Reader { bytes, off: 0 };
    if rd.take(4, "magic")? != LRW_MAGIC {
        return Err(Error::Format("bad .lrw magic".into()));
    }
    let version = rd.u16("version")?;
    if version != LRW_VERSION {
        return Err(Error::Format(format!(
            "unsupported .lrw version {version} (expected {LRW_VERSION})"
        )));
    }
    let count = rd.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        layers.push(decode_layer(&mut rd)?);
    }
    if rd.off != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last layer record",
            bytes.len() - rd.off
        )));
    }
    Ok(Model { layers })
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}
