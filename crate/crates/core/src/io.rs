//! Single-file model format. All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes   "ECGPRUNE"
//! version    u32       FORMAT_VERSION
//! seed       u64
//! n_layers   u32
//! layer table, n_layers entries of 19 bytes:
//!   kind u8 (0 conv, 1 relu, 2 pool, 3 flatten, 4 dense)
//!   prunable u8, fused_relu u8
//!   a b c d  u32 x 4  conv: in_ch out_ch kernel stride
//!                     pool: kernel stride 0 0
//!                     dense: inputs units 0 0
//!                     other: 0 0 0 0
//! parameter blocks, one per conv/dense layer in table order:
//!   trainable u8, has_mask u8
//!   n_weight u32, n_weight x f64
//!   n_bias u32,   n_bias x f64
//!   if has_mask: ceil(n_weight / 8) bytes, bit i of the mask at
//!                byte i / 8, bit i % 8 (LSB first), 1 = kept
//! n_history  u32, then per entry: len u32 + UTF-8 bytes
//! checksum   u64       FNV-1a 64 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::model::{LayerKind, LayerParams, LayerSpec, Model};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ECGPRUNE";
pub const FORMAT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&(model.specs().len() as u32).to_le_bytes());
    for spec in model.specs() {
        let (kind, relu, dims) = match spec.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, stride, relu } => (0u8, relu, [in_ch, out_ch, kernel, stride]),
            LayerKind::Relu => (1, false, [0; 4]),
            LayerKind::Pool { kernel, stride } => (2, false, [kernel, stride, 0, 0]),
            LayerKind::Flatten => (3, false, [0; 4]),
            LayerKind::Dense { inputs, units, relu } => (4, relu, [inputs, units, 0, 0]),
        };
        out.extend_from_slice(&[kind, spec.prunable as u8, relu as u8]);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for p in model.params().iter().flatten() {
        out.extend_from_slice(&[p.trainable as u8, p.mask.is_some() as u8]);
        for t in [&p.weight, &p.bias] {
            out.extend_from_slice(&(t.len() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(mask) = &p.mask {
            let mut bytes = vec![0u8; mask.len().div_ceil(8)];
            for (i, &keep) in mask.bits().iter().enumerate() {
                if keep {
                    bytes[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&bytes);
        }
    }
    out.extend_from_slice(&(model.history().len() as u32).to_le_bytes());
    for h in model.history() {
        out.extend_from_slice(&(h.len() as u32).to_le_bytes());
        out.extend_from_slice(h.as_bytes());
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptModel(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::CorruptModel(format!("invalid flag byte {b} at {}", self.pos - 1))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::CorruptModel("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptModel("bad magic header".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < 8 + 12 + 8 {
        return Err(Error::CorruptModel("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(trailer.try_into().expect("8 bytes")) {
        return Err(Error::CorruptModel("checksum mismatch".into()));
    }
    r.buf = body;

    let seed = r.u64()?;
    let n_layers = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let kind = r.u8()?;
        let prunable = r.flag()?;
        let relu = r.flag()?;
        let d: Vec<usize> = (0..4).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let kind = match kind {
            0 => LayerKind::Conv { in_ch: d[0], out_ch: d[1], kernel: d[2], stride: d[3], relu },
            1 => LayerKind::Relu,
            2 => LayerKind::Pool { kernel: d[0], stride: d[1] },
            3 => LayerKind::Flatten,
            4 => LayerKind::Dense { inputs: d[0], units: d[1], relu },
            k => return Err(Error::CorruptModel(format!("unknown layer kind {k}"))),
        };
        specs.push(LayerSpec { kind, prunable });
    }
    let mut params = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let (wshape, units) = match spec.kind {
            LayerKind::Conv { in_ch, out_ch, kernel, .. } => (vec![out_ch, in_ch, kernel], out_ch),
            LayerKind::Dense { inputs, units, .. } => (vec![units, inputs], units),
            _ => {
                params.push(None);
                continue;
            }
        };
        let trainable = r.flag()?;
        let has_mask = r.flag()?;
        let nw = r.u32()? as usize;
        if nw != wshape.iter().product::<usize>() {
            return Err(Error::ModelShape(format!("layer {i}: {nw} weights stored for shape {wshape:?}")));
        }
        let weight =
            Tensor::new(wshape.clone(), r.f64s(nw)?).map_err(|e| Error::ModelShape(format!("layer {i}: {e}")))?;
        let nb = r.u32()? as usize;
        if nb != units {
            return Err(Error::ModelShape(format!("layer {i}: {nb} biases stored for {units} units")));
        }
        let bias = Tensor::from_vec(r.f64s(nb)?);
        let mask = if has_mask {
            let bytes = r.take(nw.div_ceil(8))?;
            let bits = (0..nw).map(|j| bytes[j / 8] >> (j % 8) & 1 == 1).collect();
            let mask = PruneMask::from_bits(i, &wshape, bits).expect("length matches");
            if mask.bits().iter().zip(weight.data()).any(|(&keep, &w)| !keep && w != 0.0) {
                return Err(Error::CorruptModel(format!("layer {i}: masked weight is not zero")));
            }
            Some(mask)
        } else {
            None
        };
        params.push(Some(LayerParams { weight, bias, mask, trainable }));
    }
    let n_hist = r.u32()? as usize;
    let mut history = Vec::with_capacity(n_hist.min(1024));
    for _ in 0..n_hist {
        let len = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(len)?).map_err(|e| Error::CorruptModel(format!("history entry: {e}")))?;
        history.push(s.to_string());
    }
    if r.pos != body.len() {
        return Err(Error::CorruptModel(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Model::from_parts(specs, params, seed, history)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&fs::read(path)?)
}
