//! GSDM checkpoint layout (all little-endian):
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | `[u8; 4]` = `GSDM`                     |
//! | version          | `u32` = 1                              |
//! | encoder kind     | `u32` (0 identity, 1 linear, 2 mlp1)   |
//! | head kind        | `u32` (0 vanilla, 1 gsd)               |
//! | input dimension  | `u32`                                  |
//! | tensor count     | `u32`                                  |
//! | tensors          | `u32` ndim, `u32 * ndim` dims, `f64 *` |
//! | alpha, beta      | `f64`, `f64`                           |
//!
//! Tensors are the encoder layers in order (weight `out x in`, then bias),
//! followed by the head weights `classes x features`.

use std::fs;
use std::path::Path;

use super::encoder::{Dense, Encoder, EncoderKind};
use super::head::GeometricHead;
use super::{HeadKind, Model};
use crate::error::{GsdError, Result};
use crate::linalg::Matrix;

pub const GSDM_MAGIC: &[u8; 4] = b"GSDM";
pub const GSDM_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    put_u32(out, 2);
    put_u32(out, m.rows() as u32);
    put_u32(out, m.cols() as u32);
    put_f64s(out, m.as_slice());
}

fn put_vector(out: &mut Vec<u8>, v: &[f64]) {
    put_u32(out, 1);
    put_u32(out, v.len() as u32);
    put_f64s(out, v);
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(GSDM_MAGIC);
    put_u32(&mut out, GSDM_VERSION);
    put_u32(&mut out, model.encoder.kind().tag());
    put_u32(&mut out, model.head_kind.tag());
    put_u32(&mut out, model.encoder.input_dim() as u32);
    put_u32(&mut out, 2 * model.encoder.layers().len() as u32 + 1);
    for layer in model.encoder.layers() {
        put_matrix(&mut out, &layer.weight);
        put_vector(&mut out, &layer.bias);
    }
    put_matrix(&mut out, &model.head.weights);
    put_f64s(&mut out, &[model.head.alpha, model.head.beta]);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(GsdError::parse(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {remaining} remain"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self, index: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let at = self.pos as u64;
        let ndim = self.u32("tensor rank")? as usize;
        if ndim != 1 && ndim != 2 {
            return Err(GsdError::parse(at, format!("tensor {index} has rank {ndim}, expected 1 or 2")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.u32("tensor dimension")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| GsdError::parse(at, format!("tensor {index} is too large")))?;
        let raw = self.take(count, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((dims, data))
    }
}

fn expect_matrix(dims: &[usize], data: Vec<f64>, index: usize, at: u64) -> Result<Matrix> {
    match dims {
        [r, c] => Ok(Matrix::from_vec(*r, *c, data)),
        _ => Err(GsdError::parse(at, format!("tensor {index} should be a matrix"))),
    }
}

fn expect_vector(dims: &[usize], data: Vec<f64>, index: usize, at: u64) -> Result<Vec<f64>> {
    match dims {
        [_] => Ok(data),
        _ => Err(GsdError::parse(at, format!("tensor {index} should be a vector"))),
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != GSDM_MAGIC {
        return Err(GsdError::MagicMismatch {
            expected: "GSDM".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32("version")?;
    if version != GSDM_VERSION {
        return Err(GsdError::parse(4, format!("unsupported version {version}")));
    }
    let encoder_kind = EncoderKind::from_tag(r.u32("encoder kind")?)
        .ok_or_else(|| GsdError::parse(8, "unknown encoder kind tag"))?;
    let head_kind = HeadKind::from_tag(r.u32("head kind")?).ok_or_else(|| GsdError::parse(12, "unknown head kind tag"))?;
    let input_dim = r.u32("input dimension")? as usize;
    let count_at = r.pos as u64;
    let count = r.u32("tensor count")? as usize;
    let num_layers = match encoder_kind {
        EncoderKind::Identity => 0,
        EncoderKind::Linear => 1,
        EncoderKind::Mlp1 => 2,
    };
    if count != 2 * num_layers + 1 {
        return Err(GsdError::parse(
            count_at,
            format!("{} encoder needs {} tensors, header says {count}", encoder_kind.name(), 2 * num_layers + 1),
        ));
    }
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let at = r.pos as u64;
        let (dims, data) = r.tensor(2 * l)?;
        let weight = expect_matrix(&dims, data, 2 * l, at)?;
        let at = r.pos as u64;
        let (dims, data) = r.tensor(2 * l + 1)?;
        let bias = expect_vector(&dims, data, 2 * l + 1, at)?;
        layers.push(Dense { weight, bias });
    }
    let at = r.pos as u64;
    let (dims, data) = r.tensor(count - 1)?;
    let weights = expect_matrix(&dims, data, count - 1, at)?;
    let alpha = r.f64("alpha")?;
    let beta = r.f64("beta")?;
    if r.pos != bytes.len() {
        return Err(GsdError::parse(
            r.pos as u64,
            format!("{} trailing bytes after checkpoint", bytes.len() - r.pos),
        ));
    }
    let encoder = Encoder::from_layers(encoder_kind, input_dim, layers)
        .map_err(|e| GsdError::parse(count_at, e.to_string()))?;
    let head = GeometricHead { weights, alpha, beta };
    Model::new(encoder, head, head_kind).map_err(|e| GsdError::parse(at, e.to_string()))
}

pub fn write_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&fs::read(path)?)
}
