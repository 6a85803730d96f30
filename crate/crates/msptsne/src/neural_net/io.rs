//! Binary model format.
//!
//! Layout, all little-endian:
//!   magic "MSPT" | format version u32 | layer count u32 | layer dims u32 each
//!   | per layer in order: weight matrix row-major then bias vector, f64 each
//!   | checksum u64 = wrapping byte sum of the parameter section.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Error, MlpModel, Result};

const MAGIC: &[u8; 4] = b"MSPT";
const FORMAT_VERSION: u32 = 1;

/// Encode the model; the round trip through [`deserialize_model`] is
/// bitwise-identical on every parameter.
pub fn serialize_model(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layer_dims.len() as u32).to_le_bytes());
    for &d in &model.layer_dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let params_start = out.len();
    for (w, b) in model.weights.iter().zip(&model.biases) {
        for &v in w.as_slice().expect("row-major weights") {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in b.as_slice().expect("contiguous bias") {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = byte_sum(&out[params_start..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

/// Decode a model produced by [`serialize_model`], validating magic,
/// version, shape consistency and the parameter checksum.
pub fn deserialize_model(bytes: &[u8]) -> Result<MlpModel> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, MAGIC
        )));
    }
    let version = cursor.read_u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let layer_count = cursor.read_u32()? as usize;
    if layer_count < 3 {
        return Err(Error::Format(format!(
            "layer count {layer_count} too small for an input, hidden and output layer"
        )));
    }
    let mut layer_dims = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let d = cursor.read_u32()? as usize;
        if d == 0 {
            return Err(Error::Format("zero layer width".into()));
        }
        layer_dims.push(d);
    }

    let params_start = cursor.pos;
    let mut weights = Vec::with_capacity(layer_count - 1);
    let mut biases = Vec::with_capacity(layer_count - 1);
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            w.push(cursor.read_f64()?);
        }
        weights.push(
            Array2::from_shape_vec((fan_in, fan_out), w).expect("shape matches element count"),
        );
        let mut b = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            b.push(cursor.read_f64()?);
        }
        biases.push(Array1::from_vec(b));
    }
    let params_end = cursor.pos;

    let stored = cursor.read_u64()?;
    let computed = byte_sum(&bytes[params_start..params_end]);
    if stored != computed {
        return Err(Error::Format(format!(
            "checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
        )));
    }
    if cursor.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checksum",
            bytes.len() - cursor.pos
        )));
    }
    Ok(MlpModel {
        layer_dims,
        weights,
        biases,
    })
}

impl MlpModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serialize_model(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MlpModel> {
        deserialize_model(&std::fs::read(path)?)
    }
}

fn byte_sum(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0u64, |acc, &b| acc.wrapping_add(u64::from(b)))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated stream: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn read_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
