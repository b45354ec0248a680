//! Headered planar float32 files.
//!
//! Layout: an ASCII line `FPLANES <planes> <width> <height>\n` followed by
//! `planes * height * width` little-endian `f32` values, plane-major and
//! row-major within each plane.

use std::fs;
use std::path::Path;

use crate::error::{Result, TseError};

const MAGIC: &str = "FPLANES";

#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Planes {
    pub fn new(count: usize, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != count * width * height {
            return Err(TseError::contract(format!(
                "plane data holds {} values, expected {count}x{width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            count,
            width,
            height,
            data,
        })
    }

    /// A single plane of `values.len()` entries laid out as one row.
    pub fn from_row(values: &[f64]) -> Self {
        Self {
            count: 1,
            width: values.len(),
            height: 1,
            data: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn plane(&self, k: usize) -> &[f32] {
        let len = self.width * self.height;
        &self.data[k * len..(k + 1) * len]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{MAGIC} {} {} {}\n", self.count, self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let eol = buf
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| TseError::format(0, "missing header line"))?;
        let header = std::str::from_utf8(&buf[..eol]).map_err(|_| TseError::format(0, "header is not ASCII"))?;
        let mut fields = header.split(' ');
        if fields.next() != Some(MAGIC) {
            return Err(TseError::format(0, "missing FPLANES magic"));
        }
        let mut offset = MAGIC.len() + 1;
        let mut dims = [0usize; 3];
        for (slot, name) in dims.iter_mut().zip(["planes", "width", "height"]) {
            let field = fields
                .next()
                .ok_or_else(|| TseError::format(offset, format!("missing {name}")))?;
            *slot = field
                .parse()
                .map_err(|_| TseError::format(offset, format!("bad {name} {field:?}")))?;
            offset += field.len() + 1;
        }
        if fields.next().is_some() {
            return Err(TseError::format(offset, "trailing header fields"));
        }
        let [count, width, height] = dims;
        let body = &buf[eol + 1..];
        let expected = count
            .checked_mul(width)
            .and_then(|v| v.checked_mul(height))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| TseError::format(0, "dimensions overflow"))?;
        if body.len() != expected {
            return Err(TseError::format(
                eol + 1,
                format!("body holds {} bytes, header promises {expected}", body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            count,
            width,
            height,
            data,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| TseError::io(path, e))?;
        Self::decode(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| TseError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_exact() {
        let p = Planes::new(2, 3, 1, vec![0.0; 6]).unwrap();
        let bytes = p.encode();
        assert!(bytes.starts_with(b"FPLANES 2 3 1\n"));
        assert_eq!(bytes.len(), 14 + 24);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = Planes::new(1, 2, 2, vec![0.1, -3.5, f32::MIN_POSITIVE, 1e20]).unwrap();
        assert_eq!(Planes::decode(&p.encode()).unwrap(), p);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let mut bytes = Planes::new(1, 2, 2, vec![0.0; 4]).unwrap().encode();
        bytes.pop();
        assert!(matches!(
            Planes::decode(&bytes),
            Err(TseError::Format { offset: 14, .. })
        ));
    }

    #[test]
    fn bad_field_names_offset() {
        let err = Planes::decode(b"FPLANES 1 x 2\n").err().unwrap();
        assert!(matches!(err, TseError::Format { offset: 10, .. }));
    }
}
