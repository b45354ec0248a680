//! Binary PGM (P5) codec, 8-bit only.

use std::fs;
use std::path::Path;

use crate::error::{Result, TseError};

/// Raw decoded P5 payload: width, height, row-major bytes.
pub(crate) struct RawGray {
    pub width: usize,
    pub height: usize,
    pub bytes: Vec<u8>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            let b = self.buf[self.pos];
            if b == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(TseError::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TseError::format(start, format!("{what} does not fit in 32 bits")))
    }
}

pub(crate) fn decode(buf: &[u8]) -> Result<RawGray> {
    if buf.len() < 2 || &buf[..2] != b"P5" {
        return Err(TseError::format(0, "missing P5 magic"));
    }
    let mut cur = Cursor { buf, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        if maxval == 0 || maxval > 65535 {
            return Err(TseError::format(maxval_at, format!("invalid maxval {maxval}")));
        }
        return Err(TseError::UnsupportedDepth { maxval });
    }
    // exactly one whitespace byte separates the header from the raster
    match buf.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(TseError::format(cur.pos, "expected whitespace after maxval")),
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| TseError::format(0, "dimensions overflow"))?;
    let data = &buf[cur.pos..];
    if data.len() != expected {
        return Err(TseError::format(
            cur.pos,
            format!("raster holds {} bytes, header promises {expected}", data.len()),
        ));
    }
    Ok(RawGray {
        width,
        height,
        bytes: data.to_vec(),
    })
}

pub(crate) fn encode(width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    out
}

pub(crate) fn read(path: &Path) -> Result<RawGray> {
    let buf = fs::read(path).map_err(|e| TseError::io(path, e))?;
    decode(&buf)
}

pub(crate) fn write(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    fs::write(path, encode(width, height, bytes)).map_err(|e| TseError::io(path, e))
}
