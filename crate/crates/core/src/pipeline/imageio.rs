//! Grayscale images: binary and ASCII PGM (8 or 16 bit), and raw real maps
//! with the flow-field header (`u32` width, `u32` height, little-endian)
//! followed by row-major little-endian `f32` samples.

use crate::scatter2d::RealMap;
use std::io::{self, Read, Write};

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self) -> io::Result<u32> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| invalid(format!("expected an integer at byte {start}")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> io::Result<RealMap> {
    let magic = bytes.get(..2).ok_or_else(|| invalid("truncated PGM"))?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(invalid("not a P2/P5 PGM")),
    };
    let mut t = Tokens { bytes, pos: 2 };
    let w = t.next_uint()? as usize;
    let h = t.next_uint()? as usize;
    let maxval = t.next_uint()?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(invalid(format!("bad PGM header {w}x{h} max {maxval}")));
    }
    let n = w * h;
    let mut data = Vec::with_capacity(n);
    if binary {
        let start = t.pos + 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let raster = bytes
            .get(start..start + need)
            .ok_or_else(|| invalid("truncated PGM raster"))?;
        if wide {
            data.extend(raster.chunks_exact(2).map(|c| f64::from(u16::from_be_bytes([c[0], c[1]]))));
        } else {
            data.extend(raster.iter().map(|&b| f64::from(b)));
        }
    } else {
        for _ in 0..n {
            data.push(f64::from(t.next_uint()?));
        }
    }
    if data.iter().any(|&v| v > f64::from(maxval)) {
        return Err(invalid("sample exceeds maxval"));
    }
    RealMap::new(w, h, data).map_err(|e| invalid(e.to_string()))
}

/// Binary PGM, rounding and clamping samples to `[0, maxval]`.
pub fn encode_pgm(map: &RealMap, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", map.width, map.height, maxval).into_bytes();
    let q = |v: f64| v.round().clamp(0.0, f64::from(maxval)) as u16;
    for &v in &map.data {
        if maxval > 255 {
            out.extend_from_slice(&q(v).to_be_bytes());
        } else {
            out.push(q(v) as u8);
        }
    }
    out
}

pub fn read_real_map(mut r: impl Read) -> io::Result<RealMap> {
    let mut hdr = [0u8; 8];
    r.read_exact(&mut hdr)?;
    let w = u32::from_le_bytes(hdr[..4].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(hdr[4..].try_into().expect("4 bytes")) as usize;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != w * h * 4 {
        return Err(invalid(format!(
            "{w}x{h} real map needs {} payload bytes, found {}",
            w * h * 4,
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    RealMap::new(w, h, data).map_err(|e| invalid(e.to_string()))
}

/// Samples are narrowed to `f32`.
pub fn write_real_map(map: &RealMap, mut w: impl Write) -> io::Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * map.data.len());
    buf.extend_from_slice(&(map.width as u32).to_le_bytes());
    buf.extend_from_slice(&(map.height as u32).to_le_bytes());
    for &v in &map.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

/// PGM when the content starts with `P2`/`P5`, raw real map otherwise.
pub fn decode_image(bytes: &[u8]) -> io::Result<RealMap> {
    match bytes.get(..2) {
        Some(b"P5") | Some(b"P2") => decode_pgm(bytes),
        _ => read_real_map(bytes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_8_and_16_bit() {
        let m = RealMap::from_fn(5, 3, |x, y| (x * 40 + y) as f64);
        let back = decode_pgm(&encode_pgm(&m, 255)).unwrap();
        assert_eq!(back, m);
        let m16 = m.map(|v| v * 200.0);
        assert_eq!(decode_pgm(&encode_pgm(&m16, 65535)).unwrap(), m16);
    }

    #[test]
    fn ascii_pgm_with_comments() {
        let t = b"P2\n# comment\n3 2\n# another\n9\n0 1 2\n3 4 9\n";
        let m = decode_pgm(t).unwrap();
        assert_eq!((m.width, m.height), (3, 2));
        assert_eq!(m.at(2, 1), 9.0);
        assert!(decode_pgm(b"P2 2 1 3 1 4").is_err());
    }

    #[test]
    fn real_map_roundtrip() {
        let m = RealMap::from_fn(4, 2, |x, y| x as f64 * 0.5 - y as f64);
        let mut buf = Vec::new();
        write_real_map(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 32);
        assert_eq!(decode_image(&buf).unwrap(), m);
        assert!(read_real_map(&buf[..buf.len() - 1]).is_err());
    }
}
