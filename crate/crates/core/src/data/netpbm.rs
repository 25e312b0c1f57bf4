//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Planar `[3, h, w]` values in `[0, 1]` to interleaved P6 bytes.
pub fn encode_ppm(width: usize, height: usize, planes: &[f32]) -> Result<Vec<u8>> {
    let plane = width * height;
    if planes.len() != 3 * plane {
        return Err(Error::Format(format!("expected {} values, got {}", 3 * plane, planes.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(planes[c * plane + i]));
        }
    }
    Ok(out)
}

pub fn encode_pgm(width: usize, height: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::Format(format!("expected {} values, got {}", width * height, values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    Ok(out)
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::Format("file too short".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("malformed header".into()));
    }
    if fields[2] != 255 {
        return Err(Error::Format(format!("unsupported maxval {}", fields[2])));
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        offset: pos + 1,
    })
}

/// Returns `(width, height, planar [3, h, w] values)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(Error::Format("not a binary PPM".into()));
    }
    let plane = h.width * h.height;
    let body = bytes
        .get(h.offset..h.offset + 3 * plane)
        .ok_or_else(|| Error::Format("truncated pixel data".into()))?;
    let mut out = vec![0.0; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            out[c * plane + i] = body[3 * i + c] as f32 / 255.0;
        }
    }
    Ok((h.width, h.height, out))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::Format("not a binary PGM".into()));
    }
    let body = bytes
        .get(h.offset..h.offset + h.width * h.height)
        .ok_or_else(|| Error::Format("truncated pixel data".into()))?;
    Ok((h.width, h.height, body.iter().map(|&b| b as f32 / 255.0).collect()))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path)?.write_all(bytes)?;
    Ok(())
}
