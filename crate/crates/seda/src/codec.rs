//! PNG encodings of images, label maps and entropy maps, plus checksums.
//!
//! Encoders are deterministic, so decoding a file and encoding it again
//! reproduces it byte for byte.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Label colours; classes beyond the table repeat it.
const PALETTE: [[u8; 3]; 8] = [
    [107, 142, 35],
    [128, 64, 128],
    [70, 70, 70],
    [0, 0, 142],
    [250, 250, 250],
    [220, 20, 60],
    [250, 170, 30],
    [70, 130, 180],
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(Error::io(path))?))
}

fn encode(
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(path: &Path, bytes: &[u8]) -> Result<Decoded> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(|e| Error::format(path, e))?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

/// 8-bit RGB from a `[3, H, W]` buffer in `[0, 1]`.
pub fn encode_rgb(chw: &[f32], h: usize, w: usize) -> Vec<u8> {
    let hw = h * w;
    let mut px = Vec::with_capacity(3 * hw);
    for q in 0..hw {
        for c in 0..3 {
            px.push((chw[c * hw + q].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    encode(w, h, ColorType::Rgb, BitDepth::Eight, None, &px)
}

/// Returns `(h, w, [3, H, W] in [0, 1])`.
pub fn decode_rgb(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    let d = decode(path, bytes)?;
    if d.color != ColorType::Rgb || d.depth != BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit RGB"));
    }
    let hw = d.width * d.height;
    let mut chw = vec![0.0; 3 * hw];
    for q in 0..hw {
        for c in 0..3 {
            chw[c * hw + q] = d.data[3 * q + c] as f32 / 255.0;
        }
    }
    Ok((d.height, d.width, chw))
}

/// Palette-indexed label map.
pub fn encode_labels(labels: &[u8], h: usize, w: usize, classes: usize) -> Vec<u8> {
    let palette = (0..classes).flat_map(|c| PALETTE[c % PALETTE.len()]).collect();
    encode(w, h, ColorType::Indexed, BitDepth::Eight, Some(palette), labels)
}

pub fn decode_labels(path: &Path, bytes: &[u8], classes: usize) -> Result<(usize, usize, Vec<u8>)> {
    let d = decode(path, bytes)?;
    if d.color != ColorType::Indexed || d.depth != BitDepth::Eight {
        return Err(Error::format(path, "expected an 8-bit palette image"));
    }
    if let Some(bad) = d.data.iter().find(|v| **v as usize >= classes) {
        return Err(Error::format(path, format!("label value {bad} with {classes} classes")));
    }
    Ok((d.height, d.width, d.data))
}

/// 16-bit grayscale with values in `[0, 1]` stored as `round(v · 65535)`.
pub fn encode_unit16(values: &[f64], h: usize, w: usize) -> Vec<u8> {
    let data: Vec<u8> = values.iter().flat_map(|v| quantize16(*v).to_be_bytes()).collect();
    encode(w, h, ColorType::Grayscale, BitDepth::Sixteen, None, &data)
}

pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn decode_unit16(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let d = decode(path, bytes)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::Sixteen {
        return Err(Error::format(path, "expected 16-bit grayscale"));
    }
    let v = d.data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0).collect();
    Ok((d.height, d.width, v))
}

/// Writes `bytes` and returns their checksum.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))?;
    Ok(sha256_hex(bytes))
}

/// Reads a file and checks it against `sha256`.
pub fn read_checked(path: &Path, sha256: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if sha256_hex(&bytes) != sha256 {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    Ok(bytes)
}
