//! Binary PGM/PPM and PNG reading and writing.
//!
//! Decoded rasters are `(1, h, w, c)` tensors with samples divided by the
//! format's maximum value.

use std::path::Path;

use crate::error::{DecodeError, Error, Result};
use crate::tensor::{Shape4, Tensor4};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

struct PnmHeader {
    channels: usize,
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader, DecodeError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(DecodeError::Unsupported("not a binary PGM/PPM file".into())),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(DecodeError::Header("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| DecodeError::Header(format!("field {} is not a number", i + 1)))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(DecodeError::Header("missing whitespace after maxval".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(DecodeError::Header(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(DecodeError::Header(format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(PnmHeader {
        channels,
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes P5/P6. Samples wider than a byte are accepted only if `allow_16` is set.
pub fn decode_pnm(bytes: &[u8], allow_16: bool) -> Result<Tensor4> {
    let h = parse_pnm_header(bytes)?;
    let wide = h.maxval > 255;
    if wide && !allow_16 {
        return Err(DecodeError::BitDepth(16).into());
    }
    let bps = if wide { 2 } else { 1 };
    let samples = h.width * h.height * h.channels;
    let expected = samples * bps;
    let payload = &bytes[h.data_start.min(bytes.len())..];
    if payload.len() < expected {
        return Err(DecodeError::Truncated {
            expected,
            found: payload.len(),
        }
        .into());
    }
    let max = h.maxval as f64;
    let data: Vec<f64> = if wide {
        payload[..expected]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / max)
            .collect()
    } else {
        payload[..expected].iter().map(|&b| b as f64 / max).collect()
    };
    Tensor4::from_vec(Shape4::new(1, h.height, h.width, h.channels), data)
}

fn decode_png(bytes: &[u8]) -> Result<Tensor4> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| DecodeError::Header(format!("png: {e}")))?;
    let depth = reader.info().bit_depth as u32;
    if depth > 8 {
        return Err(DecodeError::BitDepth(depth).into());
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => DecodeError::Truncated {
            expected: buf.len(),
            found: bytes.len(),
        },
        other => DecodeError::Header(format!("png: {other}")),
    })?;
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(DecodeError::Unsupported(format!("png color type {other:?}")).into()),
    };
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut data = Vec::with_capacity(w * h * channels);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
        data.extend(row[..w * channels].iter().map(|&b| b as f64 / 255.0));
    }
    Tensor4::from_vec(Shape4::new(1, h, w, channels), data)
}

/// Decodes an 8-bit PGM, PPM or PNG by content.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor4> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else {
        decode_pnm(bytes, false)
    }
}

fn quantize(v: f64, max: f64) -> u32 {
    (v.clamp(0.0, 1.0) * max).round() as u32
}

fn single_image(t: &Tensor4) -> Result<Shape4> {
    let s = t.shape();
    if s.n != 1 || !(s.c == 1 || s.c == 3) {
        return Err(Error::Shape(format!(
            "only single gray or RGB images can be encoded, got {s}"
        )));
    }
    Ok(s)
}

/// Encodes a `(1, h, w, 1|3)` tensor as P5/P6; `maxval > 255` writes 16-bit samples.
pub fn encode_pnm(t: &Tensor4, maxval: u16) -> Result<Vec<u8>> {
    let s = single_image(t)?;
    if maxval == 0 {
        return Err(Error::Config("maxval must be positive".into()));
    }
    let magic = if s.c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", s.w, s.h).into_bytes();
    let max = maxval as f64;
    for &v in t.data() {
        let q = quantize(v, max);
        if maxval > 255 {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

pub fn encode_png(t: &Tensor4) -> Result<Vec<u8>> {
    let s = single_image(t)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, s.w as u32, s.h as u32);
        enc.set_color(if s.c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = t.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Config(format!("png encode: {e}")))?;
        w.write_image_data(&bytes)
            .map_err(|e| Error::Config(format!("png encode: {e}")))?;
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: &Path) -> Result<Tensor4> {
    decode_image(&read(path)?)
}

/// Like [`load_image`] but also accepts 16-bit PGM probability maps.
pub fn load_probability_map(path: &Path) -> Result<Tensor4> {
    let bytes = read(path)?;
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(&bytes)
    } else {
        decode_pnm(&bytes, true)
    }
}

/// Writes an 8-bit image; the extension picks PNG or PGM/PPM.
pub fn save_image(path: &Path, t: &Tensor4) -> Result<()> {
    let png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if png { encode_png(t)? } else { encode_pnm(t, 255)? };
    write(path, &bytes)
}

/// 16-bit PGM with `round(p * 65535)`.
pub fn save_probability_map(path: &Path, t: &Tensor4) -> Result<()> {
    write(path, &encode_pnm(t, 65535)?)
}
