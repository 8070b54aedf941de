//! Binary PGM (P5, one channel) and PPM (P6, three channels), maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Dimension(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Parameter(format!("pixel {v} outside [0, 1]")));
    }
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    out.reserve(c * h * w);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out.push((d[(ch * h + i) * w + j] * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_start: usize,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err(0, "expected magic P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each field
        let mut saw_space = false;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => {
                    pos += 1;
                    saw_space = true;
                }
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err(pos, "header ends early")),
            }
        }
        if !saw_space {
            return Err(format_err(pos, "expected whitespace"));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(pos, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, "number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format_err(pos, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(format_err(pos, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(pos, "expected a single whitespace byte after maxval")),
    }
    Ok(Header {
        channels,
        width,
        height,
        data_start: pos,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let hd = parse_header(bytes)?;
    let (c, h, w) = (hd.channels, hd.height, hd.width);
    let need = c * h * w;
    let body = &bytes[hd.data_start..];
    if body.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("pixel data truncated: {} of {need} bytes", body.len()),
        ));
    }
    let mut data = vec![0.0; need];
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                data[(ch * h + i) * w + j] = body[(i * w + j) * c + ch] as f64 / 255.0;
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
