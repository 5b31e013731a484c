//! Binary PPM (P6) codec for `3×H×W` images with values in `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes with maxval 255, rounding half up (`0.5` → `128`).
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        other => {
            return Err(Error::Shape(format!(
                "PPM needs a 3×H×W image, got {other:?}"
            )))
        }
    };
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(
            "PPM encoding needs pixel values in [0, 1]".into(),
        ));
    }
    let header = format!("P6\n{w} {h}\n255\n");
    let mut out = Vec::with_capacity(header.len() + 3 * h * w);
    out.extend_from_slice(header.as_bytes());
    let plane = h * w;
    let data = image.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push((data[c * plane + p] * 255.0 + 0.5).floor() as u8);
        }
    }
    Ok(out)
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format("PPM", "missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::format("PPM", "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("PPM", "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PPM", "header field out of range"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("PPM", "missing separator after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format("PPM", "zero image dimension"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::format("PPM", format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_start: pos,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes)?;
    let plane = header.width * header.height;
    let raster = &bytes[header.data_start..];
    if raster.len() < 3 * plane {
        return Err(Error::format(
            "PPM",
            format!("truncated raster: {} of {} bytes", raster.len(), 3 * plane),
        ));
    }
    let scale = header.maxval as f64;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            let v = raster[3 * p + c] as usize;
            if v > header.maxval {
                return Err(Error::format("PPM", "sample exceeds maxval"));
            }
            data[c * plane + p] = v as f64 / scale;
        }
    }
    Tensor::from_vec(&[3, header.height, header.width], data)
}
