use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `[−1, 1] → [0, 255]` by `round((v + 1)·127.5)`, clamped.
pub fn to_byte(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Writes batch item 0 of an `N×3×H×W` image as binary PPM (P6, maxval 255).
pub fn write_ppm<W: Write>(mut out: W, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("write_ppm", format!("expected 3 channels, got {s}")));
    }
    let plane = s.plane();
    let d = image.data();
    let mut bytes = Vec::with_capacity(plane * 3 + 32);
    write!(bytes, "P6\n{} {}\n255\n", s.w, s.h)?;
    for p in 0..plane {
        for c in 0..3 {
            bytes.push(to_byte(d[c * plane + p]));
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<usize>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::Format("non-ASCII PPM header".into()))?;
        let v = tok.parse().map_err(|_| Error::Format(format!("bad PPM header token `{tok}`")))?;
        tokens.push(v);
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((tokens, i + 1))
}

/// Reads a P6 image back into `1×3×H×W` values `b/127.5 − 1`.
pub fn read_ppm<R: Read>(mut input: R) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if !bytes.starts_with(b"P6") {
        return Err(Error::Format("not a binary PPM (P6) file".into()));
    }
    let (t, start) = header_tokens(&bytes[2..], 3)?;
    let (w, h, max) = (t[0], t[1], t[2]);
    if max != 255 {
        return Err(Error::Format(format!("unsupported maxval {max}")));
    }
    let raster = bytes.get(2 + start..).unwrap_or(&[]);
    if raster.len() != w * h * 3 {
        return Err(Error::Format(format!("raster has {} bytes, expected {}", raster.len(), w * h * 3)));
    }
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, i, j| {
        raster[(i * w + j) * 3 + c] as f32 / 127.5 - 1.0
    }))
}

/// Writes one plane as binary PGM (P5), min–max scaled to `[0, 255]`
/// (a constant plane maps to 128). Returns the `(min, max)` used.
pub fn write_pgm<W: Write>(mut out: W, plane: &[f32], h: usize, w: usize) -> io::Result<(f32, f32)> {
    assert_eq!(plane.len(), h * w, "plane size");
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = (hi - lo) as f64;
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(plane.iter().map(|&v| {
        if range > 0.0 {
            (((v - lo) as f64 / range) * 255.0).round() as u8
        } else {
            128
        }
    }));
    out.write_all(&bytes)?;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 128); // 127.5 rounds away from zero
        assert_eq!(to_byte(3.0), 255);
        assert_eq!(to_byte(f32::NAN), 0);
    }

    #[test]
    fn ppm_roundtrip_is_quantized() {
        let img = Tensor::from_fn(Shape::new(1, 3, 2, 3), |_, c, i, j| (c as f32 - 1.0) * 0.5 + (i * 3 + j) as f32 * 0.01);
        let mut buf = Vec::new();
        write_ppm(&mut buf, &img).unwrap();
        assert!(buf.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(buf.len(), 11 + 18);
        let back = read_ppm(&buf[..]).unwrap();
        assert!(back.max_abs_diff(&img) <= 1.0 / 255.0 + 1e-6);
        let mut again = Vec::new();
        write_ppm(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn pgm_scaling() {
        let mut buf = Vec::new();
        assert_eq!(write_pgm(&mut buf, &[1.0, 2.0, 3.0, 1.0], 2, 2).unwrap(), (1.0, 3.0));
        assert_eq!(&buf[buf.len() - 4..], &[0, 128, 255, 0]);
        let mut buf = Vec::new();
        write_pgm(&mut buf, &[0.5; 4], 2, 2).unwrap();
        assert_eq!(&buf[buf.len() - 4..], &[128; 4]);
    }
}
