//! Binary PPM (P6) and PGM (P5) image files.
//!
//! Model-range pixels in [-1, 1] map linearly to bytes 0..=255 with
//! round-half-away-from-zero, so -1 -> 0, 0 -> 128, +1 -> 255. Values a
//! file can represent round-trip bit-exactly.

use std::path::Path;

use thiserror::Error;

use crate::csvio::write_atomic;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {format} header: {reason}")]
    Malformed { format: &'static str, reason: String },
    #[error("truncated file: expected {expected} pixel bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported max value {0} (only 255)")]
    UnsupportedMaxval(u32),
}

/// [-1, 1] -> 0..=255, rounding half away from zero.
pub fn value_to_byte(v: f32) -> u8 {
    let scaled = (v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0;
    let rounded = if scaled >= 0.0 { (scaled + 0.5).floor() } else { (scaled - 0.5).ceil() };
    rounded.clamp(0.0, 255.0) as u8
}

/// Byte -> [-1, 1].
pub fn byte_to_value(b: u8) -> f32 {
    b as f32 / 255.0 * 2.0 - 1.0
}

fn encode_header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Writes an RGB image tensor ([3, h, w] or [1, 3, h, w]) as binary PPM.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<(), ImageIoError> {
    let (c, h, w) = image_dims(image, 3)?;
    debug_assert_eq!(c, 3);
    let mut bytes = encode_header("P6", w, h);
    let data = image.data();
    let plane = h * w;
    for i in 0..plane {
        for ch in 0..3 {
            bytes.push(value_to_byte(data[ch * plane + i]));
        }
    }
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Writes a single-channel tensor ([h, w], [1, h, w] or [1, 1, h, w]) as
/// binary PGM; used for feature-map dumps.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<(), ImageIoError> {
    let (_, h, w) = image_dims(image, 1)?;
    let mut bytes = encode_header("P5", w, h);
    bytes.extend(image.data().iter().map(|&v| value_to_byte(v)));
    write_atomic(path, &bytes)?;
    Ok(())
}

fn image_dims(image: &Tensor, want_c: usize) -> Result<(usize, usize, usize), ImageIoError> {
    let s = image.shape();
    let dims = match (s.len(), want_c) {
        (2, 1) => (1, s[0], s[1]),
        (3, _) if s[0] == want_c => (s[0], s[1], s[2]),
        (4, _) if s[0] == 1 && s[1] == want_c => (s[1], s[2], s[3]),
        _ => {
            return Err(ImageIoError::Malformed {
                format: if want_c == 3 { "P6" } else { "P5" },
                reason: format!("unsupported tensor shape {s:?}"),
            })
        }
    };
    Ok(dims)
}

/// Reads a binary PPM into a [3, h, w] tensor.
pub fn read_ppm(path: &Path) -> Result<Tensor, ImageIoError> {
    let bytes = std::fs::read(path)?;
    let (w, h, pixels) = parse_netpbm(&bytes, "P6", 3)?;
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            data[ch * plane + i] = byte_to_value(pixels[i * 3 + ch]);
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data))
}

/// Reads a binary PGM into a [1, h, w] tensor.
pub fn read_pgm(path: &Path) -> Result<Tensor, ImageIoError> {
    let bytes = std::fs::read(path)?;
    let (w, h, pixels) = parse_netpbm(&bytes, "P5", 1)?;
    Ok(Tensor::from_vec(
        &[1, h, w],
        pixels.iter().map(|&b| byte_to_value(b)).collect(),
    ))
}

fn parse_netpbm<'a>(
    bytes: &'a [u8],
    magic: &'static str,
    channels: usize,
) -> Result<(usize, usize, &'a [u8]), ImageIoError> {
    let malformed = |reason: &str| ImageIoError::Malformed { format: magic, reason: reason.into() };
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(malformed("wrong magic"));
    }
    // header tokens: magic, width, height, maxval; '#' comments allowed
    let mut pos = 2usize;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("missing header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("non-ascii header"))?;
        fields.push(text.parse::<usize>().map_err(|_| malformed("bad number"))?);
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 {
        return Err(malformed("zero dimension"));
    }
    if maxval != 255 {
        return Err(ImageIoError::UnsupportedMaxval(maxval as u32));
    }
    // single whitespace byte separates header from pixel data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing pixel separator"));
    }
    pos += 1;
    let expected = w * h * channels;
    let pixels = &bytes[pos..];
    if pixels.len() < expected {
        return Err(ImageIoError::Truncated { expected, found: pixels.len() });
    }
    Ok((w, h, &pixels[..expected]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_byte_endpoints() {
        assert_eq!(value_to_byte(-1.0), 0);
        assert_eq!(value_to_byte(1.0), 255);
        assert_eq!(value_to_byte(0.0), 128, "0 maps to 128 under round-half-away");
        assert_eq!(byte_to_value(0), -1.0);
        assert_eq!(byte_to_value(255), 1.0);
    }

    #[test]
    fn ppm_roundtrip_bytes() {
        let dir = std::env::temp_dir().join("sg2m_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.ppm");
        // representable values round-trip exactly
        let data: Vec<f32> = (0..3 * 4 * 4).map(|i| byte_to_value((i * 3 % 256) as u8)).collect();
        let img = Tensor::from_vec(&[3, 4, 4], data);
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.shape(), &[3, 4, 4]);
        assert_eq!(back.to_vec(), img.to_vec());
        // write-then-read-then-write produces identical bytes
        let bytes1 = std::fs::read(&path).unwrap();
        write_ppm(&path, &back).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = std::env::temp_dir().join("sg2m_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("map.pgm");
        let img = Tensor::from_vec(&[2, 3], vec![-1.0, -0.5, 0.0, 0.25, 0.5, 1.0]);
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.shape(), &[1, 2, 3]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = std::env::temp_dir().join("sg2m_trunc_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ppm");
        std::fs::write(&path, b"P6\n4 4\n255\nshort").unwrap();
        match read_ppm(&path) {
            Err(ImageIoError::Truncated { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_header_is_an_error() {
        let dir = std::env::temp_dir().join("sg2m_malformed_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ppm");
        std::fs::write(&path, b"P3\n4 4\n255\n").unwrap();
        assert!(matches!(read_ppm(&path), Err(ImageIoError::Malformed { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }
}
