//! Binary 8-bit PGM (P5) codec.

use std::path::Path;

use super::RawImage;
use crate::error::{Error, Result};

/// Largest accepted side; guards allocations on hostile headers.
pub const MAX_SIDE: usize = 1 << 14;

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, field: &str) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("PGM", field, "missing header field"));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, field: &str) -> Result<usize> {
    let tok = header_token(bytes, pos, field)?;
    std::str::from_utf8(tok)
        .ok()
        .filter(|s| s.bytes().all(|b| b.is_ascii_digit()) && s.len() <= 9)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("PGM", field, "not a decimal number"))
}

/// Decode P5 bytes into intensities scaled to `[0, 1]` by `maxval`.
pub fn decode(bytes: &[u8]) -> Result<RawImage> {
    let mut pos = 0;
    if header_token(bytes, &mut pos, "magic")? != b"P5" {
        return Err(Error::format("PGM", "magic", "expected P5"));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(Error::format(
            "PGM",
            "size",
            format!("{width}x{height} not in 1..={MAX_SIDE}"),
        ));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            "PGM",
            "maxval",
            format!("{maxval} is not an 8-bit maxval"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("PGM", "raster", "missing separator after header"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() != width * height {
        return Err(Error::format(
            "PGM",
            "raster",
            format!("expected {} bytes, found {}", width * height, raster.len()),
        ));
    }
    let scale = maxval as f64;
    let data = raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect();
    RawImage::new(height, width, data)
}

pub fn encode(img: &RawImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn read(path: &Path) -> Result<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(path: &Path, img: &RawImage) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_with_comments() {
        let mut b = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        b.extend_from_slice(&[0, 255, 51, 102, 153, 204]);
        let img = decode(&b).unwrap();
        assert_eq!((img.height(), img.width()), (2, 3));
        assert_eq!(img.data()[1], 1.0);
        assert!((img.data()[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_magic_and_short_raster() {
        assert!(decode(b"P2\n1 1\n255\n\x00").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00\x00").is_err());
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode(b"P5\n0 1\n255\n").is_err());
        assert!(decode(b"P5").is_err());
    }

    #[test]
    fn round_trip_of_8bit_values() {
        let data: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let img = RawImage::new(3, 4, data).unwrap();
        let back = decode(&encode(&img)).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
