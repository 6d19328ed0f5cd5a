//! Binary image formats: PPM (P6) for color, PFM for depth, PGM (P5)
//! for masks. Color samples are f64 in [0,1], quantized to 8 bits on
//! write; depth is stored as 32-bit floats, scale -1.0 (little-endian),
//! rows bottom to top.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::DataError;

fn format_err(format: &str, reason: impl Into<String>) -> DataError {
    DataError::Format { format: format.to_string(), reason: reason.into() }
}

pub fn write_ppm(path: &Path, rgb: &[f64], width: usize, height: usize) -> Result<(), DataError> {
    assert_eq!(rgb.len(), 3 * width * height, "PPM payload must be [3,H,W]");
    let n = width * height;
    let mut buf = Vec::with_capacity(3 * n + 32);
    buf.extend_from_slice(format!("P6\n{width} {height}\n255\n").as_bytes());
    for p in 0..n {
        for c in 0..3 {
            let v = (rgb[c * n + p].clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.push(v);
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// (rgb [3,H,W] in [0,1], width, height)
pub fn read_ppm(path: &Path) -> Result<(Vec<f64>, usize, usize), DataError> {
    let bytes = fs::read(path)?;
    let (width, height, maxval, offset) = parse_netpbm_header(&bytes, b"P6", "PPM")?;
    if maxval != 255 {
        return Err(format_err("PPM", format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    let body = &bytes[offset..];
    if body.len() < 3 * n {
        return Err(format_err("PPM", format!("expected {} pixel bytes, found {}", 3 * n, body.len())));
    }
    let mut rgb = vec![0.0; 3 * n];
    for p in 0..n {
        for c in 0..3 {
            rgb[c * n + p] = body[3 * p + c] as f64 / 255.0;
        }
    }
    Ok((rgb, width, height))
}

pub fn write_pgm(path: &Path, gray: &[u8], width: usize, height: usize) -> Result<(), DataError> {
    assert_eq!(gray.len(), width * height);
    let mut buf = Vec::with_capacity(gray.len() + 32);
    buf.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    buf.extend_from_slice(gray);
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(Vec<u8>, usize, usize), DataError> {
    let bytes = fs::read(path)?;
    let (width, height, maxval, offset) = parse_netpbm_header(&bytes, b"P5", "PGM")?;
    if maxval != 255 {
        return Err(format_err("PGM", format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    let body = &bytes[offset..];
    if body.len() < n {
        return Err(format_err("PGM", format!("expected {n} bytes, found {}", body.len())));
    }
    Ok((body[..n].to_vec(), width, height))
}

/// Header: magic, whitespace/comment-separated width height maxval, one
/// whitespace byte, then the raster. Returns the raster offset.
fn parse_netpbm_header(
    bytes: &[u8],
    magic: &[u8],
    format: &str,
) -> Result<(usize, usize, usize, usize), DataError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(format, "bad magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
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
            return Err(format_err(format, "truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|e| format_err(format, format!("bad header field: {e}")))?;
    }
    if pos >= bytes.len() {
        return Err(format_err(format, "missing raster"));
    }
    pos += 1; // single whitespace byte after maxval
    Ok((fields[0], fields[1], fields[2], pos))
}

pub fn write_pfm(path: &Path, data: &[f64], width: usize, height: usize) -> Result<(), DataError> {
    assert_eq!(data.len(), width * height);
    let mut buf = Vec::with_capacity(4 * data.len() + 32);
    buf.extend_from_slice(format!("Pf\n{width} {height}\n-1.0\n").as_bytes());
    for y in (0..height).rev() {
        for x in 0..width {
            buf.extend_from_slice(&(data[y * width + x] as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<(Vec<f64>, usize, usize), DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut line = |bytes: &[u8]| -> Result<String, DataError> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(format_err("PFM", "truncated header"));
        }
        pos += 1;
        Ok(String::from_utf8_lossy(&bytes[start..pos - 1]).into_owned())
    };
    if line(&bytes)? != "Pf" {
        return Err(format_err("PFM", "bad magic (only grayscale Pf supported)"));
    }
    let dims = line(&bytes)?;
    let mut it = dims.split_whitespace();
    let width: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err("PFM", "bad dimensions"))?;
    let height: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err("PFM", "bad dimensions"))?;
    let scale: f64 = line(&bytes)?
        .trim()
        .parse()
        .map_err(|_| format_err("PFM", "bad scale"))?;
    if scale >= 0.0 {
        return Err(format_err("PFM", "big-endian PFM not supported"));
    }
    let n = width * height;
    if bytes.len() < pos + 4 * n {
        return Err(format_err("PFM", format!("expected {} raster bytes, found {}", 4 * n, bytes.len() - pos)));
    }
    let mut data = vec![0.0; n];
    for y in (0..height).rev() {
        for x in 0..width {
            let b: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
            data[y * width + x] = f32::from_le_bytes(b) as f64;
            pos += 4;
        }
    }
    Ok((data, width, height))
}

/// Flush writes through a temp file so a failed write never leaves a
/// partial artifact in place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn ppm_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let rgb: Vec<f64> = (0..3 * 6).map(|v| (v as f64) / 17.0).collect();
        write_ppm(&p, &rgb, 3, 2).unwrap();
        let (back, w, h) = read_ppm(&p).unwrap();
        assert_eq!((w, h), (3, 2));
        for (a, b) in rgb.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pfm_round_trip_exact_for_f32() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let d: Vec<f64> = (0..12).map(|v| (v as f32 * 0.37 + 1.0) as f64).collect();
        write_pfm(&p, &d, 4, 3).unwrap();
        let (back, w, h) = read_pfm(&p).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, d);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let m: Vec<u8> = (0..20).map(|v| (v * 13) as u8).collect();
        write_pgm(&p, &m, 5, 4).unwrap();
        let (back, w, h) = read_pgm(&p).unwrap();
        assert_eq!((w, h), (5, 4));
        assert_eq!(back, m);
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.ppm");
        fs::write(&p, b"P3\n2 2\n255\n").unwrap();
        assert!(read_ppm(&p).is_err());
        let q = dir.path().join("bad.pfm");
        fs::write(&q, b"Pf\n4 4\n-1.0\nxx").unwrap();
        assert!(read_pfm(&q).is_err());
    }
}
