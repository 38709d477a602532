//! Portable Float Map, grayscale ("Pf") only.
//!
//! Layout: `Pf\n<width> <height>\n<scale>\n` followed by `width * height`
//! f32 samples, bottom row first. A negative scale means little-endian.

use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::image::DisparityMap;

pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pfm_bytes(&bytes).map_err(|e| match e {
        Error::Format { msg, .. } => Error::format(path, msg),
        other => other,
    })
}

/// Parse a PFM buffer. Rows are flipped to top-to-bottom; values are kept
/// as stored. Non-finite samples become invalid pixels.
pub fn read_pfm_bytes(bytes: &[u8]) -> Result<DisparityMap> {
    let bad = |msg: &str| Error::format("<pfm>", msg);
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token()?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err(bad("colour PFM (\"PF\") is not a disparity map")),
        other => return Err(bad(&format!("bad magic {other:?}"))),
    }
    let width: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = token()?.parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(bad("empty image"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let little_endian = scale < 0.0;
    let needed = width * height * 4;
    if bytes.len() < pos + needed {
        return Err(bad(&format!("truncated payload: need {needed} bytes, have {}", bytes.len().saturating_sub(pos))));
    }

    let payload = &bytes[pos..pos + needed];
    let mut values = vec![0.0; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row_from_bottom, x) = (i / width, i % width);
        let y = height - 1 - row_from_bottom;
        values[y * width + x] = v as f64;
    }
    DisparityMap::new(height, width, values)
}

/// Little-endian "Pf" with scale -1, bottom row first.
pub fn write_pfm_bytes(map: &DisparityMap) -> Result<Vec<u8>> {
    ensure!(map.width > 0 && map.height > 0, "write_pfm: empty disparity map");
    ensure!(map.values.iter().all(|v| v.is_finite()), "write_pfm: disparity values must be finite");
    let header = format!("Pf\n{} {}\n{:.4}\n", map.width, map.height, -1.0);
    let mut out = Vec::with_capacity(header.len() + map.values.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            out.extend_from_slice(&(map.get(x, y) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(map: &DisparityMap, path: &Path) -> Result<()> {
    let bytes = write_pfm_bytes(map)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le_fixture() -> Vec<u8> {
        // Top row [1, 2], bottom row [3, 4]; stored bottom row first.
        let mut b = b"Pf\n2 2\n-1.0\n".to_vec();
        for v in [3.0f32, 4.0, 1.0, 2.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn hand_built_fixture_parses_with_orientation() {
        let m = read_pfm_bytes(&le_fixture()).unwrap();
        assert_eq!((m.width, m.height), (2, 2));
        assert_eq!(m.values, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(m.valid.iter().all(|&v| v));
    }

    #[test]
    fn big_endian_is_honoured() {
        let mut b = b"Pf\n1 2\n1.0\n".to_vec();
        for v in [5.0f32, 6.0] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        let m = read_pfm_bytes(&b).unwrap();
        assert_eq!(m.values, vec![6.0, 5.0]);
    }

    #[test]
    fn colour_and_bad_magic_rejected() {
        let mut b = le_fixture();
        b[1] = b'F';
        assert!(matches!(read_pfm_bytes(&b), Err(Error::Format { .. })));
        b[0] = b'X';
        assert!(matches!(read_pfm_bytes(&b), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_rejected() {
        let b = le_fixture();
        assert!(matches!(read_pfm_bytes(&b[..b.len() - 1]), Err(Error::Format { .. })));
    }

    #[test]
    fn one_pixel_layout() {
        let bytes = write_pfm_bytes(&DisparityMap::constant(1, 1, 0.0)).unwrap();
        assert_eq!(bytes.len(), 15 + 4);
        assert_eq!(&bytes[..15], b"Pf\n1 1\n-1.0000\n");
        assert_eq!(read_pfm_bytes(&bytes).unwrap().values, vec![0.0]);
    }

    #[test]
    fn empty_map_rejected() {
        let m = DisparityMap { height: 0, width: 0, values: vec![], valid: vec![] };
        assert!(matches!(write_pfm_bytes(&m), Err(Error::Contract(_))));
    }
}
