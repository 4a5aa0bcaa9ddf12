//! On-disk formats: HSC scene cubes, HSL label rasters, split lists,
//! and binary PPM images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::data::{HsiScene, SplitList};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic in {path}: expected {expected}")]
    BadMagic { path: String, expected: &'static str },
    #[error("unsupported dtype {0} (only 1 = f32 is defined)")]
    UnsupportedDtype(u32),
    #[error("{path}: payload size mismatch (expected {expected} values, got {got})")]
    SizeMismatch { path: String, expected: usize, got: usize },
    #[error("label raster is {lh}x{lw} but cube is {ch}x{cw}")]
    LabelShapeMismatch { lh: usize, lw: usize, ch: usize, cw: usize },
    #[error("malformed split line {line}: {text:?}")]
    BadSplitLine { line: usize, text: String },
    #[error("malformed ppm header in {0}")]
    BadPpm(String),
    #[error("extent {0} too large for this format")]
    ExtentOverflow(usize),
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn as_u32(v: usize) -> Result<u32, IoError> {
    u32::try_from(v).map_err(|_| IoError::ExtentOverflow(v))
}

/// Write a scene cube: magic "HSC1", u32 height/width/bands, u32 dtype
/// (1 = f32), then band-major f32 values. All integers little-endian.
pub fn write_hsc(path: &Path, scene: &HsiScene) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"HSC1")?;
    w.write_all(&as_u32(scene.height)?.to_le_bytes())?;
    w.write_all(&as_u32(scene.width)?.to_le_bytes())?;
    w.write_all(&as_u32(scene.bands)?.to_le_bytes())?;
    w.write_all(&1u32.to_le_bytes())?;
    for &v in &scene.cube {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read an HSC cube. The label raster comes back empty (all zeros);
/// pair it with [`read_hsl`].
pub fn read_hsc(path: &Path) -> Result<HsiScene, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"HSC1" {
        return Err(IoError::BadMagic { path: path.display().to_string(), expected: "HSC1" });
    }
    let height = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    let bands = read_u32(&mut r)? as usize;
    let dtype = read_u32(&mut r)?;
    if dtype != 1 {
        return Err(IoError::UnsupportedDtype(dtype));
    }
    let expected = height * width * bands;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected * 4 {
        return Err(IoError::SizeMismatch {
            path: path.display().to_string(),
            expected,
            got: payload.len() / 4,
        });
    }
    let cube = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(HsiScene { height, width, bands, cube, labels: vec![0; height * width], class_names: None })
}

/// Write a label raster: magic "HSL1", u32 height/width, then row-major
/// u16 labels (0 = unlabeled), little-endian.
pub fn write_hsl(path: &Path, scene: &HsiScene) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"HSL1")?;
    w.write_all(&as_u32(scene.height)?.to_le_bytes())?;
    w.write_all(&as_u32(scene.width)?.to_le_bytes())?;
    for &l in &scene.labels {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read an HSL raster into an existing scene, checking extents.
pub fn read_hsl(path: &Path, scene: &mut HsiScene) -> Result<(), IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"HSL1" {
        return Err(IoError::BadMagic { path: path.display().to_string(), expected: "HSL1" });
    }
    let height = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    if height != scene.height || width != scene.width {
        return Err(IoError::LabelShapeMismatch {
            lh: height,
            lw: width,
            ch: scene.height,
            cw: scene.width,
        });
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != height * width * 2 {
        return Err(IoError::SizeMismatch {
            path: path.display().to_string(),
            expected: height * width,
            got: payload.len() / 2,
        });
    }
    scene.labels = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(())
}

/// Write one split as text: a `# split: <name>` header then one
/// `row,col,class` line per pixel.
pub fn write_split(path: &Path, name: &str, split: &SplitList) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# split: {name}")?;
    for &(r, c, class) in split {
        writeln!(w, "{r},{c},{class}")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a split file written by [`write_split`]. Blank lines and `#`
/// comments are skipped.
pub fn read_split(path: &Path) -> Result<SplitList, IoError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let mut parts = text.split(',');
        let bad = || IoError::BadSplitLine { line: i + 1, text: text.to_string() };
        let row = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let col = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let class = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        out.push((row, col, class));
    }
    Ok(out)
}

/// Decode a binary (P6) PPM with 8-bit samples into (height, width,
/// interleaved RGB scaled to [0, 1]).
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f32>), IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = || IoError::BadPpm(path.display().to_string());

    // Header: "P6", width, height, maxval as whitespace-separated
    // tokens, with '#' comments running to end of line.
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, IoError> {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P6" {
        return Err(bad());
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| bad())?;
    let height: usize = token(&bytes)?.parse().map_err(|_| bad())?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| bad())?;
    if maxval == 0 || maxval > 255 {
        return Err(bad());
    }
    // Exactly one whitespace byte separates the header from the pixels.
    pos += 1;
    let expected = height * width * 3;
    if bytes.len() < pos + expected {
        return Err(IoError::SizeMismatch {
            path: path.display().to_string(),
            expected,
            got: bytes.len().saturating_sub(pos),
        });
    }
    let data = bytes[pos..pos + expected]
        .iter()
        .map(|&b| b as f32 / maxval as f32)
        .collect();
    Ok((height, width, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_scene;

    #[test]
    fn hsc_hsl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = synth_scene(3, 9, 7, 5, 0.2, 42).unwrap();
        let cube_path = dir.path().join("scene.hsc");
        let label_path = dir.path().join("scene.hsl");
        write_hsc(&cube_path, &scene).unwrap();
        write_hsl(&label_path, &scene).unwrap();

        let mut back = read_hsc(&cube_path).unwrap();
        assert!(back.labels.iter().all(|&l| l == 0));
        read_hsl(&label_path, &mut back).unwrap();
        assert_eq!(back, scene);

        // Header bytes are exactly as specified.
        let raw = std::fs::read(&cube_path).unwrap();
        assert_eq!(&raw[0..4], b"HSC1");
        assert_eq!(u32::from_le_bytes(raw[4..8].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(raw[12..16].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(raw[16..20].try_into().unwrap()), 1);
        assert_eq!(raw.len(), 20 + 9 * 7 * 5 * 4);
    }

    #[test]
    fn hsl_shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let scene = synth_scene(2, 8, 6, 6, 0.1, 1).unwrap();
        let path = dir.path().join("labels.hsl");
        write_hsl(&path, &scene).unwrap();
        let mut other = synth_scene(2, 8, 5, 6, 0.1, 1).unwrap();
        assert!(matches!(read_hsl(&path, &mut other), Err(IoError::LabelShapeMismatch { .. })));
    }

    #[test]
    fn split_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        let split = vec![(0, 0, 1), (12, 7, 3), (999, 4, 2)];
        write_split(&path, "train", &split).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# split: train\n"));
        assert_eq!(read_split(&path).unwrap(), split);

        std::fs::write(&path, "# split: broken\n1,2\n").unwrap();
        assert!(matches!(read_split(&path), Err(IoError::BadSplitLine { line: 2, .. })));
    }

    #[test]
    fn ppm_decoding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]);
        std::fs::write(&path, &bytes).unwrap();
        let (h, w, rgb) = read_ppm(&path).unwrap();
        assert_eq!((h, w), (2, 2));
        assert_eq!(rgb[0..3], [1.0, 0.0, 0.0]);
        assert_eq!(rgb[3..6], [0.0, 1.0, 0.0]);
        assert_eq!(rgb[9..12], [1.0, 1.0, 1.0]);

        std::fs::write(&path, b"P5\n2 2\n255\n").unwrap();
        assert!(matches!(read_ppm(&path), Err(IoError::BadPpm(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.hsc");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(read_hsc(&path), Err(IoError::BadMagic { .. })));
    }
}
