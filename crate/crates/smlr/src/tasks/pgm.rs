//! Binary PGM (P5) reader.
//!
//! Accepted grammar: ASCII `P5`, whitespace, width, height, maxval (<= 255),
//! a single whitespace byte, then `width * height` raw bytes row-major.

use std::path::Path;

use crate::error::{Error, Result};

pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels scaled to `[0, 1]` (value / maxval).
    pub pixels: Vec<f64>,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Pgm {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads one ASCII integer token, skipping leading whitespace.
fn read_int(bytes: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<usize> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(bad(path, format!("expected integer for {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(path, format!("unparseable {what}")))
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(bad(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let width = read_int(&bytes, &mut pos, path, "width")?;
    let height = read_int(&bytes, &mut pos, path, "height")?;
    let maxval = read_int(&bytes, &mut pos, path, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(bad(path, format!("maxval {maxval} out of range 1..=255")));
    }
    if width == 0 || height == 0 {
        return Err(bad(path, format!("degenerate dimensions {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad(path, "missing whitespace before pixel data"));
    }
    pos += 1;
    let need = width * height;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(bad(
            path,
            format!("payload has {} bytes, needs {need}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(bad(
            path,
            format!("payload has {} trailing bytes", payload.len() - need),
        ));
    }
    let pixels = payload
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    Ok(PgmImage {
        width,
        height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_imagedir_source, sample_episode, Split};
    use crate::stream;

    fn write_pgm(path: &Path, w: usize, h: usize, maxval: usize, payload: &[u8]) {
        let mut bytes = format!("P5 {w} {h} {maxval} ").into_bytes();
        bytes.extend_from_slice(payload);
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn scales_pixels_by_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.pgm");
        write_pgm(&file, 2, 2, 255, &[0, 255, 0, 255]);
        let img = read_pgm(&file).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixels, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_non_p5_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let ascii = dir.path().join("ascii.pgm");
        std::fs::write(&ascii, b"P2 2 2 255 0 1 2 3").unwrap();
        assert!(matches!(read_pgm(&ascii), Err(Error::Pgm { .. })));

        let short = dir.path().join("short.pgm");
        std::fs::write(&short, b"P5 2 2 255 \x00\x01").unwrap();
        assert!(matches!(read_pgm(&short), Err(Error::Pgm { .. })));
    }

    #[test]
    fn imagedir_source_counts_and_dim() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["a", "b"] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            for i in 0..3 {
                write_pgm(
                    &cdir.join(format!("{i}.pgm")),
                    2,
                    2,
                    255,
                    &[i as u8, 255, 0, 255],
                );
            }
        }
        let src = make_imagedir_source(dir.path(), Split::MetaTrain).unwrap();
        assert_eq!(src.class_count(), 2);
        assert_eq!(src.input_dim(), 4);
        assert_eq!(src.class_names(), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn missing_directory_error_names_the_path() {
        let err = make_imagedir_source(Path::new("/nonexistent/classes"), Split::MetaTest);
        match err {
            Err(Error::Io { path, .. }) => {
                assert_eq!(path, Path::new("/nonexistent/classes"))
            }
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        std::fs::create_dir(&a).unwrap();
        write_pgm(&a.join("0.pgm"), 2, 2, 255, &[0; 4]);
        write_pgm(&a.join("1.pgm"), 3, 1, 255, &[0; 3]);
        assert!(matches!(
            make_imagedir_source(dir.path(), Split::MetaTrain),
            Err(Error::Pgm { .. })
        ));
    }

    #[test]
    fn class_too_small_is_reported_with_name() {
        let dir = tempfile::tempdir().unwrap();
        for class in ["tiny", "full"] {
            let cdir = dir.path().join(class);
            std::fs::create_dir(&cdir).unwrap();
            let count = if class == "tiny" { 1 } else { 4 };
            for i in 0..count {
                write_pgm(&cdir.join(format!("{i}.pgm")), 1, 1, 255, &[i as u8]);
            }
        }
        let src = make_imagedir_source(dir.path(), Split::MetaTrain).unwrap();
        let mut rng = stream::derive(0, &[stream::tag::ROUND, 0]);
        // Asking for 2 classes with K+Q = 3 must trip on "tiny".
        let err = sample_episode(&src, 2, 1, 2, &mut rng);
        assert!(matches!(
            err,
            Err(Error::ClassTooFewImages { class, have: 1, need: 3 }) if class == "tiny"
        ));
    }
}
