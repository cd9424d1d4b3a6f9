//! 8-bit grayscale image files. Binary PGM (P5) is read and written;
//! reading dispatches on the file's magic bytes.

use std::path::Path;

use super::{io_err, DataError};
use crate::encoder::GrayImage;

/// Ink is stored dark on light: pixel value `v` is written as
/// `255 − round(255·v)`.
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<(), DataError> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend(
        image
            .pixels()
            .iter()
            .map(|v| 255 - (v * 255.0).round() as u8),
    );
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn decode_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::ImageDecode {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Parses a P5 file; `maxval` up to 255.
pub fn read_pgm(path: &Path, bytes: &[u8]) -> Result<GrayImage, DataError> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(decode_err(
            path,
            format!("unsupported magic {:?}", fields[0]),
        ));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| decode_err(path, format!("bad header field {s:?}")))
    };
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(decode_err(path, "unsupported dimensions or depth"));
    }
    pos += 1;
    let data = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| decode_err(path, "truncated pixel data"))?;
    let pixels = data
        .iter()
        .map(|&b| 1.0 - (f64::from(b).min(maxval as f64) / maxval as f64))
        .collect();
    GrayImage::new(height, width, pixels).map_err(|e| decode_err(path, e.to_string()))
}

pub fn read_image(path: &Path) -> Result<GrayImage, DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(b"P5") {
        read_pgm(path, &bytes)
    } else {
        Err(decode_err(path, "not a binary PGM file"))
    }
}
