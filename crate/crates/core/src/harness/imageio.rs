use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Gap between grid cells, in pixels.
pub const SEPARATOR: usize = 2;
const SEPARATOR_VALUE: u8 = 255;

/// A decoded 8-bit PGM/PPM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Interleaved samples, row-major.
    pub data: Vec<u8>,
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the images side by side in a single row.
pub fn save_image_grid(images: &[Tensor], path: impl AsRef<Path>) -> Result<()> {
    save_image_grid_with_columns(images, images.len().max(1), path)
}

/// Writes `[C, H, W]` images (C = 1 or 3) as a grid with `columns` cells per
/// row, separated by white two-pixel gaps. Single-channel images produce a
/// binary PGM, three-channel images a binary PPM.
pub fn save_image_grid_with_columns(images: &[Tensor], columns: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let pnm = render_grid(images, columns)?;
    let magic = if pnm.channels == 1 { "P5" } else { "P6" };
    let mut bytes = format!("{magic}\n{} {}\n255\n", pnm.width, pnm.height).into_bytes();
    bytes.extend_from_slice(&pnm.data);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// The grid as an in-memory image.
pub fn render_grid(images: &[Tensor], columns: usize) -> Result<Pnm> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("no images to save".into()))?;
    let shape = first.shape().to_vec();
    if shape.len() != 3 || !(shape[0] == 1 || shape[0] == 3) {
        return Err(Error::InvalidShape(format!("images must be [1|3, H, W], got {shape:?}")));
    }
    if let Some(bad) = images.iter().find(|t| t.shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch { op: "image_grid", lhs: shape, rhs: bad.shape().to_vec() });
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let columns = columns.clamp(1, images.len());
    let rows = images.len().div_ceil(columns);
    let width = columns * w + (columns - 1) * SEPARATOR;
    let height = rows * h + (rows - 1) * SEPARATOR;
    let mut data = vec![SEPARATOR_VALUE; width * height * c];
    for (k, img) in images.iter().enumerate() {
        let (oy, ox) = ((k / columns) * (h + SEPARATOR), (k % columns) * (w + SEPARATOR));
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    data[((oy + i) * width + ox + j) * c + ch] = quantize(img.data()[(ch * h + i) * w + j]);
                }
            }
        }
    }
    Ok(Pnm { channels: c, width, height, data })
}

/// Reads a binary PGM (P5) or PPM (P6) file with maxval 255.
pub fn load_pnm(path: impl AsRef<Path>) -> Result<Pnm> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes)
}

pub fn parse_pnm(bytes: &[u8]) -> Result<Pnm> {
    let bad = |msg: &str| Error::DatasetFormat(format!("pnm: {msg}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    let channels = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(&format!("unsupported magic {other}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad number {s}")));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?;
    if data.len() != width * height * channels {
        return Err(bad(&format!("expected {} pixel bytes, found {}", width * height * channels, data.len())));
    }
    Ok(Pnm { channels, width, height, data: data.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_gray_image_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pgm");
        let img = Tensor::new(vec![1, 4, 4], (0..16).map(|k| k as f64 / 15.0).collect()).unwrap();
        save_image_grid(&[img], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(bytes.len(), 11 + 16);
        assert_eq!(bytes[11 + 15], 255);
    }

    #[test]
    fn clamp_and_grid_width() {
        assert_eq!(quantize(1.2), 255);
        assert_eq!(quantize(-0.3), 0);
        let imgs: Vec<Tensor> = (0..5).map(|_| Tensor::full(&[3, 2, 3], 0.5)).collect();
        let grid = render_grid(&imgs, 5).unwrap();
        assert_eq!(grid.width, 5 * 3 + 4 * 2);
        assert_eq!(grid.height, 2);
    }

    #[test]
    fn round_trip_reproduces_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.ppm");
        let imgs: Vec<Tensor> = (0..3)
            .map(|k| Tensor::new(vec![3, 2, 2], (0..12).map(|i| ((i + k) as f64 * 0.093) % 1.0).collect()).unwrap())
            .collect();
        save_image_grid_with_columns(&imgs, 2, &path).unwrap();
        let loaded = load_pnm(&path).unwrap();
        assert_eq!(loaded, render_grid(&imgs, 2).unwrap());
        assert_eq!((loaded.width, loaded.height), (2 * 2 + 2, 2 * 2 + 2));
        // top-left pixel, green channel of image 0
        assert_eq!(loaded.data[1], quantize(imgs[0].data()[4]));
    }
}
