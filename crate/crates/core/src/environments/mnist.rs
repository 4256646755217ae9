//! IDX files (the MNIST distribution format).
//!
//! Images: big-endian `u32` magic `0x00000803`, count, rows, cols, then
//! `count·rows·cols` unsigned bytes. Labels: magic `0x00000801`, count, then
//! `count` bytes.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images scaled to `[0, 1]` and their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MnistDataset {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels of all images, `len() · rows · cols` entries.
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        for &l in &self.labels {
            h[(l as usize).min(9)] += 1;
        }
        h
    }
}

fn fmt_err(field: &str, message: impl Into<String>) -> Error {
    Error::Format {
        field: field.to_string(),
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| fmt_err(field, "file truncated inside the header"))
}

/// Parses an image file; returns `(count, rows, cols, raw pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0, "images.magic")?;
    if magic != IMAGES_MAGIC {
        return Err(fmt_err(
            "images.magic",
            format!("expected 0x{IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let count = read_u32(bytes, 4, "images.count")? as usize;
    let rows = read_u32(bytes, 8, "images.rows")? as usize;
    let cols = read_u32(bytes, 12, "images.cols")? as usize;
    if rows == 0 || cols == 0 {
        return Err(fmt_err("images.rows", "zero image dimension"));
    }
    let need = count * rows * cols;
    let data = &bytes[16..];
    if data.len() < need {
        return Err(fmt_err(
            "images.pixels",
            format!("expected {need} pixel bytes, found {}", data.len()),
        ));
    }
    Ok((count, rows, cols, &data[..need]))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0, "labels.magic")?;
    if magic != LABELS_MAGIC {
        return Err(fmt_err(
            "labels.magic",
            format!("expected 0x{LABELS_MAGIC:08x}, found 0x{magic:08x}"),
        ));
    }
    let count = read_u32(bytes, 4, "labels.count")? as usize;
    let data = &bytes[8..];
    if data.len() < count {
        return Err(fmt_err(
            "labels.data",
            format!("expected {count} label bytes, found {}", data.len()),
        ));
    }
    let labels = &data[..count];
    if let Some(bad) = labels.iter().position(|&l| l > 9) {
        return Err(fmt_err(
            "labels.data",
            format!("label {} at index {bad} is not a digit", labels[bad]),
        ));
    }
    Ok(labels)
}

pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<MnistDataset> {
    let img = std::fs::read(images_path)?;
    let lab = std::fs::read(labels_path)?;
    let (count, rows, cols, raw) = parse_images(&img)?;
    let labels = parse_labels(&lab)?;
    if labels.len() != count {
        return Err(fmt_err(
            "labels.count",
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    Ok(MnistDataset {
        rows,
        cols,
        pixels: raw.iter().map(|&p| p as f64 / 255.0).collect(),
        labels: labels.to_vec(),
    })
}

/// Writes raw bytes in IDX layout; used for fixtures.
pub fn write_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    let count = labels.len();
    if pixels.len() != count * rows * cols {
        return Err(crate::error::invalid(
            "pixel count does not match labels and shape",
        ));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + count);
    for v in [LABELS_MAGIC, count as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lab)?;
    Ok(())
}

/// Locates the training image/label files in `dir`, accepting both the
/// `-idx3-ubyte` and `.idx3-ubyte` spellings.
pub fn find_mnist_train(dir: impl AsRef<Path>) -> Option<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    let pick = |names: &[&str]| names.iter().map(|n| dir.join(n)).find(|p| p.is_file());
    let images = pick(&["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?;
    let labels = pick(&["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?;
    Some((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        write_mnist_idx(&ip, &lp, 28, 28, &pixels, &[3, 7]).unwrap();
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![3, 7]);
        for (a, &b) in ds.pixels.iter().zip(&pixels) {
            assert_eq!(*a, b as f64 / 255.0);
        }
    }

    #[test]
    fn truncated_header() {
        let err = parse_images(&[0, 0, 8, 3, 0, 0]).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "images.count"));
    }

    #[test]
    fn bad_magic_and_count_mismatch() {
        let err = parse_labels(&[0, 0, 8, 3, 0, 0, 0, 0]).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "labels.magic"));
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_mnist_idx(&ip, &lp, 1, 1, &[0, 1], &[1, 2]).unwrap();
        let mut lab = std::fs::read(&lp).unwrap();
        lab[7] = 1;
        lab.truncate(9);
        std::fs::write(&lp, lab).unwrap();
        let err = load_mnist_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "labels.count"));
    }
}
