//! Reader for the big-endian IDX format used by MNIST.

use std::fs;
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "{} truncated: need {} bytes at offset {}, file has {}",
                self.what,
                n,
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Parses IDX image and label buffers. Pixels are scaled by 1/255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let mut img = Cursor {
        bytes: images,
        pos: 0,
        what: "image file",
    };
    let magic = img.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::Format(format!("degenerate image size {rows}x{cols}")));
    }
    let pixels = img.take(n * dim)?;

    let mut lab = Cursor {
        bytes: labels,
        pos: 0,
        what: "label file",
    };
    let magic = lab.u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n_labels = lab.u32()? as usize;
    if n_labels != n {
        return Err(Error::Format(format!("{n} images but {n_labels} labels")));
    }
    let raw_labels = lab.take(n)?;
    if let Some(bad) = raw_labels.iter().find(|&&y| usize::from(y) >= MNIST_CLASSES) {
        return Err(Error::Format(format!("label byte {bad} outside 0..=9")));
    }

    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels = raw_labels.iter().map(|&y| usize::from(y)).collect();
    LabeledDataset::new(features, labels, dim, MNIST_CLASSES)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, rows: u32, cols: u32, px: &[u8]) -> Vec<u8> {
        let mut v = IMAGES_MAGIC.to_be_bytes().to_vec();
        for x in [n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(px);
        v
    }

    fn labels(ys: &[u8]) -> Vec<u8> {
        let mut v = LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&(ys.len() as u32).to_be_bytes());
        v.extend_from_slice(ys);
        v
    }

    #[test]
    fn parses_and_scales() {
        let d = parse_idx(&images(2, 1, 2, &[0, 255, 51, 102]), &labels(&[3, 9])).unwrap();
        assert_eq!((d.len(), d.dim(), d.num_classes()), (2, 2, 10));
        assert_eq!(d.row(0), &[0.0, 1.0]);
        assert!((d.row(1)[0] - 0.2).abs() < 1e-15);
        assert_eq!(d.labels(), &[3, 9]);
    }

    #[test]
    fn bad_magic() {
        let mut img = images(1, 1, 1, &[0]);
        img[3] = 0x01;
        assert!(matches!(parse_idx(&img, &labels(&[0])), Err(Error::Format(_))));
        let mut lab = labels(&[0]);
        lab[3] = 0x03;
        assert!(matches!(parse_idx(&images(1, 1, 1, &[0]), &lab), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_and_mismatched() {
        let img = images(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx(&img, &labels(&[0, 1])), Err(Error::Format(_))));
        let img = images(2, 1, 1, &[0, 0]);
        assert!(matches!(parse_idx(&img, &labels(&[0])), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&img[..5], &labels(&[0, 1])), Err(Error::Format(_))));
    }

    #[test]
    fn label_out_of_domain() {
        assert!(matches!(
            parse_idx(&images(1, 1, 1, &[0]), &labels(&[10])),
            Err(Error::Format(_))
        ));
    }
}
