//! IDX reader for MNIST-format image and label files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct MnistData {
    /// One flattened image per row, pixels scaled to `[0, 1]`.
    pub images: Matrix,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let chunk = bytes.get(at..at + 4).ok_or_else(|| Error::TruncatedFile {
        path: path.to_path_buf(),
        needed: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

fn check_len(bytes: &[u8], needed: usize, path: &Path) -> Result<()> {
    if bytes.len() < needed {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(())
}

fn parse_images(bytes: &[u8], path: &Path) -> Result<(Matrix, usize, usize)> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let px = rows * cols;
    check_len(bytes, 16 + n * px, path)?;
    let data = &bytes[16..16 + n * px];
    let images = Matrix::from_fn(n, px, |i, j| data[i * px + j] as f64 / 255.0);
    Ok((images, rows, cols))
}

fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    check_len(bytes, 8 + n, path)?;
    Ok(bytes[8..8 + n].to_vec())
}

/// Loads an image file and its label file. Counts must agree.
pub fn mnist_load(images_path: &Path, labels_path: &Path) -> Result<MnistData> {
    let (images, rows, cols) = parse_images(&fs::read(images_path)?, images_path)?;
    let labels = parse_labels(&fs::read(labels_path)?, labels_path)?;
    if images.nrows() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.nrows(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::invalid(format!("label {bad} outside 0..=9")));
    }
    Ok(MnistData {
        images,
        labels,
        rows,
        cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(magic: u32, n: u32, payload: usize) -> Vec<u8> {
        let mut b = Vec::new();
        for x in [magic, n, 28, 28] {
            b.extend_from_slice(&x.to_be_bytes());
        }
        b.extend((0..payload).map(|i| (i % 256) as u8));
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn parses_two_images() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &image_file(IMAGES_MAGIC, 2, 1568));
        let lp = write(dir.path(), "lbl", &label_file(&[3, 7]));
        let d = mnist_load(&ip, &lp).unwrap();
        assert_eq!(d.images.shape(), (2, 784));
        assert_eq!(d.labels, vec![3, 7]);
        assert_eq!(d.images[(0, 255)], 1.0);
        assert_eq!(d.images[(1, 0)], (784 % 256) as f64 / 255.0);
    }

    #[test]
    fn wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &image_file(0x0803_0000, 2, 1568));
        let lp = write(dir.path(), "lbl", &label_file(&[3, 7]));
        assert!(matches!(
            mnist_load(&ip, &lp),
            Err(Error::BadMagic {
                expected: IMAGES_MAGIC,
                ..
            })
        ));
        let ip = write(dir.path(), "img2", &image_file(IMAGES_MAGIC, 2, 1568));
        assert!(matches!(
            mnist_load(&ip, &ip),
            Err(Error::BadMagic {
                expected: LABELS_MAGIC,
                ..
            })
        ));
    }

    #[test]
    fn truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &image_file(IMAGES_MAGIC, 2, 1000));
        let lp = write(dir.path(), "lbl", &label_file(&[3, 7]));
        assert!(matches!(
            mnist_load(&ip, &lp),
            Err(Error::TruncatedFile {
                needed: 1584,
                found: 1016,
                ..
            })
        ));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ip = write(dir.path(), "img", &image_file(IMAGES_MAGIC, 2, 1568));
        let lp = write(dir.path(), "lbl", &label_file(&[3]));
        assert!(matches!(
            mnist_load(&ip, &lp),
            Err(Error::CountMismatch { images: 2, labels: 1 })
        ));
    }
}
