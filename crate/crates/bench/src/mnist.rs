//! MNIST loading (big-endian IDX files) and a hermetic synthetic fallback.
//!
//! The tool never touches the network; `scripts/fetch_mnist.sh` documents
//! how to download the four IDX files. When no dataset is available the
//! synthetic generator produces separable Gaussian class blobs with the same
//! shape contracts (pixels in [0, 1], labels 0-9), so every experiment and
//! test can run offline.

use std::path::{Path, PathBuf};

use ntk_core::rng::{derive_seed, SplitMix64};
use ntk_core::DenseMatrix;

use crate::error::{HarnessError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A labeled image set: `images` is count x pixel_dim with entries in [0, 1].
#[derive(Debug, Clone)]
pub struct MnistDataset {
    pub images: DenseMatrix,
    pub labels: Vec<u8>,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.cols()
    }

    /// First `count` examples as a new dataset.
    pub fn take(&self, count: usize) -> MnistDataset {
        let count = count.min(self.len());
        let mut images = DenseMatrix::zeros(count, self.input_dim());
        for r in 0..count {
            images.row_mut(r).copy_from_slice(self.images.row(r));
        }
        MnistDataset {
            images,
            labels: self.labels[..count].to_vec(),
        }
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(HarnessError::Format {
            offset: bytes.len(),
            message: format!("file truncated while reading a u32 at offset {offset}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image file (magic 0x00000803, dims count x rows x cols)
/// into a count x (rows*cols) matrix scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<DenseMatrix> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(HarnessError::Format {
            offset: 0,
            message: format!("expected image magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let pixel_dim = rows * cols;
    let expected = 16 + count * pixel_dim;
    if bytes.len() < expected {
        return Err(HarnessError::Format {
            offset: bytes.len(),
            message: format!(
                "image payload truncated: need {expected} bytes for {count} images, have {}",
                bytes.len()
            ),
        });
    }
    let mut images = DenseMatrix::zeros(count, pixel_dim);
    for i in 0..count {
        let src = &bytes[16 + i * pixel_dim..16 + (i + 1) * pixel_dim];
        for (dst, &b) in images.row_mut(i).iter_mut().zip(src) {
            *dst = b as f64 / 255.0;
        }
    }
    Ok(images)
}

/// Parses an IDX label file (magic 0x00000801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(HarnessError::Format {
            offset: 0,
            message: format!("expected label magic {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(HarnessError::Format {
            offset: bytes.len(),
            message: format!(
                "label payload truncated: need {expected} bytes for {count} labels, have {}",
                bytes.len()
            ),
        });
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Loads a dataset from an image/label file pair.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<MnistDataset> {
    for p in [images_path, labels_path] {
        if !p.exists() {
            return Err(HarnessError::DatasetNotFound {
                path: p.to_path_buf(),
            });
        }
    }
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.rows() != labels.len() {
        return Err(HarnessError::Format {
            offset: 0,
            message: format!(
                "image count {} does not match label count {}",
                images.rows(),
                labels.len()
            ),
        });
    }
    Ok(MnistDataset { images, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads the conventional filename pair from a directory.
pub fn load_mnist_split(dir: &Path, split: Split) -> Result<MnistDataset> {
    let (images, labels) = match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let dir: PathBuf = dir.to_path_buf();
    load_mnist(&dir.join(images), &dir.join(labels))
}

fn blob_centers(classes: usize, input_dim: usize, seed: u64) -> DenseMatrix {
    let mut rng = SplitMix64::new(seed);
    let mut centers = DenseMatrix::zeros(classes, input_dim);
    for c in 0..classes {
        for d in 0..input_dim {
            centers.set(c, d, 0.25 + 0.5 * rng.next_f64());
        }
    }
    centers
}

fn blob_samples(centers: &DenseMatrix, count: usize, seed: u64) -> MnistDataset {
    let classes = centers.rows();
    let input_dim = centers.cols();
    let mut rng = SplitMix64::new(seed);
    let mut images = DenseMatrix::zeros(count, input_dim);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        labels.push(class as u8);
        for d in 0..input_dim {
            let x = centers.get(class, d) + 0.08 * rng.next_standard_normal();
            images.set(i, d, x.clamp(0.0, 1.0));
        }
    }
    // Shuffle examples so minibatches mix classes.
    let mut order: Vec<usize> = (0..count).collect();
    rng.shuffle(&mut order);
    let mut shuffled = DenseMatrix::zeros(count, input_dim);
    let mut shuffled_labels = vec![0u8; count];
    for (dst, &src) in order.iter().enumerate() {
        shuffled.row_mut(dst).copy_from_slice(images.row(src));
        shuffled_labels[dst] = labels[src];
    }
    MnistDataset {
        images: shuffled,
        labels: shuffled_labels,
    }
}

/// Separable Gaussian class blobs with pixels clamped into [0, 1]; the
/// offline stand-in for MNIST. Labels cycle through the classes so every
/// class is populated. Class centers derive from the same seed, so two
/// calls with one seed share geometry.
pub fn synthetic_blobs(count: usize, input_dim: usize, classes: usize, seed: u64) -> MnistDataset {
    assert!(classes >= 1 && input_dim >= 1);
    let centers = blob_centers(classes, input_dim, derive_seed(seed, 0));
    blob_samples(&centers, count, derive_seed(seed, 1))
}

/// Matched train/eval pair: both sets sample the same class centers but
/// from disjoint streams, so evaluation is held out yet learnable.
pub fn synthetic_blob_split(
    train_count: usize,
    eval_count: usize,
    input_dim: usize,
    classes: usize,
    seed: u64,
) -> (MnistDataset, MnistDataset) {
    assert!(classes >= 1 && input_dim >= 1);
    let centers = blob_centers(classes, input_dim, derive_seed(seed, 0));
    (
        blob_samples(&centers, train_count, derive_seed(seed, 1)),
        blob_samples(&centers, eval_count, derive_seed(seed, 2)),
    )
}

/// Builds an in-memory IDX image payload; used by tests to round-trip the
/// parser against known bytes.
pub fn encode_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        assert_eq!(img.len(), rows * cols);
        bytes.extend_from_slice(img);
    }
    bytes
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_round_trips_pixel_values() {
        let img0: Vec<u8> = (0..6).map(|i| (i * 40) as u8).collect();
        let img1: Vec<u8> = (0..6).map(|i| 255 - (i * 30) as u8).collect();
        let bytes = encode_idx_images(&[img0.clone(), img1.clone()], 2, 3);
        let parsed = parse_idx_images(&bytes).unwrap();
        assert_eq!(parsed.rows(), 2);
        assert_eq!(parsed.cols(), 6);
        for (c, &b) in img0.iter().enumerate() {
            assert_eq!(parsed.get(0, c), b as f64 / 255.0);
        }
        for (c, &b) in img1.iter().enumerate() {
            assert_eq!(parsed.get(1, c), b as f64 / 255.0);
        }
    }

    #[test]
    fn accepts_the_canonical_magic() {
        let bytes = encode_idx_images(&[vec![0u8; 4]], 2, 2);
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        assert!(parse_idx_images(&bytes).is_ok());
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = encode_idx_images(&[vec![0u8; 4]], 2, 2);
        bytes[3] = 0x01; // labels magic in an image file
        match parse_idx_images(&bytes) {
            Err(HarnessError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_reports_the_end_offset() {
        let bytes = encode_idx_images(&[vec![7u8; 9]], 3, 3);
        let cut = &bytes[..bytes.len() - 2];
        match parse_idx_images(cut) {
            Err(HarnessError::Format { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("expected format error, got {other:?}"),
        }
        // No partial dataset comes back.
        let labels = encode_idx_labels(&[1, 2, 3]);
        assert!(parse_idx_labels(&labels[..9]).is_err());
    }

    #[test]
    fn synthetic_blobs_respect_contracts() {
        let data = synthetic_blobs(60, 16, 10, 3);
        assert_eq!(data.len(), 60);
        assert_eq!(data.input_dim(), 16);
        for &x in data.images.data() {
            assert!((0.0..=1.0).contains(&x));
        }
        let mut counts = [0usize; 10];
        for &l in &data.labels {
            counts[l as usize] += 1;
        }
        assert!(
            counts.iter().all(|&c| c == 6),
            "balanced classes: {counts:?}"
        );
    }

    #[test]
    fn missing_files_point_at_the_fetch_script() {
        let err = load_mnist_split(Path::new("/nonexistent-dir"), Split::Train).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("fetch_mnist"), "{msg}");
    }
}
