//! Dataset ingestion: IDX-format images/labels (MNIST, Fashion-MNIST),
//! CIFAR-10 binary batches, and a deterministic synthetic digit set for
//! self-contained runs.
//!
//! Images come out flattened to `[0, 1]` row vectors; labels as `0..M-1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

/// A loaded split: images as a `(n, pixels)` tensor, labels per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First `n` samples (cheap desk-scale subsetting).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let cols = self.images.cols();
        let data = self.images.data()[..n * cols].to_vec();
        Dataset {
            images: Tensor::from_vec(n, cols, data),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    /// Rows selected by index, in order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let cols = self.images.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(self.images.row_slice(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            images: Tensor::from_vec(idx.len(), cols, data),
            labels,
            num_classes: self.num_classes,
        }
    }
}

/// Known dataset names for the CLI / config layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
    /// Procedurally generated digit glyphs, no files required.
    Synth,
}

impl DatasetName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "fashion_mnist" => Ok(Self::FashionMnist),
            "cifar10" => Ok(Self::Cifar10),
            "synth" => Ok(Self::Synth),
            other => Err(Error::invalid(format!("unknown dataset '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::FashionMnist => "fashion_mnist",
            Self::Cifar10 => "cifar10",
            Self::Synth => "synth",
        }
    }

    pub fn source_len(&self) -> usize {
        match self {
            Self::Cifar10 => 3072,
            _ => 784,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Load `name`/`split` from `data_dir`. IDX file names follow the standard
/// distribution (`train-images-idx3-ubyte`, ...); CIFAR-10 uses the binary
/// batches. `Synth` generates deterministically from `seed` and needs no
/// files.
pub fn load_dataset(
    name: DatasetName,
    split: Split,
    data_dir: &Path,
    seed: u64,
) -> Result<Dataset> {
    match name {
        DatasetName::Mnist | DatasetName::FashionMnist => {
            let (img, lbl) = idx_file_names(split);
            let images = read_idx_images(&data_dir.join(img))?;
            let labels = read_idx_labels(&data_dir.join(lbl))?;
            if images.rows() != labels.len() {
                return Err(Error::format(format!(
                    "image/label count mismatch: {} vs {}",
                    images.rows(),
                    labels.len()
                )));
            }
            Ok(Dataset {
                images,
                labels,
                num_classes: 10,
            })
        }
        DatasetName::Cifar10 => load_cifar10(data_dir, split),
        DatasetName::Synth => {
            let (n, gen_seed) = match split {
                Split::Train => (10_000, seed),
                Split::Test => (2_000, seed.wrapping_add(1)),
            };
            Ok(generate_synth(n, gen_seed))
        }
    }
}

fn idx_file_names(split: Split) -> (&'static str, &'static str) {
    match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }
}

/// IDX image file: big-endian magic 2051, count, rows, cols, then raw bytes.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(
        File::open(path).map_err(|_| Error::Missing(path.display().to_string()))?,
    );
    let magic = read_u32_be(&mut r)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::format(format!(
            "bad IDX image magic {magic} (expected {IDX_IMAGE_MAGIC}) in {}",
            path.display()
        )));
    }
    let count = read_u32_be(&mut r)? as usize;
    let rows = read_u32_be(&mut r)? as usize;
    let cols = read_u32_be(&mut r)? as usize;
    let mut bytes = vec![0u8; count * rows * cols];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("truncated IDX image file {}", path.display())))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::format(format!(
            "trailing bytes in IDX image file {}",
            path.display()
        )));
    }
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(count, rows * cols, data))
}

/// IDX label file: big-endian magic 2049, count, then one byte per label.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = BufReader::new(
        File::open(path).map_err(|_| Error::Missing(path.display().to_string()))?,
    );
    let magic = read_u32_be(&mut r)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::format(format!(
            "bad IDX label magic {magic} (expected {IDX_LABEL_MAGIC}) in {}",
            path.display()
        )));
    }
    let count = read_u32_be(&mut r)? as usize;
    let mut bytes = vec![0u8; count];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("truncated IDX label file {}", path.display())))?;
    Ok(bytes)
}

/// Write images (values clamped to `[0,1]`, quantized to bytes) in IDX format.
pub fn write_idx_images(path: &Path, images: &Tensor, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != images.cols() {
        return Err(Error::Dimension {
            what: "idx image geometry",
            expected: images.cols(),
            got: rows * cols,
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(images.rows() as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    for &v in images.data() {
        w.write_all(&[(v.clamp(0.0, 1.0) * 255.0).round() as u8])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

fn load_cifar10(data_dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|i| data_dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        Split::Test => vec![data_dir.join("test_batch.bin")],
    };
    const REC: usize = 1 + 3072;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let bytes = std::fs::read(&f).map_err(|_| Error::Missing(f.display().to_string()))?;
        if bytes.len() % REC != 0 {
            return Err(Error::format(format!(
                "CIFAR-10 batch {} is not a whole number of records",
                f.display()
            )));
        }
        for rec in bytes.chunks_exact(REC) {
            let label = rec[0];
            if label > 9 {
                return Err(Error::format(format!("CIFAR-10 label {label} out of range")));
            }
            labels.push(label);
            data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    let n = labels.len();
    Ok(Dataset {
        images: Tensor::from_vec(n, 3072, data),
        labels,
        num_classes: 10,
    })
}

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("file too short for header"))?;
    Ok(u32::from_be_bytes(buf))
}

// --- synthetic digit glyphs -------------------------------------------------

// Seven-segment rectangles in a 16x20 glyph box: (x0, y0, x1, y1).
const SEGMENTS: [(usize, usize, usize, usize); 7] = [
    (2, 0, 13, 2),   // A top
    (12, 1, 15, 10), // B upper right
    (12, 10, 15, 19),// C lower right
    (2, 18, 13, 20), // D bottom
    (0, 10, 3, 19),  // E lower left
    (0, 1, 3, 10),   // F upper left
    (2, 9, 13, 11),  // G middle
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
    &[0, 5, 6, 2, 3, 4],    // 6
    &[0, 1, 2],             // 7
    &[0, 1, 2, 3, 4, 5, 6], // 8
    &[0, 1, 2, 3, 5, 6],    // 9
];

/// Deterministic 28x28 ten-class digit images: seven-segment glyphs with
/// random position, shear, per-segment intensity and pixel noise.
pub fn generate_synth(n: usize, seed: u64) -> Dataset {
    let mut rng = SeedRng::from_seed(seed);
    let mut images = Tensor::zeros(n, 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = rng.below(10);
        labels.push(digit as u8);
        let shear = rng.uniform(-0.10, 0.10);
        let dx = rng.below(9) as isize - 4;
        let dy = rng.below(7) as isize - 3;
        let base = rng.uniform(0.65, 1.0);

        let mut canvas = [[0.0f64; 28]; 28];
        for &s in DIGIT_SEGMENTS[digit] {
            let (x0, y0, x1, y1) = SEGMENTS[s];
            let inten = (base * rng.uniform(0.9, 1.1)).clamp(0.0, 1.0);
            for y in (6 + dy + y0 as isize).max(0)..(6 + dy + y1 as isize).min(28) {
                for x in (6 + dx + x0 as isize).max(0)..(6 + dx + x1 as isize).min(28) {
                    canvas[y as usize][x as usize] = inten;
                }
            }
        }
        let row = images.row_slice_mut(i);
        for y in 0..28 {
            let shift = (shear * (y as f64 - 14.0)).round() as isize;
            for x in 0..28 {
                let src = x as isize + shift;
                let v = if (0..28).contains(&src) {
                    canvas[y][src as usize]
                } else {
                    0.0
                };
                row[y * 28 + x] = (v + 0.03 * rng.standard_normal()).clamp(0.0, 1.0);
            }
        }
    }
    Dataset {
        images,
        labels,
        num_classes: 10,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_preserves_pixels_and_counts() {
        let ds = generate_synth(50, 3);
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("train-images-idx3-ubyte");
        let lbl_path = dir.path().join("train-labels-idx1-ubyte");
        write_idx_images(&img_path, &ds.images, 28, 28).unwrap();
        write_idx_labels(&lbl_path, &ds.labels).unwrap();

        let images = read_idx_images(&img_path).unwrap();
        let labels = read_idx_labels(&lbl_path).unwrap();
        assert_eq!(images.rows(), 50);
        assert_eq!(images.cols(), 784);
        assert_eq!(labels, ds.labels);
        // Quantization to bytes is the only loss.
        for (a, b) in images.data().iter().zip(ds.images.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn idx_magic_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        let mut bytes = IDX_LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend(1u32.to_be_bytes());
        bytes.push(3);
        std::fs::write(&path, &bytes).unwrap();
        // Label file offered as image file -> magic mismatch.
        assert!(matches!(read_idx_images(&path), Err(Error::Format(_))));
    }

    #[test]
    fn idx_truncation_rejected() {
        let ds = generate_synth(10, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs");
        write_idx_images(&path, &ds.images, 28, 28).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(read_idx_images(&path), Err(Error::Format(_))));
    }

    #[test]
    fn synth_is_deterministic_and_labeled() {
        let a = generate_synth(20, 9);
        let b = generate_synth(20, 9);
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
        assert!(a.labels.iter().all(|&l| l < 10));
        assert!(a.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn cifar10_record_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat(128u8).take(3072));
        let mut two = rec.clone();
        two[0] = 2;
        let mut bytes = rec;
        bytes.extend(two);
        std::fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
        let ds = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![7, 2]);
        assert!((ds.images.get(0, 0) - 128.0 / 255.0).abs() < 1e-12);
    }
}
