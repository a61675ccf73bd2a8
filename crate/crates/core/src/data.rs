//! Dataset ingestion: IDX (MNIST-style) and CIFAR-10 binary readers, a seeded
//! synthetic blob generator, and seeded train/validation splitting.
//!
//! Loaders reject malformed input with typed errors and never return partial
//! datasets. Pixel bytes are scaled by 1/255 into [0, 1]; per-channel
//! standardization is a training-pipeline concern, not a loader concern,
//! because corruptions are defined on raw [0, 1] data.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{derive_stream, SplitMix64};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD_BYTES: usize = 3073;

/// Labeled inputs in [0, 1]. `image_side` is set when inputs are flattened
/// square images, which the 2-D corruptions need.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub image_side: Option<usize>,
}

impl Dataset {
    pub fn new(
        inputs: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
        image_side: Option<usize>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        for (idx, x) in inputs.iter().enumerate() {
            if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidInput(format!(
                    "input {idx} has value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            image_side,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Input width (0 for an empty dataset).
    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Tensor::len)
    }

    /// Borrowing view of selected samples as (input, label) pairs.
    pub fn batch(&self, indices: &[usize]) -> Vec<(&Tensor, usize)> {
        indices
            .iter()
            .map(|&i| (&self.inputs[i], self.labels[i]))
            .collect()
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: format!("truncated at byte {offset}"),
        })
}

/// Reads an IDX image/label file pair (big-endian magics 0x803 / 0x801).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images_path)?;
    let lbl_bytes = std::fs::read(labels_path)?;

    let img_magic = read_u32_be(&img_bytes, 0, images_path)?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            msg: format!("bad magic {img_magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let pixel_bytes = &img_bytes[16..];
    if pixel_bytes.len() != count * rows * cols {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            msg: format!(
                "expected {} pixel bytes for {count} x {rows} x {cols}, found {}",
                count * rows * cols,
                pixel_bytes.len()
            ),
        });
    }

    let lbl_magic = read_u32_be(&lbl_bytes, 0, labels_path)?;
    if lbl_magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            msg: format!("bad magic {lbl_magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_count != count {
        return Err(Error::Consistency(format!(
            "{count} images but {lbl_count} labels"
        )));
    }
    let label_bytes = &lbl_bytes[8..];
    if label_bytes.len() != count {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            msg: format!("expected {count} label bytes, found {}", label_bytes.len()),
        });
    }

    let dim = rows * cols;
    let mut inputs = Vec::with_capacity(count);
    for i in 0..count {
        let data: Vec<f64> = pixel_bytes[i * dim..(i + 1) * dim]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        inputs.push(Tensor::vector(&data)?);
    }
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let image_side = (rows == cols && rows > 0).then_some(rows);
    Dataset::new(inputs, labels, num_classes.max(1), image_side)
}

/// Writes a dataset as an IDX file pair. Values quantize to round(v * 255);
/// data already on the 1/255 grid round-trips bit-exactly.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let side = dataset.image_side.ok_or_else(|| {
        Error::InvalidInput("write_idx needs square-image datasets (image_side set)".into())
    })?;
    let count = dataset.len() as u32;

    let mut img = std::io::BufWriter::new(std::fs::File::create(images_path)?);
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    img.write_all(&count.to_be_bytes())?;
    img.write_all(&(side as u32).to_be_bytes())?;
    img.write_all(&(side as u32).to_be_bytes())?;
    for x in &dataset.inputs {
        let bytes: Vec<u8> = x
            .data()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        img.write_all(&bytes)?;
    }
    img.flush()?;

    let mut lbl = std::io::BufWriter::new(std::fs::File::create(labels_path)?);
    lbl.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lbl.write_all(&count.to_be_bytes())?;
    let bytes: Vec<u8> = dataset.labels.iter().map(|&l| l as u8).collect();
    lbl.write_all(&bytes)?;
    lbl.flush()?;
    Ok(())
}

/// Reads one CIFAR-10 binary batch file: records of 1 label byte + 3072
/// channel-major pixel bytes.
pub fn load_cifar10_bin(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!(
                "file size {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
                bytes.len()
            ),
        });
    }
    let count = bytes.len() / CIFAR_RECORD_BYTES;
    let mut inputs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let rec = &bytes[i * CIFAR_RECORD_BYTES..(i + 1) * CIFAR_RECORD_BYTES];
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("record {i}: label {label} > 9"),
            });
        }
        labels.push(label);
        let data: Vec<f64> = rec[1..].iter().map(|&b| b as f64 / 255.0).collect();
        inputs.push(Tensor::vector(&data)?);
    }
    Dataset::new(inputs, labels, 10, Some(32))
}

/// Seeded Gaussian blobs: one cluster per class with well-separated centers
/// (axis-aligned simplex vertices when `classes <= dim`, seeded uniform
/// otherwise), isotropic noise of the given spread, clipped to [0, 1].
/// Labels cycle 0..classes, so counts are balanced.
pub fn synth_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || classes == 0 || dim == 0 {
        return Err(Error::InvalidInput(format!(
            "blob sizes must be positive, got n={n} classes={classes} dim={dim}"
        )));
    }
    if spread < 0.0 || !spread.is_finite() {
        return Err(Error::InvalidInput(format!(
            "spread must be >= 0, got {spread}"
        )));
    }
    let mut center_rng = SplitMix64::new(derive_stream(seed, &[0]));
    let mut centers = Vec::with_capacity(classes);
    if classes <= dim {
        // Each class owns one seeded-permuted axis (0.75 vs 0.25 elsewhere),
        // which guarantees a margin, plus +-0.1 per-coordinate jitter so
        // every coordinate carries some class signal (image-like feature
        // redundancy rather than a single decisive pixel).
        let mut axes: Vec<usize> = (0..dim).collect();
        center_rng.shuffle(&mut axes);
        for c in 0..classes {
            let mut center = vec![0.25; dim];
            center[axes[c]] = 0.75;
            for v in center.iter_mut() {
                *v += 0.2 * (center_rng.next_f64() - 0.5);
            }
            centers.push(center);
        }
    } else {
        for _ in 0..classes {
            centers.push((0..dim).map(|_| 0.2 + 0.6 * center_rng.next_f64()).collect());
        }
    }

    let mut noise_rng = SplitMix64::new(derive_stream(seed, &[1]));
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let point: Vec<f64> = centers[class]
            .iter()
            .map(|&c| (c + spread * noise_rng.normal()).clamp(0.0, 1.0))
            .collect();
        inputs.push(Tensor::vector(&point)?);
        labels.push(class);
    }
    let side = (dim as f64).sqrt().round() as usize;
    let image_side = (side * side == dim).then_some(side);
    Dataset::new(inputs, labels, classes, image_side)
}

/// Seeded disjoint split into (train, val); train gets floor(n * (1 - fraction)).
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.len();
    let mut indices: Vec<usize> = (0..n).collect();
    SplitMix64::new(derive_stream(seed, &[2])).shuffle(&mut indices);
    let train_len = ((n as f64) * (1.0 - fraction)).floor() as usize;
    let take = |idx: &[usize]| -> Result<Dataset> {
        Dataset::new(
            idx.iter().map(|&i| dataset.inputs[i].clone()).collect(),
            idx.iter().map(|&i| dataset.labels[i]).collect(),
            dataset.num_classes,
            dataset.image_side,
        )
    };
    Ok((take(&indices[..train_len])?, take(&indices[train_len..])?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn idx_crafted_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        // One 2x2 image with bytes {0, 128, 255, 64}, label 3.
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0u8, 128, 255, 64]);
        std::fs::write(&img_path, &img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&1u32.to_be_bytes());
        lbl.push(3u8);
        std::fs::write(&lbl_path, &lbl).unwrap();

        let ds = load_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels[0], 3);
        assert_eq!(ds.image_side, Some(2));
        let expected = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
        for (a, b) in ds.inputs[0].data().iter().zip(&expected) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn idx_empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&0u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        std::fs::write(&img_path, &img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&0u32.to_be_bytes());
        std::fs::write(&lbl_path, &lbl).unwrap();
        let ds = load_idx(&img_path, &lbl_path).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn idx_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&0xdead_beefu32.to_be_bytes());
        img.extend_from_slice(&[0u8; 12]);
        std::fs::write(&img_path, &img).unwrap();
        std::fs::write(&lbl_path, b"").unwrap();
        assert!(matches!(
            load_idx(&img_path, &lbl_path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn idx_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.push(10);
        std::fs::write(&img_path, &img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[1u8, 2]);
        std::fs::write(&lbl_path, &lbl).unwrap();
        assert!(matches!(
            load_idx(&img_path, &lbl_path),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn idx_truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0u8; 5]); // needs 8
        std::fs::write(&img_path, &img).unwrap();
        std::fs::write(&lbl_path, b"").unwrap();
        assert!(matches!(
            load_idx(&img_path, &lbl_path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn cifar_crafted_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = vec![7u8];
        bytes.extend_from_slice(&[255u8; 3072]);
        std::fs::write(&path, &bytes).unwrap();
        let ds = load_cifar10_bin(&path).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels[0], 7);
        assert_eq!(ds.image_side, Some(32));
        assert!(ds.inputs[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cifar_empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        std::fs::write(&path, b"").unwrap();
        assert!(load_cifar10_bin(&path).unwrap().is_empty());
    }

    #[test]
    fn cifar_bad_size_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        std::fs::write(&path, vec![0u8; 3074]).unwrap();
        assert!(matches!(
            load_cifar10_bin(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn cifar_bad_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = vec![10u8];
        bytes.extend_from_slice(&[0u8; 3072]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_cifar10_bin(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn blobs_one_per_class_is_label_permutation() {
        let ds = synth_blobs(4, 4, 8, 0.1, 1).unwrap();
        let mut labels = ds.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn blobs_zero_spread_nearest_centroid_is_perfect() {
        let ds = synth_blobs(100, 5, 10, 0.0, 7).unwrap();
        // With spread 0 every point IS its center; nearest-centroid gets 0.
        let mut centroids = vec![vec![0.0; 10]; 5];
        let mut counts = vec![0usize; 5];
        for (x, &l) in ds.inputs.iter().zip(&ds.labels) {
            counts[l] += 1;
            for (c, v) in centroids[l].iter_mut().zip(x.data()) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= *n as f64;
            }
        }
        let mut wrong = 0;
        for (x, &l) in ds.inputs.iter().zip(&ds.labels) {
            let best = (0..5)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a]
                        .iter()
                        .zip(x.data())
                        .map(|(c, v)| (c - v) * (c - v))
                        .sum();
                    let db: f64 = centroids[b]
                        .iter()
                        .zip(x.data())
                        .map(|(c, v)| (c - v) * (c - v))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best != l {
                wrong += 1;
            }
        }
        assert_eq!(wrong, 0);
    }

    #[test]
    fn blobs_small_spread_is_linearly_separable() {
        // Nearest-centroid (the Bayes rule for equal isotropic Gaussians) as
        // the separability oracle: <= 1% error at spread 0.05.
        let ds = synth_blobs(1000, 2, 2, 0.05, 3).unwrap();
        let mut centroids = vec![vec![0.0; 2]; 2];
        let mut counts = vec![0usize; 2];
        for (x, &l) in ds.inputs.iter().zip(&ds.labels) {
            counts[l] += 1;
            for (c, v) in centroids[l].iter_mut().zip(x.data()) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= *n as f64;
            }
        }
        let mut wrong = 0;
        for (x, &l) in ds.inputs.iter().zip(&ds.labels) {
            let d = |c: &[f64]| -> f64 {
                c.iter().zip(x.data()).map(|(c, v)| (c - v) * (c - v)).sum()
            };
            let pred = if d(&centroids[0]) <= d(&centroids[1]) { 0 } else { 1 };
            if pred != l {
                wrong += 1;
            }
        }
        assert!(wrong <= 10, "{wrong} errors out of 1000");
    }

    #[test]
    fn blobs_deterministic_per_seed() {
        let a = synth_blobs(50, 3, 6, 0.1, 11).unwrap();
        let b = synth_blobs(50, 3, 6, 0.1, 11).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn blobs_invalid_sizes_rejected() {
        assert!(synth_blobs(0, 2, 2, 0.1, 0).is_err());
        assert!(synth_blobs(10, 0, 2, 0.1, 0).is_err());
        assert!(synth_blobs(10, 2, 0, 0.1, 0).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = synth_blobs(100, 4, 8, 0.1, 5).unwrap();
        let (train, val) = split(&ds, 0.1, 9).unwrap();
        assert_eq!(train.len(), 90);
        assert_eq!(val.len(), 10);

        // Union is the original multiset.
        let mut all: Vec<(Vec<u64>, usize)> = Vec::new();
        for (x, &l) in train.inputs.iter().chain(&val.inputs).zip(
            train.labels.iter().chain(&val.labels),
        ) {
            all.push((x.data().iter().map(|v| v.to_bits()).collect(), l));
        }
        let mut orig: Vec<(Vec<u64>, usize)> = ds
            .inputs
            .iter()
            .zip(&ds.labels)
            .map(|(x, &l)| (x.data().iter().map(|v| v.to_bits()).collect(), l))
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_deterministic_per_seed() {
        let ds = synth_blobs(60, 3, 4, 0.1, 2).unwrap();
        let (a_train, a_val) = split(&ds, 0.25, 4).unwrap();
        let (b_train, b_val) = split(&ds, 0.25, 4).unwrap();
        assert_eq!(a_train.labels, b_train.labels);
        assert_eq!(a_val.labels, b_val.labels);
        assert_eq!(a_train.inputs, b_train.inputs);
        assert_eq!(a_val.inputs, b_val.inputs);
    }

    #[test]
    fn split_invalid_fraction_rejected() {
        let ds = synth_blobs(10, 2, 2, 0.1, 1).unwrap();
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
    }

    proptest! {
        // Quantized values round-trip through the IDX writer/reader bitwise.
        #[test]
        fn idx_round_trip(raw in proptest::collection::vec(0u8..=255, 32), seed in 0u64..100) {
            let dir = tempfile::tempdir().unwrap();
            let img_path = dir.path().join("img.idx");
            let lbl_path = dir.path().join("lbl.idx");
            let inputs: Vec<Tensor> = raw
                .chunks(16)
                .map(|c| {
                    Tensor::vector(&c.iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>())
                        .unwrap()
                })
                .collect();
            let labels = vec![(seed % 10) as usize; inputs.len()];
            let ds = Dataset::new(inputs, labels, 10, Some(4)).unwrap();
            write_idx(&ds, &img_path, &lbl_path).unwrap();
            let back = load_idx(&img_path, &lbl_path).unwrap();
            prop_assert_eq!(&back.inputs, &ds.inputs);
            prop_assert_eq!(&back.labels, &ds.labels);
        }
    }
}
