//! Labeled datasets: XOR corners, IDX decoding, subsetting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Matrix, Rng};

/// How raw inputs were mapped to the stored scale: `stored = raw * scale - offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    /// Per-feature offset subtracted after scaling; empty when not centered.
    pub offset: Vec<f64>,
    /// Human-readable unit of the stored inputs, e.g. "pixel/255".
    pub unit: String,
}

impl Normalization {
    pub fn identity(unit: &str) -> Self {
        Self { scale: 1.0, offset: Vec::new(), unit: String::from(unit) }
    }

    pub fn is_centered(&self) -> bool {
        !self.offset.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// One flattened sample per row.
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Per-sample shape before flattening, e.g. `[28, 28]`.
    pub sample_shape: Vec<usize>,
    pub split: String,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, classes: usize, split: &str, normalization: Normalization) -> Result<Self> {
        if labels.len() != inputs.rows {
            return Err(invalid!("{} labels for {} samples", labels.len(), inputs.rows));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(invalid!("label {} outside [0, {})", bad, classes));
        }
        let sample_shape = vec![inputs.cols];
        Ok(Self { inputs, labels, classes, sample_shape, split: String::from(split), normalization })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        let mut data = Vec::with_capacity(idx.len() * self.dim());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(invalid!("index {} out of range for {} samples", i, self.len()));
            }
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            inputs: Matrix { rows: idx.len(), cols: self.dim(), data },
            labels,
            classes: self.classes,
            sample_shape: self.sample_shape.clone(),
            split: self.split.clone(),
            normalization: self.normalization.clone(),
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Per-feature mean of this dataset.
    pub fn feature_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for r in 0..self.len() {
            crate::numerics::axpy(1.0, self.sample(r), &mut mean);
        }
        let m = self.len().max(1) as f64;
        mean.iter_mut().for_each(|v| *v /= m);
        mean
    }

    /// Subtracts `mean` from every sample and records it.
    pub fn center(&mut self, mean: &[f64]) -> Result<()> {
        if mean.len() != self.dim() {
            return Err(invalid!("mean has length {}, samples have {}", mean.len(), self.dim()));
        }
        if self.normalization.is_centered() {
            return Err(invalid!("dataset is already centered"));
        }
        for r in 0..self.len() {
            for (v, m) in self.inputs.row_mut(r).iter_mut().zip(mean) {
                *v -= m;
            }
        }
        self.normalization.offset = mean.to_vec();
        Ok(())
    }
}

const XOR_CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]];

/// Class of an XOR corner: 0 when the coordinate signs agree.
pub fn xor_label(corner: &[f64; 2]) -> usize {
    usize::from(corner[0] * corner[1] < 0.0)
}

/// The four `(±1, ±1)` corners, or Gaussian clouds of `points_per_cluster`
/// around them when `noisy`. Clouds are listed corner by corner.
pub fn xor_dataset(noisy: bool, points_per_cluster: usize, noise_std: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(noise_std >= 0.0) {
        return Err(invalid!("negative noise std {}", noise_std));
    }
    let per = if noisy { points_per_cluster } else { 1 };
    if per == 0 {
        return Err(invalid!("need at least one point per cluster"));
    }
    let mut data = Vec::with_capacity(8 * per);
    let mut labels = Vec::with_capacity(4 * per);
    for corner in &XOR_CORNERS {
        for _ in 0..per {
            let (dx, dy) = if noisy && noise_std > 0.0 {
                (noise_std * rng.normal(), noise_std * rng.normal())
            } else {
                (0.0, 0.0)
            };
            data.push(corner[0] + dx);
            data.push(corner[1] + dy);
            labels.push(xor_label(corner));
        }
    }
    let split = if noisy { "xor-noisy" } else { "xor" };
    Dataset::new(Matrix { rows: 4 * per, cols: 2, data }, labels, 2, split, Normalization::identity("raw"))
}

/// `m` samples without replacement. Stratified draws give each class
/// `floor(m · share)` samples and hand the remainder to the classes with the
/// largest fractional parts (lowest class first on ties).
pub fn subset_sample(ds: &Dataset, m: usize, stratified: bool, rng: &mut Rng) -> Result<Dataset> {
    if m > ds.len() {
        return Err(invalid!("cannot draw {} samples from {}", m, ds.len()));
    }
    if !stratified {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(m);
        return ds.select(&idx);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let n = ds.len() as f64;
    let mut quota: Vec<usize> = Vec::with_capacity(ds.classes);
    let mut frac: Vec<(f64, usize)> = Vec::with_capacity(ds.classes);
    for (c, members) in by_class.iter().enumerate() {
        let exact = m as f64 * members.len() as f64 / n;
        let q = libm::floor(exact) as usize;
        quota.push(q);
        frac.push((exact - q as f64, c));
    }
    let mut remaining = m - quota.iter().sum::<usize>();
    frac.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    for &(_, c) in &frac {
        if remaining == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    let mut idx = Vec::with_capacity(m);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        rng.shuffle(members);
        idx.extend_from_slice(&members[..q]);
    }
    rng.shuffle(&mut idx);
    ds.select(&idx)
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { offset, message: String::from("file ends inside the header") })
}

/// Decoded IDX image file: `count` images of `rows × cols` bytes.
pub struct IdxImages<'a> {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: &'a [u8],
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages<'_>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format { offset: 0, message: alloc::format!("bad image magic 0x{:08x}", magic) });
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format { offset: 8, message: alloc::format!("degenerate image dims {}x{}", rows, cols) });
    }
    let need = count
        .checked_mul(rows * cols)
        .ok_or(Error::Format { offset: 4, message: String::from("image count overflows") })?;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(Error::Format {
            offset: 16 + body.len().min(need),
            message: alloc::format!("expected {} pixel bytes, found {}", need, body.len()),
        });
    }
    Ok(IdxImages { count, rows, cols, pixels: body })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format { offset: 0, message: alloc::format!("bad label magic 0x{:08x}", magic) });
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format {
            offset: 8 + body.len().min(count),
            message: alloc::format!("expected {} labels, found {}", count, body.len()),
        });
    }
    Ok(body)
}

/// IDX image and label payloads to a dataset with pixels divided by 255.
pub fn mnist_from_idx(images: &[u8], labels: &[u8], split: &str) -> Result<Dataset> {
    let img = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if lab.len() != img.count {
        return Err(Error::Format {
            offset: 4,
            message: alloc::format!("{} images but {} labels", img.count, lab.len()),
        });
    }
    if let Some(pos) = lab.iter().position(|&y| y > 9) {
        return Err(Error::Format { offset: 8 + pos, message: alloc::format!("label {} outside 0..=9", lab[pos]) });
    }
    let data = img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let inputs = Matrix { rows: img.count, cols: img.rows * img.cols, data };
    let mut ds = Dataset::new(
        inputs,
        lab.iter().map(|&y| usize::from(y)).collect(),
        10,
        split,
        Normalization { scale: 1.0 / 255.0, offset: Vec::new(), unit: String::from("pixel/255") },
    )?;
    ds.sample_shape = vec![img.rows, img.cols];
    Ok(ds)
}

/// Big-endian IDX encoders, the inverse of the parsers above.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_xor_corners() {
        let ds = xor_dataset(false, 10, 0.3, &mut Rng::new(0)).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.labels, vec![0, 1, 1, 0]);
        assert_eq!(ds.sample(2), &[1.0, -1.0]);
    }

    #[test]
    fn zero_noise_stays_on_corners() {
        let ds = xor_dataset(true, 7, 0.0, &mut Rng::new(0)).unwrap();
        assert_eq!(ds.len(), 28);
        for i in 0..ds.len() {
            assert!(ds.sample(i).iter().all(|v| v.abs() == 1.0));
        }
    }

    #[test]
    fn noisy_cluster_means() {
        let ds = xor_dataset(true, 50, 0.2, &mut Rng::new(11)).unwrap();
        for (k, corner) in XOR_CORNERS.iter().enumerate() {
            let idx: Vec<usize> = (k * 50..(k + 1) * 50).collect();
            let mean = ds.select(&idx).unwrap().feature_mean();
            assert!((mean[0] - corner[0]).abs() < 0.1 && (mean[1] - corner[1]).abs() < 0.1);
        }
    }

    fn balanced(per: usize, classes: usize) -> Dataset {
        let m = per * classes;
        let inputs = Matrix { rows: m, cols: 1, data: (0..m).map(|i| i as f64).collect() };
        Dataset::new(inputs, (0..m).map(|i| i % classes).collect(), classes, "t", Normalization::identity("raw")).unwrap()
    }

    #[test]
    fn stratified_subset_is_exact_on_balanced_data() {
        let ds = balanced(30, 10);
        let sub = subset_sample(&ds, 100, true, &mut Rng::new(3)).unwrap();
        assert_eq!(sub.class_counts(), vec![10; 10]);
    }

    #[test]
    fn full_subset_is_permutation() {
        let ds = balanced(5, 3);
        let sub = subset_sample(&ds, 15, false, &mut Rng::new(3)).unwrap();
        let mut seen: Vec<f64> = sub.inputs.data.clone();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, ds.inputs.data);
        assert!(subset_sample(&ds, 16, false, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn subset_is_deterministic() {
        let ds = balanced(20, 4);
        let a = subset_sample(&ds, 13, true, &mut Rng::new(42)).unwrap();
        let b = subset_sample(&ds, 13, true, &mut Rng::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let pixels = [0u8, 255, 51, 0, 0, 0, 0, 0];
        let images = encode_idx_images(2, 2, 2, &pixels);
        let labels = encode_idx_labels(&[3, 7]);
        let ds = mnist_from_idx(&images, &labels, "train").unwrap();
        assert_eq!(ds.inputs.data[..3], [0.0, 1.0, 0.2]);
        assert_eq!(ds.labels, vec![3, 7]);
        assert_eq!(ds.sample_shape, vec![2, 2]);

        let truncated = &images[..images.len() - 1];
        assert!(matches!(mnist_from_idx(truncated, &labels, "x"), Err(Error::Format { offset: 23, .. })));
        let mut bad = images.clone();
        bad[3] = 0x01;
        assert!(matches!(mnist_from_idx(&bad, &labels, "x"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn all_zero_idx_gives_zero_inputs() {
        let images = encode_idx_images(3, 4, 4, &[0u8; 48]);
        let labels = encode_idx_labels(&[0, 0, 0]);
        let ds = mnist_from_idx(&images, &labels, "z").unwrap();
        assert!(ds.inputs.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centering_records_offset() {
        let mut ds = balanced(2, 2);
        let mean = ds.feature_mean();
        ds.center(&mean).unwrap();
        assert!(ds.feature_mean()[0].abs() < 1e-12);
        assert!(ds.normalization.is_centered());
        assert!(ds.center(&mean).is_err());
    }
}
