//! Files: IDX ingestion, the binary dataset cache, checkpoints, and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specguard_core::data::{mnist_from_idx, Dataset, Normalization};
use specguard_core::numerics::Matrix;
use specguard_core::regularize::RegMode;
use specguard_core::train::{ReadoutFit, TrainLog, Trainer};
use specguard_core::Error as CoreError;

use crate::error::{CliError, CliResult};

pub const MNIST_TRAIN: (&str, &str) = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
pub const MNIST_TEST: (&str, &str) = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))
}

pub fn load_mnist_idx(image_path: &Path, label_path: &Path, split: &str) -> CliResult<Dataset> {
    let images = read(image_path)?;
    let labels = read(label_path)?;
    mnist_from_idx(&images, &labels, split).map_err(|e| match e {
        CoreError::Format { offset, message } => {
            CliError::Other(format!("{} / {}: format error at byte {offset}: {message}", image_path.display(), label_path.display()))
        }
        other => other.into(),
    })
}

pub fn load_mnist_split(dir: &Path, test: bool) -> CliResult<Dataset> {
    let (img, lab) = if test { MNIST_TEST } else { MNIST_TRAIN };
    load_mnist_idx(&dir.join(img), &dir.join(lab), if test { "test" } else { "train" })
}

const CACHE_MAGIC: &[u8; 4] = b"SGDC";
const CACHE_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> CliResult<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CoreError::Format { offset: self.pos, message: format!("cache truncated, needed {n} more bytes") })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> CliResult<usize> {
        let at = self.pos;
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| CoreError::Format { offset: at, message: format!("implausible length {v}") }.into())
    }
    fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> CliResult<String> {
        let at = self.pos;
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CoreError::Format { offset: at, message: "invalid utf-8".into() }.into())
    }
}

/// Versioned little-endian encoding; floats are stored by bit pattern.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(16 + ds.inputs.data.len() * 8 + ds.labels.len() * 8));
    w.0.extend_from_slice(CACHE_MAGIC);
    w.0.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    w.u64(ds.inputs.rows as u64);
    w.u64(ds.inputs.cols as u64);
    w.u64(ds.classes as u64);
    w.u64(ds.sample_shape.len() as u64);
    ds.sample_shape.iter().for_each(|&d| w.u64(d as u64));
    w.str(&ds.split);
    w.f64(ds.normalization.scale);
    w.u64(ds.normalization.offset.len() as u64);
    ds.normalization.offset.iter().for_each(|&v| w.f64(v));
    w.str(&ds.normalization.unit);
    ds.inputs.data.iter().for_each(|&v| w.f64(v));
    ds.labels.iter().for_each(|&y| w.u64(y as u64));
    w.0
}

pub fn decode_dataset(bytes: &[u8]) -> CliResult<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CACHE_MAGIC {
        return Err(CoreError::Format { offset: 0, message: "not a dataset cache".into() }.into());
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(CoreError::Format { offset: 4, message: format!("cache version {version}, expected {CACHE_VERSION}") }.into());
    }
    let rows = r.len()?;
    let cols = r.len()?;
    let classes = r.len()?;
    let shape_len = r.len()?;
    let sample_shape = (0..shape_len).map(|_| r.len()).collect::<CliResult<Vec<_>>>()?;
    let split = r.str()?;
    let scale = r.f64()?;
    let offset_len = r.len()?;
    let offset = (0..offset_len).map(|_| r.f64()).collect::<CliResult<Vec<_>>>()?;
    let unit = r.str()?;
    let at = r.pos;
    let total = rows.checked_mul(cols).filter(|n| n.saturating_mul(8) <= bytes.len());
    let total = total.ok_or_else(|| CoreError::Format { offset: at, message: "sample block larger than file".into() })?;
    let data = (0..total).map(|_| r.f64()).collect::<CliResult<Vec<_>>>()?;
    let labels = (0..rows).map(|_| r.len()).collect::<CliResult<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(CoreError::Format { offset: r.pos, message: "trailing bytes".into() }.into());
    }
    let mut ds = Dataset::new(Matrix { rows, cols, data }, labels, classes, &split, Normalization { scale, offset, unit })?;
    ds.sample_shape = sample_shape;
    Ok(ds)
}

pub fn write_dataset_cache(ds: &Dataset, path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_atomic(path, &encode_dataset(ds))
}

pub fn read_dataset_cache(path: &Path) -> CliResult<Dataset> {
    decode_dataset(&read(path)?)
}

/// Writes through a sibling temp file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: RegMode,
    pub seed: u64,
    pub trainer: Trainer,
}

pub fn checkpoint_path(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoint.json")
}

pub fn save_checkpoint(run_dir: &Path, ckpt: &Checkpoint) -> CliResult<()> {
    fs::create_dir_all(run_dir)?;
    write_atomic(&checkpoint_path(run_dir), &serde_json::to_vec(ckpt)?)
}

pub fn load_checkpoint(run_dir: &Path) -> CliResult<Checkpoint> {
    let path = checkpoint_path(run_dir);
    let ckpt: Checkpoint = serde_json::from_slice(&read(&path)?)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CliError::Other(format!("{}: checkpoint version {}, expected {CHECKPOINT_VERSION}", path.display(), ckpt.version)));
    }
    Ok(ckpt)
}

pub fn readout_path(run_dir: &Path) -> PathBuf {
    run_dir.join("readout.json")
}

pub fn save_readout(run_dir: &Path, fit: &ReadoutFit) -> CliResult<()> {
    write_atomic(&readout_path(run_dir), &serde_json::to_vec_pretty(fit)?)
}

pub fn load_readout(run_dir: &Path) -> CliResult<ReadoutFit> {
    Ok(serde_json::from_slice(&read(&readout_path(run_dir))?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per epoch plus an `epoch = -1` row holding the initial state.
pub fn write_trainlog_csv(path: &Path, log: &TrainLog) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let tracked = log.initial_tracked.len();
    let mut header = vec!["epoch".to_string(), "loss".into(), "penalty".into(), "train_acc".into(), "test_acc".into()];
    header.extend(log.layers.iter().map(|l| format!("sigma2_{}", layer_name(*l))));
    for i in 0..tracked {
        header.push(format!("theta_{i}"));
        header.push(format!("feat_norm_{i}"));
    }
    w.write_record(&header)?;
    let mut init = vec!["-1".to_string(), String::new(), String::new(), String::new(), String::new()];
    init.extend(log.initial_sigma2.iter().map(|v| v.to_string()));
    for t in &log.initial_tracked {
        init.push(opt(t.theta));
        init.push(t.feat_norm.to_string());
    }
    w.write_record(&init)?;
    for r in &log.records {
        let mut row = vec![r.epoch.to_string(), r.loss.to_string(), r.penalty.to_string(), r.train_acc.to_string(), opt(r.test_acc)];
        row.extend(r.sigma2.iter().map(|v| v.to_string()));
        for t in &r.tracked {
            row.push(opt(t.theta));
            row.push(t.feat_norm.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn layer_name(l: specguard_core::network::LayerRef) -> String {
    match l {
        specguard_core::network::LayerRef::Feature(i) => format!("f{i}"),
        specguard_core::network::LayerRef::Readout => "readout".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub sample: usize,
    pub label: usize,
    pub adv_label: usize,
    pub delta: f64,
    pub queries: u64,
    pub bound_certified: f64,
    /// Empty unless brute force was requested.
    pub brute_force: Option<f64>,
}

pub fn write_attack_csv(path: &Path, rows: &[AttackRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_attack_csv(path: &Path) -> CliResult<Vec<AttackRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<AttackRow>, _>>()?)
}

/// Generic numeric table: header plus rows, empty cells as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>() })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn write_table(path: &Path, table: &Table) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }))?;
    }
    w.flush()?;
    Ok(())
}
