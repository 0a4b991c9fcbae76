//! Dataset ingestion, the train/val/test split protocol, standardization and
//! chunk-aligned window batching.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CmosError, Result};

/// A `T × N` matrix of observations, stored row-major (time-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    channel_names: Vec<String>,
    sample_interval: String,
    values: Vec<f64>,
    len: usize,
    had_date_column: bool,
}

impl Dataset {
    /// Builds a dataset from row-major values (`values[t * N + n]`).
    pub fn new(
        name: impl Into<String>,
        channel_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let n = channel_names.len();
        if n == 0 || values.is_empty() {
            return Err(CmosError::EmptyDataset);
        }
        if values.len() % n != 0 {
            return Err(CmosError::ShapeMismatch(format!(
                "{} values do not fill rows of {} channels",
                values.len(),
                n
            )));
        }
        let mut seen = HashSet::new();
        for c in &channel_names {
            if !seen.insert(c.as_str()) {
                return Err(CmosError::DuplicateChannel(c.clone()));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(CmosError::NonFinite {
                row: pos / n + 1,
                column: channel_names[pos % n].clone(),
            });
        }
        Ok(Self {
            name: name.into(),
            len: values.len() / n,
            channel_names,
            sample_interval: "unknown".to_string(),
            values,
            had_date_column: false,
        })
    }

    /// Builds a dataset from per-channel columns of equal length.
    pub fn from_columns(
        name: impl Into<String>,
        channel_names: Vec<String>,
        columns: &[Vec<f64>],
    ) -> Result<Self> {
        let t = columns.first().map(Vec::len).unwrap_or(0);
        if columns.iter().any(|c| c.len() != t) {
            return Err(CmosError::ShapeMismatch("columns differ in length".into()));
        }
        let n = columns.len();
        let mut values = vec![0.0; t * n];
        for (ch, col) in columns.iter().enumerate() {
            for (row, v) in col.iter().enumerate() {
                values[row * n + ch] = *v;
            }
        }
        Self::new(name, channel_names, values)
    }

    pub fn with_sample_interval(mut self, interval: impl Into<String>) -> Self {
        self.sample_interval = interval.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn sample_interval(&self) -> &str {
        &self.sample_interval
    }

    pub fn had_date_column(&self) -> bool {
        self.had_date_column
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of channels `N`.
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn value(&self, t: usize, n: usize) -> f64 {
        self.values[t * self.n_channels() + n]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_channels();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        self.column_range(n, 0..self.len)
    }

    pub fn column_range(&self, n: usize, range: Range<usize>) -> Vec<f64> {
        let stride = self.n_channels();
        range.map(|t| self.values[t * stride + n]).collect()
    }

    /// Applies `f(t, n, value)` to every cell, keeping names and metadata.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let n = self.n_channels();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, v)| f(idx / n, idx % n, *v))
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }

    /// Writes the dataset as CSV with a `date` column holding the step index.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path).map_err(|e| CmosError::io(path, e))?;
        let mut out = String::new();
        out.push_str("date");
        for c in &self.channel_names {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for t in 0..self.len {
            out.push_str(&t.to_string());
            for v in self.row(t) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        file.write_all(out.as_bytes())
            .map_err(|e| CmosError::io(path, e))
    }
}

fn is_date_name(name: &str) -> bool {
    let lower = name.trim().to_ascii_lowercase();
    lower == "date" || lower == "timestamp"
}

/// Reads a comma-separated file with a header row.
///
/// A date column is dropped when it is named explicitly, when its header is
/// `date`/`timestamp` (any case), or when it is the first column and its first
/// cell does not parse as a number.
pub fn load_csv(path: &Path, date_column: Option<&str>) -> Result<Dataset> {
    if !path.exists() {
        return Err(CmosError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if records.is_empty() {
        return Err(CmosError::EmptyDataset);
    }

    let mut date_idx = match date_column {
        Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
            CmosError::InvalidConfig(format!("date column '{name}' not in header"))
        })?),
        None => headers.iter().position(|h| is_date_name(h)),
    };
    if date_idx.is_none() {
        if let Some(first) = records[0].get(0) {
            if first.trim().parse::<f64>().is_err() {
                date_idx = Some(0);
            }
        }
    }

    let numeric: Vec<usize> = (0..headers.len()).filter(|i| Some(*i) != date_idx).collect();
    if numeric.is_empty() {
        return Err(CmosError::NoNumericColumns(path.to_path_buf()));
    }
    let n = numeric.len();
    let mut values = Vec::with_capacity(records.len() * n);
    for (r, record) in records.iter().enumerate() {
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(CmosError::RaggedRow {
                row,
                expected: headers.len(),
                found: record.len(),
            });
        }
        for &c in &numeric {
            let cell = record.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| CmosError::NonNumeric {
                row,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(CmosError::NonFinite {
                    row,
                    column: headers[c].clone(),
                });
            }
            values.push(v);
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let channel_names = numeric.iter().map(|&c| headers[c].clone()).collect();
    let mut ds = Dataset::new(name, channel_names, values)?;
    ds.had_date_column = date_idx.is_some();
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStyle {
    /// 6:2:2, used for the ETT family.
    Ett,
    /// 7:1:2.
    Standard,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub style: SplitStyle,
}

impl SplitSpec {
    pub fn ett() -> Self {
        Self {
            train_ratio: 0.6,
            val_ratio: 0.2,
            test_ratio: 0.2,
            style: SplitStyle::Ett,
        }
    }

    pub fn standard() -> Self {
        Self {
            train_ratio: 0.7,
            val_ratio: 0.1,
            test_ratio: 0.2,
            style: SplitStyle::Standard,
        }
    }

    pub fn custom(train: f64, val: f64, test: f64) -> Result<Self> {
        let spec = Self {
            train_ratio: train,
            val_ratio: val,
            test_ratio: test,
            style: SplitStyle::Custom,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// ETT-style for datasets whose name starts with `ETT`, standard otherwise.
    pub fn for_dataset(name: &str) -> Self {
        if name.to_ascii_uppercase().starts_with("ETT") {
            Self::ett()
        } else {
            Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train_ratio, self.val_ratio, self.test_ratio];
        if r.iter().any(|x| !(*x > 0.0)) {
            return Err(CmosError::InvalidConfig("split ratios must be positive".into()));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CmosError::InvalidConfig("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Index ranges of each split. Val and test ranges start `L` steps before
/// their first target so lookbacks may borrow from the preceding split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub lookback: usize,
}

impl SplitRanges {
    pub fn get(&self, which: Split) -> Range<usize> {
        match which {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    /// Steps whose values may appear as targets for windows of `which`.
    pub fn target_range(&self, which: Split) -> Range<usize> {
        let r = self.get(which);
        match which {
            Split::Train => r,
            _ => r.start + self.lookback..r.end,
        }
    }
}

/// `⌊ratio·total⌋`, robust to ratios like 0.7 that are not exact in binary.
pub fn split_len(ratio: f64, total: usize) -> usize {
    (ratio * total as f64 + 1e-9).floor() as usize
}

/// Splits `[0, total)` into train/val/test ranges for lookback `lookback` and
/// horizon `horizon`. Train and test lengths are `⌊ratio·T⌋`; val takes the rest.
pub fn split(total: usize, spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<SplitRanges> {
    spec.validate()?;
    let n_train = split_len(spec.train_ratio, total);
    let n_test = split_len(spec.test_ratio, total);
    let n_val = total.saturating_sub(n_train + n_test);
    let need = lookback + horizon;
    if n_train < need || n_val < horizon || n_test < horizon || n_train < lookback {
        return Err(CmosError::NoWindow(format!(
            "T={total} with train/val/test={n_train}/{n_val}/{n_test} cannot hold L={lookback}, H={horizon}"
        )));
    }
    let val_start = n_train;
    let test_start = n_train + n_val;
    Ok(SplitRanges {
        train: 0..n_train,
        val: val_start - lookback..test_start,
        test: test_start - lookback..total,
        lookback,
    })
}

/// Per-channel mean and (population) standard deviation from the train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Standardization {
    pub fn inverse(&self, n: usize, v: f64) -> f64 {
        v * self.std[n] + self.mean[n]
    }
}

pub fn standardize(dataset: &Dataset, train: Range<usize>) -> Result<(Dataset, Standardization)> {
    if train.is_empty() || train.end > dataset.len() {
        return Err(CmosError::InvalidConfig(format!(
            "train range {train:?} invalid for T={}",
            dataset.len()
        )));
    }
    let count = train.len() as f64;
    let mut mean = Vec::with_capacity(dataset.n_channels());
    let mut std = Vec::with_capacity(dataset.n_channels());
    let mut warnings = Vec::new();
    for n in 0..dataset.n_channels() {
        let col = dataset.column_range(n, train.clone());
        let mu = col.iter().sum::<f64>() / count;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
        let mut sd = var.sqrt();
        if !(sd > 0.0) {
            let msg = format!(
                "channel '{}' is constant on the train split; std clamped to 1",
                dataset.channel_names()[n]
            );
            log::warn!("{msg}");
            warnings.push(msg);
            sd = 1.0;
        }
        mean.push(mu);
        std.push(sd);
    }
    let out = dataset.map_values(|_, n, v| (v - mean[n]) / std[n]);
    Ok((out, Standardization { mean, std, warnings }))
}

/// A standardized dataset together with its split ranges for one `(L, H)`.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub ranges: SplitRanges,
    pub scaler: Standardization,
    pub lookback: usize,
    pub horizon: usize,
}

pub fn prepare(raw: &Dataset, spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<PreparedData> {
    let ranges = split(raw.len(), spec, lookback, horizon)?;
    let (dataset, scaler) = standardize(raw, ranges.train.clone())?;
    Ok(PreparedData {
        dataset,
        ranges,
        scaler,
        lookback,
        horizon,
    })
}

impl PreparedData {
    pub fn origins(&self, which: Split) -> Result<Vec<usize>> {
        window_origins(self.ranges.get(which), self.lookback, self.horizon, 1)
    }

    pub fn batches(&self, which: Split, batch_size: usize) -> Result<WindowBatches<'_>> {
        windows(
            &self.dataset,
            self.ranges.get(which),
            self.lookback,
            self.horizon,
            1,
            batch_size,
        )
    }
}

/// `B` lookback windows with their targets, laid out `[b][n][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub lookback: Vec<f64>,
    pub target: Vec<f64>,
    pub origins: Vec<usize>,
    pub channels: usize,
    pub lookback_len: usize,
    pub horizon: usize,
}

impl WindowBatch {
    /// Gathers the windows whose last lookback step is at each origin.
    pub fn gather(dataset: &Dataset, origins: &[usize], lookback: usize, horizon: usize) -> Self {
        let n = dataset.n_channels();
        let b = origins.len();
        let mut lb = vec![0.0; b * n * lookback];
        let mut tg = vec![0.0; b * n * horizon];
        for (bi, &o) in origins.iter().enumerate() {
            let start = o + 1 - lookback;
            for t in 0..lookback {
                let row = dataset.row(start + t);
                for ch in 0..n {
                    lb[(bi * n + ch) * lookback + t] = row[ch];
                }
            }
            for t in 0..horizon {
                let row = dataset.row(o + 1 + t);
                for ch in 0..n {
                    tg[(bi * n + ch) * horizon + t] = row[ch];
                }
            }
        }
        Self {
            lookback: lb,
            target: tg,
            origins: origins.to_vec(),
            channels: n,
            lookback_len: lookback,
            horizon,
        }
    }

    /// Builds a batch directly from `[b][n][step]` buffers.
    pub fn from_parts(
        lookback: Vec<f64>,
        target: Vec<f64>,
        batch: usize,
        channels: usize,
        lookback_len: usize,
        horizon: usize,
    ) -> Result<Self> {
        if lookback.len() != batch * channels * lookback_len || target.len() != batch * channels * horizon {
            return Err(CmosError::ShapeMismatch(format!(
                "batch buffers {}/{} do not match B={batch}, N={channels}, L={lookback_len}, H={horizon}",
                lookback.len(),
                target.len()
            )));
        }
        Ok(Self {
            lookback,
            target,
            origins: (0..batch).collect(),
            channels,
            lookback_len,
            horizon,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.origins.len()
    }

    pub fn lookback_of(&self, b: usize, n: usize) -> &[f64] {
        let l = self.lookback_len;
        let off = (b * self.channels + n) * l;
        &self.lookback[off..off + l]
    }

    pub fn target_of(&self, b: usize, n: usize) -> &[f64] {
        let h = self.horizon;
        let off = (b * self.channels + n) * h;
        &self.target[off..off + h]
    }
}

/// Origins (index of the last lookback step) of every window inside `range`.
pub fn window_origins(range: Range<usize>, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(CmosError::InvalidConfig("L, H and stride must be positive".into()));
    }
    if range.len() < lookback + horizon {
        return Err(CmosError::NoWindow(format!(
            "range {range:?} shorter than L+H={}",
            lookback + horizon
        )));
    }
    let first = range.start + lookback - 1;
    let last = range.end - horizon - 1;
    Ok((first..=last).step_by(stride).collect())
}

/// Permutes origins with the given RNG.
pub fn shuffle_origins<R: Rng + ?Sized>(origins: &mut [usize], rng: &mut R) {
    origins.shuffle(rng);
}

/// Iterator over window batches in a fixed origin order.
pub struct WindowBatches<'a> {
    dataset: &'a Dataset,
    origins: Vec<usize>,
    lookback: usize,
    horizon: usize,
    batch_size: usize,
    pos: usize,
}

impl<'a> WindowBatches<'a> {
    pub fn from_origins(
        dataset: &'a Dataset,
        origins: Vec<usize>,
        lookback: usize,
        horizon: usize,
        batch_size: usize,
    ) -> Self {
        Self {
            dataset,
            origins,
            lookback,
            horizon,
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }

    pub fn window_count(&self) -> usize {
        self.origins.len()
    }
}

impl Iterator for WindowBatches<'_> {
    type Item = WindowBatch;

    fn next(&mut self) -> Option<WindowBatch> {
        if self.pos >= self.origins.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.origins.len());
        let batch = WindowBatch::gather(
            self.dataset,
            &self.origins[self.pos..end],
            self.lookback,
            self.horizon,
        );
        self.pos = end;
        Some(batch)
    }
}

/// Deterministic enumeration of windows in `range`, grouped into batches.
pub fn windows(
    dataset: &Dataset,
    range: Range<usize>,
    lookback: usize,
    horizon: usize,
    stride: usize,
    batch_size: usize,
) -> Result<WindowBatches<'_>> {
    if range.end > dataset.len() {
        return Err(CmosError::InvalidConfig(format!(
            "range {range:?} exceeds T={}",
            dataset.len()
        )));
    }
    let origins = window_origins(range, lookback, horizon, stride)?;
    Ok(WindowBatches::from_origins(
        dataset, origins, lookback, horizon, batch_size,
    ))
}

/// A length-`L` vector viewed as `L/S` rows of `S`; row 0 is the oldest chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkView {
    data: Vec<f64>,
    chunk_size: usize,
}

impl ChunkView {
    pub fn n_chunks(&self) -> usize {
        self.data.len() / self.chunk_size
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.chunk_size..(i + 1) * self.chunk_size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.chunk_size)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }
}

pub fn chunk(v: &[f64], chunk_size: usize) -> Result<ChunkView> {
    if chunk_size == 0 || v.len() % chunk_size != 0 {
        return Err(CmosError::NotDivisible("vector length", "chunk size"));
    }
    Ok(ChunkView {
        data: v.to_vec(),
        chunk_size,
    })
}
