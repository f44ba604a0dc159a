//! Synthetic datasets and their on-disk formats.
//!
//! Binary layout: `"FVDS"`, version `u16`, `n: u32`, `dim: u32`, then
//! `n·dim` little-endian `f64` values in row-major order. CSV files hold one
//! point per row, comma separated, without a header.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::rng::{mix64, SplitMix64};

pub const DATASET_MAGIC: &[u8; 4] = b"FVDS";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset parameter: {0}")]
    Parameter(String),
    #[error("dataset is empty")]
    Empty,
    #[error("bad magic bytes, expected \"FVDS\"")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated dataset at byte {offset}")]
    Truncated { offset: usize },
    #[error("{extra} trailing bytes after the payload")]
    TrailingBytes { extra: usize },
    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column}: cannot parse {text:?}")]
    BadCell { row: usize, column: usize, text: String },
    #[error("row {row}, column {column}: non-finite value")]
    NonFinite { row: usize, column: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: u64,
    pub params: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    /// `[n, dim]`.
    pub points: Tensor,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Validates that there is at least one row and every value is finite.
    pub fn new(points: Tensor, meta: DatasetMeta) -> Result<Self> {
        if points.shape().len() != 2 {
            return Err(DataError::Parameter("points must be a matrix".into()));
        }
        let dim = points.cols();
        if let Some(i) = points.data().iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: i / dim,
                column: i % dim,
            });
        }
        Ok(Self { dim, points, meta })
    }

    pub fn from_rows(rows: &[Vec<f64>], meta: DatasetMeta) -> Result<Self> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let expected = rows[0].len();
        if let Some(row) = rows.iter().position(|r| r.len() != expected) {
            return Err(DataError::Ragged {
                row,
                expected,
                found: rows[row].len(),
            });
        }
        let points = Tensor::from_rows(rows).map_err(|_| DataError::Empty)?;
        Self::new(points, meta)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self {
            dim: self.dim,
            points: crate::train::gather_rows(&self.points, idx),
            meta: self.meta.clone(),
        })
    }

    /// Deterministic 90/10 split: row `i` is held out when
    /// `mix64(seed ^ i) % 10 == 0`.
    pub fn split(&self, seed: u64) -> Result<(Self, Self)> {
        let (valid, train): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| is_held_out(seed, i));
        Ok((self.select(&train)?, self.select(&valid)?))
    }

    /// Per-coordinate means.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (a, b) in m.iter_mut().zip(self.row(i)) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.len() as f64);
        m
    }

    /// Variance pooled over all coordinates.
    pub fn pooled_variance(&self) -> f64 {
        let m = self.mean();
        let mut s = 0.0;
        for i in 0..self.len() {
            s += self.row(i).iter().zip(&m).map(|(x, mu)| (x - mu).powi(2)).sum::<f64>();
        }
        s / (self.len() * self.dim) as f64
    }
}

pub fn is_held_out(seed: u64, index: usize) -> bool {
    mix64(seed ^ index as u64).is_multiple_of(10)
}

fn meta(name: &str, seed: u64, params: &[(&str, f64)]) -> DatasetMeta {
    DatasetMeta {
        name: name.into(),
        seed,
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Two interleaved unit half-circles. Even rows lie on the upper arc
/// centered at the origin, odd rows on the lower arc centered at `(1, 0.5)`,
/// with the arc angle uniform on `[0, π]`.
pub fn two_moons(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(DataError::Empty);
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(DataError::Parameter(format!("noise_sd {noise_sd} must be >= 0")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = PI * rng.uniform();
        let (x, y) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        data.push(x + noise_sd * rng.gaussian());
        data.push(y + noise_sd * rng.gaussian());
    }
    let points = Tensor::new(vec![n, 2], data).expect("n >= 1");
    Dataset::new(points, meta("two-moons", seed, &[("n", n as f64), ("noise", noise_sd)]))
}

/// Mixture of `k` isotropic Gaussians with centers equally spaced on a circle,
/// the first at `(radius, 0)`.
pub fn gaussian_ring(n: usize, k: usize, radius: f64, sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(DataError::Empty);
    }
    if k == 0 {
        return Err(DataError::Parameter("k must be at least 1".into()));
    }
    if !(sd >= 0.0) || !radius.is_finite() {
        return Err(DataError::Parameter("radius must be finite and sd >= 0".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let j = rng.below(k);
        let a = 2.0 * PI * j as f64 / k as f64;
        data.push(radius * a.cos() + sd * rng.gaussian());
        data.push(radius * a.sin() + sd * rng.gaussian());
    }
    let points = Tensor::new(vec![n, 2], data).expect("n >= 1");
    Dataset::new(
        points,
        meta("gaussian-ring", seed, &[("n", n as f64), ("k", k as f64), ("radius", radius), ("sd", sd)]),
    )
}

/// `side × side` grayscale images, each holding one axis-aligned rectangle
/// or one disc. Lit pixels are `1`, the canvas is `-1`; every image has at
/// least four lit pixels.
pub fn shapes(n: usize, side: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(DataError::Empty);
    }
    if side != 8 && side != 16 {
        return Err(DataError::Parameter(format!("image side must be 8 or 16, got {side}")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(n * side * side);
    for _ in 0..n {
        let mut img = vec![-1.0; side * side];
        if rng.uniform() < 0.5 {
            let w = 2 + rng.below(side / 2);
            let h = 2 + rng.below(side / 2);
            let x0 = rng.below(side - w + 1);
            let y0 = rng.below(side - h + 1);
            for y in y0..y0 + h {
                img[y * side + x0..y * side + x0 + w].fill(1.0);
            }
        } else {
            // Radius ≥ 1.2 lights the center pixel and its four neighbours.
            let r = rng.uniform_range(1.2, side as f64 / 4.0 + 0.5);
            let margin = r.floor() as usize;
            let cx = margin + rng.below(side - 2 * margin);
            let cy = margin + rng.below(side - 2 * margin);
            for y in 0..side {
                for x in 0..side {
                    let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
                    if dx * dx + dy * dy <= r * r {
                        img[y * side + x] = 1.0;
                    }
                }
            }
        }
        data.extend(img);
    }
    let points = Tensor::new(vec![n, side * side], data).expect("n >= 1");
    Dataset::new(points, meta("shapes", seed, &[("n", n as f64), ("side", side as f64)]))
}

/// Standard normal points, mostly for evaluation baselines.
pub fn standard_gaussian(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(DataError::Empty);
    }
    let mut rng = SplitMix64::new(seed);
    let points = Tensor::new(vec![n, dim], rng.gaussian_vec(n * dim)).expect("non-empty");
    Dataset::new(points, meta("gaussian", seed, &[("n", n as f64), ("dim", dim as f64)]))
}

pub fn to_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * ds.points.numel());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    for v in ds.points.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<const N: usize>(bytes: &[u8], offset: &mut usize) -> Result<[u8; N]> {
    let chunk = bytes
        .get(*offset..*offset + N)
        .ok_or(DataError::Truncated { offset: bytes.len() })?;
    *offset += N;
    Ok(chunk.try_into().expect("length checked"))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(DataError::Empty);
    }
    let mut off = 0;
    if bytes.len() < 4 {
        return Err(DataError::Truncated { offset: bytes.len() });
    }
    if &take::<4>(bytes, &mut off)? != DATASET_MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = u16::from_le_bytes(take(bytes, &mut off)?);
    if version != DATASET_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let n = u32::from_le_bytes(take(bytes, &mut off)?) as usize;
    let dim = u32::from_le_bytes(take(bytes, &mut off)?) as usize;
    if n == 0 || dim == 0 {
        return Err(DataError::Empty);
    }
    let need = HEADER_LEN + 8 * n * dim;
    if bytes.len() < need {
        return Err(DataError::Truncated { offset: bytes.len() });
    }
    if bytes.len() > need {
        return Err(DataError::TrailingBytes {
            extra: bytes.len() - need,
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let points = Tensor::new(vec![n, dim], data).expect("sizes checked");
    Dataset::new(points, DatasetMeta::default())
}

pub fn write_csv<W: std::io::Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..ds.len() {
        // `{}` prints the shortest string that parses back to the same f64.
        wr.write_record(ds.row(i).iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut vals = Vec::with_capacity(rec.len());
        for (column, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::BadCell {
                row,
                column,
                text: cell.to_string(),
            })?;
            vals.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != vals.len() {
                return Err(DataError::Ragged {
                    row,
                    expected: first.len(),
                    found: vals.len(),
                });
            }
        }
        rows.push(vals);
    }
    Dataset::from_rows(&rows, DatasetMeta::default())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes CSV for `.csv` paths and the binary format otherwise.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        write_csv(ds, fs::File::create(path)?)
    } else {
        Ok(fs::write(path, to_bytes(ds))?)
    }
}

/// Reads a binary dataset, or CSV when the path ends in `.csv`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if is_csv(path) {
        read_csv(bytes.as_slice())
    } else {
        from_bytes(&bytes)
    }
}
