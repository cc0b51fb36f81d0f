//! Pearson dependence maps between spectrogram bins and their stacking into a
//! third-order tensor, one slice per signal segment.
//!
//! A bin whose magnitude never changes has no defined correlation; it is given
//! 0 against every other bin and 1 against itself.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ntf::Tensor3;
use crate::par;
use crate::signal::Signal;
use crate::spectral::{stft_spectrogram, Spectrogram, StftConfig};

/// Mean-removed copy of a vector with its sum of squares.
#[derive(Debug, Clone)]
pub(crate) struct CenteredRow {
    values: Vec<f64>,
    sum_sq: f64,
    constant: bool,
}

impl CenteredRow {
    pub(crate) fn new(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let values: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let sum_sq = dot(&values, &values);
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        CenteredRow {
            values,
            sum_sq,
            constant: lo == hi || sum_sq == 0.0,
        }
    }

    pub(crate) fn is_constant(&self) -> bool {
        self.constant
    }
}

/// Dot product with four interleaved accumulators; the summation order is
/// fixed so every caller gets bit-identical results.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Correlation of two centred, non-constant rows.
fn correlate(a: &CenteredRow, b: &CenteredRow) -> f64 {
    let r = dot(&a.values, &b.values) / (a.sum_sq * b.sum_sq).sqrt();
    r.clamp(-1.0, 1.0)
}

/// Empirical Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::size(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::size("pearson needs at least two samples"));
    }
    let (ca, cb) = (CenteredRow::new(a), CenteredRow::new(b));
    if ca.is_constant() || cb.is_constant() {
        return Err(Error::Degenerate("zero-variance input".into()));
    }
    Ok(correlate(&ca, &cb))
}

/// Symmetric matrix of correlations between every pair of spectrogram bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceMap {
    n_bins: usize,
    values: Vec<f64>,
    freq_bins: Vec<f64>,
}

impl DependenceMap {
    /// Builds a map from a row-major square matrix, checking symmetry and range.
    pub fn from_matrix(values: Vec<f64>, freq_bins: Vec<f64>) -> Result<Self> {
        let n = freq_bins.len();
        if values.len() != n * n {
            return Err(Error::size("map is not square over the frequency axis"));
        }
        for j in 0..n {
            for k in 0..n {
                let v = values[j * n + k];
                if !(v.is_finite() && (-1.0..=1.0).contains(&v)) {
                    return Err(Error::invalid(format!("map entry ({j},{k}) = {v} outside [-1, 1]")));
                }
                if v != values[k * n + j] {
                    return Err(Error::invalid(format!("map is not symmetric at ({j},{k})")));
                }
            }
        }
        Ok(DependenceMap {
            n_bins: n,
            values,
            freq_bins,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.n_bins + k]
    }

    /// Column `j` (equal to row `j` by symmetry).
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_bins..(j + 1) * self.n_bins]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn freq_bins(&self) -> &[f64] {
        &self.freq_bins
    }
}

/// Pearson correlation between every pair of bin time series.
///
/// Only the upper triangle is computed; the lower one is mirrored.
pub fn dependence_map(spec: &Spectrogram) -> Result<DependenceMap> {
    if spec.n_frames() < 2 {
        return Err(Error::size("dependence map needs at least two frames"));
    }
    let n = spec.n_bins();
    let rows: Vec<CenteredRow> = par::map_range(n, |f| CenteredRow::new(spec.bin_series(f)));
    let upper: Vec<Vec<f64>> = par::map_range(n, |j| {
        (j..n)
            .map(|k| {
                let (a, b) = (&rows[j], &rows[k]);
                match (a.is_constant(), b.is_constant()) {
                    (true, _) | (_, true) => {
                        if j == k {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => correlate(a, b),
                }
            })
            .collect()
    });
    let mut values = vec![0.0; n * n];
    for (j, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let k = j + off;
            values[j * n + k] = v;
            values[k * n + j] = v;
        }
    }
    Ok(DependenceMap {
        n_bins: n,
        values,
        freq_bins: spec.freq_bins().to_vec(),
    })
}

/// `F × F × M` stack of absolute dependence maps, one per signal segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceTensor {
    tensor: Tensor3,
    freq_bins: Vec<f64>,
}

impl DependenceTensor {
    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    pub fn n_bins(&self) -> usize {
        self.freq_bins.len()
    }

    pub fn n_segments(&self) -> usize {
        self.tensor.shape().2
    }

    pub fn freq_bins(&self) -> &[f64] {
        &self.freq_bins
    }

    /// Row-major `F × F` slice for segment `m`.
    pub fn slice(&self, m: usize) -> &[f64] {
        self.tensor.slice(m)
    }

    pub fn get(&self, f1: usize, f2: usize, m: usize) -> f64 {
        self.tensor.get(f1, f2, m)
    }
}

/// Samples per segment when splitting `n` samples into `segments` equal blocks.
pub fn segment_len(n: usize, segments: usize) -> usize {
    n.checked_div(segments).unwrap_or(0)
}

/// Splits the signal into `segments` contiguous blocks (remainder dropped),
/// maps each block and stacks `|map|` along the third mode.
pub fn build_tensor(signal: &Signal, segments: usize, stft: &StftConfig) -> Result<DependenceTensor> {
    stft.validate()?;
    if segments == 0 {
        return Err(Error::size("segment count must be at least 1"));
    }
    let p = segment_len(signal.len(), segments);
    if stft.n_frames(p) < 2 {
        return Err(Error::size(format!(
            "{segments} segments of {p} samples leave fewer than two {}-sample frames each",
            stft.window_len
        )));
    }
    let fs = signal.sample_rate();
    let x = signal.samples();
    let maps: Vec<Result<DependenceMap>> = par::map_range(segments, |m| {
        let block = Signal::from_parts(x[m * p..(m + 1) * p].to_vec(), fs);
        dependence_map(&stft_spectrogram(&block, stft)?)
    });
    let n = stft.n_bins();
    let mut data = Vec::with_capacity(n * n * segments);
    let mut freq_bins = Vec::new();
    for map in maps {
        let map = map?;
        data.extend(map.values.iter().map(|v| v.abs()));
        freq_bins = map.freq_bins;
    }
    Ok(DependenceTensor {
        tensor: Tensor3::from_vec(n, n, segments, data)?,
        freq_bins,
    })
}
