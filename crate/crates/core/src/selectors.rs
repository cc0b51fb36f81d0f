//! Informative-frequency-band selectors: per-bin curves computed from a
//! spectrogram (or a dependence map) of the whole signal, used as filter
//! gains.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dependence::DependenceMap;
use crate::error::{Error, Result};
use crate::par;
use crate::spectral::Spectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorMethod {
    Kurtosis,
    Alpha,
    Cv,
    Pearson,
    Ntf,
}

impl SelectorMethod {
    pub const ALL: [SelectorMethod; 5] = [
        SelectorMethod::Kurtosis,
        SelectorMethod::Alpha,
        SelectorMethod::Cv,
        SelectorMethod::Pearson,
        SelectorMethod::Ntf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectorMethod::Kurtosis => "kurtosis",
            SelectorMethod::Alpha => "alpha",
            SelectorMethod::Cv => "cv",
            SelectorMethod::Pearson => "pearson",
            SelectorMethod::Ntf => "ntf",
        }
    }
}

impl fmt::Display for SelectorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SelectorMethod::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown selector '{s}' (expected kurtosis, alpha, cv, pearson or ntf)")))
    }
}

/// Non-negative per-bin gain, scaled so its maximum is 1 unless it is all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorCurve {
    values: Vec<f64>,
    freq_bins: Vec<f64>,
    pub method: SelectorMethod,
    pub label: String,
}

impl SelectorCurve {
    /// Clips negatives to zero and max-normalizes.
    pub fn new(raw: Vec<f64>, freq_bins: Vec<f64>, method: SelectorMethod, label: impl Into<String>) -> Result<Self> {
        if raw.len() != freq_bins.len() {
            return Err(Error::size(format!("{} values for {} frequency bins", raw.len(), freq_bins.len())));
        }
        if raw.is_empty() {
            return Err(Error::size("selector curve is empty"));
        }
        if raw.iter().chain(&freq_bins).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("{method} selector produced non-finite values")));
        }
        if freq_bins.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("frequency bins must be strictly increasing"));
        }
        let mut values: Vec<f64> = raw.into_iter().map(|v| v.max(0.0)).collect();
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
        Ok(SelectorCurve {
            values,
            freq_bins,
            method,
            label: label.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn freq_bins(&self) -> &[f64] {
        &self.freq_bins
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Linear interpolation in frequency, held constant beyond the end bins.
    pub fn value_at(&self, freq: f64) -> f64 {
        let f = &self.freq_bins;
        let n = f.len();
        if freq <= f[0] {
            return self.values[0];
        }
        if freq >= f[n - 1] {
            return self.values[n - 1];
        }
        let hi = f.partition_point(|&x| x <= freq);
        let lo = hi - 1;
        let t = (freq - f[lo]) / (f[hi] - f[lo]);
        self.values[lo] + t * (self.values[hi] - self.values[lo])
    }

    /// Share of `Σ v²` carried by bins inside `[lo, hi]` Hz.
    pub fn energy_fraction(&self, lo: f64, hi: f64) -> f64 {
        let total: f64 = self.values.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return 0.0;
        }
        let inside: f64 = self
            .values
            .iter()
            .zip(&self.freq_bins)
            .filter(|(_, f)| **f >= lo && **f <= hi)
            .map(|(v, _)| v * v)
            .sum();
        inside / total
    }

    /// `Σ f v² / Σ v²`, or `None` for an all-zero curve.
    pub fn energy_centroid(&self) -> Option<f64> {
        let total: f64 = self.values.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return None;
        }
        Some(self.values.iter().zip(&self.freq_bins).map(|(v, f)| f * v * v).sum::<f64>() / total)
    }

    pub fn argmax_freq(&self) -> f64 {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        self.freq_bins[best]
    }
}

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn per_bin(spec: &Spectrogram, min_len: usize, what: &str, stat: impl Fn(&[f64]) -> f64 + Sync) -> Result<Vec<f64>> {
    if spec.n_frames() < min_len {
        return Err(Error::size(format!(
            "{what} needs at least {min_len} frames per bin, got {}",
            spec.n_frames()
        )));
    }
    Ok(par::map_range(spec.n_bins(), |f| stat(spec.bin_series(f))))
}

/// Excess kurtosis with biased moments; 0 for a constant row.
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    if x.is_empty() || is_constant(x) {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return 0.0;
    }
    m4 / (m2 * m2) - 3.0
}

pub fn spectral_kurtosis(spec: &Spectrogram) -> Result<SelectorCurve> {
    let raw = per_bin(spec, 4, "spectral kurtosis", excess_kurtosis)?;
    SelectorCurve::new(raw, spec.freq_bins().to_vec(), SelectorMethod::Kurtosis, "kurtosis")
}

const MCCULLOCH_NU_ALPHA: [f64; 15] = [
    2.439, 2.5, 2.6, 2.7, 2.8, 3.0, 3.2, 3.5, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 25.0,
];
const MCCULLOCH_NU_BETA: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];
/// Stability index as a function of the quantile ratios; rows follow
/// `MCCULLOCH_NU_ALPHA`, columns `MCCULLOCH_NU_BETA`.
const MCCULLOCH_ALPHA: [[f64; 7]; 15] = [
    [2.000, 2.000, 2.000, 2.000, 2.000, 2.000, 2.000],
    [1.916, 1.924, 1.924, 1.924, 1.924, 1.924, 1.924],
    [1.808, 1.813, 1.829, 1.829, 1.829, 1.829, 1.829],
    [1.729, 1.730, 1.737, 1.745, 1.745, 1.745, 1.745],
    [1.664, 1.663, 1.663, 1.668, 1.676, 1.676, 1.676],
    [1.563, 1.560, 1.553, 1.548, 1.547, 1.547, 1.547],
    [1.484, 1.480, 1.471, 1.460, 1.448, 1.438, 1.438],
    [1.391, 1.386, 1.378, 1.364, 1.337, 1.318, 1.318],
    [1.279, 1.273, 1.266, 1.250, 1.210, 1.184, 1.150],
    [1.128, 1.121, 1.114, 1.101, 1.067, 1.027, 0.973],
    [1.029, 1.021, 1.014, 1.004, 0.974, 0.935, 0.874],
    [0.896, 0.892, 0.884, 0.883, 0.855, 0.823, 0.769],
    [0.818, 0.812, 0.806, 0.801, 0.780, 0.756, 0.691],
    [0.698, 0.695, 0.692, 0.689, 0.676, 0.656, 0.597],
    [0.593, 0.590, 0.588, 0.586, 0.579, 0.563, 0.513],
];

/// Position of `x` on a grid as `(lower index, weight of the upper node)`,
/// clamped to the grid ends.
fn grid_position(grid: &[f64], x: f64) -> (usize, f64) {
    let n = grid.len();
    if !(x > grid[0]) {
        return (0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 2, 1.0);
    }
    let hi = grid.partition_point(|&g| g <= x);
    let lo = hi - 1;
    (lo, (x - grid[lo]) / (grid[hi] - grid[lo]))
}

/// Stability index from the McCulloch quantile ratios by bilinear
/// interpolation; ratios outside the table are clamped to its edges.
pub fn mcculloch_alpha(nu_alpha: f64, nu_beta: f64) -> f64 {
    let (i, s) = grid_position(&MCCULLOCH_NU_ALPHA, nu_alpha);
    let (j, t) = grid_position(&MCCULLOCH_NU_BETA, nu_beta.abs());
    let a = &MCCULLOCH_ALPHA;
    (1.0 - s) * ((1.0 - t) * a[i][j] + t * a[i][j + 1]) + s * ((1.0 - t) * a[i + 1][j] + t * a[i + 1][j + 1])
}

/// Quantile ratios `(ν_α, ν_β)` of a sample, or `None` when the 5–95%
/// range is empty.
pub fn mcculloch_ratios(x: &[f64]) -> Option<(f64, f64)> {
    let s = sorted_copy(x);
    let q = |p| quantile_sorted(&s, p);
    let (q05, q25, q50, q75, q95) = (q(0.05), q(0.25), q(0.5), q(0.75), q(0.95));
    let spread = q95 - q05;
    if !(spread > 0.0) {
        return None;
    }
    let iqr = q75 - q25;
    let nu_alpha = if iqr > 0.0 { spread / iqr } else { f64::INFINITY };
    Some((nu_alpha, (q95 + q05 - 2.0 * q50) / spread))
}

/// `2 - α̂`; 0 for rows without spread.
pub fn alpha_statistic(x: &[f64]) -> f64 {
    match mcculloch_ratios(x) {
        Some((na, nb)) => 2.0 - mcculloch_alpha(na, nb),
        None => 0.0,
    }
}

pub fn alpha_selector(spec: &Spectrogram) -> Result<SelectorCurve> {
    let raw = per_bin(spec, 20, "alpha selector", alpha_statistic)?;
    SelectorCurve::new(raw, spec.freq_bins().to_vec(), SelectorMethod::Alpha, "alpha")
}

/// Quantile orders bounding the seven conditional-variance partitions.
pub const CV_QUANTILES: [f64; 6] = [0.004, 0.062, 0.308, 0.692, 0.938, 0.996];

/// Seven half-open intervals `(b[i-1], b[i]]` cut at the empirical
/// [`CV_QUANTILES`] of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StablePartitions {
    bounds: [f64; 6],
}

impl StablePartitions {
    pub fn from_sample(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::size("cannot partition an empty sample"));
        }
        Ok(Self::from_sorted(&sorted_copy(x)))
    }

    fn from_sorted(sorted: &[f64]) -> Self {
        StablePartitions {
            bounds: CV_QUANTILES.map(|p| quantile_sorted(sorted, p)),
        }
    }

    pub fn bounds(&self) -> [f64; 6] {
        self.bounds
    }

    /// Zero-based partition index of `v`.
    pub fn index_of(&self, v: f64) -> usize {
        self.bounds.partition_point(|&b| b < v)
    }
}

fn population_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Conditional-variance statistic
/// `((σ²₃ - σ²₄)/σ + (σ²₅ - σ²₄)/σ)² √T` on partitions 3, 4 and 5.
pub fn cv_statistic(x: &[f64]) -> f64 {
    if x.len() < 2 || is_constant(x) {
        return 0.0;
    }
    let parts = StablePartitions::from_sorted(&sorted_copy(x));
    let mut groups: [Vec<f64>; 3] = Default::default();
    for &v in x {
        let i = parts.index_of(v);
        if (2..=4).contains(&i) {
            groups[i - 2].push(v);
        }
    }
    if groups.iter().any(|g| g.is_empty()) {
        return 0.0;
    }
    let sigma = population_variance(x).sqrt();
    if sigma == 0.0 {
        return 0.0;
    }
    let [v3, v4, v5] = [0, 1, 2].map(|i| population_variance(&groups[i]));
    let s = (v3 - v4) / sigma + (v5 - v4) / sigma;
    s * s * (x.len() as f64).sqrt()
}

pub fn cv_selector(spec: &Spectrogram) -> Result<SelectorCurve> {
    let raw = per_bin(spec, 250, "conditional-variance selector", cv_statistic)?;
    SelectorCurve::new(raw, spec.freq_bins().to_vec(), SelectorMethod::Cv, "cv")
}

/// Default multiplier on the upper quartile that gates the Pearson selector.
pub const PEARSON_TH2_FACTOR: f64 = 1.1;

/// Bin centers of the interior local minima of a Freedman–Diaconis
/// histogram of `x`.
pub fn density_local_minima(x: &[f64]) -> Vec<f64> {
    if x.len() < 3 {
        return Vec::new();
    }
    let s = sorted_copy(x);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    if !(width > 0.0) || !(hi > lo) {
        return Vec::new();
    }
    let n_bins = (((hi - lo) / width).ceil() as usize).clamp(1, s.len());
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for v in &s {
        let b = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    // A flat valley floor counts once, at the centre of the run.
    let mut minima = Vec::new();
    let mut b = 1;
    while b + 1 < n_bins {
        let mut end = b;
        while end + 1 < n_bins && counts[end + 1] == counts[b] {
            end += 1;
        }
        if end + 1 < n_bins && counts[b] < counts[b - 1] && counts[b] < counts[end + 1] {
            minima.push(lo + ((b + end) as f64 / 2.0 + 0.5) * width);
        }
        b = end + 1;
    }
    minima
}

/// Lower threshold for one column: first quartile of the density's local
/// minima, or the column median when the density has none.
pub fn pearson_th1(column: &[f64]) -> f64 {
    let minima = density_local_minima(column);
    if minima.is_empty() {
        quantile_sorted(&sorted_copy(column), 0.5)
    } else {
        quantile_sorted(&minima, 0.25)
    }
}

/// Aggregated dependence-map selector with the default upper gate.
pub fn pearson_selector(map: &DependenceMap) -> Result<SelectorCurve> {
    pearson_selector_with(map, PEARSON_TH2_FACTOR)
}

/// Per column, the mean of the off-diagonal correlations above that
/// column's lower threshold; values not above `th2_factor` times the upper
/// quartile of the aggregated curve are then zeroed.
pub fn pearson_selector_with(map: &DependenceMap, th2_factor: f64) -> Result<SelectorCurve> {
    if !(th2_factor.is_finite() && th2_factor >= 0.0) {
        return Err(Error::invalid("TH2 factor must be finite and non-negative"));
    }
    let n = map.n_bins();
    let aggregated: Vec<f64> = par::map_range(n, |j| {
        let column: Vec<f64> = map.column(j).iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| *v).collect();
        if column.is_empty() {
            return 0.0;
        }
        let th1 = pearson_th1(&column);
        let (sum, count) = column.iter().filter(|v| **v > th1).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    });
    let th2 = th2_factor * quantile_sorted(&sorted_copy(&aggregated), 0.75);
    let gated = aggregated.into_iter().map(|v| if v > th2 { v } else { 0.0 }).collect();
    SelectorCurve::new(gated, map.freq_bins().to_vec(), SelectorMethod::Pearson, "pearson")
}
