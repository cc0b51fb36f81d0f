//! Short-time Fourier magnitude spectrogram and FFT-based analytic envelope.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    Hann,
    /// Symmetric Hamming, `0.54 - 0.46 cos(2πn / (L - 1))`.
    Hamming,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    WindowKind::Rectangular => 1.0,
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window: WindowKind,
    pub window_len: usize,
    /// Fraction of a window shared by consecutive frames, in `[0, 1)`.
    pub overlap: f64,
    pub fft_len: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window: WindowKind::Hamming,
            window_len: 256,
            overlap: 0.85,
            fft_len: 512,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::invalid("window length must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::invalid(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if self.fft_len < self.window_len {
            return Err(Error::invalid("fft length shorter than the window"));
        }
        if self.hop() == 0 {
            return Err(Error::invalid("overlap leaves a zero hop"));
        }
        Ok(())
    }

    /// Frame advance in samples.
    pub fn hop(&self) -> usize {
        (self.window_len as f64 * (1.0 - self.overlap)).round() as usize
    }

    /// One-sided bin count.
    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Number of complete frames in `n` samples.
    pub fn n_frames(&self, n: usize) -> usize {
        if n < self.window_len {
            0
        } else {
            (n - self.window_len) / self.hop() + 1
        }
    }
}

/// Magnitude spectrogram, stored bin-major so each bin's time series is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    n_frames: usize,
    n_bins: usize,
    data: Vec<f64>,
    time_centers: Vec<f64>,
    freq_bins: Vec<f64>,
}

impl Spectrogram {
    /// Builds a spectrogram from per-bin time series.
    pub fn from_bin_series(rows: Vec<Vec<f64>>, freq_bins: Vec<f64>) -> Result<Self> {
        let n_bins = rows.len();
        if n_bins == 0 || freq_bins.len() != n_bins {
            return Err(Error::size("bin rows and frequency axis disagree"));
        }
        let n_frames = rows[0].len();
        if rows.iter().any(|r| r.len() != n_frames) {
            return Err(Error::size("ragged spectrogram rows"));
        }
        if rows.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("spectrogram entries must be finite and non-negative"));
        }
        Ok(Spectrogram {
            n_frames,
            n_bins,
            data: rows.concat(),
            time_centers: (0..n_frames).map(|t| t as f64).collect(),
            freq_bins,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Magnitudes of bin `f` over time.
    pub fn bin_series(&self, f: usize) -> &[f64] {
        &self.data[f * self.n_frames..(f + 1) * self.n_frames]
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.data[bin * self.n_frames + frame]
    }

    pub fn time_centers(&self) -> &[f64] {
        &self.time_centers
    }

    pub fn freq_bins(&self) -> &[f64] {
        &self.freq_bins
    }

    /// A copy with bin `f` multiplied by `factor`.
    pub fn with_scaled_bin(&self, f: usize, factor: f64) -> Spectrogram {
        let mut out = self.clone();
        let n = self.n_frames;
        out.data[f * n..(f + 1) * n].iter_mut().for_each(|v| *v *= factor);
        out
    }
}

pub(crate) fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(len)
}

/// Full complex DFT of a real sequence.
pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_plan(buf.len()).process(&mut buf);
    buf
}

/// In-place inverse DFT, normalized by `1/N`.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
}

/// Multiplier that turns a full spectrum into the spectrum of the analytic signal.
pub(crate) fn analytic_gain(k: usize, n: usize) -> f64 {
    if k == 0 || (n % 2 == 0 && k == n / 2) {
        1.0
    } else if k < n.div_ceil(2) {
        2.0
    } else {
        0.0
    }
}

/// Turns the full spectrum of a real signal into its analytic signal, in place.
pub(crate) fn analytic_from_spectrum(spectrum: &mut [Complex64]) {
    let n = spectrum.len();
    for (k, c) in spectrum.iter_mut().enumerate() {
        *c *= analytic_gain(k, n);
    }
    ifft_in_place(spectrum);
}

/// Magnitude of the analytic signal.
pub fn analytic_envelope(signal: &Signal) -> Signal {
    let mut spec = fft_real(signal.samples());
    analytic_from_spectrum(&mut spec);
    Signal::from_parts(spec.iter().map(|c| c.norm()).collect(), signal.sample_rate())
}

/// Magnitude spectrogram `|STFT|` with one-sided bins `0..=fft_len/2`.
///
/// Frames start at sample 0 and advance by [`StftConfig::hop`]; a trailing
/// partial frame is dropped.
pub fn stft_spectrogram(signal: &Signal, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let x = signal.samples();
    if x.len() < config.window_len {
        return Err(Error::size(format!(
            "signal of {} samples is shorter than the {}-sample window",
            x.len(),
            config.window_len
        )));
    }
    let fs = signal.sample_rate();
    let hop = config.hop();
    let n_frames = config.n_frames(x.len());
    let n_bins = config.n_bins();
    let window = config.window.coefficients(config.window_len);
    let fft = forward_plan(config.fft_len);

    let frames: Vec<Vec<f64>> = par::map_range(n_frames, |t| {
        let start = t * hop;
        let mut buf = vec![Complex64::new(0.0, 0.0); config.fft_len];
        for (b, (&v, &w)) in buf.iter_mut().zip(x[start..start + config.window_len].iter().zip(&window)) {
            b.re = v * w;
        }
        fft.process(&mut buf);
        buf[..n_bins].iter().map(|c| c.norm()).collect()
    });

    let mut data = vec![0.0; n_bins * n_frames];
    for (t, frame) in frames.iter().enumerate() {
        for (f, &m) in frame.iter().enumerate() {
            data[f * n_frames + t] = m;
        }
    }
    let time_centers = (0..n_frames)
        .map(|t| (t * hop) as f64 / fs + config.window_len as f64 / (2.0 * fs))
        .collect();
    let freq_bins = (0..n_bins).map(|k| k as f64 * fs / config.fft_len as f64).collect();
    Ok(Spectrogram {
        n_frames,
        n_bins,
        data,
        time_centers,
        freq_bins,
    })
}
