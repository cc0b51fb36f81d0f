//! Band-pass filtering with a selector curve, squared envelope spectrum,
//! the ENVSI indicator and the fault verdict.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ntf::{Beta, NtfFactors};
use crate::par;
use crate::selectors::{SelectorCurve, SelectorMethod};
use crate::signal::Signal;
use crate::spectral::{analytic_gain, fft_real, forward_plan, ifft_in_place};

/// One-sided magnitude spectrum of the squared envelope, DC removed.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSpectrum {
    amplitudes: Vec<f64>,
    bin_width: f64,
}

impl EnvelopeSpectrum {
    pub fn new(amplitudes: Vec<f64>, bin_width: f64) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::size("envelope spectrum is empty"));
        }
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::invalid("bin width must be positive"));
        }
        if amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid("envelope amplitudes must be finite and non-negative"));
        }
        Ok(EnvelopeSpectrum { amplitudes, bin_width })
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.bin_width
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn freq_bins(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.frequency(k)).collect()
    }

    /// Scaled copy, for invariance checks.
    pub fn scaled(&self, factor: f64) -> EnvelopeSpectrum {
        EnvelopeSpectrum {
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
            bin_width: self.bin_width,
        }
    }
}

/// Half-width of the search window around each fault harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HarmonicTolerance {
    /// Whole envelope-spectrum bins either side of the nearest bin.
    Bins(usize),
    Hz(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvsiConfig {
    pub fault_frequency: f64,
    pub harmonics: usize,
    pub tolerance: HarmonicTolerance,
    /// Upper edge of the denominator band; `None` ends it with the last
    /// harmonic's window.
    pub total_band_top: Option<f64>,
}

impl Default for EnvsiConfig {
    fn default() -> Self {
        EnvsiConfig {
            fault_frequency: 30.0,
            harmonics: 5,
            tolerance: HarmonicTolerance::Bins(2),
            total_band_top: None,
        }
    }
}

impl EnvsiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fault_frequency > 0.0 && self.fault_frequency.is_finite()) {
            return Err(Error::invalid("fault frequency must be positive"));
        }
        if self.harmonics == 0 {
            return Err(Error::invalid("at least one harmonic is required"));
        }
        match self.tolerance {
            HarmonicTolerance::Bins(_) => {}
            HarmonicTolerance::Hz(h) => {
                if !(h > 0.0 && h < self.fault_frequency / 2.0) {
                    return Err(Error::invalid("harmonic tolerance must lie in (0, fault_frequency / 2) Hz"));
                }
            }
        }
        if let Some(top) = self.total_band_top {
            if !(top >= self.harmonics as f64 * self.fault_frequency) {
                return Err(Error::invalid(format!(
                    "total band top {top} Hz does not cover {} harmonics of {} Hz",
                    self.harmonics, self.fault_frequency
                )));
            }
        }
        Ok(())
    }

    /// Inclusive bin range searched for harmonic `i` (1-based).
    fn window(&self, i: usize, bin_width: f64) -> Result<(usize, usize)> {
        let center = i as f64 * self.fault_frequency;
        let (lo, hi) = match self.tolerance {
            HarmonicTolerance::Bins(b) => {
                if b as f64 * bin_width >= self.fault_frequency / 2.0 {
                    return Err(Error::invalid("harmonic windows of this many bins overlap"));
                }
                let c = (center / bin_width).round() as usize;
                (c.saturating_sub(b), c + b)
            }
            HarmonicTolerance::Hz(h) => (((center - h) / bin_width).ceil().max(0.0) as usize, ((center + h) / bin_width).floor() as usize),
        };
        let lo = lo.max(1);
        if hi < lo {
            return Err(Error::invalid(format!("harmonic window around {center} Hz contains no bins")));
        }
        Ok((lo, hi))
    }
}

/// `Σ AIS_i² / Σ SES_k²`, where `AIS_i` is the largest amplitude within the
/// window of harmonic `i` and the denominator runs from bin 1 to the top of
/// the band.
pub fn envsi(ses: &EnvelopeSpectrum, config: &EnvsiConfig) -> Result<f64> {
    config.validate()?;
    let a = ses.amplitudes();
    let df = ses.bin_width();
    let mut numerator = 0.0;
    let mut last_window_end = 0;
    for i in 1..=config.harmonics {
        let (lo, hi) = config.window(i, df)?;
        if hi >= a.len() {
            return Err(Error::size(format!(
                "envelope spectrum ends at {} Hz, below harmonic {i} of {} Hz",
                ses.frequency(a.len() - 1),
                config.fault_frequency
            )));
        }
        let ais = a[lo..=hi].iter().copied().fold(0.0, f64::max);
        numerator += ais * ais;
        last_window_end = hi;
    }
    let top = match config.total_band_top {
        Some(f) => ((f / df).floor() as usize).max(last_window_end),
        None => last_window_end,
    };
    let top = top.min(a.len() - 1);
    let denominator: f64 = a[1..=top].iter().map(|v| v * v).sum();
    if denominator == 0.0 {
        return Ok(0.0);
    }
    Ok((numerator / denominator).min(1.0))
}

fn curve_gains(curve: &SelectorCurve, n: usize, fs: f64) -> Vec<f64> {
    (0..=n / 2).map(|k| curve.value_at(k as f64 * fs / n as f64)).collect()
}

fn check_coverage(signal: &Signal, curve: &SelectorCurve) -> Result<()> {
    let nyquist = signal.sample_rate() / 2.0;
    let f = curve.freq_bins();
    let step = if f.len() > 1 { f[1] - f[0] } else { nyquist };
    if f[0] > step || f[f.len() - 1] < nyquist - step {
        return Err(Error::invalid(format!(
            "selector spans {}..{} Hz but the signal needs 0..{nyquist} Hz",
            f[0],
            f[f.len() - 1]
        )));
    }
    Ok(())
}

/// Zero-phase filtering: every DFT bin is scaled by the curve value at its
/// frequency (mirrored for negative frequencies).
pub fn filter_with_selector(signal: &Signal, curve: &SelectorCurve) -> Result<Signal> {
    if signal.is_empty() {
        return Err(Error::size("cannot filter an empty signal"));
    }
    check_coverage(signal, curve)?;
    let n = signal.len();
    let gains = curve_gains(curve, n, signal.sample_rate());
    let mut spec = fft_real(signal.samples());
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= gains[k.min(n - k)];
    }
    ifft_in_place(&mut spec);
    Signal::new(spec.iter().map(|c| c.re).collect(), signal.sample_rate())
}

fn ses_from_squared_envelope(env2: &[f64], fs: f64) -> Result<EnvelopeSpectrum> {
    let n = env2.len();
    let mut buf: Vec<Complex64> = env2.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_plan(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let mut amps: Vec<f64> = buf[..n / 2 + 1].iter().map(|c| c.norm() * scale).collect();
    amps[0] = 0.0;
    EnvelopeSpectrum::new(amps, fs / n as f64)
}

/// Magnitude spectrum (scaled by `1/N`) of the squared analytic envelope.
pub fn squared_envelope_spectrum(signal: &Signal) -> Result<EnvelopeSpectrum> {
    if signal.is_empty() {
        return Err(Error::size("cannot take the envelope of an empty signal"));
    }
    let mut spec = fft_real(signal.samples());
    let n = spec.len();
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= analytic_gain(k, n);
    }
    ifft_in_place(&mut spec);
    let env2: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
    ses_from_squared_envelope(&env2, signal.sample_rate())
}

/// Filtered signal and its envelope spectrum from a precomputed signal DFT,
/// sharing one inverse transform between the two.
fn filter_and_envelope(spectrum: &[Complex64], fs: f64, curve: &SelectorCurve) -> Result<(Vec<f64>, EnvelopeSpectrum)> {
    let n = spectrum.len();
    let gains = curve_gains(curve, n, fs);
    let mut z: Vec<Complex64> = spectrum
        .iter()
        .enumerate()
        .map(|(k, c)| c * (gains[k.min(n - k)] * analytic_gain(k, n)))
        .collect();
    ifft_in_place(&mut z);
    let filtered = z.iter().map(|c| c.re).collect();
    let env2: Vec<f64> = z.iter().map(|c| c.norm_sqr()).collect();
    Ok((filtered, ses_from_squared_envelope(&env2, fs)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Faulty,
    Healthy,
}

/// Default ENVSI above which a signal is declared faulty.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisConfig {
    pub envsi: EnvsiConfig,
    pub threshold: f64,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        DiagnosisConfig {
            envsi: EnvsiConfig::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Outcome for one selector curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassOutcome {
    pub curve: SelectorCurve,
    pub envsi: f64,
    /// The curve was all zero, so the filtered signal is silent.
    pub zero_curve: bool,
    pub centroid_hz: Option<f64>,
    #[serde(skip)]
    pub ses: EnvelopeSpectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosisReport {
    pub method: SelectorMethod,
    pub beta: Option<Beta>,
    pub classes: Vec<ClassOutcome>,
    pub chosen_class: usize,
    pub max_envsi: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    /// The signal filtered with the chosen class.
    #[serde(skip)]
    pub filtered: Signal,
}

impl DiagnosisReport {
    pub fn chosen(&self) -> &ClassOutcome {
        &self.classes[self.chosen_class]
    }
}

/// Filters with every curve, scores each by ENVSI and picks the best.
/// Ties go to the lower class index.
pub fn evaluate_curves(signal: &Signal, curves: Vec<SelectorCurve>, beta: Option<Beta>, config: &DiagnosisConfig) -> Result<DiagnosisReport> {
    config.envsi.validate()?;
    if !(config.threshold.is_finite() && config.threshold >= 0.0) {
        return Err(Error::invalid("decision threshold must be finite and non-negative"));
    }
    let Some(first) = curves.first() else {
        return Err(Error::invalid("no selector curves to evaluate"));
    };
    let method = first.method;
    if signal.is_empty() {
        return Err(Error::size("cannot diagnose an empty signal"));
    }
    for c in &curves {
        check_coverage(signal, c)?;
    }
    let fs = signal.sample_rate();
    let spectrum = fft_real(signal.samples());
    let results = par::map_slice(&curves, |c| -> Result<(Vec<f64>, EnvelopeSpectrum, f64)> {
        let (filtered, ses) = filter_and_envelope(&spectrum, fs, c)?;
        let value = envsi(&ses, &config.envsi)?;
        Ok((filtered, ses, value))
    });
    let mut classes = Vec::with_capacity(curves.len());
    let mut filtered_all = Vec::with_capacity(curves.len());
    for (curve, r) in curves.into_iter().zip(results) {
        let (filtered, ses, value) = r?;
        classes.push(ClassOutcome {
            zero_curve: curve.is_zero(),
            centroid_hz: curve.energy_centroid(),
            curve,
            envsi: value,
            ses,
        });
        filtered_all.push(filtered);
    }
    let mut chosen = 0;
    for (i, c) in classes.iter().enumerate() {
        if c.envsi > classes[chosen].envsi {
            chosen = i;
        }
    }
    let max_envsi = classes[chosen].envsi;
    let filtered = Signal::new(filtered_all.swap_remove(chosen), fs)?;
    Ok(DiagnosisReport {
        method,
        beta,
        classes,
        chosen_class: chosen,
        max_envsi,
        threshold: config.threshold,
        verdict: if max_envsi > config.threshold { Verdict::Faulty } else { Verdict::Healthy },
        filtered,
    })
}

/// Selector curves from the columns of `H`, one per class.
pub fn ntf_curves(factors: &NtfFactors, freq_bins: &[f64], beta: Beta) -> Result<Vec<SelectorCurve>> {
    if factors.h.rows() != freq_bins.len() {
        return Err(Error::size(format!(
            "H has {} rows for {} frequency bins",
            factors.h.rows(),
            freq_bins.len()
        )));
    }
    (0..factors.rank())
        .map(|k| SelectorCurve::new(factors.h.column(k), freq_bins.to_vec(), SelectorMethod::Ntf, format!("ntf_beta{beta}_class{k}")))
        .collect()
}

/// Runs every NTF class through the filter and envelope path and renders
/// the verdict from the best one.
pub fn diagnose(signal: &Signal, factors: &NtfFactors, freq_bins: &[f64], beta: Beta, config: &DiagnosisConfig) -> Result<DiagnosisReport> {
    evaluate_curves(signal, ntf_curves(factors, freq_bins, beta)?, Some(beta), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn flat_curve(value: f64, fs: f64) -> SelectorCurve {
        let bins: Vec<f64> = (0..=64).map(|k| k as f64 * fs / 128.0).collect();
        SelectorCurve::new(vec![value; 65], bins, SelectorMethod::Ntf, "flat").unwrap()
    }

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn unit_curve_is_identity() {
        let fs = 1000.0;
        let x = Signal::new(tone(37.0, fs, 999).iter().enumerate().map(|(i, v)| v + (i % 7) as f64 * 0.1).collect(), fs).unwrap();
        let y = filter_with_selector(&x, &flat_curve(1.0, fs)).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
        let z = filter_with_selector(&x, &flat_curve(0.0, fs)).unwrap();
        assert!(z.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ses_of_am_tone_peaks_at_modulation() {
        let fs = 8000.0;
        let n = 8000;
        let am: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (1.0 + 0.5 * (2.0 * PI * 30.0 * t).cos()) * (2.0 * PI * 1000.0 * t).sin()
            })
            .collect();
        let ses = squared_envelope_spectrum(&Signal::new(am, fs).unwrap()).unwrap();
        let (kmax, _) = ses.amplitudes().iter().enumerate().fold((0, 0.0), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
        assert_eq!(ses.frequency(kmax), 30.0);
        let plain = squared_envelope_spectrum(&Signal::new(tone(1000.0, fs, n), fs).unwrap()).unwrap();
        let peak = plain.amplitudes().iter().copied().fold(0.0, f64::max);
        assert!(ses.amplitudes()[kmax] > 100.0 * peak);
    }

    fn comb(len: usize, df: f64, ff: f64, harmonics: usize, floor: f64) -> EnvelopeSpectrum {
        let mut a = vec![floor; len];
        a[0] = 0.0;
        for i in 1..=harmonics {
            a[(i as f64 * ff / df).round() as usize] = 1.0;
        }
        EnvelopeSpectrum::new(a, df).unwrap()
    }

    #[test]
    fn envsi_extremes() {
        let cfg = EnvsiConfig::default();
        let pure = comb(2000, 0.5, 30.0, 5, 0.0);
        assert!((envsi(&pure, &cfg).unwrap() - 1.0).abs() < 1e-15);

        let mut a = vec![0.3; 2000];
        for i in 1..=5 {
            let c = i * 60;
            for k in c - 2..=c + 2 {
                a[k] = 0.0;
            }
        }
        let holes = EnvelopeSpectrum::new(a, 0.5).unwrap();
        assert_eq!(envsi(&holes, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn envsi_is_scale_free_and_bounded() {
        let cfg = EnvsiConfig::default();
        let s = comb(2000, 0.5, 30.0, 5, 0.05);
        let v = envsi(&s, &cfg).unwrap();
        assert!(v > 0.0 && v < 1.0);
        assert!((envsi(&s.scaled(123.0), &cfg).unwrap() - v).abs() < 1e-14);
    }

    #[test]
    fn envsi_configuration_errors() {
        let s = comb(100, 0.5, 30.0, 1, 0.0);
        assert!(matches!(envsi(&s, &EnvsiConfig::default()), Err(Error::Size(_))));
        let bad = EnvsiConfig {
            tolerance: HarmonicTolerance::Hz(15.0),
            ..EnvsiConfig::default()
        };
        assert!(envsi(&comb(2000, 0.5, 30.0, 5, 0.0), &bad).is_err());
        let low_top = EnvsiConfig {
            total_band_top: Some(100.0),
            ..EnvsiConfig::default()
        };
        assert!(low_top.validate().is_err());
    }

    #[test]
    fn wider_denominator_band_lowers_envsi() {
        let s = comb(2000, 0.5, 30.0, 13, 0.0);
        let narrow = envsi(&s, &EnvsiConfig::default()).unwrap();
        let wide = envsi(
            &s,
            &EnvsiConfig {
                total_band_top: Some(400.0),
                ..EnvsiConfig::default()
            },
        )
        .unwrap();
        assert!((narrow - 1.0).abs() < 1e-15);
        assert!((wide - 5.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn curve_must_reach_nyquist() {
        let x = Signal::new(vec![1.0; 64], 1000.0).unwrap();
        let bins: Vec<f64> = (0..10).map(|k| k as f64 * 10.0).collect();
        let c = SelectorCurve::new(vec![1.0; 10], bins, SelectorMethod::Cv, "short").unwrap();
        assert!(filter_with_selector(&x, &c).is_err());
    }
}
