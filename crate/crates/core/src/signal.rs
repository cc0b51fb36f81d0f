//! Synthetic vibration signal: a cyclic train of damped resonances (the fault
//! signature), sparse high-amplitude impulses at random times, and white
//! Gaussian background noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative envelope level below which an impulse is cut off.
pub const IMPULSE_TRUNCATION: f64 = 1e-4;

/// A uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::size("signal has no samples"));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Signal { samples, sample_rate })
    }

    /// Builds a signal whose samples are known to be finite and non-empty.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate: f64) -> Self {
        debug_assert!(!samples.is_empty());
        Signal { samples, sample_rate }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// A copy with every sample multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Signal {
        Signal::from_parts(self.samples.iter().map(|x| x * factor).collect(), self.sample_rate)
    }
}

/// Cyclic impulses produced by a local fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoiParams {
    pub amplitude: f64,
    /// Impulse repetition rate (Hz).
    pub fault_frequency: f64,
    /// Resonance excited by each impulse (Hz).
    pub carrier_frequency: f64,
    /// Exponential decay rate (1/s).
    pub decay: f64,
    /// Time of the first impulse (s).
    pub phase_origin: f64,
}

impl Default for SoiParams {
    fn default() -> Self {
        SoiParams {
            amplitude: 4.0,
            fault_frequency: 30.0,
            carrier_frequency: 2500.0,
            decay: 1000.0,
            phase_origin: 0.0,
        }
    }
}

/// Randomly located impulsive disturbances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulseNoiseParams {
    /// Mean absolute amplitude; individual impulses draw from `[0.5, 1.5]` times this.
    pub amplitude_scale: f64,
    pub carrier_frequency: f64,
    pub decay: f64,
    /// Poisson rate of impulses (1/s).
    pub rate: f64,
}

impl Default for ImpulseNoiseParams {
    fn default() -> Self {
        ImpulseNoiseParams {
            amplitude_scale: 20.0,
            carrier_frequency: 6000.0,
            decay: 1000.0,
            rate: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub soi: SoiParams,
    pub impulses: ImpulseNoiseParams,
    /// Variance of the Gaussian background.
    pub noise_variance: f64,
    pub sample_rate: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            soi: SoiParams::default(),
            impulses: ImpulseNoiseParams::default(),
            noise_variance: 1.2,
            sample_rate: 25_000.0,
            duration: 30.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fs = self.sample_rate;
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        if self.sample_count() == 0 {
            return Err(Error::invalid("duration shorter than one sample"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid("noise_variance must be non-negative"));
        }
        let nyquist = fs / 2.0;
        let soi = &self.soi;
        if !(soi.amplitude >= 0.0 && soi.amplitude.is_finite()) {
            return Err(Error::invalid("SOI amplitude must be non-negative"));
        }
        if !(soi.fault_frequency > 0.0 && soi.fault_frequency.is_finite()) {
            return Err(Error::invalid("fault_frequency must be positive"));
        }
        if !(soi.carrier_frequency > 0.0 && soi.carrier_frequency < nyquist) {
            return Err(Error::invalid(format!(
                "SOI carrier {} Hz must lie in (0, {nyquist}) Hz",
                soi.carrier_frequency
            )));
        }
        if !(soi.decay >= 0.0 && soi.decay.is_finite()) {
            return Err(Error::invalid("SOI decay must be non-negative"));
        }
        if !(soi.phase_origin >= 0.0 && soi.phase_origin.is_finite()) {
            return Err(Error::invalid("phase_origin must be non-negative"));
        }
        let imp = &self.impulses;
        if !(imp.amplitude_scale >= 0.0 && imp.amplitude_scale.is_finite()) {
            return Err(Error::invalid("impulse amplitude must be non-negative"));
        }
        if !(imp.carrier_frequency > 0.0 && imp.carrier_frequency < nyquist) {
            return Err(Error::invalid(format!(
                "impulse carrier {} Hz must lie in (0, {nyquist}) Hz",
                imp.carrier_frequency
            )));
        }
        if !(imp.decay >= 0.0 && imp.decay.is_finite()) {
            return Err(Error::invalid("impulse decay must be non-negative"));
        }
        if !(imp.rate >= 0.0 && imp.rate.is_finite()) {
            return Err(Error::invalid("impulse rate must be non-negative"));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    /// Onset times (s) of the cyclic impulses that start inside the signal.
    pub fn soi_onsets(&self) -> Vec<f64> {
        let end = self.sample_count() as f64 / self.sample_rate;
        (0..)
            .map(|j| self.soi.phase_origin + j as f64 / self.soi.fault_frequency)
            .take_while(|&t| t < end)
            .collect()
    }
}

/// `A sin(2π f_c t) e^{-d t}` for a single impulse, `t` measured from its onset.
pub fn soi_waveform(params: &SoiParams, t: f64) -> f64 {
    damped_sine(params.amplitude, params.carrier_frequency, params.decay, t)
}

fn damped_sine(amplitude: f64, carrier: f64, decay: f64, t: f64) -> f64 {
    amplitude * (2.0 * PI * carrier * t).sin() * (-decay * t).exp()
}

/// Adds one damped-sine impulse starting at `onset` seconds.
fn add_impulse(buf: &mut [f64], fs: f64, onset: f64, amplitude: f64, carrier: f64, decay: f64) {
    if amplitude == 0.0 {
        return;
    }
    let support = if decay > 0.0 {
        (1.0 / IMPULSE_TRUNCATION).ln() / decay
    } else {
        f64::INFINITY
    };
    let pos = onset * fs;
    // Onsets that land on a sample (up to rounding) start at that sample.
    let first = if (pos - pos.round()).abs() < 1e-9 {
        pos.round()
    } else {
        pos.ceil()
    };
    let first = first.max(0.0) as usize;
    for (n, x) in buf.iter_mut().enumerate().skip(first) {
        let t = n as f64 / fs - onset;
        if t > support {
            break;
        }
        *x += damped_sine(amplitude, carrier, decay, t.max(0.0));
    }
}

/// The three additive parts of a simulated signal.
#[derive(Debug, Clone)]
pub struct Components {
    pub soi: Vec<f64>,
    pub impulses: Vec<f64>,
    pub noise: Vec<f64>,
    /// Onsets (s) of the random impulses, in draw order.
    pub impulse_onsets: Vec<f64>,
}

pub fn simulate_components(config: &SimConfig) -> Result<Components> {
    config.validate()?;
    let fs = config.sample_rate;
    let n = config.sample_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut soi = vec![0.0; n];
    for onset in config.soi_onsets() {
        let p = &config.soi;
        add_impulse(&mut soi, fs, onset, p.amplitude, p.carrier_frequency, p.decay);
    }

    let imp = &config.impulses;
    let lambda = imp.rate * n as f64 / fs;
    let count = if lambda > 0.0 {
        let poisson = Poisson::new(lambda).map_err(|e| Error::invalid(e.to_string()))?;
        poisson.sample(&mut rng) as usize
    } else {
        0
    };
    let end = n as f64 / fs;
    let mut impulses = vec![0.0; n];
    let mut impulse_onsets = Vec::with_capacity(count);
    for _ in 0..count {
        let onset = rng.random_range(0.0..end);
        let magnitude = imp.amplitude_scale * rng.random_range(0.5..=1.5);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        add_impulse(&mut impulses, fs, onset, sign * magnitude, imp.carrier_frequency, imp.decay);
        impulse_onsets.push(onset);
    }

    let noise = if config.noise_variance > 0.0 {
        let normal = Normal::new(0.0, config.noise_variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; n]
    };

    Ok(Components {
        soi,
        impulses,
        noise,
        impulse_onsets,
    })
}

/// Simulates `SOI + random impulses + Gaussian noise`.
pub fn simulate(config: &SimConfig) -> Result<Signal> {
    let c = simulate_components(config)?;
    let samples = c
        .soi
        .iter()
        .zip(&c.impulses)
        .zip(&c.noise)
        .map(|((s, i), g)| s + i + g)
        .collect();
    Ok(Signal::from_parts(samples, config.sample_rate))
}
