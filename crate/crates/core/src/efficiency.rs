//! Monte-Carlo success rates over a grid of cyclic and non-cyclic impulse
//! amplitudes.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dependence::build_tensor;
use crate::diagnosis::{evaluate_curves, DiagnosisConfig, DiagnosisReport};
use crate::error::{Error, Result};
use crate::ntf::{Beta, NtfConfig};
use crate::par;
use crate::pipeline::{comparison_curve, run_ntf};
use crate::selectors::{SelectorMethod, PEARSON_TH2_FACTOR};
use crate::signal::{simulate, SimConfig};
use crate::spectral::StftConfig;

/// Iteration cap used for grid runs, where the factor shapes settle long
/// before the objective meets the full-run tolerance.
pub const EFFICIENCY_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EfficiencyMethod {
    Ntf(Beta),
    Selector(SelectorMethod),
}

impl fmt::Display for EfficiencyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EfficiencyMethod::Ntf(b) => write!(f, "ntf_beta{b}"),
            EfficiencyMethod::Selector(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySpec {
    /// Template for every trial; amplitudes and seed are overwritten.
    pub base: SimConfig,
    pub a_ci: Vec<f64>,
    pub a_nci: Vec<f64>,
    pub trials: usize,
    /// Index of the first trial, so a grid can be split across runs.
    pub first_trial: usize,
    pub methods: Vec<EfficiencyMethod>,
    pub seed: u64,
    pub stft: StftConfig,
    pub segments: usize,
    pub ntf: NtfConfig,
    pub diagnosis: DiagnosisConfig,
    /// A trial succeeds when the chosen ENVSI passes the threshold and the
    /// selector's energy centroid is within this many hertz of the carrier.
    pub band_half_width: f64,
    pub pearson_th2_factor: f64,
}

impl Default for EfficiencySpec {
    fn default() -> Self {
        EfficiencySpec {
            base: SimConfig::default(),
            a_ci: vec![1.0, 2.0, 4.0],
            a_nci: vec![10.0, 20.0, 30.0],
            trials: 10,
            first_trial: 0,
            methods: vec![EfficiencyMethod::Ntf(Beta::ITAKURA_SAITO)],
            seed: 1,
            stft: StftConfig::default(),
            segments: 30,
            ntf: NtfConfig {
                max_iterations: EFFICIENCY_MAX_ITERATIONS,
                ..NtfConfig::default()
            },
            diagnosis: DiagnosisConfig::default(),
            band_half_width: 500.0,
            pearson_th2_factor: PEARSON_TH2_FACTOR,
        }
    }
}

impl EfficiencySpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.a_ci.is_empty() || self.a_nci.is_empty() {
            return Err(Error::invalid("both grid axes need at least one value"));
        }
        if self.a_ci.iter().chain(&self.a_nci).any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid("grid amplitudes must be finite and non-negative"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if self.methods.contains(&EfficiencyMethod::Selector(SelectorMethod::Ntf)) {
            return Err(Error::invalid("ntf needs a beta"));
        }
        if !(self.band_half_width > 0.0) {
            return Err(Error::invalid("band half-width must be positive"));
        }
        self.base.validate()?;
        self.stft.validate()?;
        self.ntf.validate()?;
        self.diagnosis.envsi.validate()
    }

    /// Seed of one trial, drawn from its own ChaCha stream so that it does
    /// not depend on which other trials run.
    pub fn trial_seed(&self, ci: usize, nci: usize, trial: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((ci as u64) << 48) | ((nci as u64) << 32) | trial as u64);
        rng.next_u64()
    }

    fn trial_config(&self, ci: usize, nci: usize, trial: usize) -> SimConfig {
        let mut sim = self.base;
        sim.soi.amplitude = self.a_ci[ci];
        sim.impulses.amplitude_scale = self.a_nci[nci];
        sim.seed = self.trial_seed(ci, nci, trial);
        sim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub a_ci: f64,
    pub a_nci: f64,
    pub trial: usize,
    pub seed: u64,
    pub method: String,
    pub envsi: f64,
    pub centroid_hz: Option<f64>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodGrid {
    pub method: String,
    /// Successful trials, indexed `[a_ci][a_nci]`.
    pub successes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyGrid {
    pub a_ci: Vec<f64>,
    pub a_nci: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<MethodGrid>,
    pub records: Vec<TrialRecord>,
}

impl EfficiencyGrid {
    pub fn method(&self, name: &str) -> Option<&MethodGrid> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Success percentage of `method` in cell `(ci, nci)`.
    pub fn percent(&self, method: &str, ci: usize, nci: usize) -> Option<f64> {
        let m = self.method(method)?;
        Some(100.0 * m.successes[ci][nci] as f64 / self.trials as f64)
    }

    /// Pools the counts of two grids over the same axes and methods.
    pub fn merge(&self, other: &EfficiencyGrid) -> Result<EfficiencyGrid> {
        let names = |g: &EfficiencyGrid| g.methods.iter().map(|m| m.method.clone()).collect::<Vec<_>>();
        if self.a_ci != other.a_ci || self.a_nci != other.a_nci || names(self) != names(other) {
            return Err(Error::invalid("grids differ in axes or methods"));
        }
        let methods = self
            .methods
            .iter()
            .zip(&other.methods)
            .map(|(a, b)| MethodGrid {
                method: a.method.clone(),
                successes: a
                    .successes
                    .iter()
                    .zip(&b.successes)
                    .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
                    .collect(),
            })
            .collect();
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Ok(EfficiencyGrid {
            a_ci: self.a_ci.clone(),
            a_nci: self.a_nci.clone(),
            trials: self.trials + other.trials,
            methods,
            records,
        })
    }
}

fn is_success(report: &DiagnosisReport, carrier: f64, half_width: f64) -> bool {
    let chosen = report.chosen();
    report.max_envsi > report.threshold && chosen.centroid_hz.is_some_and(|c| (c - carrier).abs() <= half_width)
}

fn run_trial(spec: &EfficiencySpec, ci: usize, nci: usize, trial: usize) -> Result<Vec<TrialRecord>> {
    let sim = spec.trial_config(ci, nci, trial);
    let signal = simulate(&sim)?;
    let needs_tensor = spec.methods.iter().any(|m| matches!(m, EfficiencyMethod::Ntf(_)));
    let tensor = if needs_tensor {
        Some(build_tensor(&signal, spec.segments, &spec.stft)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(spec.methods.len());
    for method in &spec.methods {
        let report = match method {
            EfficiencyMethod::Ntf(beta) => {
                let cfg = NtfConfig { beta: *beta, ..spec.ntf };
                run_ntf(&signal, tensor.as_ref().expect("tensor is built for ntf"), &cfg, &spec.diagnosis)?.diagnosis
            }
            EfficiencyMethod::Selector(m) => {
                let curve = comparison_curve(&signal, *m, &spec.stft, spec.pearson_th2_factor)?;
                evaluate_curves(&signal, vec![curve], None, &spec.diagnosis)?
            }
        };
        out.push(TrialRecord {
            a_ci: spec.a_ci[ci],
            a_nci: spec.a_nci[nci],
            trial,
            seed: sim.seed,
            method: method.to_string(),
            envsi: report.max_envsi,
            centroid_hz: report.chosen().centroid_hz,
            success: is_success(&report, sim.soi.carrier_frequency, spec.band_half_width),
        });
    }
    Ok(out)
}

/// Runs trials `first_trial .. first_trial + trials` in every cell.
pub fn efficiency(spec: &EfficiencySpec) -> Result<EfficiencyGrid> {
    spec.validate()?;
    let (n_ci, n_nci) = (spec.a_ci.len(), spec.a_nci.len());
    let jobs: Vec<(usize, usize, usize)> = (0..n_ci)
        .flat_map(|ci| (0..n_nci).flat_map(move |nci| (0..spec.trials).map(move |t| (ci, nci, t))))
        .collect();
    let results = par::map_slice(&jobs, |&(ci, nci, t)| run_trial(spec, ci, nci, spec.first_trial + t));

    let mut methods: Vec<MethodGrid> = spec
        .methods
        .iter()
        .map(|m| MethodGrid {
            method: m.to_string(),
            successes: vec![vec![0; n_nci]; n_ci],
        })
        .collect();
    let mut records = Vec::with_capacity(jobs.len() * spec.methods.len());
    for (&(ci, nci, _), r) in jobs.iter().zip(results) {
        for (k, rec) in r?.into_iter().enumerate() {
            if rec.success {
                methods[k].successes[ci][nci] += 1;
            }
            records.push(rec);
        }
    }
    Ok(EfficiencyGrid {
        a_ci: spec.a_ci.clone(),
        a_nci: spec.a_nci.clone(),
        trials: spec.trials,
        methods,
        records,
    })
}
