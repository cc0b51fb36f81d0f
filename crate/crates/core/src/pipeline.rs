//! End-to-end analysis of one signal: dependence tensor, NTF for each
//! requested β, diagnosis, comparison selectors and on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dependence::{build_tensor, dependence_map, DependenceTensor};
use crate::diagnosis::{diagnose, evaluate_curves, DiagnosisConfig, DiagnosisReport, Verdict};
use crate::error::{Error, Result};
use crate::io::{self, InputFormat};
use crate::ntf::{decompose, Beta, NtfConfig, NtfFactors};
use crate::selectors::{self, SelectorCurve, SelectorMethod, PEARSON_TH2_FACTOR};
use crate::signal::{simulate, Signal, SimConfig};
use crate::spectral::{stft_spectrogram, StftConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    Simulated(SimConfig),
    File {
        path: PathBuf,
        format: InputFormat,
        sample_rate: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputSource,
    pub stft: StftConfig,
    pub segments: usize,
    pub betas: Vec<Beta>,
    /// Solver settings shared by every β; its `beta` field is ignored.
    pub ntf: NtfConfig,
    pub diagnosis: DiagnosisConfig,
    pub selectors: Vec<SelectorMethod>,
    pub pearson_th2_factor: f64,
    /// Where artifacts go; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
    /// Dependence-map slices to dump as CSV.
    pub dump_slices: Vec<usize>,
    /// Also write each method's filtered signal.
    pub write_filtered: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: InputSource::Simulated(SimConfig::default()),
            stft: StftConfig::default(),
            segments: 30,
            betas: vec![Beta::ITAKURA_SAITO],
            ntf: NtfConfig::default(),
            diagnosis: DiagnosisConfig::default(),
            selectors: vec![SelectorMethod::Ntf],
            pearson_th2_factor: PEARSON_TH2_FACTOR,
            output_dir: None,
            dump_slices: Vec::new(),
            write_filtered: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.selectors.is_empty() {
            return Err(Error::invalid("at least one selector method must be enabled"));
        }
        if self.selectors.contains(&SelectorMethod::Ntf) && self.betas.is_empty() {
            return Err(Error::invalid("the ntf method needs at least one beta"));
        }
        if self.segments == 0 {
            return Err(Error::invalid("segment count must be at least 1"));
        }
        if let InputSource::Simulated(sim) = &self.input {
            sim.validate()?;
        }
        self.stft.validate()?;
        self.ntf.validate()?;
        self.diagnosis.envsi.validate()?;
        if self.dump_slices.iter().any(|&m| m >= self.segments) {
            return Err(Error::invalid("slice index beyond the segment count"));
        }
        Ok(())
    }

    pub fn ntf_for(&self, beta: Beta) -> NtfConfig {
        NtfConfig { beta, ..self.ntf }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalSummary {
    pub samples: usize,
    pub sample_rate: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NtfRun {
    pub beta: Beta,
    pub rank: usize,
    pub seed: u64,
    pub iterations_run: usize,
    pub final_objective: f64,
    pub diagnosis: DiagnosisReport,
    #[serde(skip)]
    pub factors: NtfFactors,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub config: RunConfig,
    pub signal: SignalSummary,
    pub ntf: Vec<NtfRun>,
    pub selectors: Vec<DiagnosisReport>,
    /// From the NTF runs when enabled, otherwise from the comparison selectors.
    pub max_envsi: f64,
    pub verdict: Verdict,
}

impl AnalysisReport {
    pub fn ntf_run(&self, beta: Beta) -> Option<&NtfRun> {
        self.ntf.iter().find(|r| r.beta == beta)
    }

    pub fn selector(&self, method: SelectorMethod) -> Option<&DiagnosisReport> {
        self.selectors.iter().find(|r| r.method == method)
    }
}

pub fn load_signal(input: &InputSource) -> Result<Signal> {
    match input {
        InputSource::Simulated(sim) => simulate(sim),
        InputSource::File { path, format, sample_rate } => io::ingest(path, *format, *sample_rate),
    }
}

/// Comparison selector curve computed on the whole signal.
pub fn comparison_curve(signal: &Signal, method: SelectorMethod, stft: &StftConfig, th2_factor: f64) -> Result<SelectorCurve> {
    let spec = stft_spectrogram(signal, stft)?;
    match method {
        SelectorMethod::Kurtosis => selectors::spectral_kurtosis(&spec),
        SelectorMethod::Alpha => selectors::alpha_selector(&spec),
        SelectorMethod::Cv => selectors::cv_selector(&spec),
        SelectorMethod::Pearson => selectors::pearson_selector_with(&dependence_map(&spec)?, th2_factor),
        SelectorMethod::Ntf => Err(Error::invalid("ntf is not a single-curve selector")),
    }
}

/// NTF of an already built tensor followed by diagnosis.
pub fn run_ntf(signal: &Signal, tensor: &DependenceTensor, ntf: &NtfConfig, diagnosis: &DiagnosisConfig) -> Result<NtfRun> {
    let factors = decompose(tensor.tensor(), ntf).map_err(|e| e.in_stage("ntf"))?;
    let report = diagnose(signal, &factors, tensor.freq_bins(), ntf.beta, diagnosis).map_err(|e| e.in_stage("diagnosis"))?;
    Ok(NtfRun {
        beta: ntf.beta,
        rank: ntf.rank,
        seed: ntf.seed,
        iterations_run: factors.iterations_run,
        final_objective: factors.final_objective().unwrap_or(f64::NAN),
        diagnosis: report,
        factors,
    })
}

/// Runs the configured analysis and, when an output directory is set,
/// writes its artifacts there.
pub fn analyze(config: &RunConfig) -> Result<AnalysisReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let signal = load_signal(&config.input).map_err(|e| e.in_stage("input"))?;
    analyze_signal(config, &signal)
}

/// [`analyze`] on a signal that is already in memory.
pub fn analyze_signal(config: &RunConfig, signal: &Signal) -> Result<AnalysisReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let use_ntf = config.selectors.contains(&SelectorMethod::Ntf);
    let tensor = if use_ntf || !config.dump_slices.is_empty() {
        Some(build_tensor(signal, config.segments, &config.stft).map_err(|e| e.in_stage("tensor"))?)
    } else {
        None
    };

    let mut ntf = Vec::new();
    if use_ntf {
        let tensor = tensor.as_ref().expect("tensor is built when ntf is enabled");
        for &beta in &config.betas {
            ntf.push(run_ntf(signal, tensor, &config.ntf_for(beta), &config.diagnosis)?);
        }
    }

    let mut comparison = Vec::new();
    for &method in config.selectors.iter().filter(|m| **m != SelectorMethod::Ntf) {
        let curve = comparison_curve(signal, method, &config.stft, config.pearson_th2_factor).map_err(|e| e.in_stage("selectors"))?;
        comparison.push(evaluate_curves(signal, vec![curve], None, &config.diagnosis).map_err(|e| e.in_stage("diagnosis"))?);
    }

    let max_envsi = if use_ntf {
        ntf.iter().map(|r| r.diagnosis.max_envsi).fold(0.0, f64::max)
    } else {
        comparison.iter().map(|r| r.max_envsi).fold(0.0, f64::max)
    };
    let report = AnalysisReport {
        config: config.clone(),
        signal: SignalSummary {
            samples: signal.len(),
            sample_rate: signal.sample_rate(),
            duration: signal.duration(),
        },
        ntf,
        selectors: comparison,
        max_envsi,
        verdict: if max_envsi > config.diagnosis.threshold { Verdict::Faulty } else { Verdict::Healthy },
    };
    if let Some(dir) = &config.output_dir {
        write_artifacts(&report, tensor.as_ref(), dir).map_err(|e| e.in_stage("output"))?;
    }
    Ok(report)
}

fn file_tag(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

fn write_diagnosis(report: &DiagnosisReport, dir: &Path, ses_top: f64, write_filtered: bool) -> Result<()> {
    for class in &report.classes {
        let tag = file_tag(&class.curve.label);
        io::write_xy_csv(&dir.join(format!("selector_{tag}.csv")), ("freq_hz", "value"), class.curve.freq_bins(), class.curve.values())?;
        let ses = &class.ses;
        let n = ((ses_top / ses.bin_width()).floor() as usize + 1).min(ses.len());
        io::write_xy_csv(&dir.join(format!("ses_{tag}.csv")), ("freq_hz", "amplitude"), &ses.freq_bins()[..n], &ses.amplitudes()[..n])?;
    }
    if write_filtered {
        let tag = file_tag(&report.chosen().curve.label);
        io::write_signal_csv(&dir.join(format!("filtered_{tag}.csv")), &report.filtered)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FactorMeta {
    beta: Beta,
    rank: usize,
    seed: u64,
    iterations: usize,
    final_objective: f64,
    objective_trace: Vec<f64>,
}

/// Writes `report.json`, selector and envelope-spectrum curves, NTF factors
/// and any requested tensor slices into `dir`.
pub fn write_artifacts(report: &AnalysisReport, tensor: Option<&DependenceTensor>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_json(&dir.join("report.json"), report)?;
    let envsi = &report.config.diagnosis.envsi;
    let ses_top = envsi.total_band_top.unwrap_or(0.0).max(2.0 * envsi.harmonics as f64 * envsi.fault_frequency);
    for run in &report.ntf {
        write_diagnosis(&run.diagnosis, dir, ses_top, report.config.write_filtered)?;
        let sub = dir.join(format!("ntf_beta{}", run.beta));
        fs::create_dir_all(&sub)?;
        io::write_matrix_csv(&sub.join("W.csv"), &run.factors.w)?;
        io::write_matrix_csv(&sub.join("H.csv"), &run.factors.h)?;
        io::write_matrix_csv(&sub.join("Q.csv"), &run.factors.q)?;
        io::write_json(
            &sub.join("factors.json"),
            &FactorMeta {
                beta: run.beta,
                rank: run.rank,
                seed: run.seed,
                iterations: run.iterations_run,
                final_objective: run.final_objective,
                objective_trace: run.factors.objective_trace.clone(),
            },
        )?;
    }
    for sel in &report.selectors {
        write_diagnosis(sel, dir, ses_top, report.config.write_filtered)?;
    }
    if let Some(t) = tensor {
        for &m in &report.config.dump_slices {
            io::write_square_csv(&dir.join(format!("slice_{m}.csv")), t.n_bins(), t.slice(m))?;
        }
    }
    Ok(())
}
