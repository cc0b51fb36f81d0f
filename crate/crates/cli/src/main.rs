//! `bearing-ntf`: simulate test signals, analyse recordings and run Monte
//! Carlo efficiency grids.

mod config_file;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bearing_ntf::diagnosis::DiagnosisReport;
use bearing_ntf::efficiency::{efficiency, EfficiencyGrid, EfficiencyMethod, EfficiencySpec, EFFICIENCY_MAX_ITERATIONS};
use bearing_ntf::io::{self, InputFormat};
use bearing_ntf::ntf::{Beta, NtfConfig};
use bearing_ntf::pipeline::{analyze, AnalysisReport, InputSource, RunConfig};
use bearing_ntf::selectors::SelectorMethod;
use bearing_ntf::{simulate, Error, SimConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bearing-ntf", version, about = "Bearing fault detection by NTF of spectral dependence maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated vibration signal and a JSON sidecar with its settings.
    Simulate(SimulateArgs),
    /// Diagnose a recording or a simulated signal.
    Analyze(AnalyzeArgs),
    /// Success rates over a grid of fault and disturbance amplitudes.
    Efficiency(EfficiencyArgs),
}

/// Simulation knobs shared by all subcommands.
#[derive(Args, Clone)]
struct SimArgs {
    /// Cyclic (fault) impulse amplitude.
    #[arg(long)]
    aci: Option<f64>,
    /// Mean amplitude of the random impulses.
    #[arg(long)]
    anci: Option<f64>,
    /// Variance of the Gaussian background.
    #[arg(long)]
    noise_variance: Option<f64>,
    /// Resonance of the fault impulses (Hz).
    #[arg(long)]
    soi_carrier: Option<f64>,
    /// Resonance of the random impulses (Hz).
    #[arg(long)]
    nci_carrier: Option<f64>,
    /// Rate of the random impulses (1/s).
    #[arg(long)]
    nci_rate: Option<f64>,
    /// Decay rate of both impulse families (1/s).
    #[arg(long)]
    decay: Option<f64>,
    /// Signal length (s).
    #[arg(long)]
    duration: Option<f64>,
}

impl SimArgs {
    fn apply(&self, sim: &mut SimConfig) {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut sim.soi.amplitude, self.aci);
        set(&mut sim.impulses.amplitude_scale, self.anci);
        set(&mut sim.noise_variance, self.noise_variance);
        set(&mut sim.soi.carrier_frequency, self.soi_carrier);
        set(&mut sim.impulses.carrier_frequency, self.nci_carrier);
        set(&mut sim.impulses.rate, self.nci_rate);
        set(&mut sim.soi.decay, self.decay);
        set(&mut sim.impulses.decay, self.decay);
        set(&mut sim.duration, self.duration);
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Output file; the format follows its extension unless --format is given.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<InputFormat>,
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Fault repetition frequency (Hz).
    #[arg(long)]
    fault_freq: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    sim: SimArgs,
    /// Flat key = value file of flag values; flags on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Recording to analyse; a simulated signal is used when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Input format; guessed from the extension when absent.
    #[arg(long)]
    format: Option<InputFormat>,
    /// Sample rate (Hz); required for csv and f32le input.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Number of segments M the signal is cut into.
    #[arg(long)]
    segments: Option<usize>,
    /// NTF divergence parameter; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta: Vec<f64>,
    /// NTF rank K.
    #[arg(long)]
    rank: Option<usize>,
    /// Expected fault frequency (Hz).
    #[arg(long)]
    fault_freq: Option<f64>,
    /// Seed of the NTF initialization and of the simulated signal.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Methods to run: kurtosis, alpha, cv, pearson, ntf.
    #[arg(long, value_delimiter = ',')]
    selectors: Vec<SelectorMethod>,
    /// NTF iteration cap.
    #[arg(long)]
    iterations: Option<usize>,
    /// Seeded NTF starts; the lowest objective is kept.
    #[arg(long)]
    restarts: Option<usize>,
    /// ENVSI above which the verdict is faulty.
    #[arg(long)]
    threshold: Option<f64>,
    /// Dependence-map slices to write as CSV.
    #[arg(long, value_delimiter = ',')]
    dump_slices: Vec<usize>,
    /// Also write each method's filtered signal.
    #[arg(long)]
    write_filtered: bool,
    #[command(flatten)]
    sim: SimArgs,
    /// Flat key = value file of flag values; flags on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EfficiencyArgs {
    /// Trials per grid cell.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Index of the first trial, for splitting a grid across runs.
    #[arg(long, default_value_t = 0)]
    first_trial: usize,
    /// Fault amplitudes, one grid row each.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    grid_aci: Vec<f64>,
    /// Random impulse amplitudes, one grid column each.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30")]
    grid_anci: Vec<f64>,
    /// NTF divergence parameters to score.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta: Vec<f64>,
    /// Comparison selectors to score: kurtosis, alpha, cv, pearson.
    #[arg(long, value_delimiter = ',')]
    selectors: Vec<SelectorMethod>,
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    fault_freq: Option<f64>,
    /// Master seed; every trial derives its own seed from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = EFFICIENCY_MAX_ITERATIONS)]
    iterations: usize,
    /// Result directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
    /// Flat key = value file of flag values; flags on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn betas(values: &[f64]) -> Result<Vec<Beta>, Error> {
    values.iter().map(|&b| Beta::new(b)).collect()
}

fn run_simulate(a: SimulateArgs) -> Result<(), Error> {
    let mut sim = SimConfig::default();
    a.sim.apply(&mut sim);
    if let Some(fs) = a.sample_rate {
        sim.sample_rate = fs;
    }
    if let Some(f) = a.fault_freq {
        sim.soi.fault_frequency = f;
    }
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    let format = a.format.or_else(|| InputFormat::from_path(&a.out)).unwrap_or(InputFormat::Csv);
    let signal = simulate(&sim)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match format {
        InputFormat::Csv => io::write_signal_csv(&a.out, &signal)?,
        InputFormat::Wav => io::write_signal_wav(&a.out, &signal)?,
        InputFormat::F32le => io::write_signal_f32le(&a.out, &signal)?,
    }
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".json");
    io::write_json(Path::new(&sidecar), &sim)?;
    println!(
        "wrote {} samples at {} Hz to {} ({format})",
        signal.len(),
        signal.sample_rate(),
        a.out.display()
    );
    Ok(())
}

fn run_config(a: &AnalyzeArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    match &a.input {
        Some(path) => {
            let format = a
                .format
                .or_else(|| InputFormat::from_path(path))
                .ok_or_else(|| Error::InvalidParameter(format!("cannot tell the format of {}; pass --format", path.display())))?;
            cfg.input = InputSource::File {
                path: path.clone(),
                format,
                sample_rate: a.sample_rate,
            };
        }
        None => {
            let mut sim = SimConfig::default();
            a.sim.apply(&mut sim);
            if let Some(fs) = a.sample_rate {
                sim.sample_rate = fs;
            }
            if let Some(f) = a.fault_freq {
                sim.soi.fault_frequency = f;
            }
            if let Some(s) = a.seed {
                sim.seed = s;
            }
            cfg.input = InputSource::Simulated(sim);
        }
    }
    if let Some(m) = a.segments {
        cfg.segments = m;
    }
    if !a.beta.is_empty() {
        cfg.betas = betas(&a.beta)?;
    }
    if let Some(k) = a.rank {
        cfg.ntf.rank = k;
    }
    if let Some(f) = a.fault_freq {
        cfg.diagnosis.envsi.fault_frequency = f;
    }
    if let Some(s) = a.seed {
        cfg.ntf.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.ntf.max_iterations = n;
    }
    if let Some(r) = a.restarts {
        cfg.ntf.restarts = r;
    }
    if let Some(t) = a.threshold {
        cfg.diagnosis.threshold = t;
    }
    if !a.selectors.is_empty() {
        cfg.selectors = a.selectors.clone();
    }
    cfg.output_dir = a.out.clone();
    cfg.dump_slices = a.dump_slices.clone();
    cfg.write_filtered = a.write_filtered;
    Ok(cfg)
}

fn summary_line(out: &mut String, name: &str, d: &DiagnosisReport) {
    let chosen = d.chosen();
    let centroid = chosen.centroid_hz.map_or("-".to_string(), |c| format!("{c:.0} Hz"));
    let _ = writeln!(
        out,
        "{name:<14} ENVSI {:.4}  class {}  band centroid {centroid}",
        d.max_envsi, d.chosen_class
    );
}

fn print_report(r: &AnalysisReport) {
    let mut out = String::new();
    let _ = writeln!(out, "signal: {} samples at {} Hz ({:.2} s)", r.signal.samples, r.signal.sample_rate, r.signal.duration);
    for run in &r.ntf {
        summary_line(&mut out, &format!("ntf beta={}", run.beta), &run.diagnosis);
    }
    for sel in &r.selectors {
        summary_line(&mut out, sel.method.name(), sel);
    }
    let verdict = match r.verdict {
        bearing_ntf::diagnosis::Verdict::Faulty => "faulty",
        bearing_ntf::diagnosis::Verdict::Healthy => "healthy",
    };
    let _ = writeln!(out, "verdict: {verdict} (max ENVSI {:.4})", r.max_envsi);
    print!("{out}");
}

fn run_analyze(a: AnalyzeArgs) -> Result<(), Error> {
    let cfg = run_config(&a)?;
    let report = analyze(&cfg)?;
    print_report(&report);
    if let Some(dir) = &cfg.output_dir {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

fn grid_csv(grid: &EfficiencyGrid, method: &str) -> String {
    let mut s = String::from("a_ci");
    for v in &grid.a_nci {
        let _ = write!(s, ",{v}");
    }
    s.push('\n');
    for (ci, a) in grid.a_ci.iter().enumerate() {
        let _ = write!(s, "{a}");
        for nci in 0..grid.a_nci.len() {
            let _ = write!(s, ",{}", grid.percent(method, ci, nci).unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    s
}

fn run_efficiency(a: EfficiencyArgs) -> Result<(), Error> {
    let mut spec = EfficiencySpec {
        a_ci: a.grid_aci.clone(),
        a_nci: a.grid_anci.clone(),
        trials: a.trials,
        first_trial: a.first_trial,
        ..EfficiencySpec::default()
    };
    a.sim.apply(&mut spec.base);
    let mut methods: Vec<EfficiencyMethod> = betas(&a.beta)?.into_iter().map(EfficiencyMethod::Ntf).collect();
    for &m in &a.selectors {
        if m == SelectorMethod::Ntf {
            if a.beta.is_empty() {
                methods.push(EfficiencyMethod::Ntf(Beta::ITAKURA_SAITO));
            }
        } else {
            methods.push(EfficiencyMethod::Selector(m));
        }
    }
    if !methods.is_empty() {
        spec.methods = methods;
    }
    if let Some(m) = a.segments {
        spec.segments = m;
    }
    if let Some(f) = a.fault_freq {
        spec.base.soi.fault_frequency = f;
        spec.diagnosis.envsi.fault_frequency = f;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.ntf = NtfConfig {
        max_iterations: a.iterations,
        rank: a.rank.unwrap_or(spec.ntf.rank),
        ..spec.ntf
    };
    let grid = efficiency(&spec)?;
    let mut table = String::new();
    for m in &grid.methods {
        let _ = writeln!(table, "{} success % (rows A_CI, columns A_NCI):", m.method);
        table.push_str(&grid_csv(&grid, &m.method));
    }
    print!("{table}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        io::write_json(&dir.join("efficiency.json"), &grid)?;
        io::write_json(&dir.join("efficiency_spec.json"), &spec)?;
        for m in &grid.methods {
            fs::write(dir.join(format!("efficiency_{}.csv", m.method)), grid_csv(&grid, &m.method))?;
        }
    }
    Ok(())
}

/// 2 bad configuration, 3 ingestion failure, 4 numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Ingest { .. } => 3,
        Error::Numerical(_) | Error::Degenerate(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let args = match config_file::merge(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Efficiency(a) => run_efficiency(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
