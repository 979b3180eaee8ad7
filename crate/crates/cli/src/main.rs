use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use softqec::code_model::{Basis, CodeSpec, LogicalState};
use softqec::noise_model::NoiseParams;
use softqec::sampler::DecoderMode;
use softqec_cli::{cmd_analyze, cmd_calibrate, cmd_decode, cmd_run, cmd_sweep_truncation, CliError, CliResult, ExperimentConfig};

/// Soft-information decoding of repetition-code memory experiments.
#[derive(Parser)]
#[command(name = "softqec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-qubit readout models and flip probabilities from calibration IQ data.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate and decode; writes result tables, a JSON summary and the effective config.
    #[command(visible_alias = "simulate")]
    Run(RunArgs),
    /// Hard-decode stored outcome records.
    Decode {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        distance: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, default_value = "Z")]
        basis: Basis,
        #[arg(long, default_value = "plus")]
        state: LogicalState,
        /// Noise parameters (TOML).
        #[arg(long)]
        noise: PathBuf,
        /// Records are in the binary format instead of text.
        #[arg(long)]
        binary: bool,
        /// Per-record output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Soft-probability truncation study.
    SweepTruncation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refit Lambda from a results table.
    Analyze {
        #[arg(long)]
        results: PathBuf,
        /// JSON summary; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    distance: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    basis: Option<Basis>,
    #[arg(long)]
    state: Option<LogicalState>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decoder mode; repeat for several.
    #[arg(long = "mode")]
    modes: Vec<DecoderMode>,
    /// Noise parameters (TOML).
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Readout model written by `calibrate`.
    #[arg(long)]
    readout_model: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn missing(flag: &str) -> CliError {
    CliError::Validation(format!("{flag}: required without --config"))
}

impl RunArgs {
    fn into_config(self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig {
                distance: self.distance.ok_or_else(|| missing("--distance"))?,
                rounds: vec![self.rounds.ok_or_else(|| missing("--rounds"))?],
                basis: self.basis.unwrap_or(Basis::Z),
                state: self.state.unwrap_or(LogicalState::Plus),
                shots: self.shots.ok_or_else(|| missing("--shots"))?,
                seed: self.seed.ok_or_else(|| missing("--seed"))?,
                modes: vec![DecoderMode::HardCalibrated, DecoderMode::Soft],
                sub_distances: vec![],
                truncation_bits: None,
                confidence: softqec::analysis::DEFAULT_CONFIDENCE,
                workers: None,
                noise_file: Some(self.noise.clone().ok_or_else(|| missing("--noise"))?),
                noise: None,
                readout_file: Some(self.readout_model.clone().ok_or_else(|| missing("--readout-model"))?),
                readout: None,
            },
        };
        if let Some(d) = self.distance {
            cfg.distance = d;
        }
        if let Some(t) = self.rounds {
            cfg.rounds = vec![t];
        }
        if let Some(b) = self.basis {
            cfg.basis = b;
        }
        if let Some(s) = self.state {
            cfg.state = s;
        }
        if let Some(n) = self.shots {
            cfg.shots = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.modes.is_empty() {
            cfg.modes = self.modes;
        }
        if let Some(p) = self.noise {
            cfg.noise = None;
            cfg.noise_file = Some(p);
        }
        if let Some(p) = self.readout_model {
            cfg.readout = None;
            cfg.readout_file = Some(p);
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.resolve_paths(&std::env::current_dir()?);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_noise(path: &PathBuf) -> CliResult<NoiseParams> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("--noise: {}: {e}", path.display())))?;
    let noise: NoiseParams = toml::from_str(&text).map_err(|e| CliError::Validation(format!("--noise: {}", e.message())))?;
    noise.validate()?;
    Ok(noise)
}

fn print_json<T: serde::Serialize>(value: &T, out: Option<PathBuf>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => writeln!(io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Calibrate { input, out } => {
            let report = cmd_calibrate(&input, &out)?;
            println!("p_s = {:.6}  p_h = {:.6}  ({} qubits)", report.p_s, report.p_h, report.qubits.len());
        }
        Command::Run(args) => {
            let out = args.out.clone();
            let cfg = args.into_config()?;
            let summary = cmd_run(&cfg, &out)?;
            for f in &summary.fits {
                match &f.fit {
                    Some(fit) => println!(
                        "{} T={}: lambda = {:.4} +- {:.4} (R^2 {:.4})",
                        f.mode, f.rounds, fit.lambda, fit.lambda_err, fit.r_squared
                    ),
                    None => println!("{} T={}: no fit ({})", f.mode, f.rounds, f.error.as_deref().unwrap_or("")),
                }
            }
            for inc in &summary.threshold_increases {
                println!(
                    "{} over {} T={}: {:+.2}% +- {:.2}%",
                    inc.mode,
                    inc.baseline,
                    inc.rounds,
                    100.0 * inc.increase.value,
                    100.0 * inc.increase.err
                );
            }
        }
        Command::Decode {
            records,
            distance,
            rounds,
            basis,
            state,
            noise,
            binary,
            out,
        } => {
            let noise = read_noise(&noise)?;
            let spec = match (distance, rounds) {
                (Some(d), Some(t)) => Some(CodeSpec::new(d, t, basis, state)?),
                (None, None) => None,
                _ => return Err(CliError::Validation("--distance and --rounds go together".into())),
            };
            let conf = softqec::analysis::DEFAULT_CONFIDENCE;
            let summary = match out {
                Some(p) => {
                    let mut w = BufWriter::new(fs::File::create(p)?);
                    let s = cmd_decode(&records, spec, &noise, binary, conf, &mut w)?;
                    w.flush()?;
                    s
                }
                None => cmd_decode(&records, spec, &noise, binary, conf, io::stdout().lock())?,
            };
            eprintln!(
                "{} / {} disagree with the observed flip (p = {:.6}, [{:.6}, {:.6}])",
                summary.failures, summary.records, summary.estimate.p_hat, summary.estimate.ci_low, summary.estimate.ci_high
            );
        }
        Command::SweepTruncation { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            for (d, t, rows) in cmd_sweep_truncation(&cfg, &out)? {
                for r in rows {
                    println!("d={d} T={t} b={:2}: {:.4} [{:.4}, {:.4}]", r.bits, r.ratio, r.ci_low, r.ci_high);
                }
            }
        }
        Command::Analyze { results, out } => {
            let file = fs::File::open(&results)?;
            print_json(&cmd_analyze(BufReader::new(file))?, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
