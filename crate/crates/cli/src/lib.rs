//! Subcommand implementations behind the `softqec` binary.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use softqec::analysis::{
    attach_lambda_fits, per_round_rate, threshold_increase, truncation_experiment, truncation_ratios,
    write_results_csv, write_truncation_csv, Increase, LambdaFit, RateEstimate, ResultRow, TruncationRow,
    FULL_PRECISION_BITS,
};
use softqec::code_model::{compute_detectors, read_records_binary, read_records_text, Basis, CodeSpec, LogicalState};
use softqec::decoding_graph::build_graph;
use softqec::matching_decoder::{decode_defects, extract_defects};
use softqec::measurement_model::{classify, fit_readout_model, read_calibration_iq, write_model, IqCalibrationRow};
use softqec::noise_model::{derive_edge_probabilities, estimate_flip_probs, CalibrationCounts, NoiseParams, Prepared, QubitCalibration};
use softqec::sampler::{DecoderMode, Experiment, ExperimentResult};
use softqec::Error;

pub use config::ExperimentConfig;

pub const SUMMARY_SCHEMA: &str = "softqec-summary v1";

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; nothing was computed.
    Validation(String),
    Core(Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    /// 2 validation, 3 data, 4 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                Error::Dimension(_) | Error::Bounds(_) | Error::Domain(_) => 2,
                Error::Internal(_) | Error::Construction(_) | Error::Refusal(_) => 4,
                _ => 3,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| CliError::Validation(format!("workers: {e}")))?;
    Ok(pool.install(f))
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

#[derive(Clone, Debug, Serialize)]
pub struct FitSummary {
    pub mode: DecoderMode,
    pub rounds: usize,
    pub fit: Option<LambdaFit>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IncreaseSummary {
    pub mode: DecoderMode,
    pub baseline: DecoderMode,
    pub rounds: usize,
    pub increase: Increase,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundsSummary {
    pub rounds: usize,
    pub mean_p_soft: f64,
    pub measurements: u64,
    pub misassignments: u64,
    pub leak_flags: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub schema: &'static str,
    pub config: Option<ExperimentConfig>,
    pub runs: Vec<RoundsSummary>,
    pub rows: Vec<ResultRow>,
    pub fits: Vec<FitSummary>,
    pub threshold_increases: Vec<IncreaseSummary>,
}

fn rows_for(cfg_basis: Basis, state: LogicalState, rounds: usize, r: &ExperimentResult, confidence: f64) -> CliResult<(Vec<ResultRow>, Vec<ResultRow>)> {
    let row = |mode, distance, offset, failures, shots| -> CliResult<ResultRow> {
        let estimate = RateEstimate::new(failures, shots, confidence)?;
        Ok(ResultRow {
            mode,
            basis: cfg_basis,
            state,
            distance,
            rounds,
            bits: FULL_PRECISION_BITS,
            offset,
            estimate,
            eps: per_round_rate(estimate.p_hat, rounds).ok(),
            lambda: None,
            lambda_err: None,
        })
    };
    let mut groups: BTreeMap<(DecoderMode, usize), (u64, u64)> = BTreeMap::new();
    let mut per_offset = Vec::new();
    for t in &r.tallies {
        let g = groups.entry((t.mode, t.sub_distance)).or_default();
        g.0 += t.failures;
        g.1 += t.shots;
        per_offset.push(row(t.mode, t.sub_distance, Some(t.offset), t.failures, t.shots)?);
    }
    let pooled = groups
        .into_iter()
        .map(|((mode, d), (f, s))| row(mode, d, None, f, s))
        .collect::<CliResult<_>>()?;
    Ok((pooled, per_offset))
}

fn summarize_fits(rows: &mut [ResultRow]) -> (Vec<FitSummary>, Vec<IncreaseSummary>) {
    let fits: Vec<FitSummary> = attach_lambda_fits(rows)
        .into_iter()
        .map(|(mode, rounds, fit)| match fit {
            Ok(f) => FitSummary {
                mode,
                rounds,
                fit: Some(f),
                error: None,
            },
            Err(e) => FitSummary {
                mode,
                rounds,
                fit: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut increases = Vec::new();
    for base in fits.iter().filter(|f| f.mode == DecoderMode::HardCalibrated) {
        let Some(bf) = &base.fit else { continue };
        for other in fits.iter().filter(|f| f.rounds == base.rounds && f.mode != base.mode) {
            if let Some(of) = &other.fit {
                increases.push(IncreaseSummary {
                    mode: other.mode,
                    baseline: base.mode,
                    rounds: base.rounds,
                    increase: threshold_increase(of, bf),
                });
            }
        }
    }
    (fits, increases)
}

/// Runs every round count of the config and writes `results.csv`, `results_offsets.csv`,
/// `summary.json` and `effective_config.toml` into `out_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<RunSummary> {
    cfg.validate()?;
    let noise = cfg.noise_params()?;
    let model = cfg.readout_model()?;
    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    let mut runs = Vec::new();
    for &rounds in &cfg.rounds {
        let exp = Experiment {
            spec: cfg.spec(rounds)?,
            noise: noise.clone(),
            model: model.clone(),
            shots: cfg.shots,
            seed: cfg.seed,
            modes: cfg.modes.clone(),
            sub_distances: cfg.sub_distances.clone(),
        };
        let result = with_pool(cfg.workers, || exp.run())??;
        let (pooled, per_offset) = rows_for(cfg.basis, cfg.state, rounds, &result, cfg.confidence)?;
        rows.extend(pooled);
        offsets.extend(per_offset);
        runs.push(RoundsSummary {
            rounds,
            mean_p_soft: result.mean_p_soft,
            measurements: result.measurements,
            misassignments: result.misassignments,
            leak_flags: result.leak_flags,
        });
    }
    let (fits, threshold_increases) = summarize_fits(&mut rows);
    fs::create_dir_all(out_dir)?;
    let mut w = create(&out_dir.join("results.csv"))?;
    write_results_csv(&mut w, &rows, false)?;
    w.flush()?;
    let mut w = create(&out_dir.join("results_offsets.csv"))?;
    write_results_csv(&mut w, &offsets, true)?;
    w.flush()?;
    fs::write(out_dir.join("effective_config.toml"), cfg.to_toml())?;
    let summary = RunSummary {
        schema: SUMMARY_SCHEMA,
        config: Some(cfg.clone()),
        runs,
        rows,
        fits,
        threshold_increases,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Soft-decoder truncation study at the full code distance; writes `truncation.csv`.
pub fn cmd_sweep_truncation(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<Vec<(usize, usize, Vec<TruncationRow>)>> {
    cfg.validate()?;
    let bits = cfg
        .truncation_bits
        .clone()
        .ok_or_else(|| CliError::Validation("truncation_bits: required by sweep-truncation".into()))?;
    let noise = cfg.noise_params()?;
    let model = cfg.readout_model()?;
    let mut sections = Vec::new();
    for &rounds in &cfg.rounds {
        let exp = Experiment {
            spec: cfg.spec(rounds)?,
            noise: noise.clone(),
            model: model.clone(),
            shots: cfg.shots,
            seed: cfg.seed,
            modes: vec![DecoderMode::Soft],
            sub_distances: vec![],
        };
        let counts = with_pool(cfg.workers, || truncation_experiment(&exp, &bits))??;
        sections.push((cfg.distance, rounds, truncation_ratios(&counts, cfg.confidence, cfg.seed)?));
    }
    fs::create_dir_all(out_dir)?;
    let mut w = create(&out_dir.join("truncation.csv"))?;
    write_truncation_csv(&mut w, &sections)?;
    w.flush()?;
    fs::write(out_dir.join("effective_config.toml"), cfg.to_toml())?;
    Ok(sections)
}

#[derive(Clone, Debug, Serialize)]
pub struct QubitReport {
    pub qubit: usize,
    pub p_s: [f64; 2],
    pub p_h: [f64; 2],
    pub model_file: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationReport {
    pub counts: CalibrationCounts,
    pub qubits: Vec<QubitReport>,
    /// Chain averages over qubits and prepared states.
    pub p_s: f64,
    pub p_h: f64,
}

/// Fits a readout model per qubit from double-measurement IQ data and estimates `(p_s, p_h)`.
pub fn cmd_calibrate(input: &Path, out_dir: &Path) -> CliResult<CalibrationReport> {
    let file = fs::File::open(input)?;
    let rows = read_calibration_iq(BufReader::new(file))?;
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no calibration rows".into(),
        }
        .into());
    }
    let mut by_qubit: BTreeMap<usize, Vec<IqCalibrationRow>> = BTreeMap::new();
    for r in rows {
        by_qubit.entry(r.qubit).or_default().push(r);
    }
    fs::create_dir_all(out_dir)?;
    let mut counts = CalibrationCounts::default();
    let mut qubits = Vec::new();
    for (&q, rows) in &by_qubit {
        for prep in [Prepared::Zero, Prepared::One] {
            if !rows.iter().any(|r| r.prepared == prep) {
                return Err(Error::InsufficientData(format!(
                    "qubit {q}: calibration needs both prepared states, prepared {} is missing",
                    prep.bit()
                ))
                .into());
            }
        }
        let model = fit_readout_model(rows, Some(q)).map_err(|e| match e {
            Error::InsufficientData(m) => Error::InsufficientData(format!("qubit {q}: {m}")),
            Error::DegenerateData(m) => Error::DegenerateData(format!("qubit {q}: {m}")),
            other => other,
        })?;
        let mut cal = QubitCalibration {
            qubit: q,
            ..Default::default()
        };
        for r in rows {
            let first = classify(r.first, &model);
            match r.prepared {
                Prepared::Zero => cal.prepared0.record(first, r.second),
                Prepared::One => cal.prepared1.record(first, r.second),
            }
        }
        let (s0, h0) = estimate_flip_probs(&cal.prepared0, Prepared::Zero)?;
        let (s1, h1) = estimate_flip_probs(&cal.prepared1, Prepared::One)?;
        let name = format!("model_q{q}.bin");
        let mut w = create(&out_dir.join(&name))?;
        write_model(&model, &mut w)?;
        w.flush()?;
        qubits.push(QubitReport {
            qubit: q,
            p_s: [s0, s1],
            p_h: [h0, h1],
            model_file: name,
        });
        counts.qubits.push(cal);
    }
    let (p_s, p_h) = counts.averaged_flip_probs()?;
    let report = CalibrationReport {
        counts,
        qubits,
        p_s,
        p_h,
    };
    write_json(&out_dir.join("calibration.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct DecodeSummary {
    pub records: u64,
    pub failures: u64,
    pub estimate: RateEstimate,
}

/// Hard-decodes stored outcome records against the calibrated graph. Writes one line per
/// record (`index predicted observed weight`) to `out` and returns the failure count,
/// where a failure is a prediction that disagrees with the observed logical flip.
pub fn cmd_decode<W: Write>(
    records_path: &Path,
    spec: Option<CodeSpec>,
    noise: &NoiseParams,
    binary: bool,
    confidence: f64,
    mut out: W,
) -> CliResult<DecodeSummary> {
    let file = BufReader::new(fs::File::open(records_path)?);
    let (spec, records) = if binary {
        let (s, r) = read_records_binary(file)?;
        if let Some(given) = spec {
            if (given.distance, given.rounds) != (s.distance, s.rounds) {
                return Err(CliError::Validation("distance/rounds disagree with the record file header".into()));
            }
        }
        (s, r)
    } else {
        let spec = spec.ok_or_else(|| CliError::Validation("distance and rounds are required for text records".into()))?;
        (spec, read_records_text(file, &spec)?)
    };
    if records.is_empty() {
        return Err(CliError::Validation("record file holds no records".into()));
    }
    let graph = build_graph(&spec, &derive_edge_probabilities(&spec, noise)?)?;
    let weights = graph.static_weights();
    let mut failures = 0;
    writeln!(out, "# index predicted observed weight")?;
    for (k, rec) in records.iter().enumerate() {
        let defects = extract_defects(&compute_detectors(rec, &spec)?, &graph)?;
        let m = decode_defects(&graph, &weights, &defects)?;
        let observed = rec.observed_logical_flip(&spec) == 1;
        failures += u64::from(m.logical_flip != observed);
        writeln!(out, "{k} {} {} {:.11e}", u8::from(m.logical_flip), u8::from(observed), m.total_weight)?;
    }
    let n = records.len() as u64;
    Ok(DecodeSummary {
        records: n,
        failures,
        estimate: RateEstimate::new(failures, n, confidence)?,
    })
}

/// Re-reads a results CSV and refits Lambda per `(mode, basis, state, T, b)` group.
pub fn cmd_analyze<R: BufRead>(results: R) -> CliResult<RunSummary> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(results);
    let header = reader.headers().map_err(csv_err)?.clone();
    let expected: Vec<&str> = softqec::analysis::RESULTS_COLUMNS.split(',').collect();
    if header.iter().take(expected.len()).collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 2,
            msg: "unexpected results columns".into(),
        }
        .into());
    }
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = k + 3;
        let bad = |what: &str| -> CliError {
            Error::Parse {
                line,
                msg: format!("bad {what}"),
            }
            .into()
        };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize, what: &str| field(i).parse::<u64>().map_err(|_| bad(what));
        let mode: DecoderMode = field(0).parse().map_err(|_| bad("mode"))?;
        let basis: Basis = field(1).parse().map_err(|_| bad("basis"))?;
        let state: LogicalState = field(2).parse().map_err(|_| bad("state"))?;
        let distance = num(3, "d")? as usize;
        let rounds = num(4, "T")? as usize;
        let bits = num(5, "b")? as u32;
        let shots = num(6, "shots")?;
        let failures = num(7, "failures")?;
        let estimate = RateEstimate::new(failures, shots, softqec::analysis::DEFAULT_CONFIDENCE)?;
        rows.push(ResultRow {
            mode,
            basis,
            state,
            distance,
            rounds,
            bits,
            offset: None,
            estimate,
            eps: per_round_rate(estimate.p_hat, rounds).ok(),
            lambda: None,
            lambda_err: None,
        });
    }
    let (fits, threshold_increases) = summarize_fits(&mut rows);
    Ok(RunSummary {
        schema: SUMMARY_SCHEMA,
        config: None,
        runs: vec![],
        rows,
        fits,
        threshold_increases,
    })
}

fn csv_err(e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
    .into()
}
