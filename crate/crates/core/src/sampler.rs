//! Pauli-frame Monte Carlo of the repetition-code memory circuit with analog readout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code_model::{compute_detectors, subsample, subsample_count, subsample_spec, Bit, BitMatrix, CodeSpec, OutcomeRecord};
use crate::decoding_graph::{build_graph, reweight_probs, DecodingGraph};
use crate::error::{Error, Result};
use crate::matching_decoder::{decode_defects, extract_defects};
use crate::measurement_model::{process_measurement, sample_iq, ReadoutModel, SoftOutcome};
use crate::noise_model::{derive_edge_probabilities, EdgeProbabilityTable, NoiseParams};

/// Shots per parallel work unit; results never depend on it.
pub const CHUNK_SHOTS: u64 = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CnotLayer {
    /// Data qubit `a` controls ancilla `a`.
    First,
    /// Data qubit `a + 1` controls ancilla `a`.
    Second,
}

/// Decides which faults occur at each location of the circuit.
pub trait FaultSource {
    /// Flip of data qubit `qubit` in the encoding layer.
    fn encoding_flip(&mut self, qubit: usize) -> bool;
    /// `(control flipped, target flipped)` after the CNOT onto ancilla `ancilla`.
    fn cnot_fault(&mut self, layer: CnotLayer, ancilla: usize, round: usize) -> (bool, bool);
    /// State flip of ancilla `ancilla` during its measurement.
    fn hard_flip(&mut self, ancilla: usize, round: usize) -> bool;
    /// Flip of data qubit `qubit` while the ancillas of `round` are read out.
    fn idle_flip(&mut self, qubit: usize, round: usize) -> bool;
    /// State flip of data qubit `qubit` during the final readout.
    fn final_flip(&mut self, qubit: usize) -> bool;
}

/// Maps a two-qubit Pauli index `1..16` (control-major, I/X/Y/Z) onto its bit flips.
#[inline]
pub fn pauli_flips(index: usize) -> (bool, bool) {
    let flips = |p: usize| p == 1 || p == 2;
    (flips(index / 4), flips(index % 4))
}

/// Faults drawn from the noise model.
pub struct RandomFaults<'r, R: Rng> {
    rng: &'r mut R,
    p_cx: f64,
    p_enc: f64,
    p_idle: f64,
    p_h: f64,
}

impl<'r, R: Rng> RandomFaults<'r, R> {
    pub fn new(rng: &'r mut R, spec: &CodeSpec, noise: &NoiseParams) -> Result<Self> {
        Ok(Self {
            p_cx: noise.p_cx,
            p_enc: noise.one_qubit_flip_probability(),
            p_idle: noise.idle_flip_probability(spec.basis)?,
            p_h: noise.p_h,
            rng,
        })
    }

    #[inline]
    fn bernoulli(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.random::<f64>() < p
    }
}

impl<R: Rng> FaultSource for RandomFaults<'_, R> {
    fn encoding_flip(&mut self, _: usize) -> bool {
        self.bernoulli(self.p_enc)
    }

    fn cnot_fault(&mut self, _: CnotLayer, _: usize, _: usize) -> (bool, bool) {
        if self.bernoulli(self.p_cx) {
            pauli_flips(self.rng.random_range(1..16))
        } else {
            (false, false)
        }
    }

    fn hard_flip(&mut self, _: usize, _: usize) -> bool {
        self.bernoulli(self.p_h)
    }

    fn idle_flip(&mut self, _: usize, _: usize) -> bool {
        self.bernoulli(self.p_idle)
    }

    fn final_flip(&mut self, _: usize) -> bool {
        self.bernoulli(self.p_h)
    }
}

/// True (pre-readout) measurement values of one shot.
pub fn simulate_frame<F: FaultSource>(spec: &CodeSpec, faults: &mut F) -> OutcomeRecord {
    let d = spec.distance;
    let m = spec.ancillas();
    let mut data = vec![0u8; d];
    let mut anc = vec![0u8; m];
    let mut raw = BitMatrix::zeros(spec.rounds, m);
    for (j, x) in data.iter_mut().enumerate() {
        *x ^= u8::from(faults.encoding_flip(j));
    }
    for t in 0..spec.rounds {
        for a in 0..m {
            anc[a] ^= data[a];
            let (c, g) = faults.cnot_fault(CnotLayer::First, a, t);
            data[a] ^= u8::from(c);
            anc[a] ^= u8::from(g);
        }
        for a in 0..m {
            anc[a] ^= data[a + 1];
            let (c, g) = faults.cnot_fault(CnotLayer::Second, a, t);
            data[a + 1] ^= u8::from(c);
            anc[a] ^= u8::from(g);
        }
        for a in 0..m {
            anc[a] ^= u8::from(faults.hard_flip(a, t));
            raw.set(t, a, anc[a]);
        }
        for (j, x) in data.iter_mut().enumerate() {
            *x ^= u8::from(faults.idle_flip(j, t));
        }
    }
    let state = spec.logical_state.bit();
    let final_data = data
        .iter()
        .enumerate()
        .map(|(j, &x)| x ^ u8::from(faults.final_flip(j)) ^ state)
        .collect();
    OutcomeRecord {
        raw_ancilla: raw,
        final_data,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    /// Classified outcomes.
    pub outcome: OutcomeRecord,
    /// True projected values behind each readout.
    pub true_outcome: OutcomeRecord,
    /// Row-major `T x (d-1)`.
    pub stabilizer_soft: Vec<SoftOutcome>,
    pub code_soft: Vec<SoftOutcome>,
    /// Classified final readout of the logical qubit relative to the prepared state.
    pub truth_logical_flip: bool,
    pub seed: u64,
}

impl ShotRecord {
    pub fn stabilizer_p(&self) -> Vec<f64> {
        self.stabilizer_soft.iter().map(|o| o.p_soft).collect()
    }

    pub fn code_p(&self) -> Vec<f64> {
        self.code_soft.iter().map(|o| o.p_soft).collect()
    }

    /// The frame's own logical flip, ignoring readout misassignment.
    pub fn frame_logical_flip(&self, spec: &CodeSpec) -> bool {
        self.true_outcome.observed_logical_flip(spec) == 1
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of shot `index` under `root`: `splitmix64(root ^ splitmix64(index))`.
pub fn shot_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index))
}

pub fn sample_shot(spec: &CodeSpec, noise: &NoiseParams, model: &ReadoutModel, seed: u64) -> Result<ShotRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let true_outcome = simulate_frame(spec, &mut RandomFaults::new(&mut rng, spec, noise)?);
    let m = spec.ancillas();
    let mut stabilizer_soft = Vec::with_capacity(spec.rounds * m);
    let mut raw = BitMatrix::zeros(spec.rounds, m);
    for t in 0..spec.rounds {
        let p_leak = noise.leak_probability(t);
        for a in 0..m {
            let z = true_outcome.raw_ancilla.get(t, a);
            let o = process_measurement(sample_iq(z, model, p_leak, &mut rng), model);
            raw.set(t, a, o.z_hat);
            stabilizer_soft.push(o);
        }
    }
    let p_leak = noise.leak_probability(spec.rounds);
    let code_soft: Vec<SoftOutcome> = true_outcome
        .final_data
        .iter()
        .map(|&z| process_measurement(sample_iq(z, model, p_leak, &mut rng), model))
        .collect();
    let outcome = OutcomeRecord {
        raw_ancilla: raw,
        final_data: code_soft.iter().map(|o| o.z_hat).collect(),
    };
    let truth_logical_flip = outcome.observed_logical_flip(spec) == 1;
    Ok(ShotRecord {
        outcome,
        true_outcome,
        stabilizer_soft,
        code_soft,
        truth_logical_flip,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    HardCalibrated,
    HardDataInformed,
    Soft,
}

impl DecoderMode {
    pub const ALL: [DecoderMode; 3] = [DecoderMode::HardCalibrated, DecoderMode::HardDataInformed, DecoderMode::Soft];

    pub fn as_str(self) -> &'static str {
        match self {
            DecoderMode::HardCalibrated => "hard_calibrated",
            DecoderMode::HardDataInformed => "hard_data_informed",
            DecoderMode::Soft => "soft",
        }
    }
}

impl std::fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DecoderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DecoderMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown decoder mode '{s}'")))
    }
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: CodeSpec,
    pub noise: NoiseParams,
    pub model: ReadoutModel,
    pub shots: u64,
    pub seed: u64,
    pub modes: Vec<DecoderMode>,
    /// Window distances to decode; empty means the full code only.
    pub sub_distances: Vec<usize>,
}

/// Failures of one decoder on one window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub mode: DecoderMode,
    pub sub_distance: usize,
    pub offset: usize,
    pub shots: u64,
    pub failures: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub tallies: Vec<Tally>,
    /// Mean soft-flip probability over every readout of every shot.
    pub mean_p_soft: f64,
    pub measurements: u64,
    pub misassignments: u64,
    pub leak_flags: u64,
}

impl ExperimentResult {
    /// Failures summed over window offsets for one `(mode, sub_distance)`.
    pub fn pooled(&self, mode: DecoderMode, sub_distance: usize) -> (u64, u64) {
        self.tallies
            .iter()
            .filter(|t| t.mode == mode && t.sub_distance == sub_distance)
            .fold((0, 0), |(f, s), t| (f + t.failures, s + t.shots))
    }
}

struct Window {
    sub_distance: usize,
    offset: usize,
    spec: CodeSpec,
    table: EdgeProbabilityTable,
    graph: DecodingGraph,
    informed: Option<DecodingGraph>,
}

#[derive(Clone, Default)]
struct ChunkStats {
    failures: Vec<u64>,
    p_soft_sum: f64,
    measurements: u64,
    misassignments: u64,
    leak_flags: u64,
}

impl Experiment {
    fn windows(&self) -> Result<Vec<Window>> {
        let subs = if self.sub_distances.is_empty() {
            vec![self.spec.distance]
        } else {
            self.sub_distances.clone()
        };
        let mut out = Vec::new();
        for d_s in subs {
            let count = subsample_count(&self.spec, d_s);
            if count == 0 {
                return Err(Error::Bounds(format!(
                    "window distance {d_s} outside [2, {}]",
                    self.spec.distance
                )));
            }
            let spec = subsample_spec(&self.spec, d_s, 0)?;
            let table = derive_edge_probabilities(&spec, &self.noise)?;
            let graph = build_graph(&spec, &table)?;
            for offset in 0..count {
                out.push(Window {
                    sub_distance: d_s,
                    offset,
                    spec,
                    table: table.clone(),
                    graph: graph.clone(),
                    informed: None,
                });
            }
        }
        Ok(out)
    }

    fn decode_window(&self, w: &Window, shot: &ShotRecord, mode: DecoderMode) -> Result<bool> {
        let full = w.sub_distance == self.spec.distance;
        let (record, spec) = if full {
            (shot.outcome.clone(), self.spec)
        } else {
            subsample(&shot.outcome, &self.spec, w.sub_distance, w.offset)?
        };
        let syndrome = compute_detectors(&record, &spec)?;
        let defects = extract_defects(&syndrome, &w.graph)?;
        let truth = record.observed_logical_flip(&spec) == 1;
        let predicted = match mode {
            DecoderMode::HardCalibrated => decode_defects(&w.graph, &w.graph.static_weights(), &defects)?.logical_flip,
            DecoderMode::HardDataInformed => {
                let g = w.informed.as_ref().ok_or_else(|| Error::Internal("data-informed graph missing".into()))?;
                decode_defects(g, &g.static_weights(), &defects)?.logical_flip
            }
            DecoderMode::Soft => {
                let m_full = self.spec.ancillas();
                let m = spec.ancillas();
                let mut sp = Vec::with_capacity(spec.rounds * m);
                for t in 0..spec.rounds {
                    let row = &shot.stabilizer_soft[t * m_full + w.offset..t * m_full + w.offset + m];
                    sp.extend(row.iter().map(|o| o.p_soft));
                }
                let cp: Vec<f64> = shot.code_soft[w.offset..w.offset + w.sub_distance]
                    .iter()
                    .map(|o| o.p_soft)
                    .collect();
                let sw = reweight_probs(&w.graph, &sp, &cp)?;
                decode_defects(&w.graph, &sw.weights, &defects)?.logical_flip
            }
        };
        Ok(predicted != truth)
    }

    fn run_pass(&self, windows: &[Window], modes: &[DecoderMode]) -> Result<ChunkStats> {
        let chunks = self.shots.div_ceil(CHUNK_SHOTS);
        let per_chunk: Vec<Result<ChunkStats>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut st = ChunkStats {
                    failures: vec![0; windows.len() * modes.len()],
                    ..Default::default()
                };
                let end = ((c + 1) * CHUNK_SHOTS).min(self.shots);
                for index in c * CHUNK_SHOTS..end {
                    let shot = sample_shot(&self.spec, &self.noise, &self.model, shot_seed(self.seed, index))?;
                    for o in shot.stabilizer_soft.iter().chain(&shot.code_soft) {
                        st.p_soft_sum += o.p_soft;
                        st.leak_flags += u64::from(o.leaked);
                    }
                    st.measurements += (shot.stabilizer_soft.len() + shot.code_soft.len()) as u64;
                    st.misassignments += misassigned(&shot.outcome, &shot.true_outcome);
                    for (wi, w) in windows.iter().enumerate() {
                        for (mi, &mode) in modes.iter().enumerate() {
                            if self.decode_window(w, &shot, mode)? {
                                st.failures[wi * modes.len() + mi] += 1;
                            }
                        }
                    }
                }
                Ok(st)
            })
            .collect();
        // fixed-order merge keeps the floating-point sum reproducible
        let mut total = ChunkStats {
            failures: vec![0; windows.len() * modes.len()],
            ..Default::default()
        };
        for st in per_chunk {
            let st = st?;
            for (a, b) in total.failures.iter_mut().zip(&st.failures) {
                *a += b;
            }
            total.p_soft_sum += st.p_soft_sum;
            total.measurements += st.measurements;
            total.misassignments += st.misassignments;
            total.leak_flags += st.leak_flags;
        }
        Ok(total)
    }

    /// Simulates `shots` shots and decodes every window with every requested mode.
    /// The data-informed mode needs the global mean soft-flip probability, so it
    /// decodes in a second pass over the regenerated shots.
    pub fn run(&self) -> Result<ExperimentResult> {
        if self.shots == 0 {
            return Err(Error::Domain("need at least one shot".into()));
        }
        self.noise.validate()?;
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        let mut windows = self.windows()?;
        let first: Vec<DecoderMode> = modes.iter().copied().filter(|m| *m != DecoderMode::HardDataInformed).collect();
        let stats = self.run_pass(&windows, &first)?;
        let mean_p_soft = stats.p_soft_sum / stats.measurements as f64;
        let mut failures: Vec<(DecoderMode, usize, u64)> = Vec::new();
        for (wi, _) in windows.iter().enumerate() {
            for (mi, &mode) in first.iter().enumerate() {
                failures.push((mode, wi, stats.failures[wi * first.len() + mi]));
            }
        }
        if modes.contains(&DecoderMode::HardDataInformed) {
            for w in &mut windows {
                w.informed = Some(build_graph(&w.spec, &w.table.with_soft_mean(mean_p_soft))?);
            }
            let second = self.run_pass(&windows, &[DecoderMode::HardDataInformed])?;
            for (wi, f) in second.failures.iter().enumerate() {
                failures.push((DecoderMode::HardDataInformed, wi, *f));
            }
        }
        let mut tallies: Vec<Tally> = failures
            .into_iter()
            .map(|(mode, wi, f)| Tally {
                mode,
                sub_distance: windows[wi].sub_distance,
                offset: windows[wi].offset,
                shots: self.shots,
                failures: f,
            })
            .collect();
        tallies.sort_by_key(|t| (t.mode, t.sub_distance, t.offset));
        Ok(ExperimentResult {
            tallies,
            mean_p_soft,
            measurements: stats.measurements,
            misassignments: stats.misassignments,
            leak_flags: stats.leak_flags,
        })
    }
}

fn misassigned(a: &OutcomeRecord, b: &OutcomeRecord) -> u64 {
    let stab = a
        .raw_ancilla
        .as_slice()
        .iter()
        .zip(b.raw_ancilla.as_slice())
        .filter(|(x, y)| x != y)
        .count();
    let data = a.final_data.iter().zip(&b.final_data).filter(|(x, y)| x != y).count();
    (stab + data) as u64
}

/// Fault injected at a single circuit location; used to enumerate single-fault syndromes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultSite {
    Encoding { qubit: usize },
    Cnot { layer: CnotLayer, ancilla: usize, round: usize, pauli: usize },
    HardFlip { ancilla: usize, round: usize },
    Idle { qubit: usize, round: usize },
    FinalFlip { qubit: usize },
    /// Misread of a stabilizer outcome; the state is untouched.
    SoftStabilizer { ancilla: usize, round: usize },
    /// Misread of a final data readout.
    SoftCode { qubit: usize },
}

struct SingleFault(FaultSite);

impl FaultSource for SingleFault {
    fn encoding_flip(&mut self, qubit: usize) -> bool {
        self.0 == FaultSite::Encoding { qubit }
    }

    fn cnot_fault(&mut self, layer: CnotLayer, ancilla: usize, round: usize) -> (bool, bool) {
        match self.0 {
            FaultSite::Cnot {
                layer: l,
                ancilla: a,
                round: r,
                pauli,
            } if (l, a, r) == (layer, ancilla, round) => pauli_flips(pauli),
            _ => (false, false),
        }
    }

    fn hard_flip(&mut self, ancilla: usize, round: usize) -> bool {
        self.0 == FaultSite::HardFlip { ancilla, round }
    }

    fn idle_flip(&mut self, qubit: usize, round: usize) -> bool {
        self.0 == FaultSite::Idle { qubit, round }
    }

    fn final_flip(&mut self, qubit: usize) -> bool {
        self.0 == FaultSite::FinalFlip { qubit }
    }
}

/// Every single-fault location of the circuit, with its probability under `noise`.
pub fn fault_sites(spec: &CodeSpec, noise: &NoiseParams) -> Result<Vec<(FaultSite, f64)>> {
    let d = spec.distance;
    let m = spec.ancillas();
    let p_idle = noise.idle_flip_probability(spec.basis)?;
    let mut sites = Vec::new();
    for qubit in 0..d {
        sites.push((FaultSite::Encoding { qubit }, noise.one_qubit_flip_probability()));
    }
    for round in 0..spec.rounds {
        for layer in [CnotLayer::First, CnotLayer::Second] {
            for ancilla in 0..m {
                for pauli in 1..16 {
                    sites.push((
                        FaultSite::Cnot {
                            layer,
                            ancilla,
                            round,
                            pauli,
                        },
                        noise.p_cx / 15.0,
                    ));
                }
            }
        }
        for ancilla in 0..m {
            sites.push((FaultSite::HardFlip { ancilla, round }, noise.p_h));
            sites.push((FaultSite::SoftStabilizer { ancilla, round }, noise.p_s_mean));
        }
        for qubit in 0..d {
            sites.push((FaultSite::Idle { qubit, round }, p_idle));
        }
    }
    for qubit in 0..d {
        sites.push((FaultSite::FinalFlip { qubit }, noise.p_h));
        sites.push((FaultSite::SoftCode { qubit }, noise.p_s_mean));
    }
    Ok(sites)
}

/// Classified outcomes of a shot in which only `site` goes wrong.
pub fn inject_fault(spec: &CodeSpec, site: FaultSite) -> OutcomeRecord {
    let mut rec = simulate_frame(spec, &mut SingleFault(site));
    match site {
        FaultSite::SoftStabilizer { ancilla, round } => rec.raw_ancilla.flip(round, ancilla),
        FaultSite::SoftCode { qubit } => rec.final_data[qubit] ^= 1,
        _ => {}
    }
    rec
}

/// Detection events (node ids) and logical flip caused by a single fault.
pub fn fault_signature(spec: &CodeSpec, site: FaultSite) -> Result<(Vec<usize>, Bit)> {
    let rec = inject_fault(spec, site);
    let syndrome = compute_detectors(&rec, spec)?;
    let events = syndrome
        .detectors
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .map(|(i, _)| i)
        .collect();
    Ok((events, rec.observed_logical_flip(spec)))
}
