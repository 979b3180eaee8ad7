//! Circuit-level error probabilities, their estimation from double-measurement
//! calibration counts, and their composition into per-edge probabilities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::code_model::{Basis, CodeSpec};
use crate::error::{Error, Result};

/// Lower clamp applied to every probability before it becomes a weight.
pub const P_MIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Depolarizing probability per CNOT.
    pub p_cx: f64,
    /// Depolarizing probability per single-qubit gate (encoding layer).
    pub p_1q: f64,
    pub t1_us: f64,
    pub t2_us: f64,
    /// Data-qubit idle time per round, spent while the ancillas are read out.
    pub idle_us: f64,
    /// Hard flip probability per measurement.
    pub p_h: f64,
    /// Calibrated mean soft flip probability per measurement.
    pub p_s_mean: f64,
    /// Leakage injection probability per measurement (simulation only).
    #[serde(default)]
    pub p_leak: f64,
    /// Optional additive growth of `p_leak` per round.
    #[serde(default)]
    pub p_leak_ramp: f64,
}

impl NoiseParams {
    pub fn noiseless() -> Self {
        Self {
            p_cx: 0.0,
            p_1q: 0.0,
            t1_us: 100.0,
            t2_us: 100.0,
            idle_us: 0.0,
            p_h: 0.0,
            p_s_mean: 0.0,
            p_leak: 0.0,
            p_leak_ramp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_cx", self.p_cx),
            ("p_1q", self.p_1q),
            ("p_h", self.p_h),
            ("p_s_mean", self.p_s_mean),
            ("p_leak", self.p_leak),
        ];
        for (name, p) in probs {
            if !(0.0..=0.5).contains(&p) {
                return Err(Error::Domain(format!("{name} = {p} outside [0, 0.5]")));
            }
        }
        if !(self.p_leak_ramp >= 0.0 && self.p_leak_ramp.is_finite()) {
            return Err(Error::Domain("p_leak_ramp must be finite and >= 0".into()));
        }
        if !(self.t1_us > 0.0 && self.t2_us > 0.0) {
            return Err(Error::Domain("t1_us and t2_us must be positive".into()));
        }
        if self.t2_us > 2.0 * self.t1_us {
            return Err(Error::Domain("t2_us must not exceed 2 * t1_us".into()));
        }
        if !(self.idle_us >= 0.0 && self.idle_us.is_finite()) {
            return Err(Error::Domain("idle_us must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Leakage probability of a measurement in (0-based) round `round`.
    pub fn leak_probability(&self, round: usize) -> f64 {
        (self.p_leak + self.p_leak_ramp * round as f64).clamp(0.0, 1.0)
    }

    /// Probability that idling flips a data qubit in the measured basis.
    pub fn idle_flip_probability(&self, basis: Basis) -> Result<f64> {
        let (px, py, pz) = idling_probs(self.t1_us, self.t2_us, self.idle_us)?;
        Ok(match basis {
            Basis::Z => px + py,
            Basis::X => pz + py,
        })
    }

    /// Probability that a single-qubit depolarizing fault anticommutes with
    /// the measured basis.
    pub fn one_qubit_flip_probability(&self) -> f64 {
        2.0 / 3.0 * self.p_1q
    }
}

/// Pauli idling probabilities `(p_X, p_Y, p_Z)` for idle time `idle_us`.
pub fn idling_probs(t1_us: f64, t2_us: f64, idle_us: f64) -> Result<(f64, f64, f64)> {
    if !(t1_us > 0.0 && t2_us > 0.0) {
        return Err(Error::Domain("decoherence times must be positive".into()));
    }
    if !(idle_us >= 0.0) {
        return Err(Error::Domain("idle time must be non-negative".into()));
    }
    let amp = (1.0 - (-idle_us / t1_us).exp()) / 4.0;
    let deph = (1.0 - (-idle_us / t2_us).exp()) / 2.0;
    let clamp = |p: f64| p.clamp(0.0, 1.0 - f64::EPSILON);
    Ok((clamp(amp), clamp(amp), clamp(deph - amp)))
}

/// Calibration state label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prepared {
    Zero,
    One,
}

impl Prepared {
    pub fn bit(self) -> u8 {
        match self {
            Prepared::Zero => 0,
            Prepared::One => 1,
        }
    }

    pub fn from_bit(b: u8) -> Self {
        if b == 0 {
            Prepared::Zero
        } else {
            Prepared::One
        }
    }
}

/// Counts of double-measurement outcome pairs `N_00, N_01, N_10, N_11` for one
/// prepared state; the first digit is the first (classified) outcome.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl PairCounts {
    pub fn new(n00: u64, n01: u64, n10: u64, n11: u64) -> Self {
        Self { n00, n01, n10, n11 }
    }

    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn record(&mut self, first: u8, second: u8) {
        match (first & 1, second & 1) {
            (0, 0) => self.n00 += 1,
            (0, _) => self.n01 += 1,
            (_, 0) => self.n10 += 1,
            _ => self.n11 += 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QubitCalibration {
    pub qubit: usize,
    pub prepared0: PairCounts,
    pub prepared1: PairCounts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCounts {
    pub qubits: Vec<QubitCalibration>,
}

impl QubitCalibration {
    pub fn counts(&self, prepared: Prepared) -> &PairCounts {
        match prepared {
            Prepared::Zero => &self.prepared0,
            Prepared::One => &self.prepared1,
        }
    }
}

impl CalibrationCounts {
    /// Chain-averaged `(p_s, p_h)`: mean over qubits and both prepared states.
    pub fn averaged_flip_probs(&self) -> Result<(f64, f64)> {
        if self.qubits.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        let mut ps = 0.0;
        let mut ph = 0.0;
        let mut n = 0.0;
        for q in &self.qubits {
            for prep in [Prepared::Zero, Prepared::One] {
                let (s, h) = estimate_flip_probs(q.counts(prep), prep)?;
                ps += s;
                ph += h;
                n += 1.0;
            }
        }
        Ok((ps / n, ph / n))
    }
}

/// Soft and hard flip probabilities `(p_s, p_h)` of the first measurement.
pub fn estimate_flip_probs(counts: &PairCounts, prepared: Prepared) -> Result<(f64, f64)> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyCalibration);
    }
    let n = total as f64;
    Ok(match prepared {
        Prepared::One => (counts.n01 as f64 / n, counts.n00 as f64 / n),
        Prepared::Zero => (counts.n10 as f64 / n, counts.n11 as f64 / n),
    })
}

/// Probability that an odd number of independent events occur.
pub fn combine_odd_parity(probs: &[f64]) -> f64 {
    probs.iter().fold(0.0, |acc, &p| combine2(acc, p))
}

#[inline]
pub fn combine2(p: f64, q: f64) -> f64 {
    p * (1.0 - q) + (1.0 - p) * q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// Data-qubit flip seen by one detector row.
    Space,
    /// Ancilla hard flip, consecutive rows.
    Time1,
    /// Ancilla soft flip, rows two apart.
    Time2Soft,
    /// Data flip between the two CNOT layers.
    Diagonal,
    /// Last measured round to the synthesized row (hard and soft flips).
    FinalTime,
    /// Data-qubit flip or final readout error in the synthesized row.
    FinalSpace,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 6] = [
        EdgeKind::Space,
        EdgeKind::Time1,
        EdgeKind::Time2Soft,
        EdgeKind::Diagonal,
        EdgeKind::FinalTime,
        EdgeKind::FinalSpace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Space => "space",
            EdgeKind::Time1 => "time1",
            EdgeKind::Time2Soft => "time2_soft",
            EdgeKind::Diagonal => "diagonal",
            EdgeKind::FinalTime => "final_time",
            EdgeKind::FinalSpace => "final_space",
        }
    }

    /// Kinds whose probability is refreshed per shot from soft outcomes.
    pub fn is_dynamic(self) -> bool {
        matches!(self, EdgeKind::Time2Soft | EdgeKind::FinalTime | EdgeKind::FinalSpace)
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EdgeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown edge kind '{s}'")))
    }
}

/// Identifies one edge of the decoding graph.
///
/// `index` is a data-qubit index for `Space`, `FinalSpace` and `Diagonal`
/// edges and a stabilizer index for the time-like kinds. `round` is the
/// (0-based) earlier detector row the edge touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    pub kind: EdgeKind,
    pub index: usize,
    pub round: usize,
}

impl EdgeKey {
    pub fn new(kind: EdgeKind, index: usize, round: usize) -> Self {
        Self { kind, index, round }
    }
}

/// Probability of one edge, split into the part that is independent of soft
/// flips and, for soft-sensitive edges, the calibrated soft contribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeProbability {
    pub base: f64,
    pub soft_sensitive: bool,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeProbabilityTable {
    pub spec: CodeSpec,
    pub p_s_mean: f64,
    entries: BTreeMap<EdgeKey, EdgeProbability>,
}

impl EdgeProbabilityTable {
    pub fn get(&self, key: &EdgeKey) -> Option<&EdgeProbability> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EdgeKey, &EdgeProbability)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remove(&mut self, key: &EdgeKey) -> Option<EdgeProbability> {
        self.entries.remove(key)
    }

    /// Same table with the soft contribution recomputed for a new mean.
    pub fn with_soft_mean(&self, p_s_mean: f64) -> Self {
        let mut out = self.clone();
        out.p_s_mean = p_s_mean;
        for e in out.entries.values_mut() {
            if e.soft_sensitive {
                e.total = combine2(e.base, p_s_mean);
            }
        }
        out
    }
}

/// Every edge of the graph for `spec`, with empty mechanism lists.
pub fn edge_keys(spec: &CodeSpec) -> Vec<EdgeKey> {
    let d = spec.distance;
    let rounds = spec.rounds;
    let m = spec.ancillas();
    let mut keys = Vec::new();
    for r in 0..rounds {
        for j in 0..d {
            keys.push(EdgeKey::new(EdgeKind::Space, j, r));
        }
    }
    for j in 0..d {
        keys.push(EdgeKey::new(EdgeKind::FinalSpace, j, rounds));
    }
    for a in 0..m {
        for t in 0..rounds - 1 {
            keys.push(EdgeKey::new(EdgeKind::Time1, a, t));
        }
        keys.push(EdgeKey::new(EdgeKind::FinalTime, a, rounds - 1));
        for t in 0..rounds.saturating_sub(1) {
            keys.push(EdgeKey::new(EdgeKind::Time2Soft, a, t));
        }
    }
    for j in 1..d.saturating_sub(1) {
        for t in 0..rounds {
            keys.push(EdgeKey::new(EdgeKind::Diagonal, j, t));
        }
    }
    keys
}

/// Space-like edge of data qubit `j` in detector row `row`.
fn space_key(spec: &CodeSpec, j: usize, row: usize) -> EdgeKey {
    if row == spec.rounds {
        EdgeKey::new(EdgeKind::FinalSpace, j, row)
    } else {
        EdgeKey::new(EdgeKind::Space, j, row)
    }
}

/// Time-like edge for a state change of ancilla `a` in round `t`.
fn time_key(spec: &CodeSpec, a: usize, t: usize) -> EdgeKey {
    if t + 1 == spec.rounds {
        EdgeKey::new(EdgeKind::FinalTime, a, t)
    } else {
        EdgeKey::new(EdgeKind::Time1, a, t)
    }
}

/// Builds the per-edge probability table for the stabilizer circuit: in every
/// round each ancilla `a` is coupled by a CNOT to data qubit `a`, then by a
/// second CNOT to data qubit `a + 1`, then measured without reset while the
/// data qubits idle.
pub fn derive_edge_probabilities(spec: &CodeSpec, noise: &NoiseParams) -> Result<EdgeProbabilityTable> {
    noise.validate()?;
    let d = spec.distance;
    let rounds = spec.rounds;
    let m = spec.ancillas();
    let p_idle = noise.idle_flip_probability(spec.basis)?;
    let p_enc = noise.one_qubit_flip_probability();
    // Four of the fifteen two-qubit Paulis fall in each of: control flip only,
    // target flip only, both flipped. Each is an independent event here.
    let p_pauli = noise.p_cx / 15.0;

    let mut mechanisms: BTreeMap<EdgeKey, Vec<f64>> = edge_keys(spec).into_iter().map(|k| (k, Vec::new())).collect();
    let mut add = |key: EdgeKey, p: f64, times: usize| {
        let list = mechanisms.get_mut(&key).expect("mechanism maps onto a known edge");
        list.extend(std::iter::repeat_n(p, times));
    };

    for j in 0..d {
        add(space_key(spec, j, 0), p_enc, 1);
    }
    for t in 0..rounds {
        for a in 0..m {
            // first CNOT: data a -> ancilla a
            let control_only = if a == 0 {
                space_key(spec, 0, t + 1)
            } else {
                EdgeKey::new(EdgeKind::Diagonal, a, t)
            };
            add(control_only, p_pauli, 4);
            add(time_key(spec, a, t), p_pauli, 4);
            add(space_key(spec, a, t), p_pauli, 4);

            // second CNOT: data a+1 -> ancilla a
            add(space_key(spec, a + 1, t + 1), p_pauli, 4);
            add(time_key(spec, a, t), p_pauli, 4);
            let both = if a + 1 == d - 1 {
                space_key(spec, d - 1, t)
            } else {
                EdgeKey::new(EdgeKind::Diagonal, a + 1, t)
            };
            add(both, p_pauli, 4);

            add(time_key(spec, a, t), noise.p_h, 1);
        }
        for j in 0..d {
            add(space_key(spec, j, t + 1), p_idle, 1);
        }
    }
    for j in 0..d {
        add(space_key(spec, j, rounds), noise.p_h, 1);
    }

    let entries = mechanisms
        .into_iter()
        .map(|(key, probs)| {
            let base = combine_odd_parity(&probs);
            let soft_sensitive = key.kind.is_dynamic();
            let total = if soft_sensitive {
                combine2(base, noise.p_s_mean)
            } else {
                base
            };
            (
                key,
                EdgeProbability {
                    base,
                    soft_sensitive,
                    total,
                },
            )
        })
        .collect();
    Ok(EdgeProbabilityTable {
        spec: *spec,
        p_s_mean: noise.p_s_mean,
        entries,
    })
}
