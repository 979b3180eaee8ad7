//! Repetition-code experiment definition, no-reset outcome correction,
//! detector computation and distance subsampling.
//!
//! Layout convention: data qubits `0..d`, ancilla `a` measures the parity of
//! data qubits `a` and `a + 1`. Rounds are indexed from 0 internally; row
//! `T` of a [`SyndromeMatrix`] is the round synthesized from the final data
//! readout.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single measured or derived bit, always 0 or 1.
pub type Bit = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicalState {
    Plus,
    Minus,
}

impl LogicalState {
    /// Value every data qubit reads out in a noiseless experiment.
    pub fn bit(self) -> Bit {
        match self {
            LogicalState::Plus => 0,
            LogicalState::Minus => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResetPolicy {
    #[default]
    NoReset,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
        })
    }
}

impl FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Z" | "z" => Ok(Basis::Z),
            "X" | "x" => Ok(Basis::X),
            _ => Err(Error::Domain(format!("unknown basis '{s}'"))),
        }
    }
}

impl fmt::Display for LogicalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogicalState::Plus => "plus",
            LogicalState::Minus => "minus",
        })
    }
}

impl FromStr for LogicalState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+" | "0" => Ok(LogicalState::Plus),
            "minus" | "-" | "1" => Ok(LogicalState::Minus),
            _ => Err(Error::Domain(format!("unknown logical state '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeSpec {
    pub distance: usize,
    pub rounds: usize,
    pub basis: Basis,
    pub logical_state: LogicalState,
    #[serde(default)]
    pub reset_policy: ResetPolicy,
}

impl CodeSpec {
    pub fn new(distance: usize, rounds: usize, basis: Basis, logical_state: LogicalState) -> Result<Self> {
        if distance < 2 {
            return Err(Error::Domain(format!("distance must be >= 2, got {distance}")));
        }
        if rounds < 1 {
            return Err(Error::Domain("rounds must be >= 1".into()));
        }
        Ok(Self {
            distance,
            rounds,
            basis,
            logical_state,
            reset_policy: ResetPolicy::NoReset,
        })
    }

    pub fn z_plus(distance: usize, rounds: usize) -> Result<Self> {
        Self::new(distance, rounds, Basis::Z, LogicalState::Plus)
    }

    pub fn data_qubits(&self) -> usize {
        self.distance
    }

    pub fn ancillas(&self) -> usize {
        self.distance - 1
    }

    pub fn total_qubits(&self) -> usize {
        2 * self.distance - 1
    }

    /// Detector rows including the synthesized final round.
    pub fn detector_rounds(&self) -> usize {
        self.rounds + 1
    }

    pub fn detector_count(&self) -> usize {
        self.detector_rounds() * self.ancillas()
    }

    /// Data qubit carrying the logical observable (the last in the chain).
    pub fn logical_qubit(&self) -> usize {
        self.distance - 1
    }
}

/// Dense row-major matrix of bits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<Bit>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<Bit>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            bits: rows.iter().flatten().map(|&b| b & 1).collect(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, bits: Vec<Bit>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} bits cannot fill a {rows}x{cols} matrix",
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Bit {
        self.bits[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Bit) {
        self.bits[r * self.cols + c] = v & 1;
    }

    #[inline]
    pub fn flip(&mut self, r: usize, c: usize) {
        self.bits[r * self.cols + c] ^= 1;
    }

    pub fn row(&self, r: usize) -> &[Bit] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Bit] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn xor(&self, other: &BitMatrix) -> Result<BitMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("xor of differently shaped matrices".into()));
        }
        Ok(BitMatrix {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a ^ b).collect(),
        })
    }
}

/// Raw binary outcomes of one shot: ancilla outcomes without reset, and the
/// final data readout.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OutcomeRecord {
    pub raw_ancilla: BitMatrix,
    pub final_data: Vec<Bit>,
}

impl OutcomeRecord {
    pub fn noiseless(spec: &CodeSpec) -> Self {
        Self {
            raw_ancilla: BitMatrix::zeros(spec.rounds, spec.ancillas()),
            final_data: vec![spec.logical_state.bit(); spec.distance],
        }
    }

    pub fn check_shape(&self, spec: &CodeSpec) -> Result<()> {
        if self.raw_ancilla.rows() != spec.rounds || self.raw_ancilla.cols() != spec.ancillas() {
            return Err(Error::Dimension(format!(
                "ancilla record is {}x{}, expected {}x{}",
                self.raw_ancilla.rows(),
                self.raw_ancilla.cols(),
                spec.rounds,
                spec.ancillas()
            )));
        }
        if self.final_data.len() != spec.distance {
            return Err(Error::Dimension(format!(
                "final data has {} bits, expected {}",
                self.final_data.len(),
                spec.distance
            )));
        }
        Ok(())
    }

    /// Whether the final readout of the logical qubit disagrees with the
    /// prepared logical state.
    pub fn observed_logical_flip(&self, spec: &CodeSpec) -> Bit {
        self.final_data[spec.logical_qubit()] ^ spec.logical_state.bit()
    }

    pub fn bit_len(spec: &CodeSpec) -> usize {
        spec.rounds * spec.ancillas() + spec.distance
    }

    /// `'0'/'1'` line: ancilla bits round by round, then the data bits.
    pub fn to_line(&self) -> String {
        self.raw_ancilla
            .as_slice()
            .iter()
            .chain(&self.final_data)
            .map(|&b| if b == 0 { '0' } else { '1' })
            .collect()
    }

    pub fn from_line(line: &str, spec: &CodeSpec) -> Result<Self> {
        let bits: Vec<Bit> = line
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Domain(format!("invalid bit character '{other}'"))),
            })
            .collect::<Result<_>>()?;
        if bits.len() != Self::bit_len(spec) {
            return Err(Error::Dimension(format!(
                "line has {} bits, expected {}",
                bits.len(),
                Self::bit_len(spec)
            )));
        }
        let split = spec.rounds * spec.ancillas();
        Ok(Self {
            raw_ancilla: BitMatrix::from_vec(spec.rounds, spec.ancillas(), bits[..split].to_vec())?,
            final_data: bits[split..].to_vec(),
        })
    }
}

/// Detector outcomes, shape `(T + 1) x (d - 1)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SyndromeMatrix {
    pub detectors: BitMatrix,
}

impl SyndromeMatrix {
    pub fn rounds(&self) -> usize {
        self.detectors.rows()
    }

    pub fn stabilizers(&self) -> usize {
        self.detectors.cols()
    }

    pub fn get(&self, round: usize, stabilizer: usize) -> Bit {
        self.detectors.get(round, stabilizer)
    }

    pub fn count_events(&self) -> usize {
        self.detectors.count_ones()
    }
}

/// `m_t = m_t^raw XOR m_{t-1}^raw` with ancillas initialized to 0.
pub fn correct_no_reset(raw_ancilla: &BitMatrix) -> BitMatrix {
    let mut out = raw_ancilla.clone();
    for t in 1..raw_ancilla.rows() {
        for a in 0..raw_ancilla.cols() {
            out.set(t, a, raw_ancilla.get(t, a) ^ raw_ancilla.get(t - 1, a));
        }
    }
    out
}

/// Same as [`correct_no_reset`] but validates the shape against `spec`.
pub fn correct_no_reset_checked(raw_ancilla: &BitMatrix, spec: &CodeSpec) -> Result<BitMatrix> {
    if raw_ancilla.rows() != spec.rounds || raw_ancilla.cols() != spec.ancillas() {
        return Err(Error::Dimension(format!(
            "raw ancilla matrix is {}x{}, expected {}x{}",
            raw_ancilla.rows(),
            raw_ancilla.cols(),
            spec.rounds,
            spec.ancillas()
        )));
    }
    Ok(correct_no_reset(raw_ancilla))
}

pub fn compute_detectors(record: &OutcomeRecord, spec: &CodeSpec) -> Result<SyndromeMatrix> {
    record.check_shape(spec)?;
    let rounds = spec.rounds;
    let m = spec.ancillas();
    let corrected = correct_no_reset(&record.raw_ancilla);
    let mut det = BitMatrix::zeros(rounds + 1, m);
    for a in 0..m {
        det.set(0, a, corrected.get(0, a));
        for t in 1..rounds {
            det.set(t, a, corrected.get(t, a) ^ corrected.get(t - 1, a));
        }
        let final_parity = record.final_data[a] ^ record.final_data[a + 1];
        det.set(rounds, a, final_parity ^ corrected.get(rounds - 1, a));
    }
    Ok(SyndromeMatrix { detectors: det })
}

/// Number of distinct contiguous windows of `sub_distance` data qubits.
pub fn subsample_count(spec: &CodeSpec, sub_distance: usize) -> usize {
    if sub_distance < 2 || sub_distance > spec.distance {
        0
    } else {
        spec.distance - sub_distance + 1
    }
}

pub fn subsample_spec(spec: &CodeSpec, sub_distance: usize, offset: usize) -> Result<CodeSpec> {
    if sub_distance < 2 || sub_distance > spec.distance {
        return Err(Error::Bounds(format!(
            "sub-distance {sub_distance} outside [2, {}]",
            spec.distance
        )));
    }
    if offset > spec.distance - sub_distance {
        return Err(Error::Bounds(format!(
            "offset {offset} outside [0, {}]",
            spec.distance - sub_distance
        )));
    }
    Ok(CodeSpec {
        distance: sub_distance,
        ..*spec
    })
}

/// Restricts a record to data qubits `offset..offset + sub_distance` and the
/// ancillas between them.
pub fn subsample(
    record: &OutcomeRecord,
    spec: &CodeSpec,
    sub_distance: usize,
    offset: usize,
) -> Result<(OutcomeRecord, CodeSpec)> {
    record.check_shape(spec)?;
    let sub = subsample_spec(spec, sub_distance, offset)?;
    let m = sub.ancillas();
    let mut raw = BitMatrix::zeros(spec.rounds, m);
    for t in 0..spec.rounds {
        for a in 0..m {
            raw.set(t, a, record.raw_ancilla.get(t, offset + a));
        }
    }
    let final_data = record.final_data[offset..offset + sub_distance].to_vec();
    Ok((
        OutcomeRecord {
            raw_ancilla: raw,
            final_data,
        },
        sub,
    ))
}

pub fn write_records_text<W: Write>(mut out: W, records: &[OutcomeRecord]) -> Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_line())?;
    }
    Ok(())
}

/// Reads one record per non-empty line; lines starting with `#` are skipped.
pub fn read_records_text<R: BufRead>(input: R, spec: &CodeSpec) -> Result<Vec<OutcomeRecord>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(OutcomeRecord::from_line(trimmed, spec).map_err(|e| Error::parse(idx + 1, e.to_string()))?);
    }
    Ok(out)
}

const RECORD_MAGIC: &[u8; 4] = b"SQOR";
const RECORD_VERSION: u16 = 1;

/// Packed binary layout (little endian):
///
/// ```text
/// magic "SQOR" | version u16 | distance u32 | rounds u32 | basis u8 | state u8 | shots u64
/// then per shot ceil(bits / 8) bytes, bits LSB-first in text-line order
/// ```
pub fn write_records_binary<W: Write>(mut out: W, spec: &CodeSpec, records: &[OutcomeRecord]) -> Result<()> {
    out.write_all(RECORD_MAGIC)?;
    out.write_u16::<LittleEndian>(RECORD_VERSION)?;
    out.write_u32::<LittleEndian>(spec.distance as u32)?;
    out.write_u32::<LittleEndian>(spec.rounds as u32)?;
    out.write_u8(matches!(spec.basis, Basis::X) as u8)?;
    out.write_u8(spec.logical_state.bit())?;
    out.write_u64::<LittleEndian>(records.len() as u64)?;
    let nbits = OutcomeRecord::bit_len(spec);
    let mut buf = vec![0u8; nbits.div_ceil(8)];
    for r in records {
        r.check_shape(spec)?;
        buf.iter_mut().for_each(|b| *b = 0);
        for (i, &bit) in r.raw_ancilla.as_slice().iter().chain(&r.final_data).enumerate() {
            buf[i / 8] |= (bit & 1) << (i % 8);
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_records_binary<R: Read>(mut input: R) -> Result<(CodeSpec, Vec<OutcomeRecord>)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != RECORD_MAGIC {
        return Err(Error::parse(0, "bad magic bytes in record file"));
    }
    let version = input.read_u16::<LittleEndian>()?;
    if version != RECORD_VERSION {
        return Err(Error::parse(0, format!("unsupported record file version {version}")));
    }
    let distance = input.read_u32::<LittleEndian>()? as usize;
    let rounds = input.read_u32::<LittleEndian>()? as usize;
    let basis = if input.read_u8()? == 1 { Basis::X } else { Basis::Z };
    let state = if input.read_u8()? == 1 {
        LogicalState::Minus
    } else {
        LogicalState::Plus
    };
    let spec = CodeSpec::new(distance, rounds, basis, state)?;
    let shots = input.read_u64::<LittleEndian>()? as usize;
    let nbits = OutcomeRecord::bit_len(&spec);
    let mut buf = vec![0u8; nbits.div_ceil(8)];
    let split = rounds * spec.ancillas();
    let mut records = Vec::with_capacity(shots);
    for _ in 0..shots {
        input.read_exact(&mut buf)?;
        let bits: Vec<Bit> = (0..nbits).map(|i| (buf[i / 8] >> (i % 8)) & 1).collect();
        records.push(OutcomeRecord {
            raw_ancilla: BitMatrix::from_vec(rounds, spec.ancillas(), bits[..split].to_vec())?,
            final_data: bits[split..].to_vec(),
        });
    }
    Ok((spec, records))
}
