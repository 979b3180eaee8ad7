//! Logical error rates, Wilson intervals, Lambda fits and the truncation study.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::code_model::{compute_detectors, Basis, CodeSpec, LogicalState};
use crate::decoding_graph::{build_graph, reweight_probs, DecodingGraph};
use crate::error::{Error, Result};
use crate::matching_decoder::{decode_defects, extract_defects};
use crate::measurement_model::truncate_prob;
use crate::noise_model::derive_edge_probabilities;
use crate::sampler::{sample_shot, shot_seed, DecoderMode, Experiment, ShotRecord, CHUNK_SHOTS};

pub const DEFAULT_CONFIDENCE: f64 = 0.68;
/// Points with fewer failures are reported but left out of Lambda fits.
pub const MIN_FIT_FAILURES: u64 = 5;
pub const BOOTSTRAP_REPLICATES: usize = 2000;
pub const RESULTS_SCHEMA: &str = "# softqec-results v1";
pub const TRUNCATION_SCHEMA: &str = "# softqec-truncation v1";
/// Precision recorded for decoders that use untruncated soft information.
pub const FULL_PRECISION_BITS: u32 = 64;

/// Two-sided standard normal quantile for `confidence`.
pub fn z_score(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must be in (0, 1), got {confidence}")));
    }
    let n = Normal::new(0.0, 1.0).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(n.inverse_cdf(0.5 + confidence / 2.0))
}

pub fn wilson_interval(failures: u64, shots: u64, confidence: f64) -> Result<(f64, f64)> {
    if shots == 0 {
        return Err(Error::Domain("Wilson interval needs shots > 0".into()));
    }
    if failures > shots {
        return Err(Error::Domain(format!("failures {failures} exceed shots {shots}")));
    }
    let z = z_score(confidence)?;
    let n = shots as f64;
    let p = failures as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if failures == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if failures == shots { 1.0 } else { (centre + half).min(1.0) };
    Ok((low, high))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub failures: u64,
    pub shots: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateEstimate {
    pub fn new(failures: u64, shots: u64, confidence: f64) -> Result<Self> {
        let (ci_low, ci_high) = wilson_interval(failures, shots, confidence)?;
        Ok(Self {
            failures,
            shots,
            p_hat: failures as f64 / shots as f64,
            ci_low,
            ci_high,
        })
    }
}

/// Total logical error probability after `rounds` rounds at per-round rate `eps`.
pub fn logical_rate_after(eps: f64, rounds: usize) -> f64 {
    -(rounds as f64 * (-2.0 * eps).ln_1p()).exp_m1() / 2.0
}

/// Inverts [`logical_rate_after`].
pub fn per_round_rate(p_l: f64, rounds: usize) -> Result<f64> {
    if rounds == 0 {
        return Err(Error::Domain("rounds must be >= 1".into()));
    }
    if !(p_l >= 0.0) {
        return Err(Error::Domain(format!("logical error probability {p_l} is negative")));
    }
    if p_l >= 0.5 {
        return Err(Error::Saturation(p_l));
    }
    Ok(-((-2.0 * p_l).ln_1p() / rounds as f64).exp_m1() / 2.0)
}

/// Per-round rate for one distance, with the Wilson bounds mapped through the inversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub distance: usize,
    pub failures: u64,
    pub eps: f64,
    pub eps_low: f64,
    pub eps_high: f64,
}

impl RatePoint {
    pub fn from_estimate(distance: usize, rounds: usize, est: &RateEstimate) -> Result<Self> {
        let map = |p: f64| per_round_rate(p.min(0.5 - 1e-15), rounds);
        Ok(Self {
            distance,
            failures: est.failures,
            eps: per_round_rate(est.p_hat, rounds)?,
            eps_low: map(est.ci_low)?,
            eps_high: map(est.ci_high)?,
        })
    }
}

/// Fit abscissa: the number of faults a distance-`d` code needs to fail.
pub fn fit_abscissa(distance: usize) -> f64 {
    (distance / 2 + 1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub distance: usize,
    pub eps: f64,
    pub weight: f64,
    pub included: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub lambda_err: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<FitPoint>,
}

/// Weighted least squares of `ln eps` against `floor(d/2) + 1`; Lambda is `exp(-slope)`.
///
/// Weights are inverse variances of `ln eps`, taking the log-space half-width of each
/// point's interval as one standard deviation, and the slope error is the sampling
/// error `1/sqrt(Sxx)`. If any point's interval is degenerate every point gets unit
/// weight and the error is scaled by the residual variance instead.
pub fn fit_lambda(points: &[RatePoint]) -> Result<LambdaFit> {
    let usable = |p: &RatePoint| p.failures >= MIN_FIT_FAILURES && p.eps > 0.0 && p.eps.is_finite();
    let sigma = |p: &RatePoint| {
        if p.eps_low > 0.0 && p.eps_high > p.eps_low {
            (p.eps_high.ln() - p.eps_low.ln()) / 2.0
        } else {
            0.0
        }
    };
    let unit = points.iter().filter(|p| usable(p)).any(|p| !(sigma(p) > 0.0));
    let fit_points: Vec<FitPoint> = points
        .iter()
        .map(|p| FitPoint {
            distance: p.distance,
            eps: p.eps,
            weight: if !usable(p) {
                0.0
            } else if unit {
                1.0
            } else {
                sigma(p).powi(-2)
            },
            included: usable(p),
        })
        .collect();
    let used: Vec<&FitPoint> = fit_points.iter().filter(|p| p.included).collect();
    let mut distinct: Vec<f64> = used.iter().map(|p| fit_abscissa(p.distance)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Lambda fit needs two distances with at least {MIN_FIT_FAILURES} failures, have {}",
            distinct.len()
        )));
    }
    let sw: f64 = used.iter().map(|p| p.weight).sum();
    let mx = used.iter().map(|p| p.weight * fit_abscissa(p.distance)).sum::<f64>() / sw;
    let my = used.iter().map(|p| p.weight * p.eps.ln()).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &used {
        let dx = fit_abscissa(p.distance) - mx;
        let dy = p.eps.ln() - my;
        sxx += p.weight * dx * dx;
        sxy += p.weight * dx * dy;
        syy += p.weight * dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let chi2: f64 = used
        .iter()
        .map(|p| p.weight * (p.eps.ln() - intercept - slope * fit_abscissa(p.distance)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - chi2 / syy } else { 1.0 };
    let dof = used.len().saturating_sub(2);
    let inflation = match (unit, dof) {
        (true, 0) => 0.0,
        (true, _) => chi2 / dof as f64,
        (false, _) => 1.0,
    };
    let slope_err = (inflation / sxx).sqrt();
    let lambda = (-slope).exp();
    Ok(LambdaFit {
        lambda,
        lambda_err: lambda * slope_err,
        intercept,
        r_squared,
        points: fit_points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Increase {
    pub value: f64,
    pub err: f64,
}

/// Relative threshold gain `lambda_a / lambda_b - 1` with first-order error.
pub fn threshold_increase(a: &LambdaFit, b: &LambdaFit) -> Increase {
    let ratio = a.lambda / b.lambda;
    Increase {
        value: ratio - 1.0,
        err: ratio * ((a.lambda_err / a.lambda).powi(2) + (b.lambda_err / b.lambda).powi(2)).sqrt(),
    }
}

/// Paired outcome counts of the full-precision and truncated soft decoders.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedCounts {
    pub both: u64,
    pub full_only: u64,
    pub truncated_only: u64,
    pub neither: u64,
}

impl PairedCounts {
    pub fn total(&self) -> u64 {
        self.both + self.full_only + self.truncated_only + self.neither
    }

    pub fn full_failures(&self) -> u64 {
        self.both + self.full_only
    }

    pub fn truncated_failures(&self) -> u64 {
        self.both + self.truncated_only
    }

    fn add(&mut self, full: bool, truncated: bool) {
        match (full, truncated) {
            (true, true) => self.both += 1,
            (true, false) => self.full_only += 1,
            (false, true) => self.truncated_only += 1,
            (false, false) => self.neither += 1,
        }
    }

    fn merge(&mut self, o: &PairedCounts) {
        self.both += o.both;
        self.full_only += o.full_only;
        self.truncated_only += o.truncated_only;
        self.neither += o.neither;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationCounts {
    pub bits: Vec<u32>,
    pub pairs: Vec<PairedCounts>,
}

impl TruncationCounts {
    pub fn new(bits: &[u32]) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Domain("truncation bit list is empty".into()));
        }
        for &b in bits {
            truncate_prob(0.25, b)?;
        }
        Ok(Self {
            bits: bits.to_vec(),
            pairs: vec![PairedCounts::default(); bits.len()],
        })
    }

    pub fn merge(&mut self, other: &TruncationCounts) -> Result<()> {
        if self.bits != other.bits {
            return Err(Error::Dimension("truncation counts over different bit lists".into()));
        }
        for (a, b) in self.pairs.iter_mut().zip(&other.pairs) {
            a.merge(b);
        }
        Ok(())
    }
}

fn decode_soft_truncated(graph: &DecodingGraph, shot: &ShotRecord, spec: &CodeSpec, bits: u32) -> Result<bool> {
    let defects = extract_defects(&compute_detectors(&shot.outcome, spec)?, graph)?;
    let trunc = |v: Vec<f64>| v.into_iter().map(|p| truncate_prob(p, bits)).collect::<Result<Vec<f64>>>();
    let sw = reweight_probs(graph, &trunc(shot.stabilizer_p())?, &trunc(shot.code_p())?)?;
    Ok(decode_defects(graph, &sw.weights, &defects)?.logical_flip != shot.truth_logical_flip)
}

/// Decodes each shot at full precision and at every truncation in `counts.bits`.
pub fn accumulate_truncation(
    counts: &mut TruncationCounts,
    shots: &[ShotRecord],
    spec: &CodeSpec,
    graph: &DecodingGraph,
) -> Result<()> {
    let per_shot: Vec<Result<Vec<(bool, bool)>>> = shots
        .par_iter()
        .map(|shot| {
            let full = decode_soft_truncated(graph, shot, spec, FULL_PRECISION_BITS)?;
            counts
                .bits
                .iter()
                .map(|&b| {
                    let t = if b == FULL_PRECISION_BITS {
                        full
                    } else {
                        decode_soft_truncated(graph, shot, spec, b)?
                    };
                    Ok((full, t))
                })
                .collect()
        })
        .collect();
    for r in per_shot {
        for (k, (full, t)) in r?.into_iter().enumerate() {
            counts.pairs[k].add(full, t);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub bits: u32,
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub failures: u64,
    pub failures_full: u64,
    pub shots: u64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Ratio `P_L^b / P_L^64` per bit count with a paired multinomial bootstrap interval.
pub fn truncation_ratios(counts: &TruncationCounts, confidence: f64, seed: u64) -> Result<Vec<TruncationRow>> {
    z_score(confidence)?;
    counts
        .bits
        .iter()
        .zip(&counts.pairs)
        .enumerate()
        .map(|(k, (&bits, c))| {
            let n = c.total();
            if c.full_failures() == 0 {
                return Err(Error::UndefinedRatio(format!(
                    "no full-precision failures in {n} shots; ratio at b = {bits} is undefined"
                )));
            }
            let ratio = c.truncated_failures() as f64 / c.full_failures() as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(shot_seed(seed, k as u64));
            let cells = [c.both, c.full_only, c.truncated_only];
            let mut reps = Vec::with_capacity(BOOTSTRAP_REPLICATES);
            for _ in 0..BOOTSTRAP_REPLICATES {
                // multinomial draw as a chain of conditional binomials
                let mut left = n;
                let mut mass = 1.0;
                let mut draw = [0u64; 3];
                for (slot, &cell) in draw.iter_mut().zip(&cells) {
                    let p = cell as f64 / n as f64;
                    let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
                    *slot = if left == 0 || q == 0.0 {
                        0
                    } else {
                        Binomial::new(left, q)
                            .map_err(|e| Error::Internal(e.to_string()))?
                            .sample(&mut rng)
                    };
                    left -= *slot;
                    mass -= p;
                }
                let full = draw[0] + draw[1];
                if full > 0 {
                    reps.push((draw[0] + draw[2]) as f64 / full as f64);
                }
            }
            reps.sort_by(f64::total_cmp);
            let tail = (1.0 - confidence) / 2.0;
            let (ci_low, ci_high) = if bits == FULL_PRECISION_BITS || reps.is_empty() {
                (ratio, ratio)
            } else {
                (percentile(&reps, tail), percentile(&reps, 1.0 - tail))
            };
            Ok(TruncationRow {
                bits,
                ratio,
                ci_low,
                ci_high,
                failures: c.truncated_failures(),
                failures_full: c.full_failures(),
                shots: n,
            })
        })
        .collect()
}

/// Truncation study on already stored shots.
pub fn truncation_sweep(
    shots: &[ShotRecord],
    spec: &CodeSpec,
    graph: &DecodingGraph,
    bits: &[u32],
    confidence: f64,
    seed: u64,
) -> Result<Vec<TruncationRow>> {
    let mut counts = TruncationCounts::new(bits)?;
    accumulate_truncation(&mut counts, shots, spec, graph)?;
    truncation_ratios(&counts, confidence, seed)
}

/// Runs the truncation study on `exp.shots` fresh shots, holding one chunk in memory at a time.
pub fn truncation_experiment(exp: &Experiment, bits: &[u32]) -> Result<TruncationCounts> {
    if exp.shots == 0 {
        return Err(Error::Domain("need at least one shot".into()));
    }
    let table = derive_edge_probabilities(&exp.spec, &exp.noise)?;
    let graph = build_graph(&exp.spec, &table)?;
    let mut counts = TruncationCounts::new(bits)?;
    let mut start = 0;
    while start < exp.shots {
        let end = (start + CHUNK_SHOTS * 8).min(exp.shots);
        let shots: Vec<ShotRecord> = (start..end)
            .into_par_iter()
            .map(|i| sample_shot(&exp.spec, &exp.noise, &exp.model, shot_seed(exp.seed, i)))
            .collect::<Result<_>>()?;
        accumulate_truncation(&mut counts, &shots, &exp.spec, &graph)?;
        start = end;
    }
    Ok(counts)
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: DecoderMode,
    pub basis: Basis,
    pub state: LogicalState,
    pub distance: usize,
    pub rounds: usize,
    pub bits: u32,
    /// Window offset; `None` for rows pooled over offsets.
    pub offset: Option<usize>,
    pub estimate: RateEstimate,
    /// Per-round rate; `None` once the total rate saturates.
    pub eps: Option<f64>,
    pub lambda: Option<f64>,
    pub lambda_err: Option<f64>,
}

pub const RESULTS_COLUMNS: &str =
    "mode,basis,state,d,T,b,shots,failures,p_hat,ci_low,ci_high,eps_L,lambda,lambda_err";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows in the versioned CSV layout; per-offset rows add a trailing `offset` column.
pub fn write_results_csv<W: Write>(mut out: W, rows: &[ResultRow], with_offset: bool) -> Result<()> {
    writeln!(out, "{RESULTS_SCHEMA}")?;
    if with_offset {
        writeln!(out, "{RESULTS_COLUMNS},offset")?;
    } else {
        writeln!(out, "{RESULTS_COLUMNS}")?;
    }
    for r in rows {
        let e = &r.estimate;
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.mode,
            r.basis,
            r.state,
            r.distance,
            r.rounds,
            r.bits,
            e.shots,
            e.failures,
            e.p_hat,
            e.ci_low,
            e.ci_high,
            opt(r.eps),
            opt(r.lambda),
            opt(r.lambda_err)
        )?;
        if with_offset {
            write!(out, ",{}", r.offset.map(|o| o.to_string()).unwrap_or_default())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes truncation ratios; each section is `(d, T, rows)`.
pub fn write_truncation_csv<W: Write>(mut out: W, sections: &[(usize, usize, Vec<TruncationRow>)]) -> Result<()> {
    writeln!(out, "{TRUNCATION_SCHEMA}")?;
    writeln!(out, "d,T,b,shots,failures,failures_full,ratio,ci_low,ci_high")?;
    for (d, t, rows) in sections {
        for r in rows {
            writeln!(
                out,
                "{d},{t},{},{},{},{},{},{},{}",
                r.bits, r.shots, r.failures, r.failures_full, r.ratio, r.ci_low, r.ci_high
            )?;
        }
    }
    Ok(())
}

/// Fits Lambda for every `(mode, basis, state, T, b)` group of pooled rows and fills the
/// `lambda` columns. Groups that cannot be fitted keep empty columns and are returned.
pub fn attach_lambda_fits(rows: &mut [ResultRow]) -> Vec<(DecoderMode, usize, Result<LambdaFit>)> {
    let mut keys: Vec<(DecoderMode, Basis, LogicalState, usize, u32)> = rows
        .iter()
        .filter(|r| r.offset.is_none())
        .map(|r| (r.mode, r.basis, r.state, r.rounds, r.bits))
        .collect();
    keys.sort_by_key(|k| (k.0, k.1 == Basis::X, k.2 == LogicalState::Minus, k.3, k.4));
    keys.dedup();
    let mut fits = Vec::new();
    for key in keys {
        let in_group = |r: &ResultRow| r.offset.is_none() && (r.mode, r.basis, r.state, r.rounds, r.bits) == key;
        let points: Result<Vec<RatePoint>> = rows
            .iter()
            .filter(|r| in_group(r))
            .filter(|r| r.estimate.p_hat < 0.5)
            .map(|r| RatePoint::from_estimate(r.distance, r.rounds, &r.estimate))
            .collect();
        let fit = points.and_then(|p| fit_lambda(&p));
        if let Ok(f) = &fit {
            for r in rows.iter_mut().filter(|r| in_group(r)) {
                r.lambda = Some(f.lambda);
                r.lambda_err = Some(f.lambda_err);
            }
        }
        fits.push((key.0, key.3, fit));
    }
    fits
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::Normal as RNormal;

    fn exact_points(lambda0: f64, scale: f64) -> Vec<RatePoint> {
        [3, 5, 7, 9]
            .into_iter()
            .map(|d| {
                let eps = scale * lambda0.powf(-fit_abscissa(d));
                RatePoint {
                    distance: d,
                    failures: 100,
                    eps,
                    eps_low: eps,
                    eps_high: eps,
                }
            })
            .collect()
    }

    fn fit(lambda: f64, err: f64) -> LambdaFit {
        LambdaFit {
            lambda,
            lambda_err: err,
            intercept: 0.0,
            r_squared: 1.0,
            points: vec![],
        }
    }

    #[test]
    fn z_for_68_percent() {
        assert!((z_score(0.68).unwrap() - 0.994457883209753).abs() < 1e-12);
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(5, 1000, 0.68).unwrap();
        assert!((lo - 0.003218733698578569).abs() < 1e-12);
        assert!((hi - 0.0077593560396794535).abs() < 1e-12);
        let (lo, hi) = wilson_interval(37, 250, 0.68).unwrap();
        assert!((lo - 0.12705385797615956).abs() < 1e-12);
        assert!((hi - 0.1717200423597738).abs() < 1e-12);
        assert_eq!(wilson_interval(0, 100, 0.68).unwrap().0, 0.0);
        assert!((wilson_interval(0, 100, 0.68).unwrap().1 - 0.00979262103362373).abs() < 1e-12);
        assert_eq!(wilson_interval(100, 100, 0.68).unwrap().1, 1.0);
        assert!(wilson_interval(0, 0, 0.68).is_err());
    }

    #[test]
    fn wilson_coverage_is_nominal_on_average() {
        // pointwise coverage oscillates around nominal, so average over the rate
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [100u64, 1000] {
            let trials = 40_000;
            let hit = (0..trials)
                .filter(|_| {
                    let p = rng.random_range(0.01..0.5);
                    let k = Binomial::new(n, p).unwrap().sample(&mut rng);
                    let (lo, hi) = wilson_interval(k, n, 0.68).unwrap();
                    lo <= p && p <= hi
                })
                .count();
            let coverage = hit as f64 / trials as f64;
            assert!((coverage - 0.68).abs() < 0.01, "n={n} coverage {coverage}");
        }
    }

    #[test]
    fn per_round_examples() {
        assert_eq!(per_round_rate(0.0, 10).unwrap(), 0.0);
        let p = (1.0 - 0.998f64.powi(50)) / 2.0;
        assert!((per_round_rate(p, 50).unwrap() - 0.001).abs() < 1e-12);
        let p_l = 0.01;
        let eps = per_round_rate(p_l, 50).unwrap();
        assert!((eps / (p_l / 50.0) - 1.0).abs() < 0.01);
        assert!(matches!(per_round_rate(0.5, 3), Err(Error::Saturation(_))));
    }

    #[test]
    fn exact_lambda() {
        let f = fit_lambda(&exact_points(2.0, 0.5)).unwrap();
        assert!((f.lambda - 2.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-9);
        assert!(f.lambda_err < 1e-9);
    }

    #[test]
    fn sparse_points_are_excluded() {
        let mut pts = exact_points(2.0, 0.5);
        pts[3].failures = 4;
        let f = fit_lambda(&pts).unwrap();
        assert!(!f.points[3].included);
        assert!((f.lambda - 2.0).abs() < 1e-9);
        for p in &mut pts {
            p.failures = 0;
        }
        assert!(matches!(fit_lambda(&pts), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn noisy_fit_coverage() {
        let sigma: f64 = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let noise = RNormal::<f64>::new(0.0, sigma).unwrap();
        let mut covered = 0;
        for _ in 0..100 {
            let pts: Vec<RatePoint> = exact_points(2.0, 0.5)
                .into_iter()
                .map(|p| {
                    let eps = p.eps * noise.sample(&mut rng).exp();
                    RatePoint {
                        eps,
                        eps_low: eps * (-sigma).exp(),
                        eps_high: eps * sigma.exp(),
                        ..p
                    }
                })
                .collect();
            let f = fit_lambda(&pts).unwrap();
            if (f.lambda - 2.0).abs() <= 3.0 * f.lambda_err {
                covered += 1;
            }
        }
        assert!(covered >= 95, "coverage {covered}/100");
    }

    #[test]
    fn table_ratios() {
        let v = threshold_increase(&fit(1.67, 0.03), &fit(1.36, 0.01));
        assert!((v.value - (1.67 / 1.36 - 1.0)).abs() < 1e-15);
        assert!((v.value - 0.228).abs() < 5e-4);
        assert!((threshold_increase(&fit(1.83, 0.02), &fit(1.36, 0.01)).value - 0.346).abs() < 5e-4);
        assert_eq!(threshold_increase(&fit(1.5, 0.1), &fit(1.5, 0.1)).value, 0.0);
        assert!(v.err > 0.0);
    }

    #[test]
    fn truncation_ratio_rows() {
        let mut c = TruncationCounts::new(&[1, 64]).unwrap();
        c.pairs[0] = PairedCounts {
            both: 40,
            full_only: 10,
            truncated_only: 30,
            neither: 920,
        };
        c.pairs[1] = PairedCounts {
            both: 50,
            full_only: 0,
            truncated_only: 0,
            neither: 950,
        };
        let rows = truncation_ratios(&c, 0.68, 1).unwrap();
        assert!((rows[0].ratio - 1.4).abs() < 1e-15);
        assert!(rows[0].ci_low < 1.4 && rows[0].ci_high > 1.4 && rows[0].ci_low > 1.0);
        assert_eq!((rows[1].ratio, rows[1].ci_low, rows[1].ci_high), (1.0, 1.0, 1.0));
        c.pairs[0] = PairedCounts {
            neither: 1000,
            ..Default::default()
        };
        assert!(matches!(truncation_ratios(&c, 0.68, 1), Err(Error::UndefinedRatio(_))));
        assert!(TruncationCounts::new(&[]).is_err());
        assert!(TruncationCounts::new(&[65]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut rows = vec![ResultRow {
            mode: DecoderMode::Soft,
            basis: Basis::Z,
            state: LogicalState::Plus,
            distance: 3,
            rounds: 10,
            bits: 64,
            offset: None,
            estimate: RateEstimate::new(5, 1000, 0.68).unwrap(),
            eps: Some(per_round_rate(0.005, 10).unwrap()),
            lambda: None,
            lambda_err: None,
        }];
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rows, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_SCHEMA);
        assert_eq!(lines[1], RESULTS_COLUMNS);
        assert!(lines[2].starts_with("soft,Z,plus,3,10,64,1000,5,0.005,"));
        assert!(lines[2].ends_with(",,"));
        let fits = attach_lambda_fits(&mut rows);
        assert!(fits[0].2.is_err());
    }

    proptest! {
        #[test]
        fn per_round_round_trip(u in 0.0f64..=1.0, rounds in 1usize..=200) {
            // beyond (1 - 2 eps)^T = 1e-4 the survival term is below f64 resolution of P
            let eps_max = (0.5 * -(1e-4f64.ln() / rounds as f64).exp_m1()).min(0.4);
            let eps = u * eps_max;
            let p = logical_rate_after(eps, rounds);
            prop_assert!((per_round_rate(p, rounds).unwrap() - eps).abs() <= 1e-12);
        }

        #[test]
        fn lambda_scale_invariant(c in 0.01f64..100.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<RatePoint> = exact_points(1.7, 0.3).into_iter().map(|p| {
                let eps = p.eps * rng.random_range(0.8..1.25);
                RatePoint { eps, eps_low: eps * 0.9, eps_high: eps * 1.12, ..p }
            }).collect();
            let scaled: Vec<RatePoint> = pts.iter().map(|p| RatePoint {
                eps: p.eps * c, eps_low: p.eps_low * c, eps_high: p.eps_high * c, ..*p
            }).collect();
            let a = fit_lambda(&pts).unwrap();
            let b = fit_lambda(&scaled).unwrap();
            prop_assert!((a.lambda - b.lambda).abs() <= 1e-9 * a.lambda);
        }

        #[test]
        fn increase_antisymmetry(a in 0.5f64..3.0, b in 0.5f64..3.0) {
            let ab = threshold_increase(&fit(a, 0.01), &fit(b, 0.02)).value;
            let ba = threshold_increase(&fit(b, 0.02), &fit(a, 0.01)).value;
            prop_assert!((ab + ba / (1.0 + ba)).abs() <= 1e-12);
        }
    }
}
