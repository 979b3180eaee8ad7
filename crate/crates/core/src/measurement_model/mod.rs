//! Analog readout: IQ densities, soft-flip probabilities, leakage flags.

mod density;
mod kde;

use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::code_model::Bit;
use crate::error::{Error, Result};
use crate::noise_model::{Prepared, P_MIN};

pub use density::{Covariance, Extent, Gaussian, GridDensity, IQPoint, StateDensity};
pub use kde::{bandwidth_grid, fit_kde, Kde, DEFAULT_VALIDATION_FRACTION, MIN_SAMPLES};

/// Densities never drop below this fraction of their peak.
pub const FLOOR_RELATIVE: f64 = 1e-12;
pub const DEFAULT_OUTLIER_FRACTION: f64 = 0.01;
/// Cells per axis used by [`mean_soft_flip_prob`].
pub const INTEGRATION_CELLS: usize = 1000;
pub const MIN_COVERAGE: f64 = 1.0 - 1e-4;

/// Density of leaked-state readouts plus the outlier threshold used to flag them.
#[derive(Clone, Debug)]
pub struct LeakageModel {
    pub density: StateDensity,
    pub outlier_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct ReadoutModel {
    pub f0: StateDensity,
    pub f1: StateDensity,
    pub priors: (f64, f64),
    /// When present, outliers are flagged and leakage can be simulated.
    pub leakage: Option<LeakageModel>,
    log_levels: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftOutcome {
    pub mu: IQPoint,
    pub z_hat: Bit,
    pub p_soft: f64,
    pub leaked: bool,
}

impl ReadoutModel {
    pub fn new(f0: StateDensity, f1: StateDensity, priors: (f64, f64), leakage: Option<LeakageModel>) -> Result<Self> {
        let (p0, p1) = priors;
        if !((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1) && (p0 + p1 - 1.0).abs() < 1e-12) {
            return Err(Error::Domain(format!("priors ({p0}, {p1}) must lie in [0,1] and sum to 1")));
        }
        let mut log_levels = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        if let Some(l) = &leakage {
            if !(l.outlier_fraction > 0.0 && l.outlier_fraction < 1.0) {
                return Err(Error::Domain(format!(
                    "outlier fraction must be in (0, 1), got {}",
                    l.outlier_fraction
                )));
            }
            log_levels = (f0.log_hdr_level(l.outlier_fraction), f1.log_hdr_level(l.outlier_fraction));
        }
        Ok(Self {
            f0,
            f1,
            priors,
            leakage,
            log_levels,
        })
    }

    /// Equal-prior model without leakage handling.
    pub fn equal_priors(f0: StateDensity, f1: StateDensity) -> Result<Self> {
        Self::new(f0, f1, (0.5, 0.5), None)
    }

    /// Two isotropic Gaussians on the I axis whose mean soft-flip probability is `p_s`.
    pub fn symmetric_gaussian(p_s: f64, sigma: f64) -> Result<Self> {
        if !(p_s > 0.0 && p_s < 0.5) {
            return Err(Error::Domain(format!("mean soft-flip probability must be in (0, 0.5), got {p_s}")));
        }
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let half = -normal.inverse_cdf(p_s) * sigma;
        let cov = Covariance::isotropic(sigma);
        Self::equal_priors(
            StateDensity::gaussian(IQPoint::new(-half, 0.0), cov)?,
            StateDensity::gaussian(IQPoint::new(half, 0.0), cov)?,
        )
    }

    /// Enables leakage with a Gaussian midway between two Gaussian state densities.
    pub fn with_default_leakage(self, outlier_fraction: f64) -> Result<Self> {
        let density = match (&self.f0, &self.f1) {
            (StateDensity::Gaussian(a), StateDensity::Gaussian(b)) => {
                StateDensity::gaussian(IQPoint::midpoint(a.mean, b.mean), a.cov)?
            }
            _ => {
                return Err(Error::Domain(
                    "default leakage density needs Gaussian state densities".into(),
                ))
            }
        };
        self.with_leakage(LeakageModel {
            density,
            outlier_fraction,
        })
    }

    pub fn with_leakage(self, leakage: LeakageModel) -> Result<Self> {
        Self::new(self.f0, self.f1, self.priors, Some(leakage))
    }

    pub fn without_leakage(self) -> Self {
        Self::new(self.f0, self.f1, self.priors, None).expect("already validated")
    }

    pub fn density(&self, z: Bit) -> &StateDensity {
        if z == 0 {
            &self.f0
        } else {
            &self.f1
        }
    }

    fn prior(&self, z: Bit) -> f64 {
        if z == 0 {
            self.priors.0
        } else {
            self.priors.1
        }
    }

    pub fn outlier_fraction(&self) -> Option<f64> {
        self.leakage.as_ref().map(|l| l.outlier_fraction)
    }
}

/// Maximum-likelihood assignment; ties go to 0.
#[inline]
pub fn classify(mu: IQPoint, model: &ReadoutModel) -> Bit {
    if model.f0.log_density(mu) >= model.f1.log_density(mu) {
        0
    } else {
        1
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(P_MIN, 0.5)
}

/// Probability that `z_hat` disagrees with the projected state.
#[inline]
pub fn soft_flip_prob(mu: IQPoint, z_hat: Bit, model: &ReadoutModel) -> f64 {
    let other = z_hat ^ 1;
    let log_f_other = model.density(other).log_density(mu);
    let (p_hat, p_other) = (model.prior(z_hat), model.prior(other));
    if log_f_other == f64::NEG_INFINITY || p_other == 0.0 {
        return P_MIN;
    }
    let lr = p_hat.ln() - p_other.ln() + model.density(z_hat).log_density(mu) - log_f_other;
    clamp_prob(1.0 / (1.0 + lr.exp()))
}

/// True when `mu` lies outside the high-density region of both states.
/// Always false when the model has no leakage section.
#[inline]
pub fn detect_outlier(mu: IQPoint, model: &ReadoutModel) -> bool {
    model.leakage.is_some()
        && model.f0.log_density(mu) < model.log_levels.0
        && model.f1.log_density(mu) < model.log_levels.1
}

pub fn process_measurement(mu: IQPoint, model: &ReadoutModel) -> SoftOutcome {
    let z_hat = classify(mu, model);
    let leaked = detect_outlier(mu, model);
    let p_soft = if leaked { 0.5 } else { soft_flip_prob(mu, z_hat, model) };
    SoftOutcome {
        mu,
        z_hat,
        p_soft,
        leaked,
    }
}

/// Draws an IQ point for true state `z`; with probability `p_leak` the point
/// comes from the leakage density instead. `p_leak` is ignored without one.
pub fn sample_iq<R: Rng + ?Sized>(z: Bit, model: &ReadoutModel, p_leak: f64, rng: &mut R) -> IQPoint {
    if let Some(l) = &model.leakage {
        if p_leak > 0.0 && rng.random::<f64>() < p_leak {
            return l.density.sample(rng);
        }
    }
    model.density(z).sample(rng)
}

/// Prior-weighted probability mass assigned to the wrong state, integrated on
/// an `INTEGRATION_CELLS`-square grid over the union of both supports.
pub fn mean_soft_flip_prob(model: &ReadoutModel) -> Result<f64> {
    mean_soft_flip_prob_with(model, INTEGRATION_CELLS)
}

pub fn mean_soft_flip_prob_with(model: &ReadoutModel, cells: usize) -> Result<f64> {
    let ext = model.f0.support().union(&model.f1.support());
    let dx = (ext.i_max - ext.i_min) / cells as f64;
    let dy = (ext.q_max - ext.q_min) / cells as f64;
    let (mut mass0, mut mass1, mut wrong0, mut wrong1) = (0.0, 0.0, 0.0, 0.0);
    for iy in 0..cells {
        let q = ext.q_min + (iy as f64 + 0.5) * dy;
        for ix in 0..cells {
            let p = IQPoint::new(ext.i_min + (ix as f64 + 0.5) * dx, q);
            let f0 = model.f0.density(p);
            let f1 = model.f1.density(p);
            mass0 += f0;
            mass1 += f1;
            if f0 >= f1 {
                wrong1 += f1;
            } else {
                wrong0 += f0;
            }
        }
    }
    let area = dx * dy;
    let (mass0, mass1) = (mass0 * area, mass1 * area);
    // grid-backed densities hold all of their mass inside the union box by construction
    let covered = |d: &StateDensity, m: f64| match d {
        StateDensity::Gaussian(_) => m,
        _ => 1.0,
    };
    let covered = covered(&model.f0, mass0).min(covered(&model.f1, mass1));
    if covered < MIN_COVERAGE {
        return Err(Error::Coverage { covered });
    }
    let p = model.priors.0 * wrong0 * area / mass0 + model.priors.1 * wrong1 * area / mass1;
    Ok(p.clamp(0.0, 1.0))
}

/// Keeps first-measurement points whose second (binary) outcome matches the prepared state.
pub fn filter_hard_flips(pairs: &[(IQPoint, Bit)], prepared: Prepared) -> Result<Vec<IQPoint>> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no calibration pairs".into()));
    }
    let kept: Vec<IQPoint> = pairs
        .iter()
        .filter(|(_, second)| *second == prepared.bit())
        .map(|(mu, _)| *mu)
        .collect();
    if kept.is_empty() {
        return Err(Error::InsufficientData(format!(
            "every calibration pair for prepared {} shows a hard flip",
            prepared.bit()
        )));
    }
    Ok(kept)
}

/// Rounds `p` to `b` fractional bits. `b = 64` keeps the full double.
pub fn truncate_prob(p: f64, b: u32) -> Result<f64> {
    if !(1..=64).contains(&b) {
        return Err(Error::Domain(format!("truncation bits must be in 1..=64, got {b}")));
    }
    if b == 64 {
        return Ok(clamp_prob(p));
    }
    let scale = (2.0f64).powi(b as i32);
    Ok(clamp_prob((p * scale).round() / scale))
}

/// One row of calibration IQ data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IqCalibrationRow {
    pub qubit: usize,
    pub prepared: Prepared,
    pub first: IQPoint,
    pub second: Bit,
}

/// Reads whitespace-separated `qubit prepared i q second` rows; `#` starts a comment.
pub fn read_calibration_iq<R: BufRead>(reader: R) -> Result<Vec<IqCalibrationRow>> {
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = k + 1;
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(Error::parse(line_no, format!("expected 5 columns, got {}", cols.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::parse(line_no, format!("bad {what} '{s}'")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(line_no, format!("non-finite {what}")))
            }
        };
        let bit = |s: &str, what: &str| -> Result<Bit> {
            match s {
                "0" => Ok(0),
                "1" => Ok(1),
                _ => Err(Error::parse(line_no, format!("{what} must be 0 or 1, got '{s}'"))),
            }
        };
        rows.push(IqCalibrationRow {
            qubit: cols[0]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad qubit id '{}'", cols[0])))?,
            prepared: Prepared::from_bit(bit(cols[1], "prepared state")?),
            first: IQPoint::new(num(cols[2], "I")?, num(cols[3], "Q")?),
            second: bit(cols[4], "second outcome")?,
        });
    }
    Ok(rows)
}

/// Fits one KDE per prepared state from hard-flip-filtered calibration rows.
/// `qubit = None` pools every qubit.
pub fn fit_readout_model(rows: &[IqCalibrationRow], qubit: Option<usize>) -> Result<ReadoutModel> {
    let fit = |prep: Prepared| -> Result<StateDensity> {
        let pairs: Vec<(IQPoint, Bit)> = rows
            .iter()
            .filter(|r| r.prepared == prep && qubit.is_none_or(|q| q == r.qubit))
            .map(|r| (r.first, r.second))
            .collect();
        fit_kde(&filter_hard_flips(&pairs, prep)?, DEFAULT_VALIDATION_FRACTION)
    };
    let f0 = fit(Prepared::Zero)?;
    let f1 = fit(Prepared::One)?;
    ReadoutModel::equal_priors(f0, f1)
}

const MODEL_MAGIC: &[u8; 8] = b"SOFTIQG1";
const MODEL_VERSION: u32 = 1;
/// Cells per axis when rasterizing Gaussian densities for the model file.
pub const EXPORT_CELLS: usize = 512;

/// Writes the model as rasterized grids: `f0`, `f1`, then the leakage density if any.
pub fn write_model<W: Write>(model: &ReadoutModel, mut w: W) -> Result<()> {
    let mut densities = vec![&model.f0, &model.f1];
    if let Some(l) = &model.leakage {
        densities.push(&l.density);
    }
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(MODEL_VERSION)?;
    w.write_u32::<LittleEndian>(densities.len() as u32)?;
    w.write_f64::<LittleEndian>(model.priors.0)?;
    w.write_f64::<LittleEndian>(model.priors.1)?;
    w.write_f64::<LittleEndian>(model.outlier_fraction().unwrap_or(0.0))?;
    for d in densities {
        let grid = match d {
            StateDensity::Grid(g) => g.clone(),
            StateDensity::Kde(k) => k.grid().clone(),
            StateDensity::Gaussian(_) => d.to_grid(d.support(), EXPORT_CELLS, EXPORT_CELLS)?,
        };
        let e = grid.extent;
        for v in [e.i_min, e.i_max, e.q_min, e.q_max] {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u32::<LittleEndian>(grid.nx as u32)?;
        w.write_u32::<LittleEndian>(grid.ny as u32)?;
        for v in &grid.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<ReadoutModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::parse(0, "not a readout model file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MODEL_VERSION {
        return Err(Error::parse(0, format!("unsupported model version {version}")));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    if !(n == 2 || n == 3) {
        return Err(Error::parse(0, format!("expected 2 or 3 densities, got {n}")));
    }
    let priors = (r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?);
    let outlier_fraction = r.read_f64::<LittleEndian>()?;
    let mut densities = Vec::with_capacity(n);
    for _ in 0..n {
        let extent = Extent {
            i_min: r.read_f64::<LittleEndian>()?,
            i_max: r.read_f64::<LittleEndian>()?,
            q_min: r.read_f64::<LittleEndian>()?,
            q_max: r.read_f64::<LittleEndian>()?,
        };
        let nx = r.read_u32::<LittleEndian>()? as usize;
        let ny = r.read_u32::<LittleEndian>()? as usize;
        if nx.saturating_mul(ny) > 1 << 26 {
            return Err(Error::parse(0, format!("grid of {nx}x{ny} cells is too large")));
        }
        let mut values = vec![0.0; nx * ny];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        densities.push(StateDensity::Grid(GridDensity::new(extent, nx, ny, values)?));
    }
    let leakage = if n == 3 {
        Some(LeakageModel {
            density: densities.pop().expect("three densities"),
            outlier_fraction,
        })
    } else {
        None
    };
    let f1 = densities.pop().expect("two densities");
    let f0 = densities.pop().expect("two densities");
    ReadoutModel::new(f0, f1, priors, leakage)
}
