//! Epanechnikov kernel density estimate over the IQ plane.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::density::{Extent, GridDensity, IQPoint, StateDensity};
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 100;
pub const BANDWIDTH_GRID_LEN: usize = 20;
pub const BANDWIDTH_MIN: f64 = 0.05;
pub const BANDWIDTH_MAX: f64 = 5.0;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

const SPLIT_SEED: u64 = 0x6b64_655f_7370_6c74;
// lookup cells per bandwidth along each axis
const CELLS_PER_BANDWIDTH: f64 = 16.0;
const MAX_CELLS_PER_AXIS: usize = 1024;

#[inline]
fn kernel(u2: f64) -> f64 {
    if u2 < 1.0 {
        (2.0 / PI) * (1.0 - u2)
    } else {
        0.0
    }
}

/// Samples bucketed on a regular grid of one bandwidth per cell.
#[derive(Clone, Debug)]
struct Bins {
    i0: f64,
    q0: f64,
    hi: f64,
    hq: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    points: Vec<IQPoint>,
}

impl Bins {
    fn build(samples: &[IQPoint], hi: f64, hq: f64) -> Self {
        let (mut i0, mut i1, mut q0, mut q1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in samples {
            i0 = i0.min(p.i);
            i1 = i1.max(p.i);
            q0 = q0.min(p.q);
            q1 = q1.max(p.q);
        }
        let nx = (((i1 - i0) / hi) as usize + 1).min(4096);
        let ny = (((q1 - q0) / hq) as usize + 1).min(4096);
        let cell_of = |p: &IQPoint| {
            let ix = (((p.i - i0) / hi) as usize).min(nx - 1);
            let iy = (((p.q - q0) / hq) as usize).min(ny - 1);
            iy * nx + ix
        };
        let mut counts = vec![0usize; nx * ny + 1];
        for p in samples {
            counts[cell_of(p) + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut points = vec![IQPoint::new(0.0, 0.0); samples.len()];
        for p in samples {
            let c = cell_of(p);
            points[fill[c]] = *p;
            fill[c] += 1;
        }
        Self {
            i0,
            q0,
            hi,
            hq,
            nx,
            ny,
            starts: counts,
            points,
        }
    }

    /// Unnormalized kernel sum at `p`.
    fn kernel_sum(&self, p: IQPoint) -> f64 {
        let fx = (p.i - self.i0) / self.hi;
        let fy = (p.q - self.q0) / self.hq;
        if fx < -1.0 || fy < -1.0 || fx > self.nx as f64 + 1.0 || fy > self.ny as f64 + 1.0 {
            return 0.0;
        }
        let cx = fx.floor() as i64;
        let cy = fy.floor() as i64;
        let mut sum = 0.0;
        for iy in (cy - 1).max(0)..=(cy + 1).min(self.ny as i64 - 1) {
            for ix in (cx - 1).max(0)..=(cx + 1).min(self.nx as i64 - 1) {
                let c = iy as usize * self.nx + ix as usize;
                for s in &self.points[self.starts[c]..self.starts[c + 1]] {
                    let ui = (p.i - s.i) / self.hi;
                    let uq = (p.q - s.q) / self.hq;
                    sum += kernel(ui * ui + uq * uq);
                }
            }
        }
        sum
    }
}

/// Fitted kernel density estimate with a precomputed lookup grid.
#[derive(Clone, Debug)]
pub struct Kde {
    samples: Vec<IQPoint>,
    /// Bandwidth as a multiple of the per-axis sample standard deviation.
    pub bandwidth: f64,
    pub h_i: f64,
    pub h_q: f64,
    bins: Bins,
    grid: GridDensity,
}

impl Kde {
    /// Builds a KDE with a fixed bandwidth multiplier.
    pub fn with_bandwidth(samples: Vec<IQPoint>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let (si, sq) = check_samples(&samples)?;
        let h_i = bandwidth * si;
        let h_q = bandwidth * sq;
        let bins = Bins::build(&samples, h_i, h_q);
        let grid = splat_grid(&samples, h_i, h_q)?;
        Ok(Self {
            samples,
            bandwidth,
            h_i,
            h_q,
            bins,
            grid,
        })
    }

    pub fn samples(&self) -> &[IQPoint] {
        &self.samples
    }

    pub fn grid(&self) -> &GridDensity {
        &self.grid
    }

    /// Exact kernel sum, without the floor.
    pub fn evaluate(&self, p: IQPoint) -> f64 {
        self.bins.kernel_sum(p) / (self.samples.len() as f64 * self.h_i * self.h_q)
    }

    /// Grid lookup, floored.
    #[inline]
    pub fn density(&self, p: IQPoint) -> f64 {
        self.grid.density(p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> IQPoint {
        let s = self.samples[rng.random_range(0..self.samples.len())];
        // radial CDF of the 2D Epanechnikov kernel is 1 - (1 - r^2)^2
        let u: f64 = rng.random();
        let r = (1.0 - (1.0 - u).sqrt()).sqrt();
        let theta = 2.0 * PI * rng.random::<f64>();
        IQPoint::new(s.i + self.h_i * r * theta.cos(), s.q + self.h_q * r * theta.sin())
    }
}

fn check_samples(samples: &[IQPoint]) -> Result<(f64, f64)> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "kde needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("non-finite IQ sample".into()));
    }
    let n = samples.len() as f64;
    let mi = samples.iter().map(|p| p.i).sum::<f64>() / n;
    let mq = samples.iter().map(|p| p.q).sum::<f64>() / n;
    let vi = samples.iter().map(|p| (p.i - mi).powi(2)).sum::<f64>() / (n - 1.0);
    let vq = samples.iter().map(|p| (p.q - mq).powi(2)).sum::<f64>() / (n - 1.0);
    let (si, sq) = (vi.sqrt(), vq.sqrt());
    let scale = mi.abs().max(mq.abs()).max(1.0);
    if si <= 1e-12 * scale || sq <= 1e-12 * scale {
        return Err(Error::DegenerateData("IQ samples have zero variance along an axis".into()));
    }
    Ok((si, sq))
}

/// Cell-centre kernel sums accumulated sample by sample, then normalized to unit mass.
fn splat_grid(samples: &[IQPoint], h_i: f64, h_q: f64) -> Result<GridDensity> {
    let (mut i0, mut i1, mut q0, mut q1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in samples {
        i0 = i0.min(p.i);
        i1 = i1.max(p.i);
        q0 = q0.min(p.q);
        q1 = q1.max(p.q);
    }
    let extent = Extent {
        i_min: i0 - h_i,
        i_max: i1 + h_i,
        q_min: q0 - h_q,
        q_max: q1 + h_q,
    };
    let axis_cells = |span: f64, h: f64| ((span / h * CELLS_PER_BANDWIDTH).ceil() as usize).clamp(16, MAX_CELLS_PER_AXIS);
    let nx = axis_cells(extent.i_max - extent.i_min, h_i);
    let ny = axis_cells(extent.q_max - extent.q_min, h_q);
    let dx = (extent.i_max - extent.i_min) / nx as f64;
    let dy = (extent.q_max - extent.q_min) / ny as f64;
    let mut values = vec![0.0; nx * ny];
    for s in samples {
        let ix0 = (((s.i - h_i - extent.i_min) / dx).floor().max(0.0)) as usize;
        let ix1 = (((s.i + h_i - extent.i_min) / dx).ceil() as usize).min(nx);
        let iy0 = (((s.q - h_q - extent.q_min) / dy).floor().max(0.0)) as usize;
        let iy1 = (((s.q + h_q - extent.q_min) / dy).ceil() as usize).min(ny);
        for iy in iy0..iy1 {
            let uq = (extent.q_min + (iy as f64 + 0.5) * dy - s.q) / h_q;
            let row = &mut values[iy * nx..(iy + 1) * nx];
            for (ix, v) in row.iter_mut().enumerate().take(ix1).skip(ix0) {
                let ui = (extent.i_min + (ix as f64 + 0.5) * dx - s.i) / h_i;
                *v += kernel(ui * ui + uq * uq);
            }
        }
    }
    let total: f64 = values.iter().sum::<f64>() * dx * dy;
    if total <= 0.0 {
        return Err(Error::DegenerateData("bandwidth smaller than the lookup grid resolution".into()));
    }
    for v in &mut values {
        *v /= total;
    }
    GridDensity::new(extent, nx, ny, values)
}

/// Bandwidth multipliers searched by [`fit_kde`].
pub fn bandwidth_grid() -> Vec<f64> {
    let (lo, hi) = (BANDWIDTH_MIN.ln(), BANDWIDTH_MAX.ln());
    (0..BANDWIDTH_GRID_LEN)
        .map(|k| (lo + (hi - lo) * k as f64 / (BANDWIDTH_GRID_LEN - 1) as f64).exp())
        .collect()
}

/// Fits a KDE, choosing the bandwidth that maximizes held-out log-likelihood
/// on a single deterministic train/validation split, then refitting on all samples.
pub fn fit_kde(samples: &[IQPoint], validation_fraction: f64) -> Result<StateDensity> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "validation fraction must be in (0, 1), got {validation_fraction}"
        )));
    }
    let (si, sq) = check_samples(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(SPLIT_SEED));
    let n_val = ((samples.len() as f64 * validation_fraction).round() as usize).clamp(1, samples.len() - 1);
    let validation: Vec<IQPoint> = order[..n_val].iter().map(|&k| samples[k]).collect();
    let train: Vec<IQPoint> = order[n_val..].iter().map(|&k| samples[k]).collect();

    let mut best = (f64::NEG_INFINITY, BANDWIDTH_MIN);
    for h in bandwidth_grid() {
        let (hi, hq) = (h * si, h * sq);
        let bins = Bins::build(&train, hi, hq);
        let norm = 1.0 / (train.len() as f64 * hi * hq);
        // a single kernel's peak bounds the density from above
        let floor = super::FLOOR_RELATIVE * (2.0 / PI) / (hi * hq);
        let ll: f64 = validation
            .iter()
            .map(|p| (bins.kernel_sum(*p) * norm).max(floor).ln())
            .sum();
        if ll > best.0 {
            best = (ll, h);
        }
    }
    Ok(StateDensity::Kde(Kde::with_bandwidth(samples.to_vec(), best.1)?))
}
