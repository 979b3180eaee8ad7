use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::kde::Kde;
use crate::error::{Error, Result};

/// A point in the IQ plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IQPoint {
    pub i: f64,
    pub q: f64,
}

impl IQPoint {
    pub const fn new(i: f64, q: f64) -> Self {
        Self { i, q }
    }

    pub fn is_finite(&self) -> bool {
        self.i.is_finite() && self.q.is_finite()
    }

    pub fn midpoint(a: IQPoint, b: IQPoint) -> IQPoint {
        IQPoint::new(0.5 * (a.i + b.i), 0.5 * (a.q + b.q))
    }
}

/// Symmetric 2x2 covariance `[[ii, iq], [iq, qq]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub ii: f64,
    pub iq: f64,
    pub qq: f64,
}

impl Covariance {
    pub fn isotropic(sigma: f64) -> Self {
        Self {
            ii: sigma * sigma,
            iq: 0.0,
            qq: sigma * sigma,
        }
    }

    pub fn det(&self) -> f64 {
        self.ii * self.qq - self.iq * self.iq
    }

    pub fn is_spd(&self) -> bool {
        self.ii > 0.0 && self.qq > 0.0 && self.det() > 0.0 && self.det().is_finite()
    }
}

/// Axis-aligned rectangle `[i_min, i_max] x [q_min, q_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub i_min: f64,
    pub i_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl Extent {
    pub fn union(&self, other: &Extent) -> Extent {
        Extent {
            i_min: self.i_min.min(other.i_min),
            i_max: self.i_max.max(other.i_max),
            q_min: self.q_min.min(other.q_min),
            q_max: self.q_max.max(other.q_max),
        }
    }

    pub fn contains(&self, p: IQPoint) -> bool {
        p.i >= self.i_min && p.i <= self.i_max && p.q >= self.q_min && p.q <= self.q_max
    }
}

/// Bivariate normal density.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: IQPoint,
    pub cov: Covariance,
    inv: Covariance,
    log_norm: f64,
    // lower Cholesky factor
    l11: f64,
    l21: f64,
    l22: f64,
}

impl Gaussian {
    pub fn new(mean: IQPoint, cov: Covariance) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::Domain("gaussian mean must be finite".into()));
        }
        if !cov.is_spd() {
            return Err(Error::Domain("covariance must be symmetric positive definite".into()));
        }
        let det = cov.det();
        let inv = Covariance {
            ii: cov.qq / det,
            iq: -cov.iq / det,
            qq: cov.ii / det,
        };
        let l11 = cov.ii.sqrt();
        let l21 = cov.iq / l11;
        let l22 = (cov.qq - l21 * l21).sqrt();
        Ok(Self {
            mean,
            cov,
            inv,
            log_norm: -(2.0 * PI).ln() - 0.5 * det.ln(),
            l11,
            l21,
            l22,
        })
    }

    /// Squared Mahalanobis distance from the mean.
    #[inline]
    pub fn mahalanobis2(&self, p: IQPoint) -> f64 {
        let di = p.i - self.mean.i;
        let dq = p.q - self.mean.q;
        self.inv.ii * di * di + 2.0 * self.inv.iq * di * dq + self.inv.qq * dq * dq
    }

    #[inline]
    pub fn log_density(&self, p: IQPoint) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis2(p)
    }

    pub fn peak(&self) -> f64 {
        self.log_norm.exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> IQPoint {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        IQPoint::new(
            self.mean.i + self.l11 * z1,
            self.mean.q + self.l21 * z1 + self.l22 * z2,
        )
    }

    fn extent(&self, sigmas: f64) -> Extent {
        let si = self.cov.ii.sqrt() * sigmas;
        let sq = self.cov.qq.sqrt() * sigmas;
        Extent {
            i_min: self.mean.i - si,
            i_max: self.mean.i + si,
            q_min: self.mean.q - sq,
            q_max: self.mean.q + sq,
        }
    }
}

/// Piecewise-constant density on a regular grid of cells; row-major with
/// rows along Q. Outside the grid the density is `floor`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    pub extent: Extent,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub floor: f64,
    cumulative: Vec<f64>,
}

impl GridDensity {
    pub fn new(extent: Extent, nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || values.len() != nx * ny {
            return Err(Error::Dimension(format!(
                "grid of {nx}x{ny} cells needs {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        if !(extent.i_max > extent.i_min && extent.q_max > extent.q_min) {
            return Err(Error::Domain("grid extent is empty".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("grid densities must be finite and non-negative".into()));
        }
        let peak = values.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::DegenerateData("grid density is identically zero".into()));
        }
        let mut cumulative = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        for v in &values {
            acc += v;
            cumulative.push(acc);
        }
        Ok(Self {
            extent,
            nx,
            ny,
            floor: super::FLOOR_RELATIVE * peak,
            values,
            cumulative,
        })
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            (self.extent.i_max - self.extent.i_min) / self.nx as f64,
            (self.extent.q_max - self.extent.q_min) / self.ny as f64,
        )
    }

    /// Raw cell value, `None` outside the grid.
    #[inline]
    pub fn lookup(&self, p: IQPoint) -> Option<f64> {
        if !self.extent.contains(p) {
            return None;
        }
        let (dx, dy) = self.cell_size();
        let ix = (((p.i - self.extent.i_min) / dx) as usize).min(self.nx - 1);
        let iy = (((p.q - self.extent.q_min) / dy) as usize).min(self.ny - 1);
        Some(self.values[iy * self.nx + ix])
    }

    #[inline]
    pub fn density(&self, p: IQPoint) -> f64 {
        self.lookup(p).unwrap_or(0.0).max(self.floor)
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Total mass on the grid, before flooring.
    pub fn mass(&self) -> f64 {
        let (dx, dy) = self.cell_size();
        self.cumulative.last().copied().unwrap_or(0.0) * dx * dy
    }

    /// Density level whose super-level set carries `mass` of the grid mass.
    pub fn hdr_level(&self, mass: f64) -> f64 {
        let mut sorted = self.values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sorted.iter().sum();
        let target = mass * total;
        let mut acc = 0.0;
        for v in &sorted {
            acc += v;
            if acc >= target {
                return *v;
            }
        }
        0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> IQPoint {
        let total = *self.cumulative.last().expect("non-empty grid");
        let u: f64 = rng.random::<f64>() * total;
        let cell = self.cumulative.partition_point(|&c| c <= u).min(self.values.len() - 1);
        let (dx, dy) = self.cell_size();
        let ix = cell % self.nx;
        let iy = cell / self.nx;
        IQPoint::new(
            self.extent.i_min + (ix as f64 + rng.random::<f64>()) * dx,
            self.extent.q_min + (iy as f64 + rng.random::<f64>()) * dy,
        )
    }
}

/// Conditional density `f(mu | state)` over the IQ plane.
#[derive(Clone, Debug)]
pub enum StateDensity {
    Gaussian(Gaussian),
    Kde(Kde),
    Grid(GridDensity),
}

impl StateDensity {
    pub fn gaussian(mean: IQPoint, cov: Covariance) -> Result<Self> {
        Ok(StateDensity::Gaussian(Gaussian::new(mean, cov)?))
    }

    #[inline]
    pub fn density(&self, p: IQPoint) -> f64 {
        match self {
            StateDensity::Gaussian(g) => g.log_density(p).exp(),
            StateDensity::Kde(k) => k.density(p),
            StateDensity::Grid(g) => g.density(p),
        }
    }

    #[inline]
    pub fn log_density(&self, p: IQPoint) -> f64 {
        match self {
            StateDensity::Gaussian(g) => g.log_density(p),
            _ => self.density(p).ln(),
        }
    }

    pub fn peak(&self) -> f64 {
        match self {
            StateDensity::Gaussian(g) => g.peak(),
            StateDensity::Kde(k) => k.grid().peak(),
            StateDensity::Grid(g) => g.peak(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> IQPoint {
        match self {
            StateDensity::Gaussian(g) => g.sample(rng),
            StateDensity::Kde(k) => k.sample(rng),
            StateDensity::Grid(g) => g.sample(rng),
        }
    }

    /// Log of the density level enclosing `1 - fraction` of the mass.
    pub fn log_hdr_level(&self, fraction: f64) -> f64 {
        match self {
            // for a bivariate normal the level at mass 1 - a is a * peak
            StateDensity::Gaussian(g) => g.log_norm + fraction.ln(),
            StateDensity::Kde(k) => k.grid().hdr_level(1.0 - fraction).ln(),
            StateDensity::Grid(g) => g.hdr_level(1.0 - fraction).ln(),
        }
    }

    /// A rectangle that holds essentially all of the mass.
    pub fn support(&self) -> Extent {
        match self {
            StateDensity::Gaussian(g) => g.extent(8.5),
            StateDensity::Kde(k) => k.grid().extent,
            StateDensity::Grid(g) => g.extent,
        }
    }

    /// Rasterizes the density onto a grid (cell-centre values).
    pub fn to_grid(&self, extent: Extent, nx: usize, ny: usize) -> Result<GridDensity> {
        if let StateDensity::Kde(k) = self {
            if k.grid().extent == extent && k.grid().nx == nx && k.grid().ny == ny {
                return Ok(k.grid().clone());
            }
        }
        let dx = (extent.i_max - extent.i_min) / nx as f64;
        let dy = (extent.q_max - extent.q_min) / ny as f64;
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let p = IQPoint::new(extent.i_min + (ix as f64 + 0.5) * dx, extent.q_min + (iy as f64 + 0.5) * dy);
                values.push(match self {
                    StateDensity::Kde(k) => k.evaluate(p),
                    StateDensity::Grid(g) => g.lookup(p).unwrap_or(0.0),
                    StateDensity::Gaussian(_) => self.density(p),
                });
            }
        }
        GridDensity::new(extent, nx, ny, values)
    }
}
