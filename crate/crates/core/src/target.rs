//! Target probability densities `y^d` on a [`Domain`].
//!
//! Every constructor normalizes analytically where it can and then checks the
//! normalization by an independent quadrature over the domain (quasi-Monte Carlo
//! on 2D/3D boxes, midpoint rules on intervals and equal-area sphere cells).

use std::fmt;
use std::sync::Arc;

use crate::domains::{BoxDomain, Domain, SphereDomain};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::vectorfields::Point;

/// Allowed deviation of the quadrature mass from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-3;

type DensityFn = dyn Fn(&Point) -> f64 + Send + Sync;

/// A normalized, non-negative density on a domain.
#[derive(Clone)]
pub struct TargetDensity {
    name: String,
    domain: Domain,
    eval: Arc<DensityFn>,
    support: String,
    peak: f64,
}

impl fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDensity")
            .field("name", &self.name)
            .field("support", &self.support)
            .field("peak", &self.peak)
            .finish()
    }
}

impl TargetDensity {
    /// Wraps an already-normalized density and checks its mass by quadrature.
    pub fn new(
        name: impl Into<String>,
        domain: Domain,
        support: impl Into<String>,
        peak: f64,
        eval: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let target = Self {
            name: name.into(),
            domain,
            eval: Arc::new(eval),
            support: support.into(),
            peak,
        };
        let mass = target.quadrature_mass();
        if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::config(format!(
                "target `{}` integrates to {mass}, not 1",
                target.name
            )));
        }
        Ok(target)
    }

    /// Normalizes an arbitrary non-negative function by quadrature.
    pub fn from_unnormalized(
        name: impl Into<String>,
        domain: Domain,
        support: impl Into<String>,
        f: impl Fn(&Point) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let probe = Self {
            name: String::new(),
            domain: domain.clone(),
            eval: Arc::new(f),
            support: String::new(),
            peak: 0.0,
        };
        let mass = probe.quadrature_mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::config("target density has no positive mass"));
        }
        let f = probe.eval;
        let peak = max_sample(&domain, &*f) / mass;
        Self::new(name, domain, support, peak, move |x| f(x) / mass)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn support(&self) -> &str {
        &self.support
    }

    /// Supremum of the density (exact for the built-in piecewise constants).
    pub fn peak(&self) -> f64 {
        self.peak
    }

    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        (self.eval)(x)
    }

    /// Quadrature mass over the domain.
    pub fn quadrature_mass(&self) -> f64 {
        integrate_over(&self.domain, &*self.eval)
    }

    /// Uniform density `1/|Ω|`.
    pub fn uniform(domain: Domain) -> Result<Self> {
        let v = 1.0 / domain.measure();
        Self::new("uniform", domain, "whole domain", v, move |_| v)
    }

    /// `c(Σ 1_{B(cᵢ, r)} + floor)` for disjoint balls contained in the box.
    pub fn balls(bounds: BoxDomain, centers: Vec<Point>, radius: f64, floor: f64) -> Result<Self> {
        let dim = bounds.dim();
        if radius <= 0.0 || floor < 0.0 {
            return Err(Error::usage("ball radius must be positive and floor non-negative"));
        }
        for (i, c) in centers.iter().enumerate() {
            for a in 0..dim {
                if c[a] - radius < bounds.lo()[a] || c[a] + radius > bounds.hi()[a] {
                    return Err(Error::usage(format!("ball {i} is not contained in the box")));
                }
            }
            for d in &centers[..i] {
                if (c - d).norm() < 2.0 * radius {
                    return Err(Error::usage("balls must be disjoint"));
                }
            }
        }
        let ball_volume = unit_ball_volume(dim) * radius.powi(dim as i32);
        let c = 1.0 / (centers.len() as f64 * ball_volume + floor * bounds.volume());
        let r2 = radius * radius;
        let name = if floor > 0.0 { "balls+floor" } else { "balls" };
        let support = format!("{} balls of radius {radius}", centers.len());
        Self::new(name, Domain::Box(bounds), support, c * (1.0 + floor), move |x| {
            let inside = centers.iter().any(|ctr| (x - ctr).norm_squared() < r2);
            c * (if inside { 1.0 } else { 0.0 } + floor)
        })
    }

    /// Eight balls of radius 12.5 centred at `{25, 75}³` in `[0,100]³`, plus `floor`.
    pub fn balls8(floor: f64) -> Result<Self> {
        let bounds = BoxDomain::cube(3, 0.0, 100.0)?;
        let mut centers = Vec::with_capacity(8);
        for &a in &[25.0, 75.0] {
            for &b in &[25.0, 75.0] {
                for &c in &[25.0, 75.0] {
                    centers.push(Point::new(a, b, c));
                }
            }
        }
        Self::balls(bounds, centers, 12.5, floor)
    }

    /// Constant on the six polar caps `{x : xᵢ² ≥ threshold}` of S², zero elsewhere.
    pub fn sphere_caps(threshold: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&threshold) {
            return Err(Error::usage("cap threshold must lie in [0.5, 1) so the caps are disjoint"));
        }
        let cap_area = 2.0 * std::f64::consts::PI * (1.0 - threshold.sqrt());
        let c = 1.0 / (6.0 * cap_area);
        Self::new(
            "sphere-caps",
            Domain::Sphere(SphereDomain),
            format!("six caps x_i^2 >= {threshold}"),
            c,
            move |x| {
                if x.iter().any(|v| v * v >= threshold) {
                    c
                } else {
                    0.0
                }
            },
        )
    }

    /// Constant on a union of disjoint intervals along the first axis.
    pub fn intervals(bounds: BoxDomain, intervals: Vec<(f64, f64)>) -> Result<Self> {
        let (lo, hi) = (bounds.lo()[0], bounds.hi()[0]);
        let mut len = 0.0;
        for &(a, b) in &intervals {
            if !(a < b) || a < lo || b > hi {
                return Err(Error::usage(format!("interval [{a}, {b}] is empty or outside the box")));
            }
            len += b - a;
        }
        let mut sorted = intervals.clone();
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        if sorted.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(Error::usage("intervals must not overlap"));
        }
        let cross: f64 = (1..bounds.dim()).map(|a| bounds.hi()[a] - bounds.lo()[a]).product();
        let c = 1.0 / (len * cross);
        Self::new(
            "intervals",
            Domain::Box(bounds),
            format!("{} intervals on axis 1", intervals.len()),
            c,
            move |x| {
                if intervals.iter().any(|&(a, b)| x[0] >= a && x[0] < b) {
                    c
                } else {
                    0.0
                }
            },
        )
    }

    /// `∝ 1 + amplitude·sin(2π(x₁ − lo)/L)` along the first axis (|amplitude| < 1).
    pub fn sine(bounds: BoxDomain, amplitude: f64) -> Result<Self> {
        if !(amplitude.abs() < 1.0) {
            return Err(Error::usage("sine amplitude must be below 1 in magnitude"));
        }
        let (lo, len) = (bounds.lo()[0], bounds.hi()[0] - bounds.lo()[0]);
        let c = 1.0 / bounds.volume();
        let two_pi = 2.0 * std::f64::consts::PI;
        Self::new("sine", Domain::Box(bounds), "whole domain", c * (1.0 + amplitude.abs()), move |x| {
            c * (1.0 + amplitude * (two_pi * (x[0] - lo) / len).sin())
        })
    }

    /// Piecewise-constant density given by cell values on `grid`.
    pub fn from_grid(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::usage(format!(
                "grid target has {} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::usage("grid target values must be finite and non-negative"));
        }
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if !(mass > 0.0) {
            return Err(Error::usage("grid target has zero mass"));
        }
        let values: Vec<f64> = values.iter().map(|v| v / mass).collect();
        let peak = values.iter().copied().fold(0.0, f64::max);
        let g = grid.clone();
        Self::new("grid", Domain::Box(grid.bounds()), "grid cells", peak, move |x| {
            values[g.nearest_cell(x)]
        })
    }

    /// Cell averages of the density on `grid` (midpoint rule with `sub` subcells per axis).
    pub fn cell_averages(&self, grid: &Grid, sub: usize) -> Vec<f64> {
        (0..grid.len())
            .map(|i| grid.cell_average(i, sub, &|p| self.eval(p)))
            .collect()
    }
}

fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        _ => unreachable!("dimensions above 3 are rejected by BoxDomain"),
    }
}

/// Points per axis for box quadrature, keeping total work near 2·10⁶ samples.
fn samples_per_axis(dim: usize) -> usize {
    match dim {
        1 => 200_000,
        2 => 1_400,
        _ => 128,
    }
}

/// Equal-area sphere quadrature resolution: bands in z times sectors in azimuth.
const SPHERE_BANDS: usize = 1_000;
const SPHERE_SECTORS: usize = 1_000;

fn sphere_sample(band: usize, sector: usize) -> Point {
    let z = -1.0 + (band as f64 + 0.5) * 2.0 / SPHERE_BANDS as f64;
    let phi = (sector as f64 + 0.5) * 2.0 * std::f64::consts::PI / SPHERE_SECTORS as f64;
    let r = (1.0 - z * z).sqrt();
    Point::new(r * phi.cos(), r * phi.sin(), z)
}

/// Number of Kronecker-sequence samples for multi-dimensional box quadrature.
const BOX_QMC_SAMPLES: usize = 4_000_000;

/// Additive recurrence `frac(½ + n·α)` with `αᵢ = φ_d^{−i}` (φ_d the
/// generalized golden ratio). Unlike a tensor midpoint lattice it does not
/// resonate with axis-aligned or spherical discontinuities.
fn kronecker_point(n: usize, dim: usize) -> [f64; 3] {
    let phi = match dim {
        2 => 1.324_717_957_244_746,
        _ => 1.220_744_084_605_759_5,
    };
    let mut out = [0.0; 3];
    let mut alpha = 1.0;
    for o in out.iter_mut().take(dim) {
        alpha /= phi;
        *o = (0.5 + n as f64 * alpha).fract();
    }
    out
}

fn integrate_over(domain: &Domain, f: &DensityFn) -> f64 {
    match domain {
        Domain::Box(b) if b.dim() == 1 => {
            let n = samples_per_axis(1);
            let grid = Grid::uniform(b, n).expect("box validated");
            let sum: f64 = (0..grid.len()).map(|i| f(&grid.cell_center(i))).sum();
            sum * grid.cell_volume()
        }
        Domain::Box(b) => {
            let dim = b.dim();
            let mut sum = 0.0;
            for n in 0..BOX_QMC_SAMPLES {
                let u = kronecker_point(n, dim);
                let mut p = Point::zeros();
                for a in 0..dim {
                    p[a] = b.lo()[a] + u[a] * (b.hi()[a] - b.lo()[a]);
                }
                sum += f(&p);
            }
            sum * b.volume() / BOX_QMC_SAMPLES as f64
        }
        Domain::Sphere(s) => {
            // Archimedes: equal z-bands have equal area.
            let mut sum = 0.0;
            for band in 0..SPHERE_BANDS {
                for sector in 0..SPHERE_SECTORS {
                    sum += f(&sphere_sample(band, sector));
                }
            }
            sum * s.area() / (SPHERE_BANDS * SPHERE_SECTORS) as f64
        }
    }
}

fn max_sample(domain: &Domain, f: &DensityFn) -> f64 {
    match domain {
        Domain::Box(b) => {
            let grid = Grid::uniform(b, samples_per_axis(b.dim()).min(64)).expect("box validated");
            (0..grid.len()).map(|i| f(&grid.cell_center(i))).fold(0.0, f64::max)
        }
        Domain::Sphere(_) => {
            let mut m: f64 = 0.0;
            for band in (0..SPHERE_BANDS).step_by(10) {
                for sector in (0..SPHERE_SECTORS).step_by(10) {
                    m = m.max(f(&sphere_sample(band, sector)));
                }
            }
            m
        }
    }
}
