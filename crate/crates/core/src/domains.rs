//! State spaces: an axis-aligned box with reflecting walls, and the unit sphere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vectorfields::Point;

/// Tolerance for sphere membership, `|‖x‖ − 1| ≤ SPHERE_TOLERANCE`.
pub const SPHERE_TOLERANCE: f64 = 1e-9;

/// `[lo₁,hi₁] × … × [lo_d,hi_d]` for `d ≤ 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 3 {
            return Err(Error::usage("box bounds must have equal length between 1 and 3"));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::usage("box bounds must be finite"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(Error::usage("box bounds need lo < hi on every axis"));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim()).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
    }

    /// Folds `x` back into the box by mirror reflection on each axis.
    ///
    /// Equivalent to repeated specular reflection off the walls: each axis is
    /// mapped through the period-`2w` triangle wave, so any number of crossings
    /// is handled in one pass.
    pub fn reflect(&self, x: &Point) -> Result<Point> {
        if (0..self.dim()).any(|i| !x[i].is_finite()) {
            return Err(Error::usage("cannot reflect a non-finite point"));
        }
        let mut out = *x;
        for i in 0..self.dim() {
            out[i] = fold(x[i], self.lo[i], self.hi[i]);
        }
        Ok(out)
    }
}

#[inline]
fn fold(v: f64, lo: f64, hi: f64) -> f64 {
    if v >= lo && v <= hi {
        return v;
    }
    let w = hi - lo;
    let r = (v - lo).rem_euclid(2.0 * w);
    let folded = if r <= w { lo + r } else { lo + (2.0 * w - r) };
    folded.clamp(lo, hi)
}

/// The unit sphere `S² ⊂ ℝ³`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereDomain;

impl SphereDomain {
    pub fn contains(&self, x: &Point) -> bool {
        (x.norm() - 1.0).abs() <= SPHERE_TOLERANCE
    }

    /// `x / ‖x‖`.
    pub fn retract(&self, x: &Point) -> Result<Point> {
        let n = x.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numerical(format!("cannot retract a point of norm {n}")));
        }
        Ok(x / n)
    }

    /// Great-circle distance `arccos(x·y)` in radians.
    pub fn geodesic_distance(&self, x: &Point, y: &Point) -> f64 {
        x.dot(y).clamp(-1.0, 1.0).acos()
    }

    /// Surface area `4π`.
    pub fn area(&self) -> f64 {
        4.0 * std::f64::consts::PI
    }
}

/// The state space of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Box(BoxDomain),
    Sphere(SphereDomain),
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Box(b) => b.dim(),
            Domain::Sphere(_) => 3,
        }
    }

    /// Lebesgue volume of the box or area of the sphere.
    pub fn measure(&self) -> f64 {
        match self {
            Domain::Box(b) => b.volume(),
            Domain::Sphere(s) => s.area(),
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        match self {
            Domain::Box(b) => b.contains(x),
            Domain::Sphere(s) => s.contains(x),
        }
    }

    /// Projects a post-step point back onto the domain: reflection for the
    /// box, retraction for the sphere.
    pub fn confine(&self, x: &Point) -> Result<Point> {
        match self {
            Domain::Box(b) => b.reflect(x),
            Domain::Sphere(s) => {
                if !x.iter().all(|c| c.is_finite()) {
                    return Err(Error::usage("cannot retract a non-finite point"));
                }
                s.retract(x)
            }
        }
    }
}
