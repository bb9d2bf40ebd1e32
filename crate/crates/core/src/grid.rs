//! Uniform structured grids on boxes of dimension 1 to 3.

use serde::{Deserialize, Serialize};

use crate::domains::BoxDomain;
use crate::error::{Error, Result};
use crate::vectorfields::Point;

/// Cell-centred uniform grid. Linear cell index runs fastest along axis 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: &BoxDomain, cells: Vec<usize>) -> Result<Self> {
        if cells.len() != bounds.dim() {
            return Err(Error::usage(format!(
                "grid has {} axes but the box has {}",
                cells.len(),
                bounds.dim()
            )));
        }
        if cells.contains(&0) {
            return Err(Error::usage("every grid axis needs at least one cell"));
        }
        Ok(Self {
            lo: bounds.lo().to_vec(),
            hi: bounds.hi().to_vec(),
            cells,
        })
    }

    /// Same number of cells on every axis.
    pub fn uniform(bounds: &BoxDomain, per_axis: usize) -> Result<Self> {
        Self::new(bounds, vec![per_axis; bounds.dim()])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    pub fn bounds(&self) -> BoxDomain {
        BoxDomain::new(self.lo.clone(), self.hi.clone()).expect("grid bounds were validated")
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.cells)
            .rev()
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, mut linear: usize) -> Vec<usize> {
        self.cells
            .iter()
            .map(|&n| {
                let i = linear % n;
                linear /= n;
                i
            })
            .collect()
    }

    pub fn cell_center(&self, linear: usize) -> Point {
        let idx = self.multi_index(linear);
        let mut p = Point::zeros();
        for (a, &i) in idx.iter().enumerate() {
            p[a] = self.lo[a] + (i as f64 + 0.5) * self.width(a);
        }
        p
    }

    /// Cell containing `x`, or `None` when `x` lies outside the grid. Points
    /// exactly on the upper wall belong to the last cell.
    pub fn cell_of(&self, x: &Point) -> Option<usize> {
        let mut idx = [0usize; 3];
        for a in 0..self.dim() {
            if !(x[a] >= self.lo[a] && x[a] <= self.hi[a]) {
                return None;
            }
            let i = ((x[a] - self.lo[a]) / self.width(a)) as usize;
            idx[a] = i.min(self.cells[a] - 1);
        }
        Some(self.linear_index(&idx[..self.dim()]))
    }

    /// Like [`Grid::cell_of`] but clamps outside points to the nearest boundary cell.
    pub fn nearest_cell(&self, x: &Point) -> usize {
        let mut idx = [0usize; 3];
        for a in 0..self.dim() {
            let t = ((x[a] - self.lo[a]) / self.width(a)).floor();
            idx[a] = if t.is_nan() || t < 0.0 {
                0
            } else {
                (t as usize).min(self.cells[a] - 1)
            };
        }
        self.linear_index(&idx[..self.dim()])
    }

    /// Cell average of `f` by the midpoint rule on `sub^dim` subcells.
    pub fn cell_average(&self, linear: usize, sub: usize, f: &dyn Fn(&Point) -> f64) -> f64 {
        let idx = self.multi_index(linear);
        let dim = self.dim();
        let total = sub.pow(dim as u32);
        let mut acc = 0.0;
        for s in 0..total {
            let mut rem = s;
            let mut p = Point::zeros();
            for (a, &i) in idx.iter().enumerate() {
                let j = rem % sub;
                rem /= sub;
                let w = self.width(a);
                p[a] = self.lo[a] + i as f64 * w + (j as f64 + 0.5) * w / sub as f64;
            }
            acc += f(&p);
        }
        acc / total as f64
    }
}
