//! Finite-volume reference solvers on 1D/2D boxes.
//!
//! * Linear: `y_t = ∇·(b ∇(a y))` with zero flux on the walls. Its
//!   equilibrium is `f = 1/a`.
//! * Semilinear two-state system with diffusion `DΔ` of the moving
//!   density `y₁` and reaction exchange with the motionless density `y₂`:
//!   `(y₁)_t = DΔy₁ − F₁(y₂)y₁ + F₂(y₂)y₂`, `(y₂)_t = F₁(y₂)y₁ − F₂(y₂)y₂`,
//!   with `Fᵢ(y₂) = rᵢ(y₂ − y^d)`.
//!
//! Fluxes are computed once per interior face and added to one cell and
//! subtracted from the other, so total mass telescopes exactly.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::meanfield::ReactionFunctions;

/// Cell-averaged values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::usage(format!(
                "field has {} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("grid field values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![value; n],
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(usize) -> f64) -> Self {
        let values = (0..grid.len()).map(f).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `Σ values · cell volume`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn same_grid(&self, other: &GridField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// `∫|self − other|`.
    pub fn l1_distance(&self, other: &GridField) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::usage("L1 distance between fields on different grids"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume())
    }

    /// `(∫|self − other|²)^{1/2}`.
    pub fn l2_distance(&self, other: &GridField) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::usage("L2 distance between fields on different grids"));
        }
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((s * self.grid.cell_volume()).sqrt())
    }
}

/// Strictly positive coefficients `a`, `b` of the linear operator.
#[derive(Debug, Clone)]
pub struct CoefficientPair {
    pub a: GridField,
    pub b: GridField,
}

impl CoefficientPair {
    pub fn new(a: GridField, b: GridField) -> Result<Self> {
        if !a.same_grid(&b) {
            return Err(Error::usage("coefficients a and b live on different grids"));
        }
        if a.min() <= 0.0 || b.min() <= 0.0 {
            return Err(Error::usage("coefficients a and b must be strictly positive"));
        }
        Ok(Self { a, b })
    }

    /// `a = 1/f` for a positive density `f` (normalized here to unit mass).
    pub fn from_equilibrium(f: &GridField, b: GridField) -> Result<Self> {
        let mass = f.mass();
        if !(mass > 0.0) || f.min() <= 0.0 {
            return Err(Error::usage("equilibrium density must be strictly positive"));
        }
        let a = GridField::from_fn(f.grid.clone(), |i| mass / f.values[i]);
        Self::new(a, b)
    }

    /// The equilibrium `f = 1/a`, normalized to unit mass.
    pub fn equilibrium(&self) -> GridField {
        let mut f = GridField::from_fn(self.a.grid.clone(), |i| 1.0 / self.a.values[i]);
        let m = f.mass();
        f.values.iter_mut().for_each(|v| *v /= m);
        f
    }
}

/// Interior face between two cells along one axis.
#[derive(Debug, Clone, Copy)]
struct Face {
    left: usize,
    right: usize,
    /// `b_face / h²` along the face normal.
    conductance: f64,
}

fn build_faces(grid: &Grid, b: &[f64]) -> Vec<Face> {
    let mut faces = Vec::new();
    for cell in 0..grid.len() {
        let idx = grid.multi_index(cell);
        for axis in 0..grid.dim() {
            if idx[axis] + 1 < grid.cells()[axis] {
                let mut r = idx.clone();
                r[axis] += 1;
                let right = grid.linear_index(&r);
                let h = grid.width(axis);
                let b_face = 0.5 * (b[cell] + b[right]);
                faces.push(Face {
                    left: cell,
                    right,
                    conductance: b_face / (h * h),
                });
            }
        }
    }
    faces
}

/// Explicit conservative stepper for `y_t = ∇·(b∇(a y))`.
#[derive(Debug, Clone)]
pub struct LinearSolver {
    grid: Arc<Grid>,
    a: Vec<f64>,
    faces: Vec<Face>,
    stability_bound: f64,
    ay: Vec<f64>,
    delta: Vec<f64>,
    /// Rounding error of the `delta` sums.
    delta_err: Vec<f64>,
    /// Low-order bits of `y` lost in earlier updates (compensated summation).
    carry: Vec<f64>,
    /// `y` as left by the previous step; `carry` is dropped if the caller changed it.
    last: Vec<f64>,
}

/// Error-free transformation `a + b = s + e`.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl LinearSolver {
    pub fn new(coef: &CoefficientPair) -> Result<Self> {
        let grid = coef.a.grid.clone();
        if !(1..=2).contains(&grid.dim()) {
            return Err(Error::usage("the grid solvers support 1D and 2D boxes"));
        }
        let faces = build_faces(&grid, &coef.b.values);
        let a = coef.a.values.clone();
        // Positivity of the update: dt·Σ_faces conductance·a_cell ≤ 1 for every cell.
        let mut load = vec![0.0; grid.len()];
        for f in &faces {
            load[f.left] += f.conductance * a[f.left];
            load[f.right] += f.conductance * a[f.right];
        }
        let worst = load.iter().copied().fold(0.0, f64::max);
        let stability_bound = if worst > 0.0 { 1.0 / worst } else { f64::INFINITY };
        let n = grid.len();
        Ok(Self {
            grid,
            a,
            faces,
            stability_bound,
            ay: vec![0.0; n],
            delta: vec![0.0; n],
            delta_err: vec![0.0; n],
            carry: vec![0.0; n],
            last: Vec::new(),
        })
    }

    /// Largest admissible explicit step. For constant `b` this is
    /// `h²/(2·dim·max(a·b))` on a uniform grid.
    pub fn stability_bound(&self) -> f64 {
        self.stability_bound
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::usage("dt must be positive"));
        }
        if dt > self.stability_bound * (1.0 + 1e-12) {
            return Err(Error::usage(format!(
                "dt = {dt} exceeds the explicit stability bound {}",
                self.stability_bound
            )));
        }
        Ok(())
    }

    /// In-place step on raw cell values.
    ///
    /// Updates use compensated summation so the total mass does not random-walk
    /// over long runs. The compensation persists across calls while `y` is only
    /// modified by this solver.
    pub fn step_values(&mut self, y: &mut [f64], dt: f64) -> Result<()> {
        self.check_dt(dt)?;
        if y.len() != self.a.len() {
            return Err(Error::usage("cell count does not match the solver grid"));
        }
        if self.last.as_slice() != y {
            self.carry.iter_mut().for_each(|c| *c = 0.0);
        }
        for ((ay, a), v) in self.ay.iter_mut().zip(&self.a).zip(y.iter()) {
            *ay = a * v;
        }
        self.delta.iter_mut().for_each(|d| *d = 0.0);
        self.delta_err.iter_mut().for_each(|d| *d = 0.0);
        for f in &self.faces {
            let flux = dt * f.conductance * (self.ay[f.right] - self.ay[f.left]);
            let (s, e) = two_sum(self.delta[f.left], flux);
            self.delta[f.left] = s;
            self.delta_err[f.left] += e;
            let (s, e) = two_sum(self.delta[f.right], -flux);
            self.delta[f.right] = s;
            self.delta_err[f.right] += e;
        }
        for (((v, d), e), c) in y.iter_mut().zip(&self.delta).zip(&self.delta_err).zip(&mut self.carry) {
            let (s, lost) = two_sum(*v, d + (e + *c));
            *v = s;
            *c = lost;
        }
        self.last.clear();
        self.last.extend_from_slice(y);
        Ok(())
    }
}

/// One explicit step of the linear forward equation.
pub fn step_linear(y: &GridField, coef: &CoefficientPair, dt: f64) -> Result<GridField> {
    if !y.same_grid(&coef.a) {
        return Err(Error::usage("density and coefficients live on different grids"));
    }
    let mut solver = LinearSolver::new(coef)?;
    let mut out = y.clone();
    solver.step_values(&mut out.values, dt)?;
    Ok(out)
}

/// Exact solution of the per-cell two-state exchange over `tau` with rates
/// frozen at the start, limited so `y₂` never crosses `y^d` (the continuous
/// rates vanish there).
#[inline]
fn react_cell(y1: &mut f64, y2: &mut f64, target: f64, reactions: &ReactionFunctions, tau: f64) -> f64 {
    let (q1, q2) = reactions.transition_rates(*y2, target);
    let lambda = q1 + q2;
    if lambda == 0.0 {
        return 0.0;
    }
    let total = *y1 + *y2;
    let y2_eq = q1 * total / lambda;
    let mut y2_new = y2_eq + (*y2 - y2_eq) * (-lambda * tau).exp();
    if *y2 < target {
        y2_new = y2_new.min(target);
    } else if *y2 > target {
        y2_new = y2_new.max(target);
    }
    let delta = (y2_new - *y2).clamp(-*y2, *y1);
    *y1 -= delta;
    *y2 += delta;
    lambda
}

/// Strang-split stepper for the semilinear two-state system.
#[derive(Debug, Clone)]
pub struct SemilinearSolver {
    diffusion: LinearSolver,
    target: Vec<f64>,
    reactions: ReactionFunctions,
}

impl SemilinearSolver {
    /// `diffusivity` multiplies the Laplacian acting on `y₁`.
    pub fn new(target: &GridField, reactions: ReactionFunctions, diffusivity: f64) -> Result<Self> {
        if target.min() < 0.0 {
            return Err(Error::usage("target density must be non-negative"));
        }
        let g = target.grid.clone();
        let coef = CoefficientPair::new(GridField::constant(g.clone(), 1.0), GridField::constant(g, diffusivity))?;
        Ok(Self {
            diffusion: LinearSolver::new(&coef)?,
            target: target.values.clone(),
            reactions,
        })
    }

    pub fn stability_bound(&self) -> f64 {
        self.diffusion.stability_bound()
    }

    fn react(&self, y1: &mut [f64], y2: &mut [f64], tau: f64, dt: f64) -> Result<()> {
        let mut max_rate: f64 = 0.0;
        for ((a, b), t) in y1.iter_mut().zip(y2.iter_mut()).zip(&self.target) {
            max_rate = max_rate.max(react_cell(a, b, *t, &self.reactions, tau));
        }
        if dt * max_rate >= 1.0 {
            return Err(Error::usage(format!(
                "dt = {dt} violates the reaction bound dt·max(q) < 1 (max q = {max_rate})"
            )));
        }
        Ok(())
    }

    /// In-place Strang step: half reaction, full diffusion of `y₁`, half reaction.
    pub fn step_values(&mut self, y1: &mut [f64], y2: &mut [f64], dt: f64) -> Result<()> {
        if y1.iter().chain(y2.iter()).any(|v| *v < 0.0) {
            return Err(Error::usage("semilinear solver needs non-negative densities"));
        }
        self.react(y1, y2, 0.5 * dt, dt)?;
        self.diffusion.step_values(y1, dt)?;
        // Roundoff in the explicit stencil can leave −1e-18 where y₁ is zero.
        y1.iter_mut().for_each(|v| {
            if *v < 0.0 && *v > -1e-15 {
                *v = 0.0
            }
        });
        self.react(y1, y2, 0.5 * dt, dt)
    }
}

/// One Strang step of the semilinear system.
pub fn step_semilinear(
    y1: &GridField,
    y2: &GridField,
    target: &GridField,
    reactions: &ReactionFunctions,
    diffusivity: f64,
    dt: f64,
) -> Result<(GridField, GridField)> {
    if !y1.same_grid(y2) || !y1.same_grid(target) {
        return Err(Error::usage("semilinear fields live on different grids"));
    }
    let mut solver = SemilinearSolver::new(target, *reactions, diffusivity)?;
    let (mut a, mut b) = (y1.clone(), y2.clone());
    solver.step_values(&mut a.values, &mut b.values, dt)?;
    Ok((a, b))
}

/// A stored PDE state.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub time: f64,
    pub y1: GridField,
    /// Motionless density; zero for the linear model.
    pub y2: GridField,
}

/// Number of steps of size `dt` to reach `t_final` (rounded).
fn step_count(dt: f64, t_final: f64) -> Result<u64> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::usage("need dt > 0 and t_final ≥ 0"));
    }
    Ok((t_final / dt).round() as u64)
}

/// Integrates the linear equation, calling `observer` at `t = 0`, every
/// `snapshot_every` steps, and at the end.
pub fn run_linear(
    y0: &GridField,
    coef: &CoefficientPair,
    dt: f64,
    t_final: f64,
    snapshot_every: u64,
    mut observer: impl FnMut(&FieldSnapshot) -> Result<()>,
) -> Result<GridField> {
    let mut solver = LinearSolver::new(coef)?;
    solver.check_dt(dt)?;
    let n = step_count(dt, t_final)?;
    let every = snapshot_every.max(1);
    let zero = GridField::constant(y0.grid.clone(), 0.0);
    let mut y = y0.clone();
    observer(&FieldSnapshot {
        time: 0.0,
        y1: y.clone(),
        y2: zero.clone(),
    })?;
    for step in 1..=n {
        solver.step_values(&mut y.values, dt)?;
        if step % every == 0 || step == n {
            observer(&FieldSnapshot {
                time: step as f64 * dt,
                y1: y.clone(),
                y2: zero.clone(),
            })?;
        }
    }
    Ok(y)
}

/// Integrates the semilinear system; same snapshot cadence as [`run_linear`].
#[allow(clippy::too_many_arguments)]
pub fn run_semilinear(
    y1_0: &GridField,
    y2_0: &GridField,
    target: &GridField,
    reactions: &ReactionFunctions,
    diffusivity: f64,
    dt: f64,
    t_final: f64,
    snapshot_every: u64,
    mut observer: impl FnMut(&FieldSnapshot) -> Result<()>,
) -> Result<(GridField, GridField)> {
    if !y1_0.same_grid(y2_0) || !y1_0.same_grid(target) {
        return Err(Error::usage("semilinear fields live on different grids"));
    }
    let mut solver = SemilinearSolver::new(target, *reactions, diffusivity)?;
    solver.diffusion.check_dt(dt)?;
    let n = step_count(dt, t_final)?;
    let every = snapshot_every.max(1);
    let (mut y1, mut y2) = (y1_0.clone(), y2_0.clone());
    observer(&FieldSnapshot {
        time: 0.0,
        y1: y1.clone(),
        y2: y2.clone(),
    })?;
    for step in 1..=n {
        solver.step_values(&mut y1.values, &mut y2.values, dt)?;
        if step % every == 0 || step == n {
            observer(&FieldSnapshot {
                time: step as f64 * dt,
                y1: y1.clone(),
                y2: y2.clone(),
            })?;
        }
    }
    Ok((y1, y2))
}

/// Absolute slack for the monotonicity checks (roundoff of the exchange update).
pub const MONOTONICITY_SLACK: f64 = 1e-13;

/// Violations found by [`SemilinearMonitor`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvariantReport {
    pub max_mass_drift: f64,
    pub min_value: f64,
    /// Largest increase of `(y^d − y₂)₊` between snapshots in any cell.
    pub max_deficit_increase: f64,
    /// Largest decrease of `(y^d − y₂)₋` between snapshots in any cell.
    pub max_excess_increase: f64,
    /// `max_t ‖y(t) − y^d‖₁ / ‖y⁰ − y^d‖₁`.
    pub max_lyapunov_ratio: f64,
    pub snapshots: usize,
}

/// Tracks conservation, positivity, partial monotonicity and the L¹
/// Lyapunov bound along a semilinear trajectory.
#[derive(Debug, Clone)]
pub struct SemilinearMonitor {
    target: GridField,
    mass0: Option<f64>,
    dist0: f64,
    prev_y2: Option<Vec<f64>>,
    report: InvariantReport,
}

impl SemilinearMonitor {
    pub fn new(target: GridField) -> Self {
        Self {
            target,
            mass0: None,
            dist0: 0.0,
            prev_y2: None,
            report: InvariantReport {
                min_value: f64::INFINITY,
                ..Default::default()
            },
        }
    }

    /// `‖y − (0, y^d)‖₁ = ‖y₁‖₁ + ‖y₂ − y^d‖₁`.
    pub fn distance_to_equilibrium(&self, snap: &FieldSnapshot) -> Result<f64> {
        let zero = GridField::constant(snap.y1.grid.clone(), 0.0);
        Ok(snap.y1.l1_distance(&zero)? + snap.y2.l1_distance(&self.target)?)
    }

    pub fn observe(&mut self, snap: &FieldSnapshot) -> Result<()> {
        let mass = snap.y1.mass() + snap.y2.mass();
        let dist = self.distance_to_equilibrium(snap)?;
        let r = &mut self.report;
        match self.mass0 {
            None => {
                self.mass0 = Some(mass);
                self.dist0 = dist;
            }
            Some(m0) => r.max_mass_drift = r.max_mass_drift.max((mass - m0).abs()),
        }
        r.min_value = r.min_value.min(snap.y1.min()).min(snap.y2.min());
        if self.dist0 > 0.0 {
            r.max_lyapunov_ratio = r.max_lyapunov_ratio.max(dist / self.dist0);
        }
        let yd = self.target.values();
        if let Some(prev) = &self.prev_y2 {
            for ((now, before), t) in snap.y2.values().iter().zip(prev).zip(yd) {
                let (dp_now, dp_before) = ((t - now).max(0.0), (t - before).max(0.0));
                let (dn_now, dn_before) = ((t - now).min(0.0), (t - before).min(0.0));
                r.max_deficit_increase = r.max_deficit_increase.max(dp_now - dp_before);
                r.max_excess_increase = r.max_excess_increase.max(dn_before - dn_now);
            }
        }
        self.prev_y2 = Some(snap.y2.values().to_vec());
        r.snapshots += 1;
        Ok(())
    }

    pub fn report(&self) -> &InvariantReport {
        &self.report
    }
}
