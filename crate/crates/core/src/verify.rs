//! Built-in invariant suite behind `hyposwarm verify`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domains::{BoxDomain, Domain, SphereDomain};
use crate::grid::Grid;
use crate::meanfield::{Kernel, ReactionFunctions};
use crate::pde_oracle::{CoefficientPair, GridField, LinearSolver, SemilinearSolver};
use crate::vectorfields::{
    bracket_generating_rank, builtin_brockett, builtin_sphere, lie_bracket_numeric, sphere_field,
    sphere_tangent_projector, Point, VectorField, BRACKET_STEP,
};

/// Signature of the numeric bracket, injectable for fault-injection tests.
pub type BracketFn = fn(&VectorField, &VectorField, &Point, f64) -> Point;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub bracket: BracketFn,
    /// Random evaluation points per check.
    pub points: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            bracket: lie_bracket_numeric,
            points: 100,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.residual.is_finite() && self.residual <= self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    /// Pass/fail table; `verbose` adds residuals and tolerances.
    pub fn table(&self, verbose: bool) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5);
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed() { "PASS" } else { "FAIL" };
            if verbose {
                out += &format!(
                    "{:<width$}  {status}  residual {:.3e}  tolerance {:.1e}\n",
                    c.name, c.residual, c.tolerance
                );
            } else {
                out += &format!("{:<width$}  {status}\n", c.name);
            }
        }
        out
    }
}

fn random_box_point(rng: &mut ChaCha8Rng) -> Point {
    Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let g = Point::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if g.norm() > 1e-9 {
            return g.normalize();
        }
    }
}

/// Max error of the Brockett bracket against `(0, 0, 2)`.
pub fn brockett_bracket_residual(opts: &VerifyOptions) -> f64 {
    let fam = builtin_brockett();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let expected = Point::new(0.0, 0.0, 2.0);
    (0..opts.points)
        .map(|_| {
            let x = random_box_point(&mut rng);
            ((opts.bracket)(&fam.fields()[0], &fam.fields()[1], &x, BRACKET_STEP) - expected).amax()
        })
        .fold(0.0, f64::max)
}

/// Max error of the sphere bracket `[X̃₁, X̃₂]` against `X̃₃`.
pub fn sphere_bracket_residual(opts: &VerifyOptions) -> f64 {
    let (x1, x2, x3) = (sphere_field(1), sphere_field(2), sphere_field(3));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 1);
    (0..opts.points)
        .map(|_| {
            let x = random_unit(&mut rng);
            ((opts.bracket)(&x1, &x2, &x, BRACKET_STEP) - x3.eval(&x)).amax()
        })
        .fold(0.0, f64::max)
}

/// Number of sampled points where the depth-1 rank differs from `expected`.
fn rank_failures(sphere: bool, opts: &VerifyOptions) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 2);
    let (fam, expected) = if sphere {
        (builtin_sphere(), 2)
    } else {
        (builtin_brockett(), 3)
    };
    let proj: &dyn Fn(&Point) -> nalgebra::Matrix3<f64> = &sphere_tangent_projector;
    (0..opts.points)
        .filter(|_| {
            let (x, p) = if sphere {
                (random_unit(&mut rng), Some(proj))
            } else {
                (random_box_point(&mut rng), None)
            };
            bracket_generating_rank(&fam, &x, 1, p).rank != expected
        })
        .count() as f64
}

/// `|c(ε)·ΣK·cellvol − 1|` on a Cartesian midpoint lattice (independent of
/// the radial quadrature used for `c(ε)`).
fn euclidean_kernel_residual(dim: usize, epsilon: f64, per_axis: usize) -> f64 {
    let kernel = Kernel::euclidean(dim, epsilon).expect("valid kernel");
    let h = 2.0 * epsilon / per_axis as f64;
    let centre = Point::zeros();
    let coord = |i: usize| -epsilon + (i as f64 + 0.5) * h;
    let mut sum = 0.0;
    let total = per_axis.pow(dim as u32);
    for lin in 0..total {
        let mut p = Point::zeros();
        let mut rem = lin;
        for a in 0..dim {
            p[a] = coord(rem % per_axis);
            rem /= per_axis;
        }
        sum += kernel.value(&centre, &p);
    }
    (kernel.c_eps() * sum * h.powi(dim as i32) - 1.0).abs()
}

/// Sphere kernel normalization on an equal-area lattice around the pole.
fn sphere_kernel_residual(epsilon: f64, n: usize) -> f64 {
    let kernel = Kernel::sphere(epsilon).expect("valid kernel");
    let pole = Point::new(0.0, 0.0, 1.0);
    let z_lo = epsilon.cos();
    let dz = (1.0 - z_lo) / n as f64;
    let dphi = std::f64::consts::TAU / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let z = z_lo + (i as f64 + 0.5) * dz;
        let r = (1.0 - z * z).sqrt();
        for j in 0..n {
            let phi = (j as f64 + 0.5) * dphi;
            sum += kernel.value(&pole, &Point::new(r * phi.cos(), r * phi.sin(), z));
        }
    }
    (kernel.c_eps() * sum * dz * dphi - 1.0).abs()
}

/// Mass drift of the linear solver from a point mass over 2000 steps.
fn linear_conservation_residual() -> f64 {
    let g = Arc::new(Grid::uniform(&BoxDomain::cube(1, 0.0, 1.0).expect("box"), 64).expect("grid"));
    let f = GridField::from_fn(g.clone(), |i| 1.0 + 0.5 * (i as f64 * 0.2).sin());
    let coef = CoefficientPair::from_equilibrium(&f, GridField::constant(g.clone(), 1.0)).expect("coef");
    let mut solver = LinearSolver::new(&coef).expect("solver");
    let mut y = GridField::from_fn(g, |i| if i == 5 { 64.0 } else { 0.0 });
    let m0 = y.mass();
    let dt = solver.stability_bound();
    let mut drift: f64 = 0.0;
    for _ in 0..2000 {
        if solver.step_values(y.values_mut(), dt).is_err() {
            return f64::INFINITY;
        }
        drift = drift.max((y.mass() - m0).abs());
        if y.min() < 0.0 {
            return f64::INFINITY;
        }
    }
    drift
}

/// Mass drift of the semilinear solver on a two-bump target.
fn semilinear_conservation_residual() -> f64 {
    let g = Arc::new(Grid::uniform(&BoxDomain::cube(1, 0.0, 1.0).expect("box"), 50).expect("grid"));
    let target = GridField::from_fn(g.clone(), |i| if (5..15).contains(&i) || (30..40).contains(&i) { 2.5 } else { 0.0 });
    let mut solver = SemilinearSolver::new(&target, ReactionFunctions::new(20.0).expect("k"), 1.0).expect("solver");
    let mut y1 = GridField::constant(g.clone(), 1.0);
    let mut y2 = GridField::constant(g, 0.0);
    let m0 = y1.mass() + y2.mass();
    let dt = solver.stability_bound();
    let mut drift: f64 = 0.0;
    for _ in 0..2000 {
        if solver.step_values(y1.values_mut(), y2.values_mut(), dt).is_err() {
            return f64::INFINITY;
        }
        drift = drift.max((y1.mass() + y2.mass() - m0).abs());
        if y1.min() < -1e-14 || y2.min() < -1e-14 {
            return f64::INFINITY;
        }
    }
    drift
}

/// Worst distance from the domain after confining random far-away points.
fn confinement_residual(opts: &VerifyOptions) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 3);
    let boxed = Domain::Box(BoxDomain::cube(3, 0.0, 100.0).expect("box"));
    let sphere = Domain::Sphere(SphereDomain);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.points {
        let x = Point::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
        match boxed.confine(&x) {
            Ok(p) if boxed.contains(&p) => {}
            _ => return f64::INFINITY,
        }
        match sphere.confine(&x) {
            Ok(p) => worst = worst.max((p.norm() - 1.0).abs()),
            Err(_) => return f64::INFINITY,
        }
    }
    worst
}

/// Runs every check.
pub fn run_suite(opts: &VerifyOptions) -> VerifyReport {
    let checks = vec![
        CheckResult {
            name: "brockett bracket [X1,X2] = (0,0,2)",
            residual: brockett_bracket_residual(opts),
            tolerance: 1e-6,
        },
        CheckResult {
            name: "sphere bracket [X1,X2] = X3",
            residual: sphere_bracket_residual(opts),
            tolerance: 1e-6,
        },
        CheckResult {
            name: "brockett rank 3 at depth 1",
            residual: rank_failures(false, opts),
            tolerance: 0.0,
        },
        CheckResult {
            name: "sphere tangent rank 2 at depth 1",
            residual: rank_failures(true, opts),
            tolerance: 0.0,
        },
        CheckResult {
            name: "kernel normalization 1D",
            residual: euclidean_kernel_residual(1, 0.5, 20_000),
            tolerance: 1e-6,
        },
        CheckResult {
            name: "kernel normalization 2D",
            residual: euclidean_kernel_residual(2, 2.0, 1000),
            tolerance: 1e-4,
        },
        CheckResult {
            name: "kernel normalization 3D",
            residual: euclidean_kernel_residual(3, 5.0, 120),
            tolerance: 1e-3,
        },
        CheckResult {
            name: "kernel normalization sphere",
            residual: sphere_kernel_residual(0.1, 1000),
            tolerance: 1e-4,
        },
        CheckResult {
            name: "linear PDE mass conservation",
            residual: linear_conservation_residual(),
            tolerance: 1e-12,
        },
        CheckResult {
            name: "semilinear PDE mass conservation",
            residual: semilinear_conservation_residual(),
            tolerance: 1e-12,
        },
        CheckResult {
            name: "reflection and retraction confine",
            residual: confinement_residual(opts),
            tolerance: 1e-12,
        },
    ];
    VerifyReport { checks }
}
