//! Acceptance checks for the simulator. Prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.
//!
//! Run alone with `cargo test -p hyposwarm --test acceptance`.

use std::f64::consts::TAU;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use hyposwarm::cli::{simulate, solve_oracle};
use hyposwarm::diagnostics::{export, Binning, ExportFormat, Snapshot};
use hyposwarm::domains::BoxDomain;
use hyposwarm::grid::Grid;
use hyposwarm::meanfield::ReactionFunctions;
use hyposwarm::pde_oracle::{
    run_linear, run_semilinear, CoefficientPair, GridField, LinearSolver, SemilinearMonitor, SemilinearSolver,
};
use hyposwarm::scenario::Scenario;
use hyposwarm::sde_sim::MotionState;
use hyposwarm::vectorfields::{
    bracket_generating_rank, builtin_brockett, builtin_sphere, lie_bracket_numeric, sphere_field,
    sphere_tangent_projector, Point,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const BRACKET_H: f64 = 1e-4;
const BRACKET_TOL: f64 = 1e-6;
const POINTS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Result<Outcome, String>;

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let g = Point::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if g.norm() > 1e-6 {
            return g.normalize();
        }
    }
}

fn box_point(rng: &mut ChaCha8Rng) -> Point {
    Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0))
}

fn brackets() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let fam = builtin_brockett();
    let mut err_b: f64 = 0.0;
    for _ in 0..POINTS {
        let x = box_point(&mut rng);
        let br = lie_bracket_numeric(&fam.fields()[0], &fam.fields()[1], &x, BRACKET_H);
        err_b = err_b.max((br - Point::new(0.0, 0.0, 2.0)).amax());
    }
    let (s1, s2) = (sphere_field(1), sphere_field(2));
    let mut err_s: f64 = 0.0;
    for _ in 0..POINTS {
        let x = unit_vector(&mut rng);
        // Rotation about e_x: x ↦ (0, −x₃, x₂).
        let expected = Point::new(0.0, -x.z, x.y);
        err_s = err_s.max((lie_bracket_numeric(&s1, &s2, &x, BRACKET_H) - expected).amax());
    }
    Ok(Outcome {
        pass: err_b <= BRACKET_TOL && err_s <= BRACKET_TOL,
        detail: format!("brockett max err {err_b:.2e}, sphere max err {err_s:.2e} (tol {BRACKET_TOL:.0e})"),
    })
}

fn ranks() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let brockett = builtin_brockett();
    let sphere = builtin_sphere();
    let proj: &dyn Fn(&Point) -> nalgebra::Matrix3<f64> = &sphere_tangent_projector;
    let mut bad_b = 0;
    let mut bad_s = 0;
    for _ in 0..POINTS {
        bad_b += usize::from(bracket_generating_rank(&brockett, &box_point(&mut rng), 1, None).rank != 3);
        bad_s += usize::from(bracket_generating_rank(&sphere, &unit_vector(&mut rng), 1, Some(proj)).rank != 2);
    }
    Ok(Outcome {
        pass: bad_b == 0 && bad_s == 0,
        detail: format!("rank mismatches: brockett {bad_b}/{POINTS}, sphere {bad_s}/{POINTS}"),
    })
}

fn unit_grid(cells: usize) -> Arc<Grid> {
    Arc::new(Grid::uniform(&BoxDomain::cube(1, 0.0, 1.0).unwrap(), cells).unwrap())
}

/// Exact cell averages of `1 + 0.5 sin 2πx`, scaled to unit mass.
fn sine_density(grid: &Arc<Grid>) -> GridField {
    let n = grid.len();
    let h = 1.0 / n as f64;
    GridField::from_fn(grid.clone(), |i| {
        let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
        1.0 + 0.5 * ((TAU * a).cos() - (TAU * b).cos()) / (TAU * h)
    })
}

/// Least-squares slope and R² of `ys` against `xs`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}

fn linear_pde() -> Result<Outcome, String> {
    let grid = unit_grid(200);
    let f = sine_density(&grid);
    let coef = CoefficientPair::from_equilibrium(&f, GridField::constant(grid.clone(), 1.0)).map_err(|e| e.to_string())?;
    let dt = LinearSolver::new(&coef).map_err(|e| e.to_string())?.stability_bound();
    let t_final = 5.0;
    let every = 200;

    let mut eq_err: f64 = 0.0;
    let mut eq_drift: f64 = 0.0;
    run_linear(&f, &coef, dt, t_final, every, |s| {
        eq_err = eq_err.max(s.y1.l1_distance(&f)?);
        eq_drift = eq_drift.max((s.y1.mass() - f.mass()).abs());
        Ok(())
    })
    .map_err(|e| e.to_string())?;

    let y0 = GridField::constant(grid.clone(), 1.0);
    let mut times = Vec::new();
    let mut l2 = Vec::new();
    let mut drift: f64 = 0.0;
    let last = run_linear(&y0, &coef, dt, t_final, every, |s| {
        times.push(s.time);
        l2.push(s.y1.l2_distance(&f)?);
        drift = drift.max((s.y1.mass() - y0.mass()).abs());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let final_l1 = last.l1_distance(&f).map_err(|e| e.to_string())?;

    // Decay window: after the fast modes are gone, before the roundoff floor.
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&l2)
        .filter(|(&t, &e)| t >= 0.01 && e >= 1e-11)
        .map(|(&t, &e)| (t, e.ln()))
        .unzip();
    if xs.len() < 10 {
        return Err(format!("decay window has only {} points", xs.len()));
    }
    let (slope, r2) = linear_fit(&xs, &ys);
    let pass = eq_err <= 1e-10 && r2 >= 0.99 && slope < 0.0 && final_l1 <= 1e-6 && drift.max(eq_drift) <= 1e-12;
    Ok(Outcome {
        pass,
        detail: format!(
            "equilibrium L1 {eq_err:.1e}; decay rate {:.2} R² {r2:.5} over {} pts; final L1 {final_l1:.1e}; mass drift {:.1e}",
            -slope,
            xs.len(),
            drift.max(eq_drift)
        ),
    })
}

/// Two disjoint raised-cosine bumps on [0.1, 0.35] and [0.55, 0.9], unit mass.
fn two_bumps(grid: &Arc<Grid>) -> GridField {
    let bump = |x: f64, a: f64, b: f64| {
        if x <= a || x >= b {
            0.0
        } else {
            let s = (x - a) / (b - a);
            (std::f64::consts::PI * s).sin().powi(2)
        }
    };
    let n = grid.len();
    let sub = 32;
    let mut field = GridField::from_fn(grid.clone(), |i| {
        (0..sub)
            .map(|j| {
                let x = (i as f64 + (j as f64 + 0.5) / sub as f64) / n as f64;
                bump(x, 0.1, 0.35) + 0.7 * bump(x, 0.55, 0.9)
            })
            .sum::<f64>()
            / sub as f64
    });
    let m = field.mass();
    field.values_mut().iter_mut().for_each(|v| *v /= m);
    field
}

fn semilinear_pde() -> Result<Outcome, String> {
    let grid = unit_grid(100);
    let target = two_bumps(&grid);
    let reactions = ReactionFunctions::new(50.0).map_err(|e| e.to_string())?;
    let diffusivity = 1.0;
    let dt = SemilinearSolver::new(&target, reactions, diffusivity)
        .map_err(|e| e.to_string())?
        .stability_bound();
    let y1 = GridField::constant(grid.clone(), 1.0);
    let y2 = GridField::constant(grid.clone(), 0.0);
    let mut monitor = SemilinearMonitor::new(target.clone());
    let (y1, y2) = run_semilinear(&y1, &y2, &target, &reactions, diffusivity, dt, 200.0, 100, |s| monitor.observe(s))
        .map_err(|e| e.to_string())?;
    let r = monitor.report();
    let zero = GridField::constant(grid, 0.0);
    let l1_y2 = y2.l1_distance(&target).map_err(|e| e.to_string())?;
    let l1_y1 = y1.l1_distance(&zero).map_err(|e| e.to_string())?;
    let pass = r.max_mass_drift <= 1e-12
        && r.min_value >= -1e-14
        && r.max_deficit_increase <= 0.0
        && r.max_excess_increase <= 0.0
        && r.max_lyapunov_ratio <= 2.0
        && l1_y2 <= 1e-3
        && l1_y1 <= 1e-3;
    Ok(Outcome {
        pass,
        detail: format!(
            "{} snapshots; mass drift {:.1e}; min {:.1e}; monotonicity violations (+{:.1e}, -{:.1e}); \
             Lyapunov ratio {:.3}; final ‖y2−yd‖ {l1_y2:.1e}, ‖y1‖ {l1_y1:.1e}",
            r.snapshots, r.max_mass_drift, r.min_value, r.max_deficit_increase, r.max_excess_increase, r.max_lyapunov_ratio
        ),
    })
}

fn particle_vs_oracle() -> Result<Outcome, String> {
    let sc = scenario("interval_switching_1d.toml");
    let particles = simulate(&sc, None).map_err(|e| e.to_string())?;
    let oracle = solve_oracle(&sc).map_err(|e| e.to_string())?;
    let Some(Snapshot::Particles(state)) = particles.record.snapshots.last() else {
        return Err("no particle snapshot".into());
    };
    let Some(Snapshot::Fields { snap, target }) = oracle.record.snapshots.last() else {
        return Err("no oracle snapshot".into());
    };
    let bins = 20;
    let binning = Binning::for_domain(&sc.build_domain().map_err(|e| e.to_string())?, bins).map_err(|e| e.to_string())?;
    let hist = binning.histogram(&state.positions_in(MotionState::Motionless), state.len());
    let group = snap.y2.values().len() / bins;
    let coarse: Vec<f64> = snap.y2.values().chunks(group).map(|c| c.iter().sum::<f64>() / group as f64).collect();
    let sup = hist.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let peak = target.values().iter().copied().fold(0.0, f64::max);
    let tol = 5.0 / (state.len() as f64).sqrt() + 0.05 * peak;
    Ok(Outcome {
        pass: sup <= tol,
        detail: format!("sup bin error {sup:.4} (tol {tol:.4}); particle moving fraction {:.4}", particles.final_moving_fraction),
    })
}

fn brockett_endpoint() -> Result<Outcome, String> {
    let mut sc = scenario("brockett_switching.toml");
    let mut fractions = Vec::new();
    let mut ratios = Vec::new();
    for seed in 1..=3 {
        sc.sim.seed = seed;
        let run = simulate(&sc, None).map_err(|e| e.to_string())?;
        let l1_0 = run.record.metrics.first().ok_or("no metrics")?.l1_to_target;
        fractions.push(run.final_moving_fraction);
        ratios.push(run.final_l1 / l1_0);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mf, ratio) = (mean(&fractions), mean(&ratios));
    Ok(Outcome {
        pass: mf <= 0.10 && ratio <= 0.5,
        detail: format!(
            "mean moving fraction {mf:.4} (seeds {fractions:.3?}); mean L1(t=100)/L1(0) {ratio:.3} (seeds {ratios:.3?})"
        ),
    })
}

fn sphere_scenario() -> Result<Outcome, String> {
    let mut sc = scenario("sphere_switching.toml");
    sc.sim.snapshot_every = Some(500);
    let run = simulate(&sc, None).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for snap in &run.record.snapshots {
        if let Snapshot::Particles(state) = snap {
            count += 1;
            for p in &state.positions {
                worst = worst.max((p.norm() - 1.0).abs());
            }
        }
    }
    Ok(Outcome {
        pass: worst <= 1e-9 && run.final_moving_fraction <= 0.15,
        detail: format!(
            "max |‖x‖−1| {worst:.1e} over {count} snapshots; final moving fraction {:.4}",
            run.final_moving_fraction
        ),
    })
}

fn determinism() -> Result<Outcome, String> {
    let sc = scenario("brockett_switching.toml");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for threads in [1, 2] {
        let run = simulate(&sc, Some(threads)).map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("threads{threads}"));
        export(&run.record, &out, ExportFormat::Csv).map_err(|e| e.to_string())?;
        files.push(std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())?);
    }
    Ok(Outcome {
        pass: files[0] == files[1] && !files[0].is_empty(),
        detail: format!("metrics.csv {} bytes, identical: {}", files[0].len(), files[0] == files[1]),
    })
}

fn main() {
    // (number, name, check, runtime budget in seconds)
    let criteria: [(u32, &str, Check, f64); 8] = [
        (1, "bracket identities", brackets, 1.0),
        (2, "bracket-generating rank", ranks, 1.0),
        (3, "linear PDE equilibrium and decay", linear_pde, 30.0),
        (4, "semilinear PDE invariants", semilinear_pde, 60.0),
        (5, "particle vs oracle", particle_vs_oracle, 120.0),
        (6, "brockett mean-field endpoint", brockett_endpoint, 600.0),
        (7, "sphere scenario", sphere_scenario, 600.0),
        (8, "thread-count determinism", determinism, 600.0),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check, budget) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(o) => (o.pass && secs < budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {n} {name}: {}  [{detail}; {secs:.2} s of {budget} s]",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
