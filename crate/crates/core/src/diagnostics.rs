//! Metrics on binned densities and run serialization.
//!
//! Exported files (the contract with downstream plotting tools):
//!
//! * `snapshots_NNNNN.csv`: `t,particle_id,x1,x2,x3,motion_state`
//! * `fields_NNNNN.csv` (grid runs): `t,cell_id,x1,x2,y1,y2,target`
//! * `metrics.csv`: `t,l1_to_target,moving_fraction,total_mass`
//! * `run.json`: configuration echo and provenance
//!
//! Floats are written with 17 significant digits so they re-import bit-exactly.
//! Motion states are written as `0` (moving) and `1` (motionless).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domains::Domain;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::meanfield::{DensityEstimator, Kernel};
use crate::pde_oracle::{FieldSnapshot, GridField};
use crate::sde_sim::{MotionState, SwarmState};
use crate::target::TargetDensity;
use crate::vectorfields::Point;

pub const SNAPSHOT_HEADER: &str = "t,particle_id,x1,x2,x3,motion_state";
pub const FIELD_HEADER: &str = "t,cell_id,x1,x2,y1,y2,target";
pub const METRICS_HEADER: &str = "t,l1_to_target,moving_fraction,total_mass";

/// Version string stored in `run.json`.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// `Σ_cells |rho − target| · cellvol`.
pub fn l1_distance(rho: &GridField, target: &GridField) -> Result<f64> {
    rho.l1_distance(target)
}

/// Particle counts per cell divided by `n_total · cellvol`.
///
/// Points outside the grid are counted in the nearest boundary cell and a
/// warning is logged.
pub fn histogram_density(positions: &[Point], grid: &Arc<Grid>, n_total: usize) -> GridField {
    let mut counts = vec![0u64; grid.len()];
    let mut outside = 0usize;
    for p in positions {
        let cell = grid.cell_of(p).unwrap_or_else(|| {
            outside += 1;
            grid.nearest_cell(p)
        });
        counts[cell] += 1;
    }
    if outside > 0 {
        log::warn!("{outside} positions outside the histogram grid were clamped to boundary cells");
    }
    let scale = 1.0 / (n_total.max(1) as f64 * grid.cell_volume());
    GridField::from_fn(grid.clone(), |i| counts[i] as f64 * scale)
}

/// `|Moving| / N`; zero for an empty swarm.
pub fn moving_fraction(state: &SwarmState) -> f64 {
    if state.is_empty() {
        0.0
    } else {
        state.moving_count() as f64 / state.len() as f64
    }
}

/// Equal-area partition of the unit sphere into `bands` slabs of equal
/// height in `z` (Archimedes) times `sectors` azimuth sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SphereBins {
    pub bands: usize,
    pub sectors: usize,
}

impl SphereBins {
    pub fn len(&self) -> usize {
        self.bands * self.sectors
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn area(&self) -> f64 {
        4.0 * std::f64::consts::PI / self.len() as f64
    }

    pub fn bin_of(&self, x: &Point) -> usize {
        let z = x.z.clamp(-1.0, 1.0);
        let band = (((z + 1.0) / 2.0 * self.bands as f64) as usize).min(self.bands - 1);
        let phi = x.y.atan2(x.x).rem_euclid(std::f64::consts::TAU);
        let sector = ((phi / std::f64::consts::TAU * self.sectors as f64) as usize).min(self.sectors - 1);
        band * self.sectors + sector
    }

    /// Midpoint of bin `(band, sector)` subcell `(i, j)` of an `sub × sub` split.
    fn sample(&self, bin: usize, i: usize, j: usize, sub: usize) -> Point {
        let (band, sector) = (bin / self.sectors, bin % self.sectors);
        let z = -1.0 + 2.0 * (band as f64 + (i as f64 + 0.5) / sub as f64) / self.bands as f64;
        let phi = std::f64::consts::TAU * (sector as f64 + (j as f64 + 0.5) / sub as f64) / self.sectors as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        Point::new(r * phi.cos(), r * phi.sin(), z)
    }
}

/// Spatial bins used to turn particles into densities.
#[derive(Debug, Clone)]
pub enum Binning {
    Box(Arc<Grid>),
    Sphere(SphereBins),
}

impl Binning {
    /// Default binning for a domain: `per_axis` cells per box axis, or
    /// `per_axis × 2·per_axis` equal-area sphere bins.
    pub fn for_domain(domain: &Domain, per_axis: usize) -> Result<Self> {
        if per_axis == 0 {
            return Err(Error::usage("need at least one bin per axis"));
        }
        Ok(match domain {
            Domain::Box(b) => Binning::Box(Arc::new(Grid::uniform(b, per_axis)?)),
            Domain::Sphere(_) => Binning::Sphere(SphereBins {
                bands: per_axis,
                sectors: 2 * per_axis,
            }),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Binning::Box(g) => g.len(),
            Binning::Sphere(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bin_measure(&self) -> f64 {
        match self {
            Binning::Box(g) => g.cell_volume(),
            Binning::Sphere(s) => s.area(),
        }
    }

    fn bin_of(&self, x: &Point) -> (usize, bool) {
        match self {
            Binning::Box(g) => match g.cell_of(x) {
                Some(c) => (c, true),
                None => (g.nearest_cell(x), false),
            },
            Binning::Sphere(s) => (s.bin_of(x), true),
        }
    }

    /// Counts per bin over `n_total · measure`.
    pub fn histogram(&self, positions: &[Point], n_total: usize) -> Vec<f64> {
        let mut counts = vec![0u64; self.len()];
        let mut outside = 0usize;
        for p in positions {
            let (bin, inside) = self.bin_of(p);
            outside += usize::from(!inside);
            counts[bin] += 1;
        }
        if outside > 0 {
            log::warn!("{outside} positions outside the histogram grid were clamped to boundary cells");
        }
        let scale = 1.0 / (n_total.max(1) as f64 * self.bin_measure());
        counts.iter().map(|&c| c as f64 * scale).collect()
    }

    /// Bin averages of a density function by midpoint subsampling.
    pub fn averages(&self, f: &dyn Fn(&Point) -> f64, sub: usize) -> Vec<f64> {
        match self {
            Binning::Box(g) => (0..g.len()).map(|i| g.cell_average(i, sub, f)).collect(),
            Binning::Sphere(s) => (0..s.len())
                .map(|b| {
                    let mut acc = 0.0;
                    for i in 0..sub {
                        for j in 0..sub {
                            acc += f(&s.sample(b, i, j, sub));
                        }
                    }
                    acc / (sub * sub) as f64
                })
                .collect(),
        }
    }

    /// `Σ |a − b| · measure`.
    pub fn l1(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * self.bin_measure()
    }

    pub fn mass(&self, a: &[f64]) -> f64 {
        a.iter().sum::<f64>() * self.bin_measure()
    }
}

/// Subsamples per axis used to average the target over a bin.
const TARGET_SUBSAMPLES: usize = 16;

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: f64,
    pub l1_to_target: f64,
    pub moving_fraction: f64,
    pub total_mass: f64,
}

/// Computes particle metrics against a fixed target.
///
/// With a switching law the compared density is that of the motionless
/// agents (sub-probability, mass = motionless fraction); otherwise all agents.
#[derive(Debug, Clone)]
pub struct ParticleMetrics {
    binning: Binning,
    target_bins: Vec<f64>,
    motionless_only: bool,
}

impl ParticleMetrics {
    pub fn new(binning: Binning, target: &TargetDensity, motionless_only: bool) -> Self {
        let target_bins = binning.averages(&|x| target.eval(x), TARGET_SUBSAMPLES);
        Self {
            binning,
            target_bins,
            motionless_only,
        }
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn target_bins(&self) -> &[f64] {
        &self.target_bins
    }

    /// Binned density of the compared population.
    pub fn compared_density(&self, state: &SwarmState) -> Vec<f64> {
        if self.motionless_only {
            self.binning
                .histogram(&state.positions_in(MotionState::Motionless), state.len())
        } else {
            self.binning.histogram(&state.positions, state.len())
        }
    }

    pub fn row(&self, state: &SwarmState) -> MetricsRow {
        let rho = self.compared_density(state);
        let all = self.binning.histogram(&state.positions, state.len());
        MetricsRow {
            t: state.time,
            l1_to_target: self.binning.l1(&rho, &self.target_bins),
            moving_fraction: moving_fraction(state),
            total_mass: self.binning.mass(&all),
        }
    }

    /// L¹ distance using a kernel density estimate evaluated at bin sample
    /// points instead of the histogram.
    pub fn kde_l1(&self, state: &SwarmState, kernel: Kernel) -> Result<f64> {
        let pts = if self.motionless_only {
            state.positions_in(MotionState::Motionless)
        } else {
            state.positions.clone()
        };
        let est = DensityEstimator::new(kernel, pts, state.len())?;
        let rho = self.binning.averages(&|x| est.density(x), 2);
        Ok(self.binning.l1(&rho, &self.target_bins))
    }
}

/// Metrics row for a grid snapshot: L¹ of `y₂` (or `y₁` for the linear
/// model, where `y₂ ≡ 0`) against the target, moving mass fraction, total mass.
pub fn field_metrics(snap: &FieldSnapshot, target: &GridField, linear: bool) -> Result<MetricsRow> {
    let m1 = snap.y1.mass();
    let m2 = snap.y2.mass();
    let total = m1 + m2;
    let l1 = if linear {
        snap.y1.l1_distance(target)?
    } else {
        snap.y2.l1_distance(target)?
    };
    Ok(MetricsRow {
        t: snap.time,
        l1_to_target: l1,
        moving_fraction: if total > 0.0 { m1 / total } else { 0.0 },
        total_mass: total,
    })
}

/// Stored snapshot of a run.
#[derive(Debug, Clone)]
pub enum Snapshot {
    Particles(SwarmState),
    Fields { snap: FieldSnapshot, target: GridField },
}

impl Snapshot {
    pub fn time(&self) -> f64 {
        match self {
            Snapshot::Particles(s) => s.time,
            Snapshot::Fields { snap, .. } => snap.time,
        }
    }
}

/// Output encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    #[default]
    Csv,
    JsonLines,
}

/// Everything a run writes to disk.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub snapshots: Vec<Snapshot>,
    pub metrics: Vec<MetricsRow>,
    /// Extra key/value results stored in `run.json`.
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl RunRecord {
    pub fn new(config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            config,
            seed,
            snapshots: Vec::new(),
            metrics: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    /// Appends a snapshot and its metrics, enforcing strictly increasing
    /// times and finite metrics.
    pub fn push(&mut self, snapshot: Snapshot, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.metrics.last() {
            if !(row.t > last.t) {
                return Err(Error::Numerical(format!(
                    "snapshot times must increase: {} after {}",
                    row.t, last.t
                )));
            }
        }
        if ![row.t, row.l1_to_target, row.moving_fraction, row.total_mass]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Numerical(format!("non-finite metrics at t = {}", row.t)));
        }
        self.snapshots.push(snapshot);
        self.metrics.push(row);
        Ok(())
    }

    /// Only keeps the metrics (for long runs where snapshots are not exported).
    pub fn push_metrics(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.metrics.last() {
            if !(row.t > last.t) {
                return Err(Error::Numerical(format!(
                    "snapshot times must increase: {} after {}",
                    row.t, last.t
                )));
            }
        }
        self.metrics.push(row);
        Ok(())
    }
}

/// 17 significant digits; parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_particles(w: &mut impl Write, s: &SwarmState, format: ExportFormat) -> std::io::Result<()> {
    let t = fmt_f64(s.time);
    if format == ExportFormat::Csv {
        writeln!(w, "{SNAPSHOT_HEADER}")?;
    }
    for (j, (p, m)) in s.positions.iter().zip(&s.motion_states).enumerate() {
        let (x1, x2, x3) = (fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z));
        let code = m.code();
        match format {
            ExportFormat::Csv => writeln!(w, "{t},{j},{x1},{x2},{x3},{code}")?,
            ExportFormat::JsonLines => writeln!(
                w,
                r#"{{"t":{t},"particle_id":{j},"x1":{x1},"x2":{x2},"x3":{x3},"motion_state":{code}}}"#
            )?,
        }
    }
    Ok(())
}

fn write_fields(w: &mut impl Write, snap: &FieldSnapshot, target: &GridField, format: ExportFormat) -> std::io::Result<()> {
    let t = fmt_f64(snap.time);
    let grid = snap.y1.grid();
    if format == ExportFormat::Csv {
        writeln!(w, "{FIELD_HEADER}")?;
    }
    for c in 0..grid.len() {
        let centre = grid.cell_center(c);
        let x1 = fmt_f64(centre.x);
        let x2 = fmt_f64(if grid.dim() > 1 { centre.y } else { 0.0 });
        let (y1, y2, yd) = (
            fmt_f64(snap.y1.values()[c]),
            fmt_f64(snap.y2.values()[c]),
            fmt_f64(target.values()[c]),
        );
        match format {
            ExportFormat::Csv => writeln!(w, "{t},{c},{x1},{x2},{y1},{y2},{yd}")?,
            ExportFormat::JsonLines => writeln!(
                w,
                r#"{{"t":{t},"cell_id":{c},"x1":{x1},"x2":{x2},"y1":{y1},"y2":{y2},"target":{yd}}}"#
            )?,
        }
    }
    Ok(())
}

/// Writes metrics rows in `format`.
pub fn write_metrics(path: &Path, rows: &[MetricsRow], format: ExportFormat) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    if format == ExportFormat::Csv {
        writeln!(w, "{METRICS_HEADER}").map_err(io)?;
    }
    for r in rows {
        let (t, l1, mf, mass) = (
            fmt_f64(r.t),
            fmt_f64(r.l1_to_target),
            fmt_f64(r.moving_fraction),
            fmt_f64(r.total_mass),
        );
        match format {
            ExportFormat::Csv => writeln!(w, "{t},{l1},{mf},{mass}"),
            ExportFormat::JsonLines => writeln!(
                w,
                r#"{{"t":{t},"l1_to_target":{l1},"moving_fraction":{mf},"total_mass":{mass}}}"#
            ),
        }
        .map_err(io)?;
    }
    finish(w, path)
}

/// Reads a `metrics.csv` file written by [`export`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |msg: String| Error::scenario(path.display().to_string(), msg);
    match lines.next() {
        Some(Ok(h)) if h == METRICS_HEADER => {}
        Some(Ok(h)) => return Err(bad(format!("unexpected header `{h}`"))),
        Some(Err(e)) => return Err(Error::io(path, e)),
        None => return Err(bad("empty metrics file".into())),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
        if v.len() != 4 {
            return Err(bad(format!("line {}: expected 4 columns, found {}", n + 2, v.len())));
        }
        rows.push(MetricsRow {
            t: v[0],
            l1_to_target: v[1],
            moving_fraction: v[2],
            total_mass: v[3],
        });
    }
    Ok(rows)
}

/// Provenance block of `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub code_version: String,
}

type WriteFn<'a> = dyn Fn(&mut BufWriter<File>) -> std::io::Result<()> + 'a;

/// True for names this module writes as numbered snapshot files.
fn is_snapshot_file(name: &str) -> bool {
    let stem = name
        .strip_suffix(".csv")
        .or_else(|| name.strip_suffix(".jsonl"));
    let digits = stem.and_then(|s| s.strip_prefix("snapshots_").or_else(|| s.strip_prefix("fields_")));
    digits.is_some_and(|d| d.len() == 5 && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Writes snapshots, metrics and `run.json` under `dir` (created if missing).
/// Snapshot files left by an earlier run in `dir` are removed first.
/// Returns the written paths.
pub fn export(record: &RunRecord, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_name().to_str().is_some_and(is_snapshot_file) {
            fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    let ext = match format {
        ExportFormat::Csv => "csv",
        ExportFormat::JsonLines => "jsonl",
    };
    let mut written = Vec::new();
    for (i, snap) in record.snapshots.iter().enumerate() {
        let (stem, result): (&str, Box<WriteFn>) = match snap {
            Snapshot::Particles(s) => ("snapshots", Box::new(move |w| write_particles(w, s, format))),
            Snapshot::Fields { snap, target } => ("fields", Box::new(move |w| write_fields(w, snap, target, format))),
        };
        let path = dir.join(format!("{stem}_{i:05}.{ext}"));
        let mut w = create(&path)?;
        result(&mut w).map_err(|e| Error::io(&path, e))?;
        finish(w, &path)?;
        written.push(path);
    }
    let metrics = dir.join(format!("metrics.{ext}"));
    write_metrics(&metrics, &record.metrics, format)?;
    written.push(metrics);

    let run_json = dir.join("run.json");
    let body = serde_json::json!({
        "config": record.config,
        "provenance": Provenance { seed: record.seed, code_version: CODE_VERSION.to_string() },
        "summary": record.summary,
    });
    let text = serde_json::to_string_pretty(&body).map_err(|e| Error::Numerical(e.to_string()))?;
    fs::write(&run_json, text + "\n").map_err(|e| Error::io(&run_json, e))?;
    written.push(run_json);
    Ok(written)
}
