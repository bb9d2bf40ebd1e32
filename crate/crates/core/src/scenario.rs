//! Declarative TOML scenario files.
//!
//! ```toml
//! name = "brockett-switching"
//! output_dir = "runs/brockett"       # optional
//! export_format = "csv"              # csv | json-lines
//!
//! [domain]
//! kind = "box"                       # box | sphere
//! lo = [0.0, 0.0, 0.0]
//! hi = [100.0, 100.0, 100.0]
//!
//! [fields]
//! family = "brockett"                # brockett | sphere | coordinate
//!
//! [control]
//! variant = "mean-field-switching"   # | non-interacting-diffusion | non-interacting-drift
//! diffusion_gain = 10.0
//! reaction_gain = 500.0
//! epsilon = 5.0
//! density_source = "motionless-only" # | all-agents
//! q_max = 1e6
//! rate_density = "normalized"        # | lebesgue
//!
//! [target]
//! kind = "balls8"                    # balls8 | balls8+floor | sphere-caps | uniform
//!                                    # | intervals | sine | grid-file
//!
//! [sim]
//! dt = 0.05
//! t_final = 100.0
//! n_particles = 1000
//! seed = 1
//! substeps = 4
//! snapshot_every = 200
//! integrator = "auto"                # auto | heun | exact-flow
//!
//! [metrics]
//! cells_per_axis = 8
//!
//! [oracle]                           # only read by `oracle`
//! model = "semilinear"               # linear | semilinear
//! cells = 100
//! dt = 1e-5
//! t_final = 10.0
//! snapshot_every = 10000
//! initial = "uniform"                # uniform | equilibrium
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::ExportFormat;
use crate::domains::{BoxDomain, Domain, SphereDomain};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::meanfield::{Kernel, ReactionFunctions, DEFAULT_RATE_CAP};
use crate::sde_sim::{ControlLaw, DensitySource, Integrator, SimConfig, SwitchingParams};
use crate::target::TargetDensity;
use crate::vectorfields::{builtin_brockett, builtin_coordinate, builtin_sphere, FieldFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub export_format: ExportFormat,
    pub domain: DomainSpec,
    pub fields: FieldsSpec,
    pub control: ControlSpec,
    pub target: TargetSpec,
    pub sim: SimSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Brockett,
    Sphere,
    Coordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsSpec {
    pub family: FamilyName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawName {
    NonInteractingDiffusion,
    NonInteractingDrift,
    MeanFieldSwitching,
}

/// Units in which `ρ̃` and `y^d` enter the reaction functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateDensity {
    /// Densities relative to the normalized volume of the domain (`|Ω| = 1`).
    #[default]
    Normalized,
    /// Densities relative to Lebesgue (or surface) measure.
    Lebesgue,
}

fn default_density_source() -> DensitySource {
    DensitySource::MotionlessOnly
}

fn default_q_max() -> f64 {
    DEFAULT_RATE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub variant: LawName,
    pub diffusion_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaction_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_density_source")]
    pub density_source: DensitySource,
    #[serde(default = "default_q_max")]
    pub q_max: f64,
    #[serde(default)]
    pub rate_density: RateDensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Balls8,
    #[serde(rename = "balls8+floor")]
    Balls8Floor {
        #[serde(default = "default_floor")]
        floor: f64,
    },
    SphereCaps {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    Uniform,
    Intervals { intervals: Vec<[f64; 2]> },
    Sine { amplitude: f64 },
    /// Whitespace- or comma-separated cell values, axis 0 fastest.
    GridFile { path: PathBuf, cells: Vec<usize> },
}

fn default_floor() -> f64 {
    0.001
}

fn default_threshold() -> f64 {
    0.75
}

fn default_substeps() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    pub t_final: f64,
    pub n_particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Steps between snapshots; the first and last step are always stored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<u64>,
    #[serde(default)]
    pub integrator: Integrator,
}

fn default_cells_per_axis() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    #[serde(default = "default_cells_per_axis")]
    pub cells_per_axis: usize,
    /// Steps between metrics rows (defaults to the snapshot cadence).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<u64>,
    /// Also report the kernel-estimate L¹ at the final time.
    #[serde(default)]
    pub kde: bool,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            cells_per_axis: default_cells_per_axis(),
            every: None,
            kde: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleModel {
    Linear,
    Semilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleInitial {
    #[default]
    Uniform,
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub model: OracleModel,
    pub cells: usize,
    /// Explicit step; defaults to the stability bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<u64>,
    #[serde(default)]
    pub initial: OracleInitial,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::config(format!("{field}: {msg}"))
}

impl Scenario {
    /// Parses and validates TOML text; `origin` names the source in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::scenario(origin, e.to_string()))?;
        s.validate().map_err(|e| match e {
            Error::Config(m) => Error::scenario(origin, m),
            other => other,
        })?;
        Ok(s)
    }

    /// Reads a scenario file. Relative paths inside it (grid files) are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::parse(&text, &path.display().to_string())?;
        if let TargetSpec::GridFile { path: p, .. } = &mut s.target {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize scenario: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if let DomainSpec::Box { lo, hi } = &self.domain {
            BoxDomain::new(lo.clone(), hi.clone()).map_err(|e| invalid("domain", e))?;
        }
        let c = &self.control;
        if !(c.diffusion_gain > 0.0 && c.diffusion_gain.is_finite()) {
            return Err(invalid("control.diffusion_gain", "must be positive"));
        }
        if !(c.q_max > 0.0) {
            return Err(invalid("control.q_max", "must be positive"));
        }
        if c.variant == LawName::MeanFieldSwitching {
            match c.reaction_gain {
                Some(k) if k > 0.0 && k.is_finite() => {}
                Some(_) => return Err(invalid("control.reaction_gain", "must be positive")),
                None => return Err(invalid("control.reaction_gain", "required by mean-field-switching")),
            }
            match c.epsilon {
                Some(e) if e > 0.0 && e.is_finite() => {}
                Some(_) => return Err(invalid("control.epsilon", "must be positive")),
                None => return Err(invalid("control.epsilon", "required by mean-field-switching")),
            }
        }
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(invalid("sim.dt", "must be positive"));
        }
        if !(s.t_final >= 0.0 && s.t_final.is_finite()) {
            return Err(invalid("sim.t_final", "must be non-negative"));
        }
        if s.n_particles == 0 {
            return Err(invalid("sim.n_particles", "must be at least 1"));
        }
        if s.substeps == 0 {
            return Err(invalid("sim.substeps", "must be at least 1"));
        }
        if s.snapshot_every == Some(0) {
            return Err(invalid("sim.snapshot_every", "must be at least 1"));
        }
        if self.metrics.cells_per_axis == 0 {
            return Err(invalid("metrics.cells_per_axis", "must be at least 1"));
        }
        if self.metrics.every == Some(0) {
            return Err(invalid("metrics.every", "must be at least 1"));
        }
        if let Some(o) = &self.oracle {
            if o.cells == 0 {
                return Err(invalid("oracle.cells", "must be at least 1"));
            }
            if let Some(dt) = o.dt {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(invalid("oracle.dt", "must be positive"));
                }
            }
            if !(o.t_final >= 0.0 && o.t_final.is_finite()) {
                return Err(invalid("oracle.t_final", "must be non-negative"));
            }
            if o.snapshot_every == Some(0) {
                return Err(invalid("oracle.snapshot_every", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn build_domain(&self) -> Result<Domain> {
        Ok(match &self.domain {
            DomainSpec::Box { lo, hi } => Domain::Box(BoxDomain::new(lo.clone(), hi.clone())?),
            DomainSpec::Sphere => Domain::Sphere(SphereDomain),
        })
    }

    pub fn build_family(&self) -> Result<FieldFamily> {
        let domain = self.build_domain()?;
        let family = match self.fields.family {
            FamilyName::Brockett => builtin_brockett(),
            FamilyName::Sphere => builtin_sphere(),
            FamilyName::Coordinate => builtin_coordinate(domain.dim()),
        };
        let ok = match (self.fields.family, &domain) {
            (FamilyName::Sphere, Domain::Sphere(_)) => true,
            (FamilyName::Brockett, Domain::Box(b)) => b.dim() == 3,
            (FamilyName::Coordinate, Domain::Box(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(invalid(
                "fields.family",
                format!("`{}` does not match the domain", family.name()),
            ));
        }
        Ok(family)
    }

    pub fn build_target(&self) -> Result<TargetDensity> {
        let domain = self.build_domain()?;
        let as_box = |what: &str| match &domain {
            Domain::Box(b) => Ok(b.clone()),
            Domain::Sphere(_) => Err(invalid("target.kind", format!("`{what}` needs a box domain"))),
        };
        let target = match &self.target {
            TargetSpec::Balls8 => TargetDensity::balls8(0.0),
            TargetSpec::Balls8Floor { floor } => TargetDensity::balls8(*floor),
            TargetSpec::SphereCaps { threshold } => TargetDensity::sphere_caps(*threshold),
            TargetSpec::Uniform => TargetDensity::uniform(domain.clone()),
            TargetSpec::Intervals { intervals } => {
                TargetDensity::intervals(as_box("intervals")?, intervals.iter().map(|i| (i[0], i[1])).collect())
            }
            TargetSpec::Sine { amplitude } => TargetDensity::sine(as_box("sine")?, *amplitude),
            TargetSpec::GridFile { path, cells } => {
                let grid = Grid::new(&as_box("grid-file")?, cells.clone()).map_err(|e| invalid("target.cells", e))?;
                let values = read_grid_values(path)?;
                if values.len() != grid.len() {
                    return Err(Error::scenario(
                        path.display().to_string(),
                        format!("grid file has {} values, target.cells needs {}", values.len(), grid.len()),
                    ));
                }
                TargetDensity::from_grid(grid, values)
            }
        }
        .map_err(|e| match e {
            Error::Usage(m) => invalid("target", m),
            other => other,
        })?;
        if target.domain() != &domain {
            return Err(invalid("target.kind", "target is defined on a different domain than `domain`"));
        }
        Ok(target)
    }

    /// Factor applied to densities before the reaction functions.
    pub fn density_scale(&self) -> Result<f64> {
        Ok(match self.control.rate_density {
            RateDensity::Normalized => self.build_domain()?.measure(),
            RateDensity::Lebesgue => 1.0,
        })
    }

    pub fn build_law(&self) -> Result<ControlLaw> {
        let target = self.build_target()?;
        let c = &self.control;
        match c.variant {
            LawName::NonInteractingDiffusion => ControlLaw::noninteracting(target, c.diffusion_gain),
            LawName::NonInteractingDrift => ControlLaw::noninteracting_drift(target, c.diffusion_gain),
            LawName::MeanFieldSwitching => {
                let domain = self.build_domain()?;
                let epsilon = c.epsilon.ok_or_else(|| invalid("control.epsilon", "missing"))?;
                let k = c.reaction_gain.ok_or_else(|| invalid("control.reaction_gain", "missing"))?;
                let params = SwitchingParams {
                    reactions: ReactionFunctions::with_cap(k, c.q_max)?,
                    kernel: Kernel::for_domain(&domain, epsilon).map_err(|e| invalid("control.epsilon", e))?,
                    density_source: c.density_source,
                    density_scale: self.density_scale()?,
                };
                ControlLaw::mean_field(target, c.diffusion_gain, params)
            }
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            dt: s.dt,
            t_final: s.t_final,
            n_particles: s.n_particles,
            seed: s.seed,
            substeps: s.substeps,
            snapshot_every: s.snapshot_every.unwrap_or(u64::MAX),
            integrator: s.integrator,
        }
    }

    /// Grid for the PDE reduction (`oracle.cells` per axis on the box).
    pub fn oracle_grid(&self) -> Result<Arc<Grid>> {
        let o = self.oracle.as_ref().ok_or_else(|| invalid("oracle", "section missing"))?;
        match self.build_domain()? {
            Domain::Box(b) if b.dim() <= 2 => Ok(Arc::new(Grid::uniform(&b, o.cells)?)),
            _ => Err(invalid("domain", "the PDE oracle needs a 1D or 2D box")),
        }
    }

    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(p) = override_dir {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        let base = std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        base.join(&self.name)
    }
}

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "HYPOSWARM_OUT";

fn read_grid_values(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::scenario(path.display().to_string(), format!("`{t}`: {e}")))
        })
        .collect()
}
