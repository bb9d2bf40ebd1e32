//! Smooth vector fields on ℝ³ (or a coordinate subspace of it), numeric Lie
//! brackets, and the bracket-generating rank test.
//!
//! Fields are analytic closures. A field may carry its exact flow `e^{tX}x`;
//! a [`FieldFamily`] may additionally carry the exact flow of an arbitrary
//! constant-coefficient combination `Σ cᵢXᵢ`, which the particle integrator
//! prefers when it exists.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Points and tangent vectors. Problems of dimension < 3 leave the trailing
/// components at zero.
pub type Point = Vector3<f64>;

/// Default finite-difference step for numeric brackets.
pub const BRACKET_STEP: f64 = 1e-4;

/// Relative singular-value threshold used by [`bracket_generating_rank`].
pub const RANK_TOLERANCE: f64 = 1e-8;

type EvalFn = dyn Fn(&Point) -> Point + Send + Sync;
type FlowFn = dyn Fn(&Point, f64) -> Point + Send + Sync;
type CombinedFlowFn = dyn Fn(&[f64], &Point, f64) -> Point + Send + Sync;
/// Maps a point to the orthogonal projector onto the tangent space there.
pub type Projector = dyn Fn(&Point) -> Matrix3<f64>;

/// A smooth vector field with an optional closed-form flow.
#[derive(Clone)]
pub struct VectorField {
    name: String,
    dim: usize,
    eval: Arc<EvalFn>,
    flow: Option<Arc<FlowFn>>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("exact_flow", &self.flow.is_some())
            .finish()
    }
}

impl VectorField {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(&Point) -> Point + Send + Sync + 'static,
    ) -> Self {
        assert!((1..=3).contains(&dim), "ambient dimension must be 1, 2 or 3");
        Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            flow: None,
        }
    }

    /// Attaches the exact flow `(x, t) ↦ e^{tX}x`.
    pub fn with_flow(mut self, flow: impl Fn(&Point, f64) -> Point + Send + Sync + 'static) -> Self {
        self.flow = Some(Arc::new(flow));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_flow(&self) -> bool {
        self.flow.is_some()
    }

    /// Unchecked evaluation on the padded representation.
    #[inline]
    pub fn eval(&self, x: &Point) -> Point {
        (self.eval)(x)
    }

    /// Checked evaluation: `x` must have exactly `dim` finite coordinates.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = point_from_slice(x, self.dim)?;
        let v = self.eval(&p);
        Ok(v.as_slice()[..self.dim].to_vec())
    }

    pub fn exact_flow(&self, x: &Point, t: f64) -> Option<Point> {
        self.flow.as_ref().map(|f| f(x, t))
    }
}

/// Converts a coordinate slice to a padded [`Point`], validating length and finiteness.
pub fn point_from_slice(x: &[f64], dim: usize) -> Result<Point> {
    if x.len() != dim {
        return Err(Error::usage(format!(
            "point has {} coordinates, expected {dim}",
            x.len()
        )));
    }
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::usage("point has non-finite coordinates"));
    }
    let mut p = Point::zeros();
    p.as_mut_slice()[..dim].copy_from_slice(x);
    Ok(p)
}

/// Central-difference approximation of `D_v F(x)` along `v`, scaled so the
/// probe step is `h` in ambient length regardless of `|v|`.
fn directional_derivative(field: &VectorField, x: &Point, v: &Point, h: f64) -> Point {
    let norm = v.norm();
    if norm == 0.0 {
        return Point::zeros();
    }
    let dir = v / norm;
    (field.eval(&(x + dir * h)) - field.eval(&(x - dir * h))) * (norm / (2.0 * h))
}

/// `[X, Y](x) = DY(x)·X(x) − DX(x)·Y(x)` by central differences with step `h`.
pub fn lie_bracket_numeric(x_field: &VectorField, y_field: &VectorField, at: &Point, h: f64) -> Point {
    let xv = x_field.eval(at);
    let yv = y_field.eval(at);
    directional_derivative(y_field, at, &xv, h) - directional_derivative(x_field, at, &yv, h)
}

/// The numeric bracket `[X, Y]` as a new field (evaluated lazily, so nesting
/// produces iterated finite differences).
pub fn bracket_field(x_field: &VectorField, y_field: &VectorField, h: f64) -> VectorField {
    let (a, b) = (x_field.clone(), y_field.clone());
    let name = format!("[{},{}]", x_field.name, y_field.name);
    VectorField::new(name, x_field.dim, move |p| lie_bracket_numeric(&a, &b, p, h))
}

/// An ordered family `{X₁,…,X_m}` of fields sharing one ambient dimension.
#[derive(Clone)]
pub struct FieldFamily {
    name: String,
    fields: Vec<VectorField>,
    dim: usize,
    combined_flow: Option<Arc<CombinedFlowFn>>,
}

impl fmt::Debug for FieldFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldFamily")
            .field("name", &self.name)
            .field("fields", &self.fields)
            .field("dim", &self.dim)
            .field("combined_flow", &self.combined_flow.is_some())
            .finish()
    }
}

impl FieldFamily {
    pub fn new(name: impl Into<String>, fields: Vec<VectorField>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::usage("a field family needs at least one field"))?;
        let dim = first.dim;
        if fields.iter().any(|f| f.dim != dim) {
            return Err(Error::usage("all fields of a family must share the ambient dimension"));
        }
        Ok(Self {
            name: name.into(),
            fields,
            dim,
            combined_flow: None,
        })
    }

    /// Attaches the exact flow of `Σ cᵢXᵢ` for constant coefficients `c`.
    pub fn with_combined_flow(
        mut self,
        flow: impl Fn(&[f64], &Point, f64) -> Point + Send + Sync + 'static,
    ) -> Self {
        self.combined_flow = Some(Arc::new(flow));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Σ cᵢXᵢ(x)`.
    pub fn combine(&self, coeffs: &[f64], x: &Point) -> Point {
        self.fields
            .iter()
            .zip(coeffs)
            .fold(Point::zeros(), |acc, (f, c)| acc + f.eval(x) * *c)
    }

    pub fn has_combined_flow(&self) -> bool {
        self.combined_flow.is_some()
    }

    pub fn all_fields_have_flows(&self) -> bool {
        self.fields.iter().all(VectorField::has_flow)
    }

    pub fn combined_flow(&self, coeffs: &[f64], x: &Point, t: f64) -> Option<Point> {
        self.combined_flow.as_ref().map(|f| f(coeffs, x, t))
    }
}

/// Outcome of [`bracket_generating_rank`].
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Set when the nesting depth is deep enough that iterated finite
    /// differences are dominated by roundoff.
    pub warning: Option<String>,
}

/// Depth from which nested central differences (step 1e-4) carry relative
/// roundoff of order 1e-4 or worse.
const PRECISION_WARNING_DEPTH: usize = 3;

/// Numerical rank of `𝒱⁰ ∪ … ∪ 𝒱^depth` evaluated at `x`, where
/// `𝒱ⁱ = {[X, V] : X ∈ 𝒱⁰, V ∈ 𝒱ⁱ⁻¹}`.
///
/// `projector`, when given, maps `x` to the orthogonal projector onto the
/// tangent space of the manifold at `x`.
pub fn bracket_generating_rank(
    family: &FieldFamily,
    x: &Point,
    depth: usize,
    projector: Option<&Projector>,
) -> RankReport {
    let h = BRACKET_STEP;
    let mut level: Vec<VectorField> = family.fields.clone();
    let mut vectors: Vec<Point> = level.iter().map(|f| f.eval(x)).collect();
    for _ in 0..depth {
        let next: Vec<VectorField> = family
            .fields
            .iter()
            .flat_map(|base| level.iter().map(move |v| bracket_field(base, v, h)))
            .collect();
        vectors.extend(next.iter().map(|f| f.eval(x)));
        level = next;
    }
    if let Some(proj) = projector {
        let p = proj(x);
        for v in &mut vectors {
            *v = p * *v;
        }
    }

    let dim = family.dim;
    let m = DMatrix::from_fn(vectors.len(), dim, |r, c| vectors[r][c]);
    let singular_values: Vec<f64> = m.singular_values().iter().copied().collect();
    let sigma_max = singular_values.iter().copied().fold(0.0, f64::max);
    let rank = if sigma_max > 0.0 {
        singular_values
            .iter()
            .filter(|&&s| s >= RANK_TOLERANCE * sigma_max)
            .count()
    } else {
        0
    };
    let warning = (depth >= PRECISION_WARNING_DEPTH).then(|| {
        format!(
            "bracket depth {depth} nests {depth} levels of finite differences with h = {h:e}; \
             roundoff may dominate the deepest brackets"
        )
    });
    RankReport {
        rank,
        singular_values,
        warning,
    }
}

/// Orthogonal projector `I − xxᵀ` onto `T_x S²` (for unit `x`).
pub fn sphere_tangent_projector(x: &Point) -> Matrix3<f64> {
    Matrix3::identity() - x * x.transpose()
}

/// Brockett integrator fields on ℝ³:
/// `X₁ = ∂₁ − x₂∂₃`, `X₂ = ∂₂ + x₁∂₃`.
pub fn builtin_brockett() -> FieldFamily {
    let x1 = VectorField::new("X1", 3, |p| Point::new(1.0, 0.0, -p.y))
        .with_flow(|p, t| Point::new(p.x + t, p.y, p.z - p.y * t));
    let x2 = VectorField::new("X2", 3, |p| Point::new(0.0, 1.0, p.x))
        .with_flow(|p, t| Point::new(p.x, p.y + t, p.z + p.x * t));
    FieldFamily::new("brockett", vec![x1, x2])
        .expect("brockett fields share dimension")
        .with_combined_flow(|c, p, t| {
            // x₁, x₂ move linearly; the t² terms of x₃ cancel.
            let (a1, a2) = (c[0], c[1]);
            Point::new(p.x + a1 * t, p.y + a2 * t, p.z + t * (a2 * p.x - a1 * p.y))
        })
}

/// Rotation generators `B₁, B₂, B₃` of the sphere example as angular-velocity axes:
/// `Bᵢx = ωᵢ × x`.
const SPHERE_AXES: [[f64; 3]; 3] = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];

/// `e^{θ[ω]×} x` for a unit axis `ω` (Rodrigues).
fn rotate(axis: &Point, angle: f64, x: &Point) -> Point {
    let (s, c) = angle.sin_cos();
    x * c + axis.cross(x) * s + axis * (axis.dot(x) * (1.0 - c))
}

/// The field `X̃ᵢx = Bᵢx` (`i` in 1..=3) with its exact rotational flow.
pub fn sphere_field(i: usize) -> VectorField {
    assert!((1..=3).contains(&i), "sphere fields are indexed 1..=3");
    let axis = Point::from(SPHERE_AXES[i - 1]);
    VectorField::new(format!("B{i}"), 3, move |p| axis.cross(p)).with_flow(move |p, t| rotate(&axis, t, p))
}

/// Underactuated system on S²: controls along `X̃₁, X̃₂` only.
pub fn builtin_sphere() -> FieldFamily {
    FieldFamily::new("sphere", vec![sphere_field(1), sphere_field(2)])
        .expect("sphere fields share dimension")
        .with_combined_flow(|c, p, t| {
            let omega = Point::from(SPHERE_AXES[0]) * c[0] + Point::from(SPHERE_AXES[1]) * c[1];
            let speed = omega.norm();
            if speed == 0.0 {
                *p
            } else {
                rotate(&(omega / speed), speed * t, p)
            }
        })
}

/// Coordinate frame `∂/∂x₁, …, ∂/∂x_dim`.
pub fn builtin_coordinate(dim: usize) -> FieldFamily {
    assert!((1..=3).contains(&dim), "coordinate frame dimension must be 1, 2 or 3");
    let fields = (0..dim)
        .map(|i| {
            let mut e = Point::zeros();
            e[i] = 1.0;
            VectorField::new(format!("d{}", i + 1), dim, move |_| e).with_flow(move |p, t| p + e * t)
        })
        .collect();
    FieldFamily::new(format!("coordinate{dim}"), fields)
        .expect("coordinate fields share dimension")
        .with_combined_flow(|c, p, t| {
            let mut out = *p;
            for (i, ci) in c.iter().enumerate() {
                out[i] += ci * t;
            }
            out
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brockett_fields_evaluate() {
        let fam = builtin_brockett();
        assert_eq!(fam.len(), 2);
        assert_eq!(fam.dim(), 3);
        let v = fam.fields()[0].evaluate(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v, vec![1.0, 0.0, -2.0]);
        let v = fam.fields()[1].evaluate(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let fam = builtin_brockett();
        assert!(matches!(fam.fields()[0].evaluate(&[1.0, 2.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn sphere_field_matches_matrix_product() {
        // B₁ = [[0,-1,0],[1,0,0],[0,0,0]]
        let b1 = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let x = Point::new(1.0, 0.0, 0.0);
        assert_eq!(sphere_field(1).eval(&x), b1 * x);
        assert_eq!(sphere_field(1).eval(&x), Point::new(0.0, 1.0, 0.0));
        let b2 = Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0);
        let b3 = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let y = Point::new(0.3, -0.4, 0.5);
        assert_abs_diff_eq!(sphere_field(2).eval(&y), b2 * y, epsilon = 1e-15);
        assert_abs_diff_eq!(sphere_field(3).eval(&y), b3 * y, epsilon = 1e-15);
    }

    #[test]
    fn brockett_bracket_is_twice_d3() {
        let fam = builtin_brockett();
        let [x1, x2] = [&fam.fields()[0], &fam.fields()[1]];
        let b = lie_bracket_numeric(x1, x2, &Point::new(3.0, -7.0, 11.0), BRACKET_STEP);
        assert_abs_diff_eq!(b, Point::new(0.0, 0.0, 2.0), epsilon = 1e-6);
    }

    #[test]
    fn self_bracket_vanishes() {
        let fam = builtin_brockett();
        let b = lie_bracket_numeric(&fam.fields()[0], &fam.fields()[0], &Point::new(1.0, 2.0, 3.0), BRACKET_STEP);
        assert_abs_diff_eq!(b, Point::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn sphere_bracket_is_third_generator() {
        let fam = builtin_sphere();
        let x = Point::new(0.0, 0.0, 1.0);
        let b = lie_bracket_numeric(&fam.fields()[0], &fam.fields()[1], &x, BRACKET_STEP);
        assert_abs_diff_eq!(b, sphere_field(3).eval(&x), epsilon = 1e-6);
    }

    #[test]
    fn rank_of_builtins() {
        let x = Point::new(10.0, 20.0, 30.0);
        assert_eq!(bracket_generating_rank(&builtin_brockett(), &x, 1, None).rank, 3);
        assert_eq!(bracket_generating_rank(&builtin_brockett(), &x, 0, None).rank, 2);

        let d1 = FieldFamily::new("d1", vec![builtin_coordinate(3).fields()[0].clone()]).unwrap();
        let report = bracket_generating_rank(&d1, &x, 5, None);
        assert_eq!(report.rank, 1);
        assert!(report.warning.is_some());

        let proj = |p: &Point| sphere_tangent_projector(p);
        let north = Point::new(0.0, 0.0, 1.0);
        let r = bracket_generating_rank(&builtin_sphere(), &north, 1, Some(&proj));
        assert_eq!(r.rank, 2);
        assert!(r.warning.is_none());

        let r2 = bracket_generating_rank(&builtin_coordinate(2), &Point::new(0.3, 0.9, 0.0), 0, None);
        assert_eq!(r2.rank, 2);
    }

    #[test]
    fn sphere_flow_quarter_turn() {
        let x = Point::new(1.0, 0.0, 0.0);
        let y = sphere_field(1).exact_flow(&x, std::f64::consts::FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(y, Point::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn combined_flows_agree_with_single_fields() {
        let x = Point::new(2.0, -1.0, 0.5);
        let b = builtin_brockett();
        assert_abs_diff_eq!(
            b.combined_flow(&[1.0, 0.0], &x, 0.7).unwrap(),
            b.fields()[0].exact_flow(&x, 0.7).unwrap(),
            epsilon = 1e-15
        );
        let s = builtin_sphere();
        let u = Point::new(0.6, 0.0, 0.8);
        assert_abs_diff_eq!(
            s.combined_flow(&[0.0, 2.0], &u, 0.3).unwrap(),
            s.fields()[1].exact_flow(&u, 0.6).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn brockett_combined_flow_solves_the_ode() {
        // Fine RK4 reference for ẋ = a₁X₁ + a₂X₂.
        let fam = builtin_brockett();
        let c = [0.8, -1.3];
        let x0 = Point::new(0.5, 2.0, -1.0);
        let n = 10_000;
        let dt = 2.0 / n as f64;
        let f = |p: &Point| fam.combine(&c, p);
        let mut x = x0;
        for _ in 0..n {
            let k1 = f(&x);
            let k2 = f(&(x + k1 * (dt / 2.0)));
            let k3 = f(&(x + k2 * (dt / 2.0)));
            let k4 = f(&(x + k3 * dt));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        assert_abs_diff_eq!(fam.combined_flow(&c, &x0, 2.0).unwrap(), x, epsilon = 1e-10);
    }
}
