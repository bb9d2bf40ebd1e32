//! Kernel density estimation of the swarm and the reaction-rate feedback
//! `qᵢ = rᵢ(ρ̃ − y^d)` that closes the mean-field loop.

use serde::{Deserialize, Serialize};

use crate::domains::{Domain, SphereDomain};
use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::vectorfields::Point;

/// Default cap on transition rates (1/s), keeping the feedback bounded.
pub const DEFAULT_RATE_CAP: f64 = 1e6;

/// The smooth bump `exp(−1/(1 − u²))` for `|u| < 1`, zero otherwise.
#[inline]
pub fn bump(u: f64) -> f64 {
    let u2 = u * u;
    if u2 < 1.0 {
        (-1.0 / (1.0 - u2)).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelVariant {
    /// Bump of the Euclidean distance in ℝ^dim.
    EuclideanBump { dim: usize },
    /// Bump of the great-circle distance on S².
    SphereBump,
}

/// Compactly supported bump kernel `K_ε` with its normalization `c(ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    epsilon: f64,
    variant: KernelVariant,
    c_eps: f64,
}

impl Kernel {
    pub fn new(variant: KernelVariant, epsilon: f64) -> Result<Self> {
        let c_eps = normalization_constant(variant, epsilon)?;
        Ok(Self {
            epsilon,
            variant,
            c_eps,
        })
    }

    pub fn euclidean(dim: usize, epsilon: f64) -> Result<Self> {
        Self::new(KernelVariant::EuclideanBump { dim }, epsilon)
    }

    pub fn sphere(epsilon: f64) -> Result<Self> {
        Self::new(KernelVariant::SphereBump, epsilon)
    }

    /// Kernel matching the geometry of `domain`.
    pub fn for_domain(domain: &Domain, epsilon: f64) -> Result<Self> {
        match domain {
            Domain::Box(b) => Self::euclidean(b.dim(), epsilon),
            Domain::Sphere(_) => Self::sphere(epsilon),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn variant(&self) -> KernelVariant {
        self.variant
    }

    /// `c(ε)`, with `c(ε)∫K_ε(x, y)dx = 1`.
    pub fn c_eps(&self) -> f64 {
        self.c_eps
    }

    /// Intrinsic distance used by the kernel.
    #[inline]
    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        match self.variant {
            KernelVariant::EuclideanBump { .. } => (x - y).norm(),
            KernelVariant::SphereBump => SphereDomain.geodesic_distance(x, y),
        }
    }

    /// Unnormalized `K_ε(x, y)`.
    #[inline]
    pub fn value(&self, x: &Point, y: &Point) -> f64 {
        match self.variant {
            KernelVariant::EuclideanBump { .. } => {
                // Same as bump(|x − y|/ε) without the square root.
                let u2 = (x - y).norm_squared() / (self.epsilon * self.epsilon);
                if u2 < 1.0 {
                    (-1.0 / (1.0 - u2)).exp()
                } else {
                    0.0
                }
            }
            KernelVariant::SphereBump => {
                if x.dot(y) <= self.epsilon.cos() {
                    return 0.0;
                }
                bump(self.distance(x, y) / self.epsilon)
            }
        }
    }

    /// Ambient Euclidean radius that contains the kernel support.
    /// On the sphere the chord `2 sin(ε/2)` never exceeds `ε`.
    fn ambient_radius(&self) -> f64 {
        self.epsilon
    }
}

/// Unit-sphere surface measure `|S^{d−1}|` for d = 1, 2, 3.
fn sphere_surface(dim: usize) -> Result<f64> {
    match dim {
        1 => Ok(2.0),
        2 => Ok(2.0 * std::f64::consts::PI),
        3 => Ok(4.0 * std::f64::consts::PI),
        _ => Err(Error::usage(format!("Euclidean kernels support dimensions 1 to 3, got {dim}"))),
    }
}

/// `1 / ∫K_ε(x, y)dx` by radial quadrature (free space, no boundary correction).
pub fn normalization_constant(variant: KernelVariant, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::usage(format!("kernel width must be positive, got {epsilon}")));
    }
    let integral = match variant {
        KernelVariant::EuclideanBump { dim } => {
            let surface = sphere_surface(dim)?;
            let p = (dim - 1) as i32;
            // Scale-free: ∫ = |S^{d−1}| ε^d ∫₀¹ bump(u) u^{d−1} du.
            let radial = adaptive_simpson(&|u| bump(u) * u.powi(p), 0.0, 1.0, 1e-14);
            surface * epsilon.powi(dim as i32) * radial
        }
        KernelVariant::SphereBump => {
            if epsilon > std::f64::consts::PI {
                return Err(Error::usage("sphere kernel width must not exceed π"));
            }
            let scale = epsilon * epsilon;
            let radial = adaptive_simpson(
                &|t| bump(t / epsilon) * t.sin(),
                0.0,
                epsilon,
                1e-14 * scale,
            );
            2.0 * std::f64::consts::PI * radial
        }
    };
    Ok(1.0 / integral)
}

/// A [`SpatialHash`] has at most this many cells per stored point (plus a
/// small constant); cells grow beyond the query radius to respect it.
const CELLS_PER_POINT: usize = 8;

/// Dense uniform-grid bucket index over a point set. Cells are at least as
/// wide as the query radius, so a query touches at most 27 cells.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    cell: f64,
    origin: [f64; 3],
    dims: [usize; 3],
    points: Vec<Point>,
    /// `order[starts[c]..starts[c + 1]]` are the points in cell `c`.
    starts: Vec<u32>,
    order: Vec<u32>,
}

impl SpatialHash {
    pub fn build(points: Vec<Point>, radius: f64) -> Self {
        assert!(radius > 0.0, "hash cell width must be positive");
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let limit = CELLS_PER_POINT * points.len() + 4096;
        let dims_for = |cell: f64| {
            let mut dims = [1usize; 3];
            for a in 0..3 {
                dims[a] = ((hi[a] - lo[a]) / cell).floor() as usize + 1;
            }
            dims
        };
        let mut cell = radius;
        let mut dims = dims_for(cell);
        while dims.iter().map(|&d| d as f64).product::<f64>() > limit as f64 {
            cell *= 1.5;
            dims = dims_for(cell);
        }
        let mut hash = Self {
            cell,
            origin: lo,
            dims,
            points,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let n_cells = dims.iter().product::<usize>();
        let cells: Vec<usize> = hash
            .points
            .iter()
            .map(|p| {
                let i = hash.index_of(p);
                hash.linear(i)
            })
            .collect();
        // Counting sort; stable, so sums over a cell are in index order.
        let mut starts = vec![0u32; n_cells + 1];
        for &c in &cells {
            starts[c + 1] += 1;
        }
        for c in 0..n_cells {
            starts[c + 1] += starts[c];
        }
        let mut fill = starts.clone();
        let mut order = vec![0u32; cells.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        hash.starts = starts;
        hash.order = order;
        hash
    }

    #[inline]
    fn index_of(&self, p: &Point) -> [i64; 3] {
        let mut i = [0i64; 3];
        for a in 0..3 {
            i[a] = ((p[a] - self.origin[a]) / self.cell).floor() as i64;
        }
        i
    }

    #[inline]
    fn linear(&self, i: [i64; 3]) -> usize {
        i[0] as usize + self.dims[0] * (i[1] as usize + self.dims[1] * i[2] as usize)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Calls `f` on every stored point in the cells adjacent to `x`
    /// (a superset of the points within the query radius).
    pub fn for_each_candidate(&self, x: &Point, mut f: impl FnMut(&Point)) {
        if self.points.is_empty() {
            return;
        }
        let base = self.index_of(x);
        let range = |a: usize| {
            let lo = (base[a] - 1).max(0);
            let hi = (base[a] + 1).min(self.dims[a] as i64 - 1);
            lo..=hi
        };
        for k in range(2) {
            for j in range(1) {
                for i in range(0) {
                    let c = self.linear([i, j, k]);
                    let (s, e) = (self.starts[c] as usize, self.starts[c + 1] as usize);
                    for &idx in &self.order[s..e] {
                        f(&self.points[idx as usize]);
                    }
                }
            }
        }
    }
}

/// `ρ̃(x) = c(ε)·(1/N_p)·Σⱼ K_ε(x, xⱼ)` over a frozen set of contributing points.
#[derive(Debug, Clone)]
pub struct DensityEstimator {
    kernel: Kernel,
    hash: SpatialHash,
    n_total: usize,
}

impl DensityEstimator {
    /// `positions` are the particles contributing mass; `n_total` is the swarm size `N_p`.
    pub fn new(kernel: Kernel, positions: Vec<Point>, n_total: usize) -> Result<Self> {
        if n_total == 0 {
            return Err(Error::usage("swarm size must be positive"));
        }
        if positions.len() > n_total {
            return Err(Error::usage("more contributing particles than the swarm size"));
        }
        let hash = SpatialHash::build(positions, kernel.ambient_radius());
        Ok(Self {
            kernel,
            hash,
            n_total,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn density(&self, x: &Point) -> f64 {
        let mut sum = 0.0;
        self.hash.for_each_candidate(x, |p| sum += self.kernel.value(x, p));
        self.kernel.c_eps * sum / self.n_total as f64
    }
}

/// Brute-force `ρ̃` without the spatial index.
pub fn kde(kernel: &Kernel, positions: &[Point], n_total: usize, x: &Point) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let sum: f64 = positions.iter().map(|p| kernel.value(x, p)).sum();
    kernel.c_eps * sum / n_total as f64
}

/// Piecewise-linear reaction functions `r₁(s) = k·(−s)₊`, `r₂(s) = k·s₊`,
/// each capped at `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionFunctions {
    pub k: f64,
    pub cap: f64,
}

impl ReactionFunctions {
    pub fn new(k: f64) -> Result<Self> {
        Self::with_cap(k, DEFAULT_RATE_CAP)
    }

    pub fn with_cap(k: f64, cap: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::usage(format!("reaction gain must be positive, got {k}")));
        }
        if !(cap > 0.0) {
            return Err(Error::usage("rate cap must be positive"));
        }
        Ok(Self { k, cap })
    }

    /// Rate of stopping; supported on `s ≤ 0`.
    #[inline]
    pub fn r1(&self, s: f64) -> f64 {
        if s < 0.0 {
            (-self.k * s).min(self.cap)
        } else {
            0.0
        }
    }

    /// Rate of resuming motion; supported on `s ≥ 0`.
    #[inline]
    pub fn r2(&self, s: f64) -> f64 {
        if s > 0.0 {
            (self.k * s).min(self.cap)
        } else {
            0.0
        }
    }

    /// `(q₁, q₂) = (r₁(ρ − y^d), r₂(ρ − y^d))`.
    #[inline]
    pub fn transition_rates(&self, rho: f64, target: f64) -> (f64, f64) {
        let s = rho - target;
        (self.r1(s), self.r2(s))
    }
}
