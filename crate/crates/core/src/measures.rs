//! Finite measures as weighted point clouds and as sparse dyadic densities.
//!
//! Conventions used throughout:
//!
//! ```text
//! μ^δ   = Σ_Q μ(Q)/δⁿ χ_Q                 (discretization on origin-anchored dyadic cubes)
//! Ψ_δ   = δ⁻ⁿ Ψ(·/δ),  μ_δ = μ ∗ Ψ_δ       (mollification in ℝⁿ)
//! ψ     = ∫_{fibre} Ψ dℋ^{n−m}             (projected profile on ℝ^m, independent of 𝕍)
//! I_s(μ) = Σ_{i≠j} w_i w_j |x_i − x_j|^{−s}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grassmann::{sample_uniform, Subspace};

/// Integer index of a dyadic cell.
pub type Cell = SmallVec<[i64; 4]>;

/// Finite weighted point set in ℝⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    total_mass: f64,
}

impl PointCloud {
    /// `coords` is row-major, one point per `dim` entries.
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("point dimension must be >= 1".into()));
        }
        if !coords.len().is_multiple_of(dim) || coords.len() / dim != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates and {} weights do not describe points in R^{dim}",
                coords.len(),
                weights.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::EmptySet("point cloud has no points".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidParameter(format!("weight {w} is not a finite nonnegative number")));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        let total_mass = weights.iter().sum();
        Ok(Self {
            dim,
            coords,
            weights,
            total_mass,
        })
    }

    /// Every point gets weight 1.
    pub fn with_unit_weights(dim: usize, coords: Vec<f64>) -> Result<Self> {
        let n = coords.len().checked_div(dim).unwrap_or(0);
        Self::new(dim, coords, vec![1.0; n])
    }

    /// Every point gets weight `1/N`.
    pub fn with_equal_mass(dim: usize, coords: Vec<f64>) -> Result<Self> {
        let n = coords.len().checked_div(dim).unwrap_or(0);
        Self::new(dim, coords, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn from_points(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch("points of differing dimension".into()));
        }
        Self::new(dim, points.concat(), weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points().zip(self.weights.iter().copied())
    }

    /// Applies `f` to every point, keeping weights.
    pub fn map_points(&self, out_dim: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let mut coords = vec![0.0; out_dim * self.len()];
        for (p, out) in self.points().zip(coords.chunks_exact_mut(out_dim.max(1))) {
            f(p, out);
        }
        Self::new(out_dim, coords, self.weights.clone())
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.coords.iter_mut().for_each(|c| *c *= lambda);
        out
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "shift of length {} for points in R^{}",
                shift.len(),
                self.dim
            )));
        }
        self.map_points(self.dim, |p, out| {
            for ((o, a), b) in out.iter_mut().zip(p).zip(shift) {
                *o = a + b;
            }
        })
    }

    pub fn with_scaled_weights(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.dim,
            self.coords.clone(),
            self.weights.iter().map(|w| w * factor).collect(),
        )
    }

    /// Points with the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        let mut weights = Vec::with_capacity(indices.len());
        for &i in indices {
            coords.extend_from_slice(self.point(i));
            weights.push(self.weights[i]);
        }
        Self::new(self.dim, coords, weights)
    }

    /// Union of the two clouds (points of `self` first).
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch("concatenating clouds of different dimension".into()));
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        Self::new(self.dim, coords, weights)
    }

    /// Coordinatewise (min, max).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.points() {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Diagonal of the bounding box; an upper bound for the diameter within a factor √n.
    pub fn extent(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        lo.iter()
            .zip(&hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }
}

/// Origin-anchored dyadic grid of side `2^{−level}` in ℝ^d.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicGrid {
    pub dim: usize,
    pub level: u32,
}

impl DyadicGrid {
    pub fn new(dim: usize, level: u32) -> Self {
        Self { dim, level }
    }

    pub fn side(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    fn inv_side(&self) -> f64 {
        2f64.powi(self.level as i32)
    }

    pub fn cell_of(&self, x: &[f64]) -> Cell {
        let scale = self.inv_side();
        x.iter().map(|c| (c * scale).floor() as i64).collect()
    }

    pub fn cell_center(&self, cell: &[i64]) -> Vec<f64> {
        let h = self.side();
        cell.iter().map(|&k| (k as f64 + 0.5) * h).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.side().powi(self.dim as i32)
    }
}

/// Sparse piecewise-constant density on a dyadic grid; `cells[Q] = c_Q`.
///
/// Mollified fields reuse this type with `c_Q` the value at the centre of `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure {
    pub grid: DyadicGrid,
    pub cells: BTreeMap<Cell, f64>,
}

impl GridMeasure {
    pub fn empty(grid: DyadicGrid) -> Self {
        Self {
            grid,
            cells: BTreeMap::new(),
        }
    }

    pub fn from_cells(grid: DyadicGrid, cells: impl IntoIterator<Item = (Cell, f64)>) -> Result<Self> {
        let mut out = Self::empty(grid);
        for (cell, c) in cells {
            if cell.len() != grid.dim {
                return Err(Error::DimensionMismatch(format!(
                    "cell index of length {} on a grid in R^{}",
                    cell.len(),
                    grid.dim
                )));
            }
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidParameter(format!("density {c} is not finite and nonnegative")));
            }
            *out.cells.entry(cell).or_insert(0.0) += c;
        }
        Ok(out)
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.values().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn support_volume(&self) -> f64 {
        self.cells.values().filter(|c| **c > 0.0).count() as f64 * self.grid.cell_volume()
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            grid: self.grid,
            cells: self.cells.iter().map(|(k, v)| (k.clone(), v * lambda)).collect(),
        }
    }

    /// Value at the cell containing `x` (zero off the support).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.cells.get(&self.grid.cell_of(x)).copied().unwrap_or(0.0)
    }
}

/// `μ^δ`: each cube receives density `μ(Q)/δⁿ`.
pub fn discretize(mu: &PointCloud, level: u32) -> GridMeasure {
    let grid = DyadicGrid::new(mu.dim(), level);
    let inv_vol = 1.0 / grid.cell_volume();
    let mut cells: BTreeMap<Cell, f64> = BTreeMap::new();
    for (p, w) in mu.iter() {
        *cells.entry(grid.cell_of(p)).or_insert(0.0) += w * inv_vol;
    }
    GridMeasure { grid, cells }
}

/// `π_{V♯}μ` in the coordinates of V's frame.
pub fn pushforward(mu: &PointCloud, v: &Subspace) -> Result<PointCloud> {
    if mu.dim() != v.ambient_dim() {
        return Err(Error::DimensionMismatch(format!(
            "cloud in R^{} projected onto a subspace of R^{}",
            mu.dim(),
            v.ambient_dim()
        )));
    }
    mu.map_points(v.dim(), |p, out| v.coordinates_of(p, out))
}

/// `√(Σ c_Q² h^d)`.
pub fn l2_norm(field: &GridMeasure) -> f64 {
    (field.cells.values().map(|c| c * c).sum::<f64>() * field.grid.cell_volume()).sqrt()
}

// ---------------------------------------------------------------------------------------
// Mollifier

fn smooth_step_factor(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Radial profile of Ψ: identically 1 on `[0,1]`, identically 0 on `[2,∞)`, smooth between.
pub fn bump_profile(r: f64) -> f64 {
    if r <= 1.0 {
        return 1.0;
    }
    if r >= 2.0 {
        return 0.0;
    }
    let a = smooth_step_factor(2.0 - r);
    let b = smooth_step_factor(r - 1.0);
    a / (a + b)
}

/// Area of the unit sphere `S^{d−1}` (with `S⁰` = two points).
pub fn unit_sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * (half * std::f64::consts::PI.ln() - ln_gamma(half)).exp()
}

/// Composite Simpson rule with `2·half_intervals` subintervals.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, half_intervals: usize) -> f64 {
    let n = 2 * half_intervals.max(1);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

/// The fixed mollifier Ψ on ℝ^dim at scale δ: `Ψ_δ(x) = δ^{−dim} Ψ(|x|/δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub dim: usize,
    pub scale: f64,
}

impl MollifierSpec {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 || !(scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mollifier needs dim >= 1 and scale > 0 (got {dim}, {scale})"
            )));
        }
        Ok(Self { dim, scale })
    }

    /// Unscaled profile Ψ(x).
    pub fn profile(&self, x: &[f64]) -> f64 {
        bump_profile(x.iter().map(|c| c * c).sum::<f64>().sqrt())
    }

    /// `Ψ_δ` at distance `r` from the centre.
    #[inline]
    pub fn scaled_value(&self, r: f64) -> f64 {
        bump_profile(r / self.scale) / self.scale.powi(self.dim as i32)
    }

    /// `‖Ψ‖₁` (which equals `‖Ψ_δ‖₁`).
    pub fn l1_norm(&self) -> f64 {
        let d = self.dim as i32;
        unit_sphere_area(self.dim) * (1.0 / d as f64 + simpson(|r| bump_profile(r) * r.powi(d - 1), 1.0, 2.0, 2000))
    }

    /// `‖Ψ‖₂²`.
    pub fn l2_norm_sq(&self) -> f64 {
        let d = self.dim as i32;
        unit_sphere_area(self.dim)
            * (1.0 / d as f64 + simpson(|r| bump_profile(r).powi(2) * r.powi(d - 1), 1.0, 2.0, 2000))
    }
}

/// Tabulated radial profile on `[0, 2]` with linear interpolation.
#[derive(Clone, Debug)]
pub struct RadialKernel {
    /// Dimension of the space the profile lives on.
    pub dim: usize,
    step: f64,
    table: Vec<f64>,
}

const KERNEL_TABLE_INTERVALS: usize = 8192;

impl RadialKernel {
    /// `ψ = Ψ_𝕍` for Ψ on ℝⁿ projected to ℝ^m:
    /// `ψ(ρ) = |S^{k−1}| ∫₀^{√(4−ρ²)} Ψ(√(ρ²+t²)) t^{k−1} dt` with `k = n − m`.
    fn build(n: usize, m: usize) -> Self {
        let k = n - m;
        let step = 2.0 / KERNEL_TABLE_INTERVALS as f64;
        let area = if k > 0 { unit_sphere_area(k) } else { 0.0 };
        let table = (0..=KERNEL_TABLE_INTERVALS)
            .map(|i| {
                let rho = i as f64 * step;
                if k == 0 {
                    return bump_profile(rho);
                }
                let reach = (4.0 - rho * rho).max(0.0).sqrt();
                if reach == 0.0 {
                    return 0.0;
                }
                area * simpson(
                    |t| bump_profile((rho * rho + t * t).sqrt()) * t.powi(k as i32 - 1),
                    0.0,
                    reach,
                    600,
                )
            })
            .collect();
        Self { dim: m, step, table }
    }

    /// Shared instance of the projected profile for Ψ on ℝⁿ and target ℝ^m.
    pub fn projected(n: usize, m: usize) -> Result<Arc<Self>> {
        if m == 0 || m > n {
            return Err(Error::InvalidParameter(format!("cannot project R^{n} onto R^{m}")));
        }
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<RadialKernel>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        Ok(guard
            .entry((n, m))
            .or_insert_with(|| Arc::new(Self::build(n, m)))
            .clone())
    }

    /// The bump itself on ℝ^d.
    pub fn bump(d: usize) -> Result<Arc<Self>> {
        Self::projected(d, d)
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        if r >= 2.0 {
            return 0.0;
        }
        let x = r / self.step;
        let i = x as usize;
        let frac = x - i as f64;
        self.table[i] * (1.0 - frac) + self.table[(i + 1).min(self.table.len() - 1)] * frac
    }

    /// `δ^{−dim} ψ(r/δ)`.
    #[inline]
    pub fn scaled_value(&self, r: f64, delta: f64) -> f64 {
        self.value(r / delta) / delta.powi(self.dim as i32)
    }

    pub fn l1_norm(&self) -> f64 {
        unit_sphere_area(self.dim) * simpson(|r| self.value(r) * r.powi(self.dim as i32 - 1), 0.0, 2.0, 4096)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        unit_sphere_area(self.dim)
            * simpson(|r| self.value(r).powi(2) * r.powi(self.dim as i32 - 1), 0.0, 2.0, 4096)
    }
}

/// Calls `f(cell)` for every cell index in the box `lo..=hi`.
fn for_each_cell(lo: &[i64], hi: &[i64], mut f: impl FnMut(&Cell)) {
    if lo.iter().zip(hi).any(|(a, b)| a > b) {
        return;
    }
    let mut cur: Cell = lo.iter().copied().collect();
    loop {
        f(&cur);
        let mut k = 0;
        loop {
            if k == cur.len() {
                return;
            }
            if cur[k] < hi[k] {
                cur[k] += 1;
                break;
            }
            cur[k] = lo[k];
            k += 1;
        }
    }
}

/// Samples `Σ_i w_i K(|x − x_i|)` at the centres of all grid cells within `radius` of an atom.
fn radial_field<'a>(
    atoms: impl Iterator<Item = (&'a [f64], f64)>,
    grid: DyadicGrid,
    radius: f64,
    kernel: impl Fn(f64) -> f64,
) -> GridMeasure {
    let h = grid.side();
    let mut acc: HashMap<Cell, f64> = HashMap::new();
    let mut lo = vec![0i64; grid.dim];
    let mut hi = vec![0i64; grid.dim];
    for (x, w) in atoms {
        if w == 0.0 {
            continue;
        }
        for k in 0..grid.dim {
            lo[k] = ((x[k] - radius) / h).floor() as i64;
            hi[k] = ((x[k] + radius) / h).floor() as i64;
        }
        for_each_cell(&lo, &hi, |cell| {
            let mut r2 = 0.0;
            for k in 0..grid.dim {
                let c = (cell[k] as f64 + 0.5) * h - x[k];
                r2 += c * c;
            }
            if r2 < radius * radius {
                let v = kernel(r2.sqrt());
                if v > 0.0 {
                    *acc.entry(cell.clone()).or_insert(0.0) += w * v;
                }
            }
        });
    }
    GridMeasure {
        grid,
        cells: acc.into_iter().collect(),
    }
}

fn check_resolution(eval: &DyadicGrid, delta: f64) -> Result<()> {
    let max_side = delta / 4.0;
    if eval.side() > max_side {
        return Err(Error::Resolution {
            eval_side: eval.side(),
            max_side,
        });
    }
    Ok(())
}

/// `μ_δ = μ ∗ Ψ_δ` sampled at the centres of `eval_grid` cells.
pub fn mollify(mu: &PointCloud, spec: &MollifierSpec, eval_grid: DyadicGrid) -> Result<GridMeasure> {
    if mu.dim() != spec.dim || eval_grid.dim != spec.dim {
        return Err(Error::DimensionMismatch(format!(
            "cloud in R^{}, mollifier on R^{}, grid on R^{}",
            mu.dim(),
            spec.dim,
            eval_grid.dim
        )));
    }
    check_resolution(&eval_grid, spec.scale)?;
    Ok(radial_field(mu.iter(), eval_grid, 2.0 * spec.scale, |r| spec.scaled_value(r)))
}

/// `ν ∗ φ_δ` for a tabulated radial profile φ on ℝ^dim.
pub fn convolve_radial(
    nu: &PointCloud,
    kernel: &RadialKernel,
    delta: f64,
    eval_grid: DyadicGrid,
) -> Result<GridMeasure> {
    if nu.dim() != kernel.dim || eval_grid.dim != kernel.dim {
        return Err(Error::DimensionMismatch(format!(
            "cloud in R^{}, kernel on R^{}",
            nu.dim(),
            kernel.dim
        )));
    }
    check_resolution(&eval_grid, delta)?;
    Ok(radial_field(nu.iter(), eval_grid, 2.0 * delta, |r| kernel.scaled_value(r, delta)))
}

/// `(μ_𝕍)_δ = π_{𝕍♯}μ ∗ ψ_δ` sampled on the level `delta_level + refine` grid of ℝ^m.
pub fn projected_mollification(
    mu: &PointCloud,
    v: &Subspace,
    delta: f64,
    eval_level: u32,
) -> Result<GridMeasure> {
    let kernel = RadialKernel::projected(v.ambient_dim(), v.dim())?;
    let projected = pushforward(mu, v)?;
    convolve_radial(&projected, &kernel, delta, DyadicGrid::new(v.dim(), eval_level))
}

/// Both sides of `(μ_𝕍)_δ = (μ_δ)_𝕍` on a common grid of ℝ^m.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CommutationReport {
    /// `‖(μ_𝕍)_δ − (μ_δ)_𝕍‖₂`.
    pub absolute: f64,
    /// `‖(μ_𝕍)_δ‖₂`.
    pub reference_norm: f64,
    pub relative: f64,
}

/// Fibre nodes `(k + ½)h` (per coordinate of V^⊥) whose distance to `centre` is below `reach`.
fn fibre_nodes(centre: &[f64], reach: f64, h: f64) -> Vec<Vec<f64>> {
    if centre.is_empty() {
        return vec![Vec::new()];
    }
    let lo: Vec<i64> = centre.iter().map(|c| ((c - reach) / h - 0.5).floor() as i64).collect();
    let hi: Vec<i64> = centre.iter().map(|c| ((c + reach) / h - 0.5).ceil() as i64).collect();
    let mut out = Vec::new();
    for_each_cell(&lo, &hi, |k| {
        let z: Vec<f64> = k.iter().map(|&i| (i as f64 + 0.5) * h).collect();
        let d2: f64 = z.iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 <= reach * reach {
            out.push(z);
        }
    });
    out
}

/// Ambient point `Q_V y + Q_⊥ z`.
#[inline]
fn lift_point(frame: &DMatrix<f64>, perp: &DMatrix<f64>, y: &[f64], z: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, yj) in y.iter().enumerate() {
            acc += frame[(i, j)] * yj;
        }
        for (j, zj) in z.iter().enumerate() {
            acc += perp[(i, j)] * zj;
        }
        *o = acc;
    }
}

/// Compares `(μ_𝕍)_δ` with the fibre integral of the sampled field `μ_δ`.
///
/// Both live on the level `delta_level + refine` grid. The fibre integral is a midpoint rule
/// with nodes at the same spacing, reading `μ_δ` at the centre of the ℝⁿ cell containing each
/// node, so the discrepancy is a first-order quadrature error that vanishes as `refine` grows.
pub fn commutation_check(
    mu: &PointCloud,
    v: &Subspace,
    delta_level: u32,
    refine: u32,
) -> Result<CommutationReport> {
    let (n, m) = (v.ambient_dim(), v.dim());
    if mu.dim() != n {
        return Err(Error::DimensionMismatch(format!("cloud in R^{} vs subspace of R^{n}", mu.dim())));
    }
    let delta = 0.5f64.powi(delta_level as i32);
    let eval_level = delta_level + refine;
    let eval_n = DyadicGrid::new(n, eval_level);
    let eval_m = DyadicGrid::new(m, eval_level);
    check_resolution(&eval_n, delta)?;
    let h = eval_n.side();
    let spec = MollifierSpec::new(n, delta)?;

    let lhs = projected_mollification(mu, v, delta, eval_level)?;

    let perp = v.complement_frame();
    let frame = v.frame();
    let slack = h * (n as f64).sqrt();
    let reach = 2.0 * delta + slack;
    let mut rhs: HashMap<Cell, f64> = HashMap::new();
    let mut y_lo = vec![0i64; m];
    let mut y_hi = vec![0i64; m];
    let mut py = vec![0.0; m];
    let mut x = vec![0.0; n];
    let node_volume = h.powi((n - m) as i32);
    for (p, w) in mu.iter() {
        if w == 0.0 {
            continue;
        }
        v.coordinates_of(p, &mut py);
        let pz: Vec<f64> = (0..n - m)
            .map(|j| (0..n).map(|i| perp[(i, j)] * p[i]).sum())
            .collect();
        let nodes = fibre_nodes(&pz, reach, h);
        for k in 0..m {
            y_lo[k] = ((py[k] - reach) / h).floor() as i64;
            y_hi[k] = ((py[k] + reach) / h).floor() as i64;
        }
        for_each_cell(&y_lo, &y_hi, |ycell| {
            let y: Vec<f64> = ycell.iter().map(|&k| (k as f64 + 0.5) * h).collect();
            let mut total = 0.0;
            for z in &nodes {
                lift_point(frame, &perp, &y, z, &mut x);
                let mut r2 = 0.0;
                for i in 0..n {
                    let c = ((x[i] / h).floor() + 0.5) * h - p[i];
                    r2 += c * c;
                }
                if r2 < 4.0 * delta * delta {
                    total += spec.scaled_value(r2.sqrt());
                }
            }
            if total > 0.0 {
                *rhs.entry(ycell.clone()).or_insert(0.0) += w * total * node_volume;
            }
        });
    }

    let cell_vol = eval_m.cell_volume();
    let mut diff_sq = 0.0;
    for (cell, a) in &lhs.cells {
        let b = rhs.get(cell).copied().unwrap_or(0.0);
        diff_sq += (a - b) * (a - b);
    }
    for (cell, b) in &rhs {
        if !lhs.cells.contains_key(cell) {
            diff_sq += b * b;
        }
    }
    let absolute = (diff_sq * cell_vol).sqrt();
    let reference_norm = l2_norm(&lhs);
    Ok(CommutationReport {
        absolute,
        reference_norm,
        relative: if reference_norm > 0.0 { absolute / reference_norm } else { 0.0 },
    })
}

/// The three norms of `‖(μ_𝕍)_δ‖₂ ≲ ‖(μ^δ)_𝕍‖₂ ≲ ‖(μ_𝕍)_{cδ}‖₂` with `c = 4√n`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub delta: f64,
    pub c: f64,
    pub lhs: f64,
    pub mid: f64,
    pub rhs: f64,
    /// `lhs / mid`.
    pub lower_ratio: f64,
    /// `mid / rhs`.
    pub upper_ratio: f64,
}

/// `(μ^δ)_𝕍`: the fibre integral of the discretized density, sampled on the eval grid of ℝ^m.
pub fn projected_discretization(
    mu: &PointCloud,
    v: &Subspace,
    delta_level: u32,
    eval_level: u32,
) -> Result<GridMeasure> {
    let (n, m) = (v.ambient_dim(), v.dim());
    if mu.dim() != n {
        return Err(Error::DimensionMismatch(format!("cloud in R^{} vs subspace of R^{n}", mu.dim())));
    }
    let coarse = discretize(mu, delta_level);
    let delta = coarse.grid.side();
    let h = 0.5f64.powi(eval_level as i32);
    let perp = v.complement_frame();
    let frame = v.frame();
    let half_diag = 0.5 * delta * (n as f64).sqrt();
    let reach = half_diag + h;
    let node_volume = h.powi((n - m) as i32);
    let mut out: HashMap<Cell, f64> = HashMap::new();
    let mut py = vec![0.0; m];
    let mut x = vec![0.0; n];
    let mut y_lo = vec![0i64; m];
    let mut y_hi = vec![0i64; m];
    for (cube, density) in &coarse.cells {
        let centre = coarse.grid.cell_center(cube);
        v.coordinates_of(&centre, &mut py);
        let pz: Vec<f64> = (0..n - m)
            .map(|j| (0..n).map(|i| perp[(i, j)] * centre[i]).sum())
            .collect();
        let nodes = fibre_nodes(&pz, reach, h);
        for k in 0..m {
            y_lo[k] = ((py[k] - reach) / h).floor() as i64;
            y_hi[k] = ((py[k] + reach) / h).floor() as i64;
        }
        for_each_cell(&y_lo, &y_hi, |ycell| {
            let y: Vec<f64> = ycell.iter().map(|&k| (k as f64 + 0.5) * h).collect();
            let mut inside = 0usize;
            for z in &nodes {
                lift_point(frame, &perp, &y, z, &mut x);
                if x.iter().zip(cube.iter()).all(|(xi, &qi)| (xi / delta).floor() as i64 == qi) {
                    inside += 1;
                }
            }
            if inside > 0 {
                *out.entry(ycell.clone()).or_insert(0.0) += density * inside as f64 * node_volume;
            }
        });
    }
    Ok(GridMeasure {
        grid: DyadicGrid::new(m, eval_level),
        cells: out.into_iter().collect(),
    })
}

pub fn sandwich_check(mu: &PointCloud, v: &Subspace, delta_level: u32, refine: u32) -> Result<SandwichReport> {
    let n = v.ambient_dim();
    let delta = 0.5f64.powi(delta_level as i32);
    let c = 4.0 * (n as f64).sqrt();
    let eval_level = delta_level + refine;
    check_resolution(&DyadicGrid::new(n, eval_level), delta)?;
    let lhs = l2_norm(&projected_mollification(mu, v, delta, eval_level)?);
    let mid = l2_norm(&projected_discretization(mu, v, delta_level, eval_level)?);
    let rhs = l2_norm(&projected_mollification(mu, v, c * delta, eval_level)?);
    Ok(SandwichReport {
        delta,
        c,
        lhs,
        mid,
        rhs,
        lower_ratio: lhs / mid,
        upper_ratio: mid / rhs,
    })
}

// ---------------------------------------------------------------------------------------
// Energies

/// Atomic Riesz energy over ordered pairs `i ≠ j`; coincident positive atoms give `+∞`.
pub fn riesz_energy(mu: &PointCloud, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("Riesz exponent must be positive, got {s}")));
    }
    let n = mu.len();
    let d = mu.dim();
    let coords = mu.coords();
    let weights = mu.weights();
    let half_s = s / 2.0;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let wi = weights[i];
            if wi == 0.0 {
                return 0.0;
            }
            let xi = &coords[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..n {
                if j == i || weights[j] == 0.0 {
                    continue;
                }
                let xj = &coords[j * d..(j + 1) * d];
                let mut r2 = 0.0;
                for k in 0..d {
                    let t = xi[k] - xj[k];
                    r2 += t * t;
                }
                if r2 == 0.0 {
                    return f64::INFINITY;
                }
                acc += weights[j] * r2.powf(-half_s);
            }
            wi * acc
        })
        .collect();
    Ok(rows.iter().sum())
}

/// `∫_{[0,1]^d}∫_{[0,1]^d} |x − y|^{−s} dx dy` for `0 < s < d`.
///
/// Writing the integral as `2^d ∫_{[0,1]^d} ∏(1 − u_i) |u|^{−s} du` and splitting `[0,1]^d`
/// into the d pyramids on which one coordinate is largest (`u = t·(1, v)`), the radial
/// integral is exact and the smooth remainder over `v ∈ [0,1]^{d−1}` is done by Simpson's rule.
pub fn cube_self_energy(d: usize, s: f64) -> Result<f64> {
    if d == 0 || !(s > 0.0) || s >= d as f64 {
        return Err(Error::InvalidParameter(format!(
            "cube self-energy needs 0 < s < d, got s = {s}, d = {d}"
        )));
    }
    if d > 4 {
        return Err(Error::InvalidParameter(format!("cube self-energy implemented for d <= 4, got {d}")));
    }
    // ∫₀¹ (1 − t) ∏(1 − t v_i) t^{d−1−s} dt, by expanding the polynomial in t.
    let radial = |v: &[f64]| {
        let mut poly = vec![1.0, -1.0];
        for &vi in v {
            let mut next = vec![0.0; poly.len() + 1];
            for (k, a) in poly.iter().enumerate() {
                next[k] += a;
                next[k + 1] -= a * vi;
            }
            poly = next;
        }
        poly.iter()
            .enumerate()
            .map(|(k, a)| a / (k as f64 + d as f64 - s))
            .sum::<f64>()
    };
    let inner = |v: &[f64]| radial(v) * (1.0 + v.iter().map(|x| x * x).sum::<f64>()).powf(-s / 2.0);
    let half = match d {
        1 | 2 => 400,
        3 => 80,
        _ => 24,
    };
    let pyramid = match d {
        1 => inner(&[]),
        2 => simpson(|a| inner(&[a]), 0.0, 1.0, half),
        3 => simpson(|a| simpson(|b| inner(&[a, b]), 0.0, 1.0, half), 0.0, 1.0, half),
        _ => simpson(
            |a| simpson(|b| simpson(|c| inner(&[a, b, c]), 0.0, 1.0, half), 0.0, 1.0, half),
            0.0,
            1.0,
            half,
        ),
    };
    Ok(2f64.powi(d as i32) * d as f64 * pyramid)
}

/// `I_s(ν)` for `ν = Σ c_Q ℒ^d⌞Q`: distinct cubes interact as atoms at their centres, and each
/// cube contributes its exact self-energy `c_Q² δ^{2d−s} D(d,s)`.
pub fn riesz_energy_grid(nu: &GridMeasure, s: f64) -> Result<f64> {
    let d = nu.grid.dim;
    let self_energy = cube_self_energy(d, s)?;
    let delta = nu.grid.side();
    let cells: Vec<(Vec<f64>, f64)> = nu
        .cells
        .iter()
        .filter(|(_, c)| **c > 0.0)
        .map(|(q, c)| (nu.grid.cell_center(q), c * nu.grid.cell_volume()))
        .collect();
    let diagonal: f64 = nu.cells.values().map(|c| c * c).sum::<f64>() * delta.powf(2.0 * d as f64 - s) * self_energy;
    let coords: Vec<f64> = cells.iter().flat_map(|(x, _)| x.iter().copied()).collect();
    let weights: Vec<f64> = cells.iter().map(|(_, w)| *w).collect();
    let off = if weights.len() >= 2 {
        riesz_energy(&PointCloud::new(d, coords, weights)?, s)?
    } else {
        0.0
    };
    Ok(diagonal + off)
}

// ---------------------------------------------------------------------------------------
// Slicing and averaged projections

/// `ℝ^{n−l} × Π[k_i δ, (k_i + 1)δ)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slab {
    pub ambient_dim: usize,
    pub vertical_dim: usize,
    pub level: u32,
    pub index: Vec<i64>,
}

impl Slab {
    pub fn delta(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let h = 2f64.powi(self.level as i32);
        x[self.ambient_dim - self.vertical_dim..]
            .iter()
            .zip(&self.index)
            .all(|(c, &k)| (c * h).floor() as i64 == k)
    }
}

#[derive(Clone, Debug)]
pub struct SlabPiece {
    pub slab: Slab,
    /// Points of the cloud inside the slab.
    pub cloud: PointCloud,
    /// The same points with the last l coordinates dropped.
    pub shadow: PointCloud,
}

/// Partitions the cloud by the dyadic indices of its last `l` coordinates, ordered by slab index.
pub fn slice_horizontal(cloud: &PointCloud, l: usize, level: u32) -> Result<Vec<SlabPiece>> {
    let n = cloud.dim();
    if l == 0 || l >= n {
        return Err(Error::InvalidParameter(format!("need 0 < l < n, got l = {l}, n = {n}")));
    }
    let grid = DyadicGrid::new(l, level);
    let mut buckets: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points().enumerate() {
        buckets.entry(grid.cell_of(&p[n - l..])).or_default().push(i);
    }
    buckets
        .into_iter()
        .map(|(index, members)| {
            let piece = cloud.subset(&members)?;
            let shadow = piece.map_points(n - l, |p, out| out.copy_from_slice(&p[..n - l]))?;
            Ok(SlabPiece {
                slab: Slab {
                    ambient_dim: n,
                    vertical_dim: l,
                    level,
                    index: index.to_vec(),
                },
                cloud: piece,
                shadow,
            })
        })
        .collect()
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let count = values.len() as f64;
        let mean = values.iter().sum::<f64>() / count;
        let std_error = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
            (var / count).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            samples: values.len(),
        }
    }
}

/// Average over `V ∈ G(d, k)` of `‖(ν_V)_δ‖₂²`, where the projected measure is mollified by the
/// bump on ℝ^k and the norm is taken on a grid four times finer than δ.
pub fn avg_projection_l2<R: Rng + ?Sized>(
    nu: &PointCloud,
    k: usize,
    delta_level: u32,
    num_dirs: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if num_dirs == 0 {
        return Err(Error::InvalidParameter("need at least one direction".into()));
    }
    let delta = 0.5f64.powi(delta_level as i32);
    let kernel = RadialKernel::bump(k)?;
    let grid = DyadicGrid::new(k, delta_level + 2);
    let mut values = Vec::with_capacity(num_dirs);
    for _ in 0..num_dirs {
        let v = sample_uniform(nu.dim(), k, rng)?;
        let field = convolve_radial(&pushforward(nu, &v)?, &kernel, delta, grid)?;
        values.push(l2_norm(&field).powi(2));
    }
    Ok(McEstimate::from_samples(&values))
}
