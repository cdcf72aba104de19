//! Dimension estimators over dyadic scales.
//!
//! All counting uses origin-anchored dyadic cells. Finite samples only resolve a window of
//! scales, so every estimator reports the levels it used and refuses windows where the
//! counts are either too thin or merely enumerate the sample.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::Subspace;
use crate::measures::{convolve_radial, l2_norm, pushforward, Cell, DyadicGrid, PointCloud, RadialKernel};

/// Counts must exceed this at every level used by a box fit.
pub const MIN_COUNT: f64 = 10.0;
/// Counts must stay below this fraction of the distinct-point count.
pub const MAX_COUNT_FRACTION: f64 = 0.1;

/// Unweighted least-squares line `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (0 with two points).
    pub stderr: f64,
    pub rms_residual: f64,
}

impl LineFit {
    pub fn fit(data: &[(f64, f64)]) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::InsufficientRange {
                usable: data.len(),
                required: 2,
            });
        }
        let n = data.len() as f64;
        let mx = data.iter().map(|p| p.0).sum::<f64>() / n;
        let my = data.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = data.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = data.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx == 0.0 {
            return Err(Error::InvalidParameter("regression abscissae are all equal".into()));
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let sse: f64 = data
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        let stderr = if data.len() > 2 {
            (sse / (n - 2.0) / sxx).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            slope,
            intercept,
            stderr,
            rms_residual: (sse / n).sqrt(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    Box,
    EnergySlope,
    L2Growth,
}

/// A fitted log–log slope together with the scales and per-scale statistic behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub value: f64,
    pub scale_levels: Vec<u32>,
    /// Box counts for `box`, correlation sums for `energy-slope`, `‖(μ_𝕍)_δ‖₂²` for `l2-growth`.
    pub counts: Vec<f64>,
    pub slope_stderr: f64,
    pub rms_residual: f64,
    pub method: EstimateMethod,
}

/// Cell keys packed into a single integer when the indices fit.
fn packed_keys(cloud: &PointCloud, level: u32) -> Option<(Vec<u128>, u32)> {
    let dim = cloud.dim();
    let bits = (128 / dim).min(64) as u32;
    if bits < 8 {
        return None;
    }
    let bias = 1i128 << (bits - 1);
    let scale = 2f64.powi(level as i32);
    let mut keys = Vec::with_capacity(cloud.len());
    for p in cloud.points() {
        let mut key: u128 = 0;
        for c in p {
            let idx = (c * scale).floor();
            if !(idx.abs() < bias as f64) {
                return None;
            }
            key = (key << bits) | ((idx as i128 + bias) as u128);
        }
        keys.push(key);
    }
    Some((keys, bits))
}

/// Re-keys a packed cell `shift` levels coarser (floor division of every index).
fn coarsen_key(key: u128, dim: usize, bits: u32, shift: u32) -> u128 {
    let bias = 1i128 << (bits - 1);
    let mask = if bits == 128 { u128::MAX } else { (1u128 << bits) - 1 };
    let mut out = 0u128;
    for i in (0..dim).rev() {
        let field = ((key >> (bits * i as u32)) & mask) as i128 - bias;
        out = (out << bits) | (((field >> shift) + bias) as u128);
    }
    out
}

fn hashed_count(cloud: &PointCloud, level: u32) -> usize {
    let grid = DyadicGrid::new(cloud.dim(), level);
    cloud.points().map(|p| grid.cell_of(p)).collect::<HashSet<Cell>>().len()
}

/// `N(E, 2^{−level})`: the number of occupied dyadic cells.
pub fn box_count(cloud: &PointCloud, level: u32) -> usize {
    box_counts(cloud, &[level])[0]
}

/// [`box_count`] at several levels, sorting the cell keys once at the finest one.
pub fn box_counts(cloud: &PointCloud, levels: &[u32]) -> Vec<usize> {
    let Some(&finest) = levels.iter().max() else {
        return Vec::new();
    };
    match packed_keys(cloud, finest) {
        Some((mut keys, bits)) => {
            keys.sort_unstable();
            keys.dedup();
            let dim = cloud.dim();
            levels
                .iter()
                .map(|&j| {
                    if j == finest {
                        return keys.len();
                    }
                    let mut coarse: Vec<u128> = keys.iter().map(|&k| coarsen_key(k, dim, bits, finest - j)).collect();
                    coarse.sort_unstable();
                    coarse.dedup();
                    coarse.len()
                })
                .collect()
        }
        None => levels.iter().map(|&j| hashed_count(cloud, j)).collect(),
    }
}

/// Number of points in each occupied cell, in a deterministic cell order.
pub fn cell_occupancy(cloud: &PointCloud, level: u32) -> Vec<u64> {
    match packed_keys(cloud, level) {
        Some((mut keys, _)) => {
            keys.sort_unstable();
            keys.chunk_by(|a, b| a == b).map(|run| run.len() as u64).collect()
        }
        None => {
            let grid = DyadicGrid::new(cloud.dim(), level);
            let mut counts: std::collections::BTreeMap<Cell, u64> = std::collections::BTreeMap::new();
            for p in cloud.points() {
                *counts.entry(grid.cell_of(p)).or_insert(0) += 1;
            }
            counts.into_values().collect()
        }
    }
}

/// Number of distinct point locations (bitwise).
pub fn distinct_point_count(cloud: &PointCloud) -> usize {
    let bits = |i: usize| cloud.point(i).iter().map(|c| (c + 0.0).to_bits());
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_unstable_by(|&a, &b| bits(a).cmp(bits(b)));
    order.dedup_by(|a, b| bits(*a).eq(bits(*b)));
    order.len()
}

fn check_window(j_min: u32, j_max: u32) -> Result<()> {
    if j_min >= j_max {
        return Err(Error::InvalidParameter(format!(
            "level window needs j_min < j_max, got {j_min}:{j_max}"
        )));
    }
    Ok(())
}

/// Least-squares slope of `log₂ N(E, 2^{−j})` against `j` over `j_min..=j_max`.
///
/// Counts must lie strictly inside `(10, 0.1·N)` with N the number of distinct points. A
/// cloud whose counts are the same small number at every level is finitely many atoms at
/// all resolved scales and is reported with value exactly 0.
pub fn boxdim_estimate(cloud: &PointCloud, j_min: u32, j_max: u32) -> Result<DimensionEstimate> {
    check_window(j_min, j_max)?;
    let levels: Vec<u32> = (j_min..=j_max).collect();
    let counts: Vec<f64> = box_counts(cloud, &levels).into_iter().map(|c| c as f64).collect();
    if counts[0] <= MIN_COUNT && counts.iter().all(|&c| c == counts[0]) {
        return Ok(DimensionEstimate {
            value: 0.0,
            scale_levels: levels,
            counts,
            slope_stderr: 0.0,
            rms_residual: 0.0,
            method: EstimateMethod::Box,
        });
    }
    let upper = MAX_COUNT_FRACTION * distinct_point_count(cloud) as f64;
    for (&j, &c) in levels.iter().zip(&counts) {
        if !(c > MIN_COUNT && c < upper) {
            return Err(Error::Saturation {
                level: j,
                count: c as usize,
                lower: MIN_COUNT,
                upper,
            });
        }
    }
    let data: Vec<(f64, f64)> = levels.iter().zip(&counts).map(|(&j, &c)| (j as f64, c.log2())).collect();
    let fit = LineFit::fit(&data)?;
    Ok(DimensionEstimate {
        value: fit.slope.max(0.0),
        scale_levels: levels,
        counts,
        slope_stderr: fit.stderr,
        rms_residual: fit.rms_residual,
        method: EstimateMethod::Box,
    })
}

/// Tuning of the correlation-sum estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySlopeOptions {
    /// Reference points are taken at a fixed stride so at most this many are used.
    pub max_references: usize,
    /// Coarsest distance scale `2^{−min_level}` considered.
    pub min_level: u32,
    /// Finest distance scale `2^{−max_level}` considered.
    pub max_level: u32,
    /// A scale is usable when its raw pair count is at least this multiple of the reference count.
    pub min_pairs_per_reference: f64,
}

impl Default for EnergySlopeOptions {
    fn default() -> Self {
        Self {
            max_references: 1024,
            min_level: 3,
            max_level: 30,
            min_pairs_per_reference: 10.0,
        }
    }
}

/// Minimum number of usable scales for an energy-slope fit.
pub const MIN_ENERGY_SCALES: usize = 4;

/// See [`energy_slope_dim_with`]; uses the default options.
pub fn energy_slope_dim(cloud: &PointCloud, s_grid: &[f64]) -> Result<DimensionEstimate> {
    energy_slope_dim_with(cloud, s_grid, &EnergySlopeOptions::default())
}

/// Largest `s` in `s_grid` for which the dyadic band sums
/// `Σ_{2^{−j−1} < |x−y| ≤ 2^{−j}} w w′ 2^{js}` stay bounded.
///
/// The band sums are bounded exactly when the cumulative correlation sum
/// `C_j = Σ_{|x−y| ≤ 2^{−j}} w w′` decays at least like `2^{−js}`, so the decay rate `D̂` is
/// fitted on `log₂ C_j` and the answer is the largest grid value not exceeding it.
pub fn energy_slope_dim_with(
    cloud: &PointCloud,
    s_grid: &[f64],
    opts: &EnergySlopeOptions,
) -> Result<DimensionEstimate> {
    let d = cloud.dim();
    if s_grid.is_empty() || s_grid.iter().any(|&s| !(s > 0.0 && s < d as f64)) {
        return Err(Error::InvalidParameter(format!("s grid must be a nonempty subset of (0, {d})")));
    }
    if opts.min_level > opts.max_level {
        return Err(Error::InvalidParameter("min_level exceeds max_level".into()));
    }
    let n = cloud.len();
    let stride = n.div_ceil(opts.max_references.max(1)).max(1);
    let refs: Vec<usize> = (0..n).step_by(stride).collect();
    let buckets = opts.max_level as usize + 1;
    let coords = cloud.coords();
    let weights = cloud.weights();

    // Per reference point: pair weight and raw pair count with `|x−y| ≤ 2^{−j}` binned by the
    // largest such j (capped), accumulated afterwards into cumulative sums.
    let per_ref: Vec<(Vec<f64>, Vec<u64>)> = refs
        .par_iter()
        .map(|&i| {
            let mut w_hist = vec![0.0; buckets];
            let mut c_hist = vec![0u64; buckets];
            let xi = &coords[i * d..(i + 1) * d];
            for k in 0..n {
                if k == i {
                    continue;
                }
                let xk = &coords[k * d..(k + 1) * d];
                let mut r2 = 0.0;
                for t in 0..d {
                    let e = xi[t] - xk[t];
                    r2 += e * e;
                }
                let j = if r2 == 0.0 {
                    opts.max_level as usize
                } else {
                    let top = -0.5 * r2.log2();
                    if top < 0.0 {
                        continue;
                    }
                    (top.floor() as usize).min(opts.max_level as usize)
                };
                w_hist[j] += weights[i] * weights[k];
                c_hist[j] += 1;
            }
            (w_hist, c_hist)
        })
        .collect();
    let mut w_tot = vec![0.0; buckets];
    let mut c_tot = vec![0u64; buckets];
    for (w, c) in &per_ref {
        for j in 0..buckets {
            w_tot[j] += w[j];
            c_tot[j] += c[j];
        }
    }
    // Cumulative from fine to coarse: C_j = Σ_{j' ≥ j} bin_{j'}.
    for j in (0..buckets - 1).rev() {
        w_tot[j] += w_tot[j + 1];
        c_tot[j] += c_tot[j + 1];
    }
    let threshold = opts.min_pairs_per_reference * refs.len() as f64;
    let usable: Vec<u32> = (opts.min_level.max(1)..=opts.max_level)
        .filter(|&j| c_tot[j as usize] as f64 >= threshold && w_tot[j as usize] > 0.0)
        .collect();
    if usable.len() < MIN_ENERGY_SCALES {
        return Err(Error::InsufficientRange {
            usable: usable.len(),
            required: MIN_ENERGY_SCALES,
        });
    }
    let counts: Vec<f64> = usable.iter().map(|&j| w_tot[j as usize]).collect();
    let data: Vec<(f64, f64)> = usable.iter().zip(&counts).map(|(&j, &c)| (j as f64, c.log2())).collect();
    let fit = LineFit::fit(&data)?;
    let rate = -fit.slope;
    let value = s_grid
        .iter()
        .copied()
        .filter(|&s| s <= rate)
        .fold(0.0, f64::max);
    Ok(DimensionEstimate {
        value,
        scale_levels: usable,
        counts,
        slope_stderr: fit.stderr,
        rms_residual: fit.rms_residual,
        method: EstimateMethod::EnergySlope,
    })
}

/// Evenly spaced `s` values `step, 2·step, … < dim`.
pub fn default_s_grid(dim: usize, step: f64) -> Vec<f64> {
    let count = ((dim as f64) / step).ceil() as usize;
    (1..count)
        .map(|k| k as f64 * step)
        .filter(|&s| s < dim as f64)
        .collect()
}

/// `s = m − slope` where `slope` fits `log₂ ‖(μ_𝕍)_{2^{−j}}‖₂²` against `j`.
///
/// Only saturation from above is guarded (projected counts must stay at most
/// `max(1, 0.1·N)`): the estimator is meant to certify small dimension as well.
pub fn l2_growth_dim(cloud: &PointCloud, v: &Subspace, j_min: u32, j_max: u32) -> Result<DimensionEstimate> {
    check_window(j_min, j_max)?;
    let m = v.dim();
    let projected = pushforward(cloud, v)?;
    let kernel = RadialKernel::projected(v.ambient_dim(), m)?;
    let upper = (MAX_COUNT_FRACTION * distinct_point_count(&projected) as f64).max(1.0);
    let levels: Vec<u32> = (j_min..=j_max).collect();
    let mut norms = Vec::with_capacity(levels.len());
    for &j in &levels {
        let count = box_count(&projected, j) as f64;
        if count > upper {
            return Err(Error::Saturation {
                level: j,
                count: count as usize,
                lower: 0.0,
                upper,
            });
        }
        let delta = 0.5f64.powi(j as i32);
        let field = convolve_radial(&projected, &kernel, delta, DyadicGrid::new(m, j + 2))?;
        norms.push(l2_norm(&field).powi(2));
    }
    let data: Vec<(f64, f64)> = levels.iter().zip(&norms).map(|(&j, &c)| (j as f64, c.log2())).collect();
    let fit = LineFit::fit(&data)?;
    Ok(DimensionEstimate {
        value: (m as f64 - fit.slope).max(0.0),
        scale_levels: levels,
        counts: norms,
        slope_stderr: fit.stderr,
        rms_residual: fit.rms_residual,
        method: EstimateMethod::L2Growth,
    })
}
