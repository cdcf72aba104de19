//! Discrete Marstrand machinery: (δ,k)-sets, tubes and the incidence energy.
//!
//! For a δ-separated `C ⊂ B(0,1)` and a δ-separated direction set `E ⊂ G(n,m)`:
//!
//! ```text
//! ℰ = Σ_{V∈E} Σ_T card(C ∩ T)² = ℰ′ + N·card E
//! card{V ∈ E : N(C_V, δ) ≤ δ^τ N} ≲ δ^{τ−(n−m)m} log(1/δ)      (C a (δ,m)-set)
//! ```

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dimension::{box_count, cell_occupancy};
use crate::error::{Error, Result};
use crate::grassmann::{dpi_distance, plucker_embed, sample_uniform, Subspace};
use crate::measures::{pushforward, DyadicGrid, PointCloud};

/// Spread constants up to this value certify a (δ,k)-set.
pub const SPREAD_CERTIFICATE: f64 = 8.0;
/// Default number of ball centres examined by [`verify_delta_k`].
pub const DEFAULT_BALL_SAMPLES: usize = 256;
const SEPARATION_TOL: f64 = 1e-12;

/// Outcome of the spread test `card[B(x,r) ∩ C] ≤ A·(r/δ)^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub delta: f64,
    pub k: f64,
    pub point_count: usize,
    pub separation_ok: bool,
    /// Smallest pairwise distance (infinite for a single point).
    pub min_separation: f64,
    /// Worst ratio `card[B(x,r) ∩ C] / (r/δ)^k` over the tested balls.
    pub spread_constant: f64,
    pub worst_center: usize,
    pub worst_radius: f64,
    pub worst_count: usize,
    pub balls_tested: usize,
}

/// A point set together with its (δ,k)-set certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaKSet {
    pub cloud: PointCloud,
    pub delta: f64,
    pub k: f64,
    pub separation_ok: bool,
    pub spread_constant: f64,
    pub report: SpreadReport,
}

impl DeltaKSet {
    pub fn certified(&self) -> bool {
        self.separation_ok && self.spread_constant <= SPREAD_CERTIFICATE
    }
}

fn check_unit_weights(cloud: &PointCloud) -> Result<()> {
    if cloud.weights().iter().any(|&w| w != 1.0) {
        return Err(Error::InvalidParameter("(δ,k)-set tests need unit weights".into()));
    }
    Ok(())
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn neighbour_offsets(d: usize) -> Vec<Vec<i64>> {
    (0..3usize.pow(d as u32))
        .map(|mut code| {
            (0..d)
                .map(|_| {
                    let o = (code % 3) as i64 - 1;
                    code /= 3;
                    o
                })
                .collect()
        })
        .collect()
}

fn scaled_cell(p: &[f64], side: f64) -> Vec<i64> {
    p.iter().map(|c| (c / side).floor() as i64).collect()
}

/// Smallest pairwise distance, capped at `delta` once no pair is closer (hash grid of side
/// `delta` in dimension ≤ 4, brute force above).
fn min_pair_distance(cloud: &PointCloud, delta: f64) -> f64 {
    let n = cloud.len();
    let d = cloud.dim();
    if n < 2 {
        return f64::INFINITY;
    }
    if d > 4 {
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                best = best.min(dist2(cloud.point(i), cloud.point(j)));
            }
        }
        return best.sqrt();
    }
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points().enumerate() {
        buckets.entry(scaled_cell(p, delta)).or_default().push(i);
    }
    let offsets = neighbour_offsets(d);
    let mut best = f64::INFINITY;
    for (i, p) in cloud.points().enumerate() {
        let c = scaled_cell(p, delta);
        for off in &offsets {
            let key: Vec<i64> = c.iter().zip(off).map(|(a, b)| a + b).collect();
            if let Some(members) = buckets.get(&key) {
                for &j in members {
                    if j > i {
                        best = best.min(dist2(p, cloud.point(j)));
                    }
                }
            }
        }
    }
    best.sqrt().min(delta)
}

/// Checks δ-separation and the spread condition on closed balls centred at (up to
/// `ball_samples`, evenly strided) data points with radii `δ, 2δ, 4δ, …` up to the extent.
pub fn verify_delta_k(cloud: &PointCloud, delta: f64, k: f64, ball_samples: usize) -> Result<DeltaKSet> {
    if !(delta > 0.0) || !(k >= 0.0) {
        return Err(Error::InvalidParameter(format!("need delta > 0 and k >= 0, got {delta}, {k}")));
    }
    check_unit_weights(cloud)?;
    let n = cloud.len();
    let min_separation = min_pair_distance(cloud, delta);
    let separation_ok = min_separation >= delta * (1.0 - SEPARATION_TOL);

    let extent = cloud.extent();
    let mut radii = vec![delta];
    while *radii.last().unwrap() < extent {
        let next = radii.last().unwrap() * 2.0;
        radii.push(next);
    }
    let stride = if ball_samples == 0 { 1 } else { n.div_ceil(ball_samples).max(1) };
    let centres: Vec<usize> = (0..n).step_by(stride).collect();
    let per_centre: Vec<(f64, f64, usize)> = centres
        .par_iter()
        .map(|&c| {
            let x = cloud.point(c);
            let mut counts = vec![0usize; radii.len()];
            for p in cloud.points() {
                let r = dist2(x, p).sqrt();
                if let Some(idx) = radii.iter().position(|&rad| r <= rad * (1.0 + SEPARATION_TOL)) {
                    counts[idx] += 1;
                }
            }
            let mut cumulative = 0;
            let mut worst = (0.0, delta, 0usize);
            for (idx, &rad) in radii.iter().enumerate() {
                cumulative += counts[idx];
                let ratio = cumulative as f64 / (rad / delta).powf(k);
                if ratio > worst.0 {
                    worst = (ratio, rad, cumulative);
                }
            }
            worst
        })
        .collect();
    let (worst_idx, &(spread_constant, worst_radius, worst_count)) = per_centre
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, &(f64, f64, usize))>, (i, cur)| match best {
            Some((_, b)) if b.0 >= cur.0 => best,
            _ => Some((i, cur)),
        })
        .expect("at least one centre");
    let report = SpreadReport {
        delta,
        k,
        point_count: n,
        separation_ok,
        min_separation,
        spread_constant,
        worst_center: centres[worst_idx],
        worst_radius,
        worst_count,
        balls_tested: centres.len() * radii.len(),
    };
    Ok(DeltaKSet {
        cloud: cloud.clone(),
        delta,
        k,
        separation_ok,
        spread_constant,
        report,
    })
}

/// `N(C_V, δ)`: occupied dyadic cells of the projection in V's frame coordinates.
pub fn tube_count(cloud: &PointCloud, v: &Subspace, level: u32) -> Result<usize> {
    Ok(box_count(&pushforward(cloud, v)?, level))
}

/// δ-separated subspaces of G(n,m) (in `d_π`), with the separation re-verified.
#[derive(Clone, Debug)]
pub struct DirectionSet {
    pub subspaces: Vec<Subspace>,
    pub delta: f64,
    pub separation_ok: bool,
    pub min_separation: f64,
}

/// Neighbour search in Plücker space: `d_π < δ` forces `min(|p−q|,|p+q|) ≤ √m·d_π`, so cells
/// of side `√(2m)·δ` and their immediate neighbours (around both `p` and `−p`) see every
/// subspace within `d_π < δ`.
struct PluckerIndex {
    cell: f64,
    dim: usize,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
    offsets: Vec<Vec<i64>>,
}

const PLUCKER_GRID_MAX_DIM: usize = 6;

impl PluckerIndex {
    fn new(dim: usize, m: usize, delta: f64) -> Option<Self> {
        if dim > PLUCKER_GRID_MAX_DIM {
            return None;
        }
        let offsets = neighbour_offsets(dim);
        Some(Self {
            cell: (2.0 * m as f64).sqrt() * delta,
            dim,
            buckets: HashMap::new(),
            offsets,
        })
    }

    fn key(&self, p: &[f64], sign: f64) -> Vec<i64> {
        p.iter().map(|c| (sign * c / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, p: &[f64], idx: usize) {
        let key = self.key(p, 1.0);
        self.buckets.entry(key).or_default().push(idx);
    }

    fn candidates(&self, p: &[f64]) -> Vec<usize> {
        let mut out = Vec::new();
        for sign in [1.0, -1.0] {
            let base = self.key(p, sign);
            for off in &self.offsets {
                let key: Vec<i64> = base.iter().zip(off).map(|(a, b)| a + b).collect();
                if let Some(m) = self.buckets.get(&key) {
                    out.extend_from_slice(m);
                }
            }
        }
        debug_assert!(p.len() == self.dim);
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl DirectionSet {
    /// Verifies separation of the given subspaces.
    pub fn from_subspaces(subspaces: Vec<Subspace>, delta: f64) -> Result<Self> {
        let first = subspaces
            .first()
            .ok_or_else(|| Error::EmptySet("direction set is empty".into()))?;
        let (n, m) = (first.ambient_dim(), first.dim());
        if subspaces.iter().any(|s| s.ambient_dim() != n || s.dim() != m) {
            return Err(Error::DimensionMismatch("directions from different Grassmannians".into()));
        }
        let mut min_sep = f64::INFINITY;
        let plucker: Vec<Vec<f64>> = subspaces.iter().map(|s| plucker_embed(s).coords).collect();
        match PluckerIndex::new(plucker[0].len(), m, delta) {
            Some(mut index) => {
                for (i, p) in plucker.iter().enumerate() {
                    for j in index.candidates(p) {
                        min_sep = min_sep.min(dpi_distance(&subspaces[i], &subspaces[j])?);
                    }
                    index.insert(p, i);
                }
            }
            None => {
                for i in 0..subspaces.len() {
                    for j in 0..i {
                        min_sep = min_sep.min(dpi_distance(&subspaces[i], &subspaces[j])?);
                    }
                }
            }
        }
        let separation_ok = min_sep >= delta * (1.0 - SEPARATION_TOL);
        Ok(Self {
            subspaces,
            delta,
            separation_ok,
            min_separation: if min_sep.is_finite() { min_sep } else { 1.0 },
        })
    }

    /// Greedy packing over `3·δ^{−(n−m)m}` uniform candidates: each candidate is kept unless it
    /// lies within `d_π < δ` of one already kept.
    pub fn greedy_packing<R: Rng + ?Sized>(n: usize, m: usize, delta: f64, rng: &mut R) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParameter(format!("direction separation {delta} not in (0,1]")));
        }
        let exponent = ((n - m.min(n)) * m) as i32;
        let candidates = (3.0 * delta.powi(-exponent)).ceil() as usize;
        if candidates > 5_000_000 {
            return Err(Error::Size(format!("{candidates} packing candidates")));
        }
        let mut kept: Vec<Subspace> = Vec::new();
        let mut index = None;
        for _ in 0..candidates {
            let v = sample_uniform(n, m, rng)?;
            let p = plucker_embed(&v).coords;
            if index.is_none() && kept.is_empty() {
                index = PluckerIndex::new(p.len(), m, delta);
            }
            let near: Vec<usize> = match &index {
                Some(ix) => ix.candidates(&p),
                None => (0..kept.len()).collect(),
            };
            let mut ok = true;
            for j in near {
                if dpi_distance(&v, &kept[j])? < delta {
                    ok = false;
                    break;
                }
            }
            if ok {
                if let Some(ix) = index.as_mut() {
                    ix.insert(&p, kept.len());
                }
                kept.push(v);
            }
        }
        Self::from_subspaces(kept, delta)
    }

    pub fn len(&self) -> usize {
        self.subspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subspaces.is_empty()
    }

    /// `(n, m)` of the Grassmannian the directions live in.
    pub fn grassmannian(&self) -> (usize, usize) {
        let s = &self.subspaces[0];
        (s.ambient_dim(), s.dim())
    }
}

/// Directions with few tubes: `N(C_V, δ) ≤ δ^τ·N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub tau: f64,
    pub threshold: f64,
    pub bad_count: usize,
    /// `δ^{τ−(n−m)m}·ln(1/δ)`.
    pub bound_rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidenceReport {
    pub delta: f64,
    pub level: u32,
    pub n: usize,
    pub m: usize,
    pub point_count: usize,
    pub card_e: usize,
    /// `ℰ`.
    pub energy: u128,
    /// `ℰ′ = ℰ − N·card E`.
    pub energy_offdiag: u128,
    pub per_direction_tube_counts: Vec<usize>,
    pub per_direction_energy: Vec<u128>,
    pub census: Option<Census>,
    pub spread: Option<SpreadReport>,
}

fn level_of(delta: f64) -> Result<u32> {
    let level = -delta.log2();
    if level < 0.0 || (level - level.round()).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("delta {delta} is not a dyadic scale 2^-j")));
    }
    Ok(level.round() as u32)
}

/// Buckets every point by tube for each direction and sums squared bucket sizes.
pub fn incidence_energy(cloud: &PointCloud, dirs: &DirectionSet, level: u32) -> Result<IncidenceReport> {
    check_unit_weights(cloud)?;
    if dirs.is_empty() {
        return Err(Error::EmptySet("no directions".into()));
    }
    let (n, m) = dirs.grassmannian();
    if cloud.dim() != n {
        return Err(Error::DimensionMismatch(format!("cloud in R^{} vs directions in G({n},{m})", cloud.dim())));
    }
    let per_dir: Vec<(usize, u128)> = dirs
        .subspaces
        .par_iter()
        .map(|v| {
            let occupancy = cell_occupancy(&pushforward(cloud, v)?, level);
            let energy = occupancy.iter().map(|&c| (c as u128) * (c as u128)).sum();
            Ok((occupancy.len(), energy))
        })
        .collect::<Result<_>>()?;
    let energy: u128 = per_dir.iter().map(|p| p.1).sum();
    let diagonal = cloud.len() as u128 * dirs.len() as u128;
    Ok(IncidenceReport {
        delta: 0.5f64.powi(level as i32),
        level,
        n,
        m,
        point_count: cloud.len(),
        card_e: dirs.len(),
        energy,
        energy_offdiag: energy - diagonal,
        per_direction_tube_counts: per_dir.iter().map(|p| p.0).collect(),
        per_direction_energy: per_dir.iter().map(|p| p.1).collect(),
        census: None,
        spread: None,
    })
}

/// Counts directions with `N(C_V, δ) ≤ δ^τ·N` after certifying C as a (δ,m)-set.
pub fn bad_direction_census(
    cloud: &PointCloud,
    dirs: &DirectionSet,
    level: u32,
    tau: f64,
) -> Result<IncidenceReport> {
    if dirs.is_empty() {
        return Err(Error::EmptySet("no directions".into()));
    }
    let (n, m) = dirs.grassmannian();
    let delta = 0.5f64.powi(level as i32);
    let cert = verify_delta_k(cloud, delta, m as f64, DEFAULT_BALL_SAMPLES)?;
    if !cert.certified() {
        return Err(Error::Precondition {
            reason: format!(
                "cloud is not a certified ({delta},{m})-set (separation ok: {}, spread constant {:.3} > {SPREAD_CERTIFICATE})",
                cert.separation_ok, cert.spread_constant
            ),
            spread: Some(Box::new(cert.report)),
        });
    }
    if dirs.min_separation < delta * (1.0 - SEPARATION_TOL) {
        return Err(Error::Precondition {
            reason: format!(
                "direction set is not {delta}-separated (minimum d_pi {:.3e})",
                dirs.min_separation
            ),
            spread: Some(Box::new(cert.report)),
        });
    }
    let mut report = incidence_energy(cloud, dirs, level)?;
    let threshold = delta.powf(tau) * cloud.len() as f64;
    let bad_count = if tau <= 0.0 {
        0
    } else {
        report
            .per_direction_tube_counts
            .iter()
            .filter(|&&c| c as f64 <= threshold)
            .count()
    };
    let k = ((n - m) * m) as f64;
    report.census = Some(Census {
        tau,
        threshold,
        bad_count,
        bound_rhs: delta.powf(tau - k) * (1.0 / delta).ln(),
    });
    report.spread = Some(cert.report);
    Ok(report)
}

/// Checks `τ < β` and `card E ≥ δ^{−β}`.
pub fn check_average_precondition(card_e: usize, level: u32, tau: f64, beta: f64) -> Result<()> {
    let delta = 0.5f64.powi(level as i32);
    if !(tau < beta) {
        return Err(Error::Precondition {
            reason: format!("need tau < beta, got tau = {tau}, beta = {beta}"),
            spread: None,
        });
    }
    let needed = delta.powf(-beta);
    if (card_e as f64) < needed {
        return Err(Error::Precondition {
            reason: format!("direction set has {card_e} elements, need at least delta^-beta = {needed:.1}"),
            spread: None,
        });
    }
    Ok(())
}

/// Mean tube count over a direction set with `card E ≥ δ^{−β}`, `τ < β`.
pub fn average_tube_count(cloud: &PointCloud, dirs: &DirectionSet, level: u32, tau: f64, beta: f64) -> Result<f64> {
    check_average_precondition(dirs.len(), level, tau, beta)?;
    let counts = dirs
        .subspaces
        .par_iter()
        .map(|v| tube_count(cloud, v, level))
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// One representative per occupied tube of `V0` (the lexicographically smallest point), then
/// greedy δ-thinning in lexicographic order, certified at `k = dim V0`.
pub fn extract_delta_set(slab_cloud: &PointCloud, v0: &Subspace, level: u32) -> Result<DeltaKSet> {
    if slab_cloud.is_empty() {
        return Err(Error::EmptySet("slab is empty".into()));
    }
    let delta = 0.5f64.powi(level as i32);
    let grid = DyadicGrid::new(v0.dim(), level);
    let mut proj = vec![0.0; v0.dim()];
    let mut best: HashMap<crate::measures::Cell, usize> = HashMap::new();
    for (i, p) in slab_cloud.points().enumerate() {
        v0.coordinates_of(p, &mut proj);
        best.entry(grid.cell_of(&proj))
            .and_modify(|cur| {
                if lex_cmp(p, slab_cloud.point(*cur)).is_lt() {
                    *cur = i;
                }
            })
            .or_insert(i);
    }
    let mut reps: Vec<usize> = best.into_values().collect();
    reps.sort_by(|&a, &b| lex_cmp(slab_cloud.point(a), slab_cloud.point(b)).then(a.cmp(&b)));

    let d = slab_cloud.dim();
    let cell = |p: &[f64]| scaled_cell(p, delta);
    let mut occupied: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let mut kept: Vec<usize> = Vec::new();
    let offsets = if d <= 4 { neighbour_offsets(d) } else { Vec::new() };
    for i in reps {
        let p = slab_cloud.point(i);
        let too_close = if d <= 4 {
            let c = cell(p);
            offsets.iter().any(|off| {
                let key: Vec<i64> = c.iter().zip(off).map(|(a, b)| a + b).collect();
                occupied
                    .get(&key)
                    .is_some_and(|ms| ms.iter().any(|&j| dist2(p, slab_cloud.point(j)) < delta * delta * (1.0 - SEPARATION_TOL)))
            })
        } else {
            kept.iter().any(|&j| dist2(p, slab_cloud.point(j)) < delta * delta * (1.0 - SEPARATION_TOL))
        };
        if !too_close {
            occupied.entry(cell(p)).or_default().push(i);
            kept.push(i);
        }
    }
    let coords: Vec<f64> = kept.iter().flat_map(|&i| slab_cloud.point(i).iter().copied()).collect();
    let set = PointCloud::with_unit_weights(d, coords)?;
    verify_delta_k(&set, delta, v0.dim() as f64, DEFAULT_BALL_SAMPLES)
}

/// `⌊1/δ⌋` points `0, δ, 2δ, …` along the first axis of ℝⁿ, unit weights.
pub fn segment_net(n: usize, level: u32) -> Result<PointCloud> {
    let count = 1usize << level;
    let delta = 0.5f64.powi(level as i32);
    let mut coords = vec![0.0; n * count];
    for i in 0..count {
        coords[i * n] = i as f64 * delta;
    }
    PointCloud::with_unit_weights(n, coords)
}

/// The δ-grid of `[0,1)²` in the first two coordinates of ℝⁿ, unit weights.
pub fn square_net(n: usize, level: u32) -> Result<PointCloud> {
    let side = 1usize << level;
    let delta = 0.5f64.powi(level as i32);
    let mut coords = vec![0.0; n * side * side];
    for i in 0..side {
        for j in 0..side {
            let row = (i * side + j) * n;
            coords[row] = i as f64 * delta;
            coords[row + 1] = j as f64 * delta;
        }
    }
    PointCloud::with_unit_weights(n, coords)
}

/// Dyadic level of a scale `2^{−j}`.
pub fn dyadic_level(delta: f64) -> Result<u32> {
    level_of(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::{planar_line, random_rotation};
    use crate::seeding::stream_rng;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    #[test]
    fn segment_net_is_delta_one_set() {
        for level in 3..8 {
            let net = segment_net(2, level).unwrap();
            let delta = 0.5f64.powi(level as i32);
            let s = verify_delta_k(&net, delta, 1.0, 0).unwrap();
            assert!(s.separation_ok);
            assert!(s.spread_constant <= 3.0, "{:?}", s.report);
            assert!(s.certified());
        }
    }

    #[test]
    fn square_net_is_two_spread_but_not_one_spread() {
        let mut k1 = Vec::new();
        for level in 3..7 {
            let net = square_net(2, level).unwrap();
            let delta = 0.5f64.powi(level as i32);
            let s2 = verify_delta_k(&net, delta, 2.0, 0).unwrap();
            assert!(s2.certified(), "{:?}", s2.report);
            let s1 = verify_delta_k(&net, delta, 1.0, 0).unwrap();
            k1.push(s1.spread_constant * delta);
        }
        // spread constant for k = 1 grows like 1/δ: δ·A stays bounded away from zero.
        let lo = k1.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = k1.iter().cloned().fold(0.0, f64::max);
        assert!(lo > 0.2 && hi / lo < 2.0, "{k1:?}");
    }

    #[test]
    fn close_pair_is_not_separated() {
        let c = PointCloud::with_unit_weights(2, vec![0.0, 0.0, 0.05, 0.0]).unwrap();
        let s = verify_delta_k(&c, 0.1, 1.0, 0).unwrap();
        assert!(!s.separation_ok);
        assert!(!s.certified());
        assert!((s.report.min_separation - 0.05).abs() < 1e-12);
        let weighted = PointCloud::new(2, vec![0.0, 0.0], vec![0.5]).unwrap();
        assert!(verify_delta_k(&weighted, 0.1, 1.0, 0).is_err());
    }

    #[test]
    fn tube_count_examples() {
        let level = 6;
        let net = segment_net(2, level).unwrap();
        let perp = Subspace::coordinate(2, &[1]).unwrap();
        assert_eq!(tube_count(&net, &perp, level).unwrap(), 1);
        let along = Subspace::coordinate(2, &[0]).unwrap();
        assert_eq!(tube_count(&net, &along, level).unwrap(), 64);

        let mut rng = stream_rng(1, 0);
        for _ in 0..50 {
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let count = tube_count(&net, &planar_line(theta), level).unwrap() as f64;
            let expect = (theta.cos().abs() * 64.0).max(1.0);
            assert!(count <= 3.0 * expect && count >= expect / 3.0, "{theta}: {count} vs {expect}");
        }
    }

    #[test]
    fn energy_extremes() {
        let level = 5;
        let net = segment_net(2, level).unwrap();
        let perp = DirectionSet::from_subspaces(vec![Subspace::coordinate(2, &[1]).unwrap()], 0.1).unwrap();
        let r = incidence_energy(&net, &perp, level).unwrap();
        assert_eq!(r.energy, 32 * 32);
        let along = DirectionSet::from_subspaces(vec![Subspace::coordinate(2, &[0]).unwrap()], 0.1).unwrap();
        let r = incidence_energy(&net, &along, level).unwrap();
        assert_eq!(r.energy, 32);
        assert_eq!(r.energy_offdiag, 0);
    }

    #[test]
    fn greedy_packing_is_separated_and_maximal_in_size() {
        let mut rng = stream_rng(2, 0);
        for (n, m) in [(2, 1), (3, 1), (3, 2)] {
            let delta = 0.125;
            let dirs = DirectionSet::greedy_packing(n, m, delta, &mut rng).unwrap();
            assert!(dirs.separation_ok);
            // Brute-force separation oracle.
            for i in 0..dirs.len() {
                for j in 0..i {
                    assert!(dpi_distance(&dirs.subspaces[i], &dirs.subspaces[j]).unwrap() >= delta);
                }
            }
            let k = ((n - m) * m) as i32;
            let ratio = dirs.len() as f64 * delta.powi(k);
            assert!(ratio > 0.1 && ratio < 10.0, "G({n},{m}): {} directions", dirs.len());
        }
    }

    #[test]
    fn segment_census_with_unit_threshold() {
        let mut rng = stream_rng(3, 0);
        for level in 4..=7 {
            let delta = 0.5f64.powi(level as i32);
            let net = segment_net(2, level).unwrap();
            let dirs = DirectionSet::greedy_packing(2, 1, delta, &mut rng).unwrap();
            // δ^τ·N = 1 with N = 1/δ means τ = 1.
            let r = bad_direction_census(&net, &dirs, level, 1.0).unwrap();
            let census = r.census.unwrap();
            assert!((census.threshold - 1.0).abs() < 1e-12);
            assert!(census.bad_count <= 3, "level {level}: {}", census.bad_count);
        }
    }

    #[test]
    fn square_census_in_r3_has_no_bad_planes() {
        let mut rng = stream_rng(4, 0);
        for level in 3..=5 {
            let delta = 0.5f64.powi(level as i32);
            let net = square_net(3, level).unwrap();
            let dirs = DirectionSet::greedy_packing(3, 2, delta, &mut rng).unwrap();
            let r = bad_direction_census(&net, &dirs, level, 1.25).unwrap();
            assert_eq!(r.census.unwrap().bad_count, 0);
        }
    }

    #[test]
    fn square_in_plane_fails_line_precondition() {
        let mut rng = stream_rng(5, 0);
        let level = 4;
        let net = square_net(2, level).unwrap();
        let dirs = DirectionSet::greedy_packing(2, 1, 0.0625, &mut rng).unwrap();
        match bad_direction_census(&net, &dirs, level, 0.5) {
            Err(Error::Precondition { spread: Some(report), .. }) => assert!(report.spread_constant > SPREAD_CERTIFICATE),
            other => panic!("expected precondition error, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_tau_has_no_bad_directions() {
        let mut rng = stream_rng(6, 0);
        let net = segment_net(2, 5).unwrap();
        let dirs = DirectionSet::greedy_packing(2, 1, 1.0 / 32.0, &mut rng).unwrap();
        for tau in [0.0, -0.5] {
            let r = bad_direction_census(&net, &dirs, 5, tau).unwrap();
            assert_eq!(r.census.unwrap().bad_count, 0);
        }
    }

    #[test]
    fn average_tube_count_on_full_circle() {
        let mut rng = stream_rng(7, 0);
        let level = 7;
        let net = segment_net(2, level).unwrap();
        let dirs = DirectionSet::greedy_packing(2, 1, 1.0 / 128.0, &mut rng).unwrap();
        let mean = average_tube_count(&net, &dirs, level, 0.5, 0.9).unwrap();
        let expect = 2.0 / std::f64::consts::PI * 128.0;
        assert!((mean - expect).abs() <= 0.1 * expect, "{mean} vs {expect}");
        assert!(average_tube_count(&net, &dirs, level, 1.0, 0.9).is_err());
        assert!(average_tube_count(&net, &dirs, level, 0.5, 1.5).is_err());

        let few = PointCloud::with_unit_weights(2, vec![0.1, 0.2, 0.7, 0.4, 0.3, 0.9]).unwrap();
        assert!(average_tube_count(&few, &dirs, level, 0.5, 0.9).unwrap() >= 1.0);
    }

    #[test]
    fn extraction_examples() {
        let one = PointCloud::with_unit_weights(2, vec![0.3, 0.4]).unwrap();
        let v0 = Subspace::coordinate(2, &[0]).unwrap();
        let s = extract_delta_set(&one, &v0, 5).unwrap();
        assert_eq!(s.cloud.coords(), &[0.3, 0.4]);

        let dense: Vec<f64> = (0..4096).flat_map(|i| [i as f64 / 4096.0, 0.5]).collect();
        let seg = PointCloud::with_unit_weights(2, dense).unwrap();
        let s = extract_delta_set(&seg, &v0, 6).unwrap();
        assert_eq!(s.cloud.len(), 64);
        assert!(s.spread_constant <= 3.0);
        assert!(s.certified());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn energy_decomposition_and_cauchy_schwarz(
            pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..80),
            seed in 0u64..1000,
            level in 1u32..7,
        ) {
            let coords: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1, p.2]).collect();
            let cloud = PointCloud::with_unit_weights(3, coords).unwrap();
            let mut rng = stream_rng(seed, 0);
            let subs: Vec<Subspace> = (0..5).map(|_| sample_uniform(3, 2, &mut rng).unwrap()).collect();
            let dirs = DirectionSet::from_subspaces(subs, 1e-6).unwrap();
            let r = incidence_energy(&cloud, &dirs, level).unwrap();
            let nn = cloud.len() as u128;
            prop_assert_eq!(r.energy, r.energy_offdiag + nn * dirs.len() as u128);
            prop_assert!(r.energy >= nn * dirs.len() as u128);
            for (v, (&count, &e)) in dirs.subspaces.iter().zip(r.per_direction_tube_counts.iter().zip(&r.per_direction_energy)) {
                prop_assert_eq!(count, tube_count(&cloud, v, level).unwrap());
                prop_assert!(e * count as u128 >= nn * nn);
            }
        }

        #[test]
        fn extraction_never_exceeds_tube_count(
            pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..200),
            level in 2u32..7,
            seed in 0u64..100,
        ) {
            let coords: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1]).collect();
            let cloud = PointCloud::with_unit_weights(2, coords).unwrap();
            let v0 = Subspace::from_spanning(random_rotation(2, &mut stream_rng(seed, 1)).columns(0, 1).into_owned()).unwrap();
            let s = extract_delta_set(&cloud, &v0, level).unwrap();
            prop_assert!(s.cloud.len() <= tube_count(&cloud, &v0, level).unwrap());
            prop_assert!(s.separation_ok);
        }
    }
}
