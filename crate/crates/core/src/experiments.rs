//! Named experiments: projection sweeps over restricted families and the discrete Marstrand census.
//!
//! A sweep samples K subspaces, direction `i` drawing from stream `i` of the configured seed,
//! projects the generator cloud onto each and estimates the projected box dimension. Almost-sure
//! behaviour is reported through the exceptional fraction: the share of directions whose
//! estimate falls more than ε below the empirical supremum.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dimension::{boxdim_estimate, DimensionEstimate};
use crate::error::{Error, Result};
use crate::fractals::{lookup, FamilyDescriptor, ManifestEntry, MAX_DIM};
use crate::grassmann::Subspace;
use crate::io::SubspaceRecord;
use crate::marstrand::{bad_direction_census, check_average_precondition, extract_delta_set, DirectionSet};
use crate::measures::{pushforward, slice_horizontal, PointCloud};
use crate::seeding::{stream_rng, with_pool};

/// Tolerances tabulated in every sweep report.
pub const EXCEPTIONAL_EPSILONS: [f64; 4] = [0.1, 0.15, 0.2, 0.3];
/// Largest supported K.
pub const MAX_DIRECTIONS: usize = 100_000;
/// Preservation succeeds when the median is this close to the reference dimension.
pub const PRESERVATION_TOLERANCE: f64 = 0.1;
/// Constancy succeeds when at most this share of directions is exceptional at ε = 0.15.
pub const CONSTANCY_MAX_EXCEPTIONAL: f64 = 0.1;
pub const CONSTANCY_EPSILON: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Preservation,
    Constancy,
    MarstrandCensus,
}

/// Which m-planes a sweep draws from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// `V × ℝ^l`, `V ∈ G(n−l, m−l)`.
    #[default]
    Vertical,
    /// `W × {0}`, `W ∈ G(n−l, m)`: planes that ignore the vertical block.
    Horizontal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub fractal_key: String,
    pub num_directions: usize,
    pub levels: [u32; 2],
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<u32>,
    #[serde(default)]
    pub family: FamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

impl ExperimentConfig {
    /// Parses a flat TOML table; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, l) = (self.n, self.m, self.l);
        if !(0 < l && l < m && m < n && n <= MAX_DIM) {
            return Err(Error::Config(format!(
                "dimensions must satisfy 0 < l < m < n <= {MAX_DIM}, got n = {n}, m = {m}, l = {l}"
            )));
        }
        let [j_min, j_max] = self.levels;
        if j_min >= j_max {
            return Err(Error::Config(format!("levels must satisfy j_min < j_max, got [{j_min}, {j_max}]")));
        }
        if j_max > 40 {
            return Err(Error::Config(format!("level {j_max} is finer than supported (40)")));
        }
        if !(1..=MAX_DIRECTIONS).contains(&self.num_directions) {
            return Err(Error::Config(format!(
                "num_directions must be in 1..={MAX_DIRECTIONS}, got {}",
                self.num_directions
            )));
        }
        let entry = lookup(&self.fractal_key)?;
        if entry.horizontal_dim > n - l || entry.vertical_dim > l {
            return Err(Error::Config(format!(
                "{} has {} horizontal and {} vertical coordinates, which do not fit n - l = {}, l = {l}",
                entry.key,
                entry.horizontal_dim,
                entry.vertical_dim,
                n - l
            )));
        }
        if self.family == FamilyKind::Horizontal && m > n - l {
            return Err(Error::Config(format!("horizontal family needs m <= n - l, got m = {m}")));
        }
        for (name, v) in [("sigma", self.sigma), ("sigma_prime", self.sigma_prime), ("tau", self.tau), ("beta", self.beta)] {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if let (Some(s), Some(sp)) = (self.sigma, self.sigma_prime) {
            if s >= sp {
                return Err(Error::Config(format!("need sigma < sigma_prime, got {s} >= {sp}")));
            }
        }
        if let (Some(t), Some(b)) = (self.tau, self.beta) {
            if t >= b {
                return Err(Error::Config(format!("need tau < beta, got {t} >= {b}")));
            }
        }
        if self.experiment == ExperimentKind::MarstrandCensus && self.tau.is_none() {
            return Err(Error::Config("marstrand-census needs tau".into()));
        }
        Ok(())
    }

    fn entry(&self) -> Result<ManifestEntry> {
        lookup(&self.fractal_key)
    }

    pub fn family_descriptor(&self) -> FamilyDescriptor {
        match self.family {
            FamilyKind::Vertical => FamilyDescriptor::Vertical { n: self.n, m: self.m, l: self.l },
            FamilyKind::Horizontal => FamilyDescriptor::Horizontal {
                n: self.n,
                inner: self.n - self.l,
                m: self.m,
            },
        }
    }
}

// ---------------------------------------------------------------------------------------
// Sweeps

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionRow {
    pub index: usize,
    pub subspace: SubspaceRecord,
    pub estimate: DimensionEstimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalFraction {
    pub epsilon: f64,
    pub fraction: f64,
}

/// Order-free statistics of a list of estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub empirical_sup: f64,
    pub median: f64,
    pub interquartile_range: f64,
    pub exceptional_fraction: Vec<ExceptionalFraction>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl SweepSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySet("no estimates to summarize".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sup = *sorted.last().unwrap();
        Ok(Self {
            empirical_sup: sup,
            median: quantile(&sorted, 0.5),
            interquartile_range: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
            exceptional_fraction: EXCEPTIONAL_EPSILONS
                .iter()
                .map(|&epsilon| ExceptionalFraction {
                    epsilon,
                    fraction: exceptional_fraction(&sorted, sup, epsilon),
                })
                .collect(),
        })
    }

    pub fn exceptional_at(&self, epsilon: f64) -> Option<f64> {
        self.exceptional_fraction
            .iter()
            .find(|e| (e.epsilon - epsilon).abs() < 1e-12)
            .map(|e| e.fraction)
    }
}

/// Share of `values` strictly below `sup − epsilon`.
pub fn exceptional_fraction(values: &[f64], sup: f64, epsilon: f64) -> f64 {
    values.iter().filter(|&&v| v < sup - epsilon).count() as f64 / values.len() as f64
}

/// Projects `cloud` onto every subspace and estimates the box dimension over `levels`.
pub fn estimate_directions(cloud: &PointCloud, subspaces: &[Subspace], levels: [u32; 2]) -> Result<Vec<DirectionRow>> {
    subspaces
        .par_iter()
        .enumerate()
        .map(|(index, v)| {
            let projected = pushforward(cloud, v)?;
            Ok(DirectionRow {
                index,
                subspace: SubspaceRecord::from(v),
                estimate: boxdim_estimate(&projected, levels[0], levels[1])?,
            })
        })
        .collect()
}

/// Direction `i` of a sweep, drawn from stream `i` of `seed`.
pub fn sample_directions(family: &FamilyDescriptor, seed: u64, count: usize) -> Result<Vec<Subspace>> {
    (0..count)
        .into_par_iter()
        .map(|i| family.sample(&mut stream_rng(seed, i as u64)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub version: String,
    pub family: FamilyDescriptor,
    pub reference_dimension: f64,
    pub point_count: usize,
    pub per_direction: Vec<DirectionRow>,
    #[serde(flatten)]
    pub summary: SweepSummary,
    /// The run's built-in pass condition, in words.
    pub criterion: String,
    pub success: bool,
    pub wall_time_seconds: f64,
}

fn sweep(config: &ExperimentConfig, entry: &ManifestEntry) -> Result<(FamilyDescriptor, usize, Vec<DirectionRow>, SweepSummary)> {
    let cloud = entry.generate_embedded(config.depth, config.n, config.l)?;
    let family = config.family_descriptor();
    let directions = sample_directions(&family, config.seed, config.num_directions)?;
    let rows = estimate_directions(&cloud, &directions, config.levels)?;
    let values: Vec<f64> = rows.iter().map(|r| r.estimate.value).collect();
    let summary = SweepSummary::from_values(&values)?;
    Ok((family, cloud.len(), rows, summary))
}

/// Sweep for a set whose dimension does not exceed `m − l`: the median should recover it.
pub fn run_preservation(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    let entry = config.entry()?;
    let cap = (config.m - config.l) as f64;
    if entry.reference_dimension > cap + 1e-9 {
        return Err(Error::Config(format!(
            "{} has dimension {:.4} > m - l = {cap}; use the constancy experiment instead",
            entry.key, entry.reference_dimension
        )));
    }
    let (family, point_count, per_direction, summary) = sweep(config, &entry)?;
    let success = (summary.median - entry.reference_dimension).abs() <= PRESERVATION_TOLERANCE;
    Ok(ExperimentReport {
        experiment: ExperimentKind::Preservation,
        config: config.clone(),
        version: crate::VERSION.into(),
        family,
        reference_dimension: entry.reference_dimension,
        point_count,
        per_direction,
        summary,
        criterion: format!("|median - reference_dimension| <= {PRESERVATION_TOLERANCE}"),
        success,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Sweep without a dimension cap: estimates should concentrate at their supremum.
pub fn run_constancy(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    let entry = config.entry()?;
    let (family, point_count, per_direction, summary) = sweep(config, &entry)?;
    let success = summary
        .exceptional_at(CONSTANCY_EPSILON)
        .is_some_and(|f| f <= CONSTANCY_MAX_EXCEPTIONAL);
    Ok(ExperimentReport {
        experiment: ExperimentKind::Constancy,
        config: config.clone(),
        version: crate::VERSION.into(),
        family,
        reference_dimension: entry.reference_dimension,
        point_count,
        per_direction,
        summary,
        criterion: format!("exceptional_fraction({CONSTANCY_EPSILON}) <= {CONSTANCY_MAX_EXCEPTIONAL}"),
        success,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------------------
// Census

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub level: u32,
    pub delta: f64,
    /// Size of the extracted (δ, m−l)-set.
    pub point_count: usize,
    pub spread_constant: f64,
    pub card_e: usize,
    pub energy: u64,
    pub bad_count: usize,
    /// `δ^{τ−(n−m)m}·ln(1/δ)` on `G(n−l, m−l)`.
    pub bound_rhs: f64,
    pub bound_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tube_count: Option<f64>,
    /// `δ^{(n−m)m−τ}·N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rhs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub version: String,
    /// `(n − l, m − l)`: the Grassmannian the directions live in.
    pub grassmannian: (usize, usize),
    pub rows: Vec<CensusRow>,
    /// Smallest C with `bad_count ≤ C·bound_rhs` at every level.
    pub fitted_upper_constant: f64,
    /// Largest c with `mean ≥ c·mean_rhs` at every level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_lower_constant: Option<f64>,
    pub wall_time_seconds: f64,
}

/// Per level: slices the cloud into vertical slabs, extracts a (δ, m−l)-set from the fullest
/// slab along the first `m − l` axes, packs δ-separated directions and runs the census.
pub fn run_marstrand_census(config: &ExperimentConfig) -> Result<CensusReport> {
    let start = Instant::now();
    config.validate()?;
    let entry = config.entry()?;
    let tau = config.tau.expect("validated");
    let (n, m, l) = (config.n, config.m, config.l);
    let (inner_n, inner_m) = (n - l, m - l);
    let cloud = entry.generate_embedded(config.depth, n, l)?;
    let v0 = Subspace::coordinate(inner_n, &(0..inner_m).collect::<Vec<_>>())?;
    let k = ((inner_n - inner_m) * inner_m) as f64;

    let mut rows = Vec::new();
    for level in config.levels[0]..=config.levels[1] {
        let delta = 0.5f64.powi(level as i32);
        let pieces = slice_horizontal(&cloud, l, level)?;
        // first of the fullest slabs: max_by_key keeps the last maximum
        let slab = pieces
            .iter()
            .rev()
            .max_by_key(|p| p.shadow.len())
            .ok_or_else(|| Error::EmptySet("no occupied slab".into()))?;
        let set = extract_delta_set(&slab.shadow, &v0, level)?;
        if !set.certified() {
            return Err(Error::Precondition {
                reason: format!(
                    "extracted set at level {level} is not a certified ({delta},{inner_m})-set (spread constant {:.3})",
                    set.spread_constant
                ),
                spread: Some(Box::new(set.report)),
            });
        }
        let dirs = DirectionSet::greedy_packing(inner_n, inner_m, delta, &mut stream_rng(config.seed, level as u64))?;
        let report = bad_direction_census(&set.cloud, &dirs, level, tau)?;
        let census = report.census.as_ref().expect("census filled");
        let big_n = set.cloud.len() as f64;
        let (mean_tube_count, mean_rhs, mean_ratio) = match config.beta {
            Some(beta) => {
                check_average_precondition(dirs.len(), level, tau, beta)?;
                let counts = &report.per_direction_tube_counts;
                let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
                let rhs = delta.powf(k - tau) * big_n;
                (Some(mean), Some(rhs), Some(mean / rhs))
            }
            None => (None, None, None),
        };
        rows.push(CensusRow {
            level,
            delta,
            point_count: set.cloud.len(),
            spread_constant: set.spread_constant,
            card_e: dirs.len(),
            energy: u64::try_from(report.energy)
                .map_err(|_| Error::Size(format!("incidence energy {} overflows u64", report.energy)))?,
            bad_count: census.bad_count,
            bound_rhs: census.bound_rhs,
            bound_ratio: census.bad_count as f64 / census.bound_rhs,
            mean_tube_count,
            mean_rhs,
            mean_ratio,
        });
    }
    let fitted_upper_constant = rows.iter().map(|r| r.bound_ratio).fold(0.0, f64::max);
    let fitted_lower_constant = rows
        .iter()
        .map(|r| r.mean_ratio)
        .collect::<Option<Vec<_>>>()
        .map(|v| v.into_iter().fold(f64::INFINITY, f64::min));
    Ok(CensusReport {
        experiment: ExperimentKind::MarstrandCensus,
        config: config.clone(),
        version: crate::VERSION.into(),
        grassmannian: (inner_n, inner_m),
        rows,
        fitted_upper_constant,
        fitted_lower_constant,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------------------
// Dispatch

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunOutput {
    Sweep(ExperimentReport),
    Census(CensusReport),
}

impl RunOutput {
    pub fn wall_time_seconds(&self) -> f64 {
        match self {
            Self::Sweep(r) => r.wall_time_seconds,
            Self::Census(r) => r.wall_time_seconds,
        }
    }

    /// The same report with the wall-time field zeroed, for byte comparisons.
    pub fn without_wall_time(&self) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::Sweep(r) => r.wall_time_seconds = 0.0,
            Self::Census(r) => r.wall_time_seconds = 0.0,
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        crate::io::to_json(self)
    }
}

/// Runs the configured experiment on a pool of `threads` workers (`GRASSDIM_THREADS` or all
/// cores when `None`).
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutput> {
    with_pool(threads, || match config.experiment {
        ExperimentKind::Preservation => run_preservation(config).map(RunOutput::Sweep),
        ExperimentKind::Constancy => run_constancy(config).map(RunOutput::Sweep),
        ExperimentKind::MarstrandCensus => run_marstrand_census(config).map(RunOutput::Census),
    })
}
