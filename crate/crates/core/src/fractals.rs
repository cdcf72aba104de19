//! Deterministic fractal point clouds with known dimensions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{sample_uniform, vertical_lift, Subspace};
use crate::measures::PointCloud;

/// Largest cloud any generator will produce.
pub const MAX_POINTS: usize = 10_000_000;
/// Largest ambient dimension handled by the toolkit.
pub const MAX_DIM: usize = 16;

/// `x ↦ r·R·x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub ratio: f64,
    pub rotation: DMatrix<f64>,
    pub translation: Vec<f64>,
}

impl Similarity {
    pub fn new(ratio: f64, rotation: DMatrix<f64>, translation: Vec<f64>) -> Result<Self> {
        let n = translation.len();
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidParameter(format!("similarity ratio {ratio} not in (0,1)")));
        }
        if rotation.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "rotation {:?} for translation in R^{n}",
                rotation.shape()
            )));
        }
        if (rotation.transpose() * &rotation - DMatrix::<f64>::identity(n, n)).amax() > 1e-9 {
            return Err(Error::InvalidParameter("rotation is not orthogonal".into()));
        }
        Ok(Self {
            ratio,
            rotation,
            translation,
        })
    }

    /// Pure scaling followed by translation.
    pub fn homothety(ratio: f64, translation: Vec<f64>) -> Result<Self> {
        let n = translation.len();
        Self::new(ratio, DMatrix::identity(n, n), translation)
    }

    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.translation.len();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.rotation[(i, j)] * x[j];
            }
            out[i] = self.ratio * acc + self.translation[i];
        }
    }
}

/// Iterated function system of contracting similarities, run to a fixed depth.
#[derive(Clone, Debug, PartialEq)]
pub struct IfsSystem {
    pub dim: usize,
    pub maps: Vec<Similarity>,
    pub depth: u32,
}

impl IfsSystem {
    pub fn new(maps: Vec<Similarity>, depth: u32) -> Result<Self> {
        let dim = maps
            .first()
            .map(|m| m.translation.len())
            .ok_or_else(|| Error::InvalidParameter("IFS needs at least one map".into()))?;
        if dim == 0 || dim > MAX_DIM || maps.iter().any(|m| m.translation.len() != dim) {
            return Err(Error::DimensionMismatch("IFS maps act on different spaces".into()));
        }
        Ok(Self { dim, maps, depth })
    }

    /// Equal-ratio homotheties with the given translations.
    pub fn uniform(ratio: f64, translations: &[Vec<f64>], depth: u32) -> Result<Self> {
        let maps = translations
            .iter()
            .map(|t| Similarity::homothety(ratio, t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps, depth)
    }

    pub fn with_depth(&self, depth: u32) -> Self {
        Self {
            depth,
            ..self.clone()
        }
    }

    /// The `s` with `Σ r_i^s = 1`, by bisection.
    pub fn similarity_dimension(&self) -> f64 {
        let pressure = |s: f64| self.maps.iter().map(|m| m.ratio.powf(s)).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        while pressure(hi) > 0.0 {
            hi *= 2.0;
        }
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if pressure(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn point_count(&self) -> Option<usize> {
        self.maps.len().checked_pow(self.depth)
    }
}

/// All depth-fold compositions applied to `base_point`, each with weight `M^{−depth}`.
///
/// Built iteratively as `C_{k+1} = f_1(C_k) ∪ … ∪ f_M(C_k)`, so the depth-(d+1) cloud is the
/// concatenation of the map images of the depth-d cloud.
pub fn ifs_generate(system: &IfsSystem, base_point: &[f64]) -> Result<PointCloud> {
    let n = system.dim;
    if base_point.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "base point in R^{} for an IFS on R^{n}",
            base_point.len()
        )));
    }
    let total = system
        .point_count()
        .filter(|&c| c <= MAX_POINTS)
        .ok_or_else(|| {
            Error::Size(format!(
                "{} maps at depth {} exceed {MAX_POINTS} points",
                system.maps.len(),
                system.depth
            ))
        })?;
    let mut current = base_point.to_vec();
    for _ in 0..system.depth {
        let count = current.len() / n;
        let mut next = vec![0.0; current.len() * system.maps.len()];
        for (k, map) in system.maps.iter().enumerate() {
            let block = &mut next[k * count * n..(k + 1) * count * n];
            for (src, dst) in current.chunks_exact(n).zip(block.chunks_exact_mut(n)) {
                map.apply(src, dst);
            }
        }
        current = next;
    }
    PointCloud::new(n, current, vec![1.0 / total as f64; total])
}

/// Cartesian product with product weights; points of `a` vary slowest.
pub fn product_cloud(a: &PointCloud, b: &PointCloud) -> Result<PointCloud> {
    let dim = a.dim() + b.dim();
    if dim > MAX_DIM {
        return Err(Error::Size(format!("product dimension {dim} exceeds {MAX_DIM}")));
    }
    let count = a
        .len()
        .checked_mul(b.len())
        .filter(|&c| c <= MAX_POINTS)
        .ok_or_else(|| Error::Size(format!("{} x {} points exceed {MAX_POINTS}", a.len(), b.len())))?;
    let mut coords = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    for (p, wp) in a.iter() {
        for (q, wq) in b.iter() {
            coords.extend_from_slice(p);
            coords.extend_from_slice(q);
            weights.push(wp * wq);
        }
    }
    PointCloud::new(dim, coords, weights)
}

/// `count` equally spaced points of `[0,1]` with equal mass.
pub fn unit_segment(count: usize) -> Result<PointCloud> {
    if count < 2 {
        return Err(Error::InvalidParameter("a segment net needs at least two points".into()));
    }
    let pts = (0..count).map(|i| i as f64 / (count - 1) as f64).collect();
    PointCloud::with_equal_mass(1, pts)
}

/// `side²` cell-centred points of `[0,1]²` with equal mass.
pub fn unit_square(side: usize) -> Result<PointCloud> {
    let pts = (0..side)
        .flat_map(|i| (0..side).flat_map(move |j| [(i as f64 + 0.5) / side as f64, (j as f64 + 0.5) / side as f64]))
        .collect();
    PointCloud::with_equal_mass(2, pts)
}

/// Places a cloud with `h` horizontal and `v` vertical coordinates into ℝⁿ: the horizontal
/// block fills the first `h` coordinates, the vertical block the first `v` of the last `l`.
pub fn embed(cloud: &PointCloud, horizontal: usize, n: usize, l: usize) -> Result<PointCloud> {
    let vertical = cloud.dim() - horizontal.min(cloud.dim());
    if horizontal > n - l.min(n) || vertical > l {
        return Err(Error::DimensionMismatch(format!(
            "cannot place {horizontal} horizontal + {vertical} vertical coordinates into R^{n} with l = {l}"
        )));
    }
    cloud.map_points(n, |p, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[..horizontal].copy_from_slice(&p[..horizontal]);
        out[n - l..n - l + vertical].copy_from_slice(&p[horizontal..]);
    })
}

// ---------------------------------------------------------------------------------------
// Degenerate example

/// A family of m-planes in ℝⁿ to sample projections from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilyDescriptor {
    /// `W × {0}` for `W ∈ G(inner, m)`, inside `ℝ^{inner} × {0}^{n−inner}`.
    Horizontal { n: usize, inner: usize, m: usize },
    /// `V × ℝ^l` for `V ∈ G(n−l, m−l)`.
    Vertical { n: usize, m: usize, l: usize },
}

impl FamilyDescriptor {
    pub fn ambient_dim(&self) -> usize {
        match *self {
            Self::Horizontal { n, .. } | Self::Vertical { n, .. } => n,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Subspace> {
        match *self {
            Self::Horizontal { n, inner, m } => {
                let w = sample_uniform(inner, m, rng)?;
                let mut frame = DMatrix::zeros(n, m);
                frame.view_mut((0, 0), (inner, m)).copy_from(w.frame());
                Subspace::from_orthonormal(frame)
            }
            Self::Vertical { n, m, l } => vertical_lift(&sample_uniform(n - l, m - l, rng)?, l),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegenerateKind {
    /// `{0}³×[0,1]` against 2-planes inside `ℝ³×{0}`: every projection is a point.
    #[serde(rename = "vertical-line-in-R4-horizontal-family")]
    HorizontalFamily,
    /// The same set against `V × ℝ`, `V ∈ G(3,1)`: the segment survives every projection.
    #[serde(rename = "segment-preserved-family")]
    VerticalFamily,
}

impl FromStr for DegenerateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical-line-in-R4-horizontal-family" | "horizontal" => Ok(Self::HorizontalFamily),
            "segment-preserved-family" | "vertical" => Ok(Self::VerticalFamily),
            other => Err(Error::InvalidParameter(format!("unknown degenerate example kind {other:?}"))),
        }
    }
}

impl fmt::Display for DegenerateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HorizontalFamily => "vertical-line-in-R4-horizontal-family",
            Self::VerticalFamily => "segment-preserved-family",
        })
    }
}

/// Points on the degenerate segment `{0}³ × [0,1]`.
pub const DEGENERATE_POINTS: usize = 4097;

pub fn degenerate_example(kind: DegenerateKind) -> Result<(PointCloud, FamilyDescriptor)> {
    let cloud = embed(&unit_segment(DEGENERATE_POINTS)?, 0, 4, 1)?;
    let family = match kind {
        DegenerateKind::HorizontalFamily => FamilyDescriptor::Horizontal { n: 4, inner: 3, m: 2 },
        DegenerateKind::VerticalFamily => FamilyDescriptor::Vertical { n: 4, m: 2, l: 1 },
    };
    Ok((cloud, family))
}

// ---------------------------------------------------------------------------------------
// Manifest

/// How an entry is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Recipe {
    CantorThird,
    FourCorner,
    CantorDust,
    SierpinskiDust,
    FourCornerTimesSegment,
    CantorThirdTimesSegment,
    Segment,
    VerticalSegment,
    Square,
    DegenerateR4,
}

/// A named ground-truth set.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub key: &'static str,
    pub description: &'static str,
    /// Coordinates that belong to the horizontal factor.
    pub horizontal_dim: usize,
    /// Coordinates that belong to the vertical factor.
    pub vertical_dim: usize,
    pub reference_dimension: f64,
    pub default_depth: u32,
    /// Dyadic levels over which box counts of this set are resolved at the default depth.
    pub window: (u32, u32),
    recipe: Recipe,
}

/// Points in the segment factor of product entries.
pub const PRODUCT_SEGMENT_POINTS: usize = 513;

fn middle_third(depth: u32) -> Result<IfsSystem> {
    IfsSystem::uniform(1.0 / 3.0, &[vec![0.0], vec![2.0 / 3.0]], depth)
}

fn four_corner(depth: u32) -> Result<IfsSystem> {
    let t = 0.75;
    IfsSystem::uniform(0.25, &[vec![0.0, 0.0], vec![t, 0.0], vec![0.0, t], vec![t, t]], depth)
}

fn cantor_dust(depth: u32) -> Result<IfsSystem> {
    let t = 2.0 / 3.0;
    IfsSystem::uniform(1.0 / 3.0, &[vec![0.0, 0.0], vec![t, 0.0], vec![0.0, t], vec![t, t]], depth)
}

fn sierpinski_dust(depth: u32) -> Result<IfsSystem> {
    let t = 2.0 / 3.0;
    IfsSystem::uniform(
        1.0 / 3.0,
        &[vec![0.0, 0.0, 0.0], vec![t, t, 0.0], vec![t, 0.0, t], vec![0.0, t, t]],
        depth,
    )
}

impl ManifestEntry {
    pub fn dim(&self) -> usize {
        self.horizontal_dim + self.vertical_dim
    }

    /// The IFS behind the entry's fractal factor, if any.
    pub fn system(&self, depth: u32) -> Option<IfsSystem> {
        match self.recipe {
            Recipe::CantorThird | Recipe::CantorThirdTimesSegment => middle_third(depth).ok(),
            Recipe::FourCorner | Recipe::FourCornerTimesSegment => four_corner(depth).ok(),
            Recipe::CantorDust => cantor_dust(depth).ok(),
            Recipe::SierpinskiDust => sierpinski_dust(depth).ok(),
            _ => None,
        }
    }

    /// Builds the cloud; `depth` refines the fractal factor or, for nets, sets `2^depth` intervals.
    pub fn generate(&self, depth: Option<u32>) -> Result<PointCloud> {
        let depth = depth.unwrap_or(self.default_depth);
        let net = |depth: u32| -> Result<usize> {
            1usize
                .checked_shl(depth)
                .filter(|&c| c < MAX_POINTS)
                .map(|c| c + 1)
                .ok_or_else(|| Error::Size(format!("net of depth {depth} is too large")))
        };
        match self.recipe {
            Recipe::CantorThird | Recipe::FourCorner | Recipe::CantorDust | Recipe::SierpinskiDust => {
                let system = self.system(depth).expect("fractal recipe");
                ifs_generate(&system, &vec![0.0; system.dim])
            }
            Recipe::FourCornerTimesSegment | Recipe::CantorThirdTimesSegment => {
                let system = self.system(depth).expect("fractal recipe");
                let fractal = ifs_generate(&system, &vec![0.0; system.dim])?;
                product_cloud(&fractal, &unit_segment(PRODUCT_SEGMENT_POINTS)?)
            }
            Recipe::Segment | Recipe::VerticalSegment => unit_segment(net(depth)?),
            Recipe::Square => unit_square(1usize << depth.min(12)),
            Recipe::DegenerateR4 => {
                let (cloud, _) = degenerate_example(DegenerateKind::HorizontalFamily)?;
                Ok(cloud)
            }
        }
    }

    /// The cloud placed into ℝⁿ with vertical block of size `l`.
    pub fn generate_embedded(&self, depth: Option<u32>, n: usize, l: usize) -> Result<PointCloud> {
        let cloud = self.generate(depth)?;
        if self.recipe == Recipe::DegenerateR4 {
            if n != 4 {
                return Err(Error::DimensionMismatch("degenerate-r4 lives in R^4".into()));
            }
            return Ok(cloud);
        }
        embed(&cloud, self.horizontal_dim, n, l)
    }
}

/// The named corpus, in a fixed order.
pub fn manifest() -> Vec<ManifestEntry> {
    let cantor = 2f64.ln() / 3f64.ln();
    vec![
        ManifestEntry {
            key: "cantor-third",
            description: "middle-thirds Cantor set in [0,1]",
            horizontal_dim: 1,
            vertical_dim: 0,
            reference_dimension: cantor,
            default_depth: 14,
            window: (5, 14),
            recipe: Recipe::CantorThird,
        },
        ManifestEntry {
            key: "cantor-four-corner",
            description: "four-corner Cantor set in [0,1]^2, ratio 1/4",
            horizontal_dim: 2,
            vertical_dim: 0,
            reference_dimension: 1.0,
            default_depth: 8,
            window: (3, 11),
            recipe: Recipe::FourCorner,
        },
        ManifestEntry {
            key: "cantor-dust",
            description: "product of two middle-thirds Cantor sets",
            horizontal_dim: 2,
            vertical_dim: 0,
            reference_dimension: 2.0 * cantor,
            default_depth: 9,
            window: (5, 10),
            recipe: Recipe::CantorDust,
        },
        ManifestEntry {
            key: "sierpinski-dust",
            description: "four-map ratio-1/3 dust in [0,1]^3",
            horizontal_dim: 3,
            vertical_dim: 0,
            reference_dimension: 4f64.ln() / 3f64.ln(),
            default_depth: 9,
            window: (5, 9),
            recipe: Recipe::SierpinskiDust,
        },
        ManifestEntry {
            key: "cantor-four-corner-x-segment",
            description: "four-corner Cantor set times [0,1]",
            horizontal_dim: 2,
            vertical_dim: 1,
            reference_dimension: 2.0,
            default_depth: 5,
            window: (3, 7),
            recipe: Recipe::FourCornerTimesSegment,
        },
        ManifestEntry {
            key: "cantor-third-x-segment",
            description: "middle-thirds Cantor set times [0,1]",
            horizontal_dim: 1,
            vertical_dim: 1,
            reference_dimension: 1.0 + cantor,
            default_depth: 10,
            window: (5, 8),
            recipe: Recipe::CantorThirdTimesSegment,
        },
        ManifestEntry {
            key: "segment",
            description: "equally spaced net of [0,1]",
            horizontal_dim: 1,
            vertical_dim: 0,
            reference_dimension: 1.0,
            default_depth: 14,
            window: (4, 10),
            recipe: Recipe::Segment,
        },
        ManifestEntry {
            key: "vertical-segment",
            description: "equally spaced net of [0,1] placed in the vertical block",
            horizontal_dim: 0,
            vertical_dim: 1,
            reference_dimension: 1.0,
            default_depth: 14,
            window: (4, 10),
            recipe: Recipe::VerticalSegment,
        },
        ManifestEntry {
            key: "square",
            description: "cell-centred net of [0,1]^2",
            horizontal_dim: 2,
            vertical_dim: 0,
            reference_dimension: 2.0,
            default_depth: 8,
            window: (2, 6),
            recipe: Recipe::Square,
        },
        ManifestEntry {
            key: "degenerate-r4",
            description: "the segment {0}^3 x [0,1] in R^4",
            horizontal_dim: 3,
            vertical_dim: 1,
            reference_dimension: 1.0,
            default_depth: 12,
            window: (4, 8),
            recipe: Recipe::DegenerateR4,
        },
    ]
}

pub fn lookup(key: &str) -> Result<ManifestEntry> {
    manifest().into_iter().find(|e| e.key == key).ok_or_else(|| {
        let keys: Vec<&str> = manifest().iter().map(|e| e.key).collect();
        Error::Config(format!("unknown fractal key {key:?}; known keys: {}", keys.join(", ")))
    })
}
