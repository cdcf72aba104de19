//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use grassdim::dimension::{boxdim_estimate, default_s_grid, energy_slope_dim_with, EnergySlopeOptions, LineFit};
use grassdim::experiments::{
    run_experiment, ExperimentConfig, ExperimentKind, FamilyKind, RunOutput,
};
use grassdim::fractals::manifest;
use grassdim::grassmann::{aligned_bases, ball_volume_mc, dpi_distance, sample_uniform, wedge_distance};
use grassdim::measures::{
    commutation_check, cube_self_energy, riesz_energy_grid, sandwich_check, Cell, DyadicGrid, GridMeasure,
    PointCloud,
};
use grassdim::seeding::stream_rng;

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within_budget(start: Instant, budget: Duration) -> (bool, String) {
    let elapsed = start.elapsed();
    (elapsed <= budget, format!("{:.1}s of {}s", elapsed.as_secs_f64(), budget.as_secs()))
}

// ---------------------------------------------------------------------------------------

const BALL_SAMPLES: usize = 100_000;
const BALL_SLOPE_TOLERANCE: f64 = 0.10;
const BALL_BUDGET: Duration = Duration::from_secs(60);

fn ball_volume_exponent() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, m) in [(2, 1), (3, 1), (4, 2)] {
        let start = Instant::now();
        let mut rng = stream_rng(SEED, (10 * n + m) as u64);
        let center = sample_uniform(n, m, &mut rng).unwrap();
        let data: Vec<(f64, f64)> = (3..=7)
            .map(|j| {
                let delta = 0.5f64.powi(j);
                let vol = ball_volume_mc(&center, delta, BALL_SAMPLES, &mut rng).unwrap();
                (delta.log2(), vol.fraction.log2())
            })
            .collect();
        let slope = LineFit::fit(&data).unwrap().slope;
        let expected = (m * (n - m)) as f64;
        let ok_slope = (slope - expected).abs() <= BALL_SLOPE_TOLERANCE * expected;
        let (ok_time, time) = within_budget(start, BALL_BUDGET);
        pass &= ok_slope && ok_time;
        parts.push(format!("G({n},{m}) slope {slope:.3} vs {expected} ({time})"));
    }
    outcome(pass, parts.join("; "))
}

const PAIRS: usize = 10_000;
const ALIGNED_SLACK: f64 = 1e-8;
const PAIR_BUDGET: Duration = Duration::from_secs(30);

fn aligned_bases_bound() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (n, m) in [(3, 1), (3, 2), (4, 2)] {
        let mut rng = stream_rng(SEED, 100 + (10 * n + m) as u64);
        let mut violations = 0;
        let mut worst = 0.0f64;
        for _ in 0..PAIRS {
            let v = sample_uniform(n, m, &mut rng).unwrap();
            let w = sample_uniform(n, m, &mut rng).unwrap();
            let d = dpi_distance(&v, &w).unwrap();
            match aligned_bases(&v, &w) {
                Ok(pair) => {
                    let gap = pair.max_pair_gap();
                    if gap > 2f64.sqrt() * d + ALIGNED_SLACK {
                        violations += 1;
                    }
                    if d > 0.0 {
                        worst = worst.max(gap / d);
                    }
                }
                Err(_) => violations += 1,
            }
        }
        pass &= violations == 0;
        parts.push(format!("G({n},{m}) {violations} violations, max gap/d_pi {worst:.4}"));
    }
    let (ok_time, time) = within_budget(start, PAIR_BUDGET);
    outcome(pass && ok_time, format!("{} ({time})", parts.join("; ")))
}

const BILIPSCHITZ_MAX_SPREAD: f64 = 10.0;

fn bilipschitz() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (n, m) in [(2, 1), (3, 1), (3, 2), (4, 2)] {
        let mut rng = stream_rng(SEED, 200 + (10 * n + m) as u64);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for _ in 0..PAIRS {
            let v = sample_uniform(n, m, &mut rng).unwrap();
            let w = sample_uniform(n, m, &mut rng).unwrap();
            let d = wedge_distance(&v, &w).unwrap();
            if d > 0.0 {
                let r = dpi_distance(&v, &w).unwrap() / d;
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        pass &= hi / lo < BILIPSCHITZ_MAX_SPREAD;
        parts.push(format!("G({n},{m}) ratio in [{lo:.3}, {hi:.3}]"));
    }
    let (ok_time, time) = within_budget(start, PAIR_BUDGET);
    outcome(pass && ok_time, format!("{} ({time})", parts.join("; ")))
}

const MEASURES_PER_LEVEL: usize = 50;
const MAX_RANDOM_CELLS: usize = 64;
const LEVEL_MAXIMA_SPREAD: f64 = 2.0;
const ENERGY_BUDGET: Duration = Duration::from_secs(120);

fn random_grid_measure(rng: &mut impl Rng, dim: usize, level: u32) -> GridMeasure {
    let side = 1i64 << level;
    let total = (side as usize).pow(dim as u32);
    let count = rng.random_range(1..=total.min(MAX_RANDOM_CELLS));
    let cells: Vec<(Cell, f64)> = (0..count)
        .map(|_| {
            let cell: Cell = (0..dim).map(|_| rng.random_range(0..side)).collect();
            (cell, rng.random_range(0.1..1.0))
        })
        .collect();
    GridMeasure::from_cells(DyadicGrid::new(dim, level), cells).unwrap()
}

fn energy_comparison() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for dim in [1usize, 2] {
        for (s, t) in [(0.9, 0.5), (1.5, 1.0)] {
            if s >= dim as f64 {
                continue;
            }
            let constant = cube_self_energy(dim, s).unwrap() / cube_self_energy(dim, t).unwrap();
            let mut rng = stream_rng(SEED, 300 + (dim * 10) as u64 + (s * 10.0) as u64);
            let mut level_max = Vec::new();
            for level in 2..=8u32 {
                let delta = 0.5f64.powi(level as i32);
                let mut worst = 0.0f64;
                for _ in 0..MEASURES_PER_LEVEL {
                    let nu = random_grid_measure(&mut rng, dim, level);
                    let ratio = riesz_energy_grid(&nu, s).unwrap() / (delta.powf(t - s) * riesz_energy_grid(&nu, t).unwrap());
                    worst = worst.max(ratio);
                }
                level_max.push(worst);
            }
            let hi = level_max.iter().cloned().fold(0.0, f64::max);
            let lo = level_max.iter().cloned().fold(f64::INFINITY, f64::min);
            let ok = hi <= constant * (1.0 + 1e-9) && hi / lo < LEVEL_MAXIMA_SPREAD;
            pass &= ok;
            parts.push(format!("d={dim} (s,t)=({s},{t}) C={constant:.3} max ratio {hi:.3}, level maxima spread {:.3}", hi / lo));
        }
    }
    let (ok_time, time) = within_budget(start, ENERGY_BUDGET);
    outcome(pass && ok_time, format!("{} ({time})", parts.join("; ")))
}

const COMMUTATION_INSTANCES: usize = 20;
const COMMUTATION_TOLERANCE: f64 = 0.05;
const SANDWICH_MAX_SPREAD: f64 = 2.0;
const SANDWICH_LEVELS: [u32; 5] = [3, 4, 5, 6, 7];
const COMMUTATION_BUDGET: Duration = Duration::from_secs(120);

fn random_atoms(rng: &mut impl Rng, dim: usize, count: usize) -> PointCloud {
    let coords: Vec<f64> = (0..dim * count).map(|_| rng.random_range(0.3..0.7)).collect();
    let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.2..1.0)).collect();
    PointCloud::new(dim, coords, weights).unwrap()
}

/// The sandwich constants are fitted per scale as the worst ratio over all instances.
fn commutation_and_sandwich() -> Outcome {
    let start = Instant::now();
    let mut rng = stream_rng(SEED, 400);
    let mut worst = 0.0f64;
    let mut lower = vec![0.0f64; SANDWICH_LEVELS.len()];
    let mut upper = vec![0.0f64; SANDWICH_LEVELS.len()];
    for i in 0..COMMUTATION_INSTANCES {
        let n = 2 + i % 2;
        let m = 1 + (i / 2) % (n - 1);
        let atoms = rng.random_range(1..=3);
        let cloud = random_atoms(&mut rng, n, atoms);
        let v = sample_uniform(n, m, &mut rng).unwrap();
        worst = worst.max(commutation_check(&cloud, &v, 3, 3).unwrap().relative);
        for (k, &j) in SANDWICH_LEVELS.iter().enumerate() {
            let r = sandwich_check(&cloud, &v, j, 3).unwrap();
            lower[k] = lower[k].max(r.lower_ratio);
            upper[k] = upper[k].max(r.upper_ratio);
        }
    }
    let spread = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
    let (ls, us) = (spread(&lower), spread(&upper));
    let pass = worst < COMMUTATION_TOLERANCE && ls < SANDWICH_MAX_SPREAD && us < SANDWICH_MAX_SPREAD;
    let (ok_time, time) = within_budget(start, COMMUTATION_BUDGET);
    let show = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    outcome(
        pass && ok_time,
        format!(
            "commutation max relative {worst:.4}; sandwich constants lower [{}] spread {ls:.3}, upper [{}] spread {us:.3} ({time})",
            show(&lower),
            show(&upper)
        ),
    )
}

// ---------------------------------------------------------------------------------------

fn config(kind: ExperimentKind, key: &str, n: usize, m: usize, levels: [u32; 2]) -> ExperimentConfig {
    ExperimentConfig {
        experiment: kind,
        n,
        m,
        l: 1,
        fractal_key: key.into(),
        num_directions: 100,
        levels,
        seed: SEED,
        depth: None,
        family: FamilyKind::Vertical,
        sigma: None,
        sigma_prime: None,
        tau: None,
        beta: None,
        output_path: None,
    }
}

const CENSUS_FIT_LEVELS: usize = 2;
const CENSUS_BUDGET: Duration = Duration::from_secs(300);

/// Constants are fitted on the two coarsest scales and must keep holding at the finer ones.
fn discrete_marstrand() -> Outcome {
    let start = Instant::now();
    let families = [
        ("segment", 3, 2, 0.5, 0.9),
        ("segment", 4, 2, 1.0, 1.5),
        ("segment", 4, 3, 1.0, 1.5),
        ("square", 4, 3, 0.75, 1.5),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut overall = 0.0f64;
    for (key, n, m, tau, beta) in families {
        let mut c = config(ExperimentKind::MarstrandCensus, key, n, m, [4, 7]);
        c.tau = Some(tau);
        c.beta = Some(beta);
        let report = match run_experiment(&c, None) {
            Ok(RunOutput::Census(r)) => r,
            other => return outcome(false, format!("{key} census failed: {:?}", other.err())),
        };
        let (fit, check) = report.rows.split_at(CENSUS_FIT_LEVELS);
        let upper = fit.iter().map(|r| r.bound_ratio).fold(0.0, f64::max);
        let lower = fit.iter().filter_map(|r| r.mean_ratio).fold(f64::INFINITY, f64::min);
        let upper_ok = check.iter().all(|r| r.bad_count as f64 <= upper * r.bound_rhs);
        let lower_ok = check.iter().all(|r| r.mean_tube_count.unwrap() >= lower * r.mean_rhs.unwrap());
        let certified = report.rows.iter().all(|r| r.spread_constant <= grassdim::marstrand::SPREAD_CERTIFICATE);
        overall = overall.max(report.fitted_upper_constant);
        pass &= upper_ok && lower_ok && certified;
        let (gn, gm) = report.grassmannian;
        parts.push(format!(
            "{key} G({gn},{gm}) tau={tau}: C={upper:.3} holds {upper_ok}, c={lower:.3} holds {lower_ok}, bad counts {:?}",
            report.rows.iter().map(|r| r.bad_count).collect::<Vec<_>>()
        ));
    }
    let (ok_time, time) = within_budget(start, CENSUS_BUDGET);
    outcome(pass && ok_time, format!("{}; single C over all families {overall:.3} ({time})", parts.join("; ")))
}

const SWEEP_BUDGET: Duration = Duration::from_secs(300);

fn sweep(c: &ExperimentConfig) -> grassdim::experiments::ExperimentReport {
    match run_experiment(c, None).unwrap() {
        RunOutput::Sweep(r) => r,
        RunOutput::Census(_) => unreachable!(),
    }
}

fn preservation() -> Outcome {
    let start = Instant::now();
    let mut c = config(ExperimentKind::Preservation, "cantor-four-corner", 3, 2, [6, 12]);
    c.depth = Some(8);
    let r = sweep(&c);
    let exceptional = r.summary.exceptional_at(0.15).unwrap();
    let ok = (r.summary.median - 1.0).abs() <= 0.1 && exceptional <= 0.1;
    let (ok_time, time) = within_budget(start, SWEEP_BUDGET);
    outcome(
        ok && ok_time,
        format!(
            "median {:.4}, IQR {:.4}, exceptional_fraction(0.15) {exceptional:.2} over {} directions ({time})",
            r.summary.median,
            r.summary.interquartile_range,
            r.per_direction.len()
        ),
    )
}

fn constancy() -> Outcome {
    let start = Instant::now();
    let mut c = config(ExperimentKind::Constancy, "cantor-four-corner-x-segment", 3, 2, [5, 8]);
    c.depth = Some(6);
    let r = sweep(&c);
    let exceptional = r.summary.exceptional_at(0.15).unwrap();
    let product_ok = (r.summary.median - 2.0).abs() <= 0.15 && exceptional <= 0.1;

    let mut d = config(ExperimentKind::Constancy, "degenerate-r4", 4, 2, [4, 8]);
    d.family = FamilyKind::Horizontal;
    let deg = sweep(&d);
    let zeros = deg.per_direction.iter().filter(|row| row.estimate.value == 0.0).count();
    let degenerate_ok = zeros == deg.per_direction.len();
    let (ok_time, time) = within_budget(start, SWEEP_BUDGET);
    outcome(
        product_ok && degenerate_ok && ok_time,
        format!(
            "product median {:.4}, exceptional_fraction(0.15) {exceptional:.2}; degenerate family {zeros}/{} estimates exactly 0 ({time})",
            r.summary.median,
            deg.per_direction.len()
        ),
    )
}

const CORPUS_TOLERANCE: f64 = 0.08;
const CROSS_TOLERANCE: f64 = 0.15;
const CORPUS_BUDGET: Duration = Duration::from_secs(120);

fn estimator_sanity() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for entry in manifest() {
        let cloud = entry.generate(None).unwrap();
        let (j0, j1) = entry.window;
        let boxed = boxdim_estimate(&cloud, j0, j1).unwrap().value;
        let opts = EnergySlopeOptions { min_level: j0, max_level: j1, ..Default::default() };
        let energy = energy_slope_dim_with(&cloud, &default_s_grid(cloud.dim(), 0.01), &opts).unwrap().value;
        let similarity = entry
            .system(entry.default_depth)
            .map(|s| s.similarity_dimension() + entry.vertical_dim as f64)
            .unwrap_or(entry.reference_dimension);
        let ok = (similarity - entry.reference_dimension).abs() < 1e-9
            && (boxed - similarity).abs() <= CORPUS_TOLERANCE
            && (energy - boxed).abs() <= CROSS_TOLERANCE;
        pass &= ok;
        parts.push(format!("{} depth {} box {boxed:.3} energy {energy:.3} ref {similarity:.3}", entry.key, entry.default_depth));
    }
    let (ok_time, time) = within_budget(start, CORPUS_BUDGET);
    outcome(pass && ok_time, format!("{} ({time})", parts.join("; ")))
}

fn determinism() -> Outcome {
    let mut pres = config(ExperimentKind::Preservation, "cantor-four-corner", 3, 2, [6, 12]);
    pres.depth = Some(8);
    pres.num_directions = 16;
    let mut cons = config(ExperimentKind::Constancy, "cantor-third-x-segment", 3, 2, [4, 7]);
    cons.depth = Some(8);
    cons.num_directions = 16;
    let mut census = config(ExperimentKind::MarstrandCensus, "segment", 3, 2, [4, 6]);
    census.tau = Some(0.5);
    census.beta = Some(0.9);
    let mut parts = Vec::new();
    let mut pass = true;
    for c in [pres, cons, census] {
        let a = run_experiment(&c, Some(1)).unwrap();
        let b = run_experiment(&c, Some(3)).unwrap();
        let c2 = run_experiment(&c, None).unwrap();
        let ja = a.without_wall_time().to_json().unwrap();
        let same = ja == b.without_wall_time().to_json().unwrap() && ja == c2.without_wall_time().to_json().unwrap();
        pass &= same;
        parts.push(format!("{:?} identical {same} ({} bytes)", c.experiment, ja.len()));
    }
    outcome(pass, parts.join("; "))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("grassmannian ball-volume exponent", ball_volume_exponent),
        ("aligned-bases bound", aligned_bases_bound),
        ("bilipschitz d vs d_pi", bilipschitz),
        ("energy comparison", energy_comparison),
        ("commutation and sandwich", commutation_and_sandwich),
        ("discrete marstrand census", discrete_marstrand),
        ("preservation experiment", preservation),
        ("constancy experiment", constancy),
        ("estimator sanity", estimator_sanity),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failures += 1;
        }
        println!("{} [{}] {name}: {}", if result.pass { "PASS" } else { "FAIL" }, i + 1, result.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
