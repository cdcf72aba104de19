//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage, configuration and input errors, 2 when a numerical
//! guard (saturation, resolution, certification) stops the computation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dimension::{boxdim_estimate, default_s_grid, energy_slope_dim_with, EnergySlopeOptions};
use crate::error::{Error, Result};
use crate::experiments::{run_experiment, ExperimentConfig};
use crate::fractals::lookup;
use crate::grassmann::{sample_uniform, Subspace};
use crate::io::{read_cloud, read_json, to_json, write_cloud, write_cloud_csv, SubspaceRecord};
use crate::marstrand::{average_tube_count, bad_direction_census, DirectionSet};
use crate::measures::{pushforward, riesz_energy, PointCloud};
use crate::seeding::{stream_rng, with_pool};

#[derive(Debug, Parser)]
#[command(name = "grassdim", version, about = "Projections of fractal point clouds onto Grassmannian families")]
struct Cli {
    /// Worker threads (defaults to GRASSDIM_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw uniform subspaces of G(n,m) as JSON frames.
    SampleGrassmannian {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project a cloud onto a subspace, in the subspace's frame coordinates.
    Project {
        #[arg(long)]
        input: PathBuf,
        /// JSON file with one subspace record or a list of them.
        #[arg(long, conflicts_with = "axes")]
        subspace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Coordinate subspace, e.g. `0,2`.
        #[arg(long, value_delimiter = ',')]
        axes: Option<Vec<usize>>,
        #[command(flatten)]
        output: CloudOutput,
    },
    /// Multiscale box-counting estimate.
    Boxdim {
        #[arg(long)]
        input: PathBuf,
        /// Level window `j_min:j_max`.
        #[arg(long, value_parser = parse_levels)]
        levels: (u32, u32),
    },
    /// Energy-slope dimension estimate, or the Riesz energy at one exponent.
    Energy {
        #[arg(long)]
        input: PathBuf,
        /// Compute I_s for this s instead of estimating.
        #[arg(long)]
        s: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        s_step: f64,
        /// Restrict the fit to the distance scales `2^-a..2^-b`, as `a:b`.
        #[arg(long, value_parser = parse_levels)]
        levels: Option<(u32, u32)>,
    },
    /// Bad-direction census against a packed δ-separated direction set.
    Marstrand {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        level: u32,
        #[arg(long)]
        tau: f64,
        /// Also report the mean tube count (needs tau < beta).
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replace the weights by 1 before testing.
        #[arg(long)]
        unit_weights: bool,
    },
    /// Run experiments from config files.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
    /// Write a corpus cloud.
    Generate {
        key: String,
        #[arg(long)]
        depth: Option<u32>,
        /// Place into R^n with a vertical block of size l, as `n:l`.
        #[arg(long, value_parser = parse_levels)]
        embed: Option<(u32, u32)>,
        #[command(flatten)]
        output: CloudOutput,
    },
}

#[derive(Debug, Subcommand)]
enum ExperimentAction {
    Run {
        config: PathBuf,
        /// Overrides output_path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct CloudOutput {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the GDPC binary format (needs --out).
    #[arg(long, requires = "out")]
    binary: bool,
}

fn parse_levels(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical_guard() {
        2
    } else {
        1
    }
}

/// Parses `args` (program name first) and runs the command, writing results to `stdout`.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                1
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    let threads = cli.threads;
    match with_pool(threads, || execute(cli.command, threads)) {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

fn json_or_file<T: Serialize>(value: &T, out: Option<&Path>) -> Result<String> {
    let text = to_json(value)?;
    match out {
        Some(path) => {
            std::fs::write(path, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn emit_cloud(cloud: &PointCloud, output: &CloudOutput) -> Result<String> {
    match &output.out {
        Some(path) => {
            write_cloud(cloud, path, output.binary)?;
            Ok(String::new())
        }
        None => {
            let mut buf = Vec::new();
            write_cloud_csv(cloud, &mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
        }
    }
}

fn load_subspace(path: &Path, index: usize) -> Result<Subspace> {
    let value: serde_json::Value = read_json(path)?;
    let record: SubspaceRecord = match value {
        serde_json::Value::Array(items) => {
            let item = items
                .into_iter()
                .nth(index)
                .ok_or_else(|| Error::InvalidParameter(format!("no subspace at index {index}")))?;
            serde_json::from_value(item)?
        }
        other => serde_json::from_value(other)?,
    };
    record.to_subspace()
}

fn execute(command: Command, threads: Option<usize>) -> Result<String> {
    match command {
        Command::SampleGrassmannian { n, m, count, seed, out } => {
            let records = (0..count)
                .map(|i| sample_uniform(n, m, &mut stream_rng(seed, i as u64)).map(|v| SubspaceRecord::from(&v)))
                .collect::<Result<Vec<_>>>()?;
            json_or_file(&records, out.as_deref())
        }
        Command::Project { input, subspace, index, axes, output } => {
            let cloud = read_cloud(&input)?;
            let v = match (subspace, axes) {
                (Some(path), _) => load_subspace(&path, index)?,
                (None, Some(axes)) => Subspace::coordinate(cloud.dim(), &axes)?,
                (None, None) => return Err(Error::InvalidParameter("give --subspace or --axes".into())),
            };
            emit_cloud(&pushforward(&cloud, &v)?, &output)
        }
        Command::Boxdim { input, levels } => {
            let cloud = read_cloud(&input)?;
            to_json(&boxdim_estimate(&cloud, levels.0, levels.1)?)
        }
        Command::Energy { input, s, s_step, levels } => {
            let cloud = read_cloud(&input)?;
            match s {
                Some(s) => {
                    #[derive(Serialize)]
                    struct EnergyValue {
                        s: f64,
                        energy: f64,
                    }
                    to_json(&EnergyValue { s, energy: riesz_energy(&cloud, s)? })
                }
                None => {
                    let mut opts = EnergySlopeOptions::default();
                    if let Some((a, b)) = levels {
                        opts.min_level = a;
                        opts.max_level = b;
                    }
                    to_json(&energy_slope_dim_with(&cloud, &default_s_grid(cloud.dim(), s_step), &opts)?)
                }
            }
        }
        Command::Marstrand { input, m, level, tau, beta, seed, unit_weights } => {
            let mut cloud = read_cloud(&input)?;
            if unit_weights {
                cloud = PointCloud::with_unit_weights(cloud.dim(), cloud.coords().to_vec())?;
            }
            let delta = 0.5f64.powi(level as i32);
            let dirs = DirectionSet::greedy_packing(cloud.dim(), m, delta, &mut stream_rng(seed, level as u64))?;
            let report = bad_direction_census(&cloud, &dirs, level, tau)?;
            #[derive(Serialize)]
            struct MarstrandOutput {
                #[serde(flatten)]
                report: crate::marstrand::IncidenceReport,
                #[serde(skip_serializing_if = "Option::is_none")]
                mean_tube_count: Option<f64>,
            }
            let mean_tube_count = beta
                .map(|b| average_tube_count(&cloud, &dirs, level, tau, b))
                .transpose()?;
            to_json(&MarstrandOutput { report, mean_tube_count })
        }
        Command::Experiment { action: ExperimentAction::Run { config, out } } => {
            let config = ExperimentConfig::from_path(&config)?;
            let report = run_experiment(&config, threads)?;
            let target = out.or_else(|| config.output_path.as_ref().map(PathBuf::from));
            json_or_file(&report, target.as_deref())
        }
        Command::Generate { key, depth, embed: placement, output } => {
            let entry = lookup(&key)?;
            let cloud = match placement {
                Some((n, l)) => entry.generate_embedded(depth, n as usize, l as usize)?,
                None => entry.generate(depth)?,
            };
            emit_cloud(&cloud, &output)
        }
    }
}
