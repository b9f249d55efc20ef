//! Command-line front end: sequence interpolation, evaluation, synthetic
//! dataset generation and file-level flow tools.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use frameinterp::config::load_config;
use frameinterp::dataset::{gen_dataset, DatasetSpec};
use frameinterp::estimate::{block_match, BlockMatchParams};
use frameinterp::flo::{load_flo, save_flo};
use frameinterp::flow_ops::reverse_flow;
use frameinterp::metrics::{MetricReport, MetricTable};
use frameinterp::motion::{linear_predict, qvi_flow_at, rectified_flow_at, RqfpParams};
use frameinterp::pipeline::{FrameQuad, Pipeline, PipelineConfig};
use frameinterp::scene::SceneClass;
use frameinterp::Frame;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "frameinterp", version, about = "Video frame interpolation with quadratic flow prediction")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Insert interpolated frames between every pair of consecutive frames.
    Interpolate {
        /// Directory of PNG frames; lexicographic file order is temporal order.
        input: PathBuf,
        /// Output directory for `frame_NNNNNN.png`.
        output: PathBuf,
        /// Frame-rate factor: 2 inserts one frame per pair, 4 inserts three.
        #[arg(long, value_parser = ["2", "4"])]
        factor: Option<String>,
        /// Pipeline configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare predicted frames with ground truth, matched by file name.
    Eval {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        /// Where to write the `key=value` report (default: stdout only).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with exact flows.
    Synth {
        out_dir: PathBuf,
        #[arg(long, value_enum)]
        class: ClassArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Flow file tools.
    #[command(subcommand)]
    Flow(FlowCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassArg {
    Linear,
    Quadratic,
    Jerk,
}

impl From<ClassArg> for SceneClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Linear => SceneClass::Linear,
            ClassArg::Quadratic => SceneClass::Quadratic,
            ClassArg::Jerk => SceneClass::Jerk,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Qvi,
    Rectified,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long, default_value_t = BlockMatchParams::default().levels)]
    levels: usize,
    #[arg(long, default_value_t = BlockMatchParams::default().radius)]
    radius: usize,
    #[arg(long, default_value_t = BlockMatchParams::default().patch)]
    patch: usize,
}

#[derive(Debug, Subcommand)]
enum FlowCommand {
    /// Block-matching flow from frame A to frame B.
    Estimate {
        from: PathBuf,
        to: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        params: MatchArgs,
    },
    /// Reverse a flow by forward splatting.
    Reverse {
        input: PathBuf,
        out: PathBuf,
        /// Optional grayscale PNG of the visibility mask.
        #[arg(long)]
        visibility: Option<PathBuf>,
    },
    /// Predict the flow from frame 0 to fraction `t` from the flows to frames -1, 1 and 2.
    Predict {
        f0m1: PathBuf,
        f01: PathBuf,
        f02: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[arg(long, value_enum, default_value_t = ModelArg::Rectified)]
        model: ModelArg,
        #[arg(long, default_value_t = RqfpParams::default().omega)]
        omega: f64,
        #[arg(long, default_value_t = RqfpParams::default().gamma)]
        gamma: f64,
    },
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<frameinterp::Error> for CliError {
    fn from(e: frameinterp::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} '{}' is not a directory", path.display())))
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file '{}' does not exist", path.display())))
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::Runtime(e.into())),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: frameinterp <interpolate|eval|synth|flow> ... (see --help)");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Interpolate { input, output, factor, config } => {
            require_dir(&input, "input directory")?;
            if let Some(cfg) = &config {
                require_file(cfg)?;
            }
            interpolate(&input, &output, factor.as_deref(), config.as_deref())
        }
        Command::Eval { pred_dir, gt_dir, report } => {
            require_dir(&pred_dir, "prediction directory")?;
            require_dir(&gt_dir, "ground-truth directory")?;
            eval(&pred_dir, &gt_dir, report.as_deref())
        }
        Command::Synth { out_dir, class, count, seed, height, width } => {
            let spec = DatasetSpec {
                seed,
                class: class.into(),
                count: count as usize,
                height,
                width,
                channels: 3,
            };
            let dirs = gen_dataset(&out_dir, &spec)?;
            println!("wrote {} sequences to {}", dirs.len(), out_dir.display());
            Ok(())
        }
        Command::Flow(cmd) => flow(cmd),
    }
}

/// PNG files of `dir` in lexicographic order of their names.
pub fn list_frames(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            frames.push(path);
        }
    }
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

fn t_values_for(factor: &str) -> Vec<f64> {
    match factor {
        "4" => vec![0.25, 0.5, 0.75],
        _ => vec![0.5],
    }
}

/// Output file name of the frame at position `index` of the upsampled sequence.
pub fn output_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Sequence indices of the quad around pair `(k, k + 1)`; out-of-range
/// neighbours repeat the end frame.
pub fn window_indices(k: usize, n: usize) -> [usize; 4] {
    [k.saturating_sub(1), k, k + 1, (k + 2).min(n - 1)]
}

fn interpolate(input: &Path, output: &Path, factor: Option<&str>, config: Option<&Path>) -> Result<(), CliError> {
    let (mut cfg, label_offset) = match config {
        Some(path) => {
            let loaded = load_config(path).with_context(|| format!("loading config {}", path.display()))?;
            (loaded.pipeline, loaded.label_offset)
        }
        None => (PipelineConfig::default(), 0.0),
    };
    if let Some(f) = factor {
        cfg.t_values = t_values_for(f);
    }
    let pipeline = Pipeline::new(cfg)?;
    let paths = list_frames(input)?;
    let n = paths.len();
    if n < 2 {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "need at least two PNG frames in {}, found {n}",
            input.display()
        )));
    }
    let frames = paths
        .par_iter()
        .map(|p| Frame::read_png(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let per_pair = pipeline.config().t_values.len();
    let stride = per_pair + 1;
    for (k, path) in paths.iter().enumerate() {
        std::fs::copy(path, output.join(output_name(k * stride)))
            .with_context(|| format!("copying {}", path.display()))?;
    }
    (0..n - 1)
        .into_par_iter()
        .map(|k| -> anyhow::Result<()> {
            let idx = window_indices(k, n);
            let quad = FrameQuad::with_times(
                idx.map(|i| frames[i].clone()),
                idx.map(|i| label_offset + i as f64),
            )?;
            let outputs = pipeline
                .interpolate_multi(&quad)
                .with_context(|| format!("interpolating between frames {k} and {}", k + 1))?;
            for (j, frame) in outputs.iter().enumerate() {
                frame.write_png(output.join(output_name(k * stride + j + 1)))?;
            }
            Ok(())
        })
        .collect::<anyhow::Result<Vec<()>>>()?;
    println!(
        "wrote {} interpolated frames ({} total) to {}",
        (n - 1) * per_pair,
        n + (n - 1) * per_pair,
        output.display()
    );
    Ok(())
}

fn eval(pred_dir: &Path, gt_dir: &Path, report: Option<&Path>) -> Result<(), CliError> {
    let preds = list_frames(pred_dir)?;
    if preds.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!("no PNG frames in {}", pred_dir.display())));
    }
    let rows = preds
        .par_iter()
        .map(|p| -> anyhow::Result<(String, MetricReport)> {
            let name = p.file_name().expect("listed files have names").to_string_lossy().into_owned();
            let gt_path = gt_dir.join(&name);
            if !gt_path.is_file() {
                bail!("no ground truth for {name} in {}", gt_dir.display());
            }
            let pred = Frame::read_png(p).with_context(|| format!("reading {}", p.display()))?;
            let gt = Frame::read_png(&gt_path).with_context(|| format!("reading {}", gt_path.display()))?;
            let r = MetricReport::compute(&pred, &gt).with_context(|| format!("evaluating {name}"))?;
            Ok((name, r))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let table = MetricTable { rows };
    print!("{}", table.to_text());
    if let Some(path) = report {
        std::fs::write(path, table.to_key_values()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn flow(cmd: FlowCommand) -> Result<(), CliError> {
    match cmd {
        FlowCommand::Estimate { from, to, out, params } => {
            require_file(&from)?;
            require_file(&to)?;
            let params = BlockMatchParams::new(params.levels, params.radius, params.patch)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let a = Frame::read_png(&from)?;
            let b = Frame::read_png(&to)?;
            save_flo(&out, &block_match(&a, &b, &params)?)?;
        }
        FlowCommand::Reverse { input, out, visibility } => {
            require_file(&input)?;
            let (back, vis) = reverse_flow(&load_flo(&input)?);
            save_flo(&out, &back)?;
            if let Some(path) = visibility {
                vis.to_frame().write_png(path)?;
            }
        }
        FlowCommand::Predict { f0m1, f01, f02, out, t, model, omega, gamma } => {
            for p in [&f0m1, &f01, &f02] {
                require_file(p)?;
            }
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Usage(format!("--t {t} outside [0, 1]")));
            }
            let params = RqfpParams::new(omega, gamma).map_err(|e| CliError::Usage(e.to_string()))?;
            let (m1, p1, p2) = (load_flo(&f0m1)?, load_flo(&f01)?, load_flo(&f02)?);
            let flow = match model {
                ModelArg::Linear => linear_predict(&p1, t as f32),
                ModelArg::Qvi => qvi_flow_at(&p1, &m1, t)?,
                ModelArg::Rectified => rectified_flow_at(&m1, &p1, &p2, &params, t)?,
            };
            save_flo(&out, &flow)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_replicates_ends() {
        assert_eq!(window_indices(0, 5), [0, 0, 1, 2]);
        assert_eq!(window_indices(2, 5), [1, 2, 3, 4]);
        assert_eq!(window_indices(3, 5), [2, 3, 4, 4]);
        assert_eq!(window_indices(0, 2), [0, 0, 1, 1]);
    }

    #[test]
    fn names_and_factors() {
        assert_eq!(output_name(12), "frame_000012.png");
        assert_eq!(t_values_for("2"), vec![0.5]);
        assert_eq!(t_values_for("4"), vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_cli(["frameinterp"]), EXIT_USAGE);
        assert_eq!(run_cli(["frameinterp", "bogus"]), EXIT_USAGE);
        assert_eq!(run_cli(["frameinterp", "interpolate", "/nonexistent/in", "/tmp/out"]), EXIT_USAGE);
        assert_eq!(run_cli(["frameinterp", "--threads", "0", "eval", "/a", "/b"]), EXIT_USAGE);
        assert_eq!(run_cli(["frameinterp", "--version"]), EXIT_OK);
    }
}
