//! `egoflow`: continuous ego-motion estimation from RGB-D frame pairs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use egoflow::config::{FlowSource, IntrinsicsSource, LayerMode, RunConfig};
use egoflow::pipeline::{
    run_estimate, run_evaluate, run_project, EvaluateOptions, PipelineError, ProjectInputs,
};
use egoflow::synthdir::{write_synth_sequence, SynthSequenceConfig};
use egoflow_core::layers::SymmetryPolicy;
use egoflow_core::synth::{SceneConfig, TwoBodyConfig};

#[derive(Parser)]
#[command(
    name = "egoflow",
    version,
    about = "Continuous ego-motion from RGB-D: dense flow, least-squares twist fitting, \
             two-layer motion segmentation, trajectory evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a camera trajectory over a TUM-format sequence.
    Estimate(EstimateArgs),
    /// Compare a predicted trajectory against ground truth (RPE + snippet ATE).
    Evaluate(EvaluateArgs),
    /// Generate a synthetic TUM-format sequence with exact ground truth.
    Synth(SynthArgs),
    /// Inspect a single frame pair: fitted twist, losses, optional image dumps.
    Project(ProjectArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Sequence directory (resolved against $EGOFLOW_DATASET_ROOT when relative).
    #[arg(long)]
    dataset: PathBuf,
    /// Key=value config file; values here override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Intrinsics preset (fr1|fr2|fr3|default) or path to an intrinsics file.
    #[arg(long, default_value = "default")]
    intrinsics: String,
    /// "computed" or a directory of .flo files named by timestamp.
    #[arg(long, default_value = "computed")]
    flow: String,
    /// single | two-layer
    #[arg(long, default_value = "single")]
    mode: String,
    /// larger-support | smaller-motion
    #[arg(long, default_value = "larger-support")]
    policy: String,
    #[arg(long, default_value = "egoflow-out")]
    out: PathBuf,
    /// Pixel stride for the least-squares accumulation.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    max_pairs: Option<usize>,
    /// Timestamp association tolerance, seconds.
    #[arg(long, default_value_t = 0.02)]
    max_diff: f64,
    /// Write per-pair segmentation masks (two-layer mode).
    #[arg(long, default_value_t = false)]
    write_masks: bool,
    #[arg(long, default_value_t = 1.0)]
    lambda_of: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_mf: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_op: f64,
    /// Variational flow: pyramid levels.
    #[arg(long, default_value_t = 4)]
    flow_levels: usize,
    /// Variational flow: Jacobi iterations per warp.
    #[arg(long, default_value_t = 100)]
    flow_iterations: usize,
    /// Variational flow: smoothness weight (8-bit intensity units).
    #[arg(long, default_value_t = 15.0)]
    flow_alpha: f64,
    /// Variational flow: warps per level.
    #[arg(long, default_value_t = 3)]
    flow_warps: usize,
}

impl EstimateArgs {
    fn into_config(self) -> Result<RunConfig, String> {
        let mut cfg = RunConfig {
            dataset: self.dataset,
            output_dir: self.out,
            max_pairs: self.max_pairs,
            max_diff: self.max_diff,
            write_masks: self.write_masks,
            ..RunConfig::default()
        };
        cfg.intrinsics = if self.intrinsics.contains('/') || self.intrinsics.ends_with(".txt") {
            IntrinsicsSource::File(PathBuf::from(&self.intrinsics))
        } else {
            IntrinsicsSource::Preset(self.intrinsics.clone())
        };
        cfg.flow_source = if self.flow == "computed" {
            FlowSource::Computed
        } else {
            FlowSource::Directory(PathBuf::from(&self.flow))
        };
        cfg.layer_mode = match self.mode.as_str() {
            "single" => LayerMode::Single,
            "two-layer" => LayerMode::TwoLayer,
            other => return Err(format!("unknown mode {other:?}")),
        };
        cfg.symmetry_policy = match self.policy.as_str() {
            "larger-support" => SymmetryPolicy::LargerSupport,
            "smaller-motion" => SymmetryPolicy::SmallerMotion { rotation_scale: 1.0 },
            other => return Err(format!("unknown policy {other:?}")),
        };
        cfg.robust.fit.stride = self.stride;
        cfg.layers.robust.fit.stride = self.stride;
        cfg.loss_weights.of = self.lambda_of;
        cfg.loss_weights.mf = self.lambda_mf;
        cfg.loss_weights.op = self.lambda_op;
        cfg.flow.pyramid_levels = self.flow_levels;
        cfg.flow.iterations = self.flow_iterations;
        cfg.flow.alpha = self.flow_alpha;
        cfg.flow.warps = self.flow_warps;
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(|e| e.to_string())?;
        }
        cfg.resolve_dataset_root();
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    max_diff: f64,
    #[arg(long, default_value_t = 5)]
    snippet_len: usize,
    /// Write the structured per-pair report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Plant a dynamic rigid region with its own twist.
    #[arg(long, default_value_t = false)]
    two_body: bool,
    /// Dynamic region area fraction for --two-body.
    #[arg(long, default_value_t = 0.3)]
    dynamic_area: f64,
    /// Peak displacement of the drawn twist, fraction of width.
    #[arg(long, default_value_t = 0.02)]
    max_disp: f64,
    /// Skip writing ground-truth .flo files.
    #[arg(long, default_value_t = false)]
    no_flow: bool,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    image_t: PathBuf,
    #[arg(long)]
    image_next: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    /// Precomputed flow file; classical flow is computed when absent.
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    intrinsics: String,
    /// Write flow/field visualizations and warped-difference maps here.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
}

fn fail(err: &PipelineError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn cmd_estimate(args: EstimateArgs) -> ExitCode {
    let config = match args.into_config() {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    match run_estimate(&config) {
        Ok(outcome) => {
            let ok = outcome.records.len() - outcome.pairs_failed;
            println!(
                "estimated {ok}/{} pairs ({} interpolated)",
                outcome.records.len(),
                outcome.pairs_failed
            );
            println!("trajectory: {}", outcome.trajectory_path.display());
            println!("report:     {}", outcome.report_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> ExitCode {
    let options = EvaluateOptions {
        max_diff: args.max_diff,
        snippet_len: args.snippet_len,
    };
    match run_evaluate(&args.pred, &args.gt, &options) {
        Ok(outcome) => {
            print!("{}", outcome.table());
            if let Some(path) = args.out {
                if let Err(e) = std::fs::write(&path, outcome.structured_report()) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
                println!("report:     {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_synth(args: SynthArgs) -> ExitCode {
    let config = SynthSequenceConfig {
        scene: SceneConfig {
            width: args.width,
            height: args.height,
            max_displacement_frac: args.max_disp,
            two_body: args.two_body.then(|| TwoBodyConfig {
                area_fraction: args.dynamic_area,
                twist: None,
            }),
            ..SceneConfig::default()
        },
        frames: args.frames,
        fps: args.fps,
        seed: args.seed,
        write_flow: !args.no_flow,
    };
    match write_synth_sequence(&args.out, &config) {
        Ok(summary) => {
            println!(
                "wrote {} frames ({} pairs) to {}",
                summary.frames,
                summary.pairs,
                summary.dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_project(args: ProjectArgs) -> ExitCode {
    let intrinsics = if args.intrinsics.contains('/') || args.intrinsics.ends_with(".txt") {
        IntrinsicsSource::File(PathBuf::from(&args.intrinsics))
    } else {
        IntrinsicsSource::Preset(args.intrinsics.clone())
    };
    let inputs = ProjectInputs {
        image_t: args.image_t,
        image_next: args.image_next,
        depth: args.depth,
        flow_file: args.flow,
        intrinsics,
        dump_dir: args.dump_dir,
        config: RunConfig::default(),
    };
    match run_project(&inputs) {
        Ok(outcome) => {
            let v = &outcome.fit.velocity;
            println!(
                "twist tau   [{:.6e} {:.6e} {:.6e}]",
                v.tau.x, v.tau.y, v.tau.z
            );
            println!(
                "twist omega [{:.6e} {:.6e} {:.6e}]",
                v.omega.x, v.omega.y, v.omega.z
            );
            println!(
                "residual_rms {:.6e}  support {}  condition {:.3e}  iterations {} converged {}",
                outcome.fit.residual_rms,
                outcome.fit.support,
                outcome.fit.condition_estimate,
                outcome.iterations,
                outcome.converged
            );
            if let Some(l) = outcome.losses {
                println!(
                    "losses l_of {:.6e}  l_mf {:.6e}  l_op {:.6e}  l_final {:.6e}",
                    l.l_of, l.l_mf, l.l_op, l.l_final
                );
            }
            for path in outcome.dumped {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Project(args) => cmd_project(args),
    }
}
