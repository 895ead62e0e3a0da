//! Command-line front end.
//!
//! Every command reads a JSON [`RunConfig`] and writes JSON reports under
//! the output directory. Reports hold no wall-clock data, so identical
//! configs give byte-identical reports; timings go to `timings.json`.
//!
//! Exit codes: 0 success, 1 I/O or input error, 2 configuration error,
//! 3 numerical failure, 4 failed check.

mod config;
mod features;
mod pipeline;

pub use config::{AblationConfig, GradcheckConfig, MetricsConfig, NoiseConfig, NoiseMode, RunConfig, SweepKey};
pub use features::{format_features, parse_features, read_features, write_features};
pub use pipeline::{
    apply_sweep, evaluate_sets, gradcheck_size, mean, mean_pairwise_distance, median, noise_lane, run_ablation,
    run_gradcheck, run_optimize, run_parallel, run_sample, summarize_samples, AblationReport, AblationRow, EvalReport,
    GradcheckInstance, GradcheckReport, GroupMetrics, OptimizeReport, Pipeline, PromptSamples, PromptSummary,
    SampleReport, SampleSummary, BAND_SLACK, TOOL, VERSION,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::tpso::VariantBundle;
use crate::{Error, Result};

/// `println!` that tolerates a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

pub const DEFAULT_OUT_DIR: &str = "tpso-out";

#[derive(Debug, Parser)]
#[command(name = "tpso", version, about = "Prompt-embedding variants for diverse guided sampling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration. Omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 for all cores (overrides `workers`).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Replaces the offset, noise and gradcheck seeds.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize variants for every prompt and write one bundle per prompt.
    Optimize,
    /// Sample base and variant trajectories from saved bundles.
    Sample {
        /// Directory holding `prompt_NNN.json` bundles (default `<out>/bundles`).
        #[arg(long)]
        bundles: Option<PathBuf>,
    },
    /// Compute metrics over feature files.
    Eval {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Reference set for Fréchet distance and precision/recall
        /// (default: the first file).
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Sweep kappa, lambda or r through optimize, sample and eval.
    Ablate {
        /// Swept key (default `ablation.sweep`).
        #[arg(long, value_enum)]
        sweep: Option<SweepKey>,
        /// Comma-separated values (default `ablation.values`).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
    },
    /// Compare reverse-mode gradients with central differences.
    Gradcheck {
        /// Scales the cosine adjoint; for testing that the check can fail.
        #[arg(long, hide = true)]
        inject_adjoint_fault: Option<f64>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::NonFinite { .. } | Error::ZeroNorm(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Resolved settings for one invocation.
struct Context {
    /// Config as echoed in reports: seed override applied, `--out` and
    /// `--workers` not, since they do not affect results.
    config: RunConfig,
    out: PathBuf,
    workers: usize,
}

impl Context {
    fn new(global: &GlobalArgs, require_config: bool) -> Result<Self> {
        let mut config = match &global.config {
            Some(path) => RunConfig::load(path)?,
            None if require_config => return Err(Error::Config("--config is required for this command".into())),
            None => RunConfig::default(),
        };
        if let Some(seed) = global.seed_override {
            config.tpso.seed = seed;
            config.noise.seed = seed;
            config.gradcheck.seed = seed;
        }
        let out = global
            .out
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let workers = global.workers.unwrap_or(config.workers);
        Ok(Self { config, out, workers })
    }

    /// Config with runtime-only overrides applied.
    fn effective(&self) -> RunConfig {
        RunConfig {
            workers: self.workers,
            ..self.config.clone()
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct Timings<'a> {
    command: &'a str,
    phases: Vec<(&'a str, f64)>,
}

fn write_timings(ctx: &Context, command: &str, phases: Vec<(&str, f64)>) -> Result<()> {
    write_json(&ctx.path("timings.json"), &Timings { command, phases })
}

pub fn bundle_name(prompt: usize) -> String {
    format!("prompt_{prompt:03}.json")
}

pub fn feature_name(prompt: usize) -> String {
    format!("prompt_{prompt:03}.txt")
}

fn restore_pipeline(ctx: &Context) -> Result<Pipeline> {
    let start = Instant::now();
    let p = Pipeline::new(&ctx.effective())?;
    info!("models built in {:.3}s", start.elapsed().as_secs_f64());
    Ok(p)
}

fn cmd_optimize(ctx: &Context) -> Result<i32> {
    let start = Instant::now();
    let p = restore_pipeline(ctx)?;
    let (bundles, mut report) = run_optimize(&p)?;
    report.config = ctx.config.clone();
    for (i, b) in bundles.iter().enumerate() {
        write_json(&ctx.path("bundles").join(bundle_name(i)), b)?;
    }
    write_json(&ctx.path("optimize_report.json"), &report)?;
    write_timings(ctx, "optimize", vec![("total", start.elapsed().as_secs_f64())])?;
    for row in &report.prompts {
        say!(
            "prompt {:3}  band {:5.3}  semantic {:.3e}  diversity {:.4}  iters {:4}  converged {}",
            row.prompt, row.band_rate, row.semantic_loss, row.diversity_loss, row.iterations, row.converged
        );
    }
    Ok(EXIT_OK)
}

fn load_bundle(path: &Path) -> Result<VariantBundle> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read bundle {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_sample(ctx: &Context, bundles_dir: Option<&Path>) -> Result<i32> {
    let start = Instant::now();
    ctx.config.require_prompts()?;
    let p = restore_pipeline(ctx)?;
    let dir = bundles_dir.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("bundles"));
    let bundles = (0..ctx.config.prompts.len())
        .map(|i| load_bundle(&dir.join(bundle_name(i))))
        .collect::<Result<Vec<_>>>()?;
    for (i, b) in bundles.iter().enumerate() {
        if b.token_ids != ctx.config.prompts[i] {
            return Err(Error::Invalid(format!("bundle {i} was optimized for a different prompt")));
        }
    }
    let mut report = run_sample(&p, &bundles)?;
    report.config = ctx.config.clone();
    let features = ctx.path("features");
    std::fs::create_dir_all(&features)?;
    for s in &report.prompts {
        write_features(&features.join(feature_name(s.prompt)), &s.variant_terminals)?;
    }
    let base: Vec<Vec<f64>> = report.prompts.iter().map(|s| s.base_terminal.clone()).collect();
    write_features(&features.join("base.txt"), &base)?;
    write_json(&ctx.path("sample_report.json"), &report)?;
    write_timings(ctx, "sample", vec![("total", start.elapsed().as_secs_f64())])?;
    for s in &report.prompts {
        say!(
            "prompt {:3}  terminal distance {:.6}  divergence from base {:.6}",
            s.prompt, s.terminal_distance, s.divergence_from_base
        );
    }
    Ok(EXIT_OK)
}

fn cmd_eval(ctx: &Context, files: &[PathBuf], reference: Option<&Path>) -> Result<i32> {
    let start = Instant::now();
    let sets = files.iter().map(|f| read_features(f)).collect::<Result<Vec<_>>>()?;
    let reference = match reference {
        Some(path) => read_features(path)?,
        None => sets[0].clone(),
    };
    let report = evaluate_sets(&sets, &reference, ctx.config.metrics.k)?;
    write_json(&ctx.path("eval_report.json"), &report)?;
    write_timings(ctx, "eval", vec![("total", start.elapsed().as_secs_f64())])?;
    say!("{}", serde_json::to_string_pretty(&report)?);
    Ok(EXIT_OK)
}

fn ablation_csv(report: &AblationReport) -> String {
    let mut out = format!(
        "{},mss,vendi,alignment,band_rate,diversity_loss,variant_cosine,terminal_distance,converged_rate\n",
        report.sweep.name()
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.value,
            r.mss,
            r.vendi,
            r.alignment,
            r.band_rate,
            r.diversity_loss,
            r.variant_cosine,
            r.terminal_distance,
            r.converged_rate
        ));
    }
    out
}

fn cmd_ablate(ctx: &Context, sweep: Option<SweepKey>, values: Option<&[f64]>) -> Result<i32> {
    let start = Instant::now();
    let key = sweep
        .or(ctx.config.ablation.sweep)
        .ok_or_else(|| Error::Config("no sweep key (use --sweep or ablation.sweep)".into()))?;
    let values = values.unwrap_or(&ctx.config.ablation.values);
    let mut report = run_ablation(&ctx.effective(), key, values)?;
    report.config.workers = ctx.config.workers;
    write_json(&ctx.path("ablation_report.json"), &report)?;
    std::fs::write(ctx.path("ablation.csv"), ablation_csv(&report))?;
    write_timings(ctx, "ablate", vec![("total", start.elapsed().as_secs_f64())])?;
    say!("{}", ablation_csv(&report).trim_end());
    Ok(EXIT_OK)
}

fn cmd_gradcheck(ctx: &Context, fault: Option<f64>) -> Result<i32> {
    let start = Instant::now();
    let report = run_gradcheck(&ctx.effective(), fault)?;
    write_json(&ctx.path("gradcheck_report.json"), &report)?;
    write_timings(ctx, "gradcheck", vec![("total", start.elapsed().as_secs_f64())])?;
    let g = &ctx.config.gradcheck;
    for &d in &g.dims {
        for &n in &g.variants {
            let worst = report
                .instances
                .iter()
                .filter(|r| r.dim == d && r.variants == n)
                .map(|r| r.max_relative_error)
                .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))));
            if let Some(worst) = worst {
                say!("d={d:3} N={n}  max relative error {worst:.3e}");
            }
        }
    }
    say!(
        "{} instances, max relative error {:.3e}, tolerance {:.1e}: {}",
        report.instances.len(),
        report.max_relative_error,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(if report.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = (|| {
        let needs_config = matches!(cli.command, Command::Optimize | Command::Sample { .. } | Command::Ablate { .. });
        let ctx = Context::new(&cli.global, needs_config)?;
        match &cli.command {
            Command::Optimize => cmd_optimize(&ctx),
            Command::Sample { bundles } => cmd_sample(&ctx, bundles.as_deref()),
            Command::Eval { files, reference } => cmd_eval(&ctx, files, reference.as_deref()),
            Command::Ablate { sweep, values } => cmd_ablate(&ctx, *sweep, values.as_deref()),
            Command::Gradcheck { inject_adjoint_fault } => cmd_gradcheck(&ctx, *inject_adjoint_fault),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
