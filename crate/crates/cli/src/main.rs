mod analyze;
mod config;
mod error;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use freqlfdr::simulate::harness::mc_error_rates_range;
use freqlfdr::simulate::{calibration_experiment, GeneratorSpec, McConfig, ProcedureSpec};
use freqlfdr::verify::{run_suite, Suite, VerifySettings};

use crate::analyze::{analyze, AnalyzeOptions};
use crate::config::{
    preset, ConfigFile, DensityMethod, Format, Pi0Method, Preset, ScaleArg, ScorerArg,
};
use crate::error::{CliError, CliResult};
use crate::output::{emit, summary_path, to_json};

const DEFAULT_SIM_REPS: u64 = 100_000;
const DEFAULT_CALIBRATION_REPS: u64 = 10_000;

#[derive(Debug, Parser)]
#[command(
    name = "freqlfdr",
    version,
    about = "Local false discovery rates, FDR procedures and Monte Carlo checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score and test the statistics in a CSV file.
    Analyze(AnalyzeArgs),
    /// Monte Carlo error rates of a procedure on a simulated design.
    Simulate(SimulateArgs),
    /// Pooled calibration curve of a scorer on a simulated design.
    Calibrate(CalibrateArgs),
    /// Run a self-check suite: theorems, counterexamples or oracles.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// JSON configuration file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// CSV with header `id,stat[,truth]`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Level of BH, Storey-BH and Support Line.
    #[arg(long)]
    alpha: Option<f64>,
    /// Cost ratio of a false to a missed discovery for the lfdr rule.
    #[arg(long)]
    lambda: Option<f64>,
    /// storey:L | fixed:V | window:C:L
    #[arg(long)]
    pi0: Option<String>,
    /// grenander | lindsey:J:BINS | npmle:GRID:TOL
    #[arg(long)]
    density: Option<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Named design.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Overrides the procedure's level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides Storey's lambda or the lfdr rule's cost ratio.
    #[arg(long)]
    lambda: Option<f64>,
    /// Jitter grid-valued p-values uniformly within their cell.
    #[arg(long)]
    perturb_discrete: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    suite: String,
    /// Replicates for every Monte Carlo check.
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Text lines by default.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn parse_method<T: std::str::FromStr<Err = CliError>>(
    flag: Option<String>,
    config: Option<String>,
) -> CliResult<Option<T>> {
    flag.or(config).map(|s| s.parse()).transpose()
}

fn cmd_analyze(args: AnalyzeArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.output.config.as_deref())?;
    let input = args
        .input
        .or(cfg.input)
        .ok_or_else(|| CliError::Usage("analyze needs --input".into()))?;
    let scale = args.scale.or(cfg.scale).unwrap_or(ScaleArg::P).into();
    let opts = AnalyzeOptions {
        alpha: args.alpha.or(cfg.alpha).unwrap_or(0.1),
        loss_lambda: args.lambda.or(cfg.lambda).unwrap_or(1.0),
        pi0: parse_method::<Pi0Method>(args.pi0, cfg.pi0)?.unwrap_or_default(),
        density: parse_method::<DensityMethod>(args.density, cfg.density)?
            .unwrap_or(DensityMethod::default_for(scale)),
    };
    let data = input::read_dataset(&input, scale)?;
    let report = analyze(&data, &opts)?;
    let out = args.output.out.or(cfg.out);
    match args.output.format.or(cfg.format).unwrap_or_default() {
        Format::Json => emit(out.as_deref(), &to_json(&report)?),
        Format::Csv => {
            emit(out.as_deref(), &output::analysis_csv(&report)?)?;
            if let Some(path) = &out {
                emit(Some(&summary_path(path)), &to_json(&report.summary)?)?;
            }
            Ok(())
        }
    }
}

/// Preset, then explicit config keys, then command-line flags.
fn resolve_design(design: &DesignArgs, cfg: &ConfigFile) -> CliResult<Preset> {
    let base = design
        .preset
        .as_deref()
        .or(cfg.preset.as_deref())
        .map(preset)
        .transpose()?;
    let generator = cfg
        .generator
        .clone()
        .or_else(|| base.as_ref().map(|p| p.generator.clone()))
        .ok_or_else(|| {
            CliError::Usage("no design: pass --preset or a config with a 'generator' key".into())
        })?;
    Ok(Preset {
        generator,
        procedure: cfg
            .procedure
            .or(base.as_ref().map(|p| p.procedure))
            .unwrap_or_default(),
        criteria: cfg
            .criteria
            .clone()
            .or_else(|| base.map(|p| p.criteria))
            .unwrap_or_else(|| vec![freqlfdr::simulate::Criterion::Fdr]),
    })
}

fn resolve_seed(design: &DesignArgs, cfg: &ConfigFile) -> CliResult<u64> {
    design
        .seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::Usage("a seed is required (--seed or the config's 'seed')".into()))
}

fn resolve_reps(design: &DesignArgs, cfg: &ConfigFile, default: u64) -> CliResult<u64> {
    let reps = design.reps.or(cfg.reps).unwrap_or(default);
    if reps == 0 {
        return Err(freqlfdr::Error::Argument(
            "the number of replicates must be at least 1".into(),
        )
        .into());
    }
    Ok(reps)
}

fn override_procedure(p: ProcedureSpec, alpha: Option<f64>, lambda: Option<f64>) -> ProcedureSpec {
    match p {
        ProcedureSpec::Bh { alpha: a } => ProcedureSpec::Bh {
            alpha: alpha.unwrap_or(a),
        },
        ProcedureSpec::StoreyBh {
            alpha: a,
            lambda: l,
        } => ProcedureSpec::StoreyBh {
            alpha: alpha.unwrap_or(a),
            lambda: lambda.unwrap_or(l),
        },
        ProcedureSpec::SupportLine { alpha: a } => ProcedureSpec::SupportLine {
            alpha: alpha.unwrap_or(a),
        },
        ProcedureSpec::OracleLfdr { loss_lambda } => ProcedureSpec::OracleLfdr {
            loss_lambda: lambda.unwrap_or(loss_lambda),
        },
    }
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.output.config.as_deref())?;
    let reps = resolve_reps(&args.design, &cfg, DEFAULT_SIM_REPS)?;
    let seed = resolve_seed(&args.design, &cfg)?;
    let design = resolve_design(&args.design, &cfg)?;
    let procedure = override_procedure(
        design.procedure,
        args.alpha.or(cfg.alpha),
        args.lambda.or(cfg.lambda),
    );
    let perturb = args.perturb_discrete || cfg.perturb_discrete.unwrap_or(false);
    let spec = GeneratorSpec::new(design.generator, seed)?;
    let config = McConfig::new(procedure, design.criteria).perturbed(perturb);
    let threads = args.design.threads.or(cfg.threads);
    let report = mc_error_rates_range(&spec, &config, 0, reps, threads)?;
    let out = args.output.out.or(cfg.out);
    let text = match args.output.format.or(cfg.format).unwrap_or_default() {
        Format::Json => to_json(&report)?,
        Format::Csv => output::monte_carlo_csv(&report)?,
    };
    emit(out.as_deref(), &text)
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult<()> {
    let cfg = ConfigFile::load(args.output.config.as_deref())?;
    let reps = resolve_reps(&args.design, &cfg, DEFAULT_CALIBRATION_REPS)?;
    let seed = resolve_seed(&args.design, &cfg)?;
    let design = resolve_design(&args.design, &cfg)?;
    let scorer = args.scorer.or(cfg.scorer).unwrap_or(ScorerArg::OracleLfdr);
    let bin_width = args.bin_width.or(cfg.bin_width).unwrap_or(0.025);
    let spec = GeneratorSpec::new(design.generator, seed)?;
    let threads = args.design.threads.or(cfg.threads);
    let curve = calibration_experiment(&spec, scorer.into(), reps, bin_width, threads)?;
    let out = args.output.out.or(cfg.out);
    let text = match args.output.format.or(cfg.format).unwrap_or_default() {
        Format::Json => to_json(&curve)?,
        Format::Csv => output::calibration_csv(&curve)?,
    };
    emit(out.as_deref(), &text)
}

fn cmd_verify(args: VerifyArgs) -> CliResult<()> {
    let suite: Suite = args.suite.parse().map_err(|e: freqlfdr::Error| match e {
        freqlfdr::Error::Argument(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;
    if args.reps == Some(0) {
        return Err(freqlfdr::Error::Argument(
            "the number of replicates must be at least 1".into(),
        )
        .into());
    }
    let settings = VerifySettings {
        reps: args.reps,
        seed: args.seed,
        threads: args.threads,
    };
    let outcomes = run_suite(suite, &settings)?;
    let text = match args.format {
        None => outcomes.iter().map(|o| format!("{o}\n")).collect(),
        Some(Format::Json) => to_json(&outcomes)?,
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for o in &outcomes {
                w.serialize(o)
                    .map_err(|e| CliError::Io(format!("cannot write csv: {e}")))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)
                .map_err(|e| CliError::Io(e.to_string()))?
        }
    };
    emit(args.out.as_deref(), &text)?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn fail(code: &str, message: &str, exit: u8) -> ExitCode {
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{code}]: {line}");
    ExitCode::from(exit)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid usage");
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), &e.to_string(), e.exit_code()),
    }
}
