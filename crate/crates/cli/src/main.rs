use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use odontoreg::synth::CohortSpec;
use odontoreg::Method;
use odontoreg_cli::commands::{
    cmd_compare, cmd_lr, cmd_overlay, cmd_report, cmd_synth, load_scores, ParamsSource,
};
use odontoreg_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "odontoreg", version, about = "Dental 3D-2D registration and identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the subcommands that read a run configuration.
#[derive(clap::Args)]
struct RunFlags {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Registration method, overriding the configuration.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Base seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, overriding the configuration.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and print its manifest path.
    Synth {
        /// Cohort specification (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing cohort in OUT.
        #[arg(long)]
        force: bool,
    },
    /// Score every (AM, PM) pair of a manifest; resumes an interrupted run.
    Compare {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        /// Run directory; falls back to `out_dir` of the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Discard any previous run in OUT.
        #[arg(long)]
        force: bool,
    },
    /// Rank a scored run and fit the likelihood-ratio model.
    Report {
        /// Run directory written by `compare`, or a score CSV.
        input: PathBuf,
        /// Manifest supplying the truth; required for a bare score CSV.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
        /// Report directory [default: INPUT/report].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        allow_partial: bool,
    },
    /// Fit the likelihood-ratio model of a scored run.
    Lr {
        input: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
        /// Output directory [default: INPUT/lr].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        allow_partial: bool,
    },
    /// Render the overlay of one registered pair.
    Overlay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        am: String,
        #[arg(long)]
        pm: String,
        /// Run directory holding the pair's stored parameters.
        #[arg(long = "run", conflicts_with = "params")]
        run_dir: Option<PathBuf>,
        /// JSON file with camera parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn run_config(flags: &RunFlags) -> Result<RunConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = flags.method {
        cfg.method = m;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(w) = flags.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_out(input: &std::path::Path, name: &str) -> PathBuf {
    if input.is_dir() {
        input.join(name)
    } else {
        input.parent().unwrap_or(std::path::Path::new(".")).join(name)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            config,
            seed,
            out,
            force,
        } => {
            let mut spec: CohortSpec = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Data(format!("invalid cohort spec {}: {e}", p.display())))?
                }
                None => CohortSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let manifest = cmd_synth(&spec, &out, force)?;
            println!("{}", manifest.display());
        }
        Command::Compare {
            manifest,
            run,
            out,
            force,
        } => {
            let cfg = run_config(&run)?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| CliError::Usage("--out is required when the configuration has no out_dir".into()))?;
            let res = cmd_compare(&manifest, &cfg, &out, force, |done, total| {
                eprintln!("scored {done}/{total} cells");
            })?;
            eprintln!(
                "{} cells ({} resumed, {} computed); scores in {}",
                res.matrix.len(),
                res.resumed,
                res.computed,
                out.join(odontoreg_cli::commands::SCORES_FILE).display()
            );
        }
        Command::Report {
            input,
            manifest,
            run,
            out,
            allow_partial,
        } => {
            let cfg = run_config(&run)?;
            let scored = load_scores(&input, manifest.as_deref())?;
            let out = out.unwrap_or_else(|| default_out(&input, "report"));
            let r = cmd_report(&scored, &cfg.lr, &out, allow_partial)?;
            match &r.statistics {
                Some(s) => println!(
                    "AVG {:.3} MIN {} Q1 {} Q2 {} Q3 {} P95 {} P99 {} MAX {}",
                    s.avg, s.min, s.q1, s.q2, s.q3, s.p95, s.p99, s.max
                ),
                None => println!("no AM case has a known truth"),
            }
            match (&r.lr, &r.lr_error) {
                (Some(lr), _) => println!("C_llr {:.4}", lr.cllr),
                (None, Some(e)) => eprintln!("no LR model: {e}"),
                _ => {}
            }
            println!("{}", out.display());
        }
        Command::Lr {
            input,
            manifest,
            run,
            out,
            allow_partial,
        } => {
            let cfg = run_config(&run)?;
            let scored = load_scores(&input, manifest.as_deref())?;
            let out = out.unwrap_or_else(|| default_out(&input, "lr"));
            let r = cmd_lr(&scored, &cfg.lr, &out, allow_partial)?;
            println!("C_llr {:.4}", r.cllr);
            println!("{}", out.display());
        }
        Command::Overlay {
            manifest,
            am,
            pm,
            run_dir,
            params,
            run,
            out,
        } => {
            let cfg = run_config(&run)?;
            let source = match (run_dir, params) {
                (Some(d), _) => Some(ParamsSource::Run(d)),
                (None, Some(p)) => Some(ParamsSource::File(p)),
                (None, None) => None,
            };
            cmd_overlay(&manifest, &am, &pm, source.as_ref(), &cfg.intrinsics, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
