use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vme_lab::pipeline::{self, Analysis, Context};
use vme_lab::{presets, ExperimentConfig, LabError, LabResult};

#[derive(Parser, Debug)]
#[command(name = "vme-lab", version, about = "Variational microcanonical ensemble experiments")]
struct Cli {
    /// Experiment configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory, overriding `io.output_dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Diagonalize and cache the Hamiltonian of every configured size
    Spectrum,
    /// Generate (or resume) the variational ensembles
    Vme,
    /// Write analysis tables from cached spectra and run records
    Analyze {
        /// diag, offdiag, observables, trace, entropy, resources, dos, appendix or all
        #[arg(required = true, value_parser = parse_analysis)]
        which: Vec<Vec<Analysis>>,
    },
    /// Run a desk-scale preset end to end and check it against its bands
    Reproduce {
        /// Preset id, e.g. fig7c or table1
        id: String,
    },
    /// Check every file recorded in the output manifest
    Verify,
    /// List the reproduce presets
    Presets,
}

fn parse_analysis(s: &str) -> Result<Vec<Analysis>, String> {
    if s == "all" {
        return Ok(Analysis::ALL.to_vec());
    }
    <Analysis as ValueEnum>::from_str(s, true).map(|a| vec![a])
}

fn load_config(path: Option<&PathBuf>, required: bool) -> LabResult<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None if required => Err(LabError::Config("this command needs --config <file>".into())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> LabResult<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(LabError::Config("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| LabError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Spectrum => {
            let ctx = Context::new(load_config(cli.config.as_ref(), true)?, cli.out);
            for s in pipeline::cmd_spectrum(&ctx)? {
                println!(
                    "N={:<3} {} {} ({:.1} s)",
                    s.n_sites,
                    if s.computed { "computed" } else { "cached  " },
                    s.path.display(),
                    s.seconds
                );
            }
        }
        Command::Vme => {
            let ctx = Context::new(load_config(cli.config.as_ref(), true)?, cli.out);
            let summary = pipeline::cmd_vme(&ctx)?;
            print!("{}", pipeline::format_vme_summary(&summary));
        }
        Command::Analyze { which } => {
            let ctx = Context::new(load_config(cli.config.as_ref(), true)?, cli.out);
            for f in pipeline::cmd_analyze(&ctx, &which.concat())? {
                println!("{}", f.display());
            }
        }
        Command::Reproduce { id } => {
            let base = load_config(cli.config.as_ref(), false)?;
            let rep = presets::reproduce(&id, &base, cli.out)?;
            print!("{}", rep.report());
            println!("outputs in {}", rep.out.display());
            if !rep.passed() {
                return Err(LabError::Band(format!("{} check(s) failed", rep.checks.iter().filter(|c| !c.pass).count())));
            }
        }
        Command::Verify => {
            let cfg = load_config(cli.config.as_ref(), true)?;
            let ctx = Context::new(cfg, cli.out);
            let m = vme_lab::io::RunManifest::load_or_new(&ctx.out, &ctx.cfg.hash_hex())?;
            let problems = m.verify(&ctx.out);
            for p in &problems {
                println!("{p}");
            }
            if !problems.is_empty() {
                return Err(LabError::MissingArtifact {
                    path: ctx.out.join(vme_lab::io::MANIFEST_FILE),
                    hint: format!("{} recorded file(s) missing or changed", problems.len()),
                });
            }
            println!("{} stage(s) verified", m.stages.len());
        }
        Command::Presets => {
            for p in presets::PRESETS {
                println!("{:<10} {}", p.id, p.description);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
