use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use roadbird::batch::{run, run_batch, BatchSpec, RunConfig, TopologySource};
use roadbird::config::{parse_parameters, Parameters, Profile, RateScope};
use roadbird::report::{read_travel_times, write_batch, write_run, write_validation};
use roadbird::stats::validate_cells;

#[derive(Parser)]
#[command(name = "roadbird", version, about = "Strip-based mixed-traffic simulator")]
struct Cli {
    /// City preset binding DemandType to absolute generation rates.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Apply the rate to every generating node, or split it across them.
    #[arg(long, global = true, value_enum)]
    rate_scope: Option<ScopeArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Dhaka,
    Miami,
    Riyadh,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Dhaka => Profile::Dhaka,
            ProfileArg::Miami => Profile::Miami,
            ProfileArg::Riyadh => Profile::Riyadh,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PerNode,
    Total,
}

impl From<ScopeArg> for RateScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::PerNode => RateScope::PerNode,
            ScopeArg::Total => RateScope::Total,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// One simulation run.
    Run {
        /// Directory with node.txt, link.txt, path.txt, or a bundled name
        /// (dhaka, miami, riyadh).
        #[arg(long)]
        topology: String,
        /// key=value parameter file; defaults apply when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulated seconds.
        #[arg(long, default_value_t = 1800.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// A multi-seed sweep described by a TOML spec.
    Batch {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare observed and simulated travel times per cell.
    Validate {
        #[arg(long)]
        observed: PathBuf,
        #[arg(long)]
        simulated: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_params(path: Option<&Path>) -> Result<Parameters> {
    let Some(path) = path else {
        return Ok(Parameters::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = parse_parameters(&text).with_context(|| format!("in {}", path.display()))?;
    for w in &parsed.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(parsed.params)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let profile = cli.profile.map(Profile::from);
    let scope = cli.rate_scope.map(RateScope::from);
    match cli.command {
        Command::Run {
            topology,
            params,
            seed,
            duration,
            out,
        } => {
            let cfg = RunConfig {
                topology: TopologySource::resolve(&topology, Path::new(".")),
                params: load_params(params.as_deref())?,
                profile: profile.unwrap_or_default(),
                rate_scope: scope.unwrap_or_default(),
                duration,
                seed,
            };
            let r = run(&cfg)?;
            write_run(&out, &r)?;
            let s = &r.report.summary;
            println!(
                "seed {seed}: {} generated, {} exited, link speed {} km/h, wait {} s",
                r.counters.generated,
                r.counters.exited,
                s.avg_link_speed_kmh.map_or("-".into(), |v| format!("{v:.2}")),
                s.avg_link_wait_s.map_or("-".into(), |v| format!("{v:.2}")),
            );
        }
        Command::Batch { spec, out, threads } => {
            let mut b = BatchSpec::load(&spec)?;
            for w in &b.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(p) = profile {
                b.profile = p;
            }
            if let Some(s) = scope {
                b.rate_scope = s;
            }
            if let Some(t) = threads {
                b.threads = t;
            }
            let results = run_batch(&b)?;
            write_batch(&out, &results)?;
            let failed: Vec<_> = results.iter().filter(|p| p.error.is_some()).collect();
            println!(
                "{} points x {} seeds, {} failed; wrote {}",
                results.len(),
                b.seeds.len(),
                failed.len(),
                out.join("comparison.csv").display()
            );
            if !failed.is_empty() {
                for p in &failed {
                    eprintln!("error: {}: {}", p.key.slug(), p.error.as_deref().unwrap_or(""));
                }
                anyhow::bail!("{} sweep point(s) failed", failed.len());
            }
        }
        Command::Validate {
            observed,
            simulated,
            out,
        } => {
            let obs = read_travel_times(&observed)?;
            let sim = read_travel_times(&simulated)?;
            let cells = validate_cells(&obs, &sim)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("validation.csv");
            write_validation(&path, &cells)?;
            println!("{} cells; wrote {}", cells.len(), path.display());
        }
    }
    Ok(())
}
