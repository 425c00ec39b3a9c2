use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use outpaint4d_cli::config::OracleConfig;
use outpaint4d_cli::oracle::run_oracles;
use outpaint4d_cli::{
    cmd_dataprep, cmd_init, cmd_render, cmd_run, cmd_step, exit, CliError, Context, DataprepTarget, LoadedConfig,
    Workspace,
};
use outpaint4d_core::bridge::echo_responder;
use outpaint4d_core::formats::read_json;
use outpaint4d_core::trajectory::generate;
use outpaint4d_core::{BridgeError, Camera, StubMode, TrajectorySpec};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "outpaint4d", version, about = "Perpetual outpainting of dynamic scenes from RGB-D video")]
struct Cli {
    /// Root for every relative path, including the config file.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline config (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the initial scene from the input video.
    Init(ConfigArg),
    /// Outpaint one new pose and merge it into the scene.
    Step {
        #[command(flatten)]
        config: ConfigArg,
        /// Camera JSON for the new pose.
        #[arg(long, conflicts_with = "trajectory", required_unless_present = "trajectory")]
        camera: Option<PathBuf>,
        /// Trajectory JSON; its first pose from the current pose is used.
        #[arg(long)]
        trajectory: Option<String>,
        /// Scene prompt (default: the previous one).
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Init followed by every configured trajectory segment.
    Run(ConfigArg),
    /// Render the scene; writes PNG frames and coverage.csv.
    Render {
        #[command(flatten)]
        config: ConfigArg,
        /// JSON array of cameras (default: every visited pose).
        #[arg(long)]
        cameras: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check accelerated kernels and formats against reference loops.
    Oracle {
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
    /// Build a training pair by moving the camera closer.
    Dataprep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, conflicts_with = "target_fraction", required_unless_present = "target_fraction")]
        offset: Option<f64>,
        /// Search the offset that leaves this mean unseen fraction.
        #[arg(long)]
        target_fraction: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer exchange-directory bundles with a stub fill.
    #[command(hide = true)]
    EchoOutpainter {
        #[arg(long)]
        dir: PathBuf,
        /// Seconds to wait for each bundle.
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        #[arg(long, default_value = "constant")]
        mode: StubMode,
        /// Answer a single bundle and exit.
        #[arg(long)]
        once: bool,
    },
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn load(ws: &Workspace, path: &Path, seed: Option<u64>) -> Result<Context, CliError> {
    let mut loaded = LoadedConfig::load(ws, path)?;
    if let Some(s) = seed {
        loaded.config.seed = s;
    }
    Ok(Context::new(ws.clone(), loaded))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ws = Workspace::new(&cli.workspace);
    match cli.command {
        Command::Init(c) => print(&cmd_init(&load(&ws, &c.config, cli.seed)?)?),
        Command::Run(c) => print(&cmd_run(&load(&ws, &c.config, cli.seed)?)?),
        Command::Step {
            config,
            camera,
            trajectory,
            prompt,
        } => {
            let ctx = load(&ws, &config.config, cli.seed)?;
            let cam = match (camera, trajectory) {
                (Some(p), _) => read_json::<Camera>(&ws.resolve(&p))?,
                (None, Some(t)) => {
                    let spec: TrajectorySpec = serde_json::from_str(&t)
                        .map_err(|e| CliError::Validation(format!("bad trajectory JSON: {e}")))?;
                    let state = ctx.store().load()?;
                    generate(&spec, state.current_pose())?[0]
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            print(&cmd_step(&ctx, &cam, prompt.as_deref())?);
        }
        Command::Render { config, cameras, out } => {
            let ctx = load(&ws, &config.config, cli.seed)?;
            let cams = match cameras {
                Some(p) => Some(read_json::<Vec<Camera>>(&ws.resolve(&p))?),
                None => None,
            };
            let rows = cmd_render(&ctx, cams, out.map(|o| ws.resolve(&o)))?;
            println!("rendered {} frames", rows.len());
        }
        Command::Oracle { config } => {
            let (oracle_cfg, mut seed) = match config {
                Some(c) => {
                    let ctx = load(&ws, &c, None)?;
                    (ctx.config().oracle, ctx.config().seed)
                }
                None => (OracleConfig::default(), 0),
            };
            if let Some(s) = cli.seed {
                seed = s;
            }
            let report = run_oracles(seed, &oracle_cfg);
            for c in &report.checks {
                if c.passed() {
                    println!("PASS {} ({} cases)", c.name, c.cases);
                } else {
                    println!("FAIL {} ({} cases)", c.name, c.cases);
                    for f in &c.failures {
                        println!("  {f}");
                    }
                }
            }
            let v = report.violations();
            if v > 0 {
                return Err(CliError::OracleFailed(v));
            }
        }
        Command::Dataprep {
            config,
            offset,
            target_fraction,
            out,
        } => {
            let ctx = load(&ws, &config.config, cli.seed)?;
            let target = match (offset, target_fraction) {
                (Some(o), _) => DataprepTarget::Offset(o),
                (None, Some(f)) => DataprepTarget::UnseenFraction(f),
                (None, None) => unreachable!("clap requires one of them"),
            };
            print(&cmd_dataprep(&ctx, target, out.map(|o| ws.resolve(&o)))?);
        }
        Command::EchoOutpainter {
            dir,
            timeout,
            mode,
            once,
        } => {
            let dir = ws.resolve(&dir);
            let wait = Duration::from_secs_f64(timeout);
            loop {
                match echo_responder(&dir, wait, mode) {
                    Ok(()) => log::info!("answered a bundle in {}", dir.display()),
                    Err(BridgeError::Timeout(_)) if !once => break,
                    Err(e) => return Err(e.into()),
                }
                if once {
                    break;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(exit::VALIDATION);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
