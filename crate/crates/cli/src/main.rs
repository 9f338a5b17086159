use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use reflfield_cli::{checks, commands, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "reflfield", version, about = "Reflection-aware radiance fields at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides both the dataset and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run on a single worker thread.
    #[arg(long)]
    deterministic: bool,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    roughness_scale: Option<f64>,
    /// Diffuse color override as `r,g,b` in [0, 1].
    #[arg(long, value_parser = parse_rgb)]
    diffuse_rgb: Option<[f64; 3]>,
    #[arg(long)]
    tint_scale: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the analytic oracle scene into a dataset.
    OracleGen(Common),
    /// Train a field on the dataset's train split.
    Train(Common),
    /// Render the test cameras from the final checkpoint.
    Render(Common),
    /// Score test renders: PSNR and normal MAE into results.txt.
    Eval(Common),
    /// Render with material overrides applied at shade time.
    Edit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        edit: EditArgs,
    },
    /// Run the numerical self-checks.
    Verify {
        /// Optional; the checks do not need a configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected 3 components, got {}", p.len()))
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    if common.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.dataset.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::OracleGen(c) => {
            let cfg = load(&c)?;
            let (train, test) = commands::oracle_gen(&cfg)?;
            println!(
                "wrote {} train and {} test views ({}x{}) to {}",
                train.frames.len(),
                test.frames.len(),
                train.width,
                train.height,
                cfg.scene_dir.display()
            );
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let start = Instant::now();
            let out = commands::train(&cfg)?;
            let last = out.log.last().expect("at least one step");
            println!("{}", last.line());
            println!(
                "trained {} steps in {:.1}s; final checkpoint {}",
                out.log.len(),
                start.elapsed().as_secs_f64(),
                out.checkpoints.last().expect("final checkpoint").display()
            );
        }
        Command::Render(c) => {
            let cfg = load(&c)?;
            let views = commands::render_with(
                &cfg,
                &commands::checkpoint_path(&cfg),
                &Default::default(),
                "render",
            )?;
            println!("rendered {} views to {}", views.len(), cfg.out_dir.join("render").display());
        }
        Command::Eval(c) => {
            let cfg = load(&c)?;
            let report = commands::eval(&cfg, &commands::checkpoint_path(&cfg))?;
            print!("{}", report.to_text());
        }
        Command::Edit { common, edit } => {
            let cfg = load(&common)?;
            let mut overrides = cfg.edit.clone();
            if let Some(r) = edit.roughness_scale {
                overrides.roughness_scale = r;
            }
            if let Some(rgb) = edit.diffuse_rgb {
                overrides.diffuse_override = Some(rgb);
            }
            if let Some(t) = edit.tint_scale {
                overrides.tint_scale = t;
            }
            let views = commands::render_with(&cfg, &commands::checkpoint_path(&cfg), &overrides, "edit")?;
            println!("rendered {} edited views to {}", views.len(), cfg.out_dir.join("edit").display());
        }
        Command::Verify { config } => {
            if let Some(path) = config {
                RunConfig::load(&path)?;
            }
            let results = checks::verify_suite()?;
            print!("{}", checks::format_table(&results));
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
