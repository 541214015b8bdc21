use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scalenet::expcli::{
    cmd_certify, cmd_simulate, cmd_sweep, resolve_out_dir, LoadedConfig, RunOptions, ScenarioConfig, EXIT_ERROR,
    OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "scalenet", version, about = "Certify and simulate delayed networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the scalability conditions and write certificate.json.
    Certify(Common),
    /// Integrate the scenario and write traces and metrics.
    Simulate(Common),
    /// Run every value of the config's sweep axis and write sweep.csv.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file, TOML or JSON.
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, short)]
    quiet: bool,
}

fn load(c: &Common) -> scalenet::Result<(LoadedConfig, RunOptions)> {
    let mut loaded = ScenarioConfig::load(&c.config)?;
    let cfg = &mut loaded.config;
    if c.dt.is_some() {
        cfg.dt = c.dt;
    }
    if c.t_end.is_some() {
        cfg.t_end = c.t_end;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let env = std::env::var(OUT_DIR_ENV).ok();
    let out_dir = resolve_out_dir(c.out.as_deref(), cfg, env.as_deref());
    Ok((loaded, RunOptions { out_dir, jobs: c.jobs }))
}

fn run(cli: Cli) -> scalenet::Result<i32> {
    match cli.command {
        Command::Certify(c) => {
            let (loaded, opts) = load(&c)?;
            let r = cmd_certify(&loaded, &opts)?;
            if !c.quiet {
                match (&r.certificate, &r.violation) {
                    (Some(cert), _) => println!(
                        "certified: sigma_bar={:.6} sigma={:.6} lambda_hat={:.6} K={:.6}",
                        cert.sigma_bar, cert.sigma_under, cert.lambda_hat, cert.k_transform
                    ),
                    (_, Some(v)) => println!("not certified: {v}"),
                    _ => {}
                }
                println!("wrote {}", opts.out_dir.join("certificate.json").display());
            }
            Ok(r.certify_exit_code())
        }
        Command::Simulate(c) => {
            let (loaded, opts) = load(&c)?;
            let r = cmd_simulate(&loaded, &opts)?;
            if !c.quiet {
                if let Some(m) = &r.metrics {
                    println!("max deviation {:.6e}, final {:.6e}", m.max_deviation, m.final_deviation);
                    if let Some(t) = m.diverged_at {
                        println!("diverged at t = {t}");
                    }
                    if let Some(ok) = m.envelope_dominated {
                        println!("envelope dominance: {ok} (min margin {:.3e})", m.envelope_margin_min.unwrap_or(f64::NAN));
                    }
                }
                if let Some(v) = &r.violation {
                    println!("not certified: {v}");
                }
                println!("wrote {} files to {}", r.files.len(), opts.out_dir.display());
            }
            Ok(r.simulate_exit_code())
        }
        Command::Sweep(c) => {
            let (loaded, opts) = load(&c)?;
            let quiet = c.quiet;
            let progress = move |msg: &str| {
                if !quiet {
                    eprintln!("{msg}");
                }
            };
            let r = cmd_sweep(&loaded, &opts, &progress)?;
            if !quiet {
                println!("{} points ({} resumed), wrote {}", r.rows.len(), r.resumed, opts.out_dir.join("sweep.csv").display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
