use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use stable_lab::cli::{exit_code, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "stable-lab", version, about = "Numerical checks for alpha-stable propagators and jump filtering")]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts and summary.json.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Double grid sizes, time steps and path counts.
    #[arg(long, global = true)]
    refine: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    VerifySymbol,
    VerifyKernel,
    VerifyNorms,
    VerifyProp1,
    VerifyProp2,
    VerifyAuxl2,
    VerifyMaximal,
    VerifyBdg,
    RunZakai,
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::VerifySymbol => "verify-symbol",
            Command::VerifyKernel => "verify-kernel",
            Command::VerifyNorms => "verify-norms",
            Command::VerifyProp1 => "verify-prop1",
            Command::VerifyProp2 => "verify-prop2",
            Command::VerifyAuxl2 => "verify-auxl2",
            Command::VerifyMaximal => "verify-maximal",
            Command::VerifyBdg => "verify-bdg",
            Command::RunZakai => "run-zakai",
            Command::All => "all",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("{e}");
            return ExitCode::from(2);
        }
    }
    let config = match &args.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    };
    let result = config.and_then(|mut c| {
        if let Some(seed) = args.seed {
            c.seed = seed;
        }
        run(args.command.name(), &c, &args.out, args.refine)
    });
    match result {
        Ok(summary) => {
            for r in &summary.results {
                println!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name);
                for c in r.checks.iter().filter(|c| !c.pass) {
                    println!("  failed: {} value={:e} limit={:e}", c.name, c.value, c.limit);
                }
            }
            if summary.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            error!("{e}");
            let code = exit_code(&e);
            if code == 3 {
                let _ = std::fs::create_dir_all(&args.out);
                let _ = std::fs::write(args.out.join("diagnostic.txt"), format!("{}\n{e:?}\n", args.command.name()));
            }
            ExitCode::from(code as u8)
        }
    }
}
