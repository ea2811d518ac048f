use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmiofuzz_cli::{
    cmd_ablate, cmd_assemble, cmd_fuzz, cmd_run, cmd_stats, load_firmware, CampaignConfig, CliError,
};
use mmiofuzz_core::ExecConfig;

#[derive(Parser)]
#[command(
    name = "mmiofuzz",
    version,
    about = "Fuzz firmware for a small emulated microcontroller"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble a source file into a flash image and a .sym file.
    Assemble {
        src: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Execute one input from boot.
    Run {
        /// Image, `.s` source or `corpus:<name>`.
        image: String,
        input: PathBuf,
        /// Print every block, interrupt and MMIO access.
        #[arg(long)]
        trace: bool,
        /// Take technique and memory settings from a campaign config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a fuzzing campaign.
    Fuzz { config: PathBuf },
    /// Compare Baseline, +PIP and +PIP+FEC over several seeds.
    Ablate {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Summarise a campaign output directory.
    Stats { dir: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr();
    match cli.cmd {
        Cmd::Assemble { src, output } => {
            let out = cmd_assemble(&src, &output)?;
            println!(
                "wrote {} ({} bytes) and {}",
                out.image.display(),
                out.image_len,
                out.symbols.display()
            );
        }
        Cmd::Run {
            image,
            input,
            trace,
            config,
        } => {
            let exec = match &config {
                Some(p) => CampaignConfig::load(p)?.exec_config(),
                None => ExecConfig::default(),
            };
            let fw = load_firmware(&image, std::path::Path::new("."))?;
            let bytes = std::fs::read(&input).map_err(|e| CliError::io(&input, e))?;
            cmd_run(&fw, &bytes, exec, trace, &mut stdout)?;
        }
        Cmd::Fuzz { config } => {
            let cfg = CampaignConfig::load(&config)?;
            let s = cmd_fuzz(&cfg, &mut stderr)?;
            println!(
                "{} execs, {} blocks, queue {}, {} unique crashes; output in {}",
                s.stats.execs,
                s.stats.blocks_covered,
                s.stats.queue_len,
                s.stats.crashes_unique,
                s.out_dir.display()
            );
        }
        Cmd::Ablate { config, trials } => {
            let cfg = CampaignConfig::load(&config)?;
            let report = cmd_ablate(&cfg, trials, &mut stderr)?;
            print!("{report}");
        }
        Cmd::Stats { dir } => {
            print!("{}", cmd_stats(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
