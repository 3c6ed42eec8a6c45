use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use enf::pipeline::out_dir;
use enf::{write_json, CliError, PipelineConfig, Run, Stage};

#[derive(Parser)]
#[command(name = "enf", version, about = "Train, prune, quantize and cost multi-task CNNs for an embedded CNN core")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline config (JSON).
    #[arg(long, global = true, default_value = "configs/demo.json")]
    config: PathBuf,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset manifest (and optional PGM export).
    GenData,
    /// Train the network from scratch.
    Train,
    /// Iteratively prune and fine-tune the trained network.
    Prune,
    /// Calibrate, quantize and pick the mixed 8/16-bit assignment.
    Quantize,
    /// Lower the network versions to core schedules.
    Schedule,
    /// Simulate every schedule on the configured hardware.
    Simulate,
    /// Collate report.json and the summary CSVs.
    Report,
    /// Run all enabled stages in order.
    Pipeline {
        /// Stop after this stage.
        #[arg(long, value_enum)]
        stage: Option<Stage>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match PipelineConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => return fail(cli.out.as_deref().unwrap_or("out".as_ref()), &e),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = out_dir(cli.out.as_deref(), &config);
    let run = Run::new(config, out);
    let result = match cli.command {
        Command::GenData => run.stage(Stage::GenData),
        Command::Train => run.stage(Stage::Train),
        Command::Prune => run.stage(Stage::Prune),
        Command::Quantize => run.stage(Stage::Quantize),
        Command::Schedule => run.stage(Stage::Schedule),
        Command::Simulate => run.stage(Stage::Simulate),
        Command::Report => run.stage(Stage::Report),
        Command::Pipeline { stage } => run.pipeline(stage),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // stage failures already wrote their error.json
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn fail(out: &std::path::Path, e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    if std::fs::create_dir_all(out).is_ok() {
        let _ = write_json(&out.join("error.json"), &e.record("config"));
    }
    ExitCode::from(e.exit_code())
}
