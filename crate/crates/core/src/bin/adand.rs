use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use adand::experiment::{
    emit_score_histogram, parse_synthetic, run_experiment, RawOptions, ScoreKind,
};
use adand::format::{write_feature_file, write_noise_bank};
use adand::pipeline::parse_decision_log;
use adand::synth::synth_noise_bank;
use adand::{synth, Error};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "adand", version, about = "Online noisy test-time adaptation over feature streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration or a sweep; comma-separated values are sweep axes
    Run {
        /// TOML file with the same keys as the flags; flags win
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        options: RawOptions,
    },
    /// Write a synthetic stream as feature files plus a noise bank
    Synth {
        #[arg(long, default_value = "default")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score histogram of a decision log, split by ground truth
    Histogram {
        log: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = Score::Ranking)]
        score: Score,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Score {
    Mcm,
    Detector,
    Ranking,
}

const EXIT_CELL_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, options } => run(config, options),
        Command::Synth { spec, out } => report(synth_files(&spec, &out)),
        Command::Histogram { log, bins, score } => {
            let kind = match score {
                Score::Mcm => ScoreKind::Mcm,
                Score::Detector => ScoreKind::Detector,
                Score::Ranking => ScoreKind::Ranking,
            };
            let table = fs::read_to_string(&log)
                .map_err(|e| Error::io(&log, e))
                .and_then(|text| parse_decision_log(&text))
                .and_then(|rows| emit_score_histogram(&rows, bins, kind));
            report(table.map(|t| print!("{t}")))
        }
    }
}

fn report(r: adand::Result<()>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn run(config: Option<PathBuf>, flags: RawOptions) -> ExitCode {
    let options = match config {
        Some(path) => match fs::read_to_string(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|text| RawOptions::from_toml(&text))
        {
            Ok(file) => file.overlay(&flags),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INVALID);
            }
        },
        None => flags,
    };
    let spec = match options.into_spec() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let result = match run_experiment(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    print!("{}", result.table());
    for cell in &result.cells {
        if let Err(e) = &cell.outcome {
            eprintln!("cell {} failed: {e}", cell.cell.index);
        }
    }
    if result.failures() > 0 {
        ExitCode::from(EXIT_CELL_FAILED)
    } else {
        ExitCode::SUCCESS
    }
}

fn synth_files(spec: &str, out: &std::path::Path) -> adand::Result<()> {
    let source = parse_synthetic(spec)?;
    let stream = synth::synth_stream(&source.stream)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_feature_file(&stream.bank, &stream.id_records, &out.join("id.znta"))?;
    write_feature_file(&stream.bank, &stream.ood_records, &out.join("ood.znta"))?;
    let noise = synth_noise_bank(
        source.stream.dim,
        source.noise_bank_size,
        source.noise_concentration,
        source.stream.seed,
    )?;
    write_noise_bank(&stream.bank, &noise, &out.join("noise.znta"))?;
    println!("wrote {}", out.display());
    Ok(())
}
