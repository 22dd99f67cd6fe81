use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sdds_core::data::{
    generate_corpus, generate_generic_corpus, read_dataset, write_dataset, CorpusConfig, Dataset, GenericCorpusConfig,
};
use sdds_core::explain::{saliency, saliency_focus_score, write_panel};
use sdds_core::harness::{
    median, prepare_corpora, report, run_grid, run_scenario, train_sources, CorpusSource, GridConfig, GridResult,
    ReportFormat, Scenario, RESULTS_FILE,
};
use sdds_core::models::ModelState;

#[derive(Parser)]
#[command(name = "sdds", version, about = "Surface defect detection strategy laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into a dataset directory.
    Generate {
        /// JSON generator config; the desk-scale target corpus when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate one experiment on a target dataset directory.
    Train {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Grid config supplying sources and hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write weights, history and metrics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario grid and write all artifacts.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the comparison report of a finished grid.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Write saliency panels for the defective samples of a dataset.
    Explain {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Print the default grid config as JSON.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

/// Generator config file: either a defect corpus or a generic texture corpus.
#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum GenerateConfig {
    Corpus(CorpusConfig),
    Generic(GenericCorpusConfig),
}

fn load_grid(config: Option<&Path>) -> Result<GridConfig> {
    match config {
        Some(p) => GridConfig::load(p).with_context(|| format!("loading grid config {}", p.display())),
        None => Ok(GridConfig::desk_default()),
    }
}

fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => GenerateConfig::Corpus(CorpusConfig::target(260, 11)),
    };
    let data: Dataset = match cfg {
        GenerateConfig::Corpus(mut c) => {
            c.seed = seed.unwrap_or(c.seed);
            println!("seed {}", c.seed);
            generate_corpus(&c)?
        }
        GenerateConfig::Generic(mut c) => {
            c.seed = seed.unwrap_or(c.seed);
            println!("seed {}", c.seed);
            generate_generic_corpus(&c)?
        }
    };
    write_dataset(&data, out)?;
    println!("{} samples ({} defective) written to {}", data.len(), data.defective_count(), out.display());
    Ok(())
}

fn train_one(id: &str, data: &Path, seed: u64, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mut cfg = load_grid(config)?;
    cfg.corpora.target = CorpusSource::Path(data.to_path_buf());
    let scenario = Scenario::paper(id, vec![seed])?;
    let corpora = prepare_corpora(&cfg.corpora)?;
    let sources = train_sources(&cfg, &corpora, std::slice::from_ref(&scenario))?;
    let (run, model) = run_scenario(&scenario, seed, &corpora, &sources, &cfg).with_context(|| format!("scenario {id}"))?;
    let m = &run.metrics;
    println!(
        "{id} seed {seed}: accuracy {:.3} precision {:.3} recall {:.3} F1 {:.3}, stopped at epoch {} (best {})",
        m.accuracy, m.precision, m.recall, m.f1, run.history.stopped_epoch, run.history.best_epoch
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        model.save(&dir.join("weights.sdds"))?;
        run.history.write_csv(&dir.join("history.csv"))?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&run)?)?;
    }
    Ok(())
}

fn explain(weights: &Path, data: &Path, out: &Path, count: usize) -> Result<()> {
    let model = ModelState::load(weights).with_context(|| format!("loading {}", weights.display()))?;
    let data = read_dataset(data)?;
    std::fs::create_dir_all(out)?;
    let mut ratios = Vec::new();
    for s in data.samples.iter().filter(|s| s.is_defective()).take(count) {
        let map = saliency(&model, &s.image, 1)?;
        if let Some(mask) = &s.mask {
            ratios.push(saliency_focus_score(&map, mask)?);
        }
        let plane = s.image.clone().reshape(vec![s.height(), s.width()])?;
        write_panel(&out.join(format!("p{:05}_s{:03}.png", s.part_id, s.segment)), &plane, &[&map])?;
    }
    println!("{} panels written to {}", ratios.len(), out.display());
    if let Some(m) = median(&ratios) {
        println!("median focus ratio {m:.3}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { config, out, seed } => generate(config.as_deref(), &out, seed)?,
        Command::Train { scenario, data, seed, config, out } => {
            train_one(&scenario, &data, seed, config.as_deref(), out.as_deref())?
        }
        Command::Grid { config, out } => {
            let cfg = load_grid(config.as_deref())?;
            let result = run_grid(&cfg, Some(&out))?;
            print!("{}", report(&result, ReportFormat::Table)?);
            for f in &result.failures {
                eprintln!("scenario {} failed: {}", f.id, f.error);
            }
            return Ok(result.failures.is_empty());
        }
        Command::Report { dir, format } => {
            let result = GridResult::load(&dir.join(RESULTS_FILE))?;
            let format = match format {
                Format::Table => ReportFormat::Table,
                Format::Csv => ReportFormat::Csv,
            };
            print!("{}", report(&result, format)?);
        }
        Command::Explain { weights, data, out, count } => explain(&weights, &data, &out, count)?,
        Command::DefaultConfig => println!("{}", GridConfig::desk_default().to_json()?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
