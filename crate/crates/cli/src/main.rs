use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use noisyimpute::harness::{export_figure_data, format_decomposition};
use noisyimpute::{
    format_table, run_decomposition, run_grid, run_table1, run_table2, ExperimentConfig, TableStyle,
};

mod config;

use config::{parse_method, FileConfig};

/// Predict vs draw imputation experiments.
#[derive(Debug, Parser)]
#[command(name = "noisyimpute", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Predict and draw over both signals and mechanisms.
    Table1(Common),
    /// Forest, soft-impute and PMM over both signals and mechanisms.
    Table2(Common),
    /// One low-signal MAR sample imputed by predict and draw, as CSV.
    Figure(Common),
    /// Bias²/variance/noise split of each method's imputation MSE.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Methods to decompose, comma separated [default: predict,draw]
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        /// Imputations per dataset
        #[arg(long, default_value_t = 50)]
        repeats: usize,
        /// Incomplete datasets per scenario
        #[arg(long, default_value_t = 20)]
        datasets: usize,
    },
    /// Any grid described by --config (methods default to predict,draw).
    Run(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Debug, Args)]
struct Common {
    /// Population size [default: 1000000]
    #[arg(long)]
    pop_size: Option<usize>,
    /// Sample size per replication [default: 1000]
    #[arg(long)]
    samples: Option<usize>,
    /// Replications per cell [default: 200]
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed [default: 123]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    threads: Option<usize>,
    /// Output file [default: standard output]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table format
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Flat TOML config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn experiment(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            FileConfig::load(path)?.apply(&mut cfg)?;
        }
        if let Some(v) = self.pop_size {
            cfg.pop_size = v;
        }
        if let Some(v) = self.samples {
            cfg.n_sample = v;
        }
        if let Some(v) = self.reps {
            cfg.t_rep = v;
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }

    fn style(&self) -> TableStyle {
        match self.format {
            Format::Csv => TableStyle::Csv,
            Format::Markdown => TableStyle::Markdown,
        }
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Table1(c) => {
            let table = run_table1(&c.experiment(ExperimentConfig::table1())?)?;
            let mut w = c.writer()?;
            w.write_all(format_table(&table, c.style()).as_bytes())?;
            w.flush()?;
        }
        Command::Table2(c) => {
            let table = run_table2(&c.experiment(ExperimentConfig::table2())?)?;
            let mut w = c.writer()?;
            w.write_all(format_table(&table, c.style()).as_bytes())?;
            w.flush()?;
        }
        Command::Run(c) => {
            let table = run_grid(&c.experiment(ExperimentConfig::default())?)?;
            let mut w = c.writer()?;
            w.write_all(format_table(&table, c.style()).as_bytes())?;
            w.flush()?;
        }
        Command::Figure(c) => {
            let cfg = c.experiment(ExperimentConfig::default())?;
            let mut w = c.writer()?;
            export_figure_data(&cfg, &mut w)?;
            w.flush()?;
        }
        Command::Decompose {
            common,
            method,
            repeats,
            datasets,
        } => {
            let mut cfg = common.experiment(ExperimentConfig::default())?;
            if !method.is_empty() {
                cfg.methods = method
                    .iter()
                    .map(|m| parse_method(m))
                    .collect::<Result<_>>()?;
            }
            let rows = run_decomposition(&cfg, repeats, datasets)?;
            let mut w = common.writer()?;
            w.write_all(format_decomposition(&rows).as_bytes())?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
