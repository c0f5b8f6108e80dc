//! Command-line front end: `run`, `sweep` and `report`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::flsim::{run_experiment, Compressor, RoundMetrics};
use crate::report::{bits_to_target, load_metrics, mean_std, save_metrics};

pub const DEFAULT_COMPRESSORS: &str = "none,uniform:2,uniform:4,uniform:8,fedfq:1.0";

#[derive(Debug, Parser)]
#[command(name = "fedfq", version, about = "Federated averaging with quantized client updates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `output` from the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every compressor with every seed and summarize.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated: none, uniform:<bits>, fedfq:<bits per parameter>.
        #[arg(long, default_value = DEFAULT_COMPRESSORS)]
        compressors: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Bits needed to reach a target accuracy, per metrics file.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        target: f64,
    },
}

pub fn parse_compressors(list: &str) -> Result<Vec<Compressor>> {
    let out: Vec<Compressor> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config("empty compressor list".into()));
    }
    Ok(out)
}

pub fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    let out: Vec<u64> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad seed {s:?}"))))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    Ok(out)
}

/// Runs `cfg` end to end: builds the data and model and trains.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    let model = cfg.model_spec()?;
    let data = cfg.data.build(cfg.fl.n_clients, cfg.fl.seed)?;
    Ok(run_experiment(&cfg.fl, &model, &data)?.metrics)
}

/// File-name form of a compressor, e.g. `uniform-2`, `fedfq-1`.
pub fn compressor_slug(c: &Compressor) -> String {
    c.to_string().replace(':', "-")
}

pub fn execute<W: Write>(cli: Cli, out: &mut W) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out: path } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.fl.seed = seed;
            }
            let path = path
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Config("no output path: pass --out or set [experiment] output".into()))?;
            let metrics = run_config(&cfg)?;
            save_metrics(&path, &metrics)?;
            match metrics.last() {
                Some(m) => writeln!(
                    out,
                    "{}: {} rounds, final accuracy {:.4}, {} payload bits",
                    path.display(),
                    m.round,
                    m.test_accuracy,
                    m.cumulative_payload_bits
                )?,
                None => writeln!(out, "{}: no rounds", path.display())?,
            }
        }
        Command::Sweep { config, compressors, seeds, out_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            sweep(&cfg, &parse_compressors(&compressors)?, &parse_seeds(&seeds)?, &out_dir, out)?;
        }
        Command::Report { csv, target } => {
            writeln!(out, "file,rounds,final_accuracy,cumulative_payload_bits,bits_to_target")?;
            for path in &csv {
                let metrics = load_metrics(path)?;
                let reached = bits_to_target(&metrics, target).map_or("not-reached".to_string(), |b| b.to_string());
                let (rounds, acc, bits) = metrics
                    .last()
                    .map_or((0, f64::NAN, 0), |m| (m.round, m.test_accuracy, m.cumulative_payload_bits));
                writeln!(out, "{},{rounds},{acc:.4},{bits},{reached}", path.display())?;
            }
        }
    }
    Ok(())
}

/// Runs each compressor under each seed, writes `<slug>_seed<k>.csv` per
/// run and `summary.csv` with mean and standard deviation across seeds.
pub fn sweep<W: Write>(
    cfg: &ExperimentConfig,
    compressors: &[Compressor],
    seeds: &[u64],
    out_dir: &Path,
    out: &mut W,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let jobs: Vec<(usize, u64)> = (0..compressors.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let mut run = cfg.with_compressor(compressors[c]);
            run.fl.seed = seed;
            run_config(&run)
        })
        .collect::<Result<Vec<_>>>()?;

    let params = cfg.model_spec()?.num_params() as f64;
    let mut summary = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    summary.write_record([
        "compressor",
        "runs",
        "final_accuracy_mean",
        "final_accuracy_std",
        "cumulative_payload_bits_mean",
        "payload_compression_ratio",
    ])?;
    for (c, compressor) in compressors.iter().enumerate() {
        let slug = compressor_slug(compressor);
        let mut finals = Vec::new();
        let mut bits = Vec::new();
        let mut rounds = 0;
        for (&(jc, seed), metrics) in jobs.iter().zip(&results) {
            if jc != c {
                continue;
            }
            save_metrics(&out_dir.join(format!("{slug}_seed{seed}.csv")), metrics)?;
            if let Some(last) = metrics.last() {
                finals.push(last.test_accuracy);
                bits.push(last.cumulative_payload_bits as f64);
                rounds = last.round;
            }
        }
        let (acc_mean, acc_std) = mean_std(&finals);
        let (bits_mean, _) = mean_std(&bits);
        let raw = 32.0 * params * (cfg.fl.clients_per_round * rounds) as f64;
        let ratio = raw / bits_mean;
        summary.write_record([
            compressor.to_string(),
            finals.len().to_string(),
            format!("{acc_mean:.6}"),
            format!("{acc_std:.6}"),
            format!("{bits_mean:.1}"),
            format!("{ratio:.3}"),
        ])?;
        writeln!(
            out,
            "{:<12} accuracy {:.4} ± {:.4}  payload ratio {:.2}x",
            compressor.to_string(),
            acc_mean,
            acc_std,
            ratio
        )?;
    }
    summary.flush()?;
    Ok(())
}
