//! Command-line entry point for the simulator.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use oclsim::stream::{dump_stream, generate_with_variant};
use oclsim_cli::config::ExperimentConfig;
use oclsim_cli::refpair;
use oclsim_cli::runner;
use oclsim_cli::sweep::{self, SweepAxis};

#[derive(Parser)]
#[command(name = "oclsim", about = "Online continual learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override: er | derpp
    #[arg(long)]
    method: Option<String>,
    /// Override: on | off | fixed | random | soft | no_fusion
    #[arg(long)]
    droptop: Option<String>,
    /// Override: comma-separated seed list.
    #[arg(long)]
    seeds: Option<String>,
    /// Override: output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export attention maps during training.
    #[arg(long)]
    dump_masks: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::from_file(&self.config)?;
        if let Some(method) = &self.method {
            config.apply("method", method)?;
        }
        if let Some(droptop) = &self.droptop {
            config.apply("droptop", droptop)?;
        }
        if let Some(seeds) = &self.seeds {
            config.apply("seeds", seeds)?;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if self.dump_masks {
            config.dump_masks = true;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate over all configured seeds.
    Run(ConfigArgs),
    /// Vary one hyperparameter, aggregating each point over the seeds.
    Sweep {
        #[command(flatten)]
        base: ConfigArgs,
        /// kappa0 | gamma | alpha | period
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Compare single-model intensity control against the two-model
    /// reference.
    ReferencePair(ConfigArgs),
    /// Write the training stream as raw tensors plus a manifest.
    DumpStream {
        #[command(flatten)]
        base: ConfigArgs,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let config = args.load()?;
            let artifacts = runner::run(&config)?;
            let agg = &artifacts.aggregate;
            println!(
                "a_avg biased {:.4} ± {:.4} | unbiased {:.4} ± {:.4}",
                agg.a_avg_biased.mean,
                agg.a_avg_biased.stderr,
                agg.a_avg_unbiased.mean,
                agg.a_avg_unbiased.stderr
            );
            if let Some(f) = agg.f_last_biased {
                println!("f_last biased {:.4} ± {:.4}", f.mean, f.stderr);
            }
            if let Some(f) = agg.f_last_unbiased {
                println!("f_last unbiased {:.4} ± {:.4}", f.mean, f.stderr);
            }
            println!("artifacts under {}", config.out_dir.display());
        }
        Command::Sweep { base, axis, values } => {
            let config = base.load()?;
            let axis = SweepAxis::parse(&axis)?;
            let values: Vec<f64> = values
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(Into::into))
                .collect::<Result<_>>()?;
            let report = sweep::sweep(&config, axis, &values)?;
            for p in &report.points {
                println!(
                    "{} = {}: a_avg {:.4} ± {:.4}",
                    report.axis, p.value, p.a_avg_biased.mean, p.a_avg_biased.stderr
                );
            }
        }
        Command::ReferencePair(args) => {
            let config = args.load()?;
            let (validation, runs) = refpair::run_reference_pair(&config)?;
            std::fs::create_dir_all(&config.out_dir)?;
            std::fs::write(
                config.out_dir.join("reference_pair.json"),
                serde_json::to_string_pretty(&validation)? + "\n",
            )?;
            for (seed, run) in config.seeds.iter().zip(&runs) {
                let dir = config.out_dir.join(format!("seed_{seed}"));
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("kappa_trace_single.csv"), &run.single_trace_csv)?;
                std::fs::write(dir.join("kappa_trace_pair.csv"), &run.pair_trace_csv)?;
            }
            match validation.overall_fraction {
                Some(f) => println!(
                    "agreement {:.3} over {} events",
                    f, validation.total_events
                ),
                None => println!("no shift events to compare"),
            }
        }
        Command::DumpStream { base } => {
            let config = base.load()?;
            let split = oclsim::rng::SeedSplit::new(*config.seeds.first().unwrap_or(&0));
            let stream_cfg = oclsim::stream::StreamConfig {
                generator: config.stream.generator,
                num_tasks: config.stream.num_tasks,
                classes_per_task: config.stream.classes_per_task,
                samples_per_class: config.stream.samples_per_class,
                image_size: config.stream.image_size,
                bias_ratio: config.stream.bias_ratio,
                noise_std: config.stream.noise_std,
                seed: split.derived_seed(oclsim::rng::StreamId::Data),
            };
            let stream = generate_with_variant(&stream_cfg, config.train_variant)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            dump_stream(&stream, &config.out_dir).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("stream written to {}", config.out_dir.display());
        }
    }
    Ok(())
}
