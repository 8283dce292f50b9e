//! The `ssmae` command-line surface.
//!
//! Subcommands map one-to-one onto the trainer entry points: `pretrain`,
//! `finetune`, `eval`, `recon-grid`, `ablate`, `sweep-mask`, and `plot`.
//! A config comes either from a TOML file (`--config`) or from a built-in
//! profile; `--seed` and `--labeled-frac` override it either way.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::metrics::read_metrics;
use crate::plot::plot_metrics;
use crate::trainer::{
    evaluate, export_reconstructions, prepare_data, run_finetune, run_pretrain, Trainer,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(name = "ssmae", version, about = "semi-supervised masked autoencoder training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Desk-scale synthetic run that finishes in minutes.
    Toy,
    /// Full-scale hyperparameters; requires a config file with a dataset.
    Reference,
}

/// Config selection shared by the training subcommands.
#[derive(Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, value_enum, default_value = "toy")]
    pub profile: Profile,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Labeled fraction override.
    #[arg(long)]
    pub labeled_frac: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = match (&self.config, self.profile) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Profile::Toy) => RunConfig::toy_profile(self.seed.unwrap_or(0)),
            (None, Profile::Reference) => {
                return Err(Error::Config(
                    "the reference profile needs --config pointing at a dataset manifest".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.split.seed = seed;
        }
        if let Some(frac) = self.labeled_frac {
            config.split.labeled_fraction = frac;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Semi-supervised pretraining: reconstruction + supervised + gated
    /// pseudo-label objectives.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for checkpoints and metrics.
        #[arg(long, default_value = "runs/pretrain")]
        out: PathBuf,
        /// Resume from a pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Supervised fine-tuning from a pretraining checkpoint.
    Finetune {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to start from (or a fine-tune checkpoint to resume).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "runs/finetune")]
        out: PathBuf,
        /// Proceed even when the checkpoint was written under a different
        /// config; the current config wins.
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Evaluate a checkpoint on the test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Where to write eval.json (printed to stdout either way).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export an original / masked / reconstruction image grid.
    ReconGrid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output PNG path.
        #[arg(long, default_value = "recon_grid.png")]
        out: PathBuf,
        /// Mask ratio for the grid; defaults to the training ratio.
        #[arg(long)]
        mask_ratio: Option<f64>,
        /// Number of test samples shown.
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one or all ablation variants and compare test accuracy.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
        /// Variant to run; omit to run all of them.
        #[arg(long, value_enum)]
        variant: Option<Variant>,
    },
    /// Pretrain across a list of mask ratios and compare.
    SweepMask {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs/sweep-mask")]
        out: PathBuf,
        /// Comma-separated mask ratios.
        #[arg(long, default_value = "0.5,0.75,0.9", value_delimiter = ',')]
        ratios: Vec<f64>,
    },
    /// Render SVG figures from a metrics stream.
    Plot {
        /// Metrics JSONL file.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

/// Training variants compared by `ablate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    /// The complete method.
    Full,
    /// No reconstruction objective.
    ReconOff,
    /// Weak-view-only pseudo-label filter.
    ConsistencyOff,
    /// Pseudo-labeling always on, no warm-up or monitor.
    GateOffFromEpoch1,
    /// Warm-up only; no validation-accuracy check afterwards.
    GateNoValThreshold,
    /// Labeled data only: no reconstruction, no pseudo-labels.
    SupervisedOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::ReconOff,
        Variant::ConsistencyOff,
        Variant::GateOffFromEpoch1,
        Variant::GateNoValThreshold,
        Variant::SupervisedOnly,
    ];

    pub fn dir_name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ReconOff => "recon_off",
            Variant::ConsistencyOff => "consistency_off",
            Variant::GateOffFromEpoch1 => "gate_off_from_epoch1",
            Variant::GateNoValThreshold => "gate_no_val_threshold",
            Variant::SupervisedOnly => "supervised_only",
        }
    }

    /// Applies the variant's switches to a base config.
    pub fn apply(&self, config: &mut RunConfig) {
        match self {
            Variant::Full => {}
            Variant::ReconOff => config.ablation.recon_off = true,
            Variant::ConsistencyOff => config.ablation.consistency_off = true,
            Variant::GateOffFromEpoch1 => config.ablation.gate_off_from_epoch1 = true,
            Variant::GateNoValThreshold => config.ablation.gate_no_val_threshold = true,
            Variant::SupervisedOnly => {
                config.ablation.recon_off = true;
                config.loss.lambda_pseudo = 0.0;
            }
        }
    }
}

fn save_config(config: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml()?)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { config, out, resume } => {
            let config = config.resolve()?;
            save_config(&config, &out)?;
            let artifacts = run_pretrain(&config, &out, resume.as_deref())?;
            println!(
                "pretraining done: test_acc={:.4} checkpoint={} metrics={}",
                artifacts.test_accuracy,
                artifacts.final_checkpoint.display(),
                artifacts.metrics_path.display()
            );
        }
        Command::Finetune {
            config,
            checkpoint,
            out,
            allow_config_mismatch,
        } => {
            let config = config.resolve()?;
            save_config(&config, &out)?;
            let artifacts = run_finetune(&config, &checkpoint, &out, allow_config_mismatch)?;
            println!(
                "fine-tuning done: test_acc={:.4} checkpoint={}",
                artifacts.test_accuracy,
                artifacts.final_checkpoint.display()
            );
        }
        Command::Eval { checkpoint, out } => {
            let ckpt = Checkpoint::load(&checkpoint, None, false)?;
            let trainer = Trainer::from_checkpoint(ckpt);
            let data = prepare_data(&trainer.config)?;
            let report = evaluate(&trainer.params, &data.bundle.test)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(out) = out {
                if let Some(parent) = out.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(out, text)?;
            }
        }
        Command::ReconGrid {
            checkpoint,
            out,
            mask_ratio,
            count,
            seed,
        } => {
            let ckpt = Checkpoint::load(&checkpoint, None, false)?;
            let trainer = Trainer::from_checkpoint(ckpt);
            let data = prepare_data(&trainer.config)?;
            let ratio = mask_ratio.unwrap_or(trainer.config.train.mask_ratio);
            let n = count.min(data.bundle.test.len());
            let indices: Vec<usize> = (0..n).collect();
            export_reconstructions(
                &trainer.params,
                &data.bundle.test,
                &indices,
                ratio,
                seed,
                trainer.config.loss.recon_target,
                &out,
            )?;
            println!("wrote {} ({} rows, mask ratio {ratio})", out.display(), n);
        }
        Command::Ablate { config, out, variant } => {
            let base = config.resolve()?;
            let variants: Vec<Variant> = match variant {
                Some(v) => vec![v],
                None => Variant::ALL.to_vec(),
            };
            let mut results = Vec::new();
            for v in variants {
                let mut config = base.clone();
                v.apply(&mut config);
                let dir = out.join(v.dir_name());
                save_config(&config, &dir)?;
                let artifacts = run_pretrain(&config, &dir, None)?;
                println!("{:<24} test_acc={:.4}", v.dir_name(), artifacts.test_accuracy);
                results.push((v.dir_name(), artifacts.test_accuracy));
            }
            let summary: Vec<String> = results
                .iter()
                .map(|(name, acc)| format!("{{\"variant\":\"{name}\",\"test_acc\":{acc}}}"))
                .collect();
            std::fs::write(out.join("summary.jsonl"), summary.join("\n") + "\n")?;
        }
        Command::SweepMask { config, out, ratios } => {
            let base = config.resolve()?;
            let mut lines = Vec::new();
            for ratio in ratios {
                let mut config = base.clone();
                config.train.mask_ratio = ratio;
                let dir = out.join(format!("r{ratio:.2}"));
                save_config(&config, &dir)?;
                let artifacts = run_pretrain(&config, &dir, None)?;
                let records = read_metrics(&artifacts.metrics_path)?;
                let final_recon = records.last().and_then(|r| r.loss_recon);
                println!(
                    "r={ratio:.2} test_acc={:.4} final_recon={:?}",
                    artifacts.test_accuracy, final_recon
                );
                lines.push(format!(
                    "{{\"mask_ratio\":{ratio},\"test_acc\":{},\"final_recon\":{}}}",
                    artifacts.test_accuracy,
                    final_recon.map_or("null".into(), |v| v.to_string())
                ));
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("summary.jsonl"), lines.join("\n") + "\n")?;
        }
        Command::Plot { metrics, out } => {
            let records = read_metrics(&metrics)?;
            let written = plot_metrics(&records, &out)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_every_subcommand() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        for args in [
            vec!["ssmae", "pretrain", "--seed", "3", "--out", "/tmp/x"],
            vec!["ssmae", "finetune", "--checkpoint", "c.json"],
            vec!["ssmae", "eval", "--checkpoint", "c.json"],
            vec!["ssmae", "recon-grid", "--checkpoint", "c.json", "--mask-ratio", "0.5"],
            vec!["ssmae", "ablate", "--variant", "recon-off"],
            vec!["ssmae", "sweep-mask", "--ratios", "0.5,0.9"],
            vec!["ssmae", "plot", "--metrics", "m.jsonl"],
        ] {
            Cli::try_parse_from(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }

    #[test]
    fn reference_profile_without_config_is_an_error() {
        let args = ConfigArgs {
            config: None,
            profile: Profile::Reference,
            seed: None,
            labeled_frac: None,
        };
        assert!(args.resolve().is_err());
    }

    #[test]
    fn overrides_apply_to_profile() {
        let args = ConfigArgs {
            config: None,
            profile: Profile::Toy,
            seed: Some(11),
            labeled_frac: Some(0.2),
        };
        let config = args.resolve().unwrap();
        assert_eq!(config.seed, 11);
        assert_eq!(config.split.labeled_fraction, 0.2);
    }

    #[test]
    fn supervised_only_variant_disables_both_unlabeled_objectives() {
        let mut config = RunConfig::toy_profile(0);
        Variant::SupervisedOnly.apply(&mut config);
        assert!(config.ablation.recon_off);
        assert_eq!(config.loss.lambda_pseudo, 0.0);
    }
}
