//! Runs a short toy-profile pretraining, prints the per-epoch metrics
//! table, and renders SVG plots into the run directory.
//!
//! Run with `cargo run --release --example toy_pretrain`.
//! Takes a few minutes on one core; artifacts land in ./toy_pretrain_run.

use std::path::Path;

use ssmae::config::RunConfig;
use ssmae::metrics::read_metrics;
use ssmae::plot::plot_metrics;
use ssmae::trainer::run_pretrain;

fn main() -> ssmae::Result<()> {
    let mut config = RunConfig::toy_profile(0);
    config.train.epochs_pretrain = 8;
    let out = Path::new("toy_pretrain_run");
    let artifacts = run_pretrain(&config, out, None)?;

    let records = read_metrics(&artifacts.metrics_path)?;
    println!("epoch  total    recon    sup      pseudo   gate  accept  val_acc");
    for r in &records {
        println!(
            "{:>5}  {:.4}  {:.4}  {:.4}  {:.4}  {:>4}  {:.3}   {:.3}",
            r.epoch,
            r.loss_total,
            r.loss_recon.unwrap_or(0.0),
            r.loss_sup,
            r.loss_pseudo,
            r.gate.g,
            r.filter.accept_rate(),
            r.gate.val_conf_acc,
        );
    }
    println!("test accuracy: {:.4}", artifacts.test_accuracy);
    println!("final checkpoint: {}", artifacts.final_checkpoint.display());
    for path in plot_metrics(&records, out)? {
        println!("plot: {}", path.display());
    }
    Ok(())
}
