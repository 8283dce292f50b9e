//! Pretrains briefly at toy scale, fine-tunes the classifier from the
//! pretraining checkpoint, and prints the per-class evaluation report.
//!
//! Run with `cargo run --release --example finetune_and_eval`.
//! Artifacts land in ./finetune_demo_run.

use std::path::Path;

use ssmae::checkpoint::Checkpoint;
use ssmae::config::RunConfig;
use ssmae::trainer::{evaluate, prepare_data, run_finetune, run_pretrain, Trainer};

fn main() -> ssmae::Result<()> {
    let mut config = RunConfig::toy_profile(0);
    config.train.epochs_pretrain = 6;
    config.train.epochs_finetune = 3;
    let out = Path::new("finetune_demo_run");

    let pretrain = run_pretrain(&config, &out.join("pretrain"), None)?;
    println!("pretrain test accuracy: {:.4}", pretrain.test_accuracy);

    let finetune = run_finetune(
        &config,
        &pretrain.final_checkpoint,
        &out.join("finetune"),
        false,
    )?;
    println!("finetune test accuracy: {:.4}", finetune.test_accuracy);

    let ckpt = Checkpoint::load(&finetune.final_checkpoint, Some(&config), false)?;
    let trainer = Trainer::from_checkpoint(ckpt);
    let data = prepare_data(&config)?;
    let report = evaluate(&trainer.params, &data.bundle.test)?;
    println!(
        "test: {}/{} correct ({:.4})",
        report.correct, report.total, report.accuracy
    );
    for (class, (&c, &t)) in report
        .per_class_correct
        .iter()
        .zip(&report.per_class_total)
        .enumerate()
    {
        println!("  class {class}: {c}/{t}");
    }
    Ok(())
}
