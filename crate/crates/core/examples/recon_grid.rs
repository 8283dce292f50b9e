//! Trains briefly at toy scale, then exports a reconstruction grid PNG:
//! one row per sample with three columns, original | masked input |
//! reconstruction (visible patches pasted back).
//!
//! Run with `cargo run --release --example recon_grid`.
//! Artifacts land in ./recon_grid_run.

use std::path::Path;

use ssmae::config::RunConfig;
use ssmae::trainer::{export_reconstructions, prepare_data, run_pretrain, Trainer};

fn main() -> ssmae::Result<()> {
    let mut config = RunConfig::toy_profile(0);
    config.train.epochs_pretrain = 8;
    let out = Path::new("recon_grid_run");
    let artifacts = run_pretrain(&config, out, None)?;

    let ckpt = ssmae::checkpoint::Checkpoint::load(&artifacts.final_checkpoint, Some(&config), false)?;
    let trainer = Trainer::from_checkpoint(ckpt);
    let data = prepare_data(&config)?;
    let indices: Vec<usize> = (0..8).collect();
    for ratio in [0.75, 0.5] {
        let path = out.join(format!("recon_grid_r{:02}.png", (ratio * 100.0) as u32));
        export_reconstructions(
            &trainer.params,
            &data.bundle.test,
            &indices,
            ratio,
            0,
            config.loss.recon_target,
            &path,
        )?;
        println!("wrote {} (mask ratio {ratio})", path.display());
    }
    Ok(())
}
