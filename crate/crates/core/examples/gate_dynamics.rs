//! Feeds a synthetic validation-accuracy trace through the pseudo-label
//! gate and prints the bit per epoch: closed through warm-up, opening at
//! the threshold, closing after `patience` bad epochs, reopening later.
//!
//! Run with `cargo run --example gate_dynamics`.

use ssmae::gate::{effective_pseudo_weight, gate_step, GateConfig, GateState};
use ssmae::losses::LossWeights;

fn main() {
    let config = GateConfig {
        t_warmup: 4,
        tau_acc: 0.70,
        patience: 2,
        tau: 0.95,
    };
    let weights = LossWeights::default();
    // a trace with a mid-run quality dip
    let trace = [
        0.90, 0.91, 0.88, 0.92, // warm-up ignores these
        0.75, 0.78, 0.66, 0.64, 0.62, // dip: one grace epoch, then closed
        0.73, 0.80, 0.82,
    ];
    println!("warm-up {} epochs, tau_acc {}, patience {}", config.t_warmup, config.tau_acc, config.patience);
    println!("epoch  val_acc  gate  lambda_p_eff");
    let mut state = GateState::default();
    for &acc in &trace {
        state = gate_step(&state, &config, acc);
        println!(
            "{:>5}  {:.2}     {}     {:.2}",
            state.epoch,
            acc,
            if state.open { "open" } else { "off " },
            effective_pseudo_weight(&state, &weights)
        );
    }
}
