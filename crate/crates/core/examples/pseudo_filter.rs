//! Demonstrates the confidence + consistency filter on hand-built
//! probability pairs, then sweeps the threshold to show how the accept
//! rate falls as tau rises.
//!
//! Run with `cargo run --example pseudo_filter`.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use ssmae::filter::filter_pseudo;

fn peaked(k: usize, at: usize, conf: f64) -> Array1<f64> {
    Array1::from_shape_fn(k, |i| {
        if i == at {
            conf
        } else {
            (1.0 - conf) / (k - 1) as f64
        }
    })
}

fn main() -> ssmae::Result<()> {
    let tau = 0.95;
    let cases = [
        ("confident + consistent", peaked(10, 3, 0.97), peaked(10, 3, 0.96)),
        ("weak view unsure", peaked(10, 3, 0.60), peaked(10, 3, 0.99)),
        ("strong view unsure", peaked(10, 3, 0.97), peaked(10, 3, 0.60)),
        ("views disagree", peaked(10, 3, 0.97), peaked(10, 7, 0.96)),
        ("exactly at tau", peaked(10, 3, 0.95), peaked(10, 3, 0.99)),
    ];
    for (name, w, s) in &cases {
        let d = filter_pseudo(w.view(), s.view(), tau)?;
        match d.reject_reason {
            None => println!("{name:24} -> accepted, label {}", d.pseudo_label),
            Some(reason) => println!("{name:24} -> rejected ({reason:?})"),
        }
    }

    // threshold sweep over random peaked predictions
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let pairs: Vec<_> = (0..2000)
        .map(|_| {
            let label = rng.random_range(0..10);
            let drift = if rng.random::<f64>() < 0.1 { 1 } else { 0 };
            (
                peaked(10, label, rng.random_range(0.5..1.0)),
                peaked(10, (label + drift) % 10, rng.random_range(0.5..1.0)),
            )
        })
        .collect();
    println!("\n  tau   accept rate");
    for tau in [0.5, 0.7, 0.8, 0.9, 0.95, 0.99] {
        let accepted = pairs
            .iter()
            .filter(|(w, s)| filter_pseudo(w.view(), s.view(), tau).unwrap().accepted)
            .count();
        println!("  {tau:<5} {:.3}", accepted as f64 / pairs.len() as f64);
    }
    Ok(())
}
