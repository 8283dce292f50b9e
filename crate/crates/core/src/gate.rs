//! The dynamic pseudo-label gate.
//!
//! Pseudo-labeling stays off during a warm-up window, then switches on
//! whenever the confidence-filtered validation accuracy reaches τ_acc and
//! off again after `patience` consecutive epochs below it. The gate may
//! re-activate later; monitoring never stops.

use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugPolicy};
use crate::filter::{argmax, filter_pseudo};
use crate::losses::LossWeights;
use crate::network::NetworkParams;
use crate::patch::ImageTensor;
use crate::{filter::predict_probs, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// Epochs with pseudo-labeling forced off.
    pub t_warmup: usize,
    /// Validation accuracy needed to open the gate (inclusive).
    pub tau_acc: f64,
    /// Consecutive below-threshold epochs before the gate closes.
    pub patience: usize,
    /// Confidence threshold shared with the pseudo-label filter.
    pub tau: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            t_warmup: 10,
            tau_acc: 0.70,
            patience: 1,
            tau: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct GateState {
    /// Completed epochs.
    pub epoch: usize,
    /// The gate bit g_t.
    pub open: bool,
    pub below_count: usize,
    pub last_val_conf_acc: Option<f64>,
}


/// Confidence-filtered validation accuracy: runs the exact filter used for
/// pseudo-labeling over (weakly, strongly) augmented views of each held-out
/// sample, then scores only the accepted ones. Returns (accuracy,
/// accepted_count); zero accepted means accuracy 0.
pub fn conf_val_accuracy(
    model: &NetworkParams,
    val_images: &[ImageTensor],
    val_labels: &[usize],
    tau: f64,
    seed: u64,
) -> Result<(f64, usize)> {
    conf_val_accuracy_with(
        |img| predict_probs(model, img),
        val_images,
        val_labels,
        tau,
        seed,
    )
}

/// Same monitor with an arbitrary probability function, so reliability can
/// be checked against stub predictors in tests.
pub fn conf_val_accuracy_with(
    predict: impl Fn(&ImageTensor) -> Result<ndarray::Array1<f64>>,
    val_images: &[ImageTensor],
    val_labels: &[usize],
    tau: f64,
    seed: u64,
) -> Result<(f64, usize)> {
    if val_images.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut accepted = 0usize;
    let mut correct = 0usize;
    for (i, (img, &label)) in val_images.iter().zip(val_labels).enumerate() {
        let sample_seed = seed.wrapping_add(i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let weak = augment(img, AugPolicy::weak(), sample_seed);
        let strong = augment(img, AugPolicy::strong(), sample_seed ^ 0x5555_5555_5555_5555);
        let p_w = predict(&weak)?;
        let p_s = predict(&strong)?;
        let decision = filter_pseudo(p_w.view(), p_s.view(), tau)?;
        if decision.accepted {
            accepted += 1;
            if argmax(p_w.view()) == label {
                correct += 1;
            }
        }
    }
    let acc = if accepted == 0 {
        0.0
    } else {
        correct as f64 / accepted as f64
    };
    Ok((acc, accepted))
}

/// Advances the gate by one epoch, given the epoch's monitored accuracy.
pub fn gate_step(state: &GateState, config: &GateConfig, val_conf_acc: f64) -> GateState {
    let epoch = state.epoch + 1;
    if epoch <= config.t_warmup {
        return GateState {
            epoch,
            open: false,
            below_count: 0,
            last_val_conf_acc: Some(val_conf_acc),
        };
    }
    if val_conf_acc >= config.tau_acc {
        GateState {
            epoch,
            open: true,
            below_count: 0,
            last_val_conf_acc: Some(val_conf_acc),
        }
    } else {
        let below_count = state.below_count + 1;
        GateState {
            epoch,
            open: if below_count >= config.patience {
                false
            } else {
                state.open
            },
            below_count,
            last_val_conf_acc: Some(val_conf_acc),
        }
    }
}

/// λ_p(t) = g_t · λ_p.
pub fn effective_pseudo_weight(state: &GateState, weights: &LossWeights) -> f64 {
    if state.open {
        weights.lambda_pseudo
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cfg(t_warmup: usize, tau_acc: f64, patience: usize) -> GateConfig {
        GateConfig {
            t_warmup,
            tau_acc,
            patience,
            tau: 0.95,
        }
    }

    #[test]
    fn warm_up_dominates() {
        let state = GateState {
            epoch: 3,
            ..Default::default()
        };
        let next = gate_step(&state, &cfg(10, 0.70, 1), 0.99);
        assert!(!next.open);
    }

    #[test]
    fn activates_at_threshold() {
        let state = GateState {
            epoch: 12,
            ..Default::default()
        };
        let next = gate_step(&state, &cfg(10, 0.70, 1), 0.72);
        assert!(next.open);
        // boundary: exactly tau_acc activates
        let next = gate_step(&state, &cfg(10, 0.70, 1), 0.70);
        assert!(next.open);
    }

    #[test]
    fn patience_two_needs_two_bad_epochs() {
        let mut state = GateState {
            epoch: 15,
            open: true,
            below_count: 0,
            last_val_conf_acc: Some(0.8),
        };
        let config = cfg(10, 0.70, 2);
        state = gate_step(&state, &config, 0.65);
        assert!(state.open, "still open after first below-threshold epoch");
        state = gate_step(&state, &config, 0.66);
        assert!(!state.open, "closed after second");
    }

    #[test]
    fn effective_weight_two_point_support() {
        let weights = LossWeights::default();
        let closed = GateState::default();
        assert_eq!(effective_pseudo_weight(&closed, &weights), 0.0);
        let open = GateState {
            open: true,
            ..Default::default()
        };
        assert_eq!(effective_pseudo_weight(&open, &weights), 0.75);
        let zero = LossWeights {
            lambda_pseudo: 0.0,
            ..Default::default()
        };
        assert_eq!(effective_pseudo_weight(&open, &zero), 0.0);
    }

    /// Brute-force state-machine simulator, written independently from
    /// `gate_step`: tracks the bit and the below-streak directly.
    fn simulate(config: &GateConfig, trace: &[f64]) -> Vec<bool> {
        let mut out = Vec::new();
        let mut open = false;
        let mut streak = 0usize;
        for (idx, &acc) in trace.iter().enumerate() {
            let t = idx + 1;
            if t <= config.t_warmup {
                open = false;
                streak = 0;
            } else if acc >= config.tau_acc {
                open = true;
                streak = 0;
            } else {
                streak += 1;
                if streak >= config.patience {
                    open = false;
                }
            }
            out.push(open);
        }
        out
    }

    #[test]
    fn matches_oracle_on_random_traces() {
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        for _ in 0..1000 {
            let config = cfg(
                rng.random_range(0..15),
                rng.random_range(0.3..0.9),
                rng.random_range(1..4),
            );
            let trace: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
            let expected = simulate(&config, &trace);
            let mut state = GateState::default();
            for (i, &acc) in trace.iter().enumerate() {
                state = gate_step(&state, &config, acc);
                assert_eq!(state.open, expected[i], "epoch {} cfg {:?}", i + 1, config);
                if state.epoch <= config.t_warmup {
                    assert!(!state.open);
                }
            }
        }
    }

    #[test]
    fn deactivation_latency_is_exactly_patience() {
        for patience in 1..5usize {
            let config = cfg(0, 0.70, patience);
            let mut state = gate_step(&GateState::default(), &config, 0.9);
            assert!(state.open);
            for k in 1..=patience {
                state = gate_step(&state, &config, 0.1);
                if k < patience {
                    assert!(state.open, "closed early at {k}/{patience}");
                } else {
                    assert!(!state.open, "still open at {k}/{patience}");
                }
            }
        }
    }

    fn constant_images(n: usize) -> (Vec<ImageTensor>, Vec<usize>) {
        // Image i is constant at 10·i; the max pixel survives every strong
        // op except a small brightness shift, so a stub can recover i.
        let images = (0..n)
            .map(|i| ImageTensor::new(ndarray::Array3::from_elem((8, 8, 3), 10.0 * i as f64)))
            .collect();
        let labels = (0..n).collect();
        (images, labels)
    }

    fn image_id(img: &ImageTensor) -> usize {
        let max = img.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (max / 10.0).round() as usize
    }

    fn confident(k: usize, at: usize) -> ndarray::Array1<f64> {
        ndarray::Array1::from_shape_fn(k, |i| {
            if i == at {
                0.99
            } else {
                0.01 / (k - 1) as f64
            }
        })
    }

    #[test]
    fn monitor_uniform_model_accepts_nothing() {
        let (images, labels) = constant_images(10);
        let (acc, accepted) = conf_val_accuracy_with(
            |_| Ok(ndarray::Array1::from_elem(10, 0.1)),
            &images,
            &labels,
            0.95,
            0,
        )
        .unwrap();
        assert_eq!(accepted, 0);
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn monitor_stub_seven_of_ten() {
        let (images, labels) = constant_images(10);
        let (acc, accepted) = conf_val_accuracy_with(
            |img| {
                let id = image_id(img);
                // confident-and-correct on 7, confident-and-wrong on 3
                let predicted = if id < 7 { id } else { (id + 1) % 10 };
                Ok(confident(10, predicted))
            },
            &images,
            &labels,
            0.95,
            3,
        )
        .unwrap();
        assert_eq!(accepted, 10);
        assert!((acc - 0.7).abs() < 1e-12, "{acc}");
    }

    #[test]
    fn monitor_perfect_model_scores_one() {
        let (images, labels) = constant_images(6);
        let (acc, accepted) = conf_val_accuracy_with(
            |img| Ok(confident(6, image_id(img))),
            &images,
            &labels,
            0.95,
            4,
        )
        .unwrap();
        assert_eq!(accepted, 6);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn monitor_rejects_empty_val_set() {
        let err = conf_val_accuracy_with(
            |_| Ok(ndarray::Array1::from_elem(2, 0.5)),
            &[],
            &[],
            0.95,
            0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn reactivation_is_allowed() {
        let config = cfg(0, 0.70, 1);
        let mut state = gate_step(&GateState::default(), &config, 0.9);
        state = gate_step(&state, &config, 0.1);
        assert!(!state.open);
        state = gate_step(&state, &config, 0.8);
        assert!(state.open);
    }
}
