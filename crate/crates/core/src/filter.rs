//! Confidence + consistency pseudo-label acceptance.
//!
//! A pseudo-label ŷ = argmax(p_w) is accepted only when both the weak and
//! the strong view clear the confidence threshold strictly and both views
//! agree on the argmax. Argmax ties break toward the lowest class index so
//! decisions are reproducible.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::losses::softmax;
use crate::network::NetworkParams;
use crate::patch::{patchify, ImageTensor};
use crate::{Error, Result};

/// Why an unlabeled sample was rejected, in check order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    LowConfWeak,
    LowConfStrong,
    Inconsistent,
}

/// Per-sample verdict of the pseudo-label filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub accepted: bool,
    /// Valid only when `accepted`.
    pub pseudo_label: usize,
    pub conf_weak: f64,
    pub conf_strong: f64,
    pub reject_reason: Option<RejectReason>,
}

/// Lowest-index argmax.
pub fn argmax(p: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode class probabilities for one image. No gradient state is
/// produced; callers that need gradients re-run a cached forward.
pub fn predict_probs(model: &NetworkParams, image: &ImageTensor) -> Result<ndarray::Array1<f64>> {
    let grid = patchify(image, model.config.patch_size)?;
    let logits = model.forward_cls(&grid)?;
    Ok(softmax(logits.view()))
}

fn check_simplex(p: ArrayView1<f64>, name: &str) -> Result<()> {
    if p.iter().any(|&v| !(0.0..=1.0 + 1e-9).contains(&v)) || (p.sum() - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "{name} is not a probability vector (sum {})",
            p.sum()
        )));
    }
    Ok(())
}

/// Applies the acceptance rule. Checks run in order: weak confidence,
/// strong confidence, consistency; the first failure is recorded.
pub fn filter_pseudo(
    p_weak: ArrayView1<f64>,
    p_strong: ArrayView1<f64>,
    tau: f64,
) -> Result<FilterDecision> {
    if !(0.0..1.0).contains(&tau) || tau == 0.0 {
        return Err(Error::Config(format!("threshold tau {tau} outside (0, 1)")));
    }
    check_simplex(p_weak, "p_weak")?;
    check_simplex(p_strong, "p_strong")?;
    if p_weak.len() != p_strong.len() {
        return Err(Error::Shape(format!(
            "class counts differ: {} vs {}",
            p_weak.len(),
            p_strong.len()
        )));
    }
    let label_weak = argmax(p_weak);
    let label_strong = argmax(p_strong);
    let conf_weak = p_weak[label_weak];
    let conf_strong = p_strong[label_strong];
    let reject_reason = if conf_weak <= tau {
        Some(RejectReason::LowConfWeak)
    } else if conf_strong <= tau {
        Some(RejectReason::LowConfStrong)
    } else if label_weak != label_strong {
        Some(RejectReason::Inconsistent)
    } else {
        None
    };
    Ok(FilterDecision {
        accepted: reject_reason.is_none(),
        pseudo_label: label_weak,
        conf_weak,
        conf_strong,
        reject_reason,
    })
}

/// Weak-confidence-only variant used by the `consistency_off` ablation:
/// the strong view plays no part in the decision.
pub fn filter_weak_only(p_weak: ArrayView1<f64>, tau: f64) -> Result<FilterDecision> {
    if !(0.0..1.0).contains(&tau) || tau == 0.0 {
        return Err(Error::Config(format!("threshold tau {tau} outside (0, 1)")));
    }
    check_simplex(p_weak, "p_weak")?;
    let label = argmax(p_weak);
    let conf = p_weak[label];
    let accepted = conf > tau;
    Ok(FilterDecision {
        accepted,
        pseudo_label: label,
        conf_weak: conf,
        conf_strong: conf,
        reject_reason: if accepted {
            None
        } else {
            Some(RejectReason::LowConfWeak)
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn vec_with_max(k: usize, at: usize, conf: f64) -> Array1<f64> {
        let rest = (1.0 - conf) / (k - 1) as f64;
        Array1::from_shape_fn(k, |i| if i == at { conf } else { rest })
    }

    #[test]
    fn accepts_confident_consistent() {
        let w = vec_with_max(10, 3, 0.97);
        let s = vec_with_max(10, 3, 0.96);
        let d = filter_pseudo(w.view(), s.view(), 0.95).unwrap();
        assert!(d.accepted);
        assert_eq!(d.pseudo_label, 3);
        assert_eq!(d.reject_reason, None);
    }

    #[test]
    fn rejects_inconsistent() {
        let w = vec_with_max(10, 3, 0.97);
        let s = vec_with_max(10, 5, 0.96);
        let d = filter_pseudo(w.view(), s.view(), 0.95).unwrap();
        assert!(!d.accepted);
        assert_eq!(d.reject_reason, Some(RejectReason::Inconsistent));
    }

    #[test]
    fn rejects_low_strong_confidence() {
        let w = vec_with_max(10, 3, 0.97);
        let s = vec_with_max(10, 3, 0.90);
        let d = filter_pseudo(w.view(), s.view(), 0.95).unwrap();
        assert!(!d.accepted);
        assert_eq!(d.reject_reason, Some(RejectReason::LowConfStrong));
    }

    #[test]
    fn boundary_equals_tau_rejects() {
        let w = vec_with_max(4, 1, 0.95);
        let s = vec_with_max(4, 1, 0.99);
        let d = filter_pseudo(w.view(), s.view(), 0.95).unwrap();
        assert!(!d.accepted);
        assert_eq!(d.reject_reason, Some(RejectReason::LowConfWeak));
    }

    #[test]
    fn rejects_non_simplex() {
        let bad = Array1::from_vec(vec![0.9, 0.9]);
        let ok = vec_with_max(2, 0, 0.8);
        assert!(filter_pseudo(bad.view(), ok.view(), 0.5).is_err());
        assert!(filter_pseudo(ok.view(), bad.view(), 0.5).is_err());
    }

    fn random_simplex(k: usize, rng: &mut ChaCha12Rng) -> Array1<f64> {
        let raw = Array1::from_shape_fn(k, |_| -rng.random::<f64>().max(1e-12).ln());
        let sum = raw.sum();
        raw / sum
    }

    /// Independent re-evaluation of the acceptance rule, written directly
    /// from the confidence and consistency conditions.
    fn oracle(w: &Array1<f64>, s: &Array1<f64>, tau: f64) -> (bool, usize) {
        let am = |p: &Array1<f64>| {
            let mut best = 0usize;
            for i in 0..p.len() {
                if p[i] > p[best] {
                    best = i;
                }
            }
            best
        };
        let (aw, as_) = (am(w), am(s));
        (w[aw] > tau && s[as_] > tau && aw == as_, aw)
    }

    #[test]
    fn randomized_suite_matches_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for _ in 0..10_000 {
            let k = rng.random_range(2..12);
            let w = random_simplex(k, &mut rng);
            let s = random_simplex(k, &mut rng);
            let tau = rng.random_range(0.05..0.95);
            let d = filter_pseudo(w.view(), s.view(), tau).unwrap();
            let (accept, label) = oracle(&w, &s, tau);
            assert_eq!(d.accepted, accept);
            if d.accepted {
                assert_eq!(d.pseudo_label, label);
            }
        }
    }

    #[test]
    fn monotone_in_tau() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..500 {
            let w = random_simplex(5, &mut rng);
            let s = random_simplex(5, &mut rng);
            let t1 = rng.random_range(0.2..0.9);
            let t2 = rng.random_range(0.05..t1);
            let d1 = filter_pseudo(w.view(), s.view(), t1).unwrap();
            let d2 = filter_pseudo(w.view(), s.view(), t2).unwrap();
            if d1.accepted {
                assert!(d2.accepted, "accepted at {t1} but not at smaller {t2}");
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let k = 6;
            let w = random_simplex(k, &mut rng);
            let s = random_simplex(k, &mut rng);
            let tau = rng.random_range(0.1..0.9);
            // rotate class indices by 2
            let perm: Vec<usize> = (0..k).map(|i| (i + 2) % k).collect();
            let mut wp = Array1::zeros(k);
            let mut sp = Array1::zeros(k);
            for i in 0..k {
                wp[perm[i]] = w[i];
                sp[perm[i]] = s[i];
            }
            let d = filter_pseudo(w.view(), s.view(), tau).unwrap();
            let dp = filter_pseudo(wp.view(), sp.view(), tau).unwrap();
            assert_eq!(d.accepted, dp.accepted);
            if d.accepted {
                assert_eq!(perm[d.pseudo_label], dp.pseudo_label);
            }
        }
    }

    #[test]
    fn argmax_ties_break_low() {
        let p = Array1::from_vec(vec![0.4, 0.4, 0.2]);
        assert_eq!(argmax(p.view()), 0);
    }

    #[test]
    fn weak_only_ignores_strong_checks() {
        let w = vec_with_max(10, 3, 0.97);
        let d = filter_weak_only(w.view(), 0.95).unwrap();
        assert!(d.accepted);
        assert_eq!(d.pseudo_label, 3);
        let low = vec_with_max(10, 3, 0.5);
        let d = filter_weak_only(low.view(), 0.95).unwrap();
        assert_eq!(d.reject_reason, Some(RejectReason::LowConfWeak));
    }
}
