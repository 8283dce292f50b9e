//! Loss terms: masked reconstruction MSE, stabilized cross-entropy, and
//! their weighted combinations.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// λ (classification weight in the total loss) and λ_p (pseudo-label
/// weight inside the classification loss).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_pseudo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_pseudo: 0.75,
        }
    }
}

/// How the per-patch reconstruction error is reduced. The two variants
/// differ by a factor of P²C, which shifts the recon/cls balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconReduction {
    /// Squared Euclidean norm per patch, mean over masked patches.
    #[default]
    PatchNorm,
    /// Mean over every element of the masked patches.
    ElementwiseMean,
}

/// MSE over masked patches only: (1/|I_m|) Σ_{i∈I_m} ‖x̂_i − x_i‖².
/// Visible patches contribute nothing, in value or gradient.
pub fn recon_loss(
    xhat: &Array2<f64>,
    target: &Array2<f64>,
    masked_idx: &[usize],
    reduction: ReconReduction,
) -> Result<f64> {
    if masked_idx.is_empty() {
        return Err(Error::Config(
            "reconstruction loss undefined with no masked patches".into(),
        ));
    }
    if xhat.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            xhat.dim(),
            target.dim()
        )));
    }
    let denom = match reduction {
        ReconReduction::PatchNorm => masked_idx.len() as f64,
        ReconReduction::ElementwiseMean => (masked_idx.len() * xhat.ncols()) as f64,
    };
    let mut total = 0.0;
    for &i in masked_idx {
        let diff = &xhat.row(i) - &target.row(i);
        total += diff.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / denom)
}

/// Gradient of [`recon_loss`] with respect to x̂. Rows of visible patches
/// are exactly zero.
pub fn recon_loss_grad(
    xhat: &Array2<f64>,
    target: &Array2<f64>,
    masked_idx: &[usize],
    reduction: ReconReduction,
) -> Array2<f64> {
    let denom = match reduction {
        ReconReduction::PatchNorm => masked_idx.len() as f64,
        ReconReduction::ElementwiseMean => (masked_idx.len() * xhat.ncols()) as f64,
    };
    let mut grad = Array2::zeros(xhat.raw_dim());
    for &i in masked_idx {
        let diff = &xhat.row(i) - &target.row(i);
        grad.row_mut(i).assign(&(diff * (2.0 / denom)));
    }
    grad
}

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Cross-entropy −log softmax(logits)[label], max-subtraction stabilized.
pub fn ce_loss(logits: ArrayView1<f64>, label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Config(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(log_sum + max - logits[label])
}

/// Gradient of [`ce_loss`]: softmax(logits) − one_hot(label).
pub fn ce_loss_grad(logits: ArrayView1<f64>, label: usize) -> Array1<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g
}

/// Combined classification loss: mean supervised CE plus the effective
/// pseudo weight times the mean pseudo CE. An empty pseudo list (or empty
/// supervised list) contributes zero.
pub fn cls_loss(sup_losses: &[f64], pseudo_losses: &[f64], lambda_p_eff: f64) -> f64 {
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    mean(sup_losses) + lambda_p_eff * mean(pseudo_losses)
}

/// Total objective: recon + λ · cls. Rejects non-finite inputs so the
/// trainer can abort the step.
pub fn total_loss(recon: f64, cls: f64, lambda_cls: f64) -> Result<f64> {
    if !recon.is_finite() || !cls.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss terms recon={recon} cls={cls}"
        )));
    }
    Ok(recon + lambda_cls * cls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn recon_perfect_is_zero() {
        let x = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64);
        let l = recon_loss(&x, &x.clone(), &[1, 3], ReconReduction::PatchNorm).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn recon_uniform_offset_value() {
        // One masked patch, every element off by 0.1, P=4, C=3 → 48 * 0.01.
        let target = Array2::zeros((2, 48));
        let xhat = Array2::from_elem((2, 48), 0.1);
        let l = recon_loss(&xhat, &target, &[0], ReconReduction::PatchNorm).unwrap();
        assert!((l - 0.48).abs() < 1e-12, "{l}");
    }

    #[test]
    fn recon_ignores_visible_patches() {
        let target = Array2::zeros((3, 5));
        let mut xhat = Array2::zeros((3, 5));
        xhat.row_mut(1).fill(0.3);
        let base = recon_loss(&xhat, &target, &[1], ReconReduction::PatchNorm).unwrap();
        xhat.row_mut(0).fill(99.0); // visible patch
        let after = recon_loss(&xhat, &target, &[1], ReconReduction::PatchNorm).unwrap();
        assert_eq!(base, after);
        let grad = recon_loss_grad(&xhat, &target, &[1], ReconReduction::PatchNorm);
        assert!(grad.row(0).iter().all(|&v| v == 0.0));
        assert!(grad.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recon_rejects_empty_mask() {
        let x = Array2::<f64>::zeros((2, 4));
        assert!(recon_loss(&x, &x.clone(), &[], ReconReduction::PatchNorm).is_err());
    }

    #[test]
    fn recon_elementwise_variant_scales() {
        let target = Array2::zeros((2, 48));
        let xhat = Array2::from_elem((2, 48), 0.1);
        let a = recon_loss(&xhat, &target, &[0, 1], ReconReduction::PatchNorm).unwrap();
        let b = recon_loss(&xhat, &target, &[0, 1], ReconReduction::ElementwiseMean).unwrap();
        assert!((a - 48.0 * b).abs() < 1e-12);
    }

    #[test]
    fn ce_uniform_logits_is_ln_k() {
        let logits = Array1::zeros(10);
        let l = ce_loss(logits.view(), 3).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-9, "{l}");
    }

    #[test]
    fn ce_confident_logit_near_zero() {
        let mut logits = Array1::zeros(5);
        logits[2] = 50.0;
        let l = ce_loss(logits.view(), 2).unwrap();
        assert!(l.abs() < 1e-9, "{l}");
    }

    #[test]
    fn ce_two_class_ln2() {
        let logits = array![0.0, 0.0];
        let l = ce_loss(logits.view(), 0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_bad_label() {
        let logits = Array1::zeros(3);
        assert!(ce_loss(logits.view(), 3).is_err());
    }

    #[test]
    fn ce_matches_reference_for_large_logits() {
        // Reference: direct softmax in extended precision via the identity
        // -log p = logsumexp(z) - z_y, computed term by term.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..200 {
            let k = rng.random_range(2..12);
            let logits = Array1::from_shape_fn(k, |_| rng.random_range(-50.0..50.0));
            let label = rng.random_range(0..k);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let p = (logits[label] - max).exp()
                / logits.iter().map(|v| (v - max).exp()).sum::<f64>();
            let reference = -p.ln();
            let got = ce_loss(logits.view(), label).unwrap();
            assert!((got - reference).abs() < 1e-9, "{got} vs {reference}");
        }
    }

    #[test]
    fn cls_loss_examples() {
        let got = cls_loss(&[0.693], &[0.4], 0.75);
        assert!((got - 0.993).abs() < 1e-9);
        // warm-up: lambda_p_eff = 0
        assert_eq!(cls_loss(&[0.5, 0.7], &[123.0], 0.0), 0.6);
        assert_eq!(cls_loss(&[0.0], &[], 0.75), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.5, 0.2, 1.0).unwrap(), 0.7);
        assert_eq!(total_loss(0.5, 0.2, 0.0).unwrap(), 0.5);
        assert_eq!(total_loss(0.3, 0.0, 1.0).unwrap(), 0.3);
        assert!(total_loss(f64::NAN, 0.0, 1.0).is_err());
        assert!(total_loss(0.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn losses_linear_in_weights() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let sup = [0.4, 0.9, 1.3];
        let pseudo = [0.2, 0.6];
        for _ in 0..5 {
            let lp: f64 = rng.random_range(0.0..2.0);
            let l: f64 = rng.random_range(0.0..2.0);
            let base = cls_loss(&sup, &pseudo, 0.0);
            let unit = cls_loss(&sup, &pseudo, 1.0) - base;
            assert!((cls_loss(&sup, &pseudo, lp) - (base + lp * unit)).abs() < 1e-12);
            let t0 = total_loss(0.7, 1.1, 0.0).unwrap();
            let t1 = total_loss(0.7, 1.1, 1.0).unwrap() - t0;
            assert!((total_loss(0.7, 1.1, l).unwrap() - (t0 + l * t1)).abs() < 1e-12);
        }
    }
}
