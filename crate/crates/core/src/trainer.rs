//! Training orchestration: the pretraining loop (reconstruction +
//! supervised + gated pseudo-label objectives), the supervised fine-tuning
//! loop, evaluation, and reconstruction-grid export.
//!
//! Every stochastic choice is drawn from a stream seeded by
//! (master seed, epoch, purpose), so a run checkpointed at an epoch
//! boundary resumes bit-identically.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugPolicy};
use crate::checkpoint::{Checkpoint, RngState, Stage, CHECKPOINT_VERSION};
use crate::config::{ReconTarget, RunConfig};
use crate::data::{iterate_batch_pairs, load_dataset, split, DataBundle, Dataset, SplitIndices};
use crate::filter::{filter_pseudo, filter_weak_only, predict_probs, FilterDecision, RejectReason};
use crate::gate::{conf_val_accuracy, gate_step, GateState};
use crate::losses::{ce_loss, ce_loss_grad, cls_loss, recon_loss, recon_loss_grad, total_loss};
use crate::metrics::{FilterStats, GateTelemetry, MetricsRecord, MetricsWriter};
use crate::network::{DropCtx, NetworkParams, ParamSet};
use crate::optim::{cosine_scale, AdamW};
use crate::patch::{make_mask_plan, patchify, unpatchify, ImageTensor, PatchGrid};
use crate::{Error, Result};

/// Purpose tags for deriving independent per-epoch RNG streams.
mod purpose {
    pub const BATCHES: u64 = 1;
    pub const MASK: u64 = 2;
    pub const AUG_WEAK: u64 = 3;
    pub const AUG_STRONG: u64 = 4;
    pub const MONITOR: u64 = 5;
    pub const DROPOUT: u64 = 6;
}

/// SplitMix64-style finalizer over (master seed, epoch, purpose).
fn stream_seed(master: u64, epoch: usize, purpose: u64) -> u64 {
    let mut z = master
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(purpose.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_seed(stream: u64, index: usize) -> u64 {
    stream_seed(stream, index, 0x5151)
}

/// Loaded, normalized data plus its labeled/unlabeled/validation split.
pub struct PreparedData {
    pub bundle: DataBundle,
    pub splits: SplitIndices,
}

/// Loads the configured dataset (resized to the network input when needed)
/// and splits the training set.
pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    config.validate()?;
    let target = if config.data.height != config.network.img_size
        || config.data.width != config.network.img_size
    {
        Some(config.network.img_size)
    } else {
        None
    };
    let bundle = load_dataset(&config.data, target)?;
    let splits = split(&bundle.train, &config.split)?;
    Ok(PreparedData { bundle, splits })
}

/// Mutable training state: model, optimizer, gate, and progress counters.
pub struct Trainer {
    pub config: RunConfig,
    pub params: NetworkParams,
    pub optimizer: AdamW,
    pub gate: GateState,
    pub stage: Stage,
    /// Completed epochs in the current stage.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let params = NetworkParams::init(&config.network, config.seed)?;
        let optimizer = AdamW::new(config.optimizer);
        Ok(Self {
            config,
            params,
            optimizer,
            gate: GateState::default(),
            stage: Stage::Pretrain,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self {
            config: ckpt.config,
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            gate: ckpt.gate,
            stage: ckpt.stage,
            epoch: ckpt.epoch,
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: self.config.hash()?,
            config: self.config.clone(),
            stage: self.stage,
            epoch: self.epoch,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            gate: self.gate,
            rng: RngState {
                master_seed: self.config.seed,
                next_epoch: self.epoch,
            },
        })
    }

    /// Switches a pretrained state over to supervised fine-tuning: fresh
    /// optimizer, fresh epoch counter, gate no longer consulted.
    pub fn begin_finetune(&mut self) {
        self.stage = Stage::Finetune;
        self.epoch = 0;
        self.optimizer = AdamW::new(self.config.optimizer);
    }

    /// The gate bit that applies to this epoch's training steps, after
    /// ablation overrides.
    fn gate_bit(&self, epoch: usize) -> bool {
        let ab = &self.config.ablation;
        if ab.gate_off_from_epoch1 {
            return true;
        }
        if ab.gate_no_val_threshold {
            return epoch > self.config.gate.t_warmup;
        }
        self.gate.open
    }

    fn drop_ctx(&self, epoch: usize, stream: u64) -> DropCtx {
        let p = self.config.network.dropout;
        if p > 0.0 {
            DropCtx::train(
                p,
                ChaCha12Rng::seed_from_u64(stream_seed(
                    self.config.seed ^ stream,
                    epoch,
                    purpose::DROPOUT,
                )),
            )
        } else {
            DropCtx::eval()
        }
    }

    fn recon_target_grid(&self, dataset: &Dataset, image: &ImageTensor) -> Result<PatchGrid> {
        let p = self.config.network.patch_size;
        match self.config.loss.recon_target {
            ReconTarget::Normalized => patchify(image, p),
            ReconTarget::Raw => patchify(&dataset.denormalize(image), p),
        }
    }

    fn lr_scale(&self, epoch: usize, total: usize) -> f64 {
        if self.config.optimizer.cosine_decay {
            cosine_scale(epoch - 1, total)
        } else {
            1.0
        }
    }

    /// One pretraining epoch. Returns the metrics record (without test
    /// accuracy, which the caller fills in when it evaluates).
    pub fn pretrain_epoch(&mut self, data: &PreparedData) -> Result<MetricsRecord> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let cfg = self.config.clone();
        let train = &data.bundle.train;
        let weights = cfg.loss.weights();
        let gate_open = self.gate_bit(epoch);
        let lambda_p_eff = if gate_open { weights.lambda_pseudo } else { 0.0 };
        let recon_on = !cfg.ablation.recon_off;

        let mask_stream = stream_seed(cfg.seed, epoch, purpose::MASK);
        let weak_stream = stream_seed(cfg.seed, epoch, purpose::AUG_WEAK);
        let strong_stream = stream_seed(cfg.seed, epoch, purpose::AUG_STRONG);
        let pairs = iterate_batch_pairs(
            &data.splits,
            cfg.train.batch_labeled,
            cfg.train.batch_unlabeled,
            stream_seed(cfg.seed, epoch, purpose::BATCHES),
        )?;
        let lr_scale = self.lr_scale(epoch, cfg.train.epochs_pretrain);
        let mut drop = self.drop_ctx(epoch, 0);

        let mut filter_stats = FilterStats::new(train.num_classes);
        let mut recon_sum = 0.0;
        let mut sup_sum = 0.0;
        let mut total_sum = 0.0;
        let mut pseudo_losses_epoch: Vec<f64> = Vec::new();

        for pair in &pairs {
            self.params.zero_grads();

            // Masked reconstruction over every image in the step.
            let mut step_recon = 0.0;
            if recon_on {
                let all: Vec<usize> = pair.labeled.iter().chain(&pair.unlabeled).copied().collect();
                let scale = 1.0 / all.len() as f64;
                for &idx in &all {
                    let image = &train.images[idx];
                    let grid = patchify(image, cfg.network.patch_size)?;
                    let target = self.recon_target_grid(train, image)?;
                    let plan = make_mask_plan(
                        grid.num_patches(),
                        cfg.train.mask_ratio,
                        sample_seed(mask_stream, idx),
                    )?;
                    let (xhat, cache) = self.params.forward_recon_cached(&grid, &plan, &mut drop)?;
                    step_recon += scale
                        * recon_loss(&xhat, &target.rows, plan.masked_idx(), cfg.loss.recon_reduction)?;
                    let mut d_xhat =
                        recon_loss_grad(&xhat, &target.rows, plan.masked_idx(), cfg.loss.recon_reduction);
                    d_xhat *= scale;
                    self.params.backward_recon(&cache, &d_xhat);
                }
            }

            // Supervised cross-entropy on weakly augmented labeled images.
            let mut sup_losses = Vec::with_capacity(pair.labeled.len());
            let sup_scale = weights.lambda_cls / pair.labeled.len() as f64;
            for &idx in &pair.labeled {
                let view = augment(&train.images[idx], AugPolicy::weak(), sample_seed(weak_stream, idx));
                let grid = patchify(&view, cfg.network.patch_size)?;
                let (logits, cache) = self.params.forward_cls_cached(&grid, &mut drop)?;
                sup_losses.push(ce_loss(logits.view(), train.labels[idx])?);
                let d_logits = ce_loss_grad(logits.view(), train.labels[idx]) * sup_scale;
                self.params.backward_cls(&cache, &d_logits);
            }

            // Pseudo-label branch, only when the gate is open.
            let mut step_pseudo: Vec<(usize, ImageTensor, usize)> = Vec::new();
            if lambda_p_eff > 0.0 {
                for &idx in &pair.unlabeled {
                    let weak =
                        augment(&train.images[idx], AugPolicy::weak(), sample_seed(weak_stream, idx));
                    let strong = augment(
                        &train.images[idx],
                        AugPolicy::strong(),
                        sample_seed(strong_stream, idx),
                    );
                    let p_w = predict_probs(&self.params, &weak)?;
                    let decision: FilterDecision = if cfg.ablation.consistency_off {
                        filter_weak_only(p_w.view(), cfg.gate.tau)?
                    } else {
                        let p_s = predict_probs(&self.params, &strong)?;
                        filter_pseudo(p_w.view(), p_s.view(), cfg.gate.tau)?
                    };
                    filter_stats.considered += 1;
                    match decision.reject_reason {
                        None => {
                            filter_stats.accepted += 1;
                            filter_stats.pseudo_class_hist[decision.pseudo_label] += 1;
                            // the strong view carries the gradient; the weak
                            // view only labels it
                            let train_view = if cfg.ablation.consistency_off { weak } else { strong };
                            step_pseudo.push((idx, train_view, decision.pseudo_label));
                        }
                        Some(RejectReason::LowConfWeak) => filter_stats.rejected_low_conf_weak += 1,
                        Some(RejectReason::LowConfStrong) => {
                            filter_stats.rejected_low_conf_strong += 1
                        }
                        Some(RejectReason::Inconsistent) => filter_stats.rejected_inconsistent += 1,
                    }
                }
            }
            let mut pseudo_losses = Vec::with_capacity(step_pseudo.len());
            if !step_pseudo.is_empty() {
                let scale = weights.lambda_cls * lambda_p_eff / step_pseudo.len() as f64;
                for (_, view, pseudo_label) in &step_pseudo {
                    let grid = patchify(view, cfg.network.patch_size)?;
                    let (logits, cache) = self.params.forward_cls_cached(&grid, &mut drop)?;
                    pseudo_losses.push(ce_loss(logits.view(), *pseudo_label)?);
                    let d_logits = ce_loss_grad(logits.view(), *pseudo_label) * scale;
                    self.params.backward_cls(&cache, &d_logits);
                }
            }

            let step_cls = cls_loss(&sup_losses, &pseudo_losses, lambda_p_eff);
            let step_total = total_loss(step_recon, step_cls, weights.lambda_cls)?;
            self.optimizer.step(&mut self.params, lr_scale);
            if !self.params.all_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters diverged during epoch {epoch}"
                )));
            }

            recon_sum += step_recon;
            sup_sum += sup_losses.iter().sum::<f64>() / sup_losses.len() as f64;
            total_sum += step_total;
            pseudo_losses_epoch.extend(pseudo_losses);
        }

        // End-of-epoch reliability monitor, then the gate transition.
        let (val_conf_acc, val_accepted) = self.run_monitor(data, epoch)?;
        self.gate = gate_step(&self.gate, &cfg.gate, val_conf_acc);
        self.epoch = epoch;

        let steps = pairs.len() as f64;
        let pseudo_mean = if pseudo_losses_epoch.is_empty() {
            0.0
        } else {
            pseudo_losses_epoch.iter().sum::<f64>() / pseudo_losses_epoch.len() as f64
        };
        Ok(MetricsRecord {
            epoch,
            stage: "pretrain".into(),
            loss_recon: recon_on.then_some(recon_sum / steps),
            loss_sup: sup_sum / steps,
            loss_pseudo: pseudo_mean,
            loss_total: total_sum / steps,
            lambda_p_eff,
            gate: GateTelemetry {
                g: u8::from(gate_open),
                val_conf_acc,
                val_accepted_count: val_accepted,
                below_count: self.gate.below_count,
            },
            filter: filter_stats,
            test_acc: None,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }

    fn run_monitor(&self, data: &PreparedData, epoch: usize) -> Result<(f64, usize)> {
        let val = &data.splits.val;
        if val.is_empty() {
            return Ok((0.0, 0));
        }
        let cap = self.config.train.val_cap.max(1).min(val.len());
        let images: Vec<ImageTensor> = val[..cap]
            .iter()
            .map(|&i| data.bundle.train.images[i].clone())
            .collect();
        let labels: Vec<usize> = val[..cap].iter().map(|&i| data.bundle.train.labels[i]).collect();
        conf_val_accuracy(
            &self.params,
            &images,
            &labels,
            self.config.gate.tau,
            stream_seed(self.config.seed, epoch, purpose::MONITOR),
        )
    }

    /// One supervised fine-tuning epoch: labeled data only, zero mask, no
    /// reconstruction or pseudo terms. Decoder-side parameters receive no
    /// gradient and therefore never move.
    pub fn finetune_epoch(&mut self, data: &PreparedData) -> Result<MetricsRecord> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let cfg = self.config.clone();
        let train = &data.bundle.train;
        let labeled_only = SplitIndices {
            labeled: data.splits.labeled.clone(),
            unlabeled: Vec::new(),
            val: data.splits.val.clone(),
        };
        let pairs = iterate_batch_pairs(
            &labeled_only,
            cfg.train.batch_labeled,
            cfg.train.batch_unlabeled,
            stream_seed(cfg.seed, epoch, purpose::BATCHES),
        )?;
        let weak_stream = stream_seed(cfg.seed, epoch, purpose::AUG_WEAK);
        let lr_scale = self.lr_scale(epoch, cfg.train.epochs_finetune);
        let mut drop = self.drop_ctx(epoch, 1);
        let mut sup_sum = 0.0;
        for pair in &pairs {
            self.params.zero_grads();
            let scale = cfg.loss.lambda_cls / pair.labeled.len() as f64;
            let mut losses = Vec::with_capacity(pair.labeled.len());
            for &idx in &pair.labeled {
                let view = augment(&train.images[idx], AugPolicy::weak(), sample_seed(weak_stream, idx));
                let grid = patchify(&view, cfg.network.patch_size)?;
                let (logits, cache) = self.params.forward_cls_cached(&grid, &mut drop)?;
                losses.push(ce_loss(logits.view(), train.labels[idx])?);
                let d_logits = ce_loss_grad(logits.view(), train.labels[idx]) * scale;
                self.params.backward_cls(&cache, &d_logits);
            }
            let step_sup = losses.iter().sum::<f64>() / losses.len() as f64;
            total_loss(0.0, step_sup, cfg.loss.lambda_cls)?;
            self.optimizer.step(&mut self.params, lr_scale);
            sup_sum += step_sup;
        }
        if !self.params.all_finite() {
            return Err(Error::NonFinite(format!(
                "parameters diverged during fine-tune epoch {epoch}"
            )));
        }
        self.epoch = epoch;
        let steps = pairs.len() as f64;
        let sup_mean = sup_sum / steps;
        Ok(MetricsRecord {
            epoch,
            stage: "finetune".into(),
            loss_recon: None,
            loss_sup: sup_mean,
            loss_pseudo: 0.0,
            loss_total: cfg.loss.lambda_cls * sup_mean,
            lambda_p_eff: 0.0,
            gate: GateTelemetry {
                g: 0,
                val_conf_acc: self.gate.last_val_conf_acc.unwrap_or(0.0),
                val_accepted_count: 0,
                below_count: self.gate.below_count,
            },
            filter: FilterStats::new(train.num_classes),
            test_acc: None,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Top-1 accuracy plus per-class breakdown over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub total: usize,
    pub correct: usize,
    pub per_class_correct: Vec<usize>,
    pub per_class_total: Vec<usize>,
}

pub fn evaluate(params: &NetworkParams, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let k = dataset.num_classes;
    let mut per_class_correct = vec![0usize; k];
    let mut per_class_total = vec![0usize; k];
    let mut correct = 0usize;
    for (image, &label) in dataset.images.iter().zip(&dataset.labels) {
        let probs = predict_probs(params, image)?;
        let pred = crate::filter::argmax(probs.view());
        per_class_total[label] += 1;
        if pred == label {
            per_class_correct[label] += 1;
            correct += 1;
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / dataset.len() as f64,
        total: dataset.len(),
        correct,
        per_class_correct,
        per_class_total,
    })
}

/// Paths produced by a training run.
pub struct RunArtifacts {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub test_accuracy: f64,
}

fn checkpoint_path(out_dir: &Path, stage: Stage, epoch: usize) -> PathBuf {
    let tag = match stage {
        Stage::Pretrain => "pretrain",
        Stage::Finetune => "finetune",
    };
    out_dir.join(format!("ckpt_{tag}_epoch{epoch:04}.json"))
}

fn save_diagnostic(trainer: &Trainer, out_dir: &Path) {
    if let Ok(ckpt) = trainer.to_checkpoint() {
        let _ = ckpt.save(&out_dir.join("diagnostic.json"));
    }
}

fn run_stage(
    trainer: &mut Trainer,
    data: &PreparedData,
    out_dir: &Path,
    total_epochs: usize,
    resume: bool,
) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(match trainer.stage {
        Stage::Pretrain => "metrics_pretrain.jsonl",
        Stage::Finetune => "metrics_finetune.jsonl",
    });
    let mut writer = if resume && trainer.epoch > 0 {
        MetricsWriter::append(&metrics_path)?
    } else {
        MetricsWriter::create(&metrics_path)?
    };
    while trainer.epoch < total_epochs {
        let result = match trainer.stage {
            Stage::Pretrain => trainer.pretrain_epoch(data),
            Stage::Finetune => trainer.finetune_epoch(data),
        };
        let mut record = match result {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                save_diagnostic(trainer, out_dir);
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let last = trainer.epoch == total_epochs;
        if last {
            record.test_acc = Some(evaluate(&trainer.params, &data.bundle.test)?.accuracy);
        }
        writer.write(&record)?;
        if last || trainer.epoch.is_multiple_of(trainer.config.train.checkpoint_every.max(1)) {
            trainer
                .to_checkpoint()?
                .save(&checkpoint_path(out_dir, trainer.stage, trainer.epoch))?;
        }
    }
    let final_checkpoint = checkpoint_path(out_dir, trainer.stage, trainer.epoch);
    let test_accuracy = evaluate(&trainer.params, &data.bundle.test)?.accuracy;
    Ok(RunArtifacts {
        final_checkpoint,
        metrics_path,
        test_accuracy,
    })
}

/// Runs (or resumes) pretraining to completion, writing metrics and
/// periodic checkpoints under `out_dir`.
pub fn run_pretrain(
    config: &RunConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunArtifacts> {
    let (mut trainer, resuming) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path, Some(config), false)?;
            if ckpt.stage != Stage::Pretrain {
                return Err(Error::Checkpoint(
                    "cannot resume pretraining from a fine-tune checkpoint".into(),
                ));
            }
            (Trainer::from_checkpoint(ckpt), true)
        }
        None => (Trainer::new(config.clone())?, false),
    };
    let data = prepare_data(&trainer.config)?;
    let total = trainer.config.train.epochs_pretrain;
    run_stage(&mut trainer, &data, out_dir, total, resuming)
}

/// Fine-tunes from a pretraining checkpoint (or resumes an interrupted
/// fine-tune run). The checkpoint's config hash must match `config` unless
/// `allow_config_mismatch` is set; in that case `config` wins.
pub fn run_finetune(
    config: &RunConfig,
    checkpoint: &Path,
    out_dir: &Path,
    allow_config_mismatch: bool,
) -> Result<RunArtifacts> {
    let ckpt = Checkpoint::load(checkpoint, Some(config), allow_config_mismatch)?;
    let resuming = ckpt.stage == Stage::Finetune;
    let mut trainer = Trainer::from_checkpoint(ckpt);
    trainer.config = config.clone();
    if !resuming {
        trainer.begin_finetune();
    }
    let data = prepare_data(&trainer.config)?;
    let total = trainer.config.train.epochs_finetune;
    let artifacts = run_stage(&mut trainer, &data, out_dir, total, resuming)?;
    let report = evaluate(&trainer.params, &data.bundle.test)?;
    std::fs::write(
        out_dir.join("eval.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(artifacts)
}

fn to_display(
    dataset: &Dataset,
    image: &ImageTensor,
    recon_target: ReconTarget,
) -> ImageTensor {
    match recon_target {
        ReconTarget::Normalized => dataset.denormalize(image),
        ReconTarget::Raw => {
            let mut out = image.clone();
            out.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
            out
        }
    }
}

/// Writes a PNG grid with one row per sample and three columns: the
/// original, the masked input (masked patches zeroed in display space),
/// and the reconstruction with visible patches pasted through. At mask
/// ratio zero both derived columns reproduce the original exactly.
pub fn export_reconstructions(
    params: &NetworkParams,
    dataset: &Dataset,
    indices: &[usize],
    mask_ratio: f64,
    seed: u64,
    recon_target: ReconTarget,
    out_path: &Path,
) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Config("no samples selected for the grid".into()));
    }
    let cfg = &params.config;
    let (h, w, c) = (cfg.img_size, cfg.img_size, cfg.channels);
    let pad = 2usize;
    let mut canvas =
        image::RgbImage::from_pixel(
            (3 * w + 4 * pad) as u32,
            (indices.len() * (h + pad) + pad) as u32,
            image::Rgb([255, 255, 255]),
        );
    for (row, &idx) in indices.iter().enumerate() {
        let image_t = dataset
            .images
            .get(idx)
            .ok_or_else(|| Error::Data(format!("sample index {idx} out of range")))?;
        let grid = patchify(image_t, cfg.patch_size)?;
        let plan = make_mask_plan(grid.num_patches(), mask_ratio, seed.wrapping_add(idx as u64))?;
        let xhat = params.forward_recon(&grid, &plan)?;

        let original = dataset.denormalize(image_t);

        // masked view: original with masked patches zeroed, in display space
        let mut masked_grid = patchify(&original, cfg.patch_size)?;
        for &i in plan.masked_idx() {
            masked_grid.rows.row_mut(i).fill(0.0);
        }
        let masked = unpatchify(&masked_grid, h, w, c)?;

        // reconstruction with visible patches passed through from the input
        let mut recon_rows: Array2<f64> = xhat;
        let source_rows = match recon_target {
            ReconTarget::Normalized => grid.rows.clone(),
            ReconTarget::Raw => patchify(&original, cfg.patch_size)?.rows,
        };
        for &i in plan.visible_idx() {
            recon_rows.row_mut(i).assign(&source_rows.row(i));
        }
        let recon_img = unpatchify(
            &PatchGrid {
                rows: recon_rows,
                patch_size: cfg.patch_size,
            },
            h,
            w,
            c,
        )?;
        let recon_display = to_display(dataset, &recon_img, recon_target);

        for (col, img) in [&original, &masked, &recon_display].into_iter().enumerate() {
            let x0 = pad + col * (w + pad);
            let y0 = pad + row * (h + pad);
            for i in 0..h {
                for j in 0..w {
                    let px = |ch: usize| (img.data[(i, j, ch.min(c - 1))].clamp(0.0, 1.0) * 255.0)
                        .round() as u8;
                    canvas.put_pixel(
                        (x0 + j) as u32,
                        (y0 + i) as u32,
                        image::Rgb([px(0), px(1), px(2)]),
                    );
                }
            }
        }
    }
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    canvas.save(out_path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AblationFlags;

    fn tiny_config(seed: u64) -> RunConfig {
        let mut config = RunConfig::toy_profile(seed);
        if let crate::data::DataSource::Synthetic(ref mut spec) = config.data.source {
            spec.train_samples = 240;
            spec.test_samples = 40;
        }
        config.split.labeled_fraction = 0.25;
        config.train.epochs_pretrain = 2;
        config.train.epochs_finetune = 1;
        config.train.batch_labeled = 8;
        config.train.batch_unlabeled = 16;
        config
    }

    #[test]
    fn pretrain_epoch_runs_and_reports() {
        let config = tiny_config(0);
        let data = prepare_data(&config).unwrap();
        let mut trainer = Trainer::new(config).unwrap();
        let record = trainer.pretrain_epoch(&data).unwrap();
        assert_eq!(record.epoch, 1);
        assert!(record.loss_recon.unwrap() > 0.0);
        assert!(record.loss_sup > 0.0);
        assert_eq!(record.gate.g, 0, "warm-up epoch must run gated off");
        assert_eq!(record.filter.considered, 0);
        assert!(record.loss_total.is_finite());
    }

    #[test]
    fn recon_off_leaves_decoder_bit_identical() {
        let mut config = tiny_config(1);
        config.ablation = AblationFlags {
            recon_off: true,
            ..Default::default()
        };
        let data = prepare_data(&config).unwrap();
        let mut trainer = Trainer::new(config).unwrap();
        let before_dec = trainer.params.decoder.clone();
        let before_mask = trainer.params.mask_token.value.clone();
        let before_out = trainer.params.out_proj.w.value.clone();
        let before_adapter = trainer.params.enc_to_dec.w.value.clone();
        let record = trainer.pretrain_epoch(&data).unwrap();
        assert_eq!(record.loss_recon, None);
        for (a, b) in trainer.params.decoder.blocks.iter().zip(&before_dec.blocks) {
            assert_eq!(a.attn.qkv.w.value, b.attn.qkv.w.value);
            assert_eq!(a.ffn.fc1.w.value, b.ffn.fc1.w.value);
        }
        assert_eq!(trainer.params.mask_token.value, before_mask);
        assert_eq!(trainer.params.out_proj.w.value, before_out);
        assert_eq!(trainer.params.enc_to_dec.w.value, before_adapter);
    }

    #[test]
    fn finetune_never_touches_decoder() {
        let config = tiny_config(2);
        let data = prepare_data(&config).unwrap();
        let mut trainer = Trainer::new(config).unwrap();
        trainer.begin_finetune();
        let before_mask = trainer.params.mask_token.value.clone();
        let before_out = trainer.params.out_proj.w.value.clone();
        let before_pos = trainer.params.dec_pos_embed.value.clone();
        let head_before = trainer.params.head.w.value.clone();
        trainer.finetune_epoch(&data).unwrap();
        assert_eq!(trainer.params.mask_token.value, before_mask);
        assert_eq!(trainer.params.out_proj.w.value, before_out);
        assert_eq!(trainer.params.dec_pos_embed.value, before_pos);
        assert_ne!(trainer.params.head.w.value, head_before, "head must train");
    }

    #[test]
    fn gate_off_ablation_forces_pseudo_branch_on() {
        let mut config = tiny_config(3);
        config.ablation.gate_off_from_epoch1 = true;
        let data = prepare_data(&config).unwrap();
        let mut trainer = Trainer::new(config).unwrap();
        let record = trainer.pretrain_epoch(&data).unwrap();
        assert_eq!(record.gate.g, 1);
        assert_eq!(record.lambda_p_eff, 0.75);
        assert!(record.filter.considered > 0);
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let config = tiny_config(4);
        let data = prepare_data(&config).unwrap();

        // straight-through run: two epochs
        let mut a = Trainer::new(config.clone()).unwrap();
        a.pretrain_epoch(&data).unwrap();
        a.pretrain_epoch(&data).unwrap();

        // interrupted run: one epoch, checkpoint, reload, second epoch
        let mut b = Trainer::new(config).unwrap();
        b.pretrain_epoch(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        b.to_checkpoint().unwrap().save(&path).unwrap();
        let loaded = Checkpoint::load(&path, Some(&b.config), false).unwrap();
        let mut b = Trainer::from_checkpoint(loaded);
        b.pretrain_epoch(&data).unwrap();

        let mut values_a = Vec::new();
        a.params.visit_params(&mut |p| values_a.push(p.value.clone()));
        let mut values_b = Vec::new();
        b.params.visit_params(&mut |p| values_b.push(p.value.clone()));
        assert_eq!(values_a, values_b);
        assert_eq!(a.gate, b.gate);
    }

    #[test]
    fn evaluate_counts_consistently() {
        let config = tiny_config(5);
        let data = prepare_data(&config).unwrap();
        let trainer = Trainer::new(config).unwrap();
        let report = evaluate(&trainer.params, &data.bundle.test).unwrap();
        assert_eq!(report.total, 40);
        assert_eq!(
            report.per_class_correct.iter().sum::<usize>(),
            report.correct
        );
        assert_eq!(report.per_class_total.iter().sum::<usize>(), report.total);
        assert!((0.0..=1.0).contains(&report.accuracy));
    }

    #[test]
    fn recon_grid_zero_ratio_reproduces_original() {
        let config = tiny_config(6);
        let data = prepare_data(&config).unwrap();
        let trainer = Trainer::new(config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let zero = dir.path().join("grid_r0.png");
        export_reconstructions(
            &trainer.params,
            &data.bundle.test,
            &[0, 1, 2],
            0.0,
            9,
            ReconTarget::Normalized,
            &zero,
        )
        .unwrap();
        let img = image::open(&zero).unwrap().to_rgb8();
        let (h, w, pad) = (16u32, 16u32, 2u32);
        for row in 0..3u32 {
            for i in 0..h {
                for j in 0..w {
                    let y = pad + row * (h + pad) + i;
                    let orig = img.get_pixel(pad + j, y);
                    let masked = img.get_pixel(2 * pad + w + j, y);
                    let recon = img.get_pixel(3 * pad + 2 * w + j, y);
                    assert_eq!(orig, masked, "masked column differs at r=0");
                    assert_eq!(orig, recon, "recon column differs at r=0");
                }
            }
        }
    }

    #[test]
    fn stream_seeds_distinct_across_purposes_and_epochs() {
        let mut seen = std::collections::HashSet::new();
        for epoch in 0..50 {
            for purpose in 1..=6u64 {
                assert!(seen.insert(stream_seed(7, epoch, purpose)));
            }
        }
    }
}
