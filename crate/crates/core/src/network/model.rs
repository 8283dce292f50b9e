//! The SSMAE network parameters and its two forward modes: masked
//! reconstruction and zero-mask classification.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    init_weight, DropCtx, Linear, LinearCache, Param, ParamSet, Transformer, TransformerCache,
};
use crate::patch::{gather_visible, unshuffle_tokens, MaskPlan, PatchGrid};
use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub img_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub dec_embed_dim: usize,
    pub dec_depth: usize,
    pub dec_num_heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_true")]
    pub dec_pos_learnable: bool,
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl NetworkConfig {
    /// ViT-B/16 with the lightweight decoder: 768/12/12 encoder,
    /// 512/8/16 decoder, 16x16 patches on 224x224 inputs.
    pub fn reference(num_classes: usize) -> Self {
        Self {
            img_size: 224,
            channels: 3,
            patch_size: 16,
            num_classes,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            dec_embed_dim: 512,
            dec_depth: 8,
            dec_num_heads: 16,
            mlp_ratio: 4,
            dropout: 0.0,
            dec_pos_learnable: true,
        }
    }

    /// Desk-scale profile for tests and synthetic runs.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            img_size: 16,
            channels: 3,
            patch_size: 4,
            num_classes,
            embed_dim: 64,
            depth: 2,
            num_heads: 4,
            dec_embed_dim: 32,
            dec_depth: 1,
            dec_num_heads: 4,
            mlp_ratio: 4,
            dropout: 0.0,
            dec_pos_learnable: true,
        }
    }

    pub fn num_patches(&self) -> usize {
        (self.img_size / self.patch_size) * (self.img_size / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.img_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "img_size {} not divisible by patch_size {}",
                self.img_size, self.patch_size
            )));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.dec_num_heads == 0 || !self.dec_embed_dim.is_multiple_of(self.dec_num_heads) {
            return Err(Error::Config(format!(
                "dec_embed_dim {} not divisible by dec_num_heads {}",
                self.dec_embed_dim, self.dec_num_heads
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

fn sinusoidal_embed(n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |(pos, i)| {
        let exponent = (2 * (i / 2)) as f64 / dim as f64;
        let angle = pos as f64 / 10000f64.powf(exponent);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// All learnable weights: patch projection, CLS token, positional
/// embeddings, encoder, encoder→decoder adapter, mask token, decoder
/// positional embeddings, decoder, output projection, and the head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub patch_proj: Linear,
    pub cls_token: Param,
    pub pos_embed: Param,
    pub encoder: Transformer,
    pub enc_to_dec: Linear,
    pub mask_token: Param,
    pub dec_pos_embed: Param,
    pub decoder: Transformer,
    pub out_proj: Linear,
    pub head: Linear,
}

pub struct EmbedCache {
    lin: LinearCache,
}

pub struct ClsCache {
    embed: EmbedCache,
    enc: TransformerCache,
    head: LinearCache,
}

pub struct ReconCache {
    embed: EmbedCache,
    enc: TransformerCache,
    adapter: LinearCache,
    dec: TransformerCache,
    out: LinearCache,
    plan: MaskPlan,
}

impl NetworkParams {
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = config.num_patches();
        let d = config.embed_dim;
        let dd = config.dec_embed_dim;
        let mut cls_token = Param::new(init_weight(1, d, &mut rng), false);
        cls_token.decay = false;
        let pos_embed = Param::new(init_weight(n + 1, d, &mut rng), false);
        let encoder = Transformer::new(d, config.depth, config.num_heads, d * config.mlp_ratio, &mut rng);
        let enc_to_dec = Linear::new(d, dd, &mut rng);
        let mask_token = Param::new(init_weight(1, dd, &mut rng), false);
        let mut dec_pos_embed = if config.dec_pos_learnable {
            Param::new(init_weight(n, dd, &mut rng), false)
        } else {
            Param::new(sinusoidal_embed(n, dd), false)
        };
        dec_pos_embed.trainable = config.dec_pos_learnable;
        let decoder = Transformer::new(
            dd,
            config.dec_depth,
            config.dec_num_heads,
            dd * config.mlp_ratio,
            &mut rng,
        );
        let out_proj = Linear::new(dd, config.patch_dim(), &mut rng);
        let head = Linear::new(d, config.num_classes, &mut rng);
        Ok(Self {
            config: config.clone(),
            patch_proj: Linear::new(config.patch_dim(), d, &mut rng),
            cls_token,
            pos_embed,
            encoder,
            enc_to_dec,
            mask_token,
            dec_pos_embed,
            decoder,
            out_proj,
            head,
        })
    }

    fn check_grid(&self, grid: &PatchGrid) -> Result<()> {
        if grid.row_width() != self.config.patch_dim() {
            return Err(Error::Shape(format!(
                "grid row width {} != P^2*C = {}",
                grid.row_width(),
                self.config.patch_dim()
            )));
        }
        if grid.num_patches() != self.config.num_patches() {
            return Err(Error::Shape(format!(
                "grid patch count {} != configured {}",
                grid.num_patches(),
                self.config.num_patches()
            )));
        }
        Ok(())
    }

    /// CLS token plus projected patches, each with its positional embedding.
    /// Row 0 is the CLS slot.
    pub fn embed_tokens(&self, grid: &PatchGrid) -> Result<(Array2<f64>, EmbedCache)> {
        self.check_grid(grid)?;
        let n = grid.num_patches();
        let d = self.config.embed_dim;
        let (z, lin) = self.patch_proj.forward(grid.rows.view());
        let mut tokens = Array2::zeros((n + 1, d));
        {
            let mut row0 = tokens.row_mut(0);
            row0.assign(&self.cls_token.value.row(0));
            row0 += &self.pos_embed.value.row(0);
        }
        for i in 0..n {
            let mut row = tokens.row_mut(i + 1);
            row.assign(&z.row(i));
            row += &self.pos_embed.value.row(i + 1);
        }
        Ok((tokens, EmbedCache { lin }))
    }

    fn embed_backward(&mut self, cache: &EmbedCache, d_tokens: &Array2<f64>) {
        self.cls_token
            .add_grad(d_tokens.slice(s![0..1, ..]));
        self.pos_embed.add_grad(d_tokens.view());
        self.patch_proj
            .backward(&cache.lin, d_tokens.slice(s![1.., ..]));
    }

    /// Applies the encoder stack to an arbitrary token sequence.
    pub fn encode(&self, tokens: &Array2<f64>) -> Result<Array2<f64>> {
        if tokens.ncols() != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "token width {} != embed_dim {}",
                tokens.ncols(),
                self.config.embed_dim
            )));
        }
        let (y, _) = self.encoder.forward(tokens.view(), &mut DropCtx::eval());
        Ok(y)
    }

    /// Zero-mask classification forward: full token sequence, CLS readout,
    /// linear head. Deterministic in eval mode.
    pub fn forward_cls(&self, grid: &PatchGrid) -> Result<Array1<f64>> {
        Ok(self.forward_cls_cached(grid, &mut DropCtx::eval())?.0)
    }

    pub fn forward_cls_cached(
        &self,
        grid: &PatchGrid,
        drop: &mut DropCtx,
    ) -> Result<(Array1<f64>, ClsCache)> {
        let (tokens, embed) = self.embed_tokens(grid)?;
        let (enc, enc_cache) = self.encoder.forward(tokens.view(), drop);
        let h_cls = enc.slice(s![0..1, ..]);
        let (logits, head_cache) = self.head.forward(h_cls);
        Ok((
            logits.row(0).to_owned(),
            ClsCache {
                embed,
                enc: enc_cache,
                head: head_cache,
            },
        ))
    }

    /// Accumulates gradients of a scalar loss given d(loss)/d(logits).
    pub fn backward_cls(&mut self, cache: &ClsCache, d_logits: &Array1<f64>) {
        let d_logits2 = d_logits.view().insert_axis(Axis(0));
        let d_hcls = self.head.backward(&cache.head, d_logits2);
        let n = self.config.num_patches();
        let mut d_enc = Array2::zeros((n + 1, self.config.embed_dim));
        d_enc.row_mut(0).assign(&d_hcls.row(0));
        let d_tokens = self.encoder.backward(&cache.enc, d_enc.view());
        self.embed_backward(&cache.embed, &d_tokens);
    }

    /// Masked reconstruction forward: embed, keep CLS plus visible tokens,
    /// encode, adapt to decoder width, unshuffle with the mask token,
    /// decode, project back to patch space.
    pub fn forward_recon(&self, grid: &PatchGrid, plan: &MaskPlan) -> Result<Array2<f64>> {
        Ok(self.forward_recon_cached(grid, plan, &mut DropCtx::eval())?.0)
    }

    pub fn forward_recon_cached(
        &self,
        grid: &PatchGrid,
        plan: &MaskPlan,
        drop: &mut DropCtx,
    ) -> Result<(Array2<f64>, ReconCache)> {
        if plan.num_patches() != grid.num_patches() {
            return Err(Error::Shape(format!(
                "mask plan over {} patches, grid has {}",
                plan.num_patches(),
                grid.num_patches()
            )));
        }
        let (tokens, embed) = self.embed_tokens(grid)?;
        let d = self.config.embed_dim;
        // CLS stays; patch tokens are filtered down to the visible set.
        let visible_patches = gather_visible(tokens.slice(s![1.., ..]), plan)?;
        let mut vis_tokens = Array2::zeros((plan.num_visible + 1, d));
        vis_tokens.row_mut(0).assign(&tokens.row(0));
        vis_tokens
            .slice_mut(s![1.., ..])
            .assign(&visible_patches);
        let (enc, enc_cache) = self.encoder.forward(vis_tokens.view(), drop);
        let (dec_in_vis, adapter) = self.enc_to_dec.forward(enc.slice(s![1.., ..]));
        let mut dec_in = unshuffle_tokens(dec_in_vis.view(), self.mask_token.value.row(0), plan)?;
        dec_in += &self.dec_pos_embed.value;
        let (dec_out, dec_cache) = self.decoder.forward(dec_in.view(), drop);
        let (xhat, out) = self.out_proj.forward(dec_out.view());
        Ok((
            xhat,
            ReconCache {
                embed,
                enc: enc_cache,
                adapter,
                dec: dec_cache,
                out,
                plan: plan.clone(),
            },
        ))
    }

    /// Accumulates gradients of a scalar loss given d(loss)/d(x̂).
    pub fn backward_recon(&mut self, cache: &ReconCache, d_xhat: &Array2<f64>) {
        let plan = &cache.plan;
        let d = self.config.embed_dim;
        let dd = self.config.dec_embed_dim;
        let d_dec_out = self.out_proj.backward(&cache.out, d_xhat.view());
        let d_dec_in = self.decoder.backward(&cache.dec, d_dec_out.view());
        self.dec_pos_embed.add_grad(d_dec_in.view());
        // Split the unshuffled gradient back into visible rows and the
        // shared mask token.
        let v = plan.num_visible;
        let mut d_vis = Array2::zeros((v, dd));
        for (j, &i) in plan.visible_idx().iter().enumerate() {
            d_vis.row_mut(j).assign(&d_dec_in.row(i));
        }
        let mut d_mask = Array2::zeros((1, dd));
        for &i in plan.masked_idx() {
            let mut row = d_mask.row_mut(0);
            row += &d_dec_in.row(i);
        }
        self.mask_token.add_grad(d_mask.view());
        let d_enc_vis = self.enc_to_dec.backward(&cache.adapter, d_vis.view());
        let mut d_enc = Array2::zeros((v + 1, d));
        d_enc.slice_mut(s![1.., ..]).assign(&d_enc_vis);
        let d_vis_tokens = self.encoder.backward(&cache.enc, d_enc.view());
        let n = self.config.num_patches();
        let mut d_tokens = Array2::zeros((n + 1, d));
        d_tokens.row_mut(0).assign(&d_vis_tokens.row(0));
        for (j, &i) in plan.visible_idx().iter().enumerate() {
            d_tokens.row_mut(i + 1).assign(&d_vis_tokens.row(j + 1));
        }
        self.embed_backward(&cache.embed, &d_tokens);
    }
}

impl ParamSet for NetworkParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.patch_proj.visit_params(f);
        f(&mut self.cls_token);
        f(&mut self.pos_embed);
        self.encoder.visit_params(f);
        self.enc_to_dec.visit_params(f);
        f(&mut self.mask_token);
        f(&mut self.dec_pos_embed);
        self.decoder.visit_params(f);
        self.out_proj.visit_params(f);
        self.head.visit_params(f);
    }
}
