//! Transformer building blocks with forward caches and analytic backward
//! passes. Each `forward` returns the output plus a cache; `backward`
//! consumes the cache, accumulates parameter gradients in place, and
//! returns the gradient with respect to the layer input.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// One parameter tensor plus its accumulated gradient.
///
/// Biases and normalization/embedding parameters are flagged `decay: false`
/// so the optimizer can skip weight decay on them. A parameter whose grad
/// is `None` after a backward pass took no part in the step and must be
/// left untouched by the optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub value: Array2<f64>,
    #[serde(skip)]
    pub grad: Option<Array2<f64>>,
    pub decay: bool,
    #[serde(default = "default_true")]
    pub trainable: bool,
}

fn default_true() -> bool {
    true
}

impl Param {
    pub fn new(value: Array2<f64>, decay: bool) -> Self {
        Self {
            value,
            grad: None,
            decay,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn add_grad(&mut self, g: ArrayView2<f64>) {
        match &mut self.grad {
            Some(acc) => *acc += &g,
            None => self.grad = Some(g.to_owned()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }
}

/// Visitor over every parameter in a fixed, stable order. The optimizer
/// and the gradient checker both rely on that order.
pub trait ParamSet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_| n += 1);
        n
    }

    fn all_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |p| ok &= p.is_finite());
        ok
    }
}

/// Dropout context for train-mode forwards. `DropCtx::eval()` disables
/// all stochastic layers, which is the default configuration.
pub struct DropCtx {
    pub p: f64,
    pub rng: Option<ChaCha12Rng>,
}

impl DropCtx {
    pub fn eval() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: ChaCha12Rng) -> Self {
        Self { p, rng: Some(rng) }
    }

    fn active(&self) -> bool {
        self.p > 0.0 && self.rng.is_some()
    }

    /// Draws an inverted-dropout mask (kept entries scaled by 1/(1-p)),
    /// or `None` when dropout is off.
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        if !self.active() {
            return None;
        }
        let p = self.p;
        let rng = self.rng.as_mut().unwrap();
        let scale = 1.0 / (1.0 - p);
        Some(Array2::from_shape_fn((rows, cols), |_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                scale
            }
        }))
    }
}

fn trunc_normal(rows: usize, cols: usize, std: f64, rng: &mut ChaCha12Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        loop {
            // Box-Muller, clipped at two standard deviations.
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    })
}

pub fn init_weight(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    trunc_normal(rows, cols, 0.02, rng)
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

pub struct LinearCache {
    input: Array2<f64>,
}

impl Linear {
    pub fn new(dim_in: usize, dim_out: usize, rng: &mut ChaCha12Rng) -> Self {
        Self {
            w: Param::new(init_weight(dim_in, dim_out, rng), true),
            b: Param::new(Array2::zeros((1, dim_out)), false),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LinearCache) {
        let y = x.dot(&self.w.value) + &self.b.value;
        (
            y,
            LinearCache {
                input: x.to_owned(),
            },
        )
    }

    pub fn backward(&mut self, cache: &LinearCache, gy: ArrayView2<f64>) -> Array2<f64> {
        self.w.add_grad(cache.input.t().dot(&gy).view());
        let gb = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.b.add_grad(gb.view());
        gy.dot(&self.w.value.t())
    }
}

impl ParamSet for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(Array2::ones((1, dim)), false),
            beta: Param::new(Array2::zeros((1, dim)), false),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv_std = Array1::zeros(x.nrows());
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[i] = istd;
            for (j, v) in row.iter().enumerate() {
                xhat[(i, j)] = (v - mean) * istd;
            }
        }
        let y = &xhat * &self.gamma.value + &self.beta.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, gy: ArrayView2<f64>) -> Array2<f64> {
        let d = gy.ncols() as f64;
        self.gamma
            .add_grad((&gy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0)).view());
        self.beta
            .add_grad(gy.sum_axis(Axis(0)).insert_axis(Axis(0)).view());
        let gamma = self.gamma.value.row(0);
        let mut gx = Array2::zeros(gy.raw_dim());
        for i in 0..gy.nrows() {
            let xhat = cache.xhat.row(i);
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..gy.ncols() {
                let dxhat = gy[(i, j)] * gamma[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat[j];
            }
            let istd = cache.inv_std[i];
            for j in 0..gy.ncols() {
                let dxhat = gy[(i, j)] * gamma[j];
                gx[(i, j)] = istd * (dxhat - (sum_dxhat + xhat[j] * sum_dxhat_xhat) / d);
            }
        }
        gx
    }
}

impl ParamSet for LayerNorm {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

// ---------------------------------------------------------------------------
// Multi-head self-attention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionCache {
    qkv_cache: LinearCache,
    proj_cache: LinearCache,
    qkv_out: Array2<f64>,
    attn: Vec<Array2<f64>>,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha12Rng) -> Self {
        assert!(dim.is_multiple_of(heads), "dim {dim} not divisible by heads {heads}");
        Self {
            qkv: Linear::new(dim, 3 * dim, rng),
            proj: Linear::new(dim, dim, rng),
            heads,
            dim,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, AttentionCache) {
        let t = x.nrows();
        let d = self.dim;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qkv_out, qkv_cache) = self.qkv.forward(x);
        let mut concat = Array2::zeros((t, d));
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv_out.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv_out.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv_out.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut scores = q.dot(&k.t());
            scores *= scale;
            // row-wise softmax with max subtraction
            for mut row in scores.axis_iter_mut(Axis(0)) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            let o = scores.dot(&v);
            concat.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&o);
            attn.push(scores);
        }
        let (y, proj_cache) = self.proj.forward(concat.view());
        (
            y,
            AttentionCache {
                qkv_cache,
                proj_cache,
                qkv_out,
                attn,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache, gy: ArrayView2<f64>) -> Array2<f64> {
        let t = gy.nrows();
        let d = self.dim;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let d_concat = self.proj.backward(&cache.proj_cache, gy);
        let mut d_qkv_out = Array2::zeros((t, 3 * d));
        for h in 0..self.heads {
            let q = cache.qkv_out.slice(s![.., h * dh..(h + 1) * dh]);
            let k = cache.qkv_out.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = cache
                .qkv_out
                .slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let a = &cache.attn[h];
            let doh = d_concat.slice(s![.., h * dh..(h + 1) * dh]);
            let dv = a.t().dot(&doh);
            let da = doh.dot(&v.t());
            // softmax backward, row-wise
            let mut ds = Array2::zeros((t, t));
            for i in 0..t {
                let dot: f64 = (0..t).map(|j| da[(i, j)] * a[(i, j)]).sum();
                for j in 0..t {
                    ds[(i, j)] = a[(i, j)] * (da[(i, j)] - dot) * scale;
                }
            }
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            d_qkv_out.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dq);
            d_qkv_out
                .slice_mut(s![.., d + h * dh..d + (h + 1) * dh])
                .assign(&dk);
            d_qkv_out
                .slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh])
                .assign(&dv);
        }
        self.qkv.backward(&cache.qkv_cache, d_qkv_out.view())
    }
}

impl ParamSet for MultiHeadAttention {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.qkv.visit_params(f);
        self.proj.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// Feed-forward (GELU MLP)
// ---------------------------------------------------------------------------

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct FeedForwardCache {
    c1: LinearCache,
    pre_act: Array2<f64>,
    c2: LinearCache,
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        Self {
            fc1: Linear::new(dim, hidden, rng),
            fc2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let (pre_act, c1) = self.fc1.forward(x);
        let act = pre_act.mapv(gelu);
        let (y, c2) = self.fc2.forward(act.view());
        (y, FeedForwardCache { c1, pre_act, c2 })
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, gy: ArrayView2<f64>) -> Array2<f64> {
        let d_act = self.fc2.backward(&cache.c2, gy);
        let d_pre = &d_act * &cache.pre_act.mapv(gelu_grad);
        self.fc1.backward(&cache.c1, d_pre.view())
    }
}

impl ParamSet for FeedForward {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
}

// ---------------------------------------------------------------------------
// Transformer block (pre-LN) and stack
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

pub struct BlockCache {
    cl1: LayerNormCache,
    ca: AttentionCache,
    attn_mask: Option<Array2<f64>>,
    cl2: LayerNormCache,
    cf: FeedForwardCache,
    ffn_mask: Option<Array2<f64>>,
}

impl Block {
    pub fn new(dim: usize, heads: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            ffn: FeedForward::new(dim, hidden, rng),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>, drop: &mut DropCtx) -> (Array2<f64>, BlockCache) {
        let (n1, cl1) = self.ln1.forward(x);
        let (mut a, ca) = self.attn.forward(n1.view());
        let attn_mask = drop.mask(a.nrows(), a.ncols());
        if let Some(m) = &attn_mask {
            a *= m;
        }
        let h = &x + &a;
        let (n2, cl2) = self.ln2.forward(h.view());
        let (mut fo, cf) = self.ffn.forward(n2.view());
        let ffn_mask = drop.mask(fo.nrows(), fo.ncols());
        if let Some(m) = &ffn_mask {
            fo *= m;
        }
        let y = &h + &fo;
        (
            y,
            BlockCache {
                cl1,
                ca,
                attn_mask,
                cl2,
                cf,
                ffn_mask,
            },
        )
    }

    pub fn backward(&mut self, cache: &BlockCache, gy: ArrayView2<f64>) -> Array2<f64> {
        let mut d_fo = gy.to_owned();
        if let Some(m) = &cache.ffn_mask {
            d_fo *= m;
        }
        let d_n2 = self.ffn.backward(&cache.cf, d_fo.view());
        let dh = &gy + &self.ln2.backward(&cache.cl2, d_n2.view());
        let mut d_a = dh.clone();
        if let Some(m) = &cache.attn_mask {
            d_a *= m;
        }
        let d_n1 = self.attn.backward(&cache.ca, d_a.view());
        &dh + &self.ln1.backward(&cache.cl1, d_n1.view())
    }
}

impl ParamSet for Block {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.ln1.visit_params(f);
        self.attn.visit_params(f);
        self.ln2.visit_params(f);
        self.ffn.visit_params(f);
    }
}

/// A stack of pre-LN blocks followed by a final LayerNorm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transformer {
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

pub struct TransformerCache {
    blocks: Vec<BlockCache>,
    norm: Option<LayerNormCache>,
}

impl Transformer {
    pub fn new(dim: usize, depth: usize, heads: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        Self {
            blocks: (0..depth).map(|_| Block::new(dim, heads, hidden, rng)).collect(),
            norm: LayerNorm::new(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>, drop: &mut DropCtx) -> (Array2<f64>, TransformerCache) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.to_owned();
        for block in &self.blocks {
            let (next, cache) = block.forward(h.view(), drop);
            caches.push(cache);
            h = next;
        }
        // An empty stack is the identity; the final norm only applies after
        // at least one block.
        if self.blocks.is_empty() {
            return (
                h,
                TransformerCache {
                    blocks: caches,
                    norm: None,
                },
            );
        }
        let (y, norm_cache) = self.norm.forward(h.view());
        (
            y,
            TransformerCache {
                blocks: caches,
                norm: Some(norm_cache),
            },
        )
    }

    pub fn backward(&mut self, cache: &TransformerCache, gy: ArrayView2<f64>) -> Array2<f64> {
        let mut g = match &cache.norm {
            Some(nc) => self.norm.backward(nc, gy),
            None => gy.to_owned(),
        };
        for (block, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            g = block.backward(bc, g.view());
        }
        g
    }
}

impl ParamSet for Transformer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            b.visit_params(f);
        }
        self.norm.visit_params(f);
    }
}
