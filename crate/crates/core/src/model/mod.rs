//! Transformer velocity field over canonically ordered point sequences.
//!
//! Per node the network sees `(x_t, x_0)` in the canonical frame. Sequence
//! positions are encoded with rotary embeddings on queries and keys; flow time
//! enters through adaptive layer norm (shift, scale and gate per sub-block,
//! all produced from a time embedding by a zero-initialized linear map).
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] names the slices.

mod checkpoint;
mod net;
mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CycflowError, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use net::{
    direct_loss_and_grad, forward, loss_and_grad, unit_directions, DirectSample, FlowSample,
    LossAndGrad,
};

pub const ROPE_BASE: f64 = 10_000.0;
/// Flow time is scaled by this before the sinusoidal embedding.
pub const TIME_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub t_dim: usize,
    pub seed: u64,
    /// Concatenate canonical `x_0` to each node's `x_t` input (4 channels
    /// instead of 2). The frame and the node order always come from `x_0`.
    pub x0_channels: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 4,
            heads: 8,
            ff_mult: 4,
            t_dim: 128,
            seed: 0,
            x0_channels: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CycflowError::Config(m));
        if self.dim == 0 || self.heads == 0 || self.layers == 0 || self.ff_mult == 0 {
            return err(format!("dimensions must be positive: {self:?}"));
        }
        if self.dim % self.heads != 0 {
            return err(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            ));
        }
        if self.head_dim() % 2 != 0 {
            return err(format!(
                "head width {} must be even for rotary embeddings",
                self.head_dim()
            ));
        }
        if self.t_dim == 0 || self.t_dim % 2 != 0 {
            return err(format!("t_dim must be even and positive, got {}", self.t_dim));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Input features per node.
    pub fn input_dim(&self) -> usize {
        if self.x0_channels {
            4
        } else {
            2
        }
    }

    pub fn ff_dim(&self) -> usize {
        self.dim * self.ff_mult
    }
}

/// Offset and `(rows, cols)` of one tensor inside the flat parameter vector.
/// Weights are stored `(fan_in, fan_out)`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub ada_w: Tensor,
    pub ada_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub time_w1: Tensor,
    pub time_b1: Tensor,
    pub time_w2: Tensor,
    pub time_b2: Tensor,
    pub in_w: Tensor,
    pub in_b: Tensor,
    pub blocks: Vec<BlockLayout>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, rows: usize, cols: usize) -> Tensor {
        let t = Tensor {
            offset: self.0,
            rows,
            cols,
        };
        self.0 += rows * cols;
        t
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        let f = cfg.ff_dim();
        let mut a = Alloc(0);
        let time_w1 = a.take(cfg.t_dim, d);
        let time_b1 = a.take(1, d);
        let time_w2 = a.take(d, d);
        let time_b2 = a.take(1, d);
        let in_w = a.take(cfg.input_dim(), d);
        let in_b = a.take(1, d);
        let blocks = (0..cfg.layers)
            .map(|_| BlockLayout {
                ada_w: a.take(d, 6 * d),
                ada_b: a.take(1, 6 * d),
                wq: a.take(d, d),
                bq: a.take(1, d),
                wk: a.take(d, d),
                bk: a.take(1, d),
                wv: a.take(d, d),
                bv: a.take(1, d),
                wo: a.take(d, d),
                bo: a.take(1, d),
                ff_w1: a.take(d, f),
                ff_b1: a.take(1, f),
                ff_w2: a.take(f, d),
                ff_b2: a.take(1, d),
            })
            .collect();
        let head_w = a.take(d, 2);
        let head_b = a.take(1, 2);
        Self {
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            in_w,
            in_b,
            blocks,
            head_w,
            head_b,
            total: a.0,
        }
    }

    /// Every tensor with its stable name, in storage order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("time.w1".to_string(), self.time_w1),
            ("time.b1".to_string(), self.time_b1),
            ("time.w2".to_string(), self.time_w2),
            ("time.b2".to_string(), self.time_b2),
            ("input.w".to_string(), self.in_w),
            ("input.b".to_string(), self.in_b),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, t) in [
                ("ada.w", b.ada_w),
                ("ada.b", b.ada_b),
                ("attn.wq", b.wq),
                ("attn.bq", b.bq),
                ("attn.wk", b.wk),
                ("attn.bk", b.bk),
                ("attn.wv", b.wv),
                ("attn.bv", b.bv),
                ("attn.wo", b.wo),
                ("attn.bo", b.bo),
                ("ff.w1", b.ff_w1),
                ("ff.b1", b.ff_b1),
                ("ff.w2", b.ff_w2),
                ("ff.b2", b.ff_b2),
            ] {
                out.push((format!("blocks.{l}.{name}"), t));
            }
        }
        out.push(("head.w".to_string(), self.head_w));
        out.push(("head.b".to_string(), self.head_b));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let data = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            data,
        })
    }

    pub fn get(&self, t: Tensor) -> &[f64] {
        &self.data[t.range()]
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fill every tensor, including the zero-initialized ones, with
    /// `U(−scale, scale)·√(3/fan_in)`. Used to probe gradients away from the
    /// trivial starting point.
    pub fn randomized(config: ModelConfig, scale: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in p.layout.named() {
            let a = scale * (3.0 / t.rows as f64).sqrt();
            for v in &mut p.data[t.range()] {
                *v = rng.random_range(-a..a);
            }
        }
        Ok(p)
    }
}

/// Deterministic initialization: uniform fan-in scaling for hidden weights,
/// zero biases, zero adaptive-norm maps (every block starts as the identity)
/// and a zero output head, so the initial field is identically zero.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(*cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = p.layout.clone();
    let mut fill = |t: Tensor, data: &mut [f64]| {
        let a = (3.0 / t.rows as f64).sqrt();
        for v in &mut data[t.range()] {
            *v = rng.random_range(-a..a);
        }
    };
    fill(layout.time_w1, &mut p.data);
    fill(layout.time_w2, &mut p.data);
    fill(layout.in_w, &mut p.data);
    for b in &layout.blocks {
        for t in [b.wq, b.wk, b.wv, b.wo, b.ff_w1, b.ff_w2] {
            fill(t, &mut p.data);
        }
    }
    Ok(p)
}

/// Sinusoidal features of `t`: cosines then sines at frequencies
/// `10000^(−k/half)`, applied to `TIME_SCALE·t`.
pub fn sinusoidal_features(t: f64, t_dim: usize) -> Vec<f64> {
    let half = t_dim / 2;
    let mut out = vec![0.0; t_dim];
    for k in 0..half {
        let freq = (-(ROPE_BASE.ln()) * k as f64 / half as f64).exp();
        let arg = TIME_SCALE * t * freq;
        out[k] = arg.cos();
        out[half + k] = arg.sin();
    }
    out
}

/// Conditioning vector `c` for flow time `t` (sinusoidal features through a
/// two-layer GELU MLP).
pub fn time_embedding(params: &ModelParams, t: f64) -> Vec<f64> {
    net::time_mlp(params, t).c
}
