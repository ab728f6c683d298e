//! Forward pass with cached activations, and its hand-written adjoint.

use crate::error::{CycflowError, Result};
use crate::geometry::Point;

use super::ops::{
    dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, rope_in_place,
    silu, silu_grad,
};
use super::{sinusoidal_features, BlockLayout, ModelParams, Tensor, ROPE_BASE};

pub(crate) struct TimeCache {
    feat: Vec<f64>,
    p1: Vec<f64>,
    a1: Vec<f64>,
    pub(crate) c: Vec<f64>,
}

pub(crate) fn time_mlp(params: &ModelParams, t: f64) -> TimeCache {
    let l = &params.layout;
    let d = params.config.dim;
    let td = params.config.t_dim;
    let feat = sinusoidal_features(t, td);
    let p1 = linear(&feat, 1, td, params.get(l.time_w1), params.get(l.time_b1), d);
    let a1: Vec<f64> = p1.iter().map(|&v| gelu(v)).collect();
    let c = linear(&a1, 1, d, params.get(l.time_w2), params.get(l.time_b2), d);
    TimeCache { feat, p1, a1, c }
}

struct BlockCache {
    modv: Vec<f64>,
    z1: Vec<f64>,
    inv1: Vec<f64>,
    m1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    a: Vec<f64>,
    z2: Vec<f64>,
    inv2: Vec<f64>,
    m2: Vec<f64>,
    f1: Vec<f64>,
    g: Vec<f64>,
    f2: Vec<f64>,
}

struct Cache {
    n: usize,
    time: TimeCache,
    c_act: Vec<f64>,
    input: Vec<f64>,
    blocks: Vec<BlockCache>,
    zf: Vec<f64>,
    invf: Vec<f64>,
    out: Vec<f64>,
}

/// `z·(1 + scale) + shift`, broadcast over rows.
fn modulate(z: &[f64], n: usize, d: usize, shift: &[f64], scale: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            out[i * d + j] = z[i * d + j] * (1.0 + scale[j]) + shift[j];
        }
    }
    out
}

fn forward_cached(params: &ModelParams, t: f64, input: Vec<f64>, n: usize) -> Cache {
    let cfg = &params.config;
    let l = &params.layout;
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let heads = cfg.heads;
    let fd = cfg.ff_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let time = time_mlp(params, t);
    let c_act: Vec<f64> = time.c.iter().map(|&v| silu(v)).collect();
    let mut h = linear(&input, n, params.config.input_dim(), params.get(l.in_w), params.get(l.in_b), d);

    let mut blocks = Vec::with_capacity(l.blocks.len());
    for b in &l.blocks {
        let modv = linear(&c_act, 1, d, params.get(b.ada_w), params.get(b.ada_b), 6 * d);
        let (shift1, scale1, gate1) = (&modv[0..d], &modv[d..2 * d], &modv[2 * d..3 * d]);
        let (shift2, scale2, gate2) = (&modv[3 * d..4 * d], &modv[4 * d..5 * d], &modv[5 * d..6 * d]);

        let (z1, inv1) = layer_norm(&h, n, d);
        let m1 = modulate(&z1, n, d, shift1, scale1);
        let mut q = linear(&m1, n, d, params.get(b.wq), params.get(b.bq), d);
        let mut k = linear(&m1, n, d, params.get(b.wk), params.get(b.bk), d);
        let v = linear(&m1, n, d, params.get(b.wv), params.get(b.bv), d);
        rope_in_place(&mut q, n, d, hd, ROPE_BASE, false);
        rope_in_place(&mut k, n, d, hd, ROPE_BASE, false);

        let mut probs = vec![0.0; heads * n * n];
        let mut attn = vec![0.0; n * d];
        for hh in 0..heads {
            let off = hh * hd;
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + hd];
                let row = &mut probs[(hh * n + i) * n..(hh * n + i + 1) * n];
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    let s = scale * dot(qi, &k[j * d + off..j * d + off + hd]);
                    row[j] = s;
                    mx = mx.max(s);
                }
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - mx).exp();
                    sum += *r;
                }
                for r in row.iter_mut() {
                    *r /= sum;
                }
                let out = &mut attn[i * d + off..i * d + off + hd];
                for j in 0..n {
                    let p = row[j];
                    for (o, &vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + hd]) {
                        *o += p * vv;
                    }
                }
            }
        }
        let a = linear(&attn, n, d, params.get(b.wo), params.get(b.bo), d);
        for i in 0..n {
            for j in 0..d {
                h[i * d + j] += gate1[j] * a[i * d + j];
            }
        }

        let (z2, inv2) = layer_norm(&h, n, d);
        let m2 = modulate(&z2, n, d, shift2, scale2);
        let f1 = linear(&m2, n, d, params.get(b.ff_w1), params.get(b.ff_b1), fd);
        let g: Vec<f64> = f1.iter().map(|&v| gelu(v)).collect();
        let f2 = linear(&g, n, fd, params.get(b.ff_w2), params.get(b.ff_b2), d);
        for i in 0..n {
            for j in 0..d {
                h[i * d + j] += gate2[j] * f2[i * d + j];
            }
        }
        blocks.push(BlockCache {
            modv,
            z1,
            inv1,
            m1,
            q,
            k,
            v,
            probs,
            attn,
            a,
            z2,
            inv2,
            m2,
            f1,
            g,
            f2,
        });
    }

    let (zf, invf) = layer_norm(&h, n, d);
    let out = linear(&zf, n, d, params.get(l.head_w), params.get(l.head_b), 2);
    Cache {
        n,
        time,
        c_act,
        input,
        blocks,
        zf,
        invf,
        out,
    }
}

fn seg<'a>(grad: &'a mut [f64], t: Tensor) -> &'a mut [f64] {
    &mut grad[t.range()]
}

/// Accumulate `∂loss/∂θ` into `grad` given `∂loss/∂out`.
fn backward(params: &ModelParams, cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
    let cfg = &params.config;
    let l = &params.layout;
    let n = cache.n;
    let d = cfg.dim;
    let hd = cfg.head_dim();
    let heads = cfg.heads;
    let fd = cfg.ff_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut dz = vec![0.0; n * d];
    {
        let w = params.get(l.head_w);
        let mut dw = vec![0.0; l.head_w.len()];
        let mut db = vec![0.0; 2];
        let dx = linear_backward(&cache.zf, n, d, w, 2, d_out, &mut dw, &mut db, true)
            .expect("requested");
        add_into(seg(grad, l.head_w), &dw);
        add_into(seg(grad, l.head_b), &db);
        dz.copy_from_slice(&dx);
    }
    let mut dh = layer_norm_backward(&cache.zf, &cache.invf, &dz, n, d);
    let mut dc_act = vec![0.0; d];

    for (b, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
        dh = block_backward(params, b, bc, &cache.c_act, dh, &mut dc_act, grad, n, d, hd, heads, fd, scale);
    }

    // input projection; the inputs themselves are data
    {
        let mut dw = vec![0.0; l.in_w.len()];
        let mut db = vec![0.0; d];
        linear_backward(&cache.input, n, params.config.input_dim(), params.get(l.in_w), d, &dh, &mut dw, &mut db, false);
        add_into(seg(grad, l.in_w), &dw);
        add_into(seg(grad, l.in_b), &db);
    }

    // time MLP
    let dc: Vec<f64> = dc_act
        .iter()
        .zip(&cache.time.c)
        .map(|(g, &c)| g * silu_grad(c))
        .collect();
    let tc = &cache.time;
    let mut dw2 = vec![0.0; l.time_w2.len()];
    let mut db2 = vec![0.0; d];
    let da1 = linear_backward(&tc.a1, 1, d, params.get(l.time_w2), d, &dc, &mut dw2, &mut db2, true)
        .expect("requested");
    add_into(seg(grad, l.time_w2), &dw2);
    add_into(seg(grad, l.time_b2), &db2);
    let dp1: Vec<f64> = da1.iter().zip(&tc.p1).map(|(g, &p)| g * gelu_grad(p)).collect();
    let mut dw1 = vec![0.0; l.time_w1.len()];
    let mut db1 = vec![0.0; d];
    linear_backward(&tc.feat, 1, cfg.t_dim, params.get(l.time_w1), d, &dp1, &mut dw1, &mut db1, false);
    add_into(seg(grad, l.time_w1), &dw1);
    add_into(seg(grad, l.time_b1), &db1);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Backward through one linear layer, accumulating into the parameter grads.
#[allow(clippy::too_many_arguments)]
fn linear_grad(
    params: &ModelParams,
    grad: &mut [f64],
    x: &[f64],
    n: usize,
    k: usize,
    w: Tensor,
    b: Tensor,
    m: usize,
    dy: &[f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    // weights and bias are adjacent but distinct ranges; split borrows
    let (lo, hi) = grad.split_at_mut(b.offset);
    let dw = &mut lo[w.range()];
    let db = &mut hi[..b.len()];
    debug_assert_eq!(w.offset + w.len(), b.offset);
    linear_backward(x, n, k, params.get(w), m, dy, dw, db, want_dx)
}

#[allow(clippy::too_many_arguments)]
fn block_backward(
    params: &ModelParams,
    b: &BlockLayout,
    bc: &BlockCache,
    c_act: &[f64],
    dh_out: Vec<f64>,
    dc_act: &mut [f64],
    grad: &mut [f64],
    n: usize,
    d: usize,
    hd: usize,
    heads: usize,
    fd: usize,
    scale: f64,
) -> Vec<f64> {
    let modv = &bc.modv;
    let scale1 = &modv[d..2 * d];
    let gate1 = &modv[2 * d..3 * d];
    let scale2 = &modv[4 * d..5 * d];
    let gate2 = &modv[5 * d..6 * d];
    let mut dmod = vec![0.0; 6 * d];

    // feedforward residual: h_out = h_mid + gate2 ⊙ f2
    let mut df2 = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let g = dh_out[i * d + j];
            dmod[5 * d + j] += g * bc.f2[i * d + j];
            df2[i * d + j] = g * gate2[j];
        }
    }
    let dg = linear_grad(params, grad, &bc.g, n, fd, b.ff_w2, b.ff_b2, d, &df2, true).expect("dx");
    let df1: Vec<f64> = dg.iter().zip(&bc.f1).map(|(g, &x)| g * gelu_grad(x)).collect();
    let dm2 = linear_grad(params, grad, &bc.m2, n, d, b.ff_w1, b.ff_b1, fd, &df1, true).expect("dx");
    let mut dz2 = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let g = dm2[i * d + j];
            dmod[3 * d + j] += g;
            dmod[4 * d + j] += g * bc.z2[i * d + j];
            dz2[i * d + j] = g * (1.0 + scale2[j]);
        }
    }
    let mut dh_mid = layer_norm_backward(&bc.z2, &bc.inv2, &dz2, n, d);
    for (a, g) in dh_mid.iter_mut().zip(&dh_out) {
        *a += g;
    }

    // attention residual: h_mid = h_in + gate1 ⊙ a
    let mut da = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let g = dh_mid[i * d + j];
            dmod[2 * d + j] += g * bc.a[i * d + j];
            da[i * d + j] = g * gate1[j];
        }
    }
    let dattn = linear_grad(params, grad, &bc.attn, n, d, b.wo, b.bo, d, &da, true).expect("dx");

    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut dp = vec![0.0; n];
    for hh in 0..heads {
        let off = hh * hd;
        for i in 0..n {
            let probs = &bc.probs[(hh * n + i) * n..(hh * n + i + 1) * n];
            let dout = &dattn[i * d + off..i * d + off + hd];
            for j in 0..n {
                dp[j] = dot(dout, &bc.v[j * d + off..j * d + off + hd]);
                let p = probs[j];
                for (o, &g) in dv[j * d + off..j * d + off + hd].iter_mut().zip(dout) {
                    *o += p * g;
                }
            }
            let pdp: f64 = probs.iter().zip(&dp).map(|(p, g)| p * g).sum();
            for j in 0..n {
                let ds = probs[j] * (dp[j] - pdp) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..hd {
                    dq[i * d + off + t] += ds * bc.k[j * d + off + t];
                    dk[j * d + off + t] += ds * bc.q[i * d + off + t];
                }
            }
        }
    }
    rope_in_place(&mut dq, n, d, hd, ROPE_BASE, true);
    rope_in_place(&mut dk, n, d, hd, ROPE_BASE, true);

    let mut dm1 = linear_grad(params, grad, &bc.m1, n, d, b.wq, b.bq, d, &dq, true).expect("dx");
    let dmk = linear_grad(params, grad, &bc.m1, n, d, b.wk, b.bk, d, &dk, true).expect("dx");
    let dmv = linear_grad(params, grad, &bc.m1, n, d, b.wv, b.bv, d, &dv, true).expect("dx");
    for ((a, k), v) in dm1.iter_mut().zip(&dmk).zip(&dmv) {
        *a += k + v;
    }
    let mut dz1 = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let g = dm1[i * d + j];
            dmod[j] += g;
            dmod[d + j] += g * bc.z1[i * d + j];
            dz1[i * d + j] = g * (1.0 + scale1[j]);
        }
    }
    let mut dh_in = layer_norm_backward(&bc.z1, &bc.inv1, &dz1, n, d);
    for (a, g) in dh_in.iter_mut().zip(&dh_mid) {
        *a += g;
    }

    // modulation map from the time conditioning
    let dca = linear_grad(params, grad, c_act, 1, d, b.ada_w, b.ada_b, 6 * d, &dmod, true).expect("dx");
    add_into(dc_act, &dca);
    dh_in
}

fn check_finite(cloud: &[Point], what: &str) -> Result<()> {
    if cloud.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(CycflowError::Numerical(format!("non-finite value in {what}")));
    }
    Ok(())
}

fn features(params: &ModelParams, xt: &[Point], x0: &[Point]) -> Vec<f64> {
    let with_x0 = params.config.x0_channels;
    let mut f = Vec::with_capacity(xt.len() * params.config.input_dim());
    for (a, b) in xt.iter().zip(x0) {
        f.extend_from_slice(a);
        if with_x0 {
            f.extend_from_slice(b);
        }
    }
    f
}

fn to_points(out: &[f64]) -> Vec<Point> {
    out.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Velocity in the canonical frame for `x_t` given `x_0` (both canonical).
pub fn forward(params: &ModelParams, t: f64, xt_can: &[Point], x0_can: &[Point]) -> Result<Vec<Point>> {
    if xt_can.len() != x0_can.len() {
        return Err(CycflowError::SizeMismatch {
            expected: x0_can.len(),
            got: xt_can.len(),
        });
    }
    if !t.is_finite() {
        return Err(CycflowError::Numerical(format!("flow time {t}")));
    }
    check_finite(xt_can, "x_t")?;
    check_finite(x0_can, "x_0")?;
    let n = xt_can.len();
    let cache = forward_cached(params, t, features(params, xt_can, x0_can), n);
    let v = to_points(&cache.out);
    check_finite(&v, "model output")?;
    Ok(v)
}

/// One flow-matching regression sample, all clouds in the canonical frame.
#[derive(Debug, Clone, Copy)]
pub struct FlowSample<'a> {
    pub t: f64,
    pub xt: &'a [Point],
    pub x0: &'a [Point],
    /// Target velocity `x1 − x0`.
    pub target: &'a [Point],
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Mean over samples of the per-node mean squared velocity error, and its
/// exact gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[FlowSample<'_>]) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(CycflowError::InvalidSize("empty batch".into()));
    }
    let mut grad = vec![0.0; params.num_params()];
    let mut loss = 0.0;
    let bsz = batch.len() as f64;
    for (k, s) in batch.iter().enumerate() {
        let n = s.x0.len();
        if s.xt.len() != n || s.target.len() != n {
            return Err(CycflowError::SizeMismatch {
                expected: n,
                got: s.xt.len().min(s.target.len()),
            });
        }
        let cache = forward_cached(params, s.t, features(params, s.xt, s.x0), n);
        let mut d_out = vec![0.0; 2 * n];
        let mut l = 0.0;
        for i in 0..n {
            for c in 0..2 {
                let r = cache.out[2 * i + c] - s.target[i][c];
                l += r * r;
                d_out[2 * i + c] = 2.0 * r / (n as f64 * bsz);
            }
        }
        let l = l / n as f64;
        if !l.is_finite() {
            return Err(CycflowError::Numerical(format!(
                "non-finite loss on batch item {k} (n = {n}, t = {})",
                s.t
            )));
        }
        loss += l / bsz;
        backward(params, &cache, &d_out, &mut grad);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CycflowError::Numerical(format!(
            "non-finite gradient over a batch of {} (loss {loss})",
            batch.len()
        )));
    }
    Ok(LossAndGrad { loss, grad })
}

/// Sample for the single-shot angle regression baseline.
#[derive(Debug, Clone, Copy)]
pub struct DirectSample<'a> {
    pub x0: &'a [Point],
    /// Unit direction of each node's circle target.
    pub target_dir: &'a [Point],
}

const DIRECTION_EPS: f64 = 1e-9;

fn normalize_rows(out: &[f64]) -> Vec<Point> {
    out.chunks_exact(2)
        .map(|c| {
            let s = (c[0] * c[0] + c[1] * c[1] + DIRECTION_EPS).sqrt();
            [c[0] / s, c[1] / s]
        })
        .collect()
}

/// Predicted (near-)unit direction per node: the backbone at `t = 0` on `(x0, x0)`.
pub fn unit_directions(params: &ModelParams, x0_can: &[Point]) -> Result<Vec<Point>> {
    check_finite(x0_can, "x_0")?;
    let cache = forward_cached(params, 0.0, features(params, x0_can, x0_can), x0_can.len());
    let p = normalize_rows(&cache.out);
    check_finite(&p, "predicted directions")?;
    Ok(p)
}

/// Mean squared chordal distance between predicted and target unit directions.
pub fn direct_loss_and_grad(params: &ModelParams, batch: &[DirectSample<'_>]) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(CycflowError::InvalidSize("empty batch".into()));
    }
    let mut grad = vec![0.0; params.num_params()];
    let mut loss = 0.0;
    let bsz = batch.len() as f64;
    for s in batch {
        let n = s.x0.len();
        let cache = forward_cached(params, 0.0, features(params, s.x0, s.x0), n);
        let mut d_out = vec![0.0; 2 * n];
        let mut l = 0.0;
        for i in 0..n {
            let o = [cache.out[2 * i], cache.out[2 * i + 1]];
            let norm = (o[0] * o[0] + o[1] * o[1] + DIRECTION_EPS).sqrt();
            let p = [o[0] / norm, o[1] / norm];
            let r = [p[0] - s.target_dir[i][0], p[1] - s.target_dir[i][1]];
            l += r[0] * r[0] + r[1] * r[1];
            let dp = [2.0 * r[0] / (n as f64 * bsz), 2.0 * r[1] / (n as f64 * bsz)];
            // ∂p/∂o = I/s − o oᵀ/s³
            let od = o[0] * dp[0] + o[1] * dp[1];
            let s3 = norm * norm * norm;
            d_out[2 * i] = dp[0] / norm - o[0] * od / s3;
            d_out[2 * i + 1] = dp[1] / norm - o[1] * od / s3;
        }
        loss += l / n as f64 / bsz;
        backward(params, &cache, &d_out, &mut grad);
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(CycflowError::Numerical(format!(
            "non-finite loss or gradient over a batch of {}",
            batch.len()
        )));
    }
    Ok(LossAndGrad { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(dim: usize, layers: usize) -> ModelConfig {
        ModelConfig {
            dim,
            layers,
            heads: 2,
            ff_mult: 2,
            t_dim: 8,
            seed: 5,
            x0_channels: false,
        }
    }

    fn cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect()
    }

    #[test]
    fn forward_shape_and_zero_head() {
        let c = ModelConfig {
            dim: 64,
            layers: 2,
            heads: 4,
            ff_mult: 4,
            t_dim: 32,
            seed: 0,
            x0_channels: true,
        };
        let p = init_params(&c).unwrap();
        let x = cloud(16, 1);
        let v = forward(&p, 0.3, &x, &x).unwrap();
        assert_eq!(v.len(), 16);
        assert!(v.iter().all(|r| r[0] == 0.0 && r[1] == 0.0));
    }

    #[test]
    fn forward_is_position_sensitive() {
        let p = ModelParams::randomized(cfg(16, 1), 1.0, 3).unwrap();
        let x = cloud(6, 2);
        let v = forward(&p, 0.4, &x, &x).unwrap();
        // swap two rows: if the network were permutation-equivariant the
        // outputs would swap the same way
        let mut y = x.clone();
        y.swap(0, 4);
        let w = forward(&p, 0.4, &y, &y).unwrap();
        let diff = (w[4][0] - v[0][0]).abs() + (w[4][1] - v[0][1]).abs();
        assert!(diff > 1e-6, "RoPE should make outputs depend on position");
    }

    #[test]
    fn x0_only_enters_through_its_channels() {
        let p = ModelParams::randomized(cfg(16, 1), 0.5, 2).unwrap();
        let (x, a, b) = (cloud(6, 1), cloud(6, 2), cloud(6, 3));
        assert_eq!(forward(&p, 0.4, &x, &a).unwrap(), forward(&p, 0.4, &x, &b).unwrap());
        let q = ModelParams::randomized(ModelConfig { x0_channels: true, ..cfg(16, 1) }, 0.5, 2).unwrap();
        assert_ne!(forward(&q, 0.4, &x, &a).unwrap(), forward(&q, 0.4, &x, &b).unwrap());
    }

    #[test]
    fn forward_rejects_nan() {
        let p = init_params(&cfg(16, 1)).unwrap();
        let mut x = cloud(5, 0);
        x[2][1] = f64::NAN;
        assert!(matches!(forward(&p, 0.1, &x, &x), Err(CycflowError::Numerical(_))));
    }

    #[test]
    fn zero_init_loss_is_mean_displacement() {
        let p = init_params(&cfg(16, 1)).unwrap();
        let x0 = cloud(7, 1);
        let u = cloud(7, 2);
        let x0b = cloud(5, 3);
        let ub = cloud(5, 4);
        let batch = [
            FlowSample { t: 0.2, xt: &x0, x0: &x0, target: &u },
            FlowSample { t: 0.9, xt: &x0b, x0: &x0b, target: &ub },
        ];
        let lg = loss_and_grad(&p, &batch).unwrap();
        let mean = |u: &[Point]| u.iter().map(|r| r[0] * r[0] + r[1] * r[1]).sum::<f64>() / u.len() as f64;
        let expected = 0.5 * (mean(&u) + mean(&ub));
        assert!((lg.loss - expected).abs() < 1e-14);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = ModelParams::randomized(cfg(16, 1), 0.5, 1).unwrap();
        let x = cloud(6, 9);
        let v = forward(&p, 0.5, &x, &x).unwrap();
        let lg = loss_and_grad(&p, &[FlowSample { t: 0.5, xt: &x, x0: &x, target: &v }]).unwrap();
        assert!(lg.loss < 1e-28);
        assert!(lg.grad.iter().all(|g| g.abs() < 1e-12));
    }

    fn fd_check(
        params: &ModelParams,
        loss: impl Fn(&ModelParams) -> f64,
        grad: &[f64],
        per_tensor: usize,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-4;
        let mut checked = 0;
        for (name, t) in params.layout.named() {
            for _ in 0..per_tensor.min(t.len()) {
                let idx = t.offset + rng.random_range(0..t.len());
                let mut p = params.clone();
                p.data[idx] += h;
                let up = loss(&p);
                p.data[idx] -= 2.0 * h;
                let down = loss(&p);
                let fd = (up - down) / (2.0 * h);
                let an = grad[idx];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                let rel = (fd - an).abs() / denom;
                assert!(rel < 1e-4, "{name}[{idx}]: analytic {an:e} vs fd {fd:e} (rel {rel:e})");
                checked += 1;
            }
        }
        assert!(checked >= 50);
    }

    #[test]
    fn flow_gradient_matches_finite_differences() {
        let p = ModelParams::randomized(cfg(16, 1), 0.7, 11).unwrap();
        let a0 = cloud(6, 1);
        let at = cloud(6, 2);
        let au = cloud(6, 3);
        let b0 = cloud(4, 4);
        let bt = cloud(4, 5);
        let bu = cloud(4, 6);
        let batch = [
            FlowSample { t: 0.31, xt: &at, x0: &a0, target: &au },
            FlowSample { t: 0.77, xt: &bt, x0: &b0, target: &bu },
        ];
        let lg = loss_and_grad(&p, &batch).unwrap();
        fd_check(&p, |q| loss_and_grad(q, &batch).unwrap().loss, &lg.grad, 12, 1);
    }

    #[test]
    fn flow_gradient_with_x0_channels() {
        let c = ModelConfig { x0_channels: true, ..cfg(16, 1) };
        let p = ModelParams::randomized(c, 0.7, 13).unwrap();
        let (a0, at, au) = (cloud(5, 7), cloud(5, 8), cloud(5, 9));
        let batch = [FlowSample { t: 0.44, xt: &at, x0: &a0, target: &au }];
        let lg = loss_and_grad(&p, &batch).unwrap();
        fd_check(&p, |q| loss_and_grad(q, &batch).unwrap().loss, &lg.grad, 12, 3);
    }

    #[test]
    fn direct_gradient_matches_finite_differences() {
        let p = ModelParams::randomized(cfg(16, 1), 0.7, 12).unwrap();
        let x0 = cloud(6, 1);
        let dirs: Vec<Point> = cloud(6, 2)
            .iter()
            .map(|r| {
                let s = r[0].hypot(r[1]);
                [r[0] / s, r[1] / s]
            })
            .collect();
        let batch = [DirectSample { x0: &x0, target_dir: &dirs }];
        let lg = direct_loss_and_grad(&p, &batch).unwrap();
        fd_check(&p, |q| direct_loss_and_grad(q, &batch).unwrap().loss, &lg.grad, 8, 2);
    }

    #[test]
    fn zero_init_directions_are_degenerate() {
        let p = init_params(&cfg(16, 1)).unwrap();
        let x = cloud(5, 1);
        let d = unit_directions(&p, &x).unwrap();
        assert!(d.iter().all(|r| r[0] == 0.0 && r[1] == 0.0));
        let target = vec![[1.0, 0.0]; 5];
        let lg = direct_loss_and_grad(&p, &[DirectSample { x0: &x, target_dir: &target }]).unwrap();
        assert!((lg.loss - 1.0).abs() < 1e-12);
    }
}
