//! Dense row-major kernels and their adjoints.

pub(crate) const LN_EPS: f64 = 1e-6;

/// `out[n×m] = x[n×k] · w[k×m] + b[m]`.
pub(crate) fn linear(x: &[f64], n: usize, k: usize, w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(b.len(), m);
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (kk, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[kk * m..(kk + 1) * m];
            for (o, &wv) in row.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Adjoint of [`linear`]: accumulates `dw += xᵀ·dy`, `db += Σ_rows dy` and,
/// when requested, returns `dx = dy·wᵀ`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    n: usize,
    k: usize,
    w: &[f64],
    m: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        for (kk, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let dwr = &mut dw[kk * m..(kk + 1) * m];
            for (d, &g) in dwr.iter_mut().zip(dyr) {
                *d += xv * g;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![0.0; n * k];
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        for kk in 0..k {
            let wr = &w[kk * m..(kk + 1) * m];
            dx[i * k + kk] = dot(wr, dyr);
        }
    }
    Some(dx)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise layer norm without affine parameters. Returns normalized rows and
/// each row's `1/σ`.
pub(crate) fn layer_norm(h: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut z = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = &h[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = s;
        for (o, v) in z[i * d..(i + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
    }
    (z, inv_std)
}

/// Adjoint of [`layer_norm`].
pub(crate) fn layer_norm_backward(z: &[f64], inv_std: &[f64], dz: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut dh = vec![0.0; n * d];
    for i in 0..n {
        let zr = &z[i * d..(i + 1) * d];
        let dzr = &dz[i * d..(i + 1) * d];
        let mean_dz = dzr.iter().sum::<f64>() / d as f64;
        let mean_dz_z = dot(dzr, zr) / d as f64;
        for ((o, &g), &zv) in dh[i * d..(i + 1) * d].iter_mut().zip(dzr).zip(zr) {
            *o = inv_std[i] * (g - mean_dz - zv * mean_dz_z);
        }
    }
    dh
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Rotate consecutive pairs of every head's slice of `x[n×dim]` by the
/// position-dependent rotary angles; `inverse` applies the transpose.
pub(crate) fn rope_in_place(x: &mut [f64], n: usize, dim: usize, head_dim: usize, base: f64, inverse: bool) {
    let half = head_dim / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|j| base.powf(-(2.0 * j as f64) / head_dim as f64))
        .collect();
    let heads = dim / head_dim;
    for pos in 0..n {
        for (j, f) in inv_freq.iter().enumerate() {
            let (mut s, c) = (pos as f64 * f).sin_cos();
            if inverse {
                s = -s;
            }
            for h in 0..heads {
                let idx = pos * dim + h * head_dim + 2 * j;
                let (a, b) = (x[idx], x[idx + 1]);
                x[idx] = a * c - b * s;
                x[idx + 1] = a * s + b * c;
            }
        }
    }
}
