//! Spectral canonicalization of point clouds.
//!
//! A [`CanonicalFrame`] fixes everything a cloud's pose leaves ambiguous:
//!
//! 1. node order, from the Fiedler vector of the normalized Laplacian of a
//!    Gaussian affinity graph, with its sign chosen to make `Σ v_i³ > 0`;
//! 2. translation, by centering at the centroid;
//! 3. rotation, by turning `u = Σ w_i x_i` (weights running linearly from
//!    −1 to 1 along the spectral order) onto the +y axis;
//! 4. reflection, by mirroring `x ↦ −x` when the points in the second half
//!    of the order have a negative total x-coordinate.
//!
//! The Gaussian bandwidth is the median pairwise distance of the cloud.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CycflowError, Result};
use crate::geometry::{centroid, dist, dist2, invert_permutation, Point};

/// Clouds up to this size use a dense symmetric eigendecomposition.
pub const DENSE_EIGEN_MAX_N: usize = 256;

const LANCZOS_TOL: f64 = 1e-10;
const LANCZOS_MAX_BASIS: usize = 160;
const LANCZOS_MAX_RESTARTS: usize = 40;

const SIGN_TIE_EPS: f64 = 1e-12;
const ORIENTATION_EPS: f64 = 1e-9;
const REFLECT_TIE_EPS: f64 = 1e-12;
/// Relative gap below which λ₂ and its neighbor are treated as a repeated eigenvalue.
const EIGEN_TIE_REL: f64 = 1e-9;
const DENSE_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DegenerateFlags {
    /// `|Σ v_i³|` too small to fix the Fiedler sign.
    pub sign_tie: bool,
    /// Orientation vector vanished; rotation left at identity.
    pub zero_orientation: bool,
    /// Reflection test sum vanished; no reflection applied.
    pub reflect_tie: bool,
    /// λ₂ is (numerically) repeated, so the Fiedler vector is not unique.
    pub eigen_tie: bool,
}

impl DegenerateFlags {
    pub fn any(&self) -> bool {
        self.sign_tie || self.zero_orientation || self.reflect_tie || self.eigen_tie
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFrame {
    /// `perm[i]` is the input row placed at canonical position `i`.
    pub perm: Vec<usize>,
    pub mean: Point,
    /// Counterclockwise rotation applied after centering, radians.
    pub rot: f64,
    /// Mirror `x ↦ −x` after the rotation.
    pub reflect: bool,
    pub flags: DegenerateFlags,
}

/// Dense Gaussian affinity `W_ij = exp(−‖x_i − x_j‖² / σ²)`.
pub fn gaussian_affinity(x: &[Point], sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CycflowError::Domain(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )));
    }
    let n = x.len();
    let s2 = sigma * sigma;
    let mut w = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in i + 1..n {
            let v = (-dist2(x[i], x[j]) / s2).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(w)
}

/// Median of all pairwise distances.
pub fn median_pairwise_distance(x: &[Point]) -> f64 {
    let n = x.len();
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(dist(x[i], x[j]));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

/// Fiedler vector of `L_sym`, sign-fixed to positive skewness.
pub fn fiedler_vector(x: &[Point]) -> Result<(Vec<f64>, DegenerateFlags)> {
    fiedler_vector_with(x, DENSE_EIGEN_MAX_N)
}

pub(crate) fn fiedler_vector_with(
    x: &[Point],
    dense_max: usize,
) -> Result<(Vec<f64>, DegenerateFlags)> {
    let n = x.len();
    if n < 3 {
        return Err(CycflowError::InvalidSize(format!(
            "spectral ordering needs n >= 3, got {n}"
        )));
    }
    let sigma = median_pairwise_distance(x);
    if !(sigma > 0.0) {
        return Err(CycflowError::DegenerateInstance(
            "cloud has coincident points only".into(),
        ));
    }
    let w = gaussian_affinity(x, sigma)?;
    let inv_sqrt_deg: Vec<f64> = (0..n).map(|i| 1.0 / w.row(i).sum().sqrt()).collect();
    // M = D^{-1/2} W D^{-1/2}; L_sym = I − M, so λ₂(L_sym) pairs with the
    // second-largest eigenvalue of M.
    let m = DMatrix::from_fn(n, n, |i, j| inv_sqrt_deg[i] * w[(i, j)] * inv_sqrt_deg[j]);

    let mut flags = DegenerateFlags::default();
    let top: Vec<f64> = inv_sqrt_deg.iter().map(|d| 1.0 / d).collect();
    let mut v = if n <= dense_max {
        let lsym = DMatrix::identity(n, n) - &m;
        let eig = SymmetricEigen::new(lsym.clone());
        // nalgebra occasionally pairs an eigenvalue with the wrong column, so
        // rank the (orthonormal) columns by their own Rayleigh quotients
        let lv = &lsym * &eig.eigenvectors;
        let rq: Vec<f64> = (0..n)
            .map(|c| eig.eigenvectors.column(c).dot(&lv.column(c)))
            .collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| rq[a].total_cmp(&rq[b]));
        let (l1, l2, l3) = (rq[idx[0]], rq[idx[1]], rq[idx[2]]);
        let scale = l3.abs().max(1e-300);
        if (l3 - l2).abs() <= EIGEN_TIE_REL * scale || (l2 - l1).abs() <= EIGEN_TIE_REL * scale {
            flags.eigen_tie = true;
        }
        let residual = (lv.column(idx[1]) - eig.eigenvectors.column(idx[1]) * l2).norm();
        if residual > DENSE_RESIDUAL_TOL && !flags.eigen_tie {
            lanczos_second(&m, &top)?
        } else {
            eig.eigenvectors.column(idx[1]).iter().copied().collect::<Vec<_>>()
        }
    } else {
        lanczos_second(&m, &top)?
    };

    let skew: f64 = v.iter().map(|a| a * a * a).sum();
    if skew.abs() < SIGN_TIE_EPS {
        flags.sign_tie = true;
    }
    if skew < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
    Ok((v, flags))
}

/// Largest eigenpair of symmetric `m` on the complement of `top` (its known
/// leading eigenvector), by Lanczos with full reorthogonalization and
/// explicit restarts from the current Ritz vector.
fn lanczos_second(m: &DMatrix<f64>, top: &[f64]) -> Result<Vec<f64>> {
    let n = m.nrows();
    let mut q0 = DVector::from_column_slice(top);
    q0.normalize_mut();

    let project_out = |v: &mut DVector<f64>, basis: &[DVector<f64>]| {
        for _ in 0..2 {
            let c = q0.dot(v);
            v.axpy(-c, &q0, 1.0);
            for b in basis {
                let c = b.dot(v);
                v.axpy(-c, b, 1.0);
            }
        }
    };

    // deterministic start, orthogonal to the known top vector
    let mut start = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
    project_out(&mut start, &[]);
    let mut last_residual = f64::INFINITY;
    let mut total_iters = 0;
    for _ in 0..LANCZOS_MAX_RESTARTS {
        let nrm = start.norm();
        if nrm == 0.0 {
            return Err(CycflowError::Numerical("Lanczos start vector vanished".into()));
        }
        let mut basis: Vec<DVector<f64>> = vec![start / nrm];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let max_basis = LANCZOS_MAX_BASIS.min(n - 1);
        let mut ritz: Option<DVector<f64>> = None;
        loop {
            let q = basis.last().expect("nonempty basis").clone();
            let mut w = m * &q;
            alpha.push(q.dot(&w));
            project_out(&mut w, &basis);
            let b = w.norm();
            total_iters += 1;
            let k = alpha.len();
            let check = k % 8 == 0 || k == max_basis || b < 1e-14;
            if check {
                let t = DMatrix::from_fn(k, k, |i, j| {
                    if i == j {
                        alpha[i]
                    } else if i + 1 == j {
                        beta[i]
                    } else if j + 1 == i {
                        beta[j]
                    } else {
                        0.0
                    }
                });
                let eig = SymmetricEigen::new(t);
                let top_idx = (0..k)
                    .max_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]))
                    .expect("k >= 1");
                let y = eig.eigenvectors.column(top_idx);
                let mut z = DVector::zeros(n);
                for (coef, bv) in y.iter().zip(&basis) {
                    z.axpy(*coef, bv, 1.0);
                }
                last_residual = (b * y[k - 1]).abs();
                if last_residual < LANCZOS_TOL {
                    z.normalize_mut();
                    // confirm against the true residual
                    let lam = z.dot(&(m * &z));
                    let r = (m * &z - &z * lam).norm();
                    if r < 10.0 * LANCZOS_TOL {
                        return Ok(z.iter().copied().collect());
                    }
                    last_residual = r;
                }
                ritz = Some(z);
            }
            if k >= max_basis || b < 1e-14 {
                break;
            }
            beta.push(b);
            basis.push(w / b);
        }
        start = ritz.expect("checked at loop exit");
        project_out(&mut start, &[]);
    }
    Err(CycflowError::NonConvergence {
        iterations: total_iters,
        residual: last_residual,
    })
}

/// Node indices sorted ascending by Fiedler value, ties by index.
pub fn fiedler_order(x: &[Point]) -> Result<(Vec<usize>, DegenerateFlags)> {
    let (v, flags) = fiedler_vector(x)?;
    Ok((order_by_values(&v), flags))
}

fn order_by_values(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

/// Linear weight of canonical position `i` among `n`: −1 at the start, +1 at the end.
pub fn position_weight(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}

pub fn canonical_frame(x: &[Point]) -> Result<CanonicalFrame> {
    let (perm, mut flags) = fiedler_order(x)?;
    let n = x.len();
    let mean = centroid(x);
    let xc: Vec<Point> = perm
        .iter()
        .map(|&i| [x[i][0] - mean[0], x[i][1] - mean[1]])
        .collect();

    let mut u = [0.0; 2];
    for (i, p) in xc.iter().enumerate() {
        let w = position_weight(i, n);
        u[0] += w * p[0];
        u[1] += w * p[1];
    }
    let rot = if u[0].hypot(u[1]) < ORIENTATION_EPS {
        flags.zero_orientation = true;
        0.0
    } else {
        FRAC_PI_2 - u[1].atan2(u[0])
    };

    let (s, c) = rot.sin_cos();
    let side: f64 = xc
        .iter()
        .enumerate()
        .filter(|(i, _)| position_weight(*i, n) > 0.0)
        .map(|(_, p)| c * p[0] - s * p[1])
        .sum();
    let reflect = if side.abs() < REFLECT_TIE_EPS {
        flags.reflect_tie = true;
        false
    } else {
        side < 0.0
    };

    Ok(CanonicalFrame {
        perm,
        mean,
        rot,
        reflect,
        flags,
    })
}

impl CanonicalFrame {
    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            mean: [0.0, 0.0],
            rot: 0.0,
            reflect: false,
            flags: DegenerateFlags::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(CycflowError::SizeMismatch {
                expected: self.n(),
                got: len,
            });
        }
        Ok(())
    }

    #[inline]
    fn linear(&self, p: Point) -> Point {
        let (s, c) = self.rot.sin_cos();
        let q = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        if self.reflect {
            [-q[0], q[1]]
        } else {
            q
        }
    }

    #[inline]
    fn linear_inv(&self, p: Point) -> Point {
        let q = if self.reflect { [-p[0], p[1]] } else { p };
        let (s, c) = self.rot.sin_cos();
        [c * q[0] + s * q[1], -s * q[0] + c * q[1]]
    }

    /// Positions into the canonical pose.
    pub fn apply(&self, x: &[Point]) -> Result<Vec<Point>> {
        self.check(x.len())?;
        Ok(self
            .perm
            .iter()
            .map(|&i| self.linear([x[i][0] - self.mean[0], x[i][1] - self.mean[1]]))
            .collect())
    }

    /// Displacements into the canonical pose (no translation).
    pub fn apply_linear(&self, v: &[Point]) -> Result<Vec<Point>> {
        self.check(v.len())?;
        Ok(self.perm.iter().map(|&i| self.linear(v[i])).collect())
    }

    /// Positions back from the canonical pose.
    pub fn restore(&self, x_can: &[Point]) -> Result<Vec<Point>> {
        let mut out = self.restore_velocity(x_can)?;
        for p in &mut out {
            p[0] += self.mean[0];
            p[1] += self.mean[1];
        }
        Ok(out)
    }

    /// Velocities back from the canonical pose: inverse permutation and
    /// inverse linear map, no translation.
    pub fn restore_velocity(&self, v_can: &[Point]) -> Result<Vec<Point>> {
        self.check(v_can.len())?;
        let mut out = vec![[0.0; 2]; v_can.len()];
        for (pos, &i) in self.perm.iter().enumerate() {
            out[i] = self.linear_inv(v_can[pos]);
        }
        Ok(out)
    }

    /// Canonical position of every input row.
    pub fn inverse_perm(&self) -> Vec<usize> {
        invert_permutation(&self.perm)
    }
}

pub fn apply_frame(f: &CanonicalFrame, x: &[Point]) -> Result<Vec<Point>> {
    f.apply(x)
}

pub fn restore_velocity(f: &CanonicalFrame, v_can: &[Point]) -> Result<Vec<Point>> {
    f.restore_velocity(v_can)
}

/// `x` in its own canonical pose.
pub fn canonical_cloud(x: &[Point]) -> Result<(Vec<Point>, CanonicalFrame)> {
    let f = canonical_frame(x)?;
    Ok((f.apply(x)?, f))
}
