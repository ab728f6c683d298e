//! Small helpers over 2D point clouds stored as `Vec<[f64; 2]>`.

pub type Point = [f64; 2];
pub type Cloud = Vec<Point>;

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
pub fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

pub fn centroid(x: &[Point]) -> Point {
    let n = x.len() as f64;
    let (sx, sy) = x
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

pub fn center(x: &[Point]) -> Cloud {
    let m = centroid(x);
    x.iter().map(|p| [p[0] - m[0], p[1] - m[1]]).collect()
}

pub fn frobenius_norm(x: &[Point]) -> f64 {
    x.iter()
        .map(|p| p[0] * p[0] + p[1] * p[1])
        .sum::<f64>()
        .sqrt()
}

/// Rotate every row counterclockwise by `theta` radians.
pub fn rotate(x: &[Point], theta: f64) -> Cloud {
    let (s, c) = theta.sin_cos();
    x.iter()
        .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
        .collect()
}

/// Squared Frobenius distance between two clouds of equal length.
pub fn sq_distance(a: &[Point], b: &[Point]) -> f64 {
    a.iter().zip(b).map(|(p, q)| dist2(*p, *q)).sum()
}

pub fn max_abs_diff(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs()))
        .fold(0.0, f64::max)
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = theta.rem_euclid(tau);
    if r >= tau {
        0.0
    } else {
        r
    }
}

pub fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (pos, &i) in perm.iter().enumerate() {
        inv[i] = pos;
    }
    inv
}

/// Two cyclic orders describe the same cycle if one is a rotation of the
/// other or of its reversal.
pub fn same_cycle(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let n = a.len();
    if n == 0 {
        return true;
    }
    let Some(start) = b.iter().position(|&v| v == a[0]) else {
        return false;
    };
    let forward = (0..n).all(|k| a[k] == b[(start + k) % n]);
    let backward = (0..n).all(|k| a[k] == b[(start + n - k) % n]);
    forward || backward
}
