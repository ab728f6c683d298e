//! Geometric coupling between an instance and its tour.
//!
//! The target places the tour's nodes on a circle centered at the origin, in
//! tour order, with arcs proportional to the tour's edge lengths. The radius
//! is chosen so the target has the same Frobenius norm as the centered input.
//! The embedding is then rotated onto the input by a closed-form SO(2)
//! Procrustes fit, trying both traversal directions.

use std::f64::consts::TAU;

use crate::error::{CycflowError, Result};
use crate::geometry::{center, dist, frobenius_norm, rotate, sq_distance, Point};
use crate::instances::{Instance, Tour};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Counterclockwise along the tour.
    Forward,
    Reversed,
}

/// Aligned `(x0, x1)` training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    /// Mean-centered input.
    pub x0: Vec<Point>,
    /// Circle target after alignment, row `i` belongs to node `i`.
    pub x1: Vec<Point>,
    pub tour: Tour,
    pub radius: f64,
    /// Rotation applied to the raw embedding, radians.
    pub rotation_applied: f64,
    pub direction: Direction,
    /// `‖x1 − x0‖_F²` after alignment.
    pub residual: f64,
}

/// Result of the SO(2) Procrustes fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub angle: f64,
    /// Both correlation sums vanished; every rotation is optimal and 0 was returned.
    pub degenerate: bool,
}

/// Place the tour's nodes on the norm-matched circle.
///
/// Node `tour[0]` sits at angle 0, node `tour[k]` at `±2π·(path length up to k)/L`.
pub fn circle_embed(inst: &Instance, tour: &Tour, direction: Direction) -> Result<Vec<Point>> {
    let n = inst.n();
    if tour.order.len() != n || !crate::geometry::is_permutation(&tour.order, n) {
        return Err(CycflowError::InvalidTour(format!(
            "tour is not a permutation of 0..{n}"
        )));
    }
    let x0 = center(&inst.points);
    let total = crate::instances::cycle_length(&inst.points, &tour.order);
    let norm = frobenius_norm(&x0);
    if !(total > 0.0) || !(norm > 0.0) {
        return Err(CycflowError::DegenerateInstance(format!(
            "instance {} has zero tour length (all points coincide)",
            inst.id
        )));
    }
    let radius = norm / (n as f64).sqrt();
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Reversed => -1.0,
    };
    let mut out = vec![[0.0; 2]; n];
    let mut travelled = 0.0;
    for k in 0..n {
        let node = tour.order[k];
        let angle = sign * TAU * travelled / total;
        out[node] = [radius * angle.cos(), radius * angle.sin()];
        travelled += dist(inst.points[node], inst.points[tour.order[(k + 1) % n]]);
    }
    Ok(out)
}

/// Rotation angle minimizing `‖R(θ)·moving − fixed‖_F²`.
pub fn kabsch_so2(moving: &[Point], fixed: &[Point]) -> Result<Alignment> {
    if moving.len() != fixed.len() {
        return Err(CycflowError::SizeMismatch {
            expected: fixed.len(),
            got: moving.len(),
        });
    }
    let (mut cross, mut dot) = (0.0, 0.0);
    for (m, f) in moving.iter().zip(fixed) {
        cross += m[0] * f[1] - m[1] * f[0];
        dot += m[0] * f[0] + m[1] * f[1];
    }
    if cross == 0.0 && dot == 0.0 {
        return Ok(Alignment {
            angle: 0.0,
            degenerate: true,
        });
    }
    Ok(Alignment {
        angle: cross.atan2(dot),
        degenerate: false,
    })
}

/// Build the aligned pair; the lower-residual direction wins, `Forward` on ties.
pub fn build_coupled_pair(inst: &Instance, tour: &Tour) -> Result<CoupledPair> {
    let x0 = center(&inst.points);
    let radius = frobenius_norm(&x0) / (inst.n() as f64).sqrt();
    let mut best: Option<CoupledPair> = None;
    for direction in [Direction::Forward, Direction::Reversed] {
        let embedded = circle_embed(inst, tour, direction)?;
        let align = kabsch_so2(&embedded, &x0)?;
        let x1 = rotate(&embedded, align.angle);
        let residual = sq_distance(&x1, &x0);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(CoupledPair {
                x0: x0.clone(),
                x1,
                tour: tour.clone(),
                radius,
                rotation_applied: align.angle,
                direction,
                residual,
            });
        }
    }
    Ok(best.expect("two candidate directions"))
}

impl CoupledPair {
    /// Displacement `x1 − x0`.
    pub fn displacement(&self) -> Vec<Point> {
        self.x0
            .iter()
            .zip(&self.x1)
            .map(|(a, b)| [b[0] - a[0], b[1] - a[1]])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{same_cycle, wrap_angle};
    use crate::instances::{uniform_instance, Provenance};
    use crate::oracle::held_karp;
    use proptest::prelude::*;

    fn inst(points: Vec<Point>) -> Instance {
        Instance::new(0, points).unwrap()
    }

    fn angles_deg(cloud: &[Point], order: &[usize]) -> Vec<f64> {
        order
            .iter()
            .map(|&i| wrap_angle(cloud[i][1].atan2(cloud[i][0])).to_degrees())
            .collect()
    }

    #[test]
    fn square_embedding() {
        let sq = inst(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let tour = Tour::new(&sq, vec![0, 1, 2, 3], Provenance::Exact).unwrap();
        let e = circle_embed(&sq, &tour, Direction::Forward).unwrap();
        for p in &e {
            assert!((p[0].hypot(p[1]) - 0.5f64.sqrt()).abs() < 1e-15);
        }
        let a = angles_deg(&e, &tour.order);
        for (got, want) in a.iter().zip([0.0, 90.0, 180.0, 270.0]) {
            assert!((got - want).abs() < 1e-9, "{a:?}");
        }
    }

    #[test]
    fn triangle_embedding() {
        let h = 3f64.sqrt() / 2.0;
        let tri = inst(vec![[0.0, 0.0], [1.0, 0.0], [0.5, h]]);
        let tour = Tour::new(&tri, vec![0, 1, 2], Provenance::Exact).unwrap();
        let e = circle_embed(&tri, &tour, Direction::Forward).unwrap();
        let a = angles_deg(&e, &tour.order);
        for (got, want) in a.iter().zip([0.0, 120.0, 240.0]) {
            assert!((got - want).abs() < 1e-9, "{a:?}");
        }
    }

    #[test]
    fn collinear_arcs_follow_edge_lengths() {
        let line = inst(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        let tour = Tour::new(&line, vec![0, 1, 2, 3], Provenance::Exact).unwrap();
        let e = circle_embed(&line, &tour, Direction::Forward).unwrap();
        let a = angles_deg(&e, &tour.order);
        for (got, want) in a.iter().zip([0.0, 60.0, 120.0, 180.0]) {
            assert!((got - want).abs() < 1e-9, "{a:?}");
        }
        let r = circle_embed(&line, &tour, Direction::Reversed).unwrap();
        let a = angles_deg(&r, &tour.order);
        for (got, want) in a.iter().zip([0.0, 300.0, 240.0, 180.0]) {
            assert!((got - want).abs() < 1e-9, "{a:?}");
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let dup = inst(vec![[0.3, 0.3]; 4]);
        let tour = Tour::new(&dup, vec![0, 1, 2, 3], Provenance::Exact).unwrap();
        assert!(matches!(
            circle_embed(&dup, &tour, Direction::Forward),
            Err(CycflowError::DegenerateInstance(_))
        ));
        assert!(build_coupled_pair(&dup, &tour).is_err());
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let base = center(&uniform_instance(12, 1, 0).points);
        let fixed = rotate(&base, 30f64.to_radians());
        let a = kabsch_so2(&base, &fixed).unwrap();
        assert!((a.angle - 30f64.to_radians()).abs() < 1e-12);
        assert!(sq_distance(&rotate(&base, a.angle), &fixed) < 1e-24);
        assert!(kabsch_so2(&base, &base).unwrap().angle.abs() < 1e-15);
    }

    #[test]
    fn kabsch_zero_covariance_flags() {
        let zeros = vec![[0.0, 0.0]; 5];
        let a = kabsch_so2(&zeros, &zeros).unwrap();
        assert_eq!(a.angle, 0.0);
        assert!(a.degenerate);
        assert!(kabsch_so2(&zeros, &zeros[..3]).is_err());
    }

    #[test]
    fn kabsch_beats_grid() {
        for seed in 0..5 {
            let m = center(&uniform_instance(20, 77, seed).points);
            let f = center(&uniform_instance(20, 78, seed).points);
            let a = kabsch_so2(&m, &f).unwrap();
            let best = sq_distance(&rotate(&m, a.angle), &f);
            let steps = (TAU / 1e-3) as usize + 1;
            for k in 0..steps {
                let th = -std::f64::consts::PI + k as f64 * 1e-3;
                assert!(best <= sq_distance(&rotate(&m, th), &f) + 1e-12);
            }
        }
    }

    #[test]
    fn square_pair_is_exact() {
        let sq = inst(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let tour = Tour::new(&sq, vec![0, 1, 2, 3], Provenance::Exact).unwrap();
        let pair = build_coupled_pair(&sq, &tour).unwrap();
        assert!(pair.residual < 1e-24);
        assert!(crate::geometry::max_abs_diff(&pair.x1, &pair.x0) < 1e-12);
    }

    #[test]
    fn chosen_direction_has_smaller_residual() {
        for seed in 0..20 {
            let inst = uniform_instance(9, 3, seed);
            let tour = held_karp(&inst).unwrap();
            let pair = build_coupled_pair(&inst, &tour).unwrap();
            let other = match pair.direction {
                Direction::Forward => Direction::Reversed,
                Direction::Reversed => Direction::Forward,
            };
            let e = circle_embed(&inst, &tour, other).unwrap();
            let x0 = center(&inst.points);
            let a = kabsch_so2(&e, &x0).unwrap();
            assert!(pair.residual <= sq_distance(&rotate(&e, a.angle), &x0));
        }
    }

    #[test]
    fn rotation_equivariance() {
        let inst0 = uniform_instance(11, 8, 2);
        let tour = held_karp(&inst0).unwrap();
        let phi = 1.234;
        let rotated = Instance::new(0, rotate(&inst0.points, phi)).unwrap();
        let tour_r = Tour::new(&rotated, tour.order.clone(), Provenance::Exact).unwrap();
        let a = build_coupled_pair(&inst0, &tour).unwrap();
        let b = build_coupled_pair(&rotated, &tour_r).unwrap();
        assert!(crate::geometry::max_abs_diff(&rotate(&a.x1, phi), &b.x1) < 1e-9);
        assert!((a.residual - b.residual).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn pair_invariants(n in 4usize..=12, seed in any::<u64>(), shift_x in -5.0f64..5.0, theta in -3.1f64..3.1) {
            let inst = uniform_instance(n, seed, 0);
            let tour = held_karp(&inst).unwrap();
            let pair = build_coupled_pair(&inst, &tour).unwrap();
            prop_assert!((frobenius_norm(&pair.x1) - frobenius_norm(&pair.x0)).abs() <= 1e-9);
            for p in &pair.x1 {
                prop_assert!((p[0].hypot(p[1]) - pair.radius).abs() <= 1e-9);
            }
            prop_assert!(same_cycle(&crate::decode::angular_sort(&pair.x1), &tour.order));

            // residual invariant under a rigid motion of the input
            let moved: Vec<Point> = rotate(&inst.points, theta).iter().map(|p| [p[0] + shift_x, p[1] - 2.0]).collect();
            let moved = Instance::new(0, moved).unwrap();
            let t2 = Tour::new(&moved, tour.order.clone(), Provenance::Exact).unwrap();
            let p2 = build_coupled_pair(&moved, &t2).unwrap();
            prop_assert!((p2.residual - pair.residual).abs() <= 1e-9);
        }
    }
}
