//! Tour recovery from transported points, and 2-opt refinement.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use crate::error::Result;
use crate::flow::integrate;
use crate::geometry::{centroid, dist, wrap_angle, Point};
use crate::instances::{Instance, Provenance, Tour};
use crate::model::ModelParams;

pub const DEFAULT_MAX_PASSES: usize = 100;

const IMPROVEMENT_EPS: f64 = 1e-12;

/// Which improving exchange a 2-opt pass applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TwoOptStrategy {
    /// Scan the full neighborhood and apply the single best exchange.
    #[default]
    Best,
    /// Apply the first improving exchange found in scan order.
    First,
}

impl std::str::FromStr for TwoOptStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "best" => Ok(TwoOptStrategy::Best),
            "first" => Ok(TwoOptStrategy::First),
            other => Err(format!("unknown 2-opt strategy {other:?} (expected best|first)")),
        }
    }
}

/// Order nodes by polar angle in `[0, 2π)` about the cloud's centroid.
///
/// Ties fall back to the distance from the centroid, then to the node index.
pub fn angular_sort(points: &[Point]) -> Vec<usize> {
    let c = centroid(points);
    let keyed: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            (wrap_angle(dy.atan2(dx)), dx.hypot(dy))
        })
        .collect();
    sort_by_angle(&keyed)
}

/// Sort indices ascending by `(angle, radius, index)`.
pub(crate) fn sort_by_angle(keys: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| {
        keys[a]
            .0
            .total_cmp(&keys[b].0)
            .then(keys[a].1.total_cmp(&keys[b].1))
            .then(a.cmp(&b))
    });
    idx
}

/// Angular decode of a transported cloud into a tour of `inst`.
pub fn decode_tour(inst: &Instance, transported: &[Point]) -> Result<Tour> {
    Tour::new(inst, angular_sort(transported), Provenance::Decoded)
}

/// 2-opt with the default best-improvement strategy.
pub fn two_opt(inst: &Instance, tour: &Tour, max_passes: usize) -> Tour {
    two_opt_with(inst, tour, max_passes, TwoOptStrategy::Best)
}

pub fn two_opt_with(
    inst: &Instance,
    tour: &Tour,
    max_passes: usize,
    strategy: TwoOptStrategy,
) -> Tour {
    let mut order = tour.order.clone();
    two_opt_in_place(&inst.points, &mut order, max_passes, strategy);
    let length = crate::instances::cycle_length(&inst.points, &order);
    // never hand back something longer than the input because of rounding
    if length > tour.length {
        return tour.clone();
    }
    Tour {
        order,
        length,
        provenance: tour.provenance,
    }
}

/// Runs up to `max_passes` passes; each pass applies at most one exchange.
/// Returns the number of exchanges applied.
pub(crate) fn two_opt_in_place(
    points: &[Point],
    order: &mut [usize],
    max_passes: usize,
    strategy: TwoOptStrategy,
) -> usize {
    let n = order.len();
    if n < 4 {
        return 0;
    }
    let d = |a: usize, b: usize| dist(points[a], points[b]);
    let mut applied = 0;
    for _ in 0..max_passes {
        let mut best: Option<(f64, usize, usize)> = None;
        'scan: for i in 0..n - 1 {
            let a = order[i];
            let b = order[i + 1];
            let dab = d(a, b);
            // j = n-1 with i = 0 would reverse everything but node 0: same cycle
            let j_end = if i == 0 { n - 1 } else { n };
            for j in i + 2..j_end {
                let c = order[j];
                let e = order[(j + 1) % n];
                let delta = d(a, c) + d(b, e) - dab - d(c, e);
                if delta < -IMPROVEMENT_EPS {
                    match best {
                        Some((bd, _, _)) if bd <= delta => {}
                        _ => best = Some((delta, i, j)),
                    }
                    if strategy == TwoOptStrategy::First {
                        break 'scan;
                    }
                }
            }
        }
        let Some((_, i, j)) = best else {
            break;
        };
        order[i + 1..=j].reverse();
        applied += 1;
    }
    applied
}

/// Wall-clock breakdown of one [`solve`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveTiming {
    pub integrate: Duration,
    pub decode: Duration,
    pub refine: Duration,
}

impl SolveTiming {
    pub fn total(&self) -> Duration {
        self.integrate + self.decode + self.refine
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Tour straight out of the angular decode.
    pub decoded: Tour,
    /// Final tour (2-opt refined when requested, otherwise equal to `decoded`).
    pub tour: Tour,
    pub timing: SolveTiming,
}

/// Integrate, decode and optionally refine.
pub fn solve(params: &ModelParams, inst: &Instance, steps: usize, refine: bool) -> Result<Solution> {
    solve_with(params, inst, steps, refine, DEFAULT_MAX_PASSES, TwoOptStrategy::Best)
}

pub fn solve_with(
    params: &ModelParams,
    inst: &Instance,
    steps: usize,
    refine: bool,
    max_passes: usize,
    strategy: TwoOptStrategy,
) -> Result<Solution> {
    let t0 = Instant::now();
    let transported = integrate(params, inst, steps)?;
    let t1 = Instant::now();
    let decoded = decode_tour(inst, &transported)?;
    let t2 = Instant::now();
    let tour = if refine {
        two_opt_with(inst, &decoded, max_passes, strategy)
    } else {
        decoded.clone()
    };
    let t3 = Instant::now();
    Ok(Solution {
        decoded,
        tour,
        timing: SolveTiming {
            integrate: t1 - t0,
            decode: t2 - t1,
            refine: t3 - t2,
        },
    })
}

/// Compare two tours by length, for picking the shorter one.
pub fn by_length(a: &Tour, b: &Tour) -> Ordering {
    a.length.total_cmp(&b.length)
}
