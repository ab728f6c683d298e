//! Reference tours: exhaustive search, Held-Karp, and a local-search heuristic
//! for sizes beyond the exact solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decode::{two_opt_in_place, TwoOptStrategy};
use crate::error::{CycflowError, Result};
use crate::geometry::dist;
use crate::instances::{cycle_length, Instance, Provenance, Tour};

pub const BRUTE_FORCE_MAX_N: usize = 10;
pub const HELD_KARP_MAX_N: usize = 18;

/// Largest size labeled with [`held_karp`] when a dataset asks for `auto`.
pub const EXACT_LABEL_MAX_N: usize = 16;

fn distance_matrix(inst: &Instance) -> Vec<Vec<f64>> {
    let p = &inst.points;
    p.iter()
        .map(|a| p.iter().map(|b| dist(*a, *b)).collect())
        .collect()
}

/// Minimum tour by enumerating all `(n-1)!/2` distinct cycles.
pub fn brute_force_opt(inst: &Instance) -> Result<Tour> {
    let n = inst.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(CycflowError::SizeLimit {
            solver: "brute force",
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }
    if n == 3 {
        return Tour::new(inst, vec![0, 1, 2], Provenance::Exact);
    }
    let mut best_len = f64::INFINITY;
    let mut best: Vec<usize> = Vec::new();
    for_each_cycle(n, |order| {
        let len = cycle_length(&inst.points, order);
        if len < best_len {
            best_len = len;
            best = order.to_vec();
        }
    });
    Tour::new(inst, best, Provenance::Exact)
}

/// Visit every cycle through node 0 once, skipping reversed duplicates by
/// requiring `order[1] < order[n-1]`.
pub fn for_each_cycle(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut order: Vec<usize> = (0..n).collect();
    fn rec(order: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
        let n = order.len();
        if k == n {
            if order[1] < order[n - 1] {
                visit(order);
            }
            return;
        }
        for i in k..n {
            order.swap(k, i);
            rec(order, k + 1, visit);
            order.swap(k, i);
        }
    }
    rec(&mut order, 1, &mut visit);
}

/// Exact tour by dynamic programming over (visited set, last node).
///
/// Node 0 is the fixed start; subsets range over nodes `1..n`. Ties between
/// equal-cost predecessors resolve to the smaller node index.
pub fn held_karp(inst: &Instance) -> Result<Tour> {
    let n = inst.n();
    if n > HELD_KARP_MAX_N {
        return Err(CycflowError::SizeLimit {
            solver: "held-karp",
            n,
            max: HELD_KARP_MAX_N,
        });
    }
    let d = distance_matrix(inst);
    let m = n - 1;
    let full = (1usize << m) - 1;
    // cost[mask * m + j]: shortest path from 0 through `mask`, ending at node j+1
    let mut cost = vec![f64::INFINITY; (full + 1) * m];
    let mut parent = vec![u8::MAX; (full + 1) * m];
    for j in 0..m {
        cost[(1 << j) * m + j] = d[0][j + 1];
    }
    for mask in 1..=full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let prev = mask ^ (1 << j);
            if prev == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut arg = u8::MAX;
            for k in 0..m {
                if prev & (1 << k) == 0 {
                    continue;
                }
                let c = cost[prev * m + k] + d[k + 1][j + 1];
                if c < best {
                    best = c;
                    arg = k as u8;
                }
            }
            cost[mask * m + j] = best;
            parent[mask * m + j] = arg;
        }
    }
    let mut best = f64::INFINITY;
    let mut last = 0;
    for j in 0..m {
        let c = cost[full * m + j] + d[j + 1][0];
        if c < best {
            best = c;
            last = j;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full;
    let mut j = last;
    loop {
        order.push(j + 1);
        let p = parent[mask * m + j];
        mask ^= 1 << j;
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    order.push(0);
    order.reverse();
    Tour::new(inst, order, Provenance::Exact)
}

/// Nearest-neighbor construction from the best of all start nodes, then
/// alternating 2-opt and Or-opt until neither improves.
///
/// `seed` rotates the Or-opt scan start, the only tie-sensitive choice.
/// The result is a local optimum, not a certified optimum.
pub fn heuristic_label(inst: &Instance, seed: u64) -> Result<Tour> {
    let n = inst.n();
    if n < 4 {
        return Err(CycflowError::InvalidSize(format!(
            "heuristic labeling needs n >= 4, got {n}"
        )));
    }
    let d = distance_matrix(inst);
    let mut order = (0..n)
        .map(|s| nearest_neighbor(&d, s))
        .min_by(|a, b| tour_cost(&d, a).total_cmp(&tour_cost(&d, b)))
        .expect("n >= 4");
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
    loop {
        let moved_2opt = two_opt_in_place(&inst.points, &mut order, usize::MAX, TwoOptStrategy::First);
        let moved_or = or_opt(&d, &mut order, offset);
        if moved_2opt == 0 && moved_or == 0 {
            break;
        }
    }
    Tour::new(inst, order, Provenance::Heuristic)
}

/// Exact labels up to [`EXACT_LABEL_MAX_N`], heuristic labels above.
pub fn auto_label(inst: &Instance, seed: u64) -> Result<Tour> {
    if inst.n() <= EXACT_LABEL_MAX_N {
        held_karp(inst)
    } else {
        heuristic_label(inst, seed)
    }
}

fn tour_cost(d: &[Vec<f64>], order: &[usize]) -> f64 {
    let n = order.len();
    (0..n).map(|k| d[order[k]][order[(k + 1) % n]]).sum()
}

fn nearest_neighbor(d: &[Vec<f64>], start: usize) -> Vec<usize> {
    let n = d.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = start;
    visited[cur] = true;
    order.push(cur);
    for _ in 1..n {
        let next = (0..n)
            .filter(|&j| !visited[j])
            .min_by(|&a, &b| d[cur][a].total_cmp(&d[cur][b]))
            .expect("unvisited node remains");
        visited[next] = true;
        order.push(next);
        cur = next;
    }
    order
}

/// Relocate segments of 1-3 consecutive nodes (optionally reversed) to a
/// better position, first improvement, until no move helps. Returns moves made.
fn or_opt(d: &[Vec<f64>], order: &mut Vec<usize>, offset: usize) -> usize {
    let n = order.len();
    let mut moves = 0;
    'restart: loop {
        for seg_len in 1..=3usize {
            if seg_len + 2 > n {
                break;
            }
            for s in 0..n {
                let i = (s + offset) % n;
                // segment occupies positions i..i+seg_len (cyclic)
                let prev = order[(i + n - 1) % n];
                let first = order[i];
                let last = order[(i + seg_len - 1) % n];
                let next = order[(i + seg_len) % n];
                let removal_gain = d[prev][first] + d[last][next] - d[prev][next];
                // candidate edge (a, b) among the remaining cycle
                for k in 0..n - seg_len - 1 {
                    let a = order[(i + seg_len + k) % n];
                    let b = order[(i + seg_len + k + 1) % n];
                    let fwd = d[a][first] + d[last][b] - d[a][b];
                    let rev = d[a][last] + d[first][b] - d[a][b];
                    let (insert_cost, reversed) = if rev < fwd { (rev, true) } else { (fwd, false) };
                    if insert_cost < removal_gain - 1e-12 {
                        relocate(order, i, seg_len, k, reversed);
                        moves += 1;
                        continue 'restart;
                    }
                }
            }
        }
        return moves;
    }
}

/// Move the segment at cyclic positions `i..i+len` so that it follows the
/// node `k + 1` places after the segment's end.
fn relocate(order: &mut Vec<usize>, i: usize, len: usize, k: usize, reversed: bool) {
    let n = order.len();
    // rotate so the segment starts at 0
    order.rotate_left(i);
    let mut seg: Vec<usize> = order.drain(..len).collect();
    if reversed {
        seg.reverse();
    }
    // remaining nodes: the anchor `a` sits at index k
    let at = k + 1;
    order.splice(at..at, seg);
    debug_assert_eq!(order.len(), n);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::same_cycle;
    use crate::instances::{tour_length, uniform_instance};

    fn square() -> Instance {
        Instance::new(0, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    fn polygon(n: usize, phase: f64) -> Instance {
        let pts = (0..n)
            .map(|k| {
                let a = phase + std::f64::consts::TAU * k as f64 / n as f64;
                [0.5 + 0.4 * a.cos(), 0.5 + 0.4 * a.sin()]
            })
            .collect();
        Instance::new(0, pts).unwrap()
    }

    #[test]
    fn square_is_solved_by_every_oracle() {
        let sq = square();
        assert_eq!(brute_force_opt(&sq).unwrap().length, 4.0);
        assert_eq!(held_karp(&sq).unwrap().length, 4.0);
        assert_eq!(heuristic_label(&sq, 0).unwrap().length, 4.0);
    }

    #[test]
    fn three_points_single_cycle() {
        let inst = uniform_instance(3, 0, 0);
        let t = brute_force_opt(&inst).unwrap();
        for order in [[0, 1, 2], [0, 2, 1], [2, 1, 0]] {
            assert!((tour_length(&inst, &order).unwrap() - t.length).abs() < 1e-15);
        }
        assert!((held_karp(&inst).unwrap().length - t.length).abs() < 1e-15);
    }

    #[test]
    fn cycle_enumeration_count() {
        let mut count = 0;
        for_each_cycle(7, |_| count += 1);
        assert_eq!(count, 360);
    }

    #[test]
    fn brute_force_beats_every_cycle() {
        let inst = uniform_instance(8, 5, 3);
        let best = brute_force_opt(&inst).unwrap();
        assert_eq!(best.provenance, Provenance::Exact);
        let mut count = 0;
        for_each_cycle(8, |o| {
            count += 1;
            assert!(best.length <= cycle_length(&inst.points, o));
        });
        assert_eq!(count, 2520);
    }

    #[test]
    fn size_limits() {
        let big = uniform_instance(11, 0, 0);
        assert!(matches!(brute_force_opt(&big), Err(CycflowError::SizeLimit { max: 10, .. })));
        let huge = uniform_instance(19, 0, 0);
        assert!(matches!(held_karp(&huge), Err(CycflowError::SizeLimit { max: 18, .. })));
        assert!(heuristic_label(&uniform_instance(3, 0, 0), 0).is_err());
    }

    #[test]
    fn held_karp_matches_brute_force() {
        for idx in 0..100 {
            let inst = uniform_instance(9, 42, idx);
            let hk = held_karp(&inst).unwrap();
            let bf = brute_force_opt(&inst).unwrap();
            assert!((hk.length - bf.length).abs() < 1e-9, "instance {idx}");
            assert!((tour_length(&inst, &hk.order).unwrap() - hk.length).abs() < 1e-12);
        }
    }

    #[test]
    fn held_karp_polygon_is_hull_order() {
        let inst = polygon(15, 0.3);
        let t = held_karp(&inst).unwrap();
        assert!(same_cycle(&t.order, &(0..15).collect::<Vec<_>>()), "{:?}", t.order);
    }

    #[test]
    fn held_karp_is_deterministic() {
        let inst = uniform_instance(12, 1, 1);
        assert_eq!(held_karp(&inst).unwrap(), held_karp(&inst).unwrap());
    }

    #[test]
    fn heuristic_on_convex_position_is_hull() {
        let inst = polygon(30, 0.1);
        let t = heuristic_label(&inst, 9).unwrap();
        assert!(same_cycle(&t.order, &(0..30).collect::<Vec<_>>()));
        assert_eq!(t.provenance, Provenance::Heuristic);
    }

    #[test]
    fn heuristic_close_to_exact_on_small_instances() {
        let mut within = 0;
        let total = 1000;
        for seed in 0..total {
            let inst = uniform_instance(9, 1234, seed);
            let exact = held_karp(&inst).unwrap();
            let h = heuristic_label(&inst, seed).unwrap();
            assert!(h.length >= exact.length - 1e-12);
            let gap = crate::instances::gap_percent(h.length, exact.length).unwrap();
            if gap <= 5.0 {
                within += 1;
            }
        }
        assert!(within as f64 >= 0.95 * total as f64, "{within}/{total}");
    }

    #[test]
    fn heuristic_is_deterministic_and_valid() {
        let inst = uniform_instance(60, 3, 0);
        let a = heuristic_label(&inst, 5).unwrap();
        assert_eq!(a, heuristic_label(&inst, 5).unwrap());
        assert!((tour_length(&inst, &a.order).unwrap() - a.length).abs() < 1e-12);
    }

    #[test]
    fn relocate_moves_segment() {
        let mut order = vec![0, 1, 2, 3, 4, 5];
        // segment [1,2] after the node two places past its end (node 4)
        relocate(&mut order, 1, 2, 1, false);
        assert!(same_cycle(&order, &[0, 3, 4, 1, 2, 5]), "{order:?}");
        let mut order = vec![0, 1, 2, 3, 4, 5];
        relocate(&mut order, 1, 2, 1, true);
        assert!(same_cycle(&order, &[0, 3, 4, 2, 1, 5]), "{order:?}");
    }
}
