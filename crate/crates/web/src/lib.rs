//! Browser bindings for the interactive demo in `www/`.
//!
//! Points cross the boundary as flat `[x0, y0, x1, y1, ...]` arrays.

use cycflow::canon::canonical_cloud;
use cycflow::coupling::{build_coupled_pair, CoupledPair};
use cycflow::decode::{angular_sort, two_opt, DEFAULT_MAX_PASSES};
use cycflow::flow::sample_interpolant;
use cycflow::instances::{uniform_instance, Instance, Provenance, Tour};
use cycflow::oracle::{held_karp, heuristic_label};
use cycflow::Point;
use wasm_bindgen::prelude::*;

/// Larger instances get the heuristic label so slider updates stay instant.
const EXACT_MAX_N: usize = 12;

fn to_points(flat: &[f64]) -> Result<Vec<Point>, String> {
    if flat.len() % 2 != 0 {
        return Err(format!("expected an even number of coordinates, got {}", flat.len()));
    }
    Ok(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0], p[1]]).collect()
}

fn instance(flat: &[f64]) -> Result<Instance, String> {
    Instance::new(0, to_points(flat)?).map_err(|e| e.to_string())
}

fn reference_tour(inst: &Instance) -> Result<Tour, String> {
    if inst.n() <= EXACT_MAX_N {
        held_karp(inst)
    } else {
        heuristic_label(inst, 0)
    }
    .map_err(|e| e.to_string())
}

fn pair(flat: &[f64]) -> Result<CoupledPair, String> {
    let inst = instance(flat)?;
    let tour = reference_tour(&inst)?;
    build_coupled_pair(&inst, &tour).map_err(|e| e.to_string())
}

/// Centered `x_t` of the coupled pair, followed by the reference tour order.
pub fn interpolant_at(flat: &[f64], t: f64) -> Result<Vec<f64>, String> {
    let pair = pair(flat)?;
    let mut out = flatten(&sample_interpolant(&pair, t.clamp(0.0, 1.0)).map_err(|e| e.to_string())?);
    out.extend(pair.tour.order.iter().map(|&i| i as f64));
    Ok(out)
}

/// Canonical pose of the cloud, followed by the degenerate-flag count.
pub fn canonical_pose(flat: &[f64]) -> Result<Vec<f64>, String> {
    let points = to_points(flat)?;
    let (cloud, frame) = canonical_cloud(&points).map_err(|e| e.to_string())?;
    let f = frame.flags;
    let flags = [f.sign_tie, f.zero_orientation, f.reflect_tie, f.eigen_tie]
        .iter()
        .filter(|b| **b)
        .count();
    let mut out = flatten(&cloud);
    out.push(flags as f64);
    Ok(out)
}

/// `[angular length, 2-opt length, reference length, 2-opt order...]`.
pub fn baseline(flat: &[f64]) -> Result<Vec<f64>, String> {
    let inst = instance(flat)?;
    let sorted = Tour::new(&inst, angular_sort(&inst.points), Provenance::Decoded).map_err(|e| e.to_string())?;
    let refined = two_opt(&inst, &sorted, DEFAULT_MAX_PASSES);
    let reference = reference_tour(&inst)?;
    let mut out = vec![sorted.length, refined.length, reference.length];
    out.extend(refined.order.iter().map(|&i| i as f64));
    Ok(out)
}

#[wasm_bindgen(js_name = randomInstance)]
pub fn random_instance(n: usize, seed: u32) -> Vec<f64> {
    flatten(&uniform_instance(n.max(3), seed as u64, 0).points)
}

#[wasm_bindgen]
pub fn interpolant(points: &[f64], t: f64) -> Result<Vec<f64>, JsError> {
    interpolant_at(points, t).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn canonicalize(points: &[f64]) -> Result<Vec<f64>, JsError> {
    canonical_pose(points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = solveBaseline)]
pub fn solve_baseline(points: &[f64]) -> Result<Vec<f64>, JsError> {
    baseline(points).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: [f64; 8] = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];

    #[test]
    fn interpolant_endpoints() {
        let x0 = interpolant_at(&SQUARE, 0.0).unwrap();
        let x1 = interpolant_at(&SQUARE, 1.0).unwrap();
        assert_eq!(x0.len(), 12);
        // the centered square already sits on its circle
        for (a, b) in x0[..8].iter().zip(&x1[..8]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((x0[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn baseline_on_square() {
        let b = baseline(&[0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(b[1], 4.0);
        assert_eq!(b[2], 4.0);
        assert_eq!(b.len(), 3 + 4);
    }

    #[test]
    fn canonical_pose_shape() {
        let pts = random_instance(12, 3);
        let c = canonical_pose(&pts).unwrap();
        assert_eq!(c.len(), 25);
        assert!(c[24] >= 0.0);
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(interpolant_at(&[0.0, 1.0, 2.0], 0.5).is_err());
        assert!(baseline(&[0.0, 0.0, 1.0, 1.0]).is_err());
    }
}
