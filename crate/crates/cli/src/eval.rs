//! Evaluation and ablation over a labeled dataset.

use std::time::Duration;

use cycflow::decode::{angular_sort, solve_with, two_opt_with, SolveTiming, TwoOptStrategy};
use cycflow::flow::direct_decode;
use cycflow::instances::{gap_percent, Dataset, Instance, Provenance, Record, Tour};
use cycflow::model::ModelParams;
use cycflow::{CycflowError, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    pub steps: usize,
    pub max_passes: usize,
    pub strategy: TwoOptStrategy,
}

impl From<&crate::args::DecodeArgs> for DecodeOptions {
    fn from(a: &crate::args::DecodeArgs) -> Self {
        Self {
            steps: a.steps,
            max_passes: a.max_passes,
            strategy: a.strategy,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub id: u64,
    pub n: usize,
    pub reference: f64,
    /// Length straight out of the angular decode.
    pub decoded: f64,
    /// Length after 2-opt.
    pub refined: f64,
    pub timing: SolveTiming,
}

impl EvalRow {
    pub fn decoded_gap(&self) -> f64 {
        gap_percent(self.decoded, self.reference).unwrap_or(f64::NAN)
    }

    pub fn refined_gap(&self) -> f64 {
        gap_percent(self.refined, self.reference).unwrap_or(f64::NAN)
    }
}

fn reference(r: &Record, total: usize, unlabeled: usize) -> Result<&Tour> {
    r.tour.as_ref().ok_or(CycflowError::MissingLabels { unlabeled, total })
}

fn require_labels(ds: &Dataset) -> Result<()> {
    let c = ds.label_counts();
    if c.unlabeled > 0 {
        return Err(CycflowError::MissingLabels {
            unlabeled: c.unlabeled,
            total: ds.len(),
        });
    }
    Ok(())
}

/// Solve every record with and without 2-opt. Rows keep dataset order.
pub fn evaluate(params: &ModelParams, ds: &Dataset, opts: DecodeOptions) -> Result<Vec<EvalRow>> {
    require_labels(ds)?;
    ds.records
        .par_iter()
        .map(|r| {
            let reference = reference(r, ds.len(), 0)?.length;
            let s = solve_with(params, &r.instance, opts.steps, true, opts.max_passes, opts.strategy)?;
            Ok(EvalRow {
                id: r.instance.id,
                n: r.instance.n(),
                reference,
                decoded: s.decoded.length,
                refined: s.tour.length,
                timing: s.timing,
            })
        })
        .collect()
}

pub struct EvalSummary {
    pub mean_decoded_gap: f64,
    pub mean_refined_gap: f64,
    pub median_integrate: Duration,
    pub median_decode: Duration,
    pub median_refine: Duration,
    /// Integration plus decode.
    pub median_total_no_refine: Duration,
    pub median_total: Duration,
}

pub fn median_duration(mut v: Vec<Duration>) -> Duration {
    if v.is_empty() {
        return Duration::ZERO;
    }
    v.sort();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2
    }
}

pub fn summarize(rows: &[EvalRow]) -> EvalSummary {
    let n = rows.len().max(1) as f64;
    let med = |f: &dyn Fn(&EvalRow) -> Duration| median_duration(rows.iter().map(f).collect());
    EvalSummary {
        mean_decoded_gap: rows.iter().map(EvalRow::decoded_gap).sum::<f64>() / n,
        mean_refined_gap: rows.iter().map(EvalRow::refined_gap).sum::<f64>() / n,
        median_integrate: med(&|r| r.timing.integrate),
        median_decode: med(&|r| r.timing.decode),
        median_refine: med(&|r| r.timing.refine),
        median_total_no_refine: med(&|r| r.timing.integrate + r.timing.decode),
        median_total: med(&|r| r.timing.total()),
    }
}

pub const ANGULAR_SORT: &str = "Angular Sort";
pub const DIRECT_REGRESSION: &str = "Direct Angular Reg.";
pub const CYCFLOW: &str = "CycFlow";

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub method: &'static str,
    /// Mean gap of the raw decode.
    pub decoded_gap: f64,
    /// Mean gap after 2-opt.
    pub refined_gap: f64,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub fingerprint: String,
    pub instances: usize,
    pub provenance: &'static str,
    pub rows: Vec<AblationRow>,
}

fn angular_tour(inst: &Instance) -> Result<Tour> {
    Tour::new(inst, angular_sort(&inst.points), Provenance::Decoded)
}

/// Mean decode and refined gaps of `method` over the dataset.
fn method_gaps(
    ds: &Dataset,
    opts: DecodeOptions,
    method: impl Fn(&Instance) -> Result<Tour> + Sync,
) -> Result<(f64, f64)> {
    let per: Vec<(f64, f64)> = ds
        .records
        .par_iter()
        .map(|r| {
            let reference = reference(r, ds.len(), 0)?.length;
            let t = method(&r.instance)?;
            let refined = two_opt_with(&r.instance, &t, opts.max_passes, opts.strategy);
            Ok((
                gap_percent(t.length, reference)?,
                gap_percent(refined.length, reference)?,
            ))
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// All three strategies on the same records.
pub fn ablate(flow: &ModelParams, direct: &ModelParams, ds: &Dataset, opts: DecodeOptions) -> Result<Ablation> {
    require_labels(ds)?;
    let mut rows = Vec::with_capacity(3);
    let (d, r) = method_gaps(ds, opts, angular_tour)?;
    rows.push(AblationRow { method: ANGULAR_SORT, decoded_gap: d, refined_gap: r });
    let (d, r) = method_gaps(ds, opts, |inst| direct_decode(direct, inst))?;
    rows.push(AblationRow { method: DIRECT_REGRESSION, decoded_gap: d, refined_gap: r });
    let (d, r) = method_gaps(ds, opts, |inst| {
        Ok(solve_with(flow, inst, opts.steps, false, 0, opts.strategy)?.decoded)
    })?;
    rows.push(AblationRow { method: CYCFLOW, decoded_gap: d, refined_gap: r });
    Ok(Ablation {
        fingerprint: ds.fingerprint(),
        instances: ds.len(),
        provenance: ds.label_counts().summary(),
        rows,
    })
}

impl Ablation {
    pub fn row(&self, method: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}
