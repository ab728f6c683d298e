//! Instances, tours, gap metric and the plain-text dataset format.
//!
//! # Dataset format
//!
//! ```text
//! cycflow-dataset v1
//! instance <id> <n>
//! <x> <y>                                  (n lines)
//! tour <exact|heuristic|decoded> <len> i0 i1 ... i(n-1)   (optional)
//! target <x> <y>                           (optional, n lines, coupling dumps)
//! ```
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! `read_dataset(write_dataset(ds)) == ds` bit for bit. Lines end in `\n`.
//!
//! # Generator
//!
//! Instances are drawn i.i.d. uniform in `[0,1]²` from ChaCha8 seeded with
//! `seed` and using stream `index` for instance `index`, so every instance
//! is reproducible on its own and generation order does not matter.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{CycflowError, Result};
use crate::geometry::{dist, is_permutation, Point};

pub const DATASET_HEADER: &str = "cycflow-dataset v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub points: Vec<Point>,
}

impl Instance {
    pub fn new(id: u64, points: Vec<Point>) -> Result<Self> {
        if points.len() < 3 {
            return Err(CycflowError::InvalidSize(format!(
                "an instance needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(CycflowError::Domain(format!(
                "instance {id} has non-finite coordinates"
            )));
        }
        Ok(Self { id, points })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Exact,
    Heuristic,
    Decoded,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Exact => "exact",
            Provenance::Heuristic => "heuristic",
            Provenance::Decoded => "decoded",
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact" => Ok(Provenance::Exact),
            "heuristic" => Ok(Provenance::Heuristic),
            "decoded" => Ok(Provenance::Decoded),
            other => Err(format!("unknown tour provenance {other:?}")),
        }
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A cyclic visiting order together with its length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
    pub provenance: Provenance,
}

impl Tour {
    /// Build a tour for `inst`, computing its length.
    pub fn new(inst: &Instance, order: Vec<usize>, provenance: Provenance) -> Result<Self> {
        let length = tour_length(inst, &order)?;
        Ok(Self {
            order,
            length,
            provenance,
        })
    }
}

/// Euclidean length of the closed cycle visiting `order`.
pub fn tour_length(inst: &Instance, order: &[usize]) -> Result<f64> {
    if !is_permutation(order, inst.n()) {
        return Err(CycflowError::InvalidTour(format!(
            "order of length {} is not a permutation of 0..{}",
            order.len(),
            inst.n()
        )));
    }
    Ok(cycle_length(&inst.points, order))
}

/// Unchecked cycle length; summed in index order.
pub(crate) fn cycle_length(points: &[Point], order: &[usize]) -> f64 {
    let n = order.len();
    let mut total = 0.0;
    for k in 0..n {
        total += dist(points[order[k]], points[order[(k + 1) % n]]);
    }
    total
}

/// Percentage excess of `l_method` over the reference length `l_opt`.
pub fn gap_percent(l_method: f64, l_opt: f64) -> Result<f64> {
    if !(l_opt > 0.0) || !l_opt.is_finite() {
        return Err(CycflowError::Domain(format!(
            "reference length must be positive, got {l_opt}"
        )));
    }
    Ok(100.0 * (l_method - l_opt) / l_opt)
}

/// Draw `count` instances of `n` uniform points in the unit square.
pub fn gen_uniform(n: usize, count: usize, seed: u64) -> Result<Dataset> {
    if n < 3 {
        return Err(CycflowError::InvalidSize(format!(
            "instances need n >= 3, got {n}"
        )));
    }
    if count == 0 {
        return Err(CycflowError::InvalidSize("count must be at least 1".into()));
    }
    let records = (0..count as u64)
        .map(|idx| Record::unlabeled(uniform_instance(n, seed, idx)))
        .collect();
    Ok(Dataset { records })
}

/// The `idx`-th instance of the stream selected by `seed`.
pub fn uniform_instance(n: usize, seed: u64, idx: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx);
    let points = (0..n)
        .map(|_| {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            [x, y]
        })
        .collect();
    Instance { id: idx, points }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub instance: Instance,
    pub tour: Option<Tour>,
    /// Aligned circle target (centered coordinates), present in coupling dumps.
    pub target: Option<Vec<Point>>,
}

impl Record {
    pub fn unlabeled(instance: Instance) -> Self {
        Self {
            instance,
            tour: None,
            target: None,
        }
    }

    pub fn labeled(instance: Instance, tour: Tour) -> Self {
        Self {
            instance,
            tour: Some(tour),
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.records.iter().map(|r| &r.instance)
    }

    /// Number of records carrying a tour, and how many of those are exact.
    pub fn label_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for r in &self.records {
            match r.tour.as_ref().map(|t| t.provenance) {
                None => c.unlabeled += 1,
                Some(Provenance::Exact) => c.exact += 1,
                Some(Provenance::Heuristic) => c.heuristic += 1,
                Some(Provenance::Decoded) => c.decoded += 1,
            }
        }
        c
    }

    /// Canonical text serialization.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(DATASET_HEADER);
        s.push('\n');
        for r in &self.records {
            let inst = &r.instance;
            let _ = writeln!(s, "instance {} {}", inst.id, inst.n());
            for p in &inst.points {
                let _ = writeln!(s, "{} {}", p[0], p[1]);
            }
            if let Some(t) = &r.tour {
                let _ = write!(s, "tour {} {}", t.provenance, t.length);
                for i in &t.order {
                    let _ = write!(s, " {i}");
                }
                s.push('\n');
            }
            if let Some(target) = &r.target {
                for p in target {
                    let _ = writeln!(s, "target {} {}", p[0], p[1]);
                }
            }
        }
        s
    }

    /// Short content hash of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_dataset(text.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub exact: usize,
    pub heuristic: usize,
    pub decoded: usize,
    pub unlabeled: usize,
}

impl LabelCounts {
    /// Label provenance in one word: `exact`, `heuristic`, `mixed` or `none`.
    pub fn summary(&self) -> &'static str {
        let labeled = self.exact + self.heuristic + self.decoded;
        if labeled == 0 {
            "none"
        } else if self.exact == labeled && self.unlabeled == 0 {
            "exact"
        } else if self.heuristic == labeled && self.unlabeled == 0 {
            "heuristic"
        } else {
            "mixed"
        }
    }
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(ds.to_text().as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    parse_dataset(f)
}

fn parse_err(line: usize, msg: impl Into<String>) -> CycflowError {
    CycflowError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} {tok:?}")))
}

fn parse_dataset(reader: impl Read) -> Result<Dataset> {
    let mut lines = BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .peekable();

    match lines.next() {
        Some((_, Ok(h))) if h == DATASET_HEADER => {}
        Some((_, Ok(h))) => {
            return Err(parse_err(1, format!("expected header {DATASET_HEADER:?}, got {h:?}")))
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(parse_err(1, "empty file")),
    }

    let mut records = Vec::new();
    while let Some((lno, line)) = lines.next() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split(' ');
        if toks.next() != Some("instance") {
            return Err(parse_err(lno, format!("expected `instance`, got {line:?}")));
        }
        let id: u64 = parse_num(toks.next(), lno, "instance id")?;
        let n: usize = parse_num(toks.next(), lno, "node count")?;
        if toks.next().is_some() {
            return Err(parse_err(lno, "trailing tokens after instance header"));
        }

        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let (plno, pl) = lines
                .next()
                .ok_or_else(|| parse_err(lno, format!("instance {id}: expected {n} points")))?;
            let pl = pl?;
            points.push(parse_point(pl.split(' '), plno)?);
        }
        let instance = Instance::new(id, points).map_err(|e| parse_err(lno, e.to_string()))?;

        let mut tour = None;
        if let Some((tlno, Ok(tl))) = lines.peek() {
            if tl.starts_with("tour ") {
                let tlno = *tlno;
                let tl = tl.clone();
                lines.next();
                tour = Some(parse_tour(&instance, &tl, tlno)?);
            }
        }

        let mut target = Vec::new();
        while let Some((tlno, Ok(tl))) = lines.peek() {
            if !tl.starts_with("target ") {
                break;
            }
            let tlno = *tlno;
            let mut toks = tl.split(' ');
            toks.next();
            target.push(parse_point(toks, tlno)?);
            lines.next();
        }
        if !target.is_empty() && target.len() != n {
            return Err(parse_err(
                lno,
                format!("instance {id}: {} target rows for {n} nodes", target.len()),
            ));
        }

        records.push(Record {
            instance,
            tour,
            target: (!target.is_empty()).then_some(target),
        });
    }
    Ok(Dataset { records })
}

fn parse_point<'a>(mut toks: impl Iterator<Item = &'a str>, lno: usize) -> Result<Point> {
    let x: f64 = parse_num(toks.next(), lno, "x coordinate")?;
    let y: f64 = parse_num(toks.next(), lno, "y coordinate")?;
    if toks.next().is_some() {
        return Err(parse_err(lno, "expected exactly two coordinates"));
    }
    Ok([x, y])
}

fn parse_tour(inst: &Instance, line: &str, lno: usize) -> Result<Tour> {
    let mut toks = line.split(' ');
    toks.next();
    let provenance: Provenance = toks
        .next()
        .ok_or_else(|| parse_err(lno, "missing tour provenance"))?
        .parse()
        .map_err(|e: String| parse_err(lno, e))?;
    let length: f64 = parse_num(toks.next(), lno, "tour length")?;
    let order = toks
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| parse_err(lno, format!("invalid tour index {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if !is_permutation(&order, inst.n()) {
        return Err(parse_err(
            lno,
            format!(
                "tour of instance {} is not a permutation of 0..{} (missing or duplicated index)",
                inst.id,
                inst.n()
            ),
        ));
    }
    let computed = cycle_length(&inst.points, &order);
    if (computed - length).abs() > 1e-9 * computed.max(1.0) {
        return Err(parse_err(
            lno,
            format!(
                "tour of instance {} stores length {length} but its order has length {computed}",
                inst.id
            ),
        ));
    }
    Ok(Tour {
        order,
        length,
        provenance,
    })
}
