//! Shared report formatting.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use cycflow::instances::Dataset;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seconds with microsecond resolution, or `-` in deterministic mode.
pub fn secs(d: Duration, deterministic: bool) -> String {
    if deterministic {
        "-".to_string()
    } else {
        format!("{:.6}", d.as_secs_f64())
    }
}

pub fn millis(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e3)
}

/// Gap column names `(csv, human)` for the dataset's label provenance.
pub fn gap_names(provenance: &str) -> (&'static str, &'static str) {
    match provenance {
        "exact" => ("gap_pct", "gap %"),
        _ => ("gap_vs_heuristic_pct", "gap vs heuristic %"),
    }
}

/// Provenance block that opens every report.
pub fn header(command: &str, data_path: &Path, ds: &Dataset, config: &serde_json::Value) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "cycflow {VERSION} {command}");
    let _ = writeln!(s, "dataset:     {}", data_path.display());
    let _ = writeln!(s, "fingerprint: {}", ds.fingerprint());
    let _ = writeln!(s, "instances:   {}", ds.len());
    let _ = writeln!(s, "labels:      {}", ds.label_counts().summary());
    let _ = writeln!(s, "config:      {config}");
    s
}

/// Left-aligned first column, right-aligned rest.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut width: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, cells: &[String]| {
        for (i, c) in cells.iter().enumerate().take(cols) {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = width[0]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = width[i]);
            }
        }
        s.push('\n');
    };
    line(&mut s, &headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut s, &rule);
    for r in rows {
        line(&mut s, r);
    }
    s
}

/// Short hardware descriptor for benchmark reports.
pub fn hardware() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{cpu}; {cores} logical cores; {}-{}",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = table(&["method", "gap"], &[vec!["a".into(), "1.00".into()]]);
        assert_eq!(t, "method   gap\n------  ----\na       1.00\n");
    }

    #[test]
    fn deterministic_times_are_masked() {
        assert_eq!(secs(Duration::from_millis(5), true), "-");
        assert_eq!(secs(Duration::from_millis(5), false), "0.005000");
    }

    #[test]
    fn gap_column_tracks_provenance() {
        assert_eq!(gap_names("exact").0, "gap_pct");
        assert_eq!(gap_names("heuristic").1, "gap vs heuristic %");
        assert_eq!(gap_names("mixed").0, "gap_vs_heuristic_pct");
    }
}
