//! CSV tables, atomic file output and gnuplot scripts.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::mixture::rate_exponent;

/// Version tag in the first line of every CSV.
pub const CSV_VERSION: &str = "dbnapprox-csv v1";

/// Columns of a rate table.
pub const RATE_COLUMNS: [&str; 10] = [
    "config_hash",
    "kind",
    "m",
    "trial",
    "seed",
    "q",
    "sigma",
    "error",
    "bound",
    "status",
];

/// In-memory CSV with a versioned comment line and a header row.
#[derive(Debug, Clone)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from the header");
        self.rows.push(row.into_iter().map(|c| sanitize(&c)).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, experiment: &str, hash: &str) -> String {
        let mut s = format!("# {CSV_VERSION} experiment={experiment} config={hash}\n");
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Cells never contain separators or line breaks.
fn sanitize(cell: &str) -> String {
    cell.replace([',', '\n', '\r'], ";")
}

/// Cell text for a number; shortest round-trip form.
pub fn num<T: Display>(v: T) -> String {
    v.to_string()
}

/// Files produced by a run, written together once everything succeeded.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, String)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn contents(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Each file goes to a temporary in `dir` and is renamed into place.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, contents) in &self.files {
            let mut tmp = NamedTempFile::new_in(dir)?;
            tmp.write_all(contents.as_bytes())?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, dir.join(name)));
        }
        staged
            .into_iter()
            .map(|(tmp, path)| {
                tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
                Ok(path)
            })
            .collect()
    }
}

/// Writes one file atomically.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Per-m means read back from a rate table.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub experiment: String,
    pub q: f64,
    pub points: Vec<(f64, f64, f64)>,
}

/// Parses the summary rows of a rate CSV.
pub fn read_rate_summary(text: &str) -> Result<RateSummary> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::Schema("empty file".into()))?;
    let experiment = first
        .strip_prefix(&format!("# {CSV_VERSION} "))
        .and_then(|r| r.split_whitespace().find_map(|t| t.strip_prefix("experiment=")))
        .ok_or_else(|| Error::Schema(format!("missing '{CSV_VERSION}' header comment")))?
        .to_string();
    let header = lines.next().ok_or_else(|| Error::Schema("missing header row".into()))?;
    if header.split(',').collect::<Vec<_>>() != RATE_COLUMNS {
        return Err(Error::Schema(format!("not a rate table: '{header}'")));
    }
    let mut q = None;
    let mut points = Vec::new();
    for (i, l) in lines.enumerate() {
        let c: Vec<&str> = l.split(',').collect();
        if c.len() != RATE_COLUMNS.len() {
            return Err(Error::Schema(format!("row {} has {} cells", i + 1, c.len())));
        }
        if c[1] != "summary" {
            continue;
        }
        let p = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Schema(format!("bad number '{s}' in row {}", i + 1)))
        };
        q = Some(p(c[5])?);
        points.push((p(c[2])?, p(c[7])?, p(c[8])?));
    }
    let q = q.ok_or_else(|| Error::Schema("no summary rows".into()))?;
    Ok(RateSummary { experiment, q, points })
}

/// Standalone gnuplot script for a rate summary: mean error against `m` on
/// log-log axes with the bound line of slope `−(1 − 1/min(q, 2))`.
pub fn plot_script(summary: &RateSummary, image: &str) -> String {
    let slope = -rate_exponent(summary.q);
    let (m0, _, b0) = summary.points[0];
    let mut s = String::new();
    s.push_str(&format!("# mean error against m for {}\n", summary.experiment));
    s.push_str("# columns: m mean_error bound\n");
    s.push_str("$data << EOD\n");
    for (m, e, b) in &summary.points {
        s.push_str(&format!("{m} {e} {b}\n"));
    }
    s.push_str("EOD\n");
    s.push_str(&format!("slope = {slope}\n"));
    s.push_str(&format!("bound(x) = {b0} * (x / {m0}) ** slope\n"));
    s.push_str("set terminal pngcairo size 800,600\n");
    s.push_str(&format!("set output '{image}'\n"));
    s.push_str("set logscale xy\nset xlabel 'm'\nset ylabel 'error'\nset key top right\n");
    s.push_str("plot $data using 1:2 with linespoints title 'mean_error', \\\n     bound(x) with lines title sprintf('bound, slope %.3f', slope)\n");
    s
}

/// Reads a rate CSV and writes `<stem>.gp` next to it.
pub fn emit_plot_script(csv: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(csv)?;
    let summary = read_rate_summary(&text)?;
    let stem = csv
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument("csv path has no file name".into()))?;
    let out = csv.with_file_name(format!("{stem}.gp"));
    write_atomic(&out, &plot_script(&summary, &format!("{stem}.png")))?;
    Ok(out)
}
