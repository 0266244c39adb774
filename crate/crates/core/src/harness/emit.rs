use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::experiment::PairedRunResult;
use super::summary::{ExperimentSummary, HistogramSummary};
use crate::error::{Error, Result};

pub const RESULTS_HEADER: [&str; 5] = ["run_seed", "arm", "objective", "n_fitness_evals", "wall_ms"];

/// Appends result rows to a CSV file, one row per arm and run.
pub struct ResultsWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl ResultsWriter {
    /// Creates (truncates) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner.write_record(RESULTS_HEADER).map_err(|e| csv_err(path, e))?;
        Ok(Self { path: path.to_path_buf(), inner })
    }

    pub fn append(&mut self, run: &PairedRunResult) -> Result<()> {
        for arm in &run.arms {
            let row = [
                run.run_seed.to_string(),
                arm.arm.clone(),
                arm.objective.to_string(),
                arm.n_fitness_evals.to_string(),
                arm.wall_ms.to_string(),
            ];
            self.inner.write_record(&row).map_err(|e| csv_err(&self.path, e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv { path: path.to_path_buf(), source }
}

/// Writes every run to a results CSV; an empty slice gives a header-only file.
pub fn emit_csv(results: &[PairedRunResult], path: &Path) -> Result<()> {
    let mut w = ResultsWriter::create(path)?;
    for r in results {
        w.append(r)?;
    }
    w.flush()
}

/// One parsed results row.
#[derive(Clone, Debug, PartialEq, serde::Deserialize)]
pub struct ResultRow {
    pub run_seed: u64,
    pub arm: String,
    pub objective: f64,
    pub n_fitness_evals: usize,
    pub wall_ms: u64,
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

/// Pretty-printed JSON with a trailing newline.
pub fn emit_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvgOptions {
    pub width: u32,
    pub height: u32,
    pub title: String,
    pub x_label: String,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self { width: 640, height: 400, title: String::new(), x_label: String::new() }
    }
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart of one or more count series on shared bin edges.
/// Every bar is a `<rect class="bar">` carrying `data-series`, `data-bin`
/// and `data-count`.
pub fn render_svg_histogram(edges: &[f64], series: &[(String, Vec<usize>)], opts: &SvgOptions) -> Result<String> {
    let bins = edges.len().saturating_sub(1);
    if bins == 0 || series.iter().any(|(_, c)| c.len() != bins) {
        return Err(Error::Config("histogram series do not match the bin edges".into()));
    }
    let (w, h) = (opts.width as f64, opts.height as f64);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = (w - left - right).max(1.0);
    let plot_h = (h - top - bottom).max(1.0);
    let max_count = series.iter().flat_map(|(_, c)| c.iter().copied()).max().unwrap_or(0).max(1);
    let slot = plot_w / bins as f64;
    let bar_w = slot / series.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        opts.width, opts.height, opts.width, opts.height
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(&opts.title));
    for (k, (name, counts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for (b, &c) in counts.iter().enumerate() {
            let bh = plot_h * c as f64 / max_count as f64;
            let x = left + slot * b as f64 + bar_w * k as f64;
            let y = top + plot_h - bh;
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-series="{}" data-bin="{b}" data-count="{c}" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{bh:.2}" fill="{color}" fill-opacity="0.8"/>"#,
                escape(name)
            );
        }
    }
    // axes
    let (x0, y0) = (left, top + plot_h);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="black"/>"#, left + plot_w);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{top:.2}" x2="{x0:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let ticks = bins.min(5);
    for i in 0..=ticks {
        let b = i * bins / ticks;
        let x = left + slot * b as f64;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            y0 + 16.0,
            format_tick(edges[b])
        );
    }
    let _ = writeln!(s, r#"<text x="{x0:.2}" y="{:.2}" text-anchor="end" font-size="11">{max_count}</text>"#, top + 4.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">0</text>"#, x0 - 4.0, y0);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        left + plot_w / 2.0,
        h - 12.0,
        escape(&opts.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {:.2})">count</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    // legend
    for (k, (name, _)) in series.iter().enumerate() {
        let y = top + 6.0 + 16.0 * k as f64;
        let x = left + plot_w - 110.0;
        let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="10" height="10" fill="{}"/>"#, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#, x + 14.0, y + 9.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-2 && v.abs() < 1e4) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Histogram of paired differences.
pub fn emit_svg_histogram(summary: &HistogramSummary, path: &Path, width: u32, height: u32) -> Result<()> {
    let opts = SvgOptions {
        width,
        height,
        title: format!("{} − {} (improved {:.0}%)", summary.arm_a, summary.arm_b, 100.0 * summary.fraction_improved),
        x_label: "paired difference".into(),
    };
    let series = vec![(format!("{} − {}", summary.arm_a, summary.arm_b), summary.counts.clone())];
    write_text(path, &render_svg_histogram(&summary.bin_edges, &series, &opts)?)
}

/// Per-arm objective histograms on shared bins.
pub fn emit_svg_arms(summary: &ExperimentSummary, path: &Path, width: u32, height: u32) -> Result<()> {
    write_text(path, &render_arms_svg(summary, width, height)?)
}

pub fn render_arms_svg(summary: &ExperimentSummary, width: u32, height: u32) -> Result<String> {
    let opts = SvgOptions { width, height, title: format!("{} by arm", summary.objective), x_label: summary.objective.clone() };
    let series: Vec<(String, Vec<usize>)> = summary
        .arms
        .iter()
        .map(|a| (a.clone(), summary.bins.counts.get(a).cloned().unwrap_or_default()))
        .collect();
    render_svg_histogram(&summary.bins.edges, &series, &opts)
}

/// `(series, count)` of every bar in an emitted SVG, in document order.
pub fn parse_svg_bars(svg: &str) -> Vec<(String, usize)> {
    let attr = |tag: &str, name: &str| -> Option<String> {
        let key = format!("{name}=\"");
        let start = tag.find(&key)? + key.len();
        let end = tag[start..].find('"')? + start;
        Some(tag[start..end].to_string())
    };
    svg.lines()
        .filter(|l| l.starts_with("<rect class=\"bar\""))
        .filter_map(|l| Some((attr(l, "data-series")?, attr(l, "data-count")?.parse().ok()?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::ArmResult;

    fn run(k: usize, a: f64, b: f64) -> PairedRunResult {
        let arm = |name: &str, objective: f64| ArmResult {
            arm: name.into(),
            x_init: vec![0.5],
            x0: vec![objective],
            objective,
            n_fitness_evals: 3,
            wall_ms: 0,
            curve: Some(vec![(1, objective), (0, objective)]),
            error: None,
        };
        PairedRunResult { run_index: k, run_seed: 100 + k as u64, arms: vec![arm("UD-0", a), arm("CD-5", b)] }
    }

    #[test]
    fn empty_results_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "run_seed,arm,objective,n_fitness_evals,wall_ms\n");
        assert!(read_results_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn csv_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_csv(&[run(0, 0.1, 0.2), run(1, 1.0 / 3.0, 2.5)], &p).unwrap();
        let rows = read_results_csv(&p).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].objective, 1.0 / 3.0);
        assert_eq!(rows[3].arm, "CD-5");
        assert_eq!(rows[3].run_seed, 101);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let results = vec![run(0, 0.1, 0.2), run(1, 0.7, 0.25)];
        emit_json(&results, &p).unwrap();
        let back: Vec<PairedRunResult> = load_json(&p).unwrap();
        assert_eq!(back, results);
    }

    #[test]
    fn svg_counts_match_summary() {
        let results: Vec<_> = (0..30).map(|k| run(k, k as f64, (k % 7) as f64)).collect();
        let s = crate::harness::summary::summarize(&results, "CD-5", "UD-0", 6).unwrap();
        let svg = render_svg_histogram(&s.bin_edges, &[("d".into(), s.counts.clone())], &SvgOptions::default()).unwrap();
        let bars = parse_svg_bars(&svg);
        assert_eq!(bars.iter().map(|b| b.1).collect::<Vec<_>>(), s.counts);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn io_error_names_path() {
        let err = emit_csv(&[], Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
