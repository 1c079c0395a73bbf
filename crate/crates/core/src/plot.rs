//! Deterministic SVG charts built from the CSV artifacts.
//!
//! Every number is written with fixed precision so the same CSV always yields
//! byte-identical SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::spectral::FilterSpectrum;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Magnitude scaling for spectrum heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    /// `ln(1 + m)`.
    Log,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Linear => "linear",
            Scale::Log => "log1p",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Scale::Linear),
            "log" | "log1p" => Some(Scale::Log),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart of several series sharing one x and one y axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<desc>x=[{x0:.6},{x1:.6}] y=[{y0:.6},{y1:.6}]</desc>");
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, MARGIN_L + pw / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{MARGIN_L:.1},{MARGIN_T:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        MARGIN_T + ph,
        MARGIN_L + pw
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let xv = x0 + f * (x1 - x0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.4}</text>"#,
            MARGIN_L - 6.0,
            sy(yv) + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#,
            sx(xv),
            MARGIN_T + ph + 18.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN_T + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 16.0,
            lx + 20.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grayscale heatmap of a row-major grid, min–max normalized after scaling.
/// The scale and normalization bounds are recorded in the SVG.
pub fn heatmap(title: &str, grid: &[f64], rows: usize, cols: usize, scale: Scale) -> String {
    let cell = 48.0;
    let scaled: Vec<f64> = grid
        .iter()
        .map(|&m| match scale {
            Scale::Linear => m,
            Scale::Log => m.max(0.0).ln_1p(),
        })
        .collect();
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if scaled.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let w = cols as f64 * cell + 40.0;
    let h = rows as f64 * cell + 70.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12" data-scale="{}" data-min="{lo:.9}" data-max="{hi:.9}">"#,
        scale.as_str()
    );
    let _ = writeln!(out, "<desc>scale={} min={lo:.9} max={hi:.9}</desc>", scale.as_str());
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="20" y="22" font-size="14">{}</text>"#, escape(title));
    for r in 0..rows {
        for c in 0..cols {
            let v = scaled[r * cols + c];
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let g = (t * 255.0).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"><title>{:.6}</title></rect>"#,
                20.0 + c as f64 * cell,
                35.0 + r as f64 * cell,
                grid[r * cols + c]
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.1}">{} [{lo:.4}, {hi:.4}]</text>"#,
        35.0 + rows as f64 * cell + 20.0,
        scale.as_str()
    );
    out.push_str("</svg>\n");
    out
}

/// Bar chart of a density histogram (`bin_lo,bin_hi,count,rho` rows).
pub fn histogram_chart(title: &str, bins: &[(f64, f64, f64)]) -> String {
    let pw = WIDTH - MARGIN_L - 40.0;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let (x0, x1) = bounds(bins.iter().flat_map(|b| [b.0, b.1]));
    let ymax = bins.iter().map(|b| b.2).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<desc>x=[{x0:.6},{x1:.6}] rho_max={ymax:.9}</desc>");
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, MARGIN_L + pw / 2.0, escape(title));
    for &(lo, hi, rho) in bins {
        let x = MARGIN_L + (lo - x0) / (x1 - x0) * pw;
        let bw = (hi - lo) / (x1 - x0) * pw;
        let bh = rho / ymax * ph;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{bh:.2}\" fill=\"#1f77b4\"/>",
            MARGIN_T + ph - bh
        );
    }
    let _ = writeln!(
        out,
        r#"<path d="M{MARGIN_L:.1},{MARGIN_T:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        MARGIN_T + ph,
        MARGIN_L + pw
    );
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN_L:.1}" y="{:.1}">{x0:.3}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{x1:.3}</text>"#,
        MARGIN_T + ph + 18.0,
        MARGIN_L + pw,
        MARGIN_T + ph + 18.0
    );
    out.push_str("</svg>\n");
    out
}

const METRIC_CHARTS: [(&str, &str); 4] = [
    ("test_acc", "Test accuracy"),
    ("test_loss", "Test loss"),
    ("train_loss", "Training loss"),
    ("entropy_global", "Conv weight entropy (nats)"),
];

/// Series per run (or per variant for a single-run file), keyed by label.
fn metric_series(path: &Path, column: &str) -> Result<Vec<Series>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::config(format!("{}: {e}", path.display())))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (Some(epoch_i), Some(value_i)) = (find("epoch"), find(column)) else {
        return Err(Error::config(format!("{}: missing epoch or {column} column", path.display())));
    };
    let label_i = find("run").or_else(|| find("variant"));
    let status_i = find("status");
    let mut grouped: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if status_i.is_some_and(|i| &row[i] != "ok") {
            continue;
        }
        let parse = |i: usize| row[i].parse::<f64>().ok();
        if let (Some(x), Some(y)) = (parse(epoch_i), parse(value_i)) {
            let label = label_i.map(|i| row[i].to_string()).unwrap_or_default();
            grouped.entry(label).or_default().push((x, y));
        }
    }
    Ok(grouped.into_iter().map(|(label, points)| Series { label, points }).collect())
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn relative_stem(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("__")
}

/// Renders every chart derivable from the CSV files under `input` into
/// `out`, returning the written paths in order.
///
/// Metric charts come from `comparison.csv` (preferred) or `metrics.csv` at
/// the top of `input`; spectrum heatmaps and histograms from any
/// `spectrum_*.csv` / `hist_*.csv` below it.
pub fn export_plots(input: &Path, out: &Path, scale: Scale) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Err(Error::config(format!("input directory not found: {}", input.display())));
    }
    let metrics = ["comparison.csv", "metrics.csv"].iter().map(|f| input.join(f)).find(|p| p.is_file());
    let mut files = Vec::new();
    collect_files(input, &mut files)?;
    let name_of = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let spectra: Vec<_> = files
        .iter()
        .filter(|p| name_of(p).starts_with("spectrum_") && name_of(p).ends_with(".csv"))
        .collect();
    let hists: Vec<_> = files
        .iter()
        .filter(|p| name_of(p).starts_with("hist_") && name_of(p).ends_with(".csv"))
        .collect();
    if metrics.is_none() && spectra.is_empty() && hists.is_empty() {
        return Err(Error::config(format!(
            "no metrics.csv, comparison.csv, spectrum_*.csv or hist_*.csv under {}",
            input.display()
        )));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    if let Some(m) = &metrics {
        for (column, title) in METRIC_CHARTS {
            let series = metric_series(m, column)?;
            let path = out.join(format!("{column}.svg"));
            fs::write(&path, line_chart(title, "epoch", column, &series))?;
            written.push(path);
        }
    }
    for p in spectra {
        let s = FilterSpectrum::from_csv(&fs::read_to_string(p)?)?;
        let title = format!("|DFT| {} ({})", s.layer_name, scale.as_str());
        let path = out.join(format!("{}.svg", relative_stem(input, p)));
        fs::write(&path, heatmap(&title, &s.grid, s.rows, s.cols, scale))?;
        written.push(path);
    }
    for p in hists {
        let text = fs::read_to_string(p)?;
        let mut bins = Vec::new();
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("bin_lo")) {
            let f: Vec<f64> = line.split(',').filter_map(|v| v.parse().ok()).collect();
            if f.len() != 4 {
                return Err(Error::config(format!("{}: malformed histogram row {line:?}", p.display())));
            }
            bins.push((f[0], f[1], f[3]));
        }
        let path = out.join(format!("{}.svg", relative_stem(input, p)));
        fs::write(&path, histogram_chart(&name_of(p), &bins))?;
        written.push(path);
    }
    Ok(written)
}
