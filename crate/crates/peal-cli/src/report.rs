//! Run summaries: accuracy tables and an SVG chart.
//!
//! The SVG is generated directly as text (no plotting toolkit): one series
//! per run, mean polyline over a ±std band, with every aggregate data point
//! also emitted as a `<circle>` carrying `data-labeled`/`data-mean`/
//! `data-std` attributes so plots remain machine-checkable against the CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::CliError;

/// One run directory's aggregate curve.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    /// `(labeled_count, acc_mean, acc_std)` per cycle, in cycle order.
    pub rows: Vec<(usize, f64, f64)>,
}

fn manifest_value(manifest: &str, key: &str) -> Option<String> {
    manifest
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(|v| v.to_string()))
}

/// Load `aggregate.csv` + `manifest.txt` from a completed run directory.
pub fn load_run(dir: &Path) -> Result<RunSummary, CliError> {
    if dir.join("FAILED").exists() {
        return Err(CliError::Runtime(format!(
            "{} holds a failed run (see its FAILED marker)",
            dir.display()
        )));
    }
    let manifest = fs::read_to_string(dir.join("manifest.txt")).map_err(|e| {
        CliError::Runtime(format!("{} has no readable manifest.txt: {e}", dir.display()))
    })?;
    let strategy = manifest_value(&manifest, "strategy")
        .ok_or_else(|| CliError::Runtime(format!("{}: manifest lacks strategy", dir.display())))?;
    let mode = manifest_value(&manifest, "mode").unwrap_or_default();
    let balanced = manifest_value(&manifest, "balanced").as_deref() == Some("true");
    let mut label = if mode == "frozen" { format!("frozen-{strategy}") } else { strategy };
    if balanced {
        label.push_str("+balanced");
    }

    let csv = fs::read_to_string(dir.join("aggregate.csv")).map_err(|e| {
        CliError::Runtime(format!("{} has no readable aggregate.csv: {e}", dir.display()))
    })?;
    let mut rows = Vec::new();
    for (i, line) in csv.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Runtime(format!(
                "{}: aggregate.csv line {} has {} fields, expected 5",
                dir.display(),
                i + 1,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            CliError::Runtime(format!(
                "{}: aggregate.csv line {}: bad {what}",
                dir.display(),
                i + 1
            ))
        };
        rows.push((
            fields[1].parse::<usize>().map_err(|_| parse_err("labeled_count"))?,
            fields[2].parse::<f64>().map_err(|_| parse_err("acc_mean"))?,
            fields[3].parse::<f64>().map_err(|_| parse_err("acc_std"))?,
        ));
    }
    if rows.is_empty() {
        return Err(CliError::Runtime(format!("{}: aggregate.csv has no rows", dir.display())));
    }
    Ok(RunSummary { label, rows })
}

/// First labeled count whose mean accuracy reaches `target`, if any.
pub fn first_crossing(rows: &[(usize, f64, f64)], target: f64) -> Option<usize> {
    rows.iter().find(|(_, mean, _)| *mean >= target).map(|&(labeled, _, _)| labeled)
}

/// Accuracy-vs-labeled-count table across runs, plus the label-efficiency
/// line (samples to reach the target accuracy, by first crossing).
pub fn render_table(runs: &[RunSummary], target: f64) -> String {
    let mut counts: Vec<usize> = runs.iter().flat_map(|r| r.rows.iter().map(|&(c, _, _)| c)).collect();
    counts.sort_unstable();
    counts.dedup();

    let mut widths: Vec<usize> = Vec::with_capacity(runs.len() + 1);
    widths.push("labeled".len().max(counts.last().map_or(0, |c| c.to_string().len())));
    for r in runs {
        widths.push(r.label.len().max(8)); // accuracy cells are 8 chars
    }

    let mut out = String::new();
    let _ = write!(out, "{:>w$}", "labeled", w = widths[0]);
    for (r, w) in runs.iter().zip(&widths[1..]) {
        let _ = write!(out, "  {:>w$}", r.label, w = w);
    }
    out.push('\n');
    for &count in &counts {
        let _ = write!(out, "{count:>w$}", w = widths[0]);
        for (r, w) in runs.iter().zip(&widths[1..]) {
            match r.rows.iter().find(|&&(c, _, _)| c == count) {
                Some(&(_, mean, _)) => {
                    let _ = write!(out, "  {:>w$}", format!("{mean:.6}"), w = w);
                }
                None => {
                    let _ = write!(out, "  {:>w$}", "-", w = w);
                }
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\nsamples to reach {target:.2} mean accuracy (first crossing):");
    for r in runs {
        match first_crossing(&r.rows, target) {
            Some(labeled) => {
                let _ = writeln!(out, "  {}: {labeled}", r.label);
            }
            None => {
                let _ = writeln!(out, "  {}: not reached", r.label);
            }
        }
    }
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Render all runs as one SVG line chart (mean line, ±std band, legend).
pub fn render_svg(runs: &[RunSummary]) -> String {
    let (width, height) = (800.0, 500.0);
    let (left, right, top, bottom) = (70.0, 20.0, 20.0, 55.0);
    let (pw, ph) = (width - left - right, height - top - bottom);

    let x_max = runs
        .iter()
        .flat_map(|r| r.rows.iter().map(|&(c, _, _)| c))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for r in runs {
        for &(_, mean, std) in &r.rows {
            y_lo = y_lo.min(mean - std);
            y_hi = y_hi.max(mean + std);
        }
    }
    if !y_lo.is_finite() || !y_hi.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    // Snap to 0.05 ticks with headroom, inside [0, 1].
    y_lo = ((y_lo - 0.02).max(0.0) * 20.0).floor() / 20.0;
    y_hi = ((y_hi + 0.02).min(1.0) * 20.0).ceil() / 20.0;
    if y_hi - y_lo < 0.05 {
        (y_lo, y_hi) = ((y_lo - 0.05).max(0.0), (y_hi + 0.05).min(1.0));
    }

    let px = |labeled: f64| left + labeled / x_max * pw;
    let py = |acc: f64| top + (1.0 - (acc - y_lo) / (y_hi - y_lo)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);

    // Grid and ticks.
    let y_ticks = 6;
    for i in 0..=y_ticks {
        let acc = y_lo + (y_hi - y_lo) * i as f64 / y_ticks as f64;
        let y = py(acc);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            left + pw
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{acc:.2}</text>"#,
            left - 6.0,
            y + 4.0
        );
    }
    let x_ticks = 6;
    for i in 0..=x_ticks {
        let labeled = x_max * i as f64 / x_ticks as f64;
        let x = px(labeled);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#eeeeee"/>"##,
            top + ph
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
            top + ph + 18.0,
            labeled
        );
    }
    // Axes and titles.
    let _ = writeln!(
        svg,
        r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="#333333"/>"##,
        top + ph
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333333"/>"##,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">labeled samples</text>"#,
        left + pw / 2.0,
        height - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">test accuracy</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    for (i, run) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        // ±std band: upper edge left-to-right, lower edge back.
        let mut band = String::new();
        for &(c, mean, std) in &run.rows {
            let _ = write!(band, "{:.2},{:.2} ", px(c as f64), py((mean + std).min(y_hi)));
        }
        for &(c, mean, std) in run.rows.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(c as f64), py((mean - std).max(y_lo)));
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            band.trim_end()
        );
        let mut line = String::new();
        for &(c, mean, _) in &run.rows {
            let _ = write!(line, "{:.2},{:.2} ", px(c as f64), py(mean));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.trim_end()
        );
        for &(c, mean, std) in &run.rows {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" data-labeled="{c}" data-mean="{mean}" data-std="{std}"/>"#,
                px(c as f64),
                py(mean)
            );
        }
        // Legend entry.
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="12" height="12" fill="{color}"/>"#,
            left + pw - 150.0,
            ly - 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#,
            left + pw - 133.0,
            escape_xml(&run.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
