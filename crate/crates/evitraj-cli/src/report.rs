//! Report rendering: cross-model metric tables (CSV + aligned text) and
//! per-model figures (confidence-vs-speed scatter, entropy histograms).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use evitraj::eval::{parse_stats_csv, SceneStat};
use evitraj::metrics::EvalReport;

use crate::svg::{Scale, Svg};

pub struct NamedEval {
    pub name: String,
    pub report: EvalReport,
    pub id_stats: Vec<SceneStat>,
    pub ood_stats: Vec<SceneStat>,
}

pub fn load_eval(name: &str, dir: &Path) -> Result<NamedEval, String> {
    let read = |file: &str| -> Result<String, String> {
        fs::read_to_string(dir.join(file))
            .map_err(|e| format!("cannot read {}: {e}", dir.join(file).display()))
    };
    let report = EvalReport::from_csv(&read("report.csv")?)
        .map_err(|e| format!("{}: {e}", dir.join("report.csv").display()))?;
    let (id_stats, ood_stats) = parse_stats_csv(&read("stats.csv")?)
        .map_err(|e| format!("{}: {e}", dir.join("stats.csv").display()))?;
    Ok(NamedEval {
        name: name.to_string(),
        report,
        id_stats,
        ood_stats,
    })
}

fn cell(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) => format!("{x:.prec$}"),
        None => "--".to_string(),
    }
}

const QUALITY_COLS: [&str; 8] = [
    "top1_accuracy",
    "min_ade_1",
    "min_ade_5",
    "min_ade_10",
    "min_ade_15",
    "fde",
    "ece",
    "brier",
];

/// Trajectory-quality table: one row per model and test set.
pub fn quality_csv(evals: &[NamedEval]) -> String {
    let mut out = String::from("model,set,");
    out.push_str(&QUALITY_COLS.join(","));
    out.push('\n');
    for ev in evals {
        for set in ["id", "ood"] {
            let cells: Vec<String> = QUALITY_COLS
                .iter()
                .map(|name| {
                    let row = ev.report.get(name);
                    let v = match set {
                        "id" => row.and_then(|r| r.id),
                        _ => row.and_then(|r| r.ood),
                    };
                    cell(v, 6)
                })
                .collect();
            writeln!(out, "{},{set},{}", ev.name, cells.join(",")).unwrap();
        }
    }
    out
}

const UNCERTAINTY_COLS: [(&str, &str, bool); 10] = [
    // (csv column, report row, take ood column)
    ("conf_auroc_aleatoric_id", "conf_auroc_aleatoric", false),
    ("conf_apr_aleatoric_id", "conf_apr_aleatoric", false),
    ("conf_auroc_epistemic_id", "conf_auroc_epistemic", false),
    ("conf_apr_epistemic_id", "conf_apr_epistemic", false),
    ("ood_auroc_epistemic", "ood_auroc_epistemic", true),
    ("ood_apr_epistemic", "ood_apr_epistemic", true),
    ("ood_auroc_aleatoric", "ood_auroc_aleatoric", true),
    ("ood_apr_aleatoric", "ood_apr_aleatoric", true),
    ("alpha0_ratio", "alpha0_ratio", true),
    ("dir_entropy_ood_minus_id", "dir_entropy_mean", true),
];

/// Uncertainty-quality table: one row per model. The last column is the
/// OOD−ID gap of the mean Dirichlet entropy.
pub fn uncertainty_csv(evals: &[NamedEval]) -> String {
    let mut out = String::from("model,");
    out.push_str(
        &UNCERTAINTY_COLS
            .iter()
            .map(|(c, _, _)| *c)
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for ev in evals {
        let cells: Vec<String> = UNCERTAINTY_COLS
            .iter()
            .map(|&(col, row_name, from_ood)| {
                let row = ev.report.get(row_name);
                let v = if col == "dir_entropy_ood_minus_id" {
                    match row.map(|r| (r.id, r.ood)) {
                        Some((Some(i), Some(o))) => Some(o - i),
                        _ => None,
                    }
                } else if from_ood {
                    row.and_then(|r| r.ood)
                } else {
                    row.and_then(|r| r.id)
                };
                cell(v, 6)
            })
            .collect();
        writeln!(out, "{},{}", ev.name, cells.join(",")).unwrap();
    }
    out
}

/// Render a CSV table as aligned monospace text.
pub fn align_csv(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').collect())
        .collect();
    if rows.is_empty() {
        return String::new();
    }
    let cols = rows.iter().map(|r| r.len()).max().unwrap();
    let mut widths = vec![0usize; cols];
    for r in &rows {
        for (i, c) in r.iter().enumerate() {
            widths[i] = widths[i].max(c.len());
        }
    }
    let mut out = String::new();
    for (ri, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:>width$}", width = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if ri == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

const FIG_W: f64 = 560.0;
const FIG_H: f64 = 360.0;
const M_LEFT: f64 = 58.0;
const M_RIGHT: f64 = 16.0;
const M_TOP: f64 = 26.0;
const M_BOTTOM: f64 = 42.0;
const ID_COLOR: &str = "#4477aa";
const OOD_COLOR: &str = "#cc4444";
const MAX_POINTS: usize = 1500;

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn axes(svg: &mut Svg, sx: &Scale, sy: &Scale, x_label: &str, y_label: &str, title: &str) {
    let (x0, x1) = (sx.px_lo, sx.px_hi);
    let (y0, y1) = (sy.px_lo, sy.px_hi);
    svg.line(x0, y0, x1, y0, "#333333", 1.0);
    svg.line(x0, y0, x0, y1, "#333333", 1.0);
    for t in sx.ticks() {
        let px = sx.at(t);
        svg.line(px, y0, px, y0 + 4.0, "#333333", 1.0);
        svg.text(px, y0 + 16.0, 10.0, "middle", &tick_label(t));
    }
    for t in sy.ticks() {
        let py = sy.at(t);
        svg.line(x0 - 4.0, py, x0, py, "#333333", 1.0);
        svg.text(x0 - 7.0, py + 3.5, 10.0, "end", &tick_label(t));
    }
    svg.text((x0 + x1) / 2.0, y0 + 32.0, 11.0, "middle", x_label);
    svg.text(14.0, M_TOP - 8.0, 11.0, "start", y_label);
    svg.text((x0 + x1) / 2.0, M_TOP - 8.0, 12.0, "middle", title);
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    assert!(lo.is_finite() && hi.is_finite(), "no finite values to plot");
    (lo, hi)
}

fn thin(stats: &[SceneStat]) -> Vec<&SceneStat> {
    let step = stats.len().div_ceil(MAX_POINTS).max(1);
    stats.iter().step_by(step).collect()
}

fn log_conf(s: &SceneStat) -> f64 {
    (s.confidence.max(1e-12)).log10()
}

/// Scatter of log10 confidence against the speed heuristic, ID and OOD in
/// different colors, with a binned-mean polyline over the union.
pub fn scatter_svg(ev: &NamedEval) -> String {
    let all: Vec<&SceneStat> = ev.id_stats.iter().chain(&ev.ood_stats).collect();
    let (x_lo, x_hi) = bounds(all.iter().map(|s| s.speed));
    let (y_lo, y_hi) = bounds(all.iter().map(|s| log_conf(s)));
    let pad = 0.05 * (y_hi - y_lo).max(0.2);
    let sx = Scale::new(x_lo, x_hi, M_LEFT, FIG_W - M_RIGHT);
    let sy = Scale::new(y_lo - pad, y_hi + pad, FIG_H - M_BOTTOM, M_TOP);

    let mut svg = Svg::new(FIG_W, FIG_H);
    axes(
        &mut svg,
        &sx,
        &sy,
        "speed heuristic (m moved / s)",
        "log10 confidence",
        &format!("{}: confidence vs speed", ev.name),
    );
    for (stats, color) in [(&ev.id_stats, ID_COLOR), (&ev.ood_stats, OOD_COLOR)] {
        for s in thin(stats) {
            svg.circle(sx.at(s.speed), sy.at(log_conf(s)), 2.0, color, 0.45);
        }
    }

    // Binned means over the union, in log space.
    const BINS: usize = 12;
    let mut sums = vec![0.0f64; BINS];
    let mut counts = vec![0usize; BINS];
    let span = (x_hi - x_lo).max(1e-9);
    for s in &all {
        let b = (((s.speed - x_lo) / span * BINS as f64) as usize).min(BINS - 1);
        sums[b] += log_conf(s);
        counts[b] += 1;
    }
    let line: Vec<(f64, f64)> = (0..BINS)
        .filter(|&b| counts[b] > 0)
        .map(|b| {
            let center = x_lo + (b as f64 + 0.5) / BINS as f64 * span;
            (sx.at(center), sy.at(sums[b] / counts[b] as f64))
        })
        .collect();
    svg.polyline(&line, "#222222", 2.0);

    // Legend.
    svg.circle(FIG_W - 150.0, M_TOP + 10.0, 3.0, ID_COLOR, 0.9);
    svg.text(FIG_W - 142.0, M_TOP + 13.5, 10.0, "start", "in-distribution");
    svg.circle(FIG_W - 150.0, M_TOP + 26.0, 3.0, OOD_COLOR, 0.9);
    svg.text(FIG_W - 142.0, M_TOP + 29.5, 10.0, "start", "OOD");
    svg.finish()
}

/// Grouped ID/OOD histogram of per-scene entropy, heights normalized to the
/// fraction of each set.
pub fn hist_svg(ev: &NamedEval) -> String {
    const BINS: usize = 20;
    let all = ev.id_stats.iter().chain(&ev.ood_stats);
    let (lo, hi) = bounds(all.map(|s| s.entropy));
    let span = (hi - lo).max(1e-9);
    let mut frac = [[0.0f64; BINS]; 2];
    for (which, stats) in [(0usize, &ev.id_stats), (1, &ev.ood_stats)] {
        for s in stats.iter() {
            let b = (((s.entropy - lo) / span * BINS as f64) as usize).min(BINS - 1);
            frac[which][b] += 1.0 / stats.len() as f64;
        }
    }
    let peak = frac.iter().flatten().cloned().fold(0.0f64, f64::max);

    let sx = Scale::new(lo, hi, M_LEFT, FIG_W - M_RIGHT);
    let sy = Scale::new(0.0, peak * 1.05, FIG_H - M_BOTTOM, M_TOP);
    let mut svg = Svg::new(FIG_W, FIG_H);
    axes(
        &mut svg,
        &sx,
        &sy,
        "entropy",
        "fraction of set",
        &format!("{}: ID vs OOD entropy", ev.name),
    );
    let base = sy.at(0.0);
    for b in 0..BINS {
        let x0 = sx.at(lo + b as f64 / BINS as f64 * span);
        let x1 = sx.at(lo + (b + 1) as f64 / BINS as f64 * span);
        let w = (x1 - x0) / 2.0 - 0.5;
        for (which, color) in [(0usize, ID_COLOR), (1, OOD_COLOR)] {
            let h = frac[which][b];
            if h > 0.0 {
                let top = sy.at(h);
                let x = x0 + which as f64 * (w + 1.0);
                svg.rect(x, top, w, base - top, color, 0.8);
            }
        }
    }
    svg.rect(FIG_W - 160.0, M_TOP + 4.0, 10.0, 10.0, ID_COLOR, 0.8);
    svg.text(FIG_W - 146.0, M_TOP + 13.0, 10.0, "start", "in-distribution");
    svg.rect(FIG_W - 160.0, M_TOP + 20.0, 10.0, 10.0, OOD_COLOR, 0.8);
    svg.text(FIG_W - 146.0, M_TOP + 29.0, 10.0, "start", "OOD");
    svg.finish()
}

/// Write all report artifacts into `out`; returns the created paths.
pub fn write_report(out: &Path, evals: &[NamedEval], force: bool) -> Result<Vec<PathBuf>, String> {
    assert!(!evals.is_empty());
    fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    let quality = quality_csv(evals);
    let uncertainty = uncertainty_csv(evals);
    let mut text = String::from("Trajectory quality\n\n");
    text.push_str(&align_csv(&quality));
    text.push_str("\nUncertainty quality\n\n");
    text.push_str(&align_csv(&uncertainty));

    let mut files: Vec<(PathBuf, String)> = vec![
        (out.join("table_quality.csv"), quality),
        (out.join("table_uncertainty.csv"), uncertainty),
        (out.join("tables.txt"), text),
    ];
    for ev in evals {
        files.push((out.join(format!("fig_conf_speed_{}.svg", ev.name)), scatter_svg(ev)));
        files.push((out.join(format!("fig_entropy_hist_{}.svg", ev.name)), hist_svg(ev)));
    }
    let mut written = Vec::new();
    for (path, content) in files {
        if path.exists() && !force {
            return Err(format!(
                "{} exists; pass --force to overwrite",
                path.display()
            ));
        }
        fs::write(&path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
