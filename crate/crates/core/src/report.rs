//! Aggregate CSVs and static SVG plots built from per-run ADP CSVs only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::adp::{aggregate, aggregate_csv, convergence_csv, convergence_report, AdpLog, AggregateRow, Band};
use crate::error::{Error, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Seed runs of one method: every `*/adp.csv` below `dir`, sorted by path.
pub fn load_method(dir: &Path) -> Result<(String, Vec<AdpLog>)> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let mut paths: Vec<PathBuf> = Vec::new();
    let direct = dir.join("adp.csv");
    if direct.is_file() {
        paths.push(direct);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let csv = entry.path().join("adp.csv");
        if csv.is_file() {
            paths.push(csv);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Eval(format!("no adp.csv found under {}", dir.display())));
    }
    let logs = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            AdpLog::from_csv(&text).map_err(|e| Error::Eval(format!("{}: {e}", p.display())))
        })
        .collect::<Result<_>>()?;
    Ok((name, logs))
}

struct Panel<'a> {
    title: &'a str,
    band: fn(&AggregateRow) -> Option<Band>,
}

/// One SVG with median curves and shaded 95% bands per method: target ADP on
/// top, source retention below when any method logged it. The step axis is logarithmic.
pub fn render_svg(methods: &[(String, Vec<AggregateRow>)]) -> String {
    let mut panels = vec![Panel {
        title: "target ADP (top-1)",
        band: |r| Some(r.target_top1),
    }];
    if methods.iter().any(|(_, rows)| rows.iter().any(|r| r.source_top1.is_some())) {
        panels.push(Panel {
            title: "source retention (top-1)",
            band: |r| r.source_top1,
        });
    }
    let (width, panel_h, left, right, top, gap) = (720.0, 260.0, 60.0, 170.0, 30.0, 50.0);
    let height = top + panels.len() as f64 * (panel_h + gap);
    let max_step = methods
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.step))
        .max()
        .unwrap_or(1)
        .max(2) as f64;
    let plot_w = width - left - right;
    let x = |step: usize| left + (step as f64).ln() / max_step.ln() * plot_w;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, panel) in panels.iter().enumerate() {
        let y0 = top + p as f64 * (panel_h + gap);
        let y = |v: f64| y0 + (1.0 - v.clamp(0.0, 1.0)) * panel_h;
        let _ = writeln!(svg, r#"<text x="{left}" y="{}" font-size="13">{}</text>"#, y0 - 8.0, panel.title);
        let _ = writeln!(
            svg,
            r##"<rect x="{left}" y="{y0}" width="{plot_w}" height="{panel_h}" fill="none" stroke="#444"/>"##
        );
        for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let ty = y(tick);
            let _ = writeln!(
                svg,
                r##"<line x1="{left}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
                left + plot_w,
                left - 6.0,
                ty + 4.0
            );
        }
        let mut step = 1usize;
        while step as f64 <= max_step {
            let tx = x(step);
            let _ = writeln!(
                svg,
                r#"<text x="{tx:.1}" y="{:.1}" text-anchor="middle">{step}</text>"#,
                y0 + panel_h + 14.0
            );
            step *= 2;
        }
        for (m, (name, rows)) in methods.iter().enumerate() {
            let color = PALETTE[m % PALETTE.len()];
            let pts: Vec<(usize, Band)> = rows.iter().filter_map(|r| (panel.band)(r).map(|b| (r.step, b))).collect();
            if pts.is_empty() {
                continue;
            }
            let mut poly = String::new();
            for (s, b) in &pts {
                let _ = write!(poly, "{:.1},{:.1} ", x(*s), y(b.hi));
            }
            for (s, b) in pts.iter().rev() {
                let _ = write!(poly, "{:.1},{:.1} ", x(*s), y(b.lo));
            }
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                poly.trim_end()
            );
            let line: Vec<String> = pts
                .iter()
                .map(|(s, b)| format!("{:.1},{:.1}", x(*s), y(b.median)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
            if p == 0 {
                let ly = y0 + 16.0 + m as f64 * 16.0;
                let lx = left + plot_w + 12.0;
                let _ = writeln!(
                    svg,
                    r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
                    lx + 18.0,
                    lx + 24.0,
                    ly + 4.0,
                    escape(name)
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#,
            left + plot_w / 2.0,
            y0 + panel_h + 30.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Files written by [`write_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub aggregates: Vec<PathBuf>,
    pub convergence: PathBuf,
    pub svg: PathBuf,
}

/// Reads every method directory and writes `aggregate-<method>.csv`,
/// `convergence.csv` and `adp.svg` into `out`.
pub fn write_report(method_dirs: &[PathBuf], out: &Path) -> Result<ReportFiles> {
    if method_dirs.is_empty() {
        return Err(Error::Eval("report needs at least one run directory".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut methods = Vec::new();
    let mut all_runs = Vec::new();
    let mut aggregates = Vec::new();
    for dir in method_dirs {
        let (name, logs) = load_method(dir)?;
        let rows = aggregate(&logs);
        let path = out.join(format!("aggregate-{name}.csv"));
        fs::write(&path, aggregate_csv(&rows)).map_err(|e| Error::io(&path, e))?;
        aggregates.push(path);
        all_runs.extend(logs.into_iter().map(|l| (name.clone(), l)));
        methods.push((name, rows));
    }
    let convergence = out.join("convergence.csv");
    fs::write(&convergence, convergence_csv(&convergence_report(&all_runs)?))
        .map_err(|e| Error::io(&convergence, e))?;
    let svg = out.join("adp.svg");
    fs::write(&svg, render_svg(&methods)).map_err(|e| Error::io(&svg, e))?;
    Ok(ReportFiles {
        aggregates,
        convergence,
        svg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adp::AdpRecord;

    fn log(accs: &[(usize, f64)]) -> AdpLog {
        let mut l = AdpLog::default();
        for &(step, acc) in accs {
            l.push(AdpRecord {
                step,
                target_top1: acc,
                target_top5: None,
                source_top1: Some(0.9),
                best_val_step: step,
                w_fro: 1.0,
                theta_dist: 0.5,
            })
            .unwrap();
        }
        l
    }

    #[test]
    fn svg_has_one_band_and_curve_per_method_and_panel() {
        let a = aggregate(&[log(&[(1, 0.2), (2, 0.5)]), log(&[(1, 0.3), (2, 0.6)])]);
        let b = aggregate(&[log(&[(1, 0.1), (2, 0.2)])]);
        let svg = render_svg(&[("fast".into(), a), ("traditional <k>".into(), b)]);
        assert_eq!(svg.matches("<polygon").count(), 4);
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.contains("traditional &lt;k&gt;"));
    }

    #[test]
    fn report_round_trips_through_csv_files() {
        let root = std::env::temp_dir().join(format!("fast-transfer-report-{}", std::process::id()));
        let method = root.join("fast");
        for (i, l) in [log(&[(1, 0.2), (2, 0.5)]), log(&[(1, 0.4), (2, 0.7)])].iter().enumerate() {
            let d = method.join(format!("seed-{i}"));
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join("adp.csv"), l.to_csv()).unwrap();
        }
        let files = write_report(&[method], &root.join("report")).unwrap();
        let agg = fs::read_to_string(&files.aggregates[0]).unwrap();
        assert!(agg.lines().nth(2).unwrap().starts_with("2,2,0.6,"));
        assert!(files.svg.is_file());
        assert!(write_report(&[root.join("missing")], &root.join("r2")).is_err());
    }
}
