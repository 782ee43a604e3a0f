use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::LambdaFilter;
use super::rates::{grouped_values, RateFit};
use super::run::{RateRow, RateTable};
use crate::error::{Error, Result};

pub const RATES_HEADER: [&str; 8] = [
    "scenario",
    "n",
    "replicate",
    "metric",
    "value",
    "lambda_hat",
    "wallclock_seconds",
    "failed",
];

pub const RATEFITS_HEADER: [&str; 12] = [
    "scenario",
    "metric",
    "filter",
    "slope",
    "intercept",
    "r_squared",
    "theoretical_exponent",
    "tolerance",
    "pass",
    "n_points",
    "replicates_used",
    "lambda_star",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

pub fn write_rates_csv(table: &RateTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(RATES_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &table.rows {
        w.write_record([
            r.scenario.clone(),
            r.n.to_string(),
            r.replicate.to_string(),
            r.metric.clone(),
            r.value.to_string(),
            r.lambda_hat.to_string(),
            r.wallclock_seconds.to_string(),
            r.failed.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rates_csv(path: &Path) -> Result<RateTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(RATES_HEADER) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected header {}", RATES_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<RateRow>() {
        rows.push(rec.map_err(|e| csv_err(path, e))?);
    }
    Ok(RateTable { rows })
}

pub fn write_ratefits_csv(fits: &[RateFit], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(RATEFITS_HEADER).map_err(|e| csv_err(path, e))?;
    for f in fits {
        w.write_record([
            f.scenario.clone(),
            f.metric.clone(),
            f.filter.label().to_string(),
            f.slope.to_string(),
            f.intercept.to_string(),
            f.r_squared.to_string(),
            f.theoretical_exponent.to_string(),
            f.tolerance.to_string(),
            f.pass.to_string(),
            f.n_points.to_string(),
            f.replicates_used.to_string(),
            f.lambda_star.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Series {
    label: String,
    /// `(n, mean, q12.5, q87.5)`, positive values only.
    points: Vec<(f64, f64, f64, f64)>,
    fit: Option<RateFit>,
}

fn series(table: &RateTable, scenario: &str, metric: &str, filter: LambdaFilter, lambda_star: f64) -> Vec<(f64, f64, f64, f64)> {
    grouped_values(table, Some(scenario), metric, filter, lambda_star)
        .into_iter()
        .filter_map(|(n, mut v)| {
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let lo = quantile(&v, 0.125);
            let hi = quantile(&v, 0.875);
            (mean > 0.0 && lo > 0.0).then_some((n as f64, mean, lo, hi))
        })
        .collect()
}

const COLORS: [&str; 4] = ["#1f5fa8", "#c0392b", "#2e8b57", "#7d3c98"];

fn render_svg(title: &str, all: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let pts = all.iter().flat_map(|s| s.points.iter());
    let xs: Vec<f64> = pts.clone().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.flat_map(|p| [p.1.ln(), p.2.ln(), p.3.ln()]).collect();
    let (mut x0, mut x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (mut y0, mut y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| top + (y1 - y) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        w - left - right,
        h - top - bottom
    );
    let mut ns: Vec<f64> = all.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    for n in &ns {
        let x = px(n.ln());
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#444"/>"##, h - bottom, h - bottom + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-size="10">{n}</text>"#, h - bottom + 17.0);
    }
    for e in (y0 / std::f64::consts::LN_10).ceil() as i32..=(y1 / std::f64::consts::LN_10).floor() as i32 {
        let y = py(e as f64 * std::f64::consts::LN_10);
        let _ = writeln!(s, r##"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="#444"/>"##, left - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10">1e{e}</text>"#, left - 8.0, y + 3.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">n (log scale)</text>"#, (left + w - right) / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">error (log scale)</text>"#,
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0
    );
    for (i, ser) in all.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if ser.points.len() > 1 {
            let mut band: Vec<String> = ser.points.iter().map(|p| format!("{:.2},{:.2}", px(p.0.ln()), py(p.3.ln()))).collect();
            band.extend(ser.points.iter().rev().map(|p| format!("{:.2},{:.2}", px(p.0.ln()), py(p.2.ln()))));
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, band.join(" "));
        }
        for p in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, px(p.0.ln()), py(p.1.ln()));
        }
        let mut legend = ser.label.clone();
        if let Some(fit) = &ser.fit {
            let line: Vec<String> = ser
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.0.ln()), py(fit.predict(p.0).ln())))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
            let _ = write!(legend, ": slope {:.3} (target {:.3})", fit.slope, fit.theoretical_exponent);
        }
        let ly = top + 16.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, left + 10.0, ly - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, left + 26.0, escape(&legend));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `rates.csv`, `ratefits.csv` and one SVG per `(scenario, metric)`
/// into `out_dir` (created if missing). Each SVG shows per-`n` means, a
/// 12.5%-87.5% band and, per rate fit of that metric, the fitted line.
pub fn emit_outputs(table: &RateTable, fits: &[RateFit], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let rates = out_dir.join("rates.csv");
    write_rates_csv(table, &rates)?;
    written.push(rates);
    let ratefits = out_dir.join("ratefits.csv");
    write_ratefits_csv(fits, &ratefits)?;
    written.push(ratefits);

    let mut keys: BTreeMap<(String, String), ()> = BTreeMap::new();
    for r in table.rows.iter().filter(|r| !r.failed) {
        keys.insert((r.scenario.clone(), r.metric.clone()), ());
    }
    for (scenario, metric) in keys.into_keys() {
        let matching: Vec<&RateFit> = fits.iter().filter(|f| f.scenario == scenario && f.metric == metric).collect();
        let all: Vec<Series> = if matching.is_empty() {
            vec![Series {
                label: "all replicates".into(),
                points: series(table, &scenario, &metric, LambdaFilter::All, 0.0),
                fit: None,
            }]
        } else {
            matching
                .iter()
                .map(|f| Series {
                    label: match f.filter {
                        LambdaFilter::All => "all replicates".into(),
                        LambdaFilter::AboveStar => "lambda_hat > lambda*".into(),
                        LambdaFilter::AtMostStar => "lambda_hat <= lambda*".into(),
                    },
                    points: series(table, &scenario, &metric, f.filter, f.lambda_star),
                    fit: Some((*f).clone()),
                })
                .collect()
        };
        if all.iter().all(|s| s.points.is_empty()) {
            continue;
        }
        let path = out_dir.join(format!("{scenario}_{metric}.svg"));
        let svg = render_svg(&format!("{scenario}: {metric}"), &all);
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
