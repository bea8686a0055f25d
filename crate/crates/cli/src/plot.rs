use std::fmt::Write as _;
use std::path::Path;

use air_core::nn::checkpoint::write_atomic;

use crate::exit::{CliError, CliResult};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_Y: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Parsed metrics: header plus rows of optional values (empty cells are `None`).
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::validation(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::validation(format!("row {}: {e}", i + 1)))?;
        let row = record
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .map(Some)
                        .map_err(|_| CliError::validation(format!("row {}: `{cell}` is not a number", i + 1)))
                }
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        None
    } else if lo == hi {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

/// One polyline per requested column against `env_steps` (row index if absent).
///
/// A single column is drawn on its own value axis; with several columns each
/// series is scaled to its own range, shown in the legend.
pub fn render_svg(table: &Table, columns: &[String]) -> CliResult<String> {
    let mut idx = Vec::new();
    for c in columns {
        match table.columns.iter().position(|h| h == c) {
            Some(i) => idx.push(i),
            None => {
                return Err(CliError::validation(format!(
                    "unknown column `{c}`; available columns: {}",
                    table.columns.join(", ")
                )))
            }
        }
    }
    let x_col = table.columns.iter().position(|h| h == "env_steps");
    let xs: Vec<Option<f64>> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| match x_col {
            Some(c) => r.get(c).copied().flatten(),
            None => Some(i as f64),
        })
        .collect();
    let x_label = if x_col.is_some() { "env_steps" } else { "row" };
    let (x0, x1) = range(xs.iter().flatten().copied()).unwrap_or((0.0, 1.0));
    let (pw, ph) = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT, HEIGHT - 2.0 * MARGIN_Y);
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (bottom, right) = (HEIGHT - MARGIN_Y, MARGIN_LEFT + pw);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_Y}" x2="{MARGIN_LEFT}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(s, r#"<text x="{MARGIN_LEFT}" y="{:.1}" text-anchor="middle">{x0:.4}</text>"#, bottom + 15.0);
    let _ = writeln!(s, r#"<text x="{right}" y="{:.1}" text-anchor="middle">{x1:.4}</text>"#, bottom + 15.0);

    let single = columns.len() == 1;
    let y_label = if single { escape(&columns[0]) } else { "value (scaled per series)".into() };
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{y_label}</text>"#,
        MARGIN_Y + ph / 2.0,
        MARGIN_Y + ph / 2.0
    );

    for (series, (&c, name)) in idx.iter().zip(columns).enumerate() {
        let points: Vec<(f64, f64)> = table
            .rows
            .iter()
            .zip(&xs)
            .filter_map(|(r, x)| Some((((*x)?), r.get(c).copied().flatten()?)))
            .filter(|(_, y)| y.is_finite())
            .collect();
        let color = COLORS[series % COLORS.len()];
        let ly = MARGIN_Y + 16.0 * series as f64;
        let legend_x = right + 12.0;
        let Some((y0, y1)) = range(points.iter().map(|p| p.1)) else {
            let _ = writeln!(
                s,
                r#"<text x="{legend_x}" y="{ly}" fill="{color}" class="legend">{}</text>"#,
                escape(name)
            );
            continue;
        };
        if single {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{bottom}" text-anchor="end">{y0:.4}</text>"#, MARGIN_LEFT - 4.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{MARGIN_Y}" text-anchor="end">{y1:.4}</text>"#, MARGIN_LEFT - 4.0);
        }
        if !points.is_empty() {
            let coords: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), bottom - (y - y0) / (y1 - y0) * ph))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let range_note = if single { String::new() } else { format!(" [{y0:.3e}, {y1:.3e}]") };
        let _ = writeln!(
            s,
            r#"<text x="{legend_x}" y="{ly}" fill="{color}" class="legend">{}{range_note}</text>"#,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn cmd_plot(metrics: &Path, columns: &[String], out: &Path) -> CliResult<()> {
    if columns.is_empty() {
        return Err(CliError::validation("columns: at least one column is required"));
    }
    let table = read_table(metrics)?;
    let svg = render_svg(&table, columns)?;
    write_atomic(out, svg.as_bytes())?;
    println!("{}", out.display());
    Ok(())
}
