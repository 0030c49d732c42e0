use std::fmt::Write as _;
use std::io::Write;

use matchnet::EvalReport;

use crate::error::CliResult;

pub const CSV_HEADER: [&str; 9] = [
    "label", "lambda", "stv", "rgt", "irv", "welfare", "sim", "entropy", "profiles",
];

/// One evaluated mechanism. Baselines have no `lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierRow {
    pub label: String,
    pub lambda: Option<f64>,
    pub report: EvalReport,
}

impl FrontierRow {
    pub fn learned(lambda: f64, report: EvalReport) -> Self {
        Self {
            label: "net".into(),
            lambda: Some(lambda),
            report,
        }
    }

    pub fn baseline(label: &str, report: EvalReport) -> Self {
        Self {
            label: label.into(),
            lambda: None,
            report,
        }
    }

    /// Frontier convention for randomized serial dictatorship: its
    /// stability column also counts IR violations.
    pub fn rsd_frontier(report: EvalReport) -> Self {
        let stv = report.stv + report.irv;
        Self::baseline("rsd", EvalReport { stv, ..report })
    }

    pub fn record(&self) -> [String; 9] {
        let r = &self.report;
        [
            self.label.clone(),
            self.lambda.map(|l| l.to_string()).unwrap_or_default(),
            r.stv.to_string(),
            r.rgt.to_string(),
            r.irv.to_string(),
            r.welfare_per_agent.to_string(),
            r.sim.to_string(),
            r.entropy.to_string(),
            r.profiles_evaluated.to_string(),
        ]
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[FrontierRow], header: bool) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(CSV_HEADER)?;
    }
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows to `path`, writing the header first if the file is new or empty.
pub fn append_csv(path: &std::path::Path, rows: &[FrontierRow]) -> CliResult<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    write_csv(file, rows, fresh)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Upper axis limit: a little above the largest value, never zero.
fn axis_max(values: impl Iterator<Item = f64>) -> f64 {
    let top = values.filter(|v| v.is_finite()).fold(0.0, f64::max);
    if top > 0.0 {
        top * 1.1
    } else {
        1.0
    }
}

/// Scatter of rgt against stv. Learned points are circles labelled with
/// their lambda; baselines are squares; the dashed line joins the RSD and
/// best-DA points.
pub fn frontier_svg(rows: &[FrontierRow]) -> String {
    let x_max = axis_max(rows.iter().map(|r| r.report.stv));
    let y_max = axis_max(rows.iter().map(|r| r.report.rgt));
    let sx = |v: f64| MARGIN + v / x_max * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - v / y_max * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>"#
    );
    let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(x_max), sy(y_max));
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>
<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#
    );
    for k in 0..=5 {
        let xv = x_max * k as f64 / 5.0;
        let yv = y_max * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{t:.2}" stroke="black"/><text x="{x:.2}" y="{ty:.2}" text-anchor="middle">{xv:.3}</text>
<line x1="{x0:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="black"/><text x="{lx:.2}" y="{yy:.2}" text-anchor="end">{yv:.3}</text>"#,
            x = sx(xv),
            t = y0 + 5.0,
            ty = y0 + 18.0,
            y = sy(yv),
            l = x0 - 5.0,
            lx = x0 - 8.0,
            yy = sy(yv) + 4.0,
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{cx:.2}" y="{by:.2}" text-anchor="middle">stability violation (stv)</text>
<text x="16" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 16 {cy:.2})">strategy-proofness violation (rgt)</text>"#,
        cx = WIDTH / 2.0,
        by = HEIGHT - 16.0,
        cy = HEIGHT / 2.0,
    );

    let find = |label: &str| rows.iter().find(|r| r.label == label).map(|r| &r.report);
    if let (Some(rsd), Some(da)) = (find("rsd"), find("da-best")) {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
            sx(rsd.stv),
            sy(0.0),
            sx(0.0),
            sy(da.rgt)
        );
    }
    for row in rows {
        let (x, y) = (sx(row.report.stv), sy(row.report.rgt));
        match row.lambda {
            Some(l) => {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="steelblue"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                    x + 6.0,
                    y - 6.0,
                    escape(&format!("λ={l}"))
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="firebrick"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                    x - 4.0,
                    y - 4.0,
                    x + 6.0,
                    y + 14.0,
                    escape(&row.label)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
