//! CSV, SVG and markdown artifacts of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{Experiment, RunRecord, RunStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
    Md,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Csv, Format::Svg, Format::Md];
}

/// One line of the CSV output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub experiment: String,
    pub rho: f64,
    pub wbar: f64,
    pub n: u32,
    pub s: f64,
    pub statistic: String,
    pub vertex_or_scale: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub replicas: usize,
    pub seed: u64,
}

pub const CSV_HEADER: [&str; 13] = [
    "experiment",
    "rho",
    "wbar",
    "n",
    "s",
    "statistic",
    "vertex_or_scale",
    "value",
    "stderr",
    "ci_lo",
    "ci_hi",
    "replicas",
    "seed",
];

pub fn csv_rows(record: &RunRecord) -> Vec<CsvRow> {
    let c = &record.config;
    record
        .rows
        .iter()
        .map(|r| CsvRow {
            experiment: c.experiment.name().to_string(),
            rho: r.rho,
            wbar: c.wbar,
            n: c.n,
            s: c.s,
            statistic: r.statistic.clone(),
            vertex_or_scale: r.vertex_or_scale.clone(),
            value: r.value,
            stderr: r.stderr,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            replicas: r.replicas,
            seed: c.seed,
        })
        .collect()
}

/// CSV bytes; floats use the shortest representation that parses back exactly.
pub fn to_csv(record: &RunRecord) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let csv_err = |source| Error::Csv {
        path: PathBuf::from("<memory>"),
        source,
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in csv_rows(record) {
        w.serialize(row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("flushing CSV buffer: {e}")))
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .collect::<std::result::Result<Vec<CsvRow>, _>>()
        .map_err(|source| Error::Csv {
            path: PathBuf::from("<memory>"),
            source,
        })
}

/// Statistic drawn in the chart of a series experiment.
fn chart_statistic(e: Experiment) -> Option<&'static str> {
    match e {
        Experiment::Figure1 | Experiment::DecaySlope => Some("moment"),
        Experiment::RecurrenceScan | Experiment::TransienceScan => Some("median_escape"),
        _ => None,
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Line chart with one polyline per `rho` and a log-scaled y axis; `None`
/// for experiments that are not series.
pub fn to_svg(record: &RunRecord) -> Option<String> {
    let stat = chart_statistic(record.config.experiment)?;
    let mut series: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for row in record.rows.iter().filter(|r| r.statistic == stat) {
        let Ok(x) = row.vertex_or_scale.parse::<f64>() else {
            continue;
        };
        if !(row.value > 0.0) || !row.value.is_finite() {
            continue;
        }
        let point = (x, row.value.log10());
        match series.iter_mut().find(|(r, _)| *r == row.rho) {
            Some((_, pts)) => pts.push(point),
            None => series.push((row.rho, vec![point])),
        }
    }
    let (w, h, m) = (640.0, 400.0, 60.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 0.0);
    }
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let mut decade = y0;
    while decade <= y1 {
        let y = py(decade);
        let _ = writeln!(
            s,
            r##"<line x1="{m}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{decade}</text>"##,
            w - m,
            m - 6.0,
            y + 4.0
        );
        decade += 1.0;
    }
    let ticks = (x1 - x0).round().clamp(1.0, 20.0) as usize;
    for t in 0..=ticks {
        let x = x0 + (x1 - x0) * t as f64 / ticks as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            px(x),
            h - m + 18.0,
            (x * 100.0).round() / 100.0
        );
    }
    let xlabel = match record.config.experiment {
        Experiment::RecurrenceScan | Experiment::TransienceScan => "box level n",
        _ => "scale k",
    };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text><text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{stat}</text>"#,
        w / 2.0,
        h - 16.0,
        h / 2.0,
        h / 2.0
    );
    for (i, (rho, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = p
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">rho = {rho}</text>"#,
            w - m - 90.0,
            m + 16.0 * (i as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn to_markdown(record: &RunRecord) -> String {
    let c = &record.config;
    let mut s = String::new();
    let _ = writeln!(s, "# {}\n", c.experiment.name());
    let status = match &record.status {
        RunStatus::Complete => "complete".to_string(),
        RunStatus::Failed { message, .. } => format!("FAILED: {message}"),
    };
    let _ = writeln!(s, "- status: {status}");
    let _ = writeln!(
        s,
        "- rho = {:?}, wbar = {}, n = {}, s = {}, q_exponent = {}",
        c.rhos(),
        c.wbar,
        c.n,
        c.s,
        c.q_exponent
    );
    let _ = writeln!(
        s,
        "- replicas = {}, method = {:?}, seed = {}, workers = {}",
        c.replicas, c.method, c.seed, c.workers
    );
    let _ = writeln!(s, "- failed replicas: {}", record.failed_replicas);
    let _ = writeln!(s, "- wall clock: {:.3} s", record.wall_clock_seconds);
    let _ = writeln!(s, "- version: {}", record.code_version);
    for note in &record.notes {
        let _ = writeln!(s, "- note: {note}");
    }
    let _ = writeln!(
        s,
        "\n| statistic | rho | vertex/scale | value | stderr | ci_lo | ci_hi | replicas |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for r in &record.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.6} | {} | {} | {} | {} |",
            r.statistic,
            r.rho,
            r.vertex_or_scale,
            r.value,
            opt(r.stderr),
            opt(r.ci_lo),
            opt(r.ci_hi),
            r.replicas
        );
    }
    let _ = writeln!(s, "\n## Seeds\n");
    for seed in &record.seeds {
        let _ = writeln!(
            s,
            "- {}: {} ({} replicas)",
            seed.label, seed.seed, seed.replicas
        );
    }
    s
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `<experiment>.record.json` first, then the requested formats.
/// Returns the written paths in that order.
pub fn emit_report(record: &RunRecord, formats: &[Format], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = record.config.experiment.name();
    let json = serde_json::to_vec_pretty(record)
        .map_err(|e| Error::Config(format!("serializing run record: {e}")))?;
    let mut out = vec![write(dir.join(format!("{stem}.record.json")), &json)?];
    for f in formats {
        match f {
            Format::Csv => out.push(write(dir.join(format!("{stem}.csv")), &to_csv(record)?)?),
            Format::Svg => {
                if let Some(svg) = to_svg(record) {
                    out.push(write(dir.join(format!("{stem}.svg")), svg.as_bytes())?);
                }
            }
            Format::Md => out.push(write(
                dir.join(format!("{stem}.md")),
                to_markdown(record).as_bytes(),
            )?),
        }
    }
    Ok(out)
}
