//! Run metrics and their CSV/JSON serialization.
//!
//! Reports are ordered lists of (metric, value) pairs so CSV output has a
//! stable row order; identical runs produce byte-identical files. Floats are
//! printed with 6 significant digits in both formats so CSV and JSON agree
//! on every value.

use std::io::Write;

use thiserror::Error;

use crate::device::DeviceStats;
use crate::dram::CommandKind;

#[derive(Clone, Debug, PartialEq)]
pub enum MetricValue {
    Int(u64),
    Float(f64),
    Text(String),
}

impl From<u64> for MetricValue {
    fn from(v: u64) -> Self {
        MetricValue::Int(v)
    }
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::Float(v)
    }
}

impl From<&str> for MetricValue {
    fn from(v: &str) -> Self {
        MetricValue::Text(v.to_string())
    }
}

impl From<String> for MetricValue {
    fn from(v: String) -> Self {
        MetricValue::Text(v)
    }
}

/// Formats with 6 significant digits, plain notation for moderate exponents
/// and scientific otherwise.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(exp - 5);
    let rounded = (x / scale).round() * scale;
    let exp = rounded.abs().log10().floor() as i32;
    if (-4..10).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{rounded:.decimals$}");
        trim_zeros(&s)
    } else {
        format!("{x:.5e}")
    }
}

fn trim_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

impl MetricValue {
    pub fn render(&self) -> String {
        match self {
            MetricValue::Int(v) => v.to_string(),
            MetricValue::Float(v) => format_sig6(*v),
            MetricValue::Text(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    rows: Vec<(String, MetricValue)>,
}

/// Histogram bucket upper bounds for command latency, in cycles.
pub const LATENCY_BUCKETS: [u64; 8] = [8, 16, 32, 64, 128, 256, 1024, u64::MAX];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyHistogram {
    counts: [[u64; LATENCY_BUCKETS.len()]; 5],
}

impl LatencyHistogram {
    fn kind_slot(kind: CommandKind) -> usize {
        match kind {
            CommandKind::Act => 0,
            CommandKind::Pre => 1,
            CommandKind::Rd => 2,
            CommandKind::Wr => 3,
            CommandKind::Ref => 4,
        }
    }

    pub fn record(&mut self, kind: CommandKind, latency_cycles: u64) {
        let slot = Self::kind_slot(kind);
        let bucket = LATENCY_BUCKETS
            .iter()
            .position(|&b| latency_cycles <= b)
            .unwrap_or(LATENCY_BUCKETS.len() - 1);
        self.counts[slot][bucket] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn emit_into(&self, report: &mut MetricsReport) {
        const KINDS: [&str; 5] = ["act", "pre", "rd", "wr", "ref"];
        for (slot, kind) in KINDS.iter().enumerate() {
            for (i, &bound) in LATENCY_BUCKETS.iter().enumerate() {
                let label = if bound == u64::MAX {
                    format!("latency_{kind}_gt_1024")
                } else {
                    format!("latency_{kind}_le_{bound}")
                };
                report.push(label, self.counts[slot][i]);
            }
        }
    }
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<MetricValue>) {
        self.rows.push((name.into(), value.into()));
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(String, MetricValue)] {
        &self.rows
    }

    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn get_int(&self, name: &str) -> Option<u64> {
        match self.get(name)? {
            MetricValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn get_float(&self, name: &str) -> Option<f64> {
        match self.get(name)? {
            MetricValue::Float(v) => Some(*v),
            MetricValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    /// Core device counters shared by every simulation subcommand.
    pub fn push_device_stats(&mut self, stats: &DeviceStats, total_cycles: u64) {
        self.push("total_cycles", total_cycles);
        self.push("commands_issued", stats.commands());
        self.push("acts", stats.acts);
        self.push("pres", stats.pres);
        self.push("rds", stats.rds);
        self.push("wrs", stats.wrs);
        self.push("refs", stats.refs);
        self.push("bitflips", stats.bitflips);
        self.push("bitflips_rowhammer", stats.bitflips_rowhammer);
        self.push("bitflips_rowpress", stats.bitflips_rowpress);
        self.push("para_refreshes", stats.para_refreshes);
        self.push("trr_refreshes", stats.trr_refreshes);
        self.push("alerts_asserted", stats.alerts_asserted);
        self.push("rejected_during_alert", stats.rejected_during_alert);
        self.push("prac_recoveries", stats.prac_recoveries);
        self.push("victim_refreshes", stats.victim_refreshes);
        self.push("smd_nacks", stats.smd_nacks);
        self.push("smd_tasks_completed", stats.smd_tasks_completed);
        self.push("scrub_detections", stats.scrub_detections);
        self.push("pud_ops", stats.pud_ops);
    }

    pub fn push_latency_histogram(&mut self, hist: &LatencyHistogram) {
        hist.emit_into(self);
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (name, value) in &self.rows {
            s.push_str(name);
            s.push(',');
            let rendered = value.render();
            if rendered.contains(',') || rendered.contains('"') {
                s.push('"');
                s.push_str(&rendered.replace('"', "\"\""));
                s.push('"');
            } else {
                s.push_str(&rendered);
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json_string(&self) -> String {
        let mut s = String::from("{");
        for (i, (name, value)) in self.rows.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push('\n');
            s.push_str(&format!("  {}: ", json_quote(name)));
            match value {
                MetricValue::Int(v) => s.push_str(&v.to_string()),
                MetricValue::Float(v) => {
                    let rendered = format_sig6(*v);
                    if rendered == "inf" || rendered == "-inf" || rendered == "nan" {
                        s.push_str(&json_quote(&rendered));
                    } else {
                        s.push_str(&rendered);
                    }
                }
                MetricValue::Text(t) => s.push_str(&json_quote(t)),
            }
        }
        s.push_str("\n}\n");
        s
    }

    pub fn emit(&self, format: OutputFormat, mut w: impl Write) -> Result<(), EmitError> {
        let text = match format {
            OutputFormat::Csv => self.to_csv_string(),
            OutputFormat::Json => self.to_json_string(),
        };
        w.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn emit_to_path(
        &self,
        format: OutputFormat,
        path: &std::path::Path,
    ) -> Result<(), EmitError> {
        let file = std::fs::File::create(path).map_err(|e| EmitError::Create {
            path: path.display().to_string(),
            source: e,
        })?;
        self.emit(format, std::io::BufWriter::new(file))
    }
}

fn json_quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}` (csv|json)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot create {path}: {source}")]
    Create {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sweep output: one wide CSV row per parameter point, columns = swept keys
/// then the union of metric names in first-appearance order.
pub fn sweep_csv(points: &[(Vec<(String, String)>, MetricsReport)]) -> String {
    let mut metric_names: Vec<String> = Vec::new();
    for (_, report) in points {
        for (name, _) in report.rows() {
            if !metric_names.contains(name) {
                metric_names.push(name.clone());
            }
        }
    }
    let axis_names: Vec<String> = points
        .first()
        .map(|(axes, _)| axes.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    let mut s = String::new();
    let header: Vec<String> = axis_names
        .iter()
        .cloned()
        .chain(metric_names.iter().cloned())
        .collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for (axes, report) in points {
        let mut cells: Vec<String> = axes.iter().map(|(_, v)| v.clone()).collect();
        for name in &metric_names {
            cells.push(report.get(name).map(|v| v.render()).unwrap_or_default());
        }
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
