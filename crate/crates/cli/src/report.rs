//! Report assembly and rendering.
//!
//! `records` output is one JSON object per line, tagged by `record`. The
//! last line is always the `timing` record; everything above it depends only
//! on the configuration and seeds.

use std::fmt::Write as _;

use hbrick::memmodel::MemoryReport;
use hbrick::pipesim::PipelineMetrics;
use hbrick::{BackendKind, UpdateStrategy};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Format};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub trace: String,
    pub skew: Option<f64>,
    pub backend: BackendKind,
    pub strategy: UpdateStrategy,
    pub depth: usize,
    pub width: usize,
    /// Counter width of a flat backend.
    pub flat_width_bits: Option<u32>,
    /// Counter-storage bits across all arrays.
    pub counter_bits: u64,
    pub packets: u64,
    pub flows: u64,
    pub total_bytes: u128,
    pub avg_abs_error: f64,
    pub max_over: u128,
    pub underestimated_flows: u64,
    pub epsilon: f64,
    pub delta: f64,
    /// Fraction of flows overestimated by more than `epsilon * total_bytes`.
    pub over_eps_fraction: f64,
    pub heavy_threshold: u64,
    pub heavy_true: u64,
    pub heavy_reported: u64,
    pub heavy_true_positives: u64,
    pub heavy_false_positives: u64,
    pub heavy_false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    /// Flows whose estimate came from a clamped counter.
    pub saturated_flows: u64,
    pub evictions: u64,
    pub spilled: u64,
    pub migrations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    pub trace: String,
    pub latency: u64,
    pub dfu_depth: u64,
    pub merge_depth: usize,
    pub heavy_threshold: u64,
    #[serde(flatten)]
    pub metrics: PipelineMetrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bits: u32,
    pub flows: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRow {
    pub key: String,
    pub estimate: u64,
    pub saturated: bool,
    pub heavy: bool,
    pub first_heavy_ordinal: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub accuracy: Vec<AccuracyRow>,
    pub memory: Vec<MemoryReport>,
    pub pipeline: Vec<PipelineRow>,
    pub histogram: Vec<HistogramRow>,
    pub queries: Vec<QueryRow>,
    pub wall_clock_ms: u64,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record<'a> {
    Header {
        command: &'a str,
        version: &'a str,
        config: &'a ExperimentConfig,
    },
    Accuracy(&'a AccuracyRow),
    Memory(&'a MemoryReport),
    Pipeline(&'a PipelineRow),
    Histogram(&'a HistogramRow),
    Query(&'a QueryRow),
    Timing {
        wall_clock_ms: u64,
    },
}

impl ExperimentReport {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            accuracy: Vec::new(),
            memory: Vec::new(),
            pipeline: Vec::new(),
            histogram: Vec::new(),
            queries: Vec::new(),
            wall_clock_ms: 0,
        }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Records => self.records(),
            Format::Table => self.table(),
        }
    }

    fn records(&self) -> String {
        let mut recs = vec![Record::Header {
            command: &self.command,
            version: &self.version,
            config: &self.config,
        }];
        recs.extend(self.accuracy.iter().map(Record::Accuracy));
        recs.extend(self.memory.iter().map(Record::Memory));
        recs.extend(self.pipeline.iter().map(Record::Pipeline));
        recs.extend(self.histogram.iter().map(Record::Histogram));
        recs.extend(self.queries.iter().map(Record::Query));
        recs.push(Record::Timing {
            wall_clock_ms: self.wall_clock_ms,
        });
        let mut out = String::new();
        for r in recs {
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# hbrick {} {}", self.version, self.command);
        for line in self.config.to_toml().lines() {
            let _ = writeln!(out, "{}", format!("#   {line}").trim_end());
        }
        if !self.accuracy.is_empty() {
            out.push('\n');
            let rows: Vec<Vec<String>> = self
                .accuracy
                .iter()
                .map(|r| {
                    vec![
                        r.trace.clone(),
                        r.backend.to_string(),
                        r.strategy.to_string(),
                        r.width.to_string(),
                        r.flat_width_bits.map_or("-".into(), |b| b.to_string()),
                        r.counter_bits.to_string(),
                        r.flows.to_string(),
                        format!("{:.3}", r.avg_abs_error),
                        r.underestimated_flows.to_string(),
                        format!("{:.5}", r.over_eps_fraction),
                        format!("{:.4}", r.delta),
                        format!("{:.3}", r.precision),
                        format!("{:.3}", r.recall),
                        r.saturated_flows.to_string(),
                        r.evictions.to_string(),
                        r.spilled.to_string(),
                    ]
                })
                .collect();
            out.push_str(&grid(
                &[
                    "trace", "backend", "strategy", "W", "bits", "counter_bits", "flows", "avg_abs_err",
                    "under", "tail>eps", "delta", "precision", "recall", "saturated", "evictions",
                    "spilled",
                ],
                &rows,
            ));
        }
        if !self.memory.is_empty() {
            out.push('\n');
            let rows: Vec<Vec<String>> = self
                .memory
                .iter()
                .map(|m| {
                    vec![
                        m.label.clone(),
                        m.depth.to_string(),
                        m.width.to_string(),
                        m.counter_bits.to_string(),
                        m.overflow_bits.to_string(),
                        m.total_bits.to_string(),
                        m.total_brams.to_string(),
                        m.brams_vs_flat.map_or("-".into(), |r| format!("{r:.3}")),
                        m.components
                            .iter()
                            .map(|c| format!("{}={}", c.name, c.brams))
                            .collect::<Vec<_>>()
                            .join(" "),
                    ]
                })
                .collect();
            out.push_str(&grid(
                &[
                    "config", "D", "W", "counter_bits", "overflow_bits", "total_bits", "brams",
                    "vs_flat", "brams_by_component",
                ],
                &rows,
            ));
        }
        if !self.pipeline.is_empty() {
            out.push('\n');
            let rows: Vec<Vec<String>> = self
                .pipeline
                .iter()
                .map(|p| {
                    let m = &p.metrics;
                    vec![
                        m.strategy.to_string(),
                        p.latency.to_string(),
                        m.items.to_string(),
                        m.cycles.to_string(),
                        format!("{:.4}", m.throughput),
                        m.false_conflicts.to_string(),
                        m.true_conflicts.to_string(),
                        m.merges.to_string(),
                        m.hybrid_fallbacks.to_string(),
                        m.underestimated_flows.to_string(),
                        format!("{}/{}", m.heavy_false_negatives, m.heavy_flows),
                        format!("{:.4}", m.heavy_fn_rate),
                        format!("{:.3}", m.avg_abs_error),
                    ]
                })
                .collect();
            out.push_str(&grid(
                &[
                    "strategy", "H", "items", "cycles", "items/cycle", "false_conf", "true_conf",
                    "merges", "fallbacks", "under", "heavy_fn", "fn_rate", "avg_abs_err",
                ],
                &rows,
            ));
        }
        if !self.histogram.is_empty() {
            out.push('\n');
            let rows: Vec<Vec<String>> = self
                .histogram
                .iter()
                .map(|h| vec![h.bits.to_string(), h.flows.to_string()])
                .collect();
            out.push_str(&grid(&["bits", "flows"], &rows));
        }
        if !self.queries.is_empty() {
            out.push('\n');
            let rows: Vec<Vec<String>> = self
                .queries
                .iter()
                .map(|q| {
                    vec![
                        q.key.clone(),
                        q.estimate.to_string(),
                        q.saturated.to_string(),
                        q.heavy.to_string(),
                        q.first_heavy_ordinal.map_or("-".into(), |o| o.to_string()),
                    ]
                })
                .collect();
            out.push_str(&grid(&["key", "estimate", "saturated", "heavy", "first_heavy"], &rows));
        }
        let _ = writeln!(out, "\n# wall_clock_ms {}", self.wall_clock_ms);
        out
    }
}

/// Everything but the trailing timing line.
pub fn body(rendered: &str) -> &str {
    let trimmed = rendered.trim_end_matches('\n');
    match trimmed.rfind('\n') {
        Some(i) => &rendered[..=i],
        None => "",
    }
}

fn grid(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(headers.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
