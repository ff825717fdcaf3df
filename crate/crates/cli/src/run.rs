//! The experiment subcommands.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hbrick::memmodel::{self, MemoryReport};
use hbrick::pipesim;
use hbrick::sketch::{error_bound, Backend};
use hbrick::traces::{self, error_stats, exact_counts, ExactCounts, PacketRecord};
use hbrick::{
    BackendConfig, BackendKind, BrickConfig, CountMinSketch, FlowKey, SketchConfig,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, TraceSource};
use crate::error::CliError;
use crate::report::{AccuracyRow, ExperimentReport, HistogramRow, PipelineRow, QueryRow};

/// A loaded or generated trace and its label.
pub struct Trace {
    pub label: String,
    pub skew: Option<f64>,
    pub packets: Vec<PacketRecord>,
}

pub fn load_traces(cfg: &ExperimentConfig) -> Result<Vec<Trace>, CliError> {
    match cfg.trace.source {
        TraceSource::File => {
            let path = cfg.trace.path.as_deref().expect("validated");
            Ok(vec![Trace {
                label: path.display().to_string(),
                skew: None,
                packets: traces::read_trace(path)?,
            }])
        }
        source => cfg
            .zipf_specs()
            .into_par_iter()
            .map(|spec| {
                let label = match source {
                    TraceSource::Caida => "caida-profile".to_string(),
                    _ => format!("zipf-s{}", spec.skew),
                };
                Ok(Trace {
                    label,
                    skew: Some(spec.skew),
                    packets: traces::gen_zipf(&spec)?,
                })
            })
            .collect(),
    }
}

/// Counter-storage bits of one HBRICK array; the flat baseline is sized to
/// cover it.
fn hbrick_array_bits(cfg: &ExperimentConfig) -> Result<u64, CliError> {
    let h = cfg.hbrick_config()?;
    Ok(memmodel::hbrick_report(1, &h, cfg.memory.baseline_width)?.counter_bits)
}

/// Entries per flat array: explicit, or the smallest power of two whose
/// counter bits reach the HBRICK array's.
pub fn flat_width(cfg: &ExperimentConfig) -> Result<usize, CliError> {
    if let Some(w) = cfg.sketch.flat_width {
        return Ok(w);
    }
    let budget = hbrick_array_bits(cfg)?;
    let per = cfg.sketch.flat_width_bits as u64;
    Ok((budget.div_ceil(per) as usize).next_power_of_two())
}

pub fn sketch_config(cfg: &ExperimentConfig, kind: BackendKind, threshold: u64) -> Result<SketchConfig, CliError> {
    let s = &cfg.sketch;
    let (width, backend) = match kind {
        BackendKind::Flat => (
            flat_width(cfg)?,
            BackendConfig::Flat {
                width_bits: s.flat_width_bits,
            },
        ),
        BackendKind::Brick => {
            let mut b = BrickConfig::caida_profile(s.width);
            b.spares = s.brick_spares;
            (s.width, BackendConfig::Brick(b))
        }
        BackendKind::Hbrick => (s.width, BackendConfig::Hbrick(cfg.hbrick_config()?)),
    };
    Ok(SketchConfig {
        depth: s.depth,
        width,
        backend,
        strategy: s.strategy,
        heavy_threshold: threshold,
        seed: cfg.seed,
    })
}

fn counter_bits(cfg: &ExperimentConfig, sc: &SketchConfig) -> Result<u64, CliError> {
    let r: MemoryReport = match &sc.backend {
        BackendConfig::Flat { width_bits } => memmodel::flat_report(sc.depth, sc.width, *width_bits)?,
        BackendConfig::Brick(b) => memmodel::brick_report(sc.depth, b, cfg.memory.baseline_width)?,
        BackendConfig::Hbrick(h) => memmodel::hbrick_report(sc.depth, h, cfg.memory.baseline_width)?,
    };
    Ok(r.counter_bits)
}

/// Runs the trace, returning the sketch and each packet's
/// `(estimate, heavy)` flag at update time when `flags` is set.
fn run_sketch(
    sc: &SketchConfig,
    trace: &[PacketRecord],
    flags: bool,
) -> Result<(CountMinSketch, Vec<(u64, bool)>), CliError> {
    let mut sk = CountMinSketch::new(sc)?;
    let mut out = Vec::with_capacity(if flags { trace.len() } else { 0 });
    for p in trace {
        let (e, heavy) = sk.process_packet(p)?;
        if flags {
            out.push((e.value, heavy));
        }
    }
    Ok((sk, out))
}

fn accuracy_row(
    cfg: &ExperimentConfig,
    trace: &Trace,
    oracle: &ExactCounts,
    sc: &SketchConfig,
    sk: &CountMinSketch,
) -> Result<AccuracyRow, CliError> {
    let (epsilon, delta) = error_bound(sc.depth, sc.width);
    let mut saturated = 0u64;
    let stats = error_stats(oracle, epsilon, |k| {
        let e = sk.query(k)?;
        saturated += e.saturated as u64;
        Ok(e.value)
    })?;
    let phi = sc.heavy_threshold;
    let truth: BTreeSet<&FlowKey> = oracle
        .flows
        .iter()
        .filter(|(_, &t)| t > phi as u128)
        .map(|(k, _)| k)
        .collect();
    let reported: BTreeSet<&FlowKey> = sk.registry().keys().collect();
    let tp = truth.intersection(&reported).count() as u64;
    let (mut evictions, mut spilled, mut migrations) = (0, 0, 0);
    for row in sk.rows() {
        match row {
            Backend::Flat(_) => {}
            Backend::Brick(b) => migrations += b.stats().migrations,
            Backend::Hbrick(h) => {
                let s = h.stats();
                evictions += s.evictions;
                spilled += s.spilled;
            }
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok(AccuracyRow {
        trace: trace.label.clone(),
        skew: trace.skew,
        backend: sc.backend.kind(),
        strategy: sc.strategy,
        depth: sc.depth,
        width: sc.width,
        flat_width_bits: match sc.backend {
            BackendConfig::Flat { width_bits } => Some(width_bits),
            _ => None,
        },
        counter_bits: counter_bits(cfg, sc)?,
        packets: trace.packets.len() as u64,
        flows: stats.flows,
        total_bytes: oracle.total_bytes,
        avg_abs_error: stats.avg_abs_error,
        max_over: stats.max_over,
        underestimated_flows: stats.underestimated,
        epsilon,
        delta,
        over_eps_fraction: ratio(stats.over_eps, stats.flows),
        heavy_threshold: phi,
        heavy_true: truth.len() as u64,
        heavy_reported: reported.len() as u64,
        heavy_true_positives: tp,
        heavy_false_positives: reported.len() as u64 - tp,
        heavy_false_negatives: truth.len() as u64 - tp,
        precision: ratio(tp, reported.len() as u64),
        recall: ratio(tp, truth.len() as u64),
        saturated_flows: saturated,
        evictions,
        spilled,
        migrations,
    })
}

fn snapshot_name(trace: &Trace, kind: BackendKind, index: usize) -> String {
    match trace.skew {
        Some(s) => format!("{kind}-s{s}.hbcm"),
        None => format!("{kind}-trace{index}.hbcm"),
    }
}

#[derive(Debug, Clone, Default)]
pub struct AccuracyOutputs<'a> {
    /// Directory receiving one snapshot per (trace, backend) cell.
    pub snapshot_dir: Option<&'a Path>,
    /// CSV file receiving per-packet heavy-hitter flags.
    pub flags: Option<&'a Path>,
}

type Cell = (AccuracyRow, Option<(String, Vec<u8>)>, Vec<(u64, bool)>);

pub fn run_accuracy(cfg: &ExperimentConfig, outputs: &AccuracyOutputs) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let traces = load_traces(cfg)?;
    let cells: Vec<(usize, BackendKind)> = (0..traces.len())
        .flat_map(|t| cfg.sketch.backends.iter().map(move |&b| (t, b)))
        .collect();
    let oracles: Vec<ExactCounts> = traces.par_iter().map(|t| exact_counts(&t.packets)).collect();
    let results: Vec<Cell> = cells
        .par_iter()
        .map(|&(ti, kind)| {
            let trace = &traces[ti];
            let oracle = &oracles[ti];
            let sc = sketch_config(cfg, kind, cfg.heavy_threshold(oracle.total_bytes))?;
            let (sk, flags) = run_sketch(&sc, &trace.packets, outputs.flags.is_some())?;
            let row = accuracy_row(cfg, trace, oracle, &sc, &sk)?;
            let snap = outputs
                .snapshot_dir
                .map(|_| (snapshot_name(trace, kind, ti), sk.to_snapshot()));
            Ok((row, snap, flags))
        })
        .collect::<Result<_, CliError>>()?;
    let mut report = ExperimentReport::new("run-accuracy", cfg);
    let mut flag_out = match outputs.flags {
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "# trace,backend,ordinal,estimate,heavy")?;
            Some(w)
        }
        None => None,
    };
    for ((row, snap, flags), &(ti, _)) in results.into_iter().zip(&cells) {
        if let Some(w) = flag_out.as_mut() {
            for (p, (est, heavy)) in traces[ti].packets.iter().zip(flags) {
                writeln!(w, "{},{},{},{},{}", row.trace, row.backend, p.ordinal, est, heavy as u8)?;
            }
        }
        if let (Some(dir), Some((name, bytes))) = (outputs.snapshot_dir, snap) {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        }
        report.accuracy.push(row);
    }
    if let Some(mut w) = flag_out {
        w.flush()?;
    }
    Ok(report)
}

pub fn run_memory(cfg: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let mut report = ExperimentReport::new("run-memory", cfg);
    report.memory = memmodel::sweep(
        cfg.sketch.depth,
        cfg.sketch.width,
        cfg.memory.baseline_width,
        &cfg.memory.levels,
    )?;
    Ok(report)
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let traces = load_traces(cfg)?;
    let mut report = ExperimentReport::new("run-pipeline", cfg);
    for trace in &traces {
        if trace.packets.is_empty() {
            return Err(CliError::config(format!("trace {} is empty", trace.label)));
        }
        let total: u128 = trace.packets.iter().map(|p| p.size as u128).sum();
        let base = cfg.pipeline_config(cfg.heavy_threshold(total));
        let rows: Vec<PipelineRow> = cfg
            .pipeline
            .strategies
            .par_iter()
            .map(|&s| {
                let pc = base.with_strategy(s);
                let metrics = pipesim::simulate(&trace.packets, &pc)?;
                Ok(PipelineRow {
                    trace: trace.label.clone(),
                    latency: pc.latency(),
                    dfu_depth: pc.effective_dfu_depth(),
                    merge_depth: pc.effective_merge_depth(),
                    heavy_threshold: pc.heavy_threshold,
                    metrics,
                })
            })
            .collect::<Result<_, CliError>>()?;
        report.pipeline.extend(rows);
    }
    Ok(report)
}

/// Writes the configured synthetic trace (the first skewness value) to
/// `path`.
pub fn gen_trace(cfg: &ExperimentConfig, path: &Path) -> Result<u64, CliError> {
    cfg.validate()?;
    if cfg.trace.source == TraceSource::File {
        return Err(CliError::config("gen-trace needs a synthetic trace source"));
    }
    let spec = cfg.zipf_specs().into_iter().next().expect("validated");
    let gen = traces::ZipfGenerator::new(&spec)?;
    let file = File::create(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let packets: Vec<PacketRecord> = gen.collect();
    traces::write_csv(BufWriter::new(file), &packets)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Ok(packets.len() as u64)
}

pub fn histogram(cfg: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let traces = load_traces(cfg)?;
    let mut report = ExperimentReport::new("histogram", cfg);
    let oracle = exact_counts(&traces[0].packets);
    report.histogram = traces::min_bitwidth_histogram(&oracle)
        .into_iter()
        .map(|(bits, flows)| HistogramRow { bits, flows })
        .collect();
    Ok(report)
}

pub fn query(
    cfg: &ExperimentConfig,
    snapshot: &Path,
    keys: &[String],
    trace: Option<&Path>,
) -> Result<ExperimentReport, CliError> {
    let bytes = std::fs::read(snapshot).map_err(|e| CliError::io(format!("{}: {e}", snapshot.display())))?;
    let sk = CountMinSketch::from_snapshot(&bytes)?;
    let mut flows: Vec<FlowKey> = Vec::new();
    for k in keys {
        flows.push(
            k.parse()
                .map_err(|e| CliError::new(crate::error::ErrorClass::Parse, format!("key {k:?}: {e}")))?,
        );
    }
    if let Some(p) = trace {
        let t = traces::read_trace(p)?;
        flows.extend(exact_counts(&t).flows.into_keys());
    }
    if flows.is_empty() {
        return Err(CliError::config("query needs at least one --key or a --trace"));
    }
    let mut report = ExperimentReport::new("query", cfg);
    for k in flows {
        let e = sk.query(&k)?;
        let first = sk.registry().get(&k).copied();
        report.queries.push(QueryRow {
            key: k.to_string(),
            estimate: e.value,
            saturated: e.saturated,
            heavy: e.value > sk.heavy_threshold(),
            first_heavy_ordinal: first,
        });
    }
    Ok(report)
}
