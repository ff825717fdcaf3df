//! Cycle-level model of the pipelined count-min update path.
//!
//! One item issues per cycle. Item `t` reads its counters at cycle `t`,
//! finishes its update value at `t + R + C` and commits at `t + H` with
//! `H = R + C + W`. Memory is last-write-wins; commits land in issue order.
//!
//! The data forwarding unit (DFU) hands an item the value computed by the
//! newest earlier in-flight writer of the same counter, provided that writer
//! issued at most `dfu_depth` cycles before. A plain update consumes its
//! counter only in the final add, so every earlier writer has finished by
//! then. A conservative update needs all D counters at the start of the C
//! minimum stages, so it cannot see writers issued fewer than C cycles
//! before it: those sit in the same update block.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowkey::{FlowKey, HashFamily};
use crate::traces::{error_stats, exact_counts, PacketRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineStrategy {
    PlainDfu,
    ConservativeNaive,
    ConservativeMerge,
    Hybrid,
}

impl PipelineStrategy {
    pub const ALL: [PipelineStrategy; 4] = [
        PipelineStrategy::PlainDfu,
        PipelineStrategy::ConservativeNaive,
        PipelineStrategy::ConservativeMerge,
        PipelineStrategy::Hybrid,
    ];

    fn merges(self) -> bool {
        matches!(self, PipelineStrategy::ConservativeMerge | PipelineStrategy::Hybrid)
    }
}

impl fmt::Display for PipelineStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineStrategy::PlainDfu => "plain+dfu",
            PipelineStrategy::ConservativeNaive => "conservative-naive",
            PipelineStrategy::ConservativeMerge => "conservative+merge",
            PipelineStrategy::Hybrid => "hybrid",
        })
    }
}

impl FromStr for PipelineStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        PipelineStrategy::ALL
            .into_iter()
            .find(|p| p.to_string() == s || format!("{p:?}").eq_ignore_ascii_case(s))
            .or(match s {
                "plain-dfu" => Some(PipelineStrategy::PlainDfu),
                "conservative-merge" => Some(PipelineStrategy::ConservativeMerge),
                _ => None,
            })
            .ok_or_else(|| format!("unknown pipeline strategy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub read_latency: u32,
    pub compute_latency: u32,
    pub write_latency: u32,
    /// Forwarding depth; defaults to `R + C + W`.
    pub dfu_depth: Option<u32>,
    /// Merge buffer depth; defaults to `C`.
    pub merge_depth: Option<usize>,
    pub strategy: PipelineStrategy,
    /// Extra cycles added to both the read and the write latency when the
    /// counters sit behind an HBRICK index stage.
    pub backend_overhead: u32,
    pub depth: usize,
    pub width: usize,
    pub seed: u64,
    pub heavy_threshold: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            read_latency: 2,
            compute_latency: 10,
            write_latency: 2,
            dfu_depth: None,
            merge_depth: None,
            strategy: PipelineStrategy::PlainDfu,
            backend_overhead: 0,
            depth: 4,
            width: 1 << 10,
            seed: 0,
            heavy_threshold: u64::MAX,
        }
    }
}

impl PipelineConfig {
    pub fn with_strategy(&self, strategy: PipelineStrategy) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }

    fn effective_read(&self) -> u64 {
        self.read_latency as u64 + self.backend_overhead as u64
    }

    fn effective_write(&self) -> u64 {
        self.write_latency as u64 + self.backend_overhead as u64
    }

    /// Issue-to-commit latency `H`.
    pub fn latency(&self) -> u64 {
        self.effective_read() + self.compute_latency as u64 + self.effective_write()
    }

    pub fn effective_dfu_depth(&self) -> u64 {
        self.dfu_depth.map_or(self.latency(), u64::from)
    }

    pub fn effective_merge_depth(&self) -> usize {
        if !self.strategy.merges() {
            return 0;
        }
        self.merge_depth.unwrap_or(self.compute_latency as usize)
    }

    /// Predecessors that share an update block with an item.
    pub fn hazard_window(&self) -> usize {
        self.compute_latency as usize - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.read_latency == 0 || self.compute_latency == 0 || self.write_latency == 0 {
            return Err(Error::InvalidConfig("pipeline latencies must be at least 1".into()));
        }
        if self.depth == 0 || self.width == 0 || !self.width.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "pipeline sketch needs D >= 1 and W a power of two, got D={} W={}",
                self.depth, self.width
            )));
        }
        if self.strategy == PipelineStrategy::Hybrid && self.effective_merge_depth() < self.hazard_window() {
            return Err(Error::InvalidConfig(format!(
                "hybrid update needs merge_depth >= C - 1 = {}",
                self.hazard_window()
            )));
        }
        Ok(())
    }
}

/// An item leaving the merge stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergedItem {
    pub key: FlowKey,
    pub size: u64,
    /// Ordinal of the first packet folded into this item.
    pub ordinal: u64,
    /// Packets folded into this item.
    pub packets: u64,
}

impl From<&PacketRecord> for MergedItem {
    fn from(p: &PacketRecord) -> Self {
        Self {
            key: p.key,
            size: p.size,
            ordinal: p.ordinal,
            packets: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeOutcome {
    /// Folded into a buffered item with the same key.
    Merged,
    /// Buffered; nothing left the buffer.
    Enqueued,
    /// Buffered, pushing out the oldest item (or passed straight through
    /// when the buffer has depth zero).
    Emitted(MergedItem),
}

/// FIFO merge buffer of fixed depth.
#[derive(Debug, Clone)]
pub struct MergeBuffer {
    depth: usize,
    items: VecDeque<MergedItem>,
}

impl MergeBuffer {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            items: VecDeque::with_capacity(depth),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn flush(&mut self) -> impl Iterator<Item = MergedItem> + '_ {
        self.items.drain(..)
    }
}

pub fn merge_window_step(buffer: &mut MergeBuffer, item: MergedItem) -> MergeOutcome {
    if buffer.depth == 0 {
        return MergeOutcome::Emitted(item);
    }
    if let Some(b) = buffer.items.iter_mut().find(|b| b.key == item.key) {
        b.size += item.size;
        b.packets += item.packets;
        return MergeOutcome::Merged;
    }
    let out = if buffer.items.len() == buffer.depth {
        buffer.items.pop_front()
    } else {
        None
    };
    buffer.items.push_back(item);
    out.map_or(MergeOutcome::Enqueued, MergeOutcome::Emitted)
}

/// Runs a whole stream through a merge buffer of depth `depth`.
pub fn merge_stream(trace: &[PacketRecord], depth: usize) -> (Vec<MergedItem>, u64) {
    let mut buf = MergeBuffer::new(depth);
    let mut out = Vec::with_capacity(trace.len());
    let mut merges = 0;
    for p in trace {
        match merge_window_step(&mut buf, p.into()) {
            MergeOutcome::Merged => merges += 1,
            MergeOutcome::Enqueued => {}
            MergeOutcome::Emitted(m) => out.push(m),
        }
    }
    out.extend(buf.flush());
    (out, merges)
}

/// An issued item as seen by the hazard detector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    pub key: FlowKey,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conflict {
    None,
    /// An item with the same key.
    False,
    /// An item with a different key on a shared counter.
    True,
}

/// Classifies `item` against the items in its update block. A true conflict
/// outranks a false one.
pub fn detect_hazard<'a>(window: impl IntoIterator<Item = &'a InFlight>, item: &InFlight) -> Conflict {
    let mut seen = Conflict::None;
    for other in window {
        if other.key == item.key {
            seen = seen.max(Conflict::False);
        } else if other.indices.iter().zip(&item.indices).any(|(a, b)| a == b) {
            return Conflict::True;
        }
    }
    seen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateKind {
    Plain,
    Conservative,
}

pub fn apply_hybrid(conflict: Conflict) -> UpdateKind {
    match conflict {
        Conflict::True => UpdateKind::Plain,
        Conflict::None | Conflict::False => UpdateKind::Conservative,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub strategy: PipelineStrategy,
    pub items: u64,
    /// Items entering the counter pipeline after merging.
    pub issued: u64,
    pub cycles: u64,
    pub throughput: f64,
    pub false_conflicts: u64,
    pub true_conflicts: u64,
    pub merges: u64,
    pub hybrid_fallbacks: u64,
    pub flows: u64,
    pub underestimated_flows: u64,
    pub heavy_flows: u64,
    pub heavy_false_negatives: u64,
    pub heavy_fn_rate: f64,
    pub avg_abs_error: f64,
}

#[derive(Debug, Clone, Copy)]
struct Write {
    issue: u64,
    row: usize,
    index: usize,
    value: u64,
}

/// Final counters and metrics of one simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub hashes: HashFamily,
    pub counters: Vec<Vec<u64>>,
    pub metrics: PipelineMetrics,
}

impl Simulation {
    pub fn query(&self, key: &FlowKey) -> u64 {
        self.hashes
            .indices(key)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.counters[d][i])
            .min()
            .unwrap_or(0)
    }
}

pub fn simulate(trace: &[PacketRecord], cfg: &PipelineConfig) -> Result<PipelineMetrics> {
    Ok(run(trace, cfg)?.metrics)
}

pub fn run(trace: &[PacketRecord], cfg: &PipelineConfig) -> Result<Simulation> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(Error::InvalidConfig("pipeline simulation needs a nonempty trace".into()));
    }
    let hashes = HashFamily::from_master_seed(cfg.depth, cfg.width, cfg.seed)?;
    let merge_depth = cfg.effective_merge_depth();
    let (stream, merges) = merge_stream(trace, merge_depth);

    let h = cfg.latency();
    let dfu = cfg.effective_dfu_depth();
    let block = cfg.compute_latency as u64;
    let window = cfg.hazard_window();

    let mut mem = vec![vec![0u64; cfg.width]; cfg.depth];
    let mut pending: VecDeque<Write> = VecDeque::new();
    let mut recent: VecDeque<InFlight> = VecDeque::with_capacity(window + 1);
    let (mut false_c, mut true_c, mut fallbacks) = (0u64, 0u64, 0u64);

    for (t, item) in stream.iter().enumerate() {
        let t = t as u64;
        while let Some(w) = pending.front() {
            if w.issue + h < t {
                mem[w.row][w.index] = w.value;
                pending.pop_front();
            } else {
                break;
            }
        }
        let me = InFlight {
            key: item.key,
            indices: hashes.indices(&item.key),
        };
        let conflict = detect_hazard(&recent, &me);
        match conflict {
            Conflict::True => true_c += 1,
            Conflict::False => false_c += 1,
            Conflict::None => {}
        }
        let kind = match cfg.strategy {
            PipelineStrategy::PlainDfu => UpdateKind::Plain,
            PipelineStrategy::ConservativeNaive | PipelineStrategy::ConservativeMerge => UpdateKind::Conservative,
            PipelineStrategy::Hybrid => {
                let k = apply_hybrid(conflict);
                if k == UpdateKind::Plain {
                    fallbacks += 1;
                }
                k
            }
        };
        // Newest writer an item of this kind can observe must have issued at
        // or before `t - gap`.
        let gap = match kind {
            UpdateKind::Plain => 1,
            UpdateKind::Conservative => block,
        };
        let view: Vec<u64> = me
            .indices
            .iter()
            .enumerate()
            .map(|(row, &index)| {
                pending
                    .iter()
                    .rev()
                    .find(|w| w.row == row && w.index == index && w.issue + gap <= t && t - w.issue <= dfu)
                    .map_or(mem[row][index], |w| w.value)
            })
            .collect();
        let values: Vec<u64> = match kind {
            UpdateKind::Plain => view.iter().map(|v| v.saturating_add(item.size)).collect(),
            UpdateKind::Conservative => {
                let target = view.iter().min().unwrap().saturating_add(item.size);
                view.iter().map(|&v| v.max(target)).collect()
            }
        };
        for (row, (&index, value)) in me.indices.iter().zip(values).enumerate() {
            pending.push_back(Write { issue: t, row, index, value });
        }
        if window > 0 {
            if recent.len() == window {
                recent.pop_front();
            }
            recent.push_back(me);
        }
    }
    for w in pending.drain(..) {
        mem[w.row][w.index] = w.value;
    }

    let sim_hashes = hashes.clone();
    let query = |k: &FlowKey| -> u64 {
        sim_hashes
            .indices(k)
            .iter()
            .enumerate()
            .map(|(d, &i)| mem[d][i])
            .min()
            .unwrap()
    };
    let oracle = exact_counts(trace);
    let stats = error_stats(&oracle, f64::INFINITY, |k| Ok(query(k)))?;
    let phi = cfg.heavy_threshold as u128;
    let mut heavy = 0u64;
    let mut missed = 0u64;
    for (k, &t) in &oracle.flows {
        if t > phi {
            heavy += 1;
            if query(k) as u128 <= phi {
                missed += 1;
            }
        }
    }
    let items = trace.len() as u64;
    let cycles = items + merge_depth as u64 + h;
    let metrics = PipelineMetrics {
        strategy: cfg.strategy,
        items,
        issued: stream.len() as u64,
        cycles,
        throughput: items as f64 / cycles as f64,
        false_conflicts: false_c,
        true_conflicts: true_c,
        merges,
        hybrid_fallbacks: fallbacks,
        flows: stats.flows,
        underestimated_flows: stats.underestimated,
        heavy_flows: heavy,
        heavy_false_negatives: missed,
        heavy_fn_rate: if heavy == 0 { 0.0 } else { missed as f64 / heavy as f64 },
        avg_abs_error: stats.avg_abs_error,
    };
    Ok(Simulation {
        hashes,
        counters: mem,
        metrics,
    })
}
