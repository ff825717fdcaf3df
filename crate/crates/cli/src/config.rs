//! Experiment configuration: a TOML file with dotted key paths, overridable
//! key by key from the command line.

use std::path::{Path, PathBuf};

use hbrick::pipesim::{PipelineConfig, PipelineStrategy};
use hbrick::traces::ZipfSpec;
use hbrick::{BackendKind, HbrickConfig, UpdateStrategy};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Records,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSource {
    Zipf,
    Caida,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSection {
    pub depth: usize,
    pub width: usize,
    pub strategy: UpdateStrategy,
    pub backends: Vec<BackendKind>,
    /// Counter width of the flat backend.
    pub flat_width_bits: u32,
    /// Entries per flat array. Unset: the smallest power of two whose
    /// counter bits cover the HBRICK array's counter bits.
    pub flat_width: Option<usize>,
    pub hbrick_levels: usize,
    pub assoc_capacity: usize,
    pub brick_spares: usize,
    /// Absolute heavy-hitter threshold in bytes; overrides `heavy_fraction`.
    pub heavy_threshold: Option<u64>,
    /// Threshold as a fraction of total trace bytes.
    pub heavy_fraction: f64,
}

impl Default for SketchSection {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 1 << 15,
            strategy: UpdateStrategy::Plain,
            backends: vec![BackendKind::Flat, BackendKind::Brick, BackendKind::Hbrick],
            flat_width_bits: 32,
            flat_width: None,
            hbrick_levels: 3,
            assoc_capacity: 128,
            brick_spares: 100,
            heavy_threshold: None,
            heavy_fraction: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub source: TraceSource,
    pub path: Option<PathBuf>,
    pub n_packets: u64,
    pub n_flows: u64,
    /// One experiment cell per skewness value (synthetic sources only).
    pub skews: Vec<f64>,
    pub size_min: u64,
    pub size_max: u64,
    /// Generator seed; defaults to the master seed.
    pub seed: Option<u64>,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self {
            source: TraceSource::Zipf,
            path: None,
            n_packets: 100_000,
            n_flows: 10_000,
            skews: vec![1.0],
            size_min: 64,
            size_max: 1500,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub read_latency: u32,
    pub compute_latency: u32,
    pub write_latency: u32,
    pub dfu_depth: Option<u32>,
    pub merge_depth: Option<usize>,
    /// Adds the HBRICK index latency to reads and writes.
    pub hbrick_mode: bool,
    pub strategies: Vec<PipelineStrategy>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            read_latency: 2,
            compute_latency: 10,
            write_latency: 2,
            dfu_depth: None,
            merge_depth: None,
            hbrick_mode: false,
            strategies: PipelineStrategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub levels: Vec<usize>,
    /// Flat baseline counter width, also the spare/associative value width.
    pub baseline_width: u32,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self {
            levels: vec![2, 3, 4, 5],
            baseline_width: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub sketch: SketchSection,
    pub trace: TraceSection,
    pub pipeline: PipelineSection,
    pub memory: MemorySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            format: Format::Table,
            out: None,
            sketch: SketchSection::default(),
            trace: TraceSection::default(),
            pipeline: PipelineSection::default(),
            memory: MemorySection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any) and applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    /// Parses TOML text, then applies overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = parse_table(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn trace_seed(&self) -> u64 {
        self.trace.seed.unwrap_or(self.seed)
    }

    pub fn heavy_threshold(&self, total_bytes: u128) -> u64 {
        self.sketch.heavy_threshold.unwrap_or_else(|| {
            let v = self.sketch.heavy_fraction * total_bytes as f64;
            v.floor().min(u64::MAX as f64) as u64
        })
    }

    /// Synthetic trace specs, one per skewness value.
    pub fn zipf_specs(&self) -> Vec<ZipfSpec> {
        let t = &self.trace;
        let seed = self.trace_seed();
        let skews: Vec<f64> = match t.source {
            TraceSource::Caida => vec![1.0],
            _ => t.skews.clone(),
        };
        skews
            .into_iter()
            .map(|s| {
                let mut z = match t.source {
                    TraceSource::Caida => ZipfSpec::caida_profile(t.n_packets, seed),
                    _ => ZipfSpec::new(t.n_packets, t.n_flows, s, seed),
                };
                z.size_min = t.size_min;
                z.size_max = t.size_max;
                z
            })
            .collect()
    }

    pub fn hbrick_config(&self) -> Result<HbrickConfig, CliError> {
        let mut c = HbrickConfig::profile(self.sketch.hbrick_levels, self.sketch.width).ok_or_else(|| {
            CliError::config(format!("no HBRICK profile with {} levels", self.sketch.hbrick_levels))
        })?;
        c.assoc_capacity = self.sketch.assoc_capacity;
        c.validate().map_err(CliError::from)?;
        Ok(c)
    }

    pub fn pipeline_config(&self, threshold: u64) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            read_latency: p.read_latency,
            compute_latency: p.compute_latency,
            write_latency: p.write_latency,
            dfu_depth: p.dfu_depth,
            merge_depth: p.merge_depth,
            strategy: PipelineStrategy::PlainDfu,
            backend_overhead: if p.hbrick_mode {
                HbrickConfig::profile(self.sketch.hbrick_levels, self.sketch.width)
                    .map_or(0, |c| c.update_latency)
            } else {
                0
            },
            depth: self.sketch.depth,
            width: self.sketch.width,
            seed: self.seed,
            heavy_threshold: threshold,
        }
    }

    /// Checks everything that can be checked without touching the trace.
    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.sketch;
        if s.depth == 0 || s.depth > 64 {
            return Err(CliError::config(format!("sketch.depth must be in 1..=64, got {}", s.depth)));
        }
        if s.width == 0 || !s.width.is_power_of_two() {
            return Err(CliError::config(format!("sketch.width must be a power of two, got {}", s.width)));
        }
        if let Some(w) = s.flat_width {
            if w == 0 || !w.is_power_of_two() {
                return Err(CliError::config(format!("sketch.flat_width must be a power of two, got {w}")));
            }
        }
        if !(1..=64).contains(&s.flat_width_bits) {
            return Err(CliError::config(format!("sketch.flat_width_bits must be in 1..=64, got {}", s.flat_width_bits)));
        }
        if s.backends.is_empty() {
            return Err(CliError::config("sketch.backends is empty"));
        }
        if !(s.heavy_fraction.is_finite() && s.heavy_fraction >= 0.0) {
            return Err(CliError::config("sketch.heavy_fraction must be a non-negative number"));
        }
        self.hbrick_config()?;
        let t = &self.trace;
        match (t.source, &t.path) {
            (TraceSource::File, None) => {
                return Err(CliError::config("trace.source = \"file\" needs trace.path"));
            }
            (TraceSource::File, Some(p)) if !p.is_file() => {
                return Err(CliError::io(format!("trace file {} does not exist", p.display())));
            }
            (TraceSource::Zipf | TraceSource::Caida, Some(_)) => {
                return Err(CliError::config("trace.path is only valid with trace.source = \"file\""));
            }
            _ => {}
        }
        if t.source == TraceSource::Zipf && t.skews.is_empty() {
            return Err(CliError::config("trace.skews is empty"));
        }
        if t.source != TraceSource::File {
            for z in self.zipf_specs() {
                z.validate().map_err(CliError::from)?;
            }
        }
        let m = &self.memory;
        if !(1..=64).contains(&m.baseline_width) {
            return Err(CliError::config(format!("memory.baseline_width must be in 1..=64, got {}", m.baseline_width)));
        }
        for &l in &m.levels {
            if HbrickConfig::profile(l, s.width).is_none() {
                return Err(CliError::config(format!("memory.levels: no HBRICK profile with {l} levels (1..=5)")));
            }
        }
        if self.pipeline.strategies.is_empty() {
            return Err(CliError::config("pipeline.strategies is empty"));
        }
        for &st in &self.pipeline.strategies {
            self.pipeline_config(0).with_strategy(st).validate().map_err(CliError::from)?;
        }
        Ok(())
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table, CliError> {
    text.parse::<toml::Table>()
        .map_err(|e| CliError::config(e.message().to_string()))
}

/// Applies one `dotted.key=value` override. The value is read as a TOML
/// value when it parses as one, otherwise as a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override {spec:?} is not key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(format!("bad key path {path:?}")));
    }
    let (last, parents) = keys.split_last().unwrap();
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("{k} in {path:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
