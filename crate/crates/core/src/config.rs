//! Hardware description of the many-cluster system.
//!
//! The config file is TOML. Required keys are `f_clock`, `n_clusters`, the
//! `[cluster.ima]` geometry and timing, `interconnect.kind` and one of
//! `interconnect.bandwidth_bits_per_cycle` / `interconnect.bandwidth_gbit_s`.
//! Everything else has a default (see [`defaults`]).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// L1 word size in bytes. Bank interleaving and port accounting use it.
pub const L1_WORD_BYTES: u32 = 4;

/// Largest crossbar dimension the analog array technology allows.
pub const MAX_CROSSBAR_DIM: u32 = 1024;

pub const MAX_CLUSTERS: u32 = 64;

/// Defaults for fields the config may omit.
pub mod defaults {
    pub const N_CORES: u32 = 8;
    pub const L1_BYTES: u32 = 65536;
    pub const L1_BANKS: u32 = 16;
    pub const DMA_CHANNELS: u32 = 2;
    pub const PROG_OVERHEAD_CYCLES: u64 = 150;
    pub const TILE_OVERHEAD_CYCLES: u64 = 40;
    pub const EVENT_LATENCY_CYCLES: u64 = 2;
    pub const INPUT_BITS: u32 = 8;
    pub const WEIGHT_BITS: u32 = 4;
    pub const L2_BANKS: u32 = 16;
    pub const L2_BANK_WORD_BYTES: u32 = 8;
    pub const L2_CAPACITY_BYTES: u64 = 16 * 1024 * 1024;
    pub const WIRED_LATENCY_CYCLES: u64 = 9;
    pub const WIRELESS_LATENCY_CYCLES: u64 = 1;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Clock frequency in Hz.
    pub f_clock: f64,
    pub n_clusters: u32,
    pub cluster: ClusterConfig,
    pub interconnect: InterconnectConfig,
    pub l2: L2Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_cores: u32,
    pub l1_bytes: u32,
    pub l1_banks: u32,
    pub dma_channels: u32,
    /// Cycles the cores spend creating a new IMA context (weight switch).
    pub prog_overhead_cycles: u64,
    /// Fixed core scheduling cost charged before each tile is launched.
    pub tile_overhead_cycles: u64,
    pub event_latency_cycles: u64,
    pub ima: ImaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImaConfig {
    /// Crossbar wordlines: max input channels per job.
    pub rows: u32,
    /// Crossbar bitlines: max output channels per job.
    pub cols: u32,
    pub ports: u32,
    pub port_width_bytes: u32,
    pub t_eval_ns: f64,
    pub input_bits: u32,
    pub weight_bits: u32,
}

impl ImaConfig {
    /// Bytes moved between L1 and the IMA per streaming cycle.
    pub fn stream_bytes_per_cycle(&self) -> u32 {
        self.ports * self.port_width_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterconnectKind {
    Wired,
    Wireless,
}

impl fmt::Display for InterconnectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterconnectKind::Wired => "wired",
            InterconnectKind::Wireless => "wireless",
        })
    }
}

/// How reads (L2 to clusters) and writes (clusters to L2) share the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// One capacity pool for both directions.
    AggregateShared,
    /// Full capacity in each direction.
    PerDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectConfig {
    pub kind: InterconnectKind,
    pub bandwidth_bits_per_cycle: f64,
    pub latency_cycles: u64,
    pub broadcast_enabled: bool,
    pub accounting: Accounting,
}

impl InterconnectConfig {
    pub fn wired(bandwidth_bits_per_cycle: f64) -> Self {
        Self {
            kind: InterconnectKind::Wired,
            bandwidth_bits_per_cycle,
            latency_cycles: defaults::WIRED_LATENCY_CYCLES,
            broadcast_enabled: false,
            accounting: Accounting::AggregateShared,
        }
    }

    pub fn wireless(bandwidth_bits_per_cycle: f64) -> Self {
        Self {
            kind: InterconnectKind::Wireless,
            bandwidth_bits_per_cycle,
            latency_cycles: defaults::WIRELESS_LATENCY_CYCLES,
            broadcast_enabled: true,
            accounting: Accounting::AggregateShared,
        }
    }

    /// Short label such as `wired-64` or `wireless-256-bc`.
    pub fn label(&self) -> String {
        let mut s = format!("{}-{}", self.kind, self.bandwidth_bits_per_cycle);
        if self.broadcast_enabled {
            s.push_str("-bc");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Config {
    pub banks: u32,
    pub bank_word_bytes: u32,
    pub capacity_bytes: u64,
}

impl ArchConfig {
    /// 350 MHz, 16 clusters, 256x256 IMA with 16 x 4 B ports and 130 ns eval,
    /// wired 256 bit/cycle link with 9-cycle latency.
    pub fn reference() -> Self {
        Self {
            f_clock: 350e6,
            n_clusters: 16,
            cluster: ClusterConfig {
                n_cores: defaults::N_CORES,
                l1_bytes: defaults::L1_BYTES,
                l1_banks: defaults::L1_BANKS,
                dma_channels: defaults::DMA_CHANNELS,
                prog_overhead_cycles: defaults::PROG_OVERHEAD_CYCLES,
                tile_overhead_cycles: defaults::TILE_OVERHEAD_CYCLES,
                event_latency_cycles: defaults::EVENT_LATENCY_CYCLES,
                ima: ImaConfig {
                    rows: 256,
                    cols: 256,
                    ports: 16,
                    port_width_bytes: 4,
                    t_eval_ns: 130.0,
                    input_bits: defaults::INPUT_BITS,
                    weight_bits: defaults::WEIGHT_BITS,
                },
            },
            interconnect: InterconnectConfig::wired(256.0),
            l2: L2Config {
                banks: defaults::L2_BANKS,
                bank_word_bytes: defaults::L2_BANK_WORD_BYTES,
                capacity_bytes: defaults::L2_CAPACITY_BYTES,
            },
        }
    }

    /// Canonical TOML rendering; `parse_config(&cfg.render())` returns `cfg`.
    pub fn render(&self) -> String {
        toml::to_string(self).expect("ArchConfig always serializes")
    }
}

/// Converts a link bandwidth in Gbit/s to bits per clock cycle.
pub fn bits_per_cycle(bandwidth_gbit_s: f64, f_clock_hz: f64) -> Result<f64, ConfigError> {
    if !bandwidth_gbit_s.is_finite() || bandwidth_gbit_s <= 0.0 {
        return Err(ConfigError::NonPositive("bandwidth_gbit_s"));
    }
    if !f_clock_hz.is_finite() || f_clock_hz <= 0.0 {
        return Err(ConfigError::NonPositive("f_clock"));
    }
    Ok(bandwidth_gbit_s * 1e9 / f_clock_hz)
}

/// Rounds a duration in ns up to whole clock cycles.
pub fn ns_to_cycles(ns: f64, f_clock_hz: f64) -> u64 {
    // Products like 100 ns * 1 GHz can land a hair above the integer.
    let cycles = ns * f_clock_hz * 1e-9;
    (cycles - 1e-9).ceil().max(0.0) as u64
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key `{key}` at line {line}, column {column}")]
    UnknownKey {
        key: String,
        line: usize,
        column: usize,
    },
    #[error("missing required key {0}")]
    MissingKey(&'static str),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("interconnect: give bandwidth_bits_per_cycle or bandwidth_gbit_s, not both")]
    ConflictingBandwidth,
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A configuration that passed [`validate`], with derived cycle quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedArch {
    cfg: ArchConfig,
    eval_cycles: u64,
}

impl ValidatedArch {
    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    /// Analog evaluation time rounded up to cycles.
    pub fn eval_cycles(&self) -> u64 {
        self.eval_cycles
    }

    pub fn into_config(self) -> ArchConfig {
        self.cfg
    }
}

impl std::ops::Deref for ValidatedArch {
    type Target = ArchConfig;

    fn deref(&self) -> &ArchConfig {
        &self.cfg
    }
}

/// Checks every invariant and reports all violations, not just the first.
pub fn validate(cfg: &ArchConfig) -> Result<ValidatedArch, Vec<Violation>> {
    let mut v = Vec::new();
    let mut bad = |field: &'static str, message: String| v.push(Violation { field, message });

    if !cfg.f_clock.is_finite() || cfg.f_clock <= 0.0 {
        bad("f_clock", "f_clock must be > 0".into());
    }
    if cfg.n_clusters < 1 {
        bad("n_clusters", "n_clusters must be ≥ 1".into());
    } else if cfg.n_clusters > MAX_CLUSTERS {
        bad("n_clusters", format!("n_clusters exceeds {MAX_CLUSTERS}"));
    }

    let cl = &cfg.cluster;
    if cl.n_cores < 1 {
        bad("cluster.n_cores", "n_cores must be ≥ 1".into());
    }
    if !cl.l1_banks.is_power_of_two() {
        bad("cluster.l1_banks", "l1_banks must be a power of two".into());
    } else {
        if cl.l1_banks > 64 {
            bad("cluster.l1_banks", "l1_banks exceeds 64".into());
        }
        if !cl.l1_bytes.is_multiple_of(cl.l1_banks * L1_WORD_BYTES) {
            bad(
                "cluster.l1_bytes",
                "l1_bytes must be divisible by l1_banks words".into(),
            );
        }
    }
    if cl.l1_bytes == 0 {
        bad("cluster.l1_bytes", "l1_bytes must be > 0".into());
    }
    if cl.dma_channels < 1 || cl.dma_channels > 8 {
        bad("cluster.dma_channels", "dma_channels must be in 1..=8".into());
    }
    if cl.event_latency_cycles < 1 {
        bad(
            "cluster.event_latency_cycles",
            "event_latency_cycles must be ≥ 1".into(),
        );
    }

    let ima = &cl.ima;
    if ima.rows < 1 {
        bad("cluster.ima.rows", "rows must be ≥ 1".into());
    } else if ima.rows > MAX_CROSSBAR_DIM {
        bad("cluster.ima.rows", format!("rows exceeds {MAX_CROSSBAR_DIM}"));
    }
    if ima.cols < 1 {
        bad("cluster.ima.cols", "cols must be ≥ 1".into());
    } else if ima.cols > MAX_CROSSBAR_DIM {
        bad("cluster.ima.cols", format!("cols exceeds {MAX_CROSSBAR_DIM}"));
    }
    if ima.ports < 1 {
        bad("cluster.ima.ports", "ports must be ≥ 1".into());
    }
    if ima.port_width_bytes < 1 || !ima.port_width_bytes.is_multiple_of(L1_WORD_BYTES) {
        bad(
            "cluster.ima.port_width_bytes",
            "port_width_bytes must be a positive multiple of the 4-byte L1 word".into(),
        );
    }
    if ima.ports * ima.port_width_bytes > ima.rows {
        bad(
            "cluster.ima.ports",
            "ports × port_width_bytes exceeds rows".into(),
        );
    }
    if !ima.t_eval_ns.is_finite() || ima.t_eval_ns <= 0.0 {
        bad("cluster.ima.t_eval_ns", "t_eval_ns must be > 0".into());
    }
    if !(1..=16).contains(&ima.input_bits) {
        bad("cluster.ima.input_bits", "input_bits must be in 1..=16".into());
    }
    if !(1..=16).contains(&ima.weight_bits) {
        bad("cluster.ima.weight_bits", "weight_bits must be in 1..=16".into());
    }

    let ic = &cfg.interconnect;
    if !ic.bandwidth_bits_per_cycle.is_finite() || ic.bandwidth_bits_per_cycle <= 0.0 {
        bad(
            "interconnect.bandwidth_bits_per_cycle",
            "bandwidth_bits_per_cycle must be > 0".into(),
        );
    }
    if ic.latency_cycles < 1 {
        bad(
            "interconnect.latency_cycles",
            "latency_cycles must be ≥ 1".into(),
        );
    }
    if ic.kind == InterconnectKind::Wired && ic.broadcast_enabled {
        bad(
            "interconnect.broadcast_enabled",
            "broadcast is only available on a wireless interconnect".into(),
        );
    }

    let l2 = &cfg.l2;
    if l2.banks < 1 {
        bad("l2.banks", "banks must be ≥ 1".into());
    }
    if l2.bank_word_bytes < 1 {
        bad("l2.bank_word_bytes", "bank_word_bytes must be ≥ 1".into());
    }
    if l2.capacity_bytes < 1 {
        bad("l2.capacity_bytes", "capacity_bytes must be ≥ 1".into());
    }
    let l2_bits = f64::from(l2.banks) * f64::from(l2.bank_word_bytes) * 8.0;
    if l2_bits < ic.bandwidth_bits_per_cycle {
        bad(
            "l2.banks",
            "aggregate L2 bank bandwidth is below the interconnect bandwidth".into(),
        );
    }

    if !v.is_empty() {
        return Err(v);
    }
    Ok(ValidatedArch {
        eval_cycles: ns_to_cycles(cfg.cluster.ima.t_eval_ns, cfg.f_clock),
        cfg: cfg.clone(),
    })
}

// Raw document mirrors the file layout with every key optional so that
// missing keys can be reported by name.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    f_clock: Option<f64>,
    n_clusters: Option<u32>,
    cluster: Option<RawCluster>,
    interconnect: Option<RawInterconnect>,
    l2: Option<RawL2>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCluster {
    n_cores: Option<u32>,
    l1_bytes: Option<u32>,
    l1_banks: Option<u32>,
    dma_channels: Option<u32>,
    prog_overhead_cycles: Option<u64>,
    tile_overhead_cycles: Option<u64>,
    event_latency_cycles: Option<u64>,
    ima: Option<RawIma>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIma {
    rows: Option<u32>,
    cols: Option<u32>,
    ports: Option<u32>,
    port_width_bytes: Option<u32>,
    t_eval_ns: Option<f64>,
    input_bits: Option<u32>,
    weight_bits: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterconnect {
    kind: Option<InterconnectKind>,
    bandwidth_bits_per_cycle: Option<f64>,
    bandwidth_gbit_s: Option<f64>,
    latency_cycles: Option<u64>,
    broadcast_enabled: Option<bool>,
    accounting: Option<Accounting>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawL2 {
    banks: Option<u32>,
    bank_word_bytes: Option<u32>,
    capacity_bytes: Option<u64>,
}

fn required<T>(v: Option<T>, key: &'static str) -> Result<T, ConfigError> {
    v.ok_or(ConfigError::MissingKey(key))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn map_toml_error(text: &str, err: toml::de::Error) -> ConfigError {
    let (line, column) = err
        .span()
        .map(|s| line_col(text, s.start))
        .unwrap_or((1, 1));
    let message = err.message().to_string();
    if let Some(rest) = message.strip_prefix("unknown field `") {
        let key = rest.split('`').next().unwrap_or_default().to_string();
        return ConfigError::UnknownKey { key, line, column };
    }
    ConfigError::Syntax {
        line,
        column,
        message,
    }
}

/// Parses and validates a TOML config document, applying defaults.
pub fn parse_config(text: &str) -> Result<ArchConfig, ConfigError> {
    let raw: RawDoc = toml::from_str(text).map_err(|e| map_toml_error(text, e))?;

    let f_clock = required(raw.f_clock, "f_clock")?;
    let n_clusters = required(raw.n_clusters, "n_clusters")?;
    let cl = required(raw.cluster, "cluster")?;
    let ima = required(cl.ima, "cluster.ima")?;
    let ima = ImaConfig {
        rows: required(ima.rows, "cluster.ima.rows")?,
        cols: required(ima.cols, "cluster.ima.cols")?,
        ports: required(ima.ports, "cluster.ima.ports")?,
        port_width_bytes: required(ima.port_width_bytes, "cluster.ima.port_width_bytes")?,
        t_eval_ns: required(ima.t_eval_ns, "cluster.ima.t_eval_ns")?,
        input_bits: ima.input_bits.unwrap_or(defaults::INPUT_BITS),
        weight_bits: ima.weight_bits.unwrap_or(defaults::WEIGHT_BITS),
    };
    let cluster = ClusterConfig {
        n_cores: cl.n_cores.unwrap_or(defaults::N_CORES),
        l1_bytes: cl.l1_bytes.unwrap_or(defaults::L1_BYTES),
        l1_banks: cl.l1_banks.unwrap_or(defaults::L1_BANKS),
        dma_channels: cl.dma_channels.unwrap_or(defaults::DMA_CHANNELS),
        prog_overhead_cycles: cl
            .prog_overhead_cycles
            .unwrap_or(defaults::PROG_OVERHEAD_CYCLES),
        tile_overhead_cycles: cl
            .tile_overhead_cycles
            .unwrap_or(defaults::TILE_OVERHEAD_CYCLES),
        event_latency_cycles: cl
            .event_latency_cycles
            .unwrap_or(defaults::EVENT_LATENCY_CYCLES),
        ima,
    };

    let ic = required(raw.interconnect, "interconnect")?;
    let kind = required(ic.kind, "interconnect.kind")?;
    let bandwidth_bits_per_cycle = match (ic.bandwidth_bits_per_cycle, ic.bandwidth_gbit_s) {
        (Some(_), Some(_)) => return Err(ConfigError::ConflictingBandwidth),
        (Some(b), None) => b,
        (None, Some(g)) => bits_per_cycle(g, f_clock)?,
        (None, None) => return Err(ConfigError::MissingKey("interconnect.bandwidth_bits_per_cycle")),
    };
    let interconnect = InterconnectConfig {
        kind,
        bandwidth_bits_per_cycle,
        latency_cycles: ic.latency_cycles.unwrap_or(match kind {
            InterconnectKind::Wired => defaults::WIRED_LATENCY_CYCLES,
            InterconnectKind::Wireless => defaults::WIRELESS_LATENCY_CYCLES,
        }),
        broadcast_enabled: ic
            .broadcast_enabled
            .unwrap_or(kind == InterconnectKind::Wireless),
        accounting: ic.accounting.unwrap_or(Accounting::AggregateShared),
    };

    let l2 = raw.l2.unwrap_or_default();
    let l2 = L2Config {
        banks: l2.banks.unwrap_or(defaults::L2_BANKS),
        bank_word_bytes: l2.bank_word_bytes.unwrap_or(defaults::L2_BANK_WORD_BYTES),
        capacity_bytes: l2.capacity_bytes.unwrap_or(defaults::L2_CAPACITY_BYTES),
    };

    let cfg = ArchConfig {
        f_clock,
        n_clusters,
        cluster,
        interconnect,
        l2,
    };
    validate(&cfg).map_err(ConfigError::Invalid)?;
    Ok(cfg)
}
