//! Benchmarks, single runs and parameter sweeps.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{validate, ArchConfig, InterconnectConfig, InterconnectKind, ValidatedArch, Violation};
use crate::engine::Timeline;
use crate::error::SimError;
use crate::mapping::{map_data_parallel, map_pipelining, LayerDescriptor, MapError, MappingPlan, Strategy};
use crate::metrics::{predicted_speedup_ratios, to_csv, MetricsError, MetricsReport};
use crate::system::{simulate, RunOptions};

/// Spatial side of the benchmark feature maps (8x8 = 64 pixels).
pub const BENCH_SIDE: u32 = 8;
pub const BENCH_CHANNELS: u32 = 256;
pub const PIPELINING_ITERATIONS: u32 = 64;
pub const DATA_PARALLEL_ITERATIONS: u32 = 1;
pub const DEFAULT_SWEEP_CAP: usize = 1024;
pub const FIG4_BENCHMARK: &str = "fig4";
pub const FIG4_CLUSTERS: [u32; 5] = [1, 2, 4, 8, 16];
/// Wireless-over-wired throughput ratios reported for 64/128/256 bit/cycle.
pub const FIG4_TARGET_RATIOS: [f64; 3] = [8.2, 4.1, 2.1];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<Violation>),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("sweep has {points} points, more than the cap of {cap}")]
    SweepTooLarge { points: usize, cap: usize },
    #[error("sweep spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Workload(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<Vec<Violation>> for HarnessError {
    fn from(v: Vec<Violation>) -> Self {
        HarnessError::Config(v)
    }
}

/// `n` identical 256->256 pointwise layers, one per cluster.
pub fn pipelining_benchmark(n: u32) -> Vec<LayerDescriptor> {
    (0..n)
        .map(|i| LayerDescriptor::pointwise(&format!("pw{i}"), BENCH_CHANNELS, BENCH_CHANNELS, BENCH_SIDE, BENCH_SIDE))
        .collect()
}

/// One 256 -> 256*n pointwise layer split over `n` clusters.
pub fn data_parallel_benchmark(n: u32) -> LayerDescriptor {
    LayerDescriptor::pointwise("wide", BENCH_CHANNELS, BENCH_CHANNELS * n, BENCH_SIDE, BENCH_SIDE)
}

/// What to run.
#[derive(Debug, Clone)]
pub enum Workload {
    /// The built-in benchmark for the chosen strategy, sized to the cluster count.
    Benchmark,
    Layers(Vec<LayerDescriptor>),
    Plan(MappingPlan),
}

fn default_iterations(workload: &Workload, strategy: Strategy) -> u32 {
    match (workload, strategy) {
        (Workload::Benchmark, Strategy::Pipelining) => PIPELINING_ITERATIONS,
        (Workload::Benchmark, Strategy::DataParallel) => DATA_PARALLEL_ITERATIONS,
        _ => 1,
    }
}

pub fn build_plan(arch: &ArchConfig, workload: &Workload, strategy: Strategy) -> Result<MappingPlan, HarnessError> {
    let n = arch.n_clusters as usize;
    let plan = match workload {
        Workload::Benchmark => match strategy {
            Strategy::Pipelining => map_pipelining(&pipelining_benchmark(arch.n_clusters), n)?,
            Strategy::DataParallel => map_data_parallel(&data_parallel_benchmark(arch.n_clusters), n)?,
        },
        Workload::Layers(layers) => match strategy {
            Strategy::Pipelining => map_pipelining(layers, n)?,
            Strategy::DataParallel => match layers.as_slice() {
                [one] => map_data_parallel(one, n)?,
                _ => {
                    return Err(HarnessError::Workload(format!(
                        "data-parallel mapping takes exactly one layer, got {}",
                        layers.len()
                    )))
                }
            },
        },
        Workload::Plan(p) => p.clone(),
    };
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: MetricsReport,
    pub timeline: Timeline,
    pub plan: MappingPlan,
}

/// Maps, simulates and measures one configuration.
pub fn run_once(
    arch: &ValidatedArch,
    workload: &Workload,
    strategy: Strategy,
    iterations: Option<u32>,
) -> Result<RunResult, HarnessError> {
    let plan = build_plan(arch, workload, strategy)?;
    let strategy = plan.strategy;
    let opts = RunOptions {
        iterations: iterations.unwrap_or_else(|| default_iterations(workload, strategy)),
        ..RunOptions::default()
    };
    let outcome = simulate(arch, &plan, opts)?;
    let report = MetricsReport::from_outcome(arch, strategy, &outcome)?;
    Ok(RunResult {
        report,
        timeline: outcome.timeline,
        plan,
    })
}

/// One interconnect point of a sweep. Missing fields take the defaults of `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub kind: InterconnectKind,
    pub bandwidth_bits_per_cycle: f64,
    #[serde(default)]
    pub latency_cycles: Option<u64>,
    #[serde(default)]
    pub broadcast: Option<bool>,
}

impl Variant {
    pub fn wired(bw: f64) -> Self {
        Self {
            kind: InterconnectKind::Wired,
            bandwidth_bits_per_cycle: bw,
            latency_cycles: None,
            broadcast: None,
        }
    }

    pub fn wireless(bw: f64) -> Self {
        Self {
            kind: InterconnectKind::Wireless,
            bandwidth_bits_per_cycle: bw,
            latency_cycles: None,
            broadcast: None,
        }
    }

    /// Interconnect settings, keeping the accounting mode of `base`.
    pub fn apply(&self, base: &InterconnectConfig) -> InterconnectConfig {
        let mut ic = match self.kind {
            InterconnectKind::Wired => InterconnectConfig::wired(self.bandwidth_bits_per_cycle),
            InterconnectKind::Wireless => InterconnectConfig::wireless(self.bandwidth_bits_per_cycle),
        };
        if let Some(l) = self.latency_cycles {
            ic.latency_cycles = l;
        }
        if let Some(b) = self.broadcast {
            ic.broadcast_enabled = b;
        }
        ic.accounting = base.accounting;
        ic
    }

    pub fn label(&self) -> String {
        self.apply(&InterconnectConfig::wired(1.0)).label()
    }
}

pub fn fig4_variants() -> Vec<Variant> {
    vec![
        Variant::wired(64.0),
        Variant::wired(128.0),
        Variant::wired(256.0),
        Variant::wireless(256.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n_clusters: Vec<u32>,
    pub variants: Vec<Variant>,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
    /// Overrides the per-strategy benchmark defaults.
    #[serde(default)]
    pub iterations: Option<u32>,
    #[serde(default = "default_cap")]
    pub max_points: usize,
    /// Only `fig4` (the built-in 1x1 benchmarks) exists.
    #[serde(default = "default_benchmark")]
    pub benchmark: String,
    /// Where the CSV goes when the caller does not say otherwise.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_benchmark() -> String {
    FIG4_BENCHMARK.to_string()
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_cap() -> usize {
    DEFAULT_SWEEP_CAP
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint<'a> {
    pub n_clusters: u32,
    pub variant: &'a Variant,
    pub strategy: Strategy,
}

impl SweepSpec {
    pub fn fig4() -> Self {
        Self {
            n_clusters: FIG4_CLUSTERS.to_vec(),
            variants: fig4_variants(),
            strategies: all_strategies(),
            iterations: None,
            max_points: DEFAULT_SWEEP_CAP,
            benchmark: default_benchmark(),
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        if spec.n_clusters.is_empty() || spec.variants.is_empty() || spec.strategies.is_empty() {
            return Err(HarnessError::Spec("every axis needs at least one value".into()));
        }
        if spec.benchmark != FIG4_BENCHMARK {
            return Err(HarnessError::Spec(format!("unknown benchmark `{}`", spec.benchmark)));
        }
        Ok(spec)
    }

    /// Points in cluster-count, variant, strategy order.
    pub fn points(&self) -> Vec<SweepPoint<'_>> {
        let mut v = Vec::new();
        for &n in &self.n_clusters {
            for variant in &self.variants {
                for &strategy in &self.strategies {
                    v.push(SweepPoint {
                        n_clusters: n,
                        variant,
                        strategy,
                    });
                }
            }
        }
        v
    }
}

/// Runs every point of `spec` in parallel. Results come back in
/// [`SweepSpec::points`] order regardless of scheduling.
pub fn run_sweep(base: &ArchConfig, spec: &SweepSpec) -> Result<Vec<MetricsReport>, HarnessError> {
    let points = spec.points();
    if points.len() > spec.max_points {
        return Err(HarnessError::SweepTooLarge {
            points: points.len(),
            cap: spec.max_points,
        });
    }
    let mut archs = Vec::with_capacity(points.len());
    for p in &points {
        let mut cfg = base.clone();
        cfg.n_clusters = p.n_clusters;
        cfg.interconnect = p.variant.apply(&base.interconnect);
        archs.push(validate(&cfg)?);
    }
    points
        .par_iter()
        .zip(archs.par_iter())
        .map(|(p, arch)| run_once(arch, &Workload::Benchmark, p.strategy, spec.iterations).map(|r| r.report))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub wired_bits_per_cycle: f64,
    pub simulated: f64,
    pub predicted: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig4Summary {
    pub n_clusters: u32,
    /// Data-parallel wireless-over-wired throughput at `n_clusters`.
    pub ratios: Vec<RatioRow>,
    /// Max minus min pipelining efficiency over the cluster axis, per variant.
    pub pipelining_eta_spread_pp: Vec<(String, f64)>,
    /// Pipelining input wait, wired vs wireless at equal bandwidth.
    pub input_wait_wired: u64,
    pub input_wait_wireless: u64,
    pub peak_tmacs: f64,
}

#[derive(Debug, Clone)]
pub struct Fig4 {
    pub reports: Vec<MetricsReport>,
    pub summary: Fig4Summary,
}

fn find(
    reports: &[MetricsReport],
    strategy: Strategy,
    n: u32,
    kind: InterconnectKind,
    bw: f64,
) -> Option<&MetricsReport> {
    reports.iter().find(|r| {
        r.strategy == strategy && r.n_clusters == n && r.interconnect == kind.to_string() && r.bandwidth_bits_per_cycle == bw
    })
}

/// Runs the default sweep and condenses it.
pub fn reproduce_figure4(base: &ArchConfig) -> Result<Fig4, HarnessError> {
    let spec = SweepSpec::fig4();
    let reports = run_sweep(base, &spec)?;
    let n = *FIG4_CLUSTERS.last().expect("non-empty");
    let dp = Strategy::DataParallel;
    let wl = find(&reports, dp, n, InterconnectKind::Wireless, 256.0).expect("wireless point");
    let wired = [64.0, 128.0, 256.0];
    let predicted = predicted_speedup_ratios(&wired, 256.0, n, u64::from(BENCH_CHANNELS), u64::from(BENCH_CHANNELS));
    let ratios = wired
        .iter()
        .zip(predicted)
        .zip(FIG4_TARGET_RATIOS)
        .map(|((&bw, predicted), target)| {
            let w = find(&reports, dp, n, InterconnectKind::Wired, bw).expect("wired point");
            RatioRow {
                wired_bits_per_cycle: bw,
                simulated: wl.achieved_gmacs / w.achieved_gmacs,
                predicted,
                target,
            }
        })
        .collect();
    let pipelining_eta_spread_pp = spec
        .variants
        .iter()
        .map(|v| {
            let etas: Vec<f64> = reports
                .iter()
                .filter(|r| {
                    r.strategy == Strategy::Pipelining
                        && r.interconnect == v.kind.to_string()
                        && r.bandwidth_bits_per_cycle == v.bandwidth_bits_per_cycle
                })
                .map(|r| r.eta_pct)
                .collect();
            let hi = etas.iter().cloned().fold(f64::MIN, f64::max);
            let lo = etas.iter().cloned().fold(f64::MAX, f64::min);
            (v.label(), hi - lo)
        })
        .collect();
    let pipe = Strategy::Pipelining;
    let iw = |kind: InterconnectKind| -> u64 {
        reports
            .iter()
            .filter(|r| r.strategy == pipe && r.interconnect == kind.to_string() && r.bandwidth_bits_per_cycle == 256.0)
            .map(|r| r.input_wait_cycles)
            .sum()
    };
    let peak_tmacs = reports.iter().map(|r| r.achieved_gmacs / 1000.0).fold(0.0, f64::max);
    Ok(Fig4 {
        summary: Fig4Summary {
            n_clusters: n,
            ratios,
            pipelining_eta_spread_pp,
            input_wait_wired: iw(InterconnectKind::Wired),
            input_wait_wireless: iw(InterconnectKind::Wireless),
            peak_tmacs,
        },
        reports,
    })
}

impl Fig4 {
    fn long_csv(&self, value_name: &str, value: impl Fn(&MetricsReport) -> f64) -> String {
        let mut s = format!("strategy,interconnect,n_clusters,{value_name}\n");
        for r in &self.reports {
            let label = InterconnectConfig {
                kind: if r.interconnect == "wireless" {
                    InterconnectKind::Wireless
                } else {
                    InterconnectKind::Wired
                },
                bandwidth_bits_per_cycle: r.bandwidth_bits_per_cycle,
                latency_cycles: r.latency_cycles,
                broadcast_enabled: r.broadcast,
                accounting: crate::config::Accounting::AggregateShared,
            }
            .label();
            s.push_str(&format!("{},{},{},{:.6}\n", r.strategy, label, r.n_clusters, value(r)));
        }
        s
    }

    pub fn efficiency_csv(&self) -> String {
        self.long_csv("eta_pct", |r| r.eta_pct)
    }

    pub fn throughput_csv(&self) -> String {
        self.long_csv("achieved_tmacs", |r| r.achieved_gmacs / 1000.0)
    }

    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = format!("data-parallel, {} clusters: wireless-256-bc over wired\n", s.n_clusters);
        for r in &s.ratios {
            out.push_str(&format!(
                "  wired-{:<4} simulated {:>6.2}x  roofline {:>6.2}x  reported {:>4.1}x\n",
                r.wired_bits_per_cycle, r.simulated, r.predicted, r.target
            ));
        }
        out.push_str("pipelining efficiency spread over cluster counts\n");
        for (label, pp) in &s.pipelining_eta_spread_pp {
            out.push_str(&format!("  {label:<16} {pp:.2} pp\n"));
        }
        out.push_str(&format!(
            "pipelining input wait at 256 bit/cycle: wired {} cycles, wireless {} cycles\n",
            s.input_wait_wired, s.input_wait_wireless
        ));
        out.push_str(&format!("peak throughput {:.2} TMAC/s\n", s.peak_tmacs));
        out
    }

    /// Writes `fig4_efficiency.csv`, `fig4_throughput.csv`, `fig4_runs.csv`
    /// and `fig4_summary.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("fig4_efficiency.csv"), self.efficiency_csv())?;
        fs::write(dir.join("fig4_throughput.csv"), self.throughput_csv())?;
        fs::write(dir.join("fig4_runs.csv"), to_csv(&self.reports))?;
        fs::write(dir.join("fig4_summary.txt"), self.summary_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_order_and_cap() {
        let spec = SweepSpec::fig4();
        let pts = spec.points();
        assert_eq!(pts.len(), 5 * 4 * 2);
        assert_eq!((pts[0].n_clusters, pts[0].strategy), (1, Strategy::Pipelining));
        assert_eq!(pts[1].strategy, Strategy::DataParallel);
        assert_eq!(pts[2].variant.bandwidth_bits_per_cycle, 128.0);
        let mut small = spec.clone();
        small.max_points = 3;
        let err = run_sweep(&ArchConfig::reference(), &small).unwrap_err();
        assert!(matches!(err, HarnessError::SweepTooLarge { points: 40, cap: 3 }));
    }

    #[test]
    fn spec_from_toml() {
        let spec = SweepSpec::from_toml(
            r#"
n_clusters = [1, 2]
strategies = ["data_parallel"]
[[variants]]
kind = "wireless"
bandwidth_bits_per_cycle = 256
"#,
        )
        .unwrap();
        assert_eq!(spec.points().len(), 2);
        assert_eq!(spec.max_points, DEFAULT_SWEEP_CAP);
        let ic = spec.variants[0].apply(&InterconnectConfig::wired(1.0));
        assert!(ic.broadcast_enabled);
        assert_eq!(ic.latency_cycles, 1);
        assert!(SweepSpec::from_toml("n_clusters = [1]\nvariants = []\n").is_err());
        assert!(SweepSpec::from_toml("bogus = 1").is_err());
        let other = "n_clusters = [1]\nbenchmark = \"resnet\"\n[[variants]]\nkind = \"wired\"\nbandwidth_bits_per_cycle = 64\n";
        assert!(SweepSpec::from_toml(other).is_err());
    }

    #[test]
    fn benchmark_shapes() {
        assert_eq!(pipelining_benchmark(3).len(), 3);
        assert_eq!(data_parallel_benchmark(4).c_out, 1024);
        assert_eq!(data_parallel_benchmark(4).out_pixels(), 64);
    }
}
