//! Throughput, efficiency and a communication roofline that does not use
//! the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Accounting, ArchConfig};
use crate::engine::Cycle;
use crate::mapping::Strategy;
use crate::system::SimOutcome;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("execution time must be at least one cycle")]
    ZeroCycles,
    #[error("baseline throughput must be positive")]
    ZeroBaseline,
}

/// Peak GMAC/s of `n_cl` IMAs doing back-to-back `c_in x c_out` jobs, in
/// exact (unrounded) time.
pub fn baseline_gmacs(
    n_cl: u32,
    c_in: u32,
    c_out: u32,
    t_eval_ns: f64,
    ports: u32,
    port_width_bytes: u32,
    f_clock: f64,
) -> f64 {
    let beat = f64::from(ports) * f64::from(port_width_bytes) * f_clock;
    let t = t_eval_ns * 1e-9 + f64::from(c_in) / beat + f64::from(c_out) / beat;
    1e-9 * f64::from(n_cl) * f64::from(c_in) * f64::from(c_out) / t
}

pub fn achieved_gmacs(total_macs: u64, tot_exec_cycles: Cycle, f_clock: f64) -> Result<f64, MetricsError> {
    if tot_exec_cycles == 0 {
        return Err(MetricsError::ZeroCycles);
    }
    Ok(1e-9 * f_clock * total_macs as f64 / tot_exec_cycles as f64)
}

/// Achieved throughput as a percentage of `baseline`.
pub fn efficiency_pct(total_macs: u64, tot_exec_cycles: Cycle, f_clock: f64, baseline: f64) -> Result<f64, MetricsError> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(achieved_gmacs(total_macs, tot_exec_cycles, f_clock)? / baseline * 100.0)
}

/// Cycles the CL-L2 link needs at minimum to move the traffic of
/// `pixels` output pixels.
///
/// Data-parallel runs read the input once per cluster (or once in total
/// with broadcast) and write every cluster's output slice. Pipelined runs
/// only touch L2 at the chain ends.
pub fn comm_roofline_cycles(
    strategy: Strategy,
    n_cl: u32,
    pixels: u64,
    bytes_in_per_pixel: u64,
    bytes_out_per_pixel: u64,
    link_bits_per_cycle: f64,
    broadcast: bool,
) -> f64 {
    let n = u64::from(n_cl);
    let (read, write) = match strategy {
        Strategy::DataParallel => {
            let read = if broadcast { bytes_in_per_pixel } else { n * bytes_in_per_pixel };
            (read, n * bytes_out_per_pixel)
        }
        Strategy::Pipelining => (bytes_in_per_pixel, bytes_out_per_pixel),
    };
    (pixels * 8 * (read + write)) as f64 / link_bits_per_cycle
}

/// Roofline-predicted speedup of the wireless configuration over each
/// wired one, for the data-parallel traffic profile.
pub fn predicted_speedup_ratios(
    wired_bits_per_cycle: &[f64],
    wireless_bits_per_cycle: f64,
    n_cl: u32,
    bytes_in_per_pixel: u64,
    bytes_out_per_pixel: u64,
) -> Vec<f64> {
    let wl = comm_roofline_cycles(
        Strategy::DataParallel,
        n_cl,
        1,
        bytes_in_per_pixel,
        bytes_out_per_pixel,
        wireless_bits_per_cycle,
        true,
    );
    wired_bits_per_cycle
        .iter()
        .map(|&bw| {
            comm_roofline_cycles(
                Strategy::DataParallel,
                n_cl,
                1,
                bytes_in_per_pixel,
                bytes_out_per_pixel,
                bw,
                false,
            ) / wl
        })
        .collect()
}

/// One run, flattened. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: Strategy,
    pub n_clusters: u32,
    pub interconnect: String,
    pub bandwidth_bits_per_cycle: f64,
    pub latency_cycles: u64,
    pub broadcast: bool,
    pub f_clock_hz: f64,
    pub tot_exec_cycles: u64,
    pub total_macs: u64,
    pub achieved_gmacs: f64,
    pub baseline_gmacs: f64,
    pub eta_pct: f64,
    pub link_busy_cycles: u64,
    pub link_wait_cycles: u64,
    pub l1_conflicts: u64,
    pub l2_conflicts: u64,
    pub l2_read_bytes: u64,
    pub l2_write_bytes: u64,
    pub broadcast_saved_bytes: u64,
    pub ima_utilization: f64,
    pub link_utilization: f64,
    pub input_wait_cycles: u64,
    /// Per cluster; JSON only.
    #[serde(default)]
    pub input_wait_per_cluster: Vec<u64>,
}

pub const CSV_COLUMNS: [&str; 22] = [
    "strategy",
    "n_clusters",
    "interconnect",
    "bandwidth_bits_per_cycle",
    "latency_cycles",
    "broadcast",
    "f_clock_hz",
    "tot_exec_cycles",
    "total_macs",
    "achieved_gmacs",
    "baseline_gmacs",
    "eta_pct",
    "link_busy_cycles",
    "link_wait_cycles",
    "l1_conflicts",
    "l2_conflicts",
    "l2_read_bytes",
    "l2_write_bytes",
    "broadcast_saved_bytes",
    "ima_utilization",
    "link_utilization",
    "input_wait_cycles",
];

impl MetricsReport {
    pub fn from_outcome(arch: &ArchConfig, strategy: Strategy, o: &SimOutcome) -> Result<Self, MetricsError> {
        let w = &o.workload;
        let total_macs: u64 = w.macs_per_cluster.iter().sum();
        let baseline: f64 = w
            .active_clusters
            .iter()
            .filter(|&&c| w.exact_seconds_per_cluster[c] > 0.0)
            .map(|&c| 1e-9 * w.macs_per_cluster[c] as f64 / w.exact_seconds_per_cluster[c])
            .sum();
        let tot = o.tot_exec_cycles;
        let achieved = achieved_gmacs(total_macs, tot, arch.f_clock)?;
        let eta = efficiency_pct(total_macs, tot, arch.f_clock, baseline)?;
        let busy: u64 = w.active_clusters.iter().map(|&c| o.counters.ima_busy_cycles[c]).sum();
        let n_active = w.active_clusters.len().max(1) as f64;
        let ic = &arch.interconnect;
        let pools = match ic.accounting {
            Accounting::AggregateShared => 1.0,
            Accounting::PerDirection => 2.0,
        };
        Ok(Self {
            strategy,
            n_clusters: arch.n_clusters,
            interconnect: ic.kind.to_string(),
            bandwidth_bits_per_cycle: ic.bandwidth_bits_per_cycle,
            latency_cycles: ic.latency_cycles,
            broadcast: ic.broadcast_enabled,
            f_clock_hz: arch.f_clock,
            tot_exec_cycles: tot,
            total_macs,
            achieved_gmacs: achieved,
            baseline_gmacs: baseline,
            eta_pct: eta,
            link_busy_cycles: o.counters.link_busy_cycles,
            link_wait_cycles: o.counters.link_wait_cycles,
            l1_conflicts: o.counters.l1_conflicts.iter().sum(),
            l2_conflicts: o.counters.l2_conflicts,
            l2_read_bytes: o.counters.l2_read_bytes,
            l2_write_bytes: o.counters.l2_write_bytes,
            broadcast_saved_bytes: o.counters.broadcast_saved_bytes,
            ima_utilization: busy as f64 / (n_active * tot as f64),
            link_utilization: o.counters.link_granted_bits / (pools * ic.bandwidth_bits_per_cycle * tot as f64),
            input_wait_cycles: o.input_wait_cycles.iter().sum(),
            input_wait_per_cluster: o.input_wait_cycles.clone(),
        })
    }

    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        [
            self.strategy.to_string(),
            self.n_clusters.to_string(),
            self.interconnect.clone(),
            format!("{:.6}", self.bandwidth_bits_per_cycle),
            self.latency_cycles.to_string(),
            self.broadcast.to_string(),
            format!("{:.6}", self.f_clock_hz),
            self.tot_exec_cycles.to_string(),
            self.total_macs.to_string(),
            format!("{:.6}", self.achieved_gmacs),
            format!("{:.6}", self.baseline_gmacs),
            format!("{:.6}", self.eta_pct),
            self.link_busy_cycles.to_string(),
            self.link_wait_cycles.to_string(),
            self.l1_conflicts.to_string(),
            self.l2_conflicts.to_string(),
            self.l2_read_bytes.to_string(),
            self.l2_write_bytes.to_string(),
            self.broadcast_saved_bytes.to_string(),
            format!("{:.6}", self.ima_utilization),
            format!("{:.6}", self.link_utilization),
            self.input_wait_cycles.to_string(),
        ]
        .join(",")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Header plus one row per report.
pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut s = MetricsReport::csv_header();
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_values() {
        let b1 = baseline_gmacs(1, 256, 256, 130.0, 16, 4, 350e6);
        // 65536 MACs every 130 ns + 2 * 256 B / (64 B * 350 MHz).
        let by_hand = 65536.0 / (130.0 + 2.0 * 256.0 / 64.0 / 0.35);
        assert!((b1 - by_hand).abs() < 1e-9);
        assert!((b1 - 428.74).abs() < 0.01);
        let b16 = baseline_gmacs(16, 256, 256, 130.0, 16, 4, 350e6);
        assert!((b16 - 16.0 * b1).abs() < 1e-9);
        assert!((b16 - 6859.8).abs() < 0.2);
        assert_eq!(baseline_gmacs(0, 256, 256, 130.0, 16, 4, 350e6), 0.0);
    }

    #[test]
    fn efficiency_values() {
        let b = baseline_gmacs(1, 256, 256, 130.0, 16, 4, 350e6);
        let e54 = efficiency_pct(65536, 54, 350e6, b).unwrap();
        assert!((e54 - 99.1).abs() < 0.05, "{e54}");
        let e108 = efficiency_pct(65536, 108, 350e6, b).unwrap();
        assert!((e108 - e54 / 2.0).abs() < 1e-9);
        assert!((e108 - 49.6).abs() < 0.1);
        assert_eq!(efficiency_pct(65536, 0, 350e6, b), Err(MetricsError::ZeroCycles));
    }

    #[test]
    fn roofline_values() {
        let dp = Strategy::DataParallel;
        assert_eq!(comm_roofline_cycles(dp, 16, 1, 256, 256, 64.0, false), 1024.0);
        assert_eq!(comm_roofline_cycles(dp, 16, 1, 256, 256, 256.0, true), 136.0);
        assert_eq!(
            comm_roofline_cycles(dp, 1, 1, 256, 256, 128.0, true),
            comm_roofline_cycles(dp, 1, 1, 256, 256, 128.0, false)
        );
        let r = predicted_speedup_ratios(&[64.0, 128.0, 256.0], 256.0, 16, 256, 256);
        assert!((r[0] - 1024.0 / 136.0).abs() < 1e-12);
        assert!((r[1] - 512.0 / 136.0).abs() < 1e-12);
        assert!((r[2] - 256.0 / 136.0).abs() < 1e-12);
        assert!(r[0] > r[1] && r[1] > r[2]);
    }

    proptest::proptest! {
        #[test]
        fn baseline_linear_in_clusters(n in 1u32..64, c in 1u32..1024) {
            let one = baseline_gmacs(1, c, c, 130.0, 16, 4, 350e6);
            let many = baseline_gmacs(n, c, c, 130.0, 16, 4, 350e6);
            proptest::prop_assert!((many - f64::from(n) * one).abs() <= 1e-9 * many);
        }
    }
}
