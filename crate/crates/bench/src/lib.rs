//! Fixtures shared by the criterion benches.

use aimcsim::cluster::ImaJob;
use aimcsim::harness::{data_parallel_benchmark, pipelining_benchmark};
use aimcsim::mapping::{map_data_parallel, map_pipelining};
use aimcsim::{validate, ArchConfig, InterconnectConfig, MappingPlan, ValidatedArch};

pub fn arch(n_clusters: u32, ic: InterconnectConfig) -> ValidatedArch {
    let mut cfg = ArchConfig::reference();
    cfg.n_clusters = n_clusters;
    cfg.interconnect = ic;
    validate(&cfg).expect("bench config is valid")
}

pub fn wired(bw: f64) -> InterconnectConfig {
    InterconnectConfig::wired(bw)
}

pub fn wireless(bw: f64) -> InterconnectConfig {
    InterconnectConfig::wireless(bw)
}

pub fn data_parallel_plan(n: u32) -> MappingPlan {
    map_data_parallel(&data_parallel_benchmark(n), n as usize).expect("benchmark maps")
}

pub fn pipelining_plan(n: u32) -> MappingPlan {
    map_pipelining(&pipelining_benchmark(n), n as usize).expect("benchmark maps")
}

/// `count` back-to-back full-crossbar jobs.
pub fn full_jobs(count: usize) -> Vec<ImaJob> {
    (0..count)
        .map(|i| ImaJob {
            c_in: 256,
            c_out: 256,
            l1_src: 8192,
            l1_dst: 16384,
            needs_reprogram: i == 0,
        })
        .collect()
}
