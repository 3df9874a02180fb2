//! In-memory accelerator: job description and contention-free phase times.

use serde::{Deserialize, Serialize};

use crate::config::{ns_to_cycles, ImaConfig};
use crate::engine::Cycle;
use crate::error::SimError;

/// One stream-in / eval / stream-out pass through the crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImaJob {
    pub c_in: u32,
    pub c_out: u32,
    /// L1 byte address the inputs are streamed from.
    pub l1_src: u64,
    /// L1 byte address the outputs are written to.
    pub l1_dst: u64,
    pub needs_reprogram: bool,
}

impl ImaJob {
    pub fn check(&self, ima: &ImaConfig) -> Result<(), SimError> {
        if self.c_in == 0 || self.c_out == 0 || self.c_in > ima.rows || self.c_out > ima.cols {
            return Err(SimError::CrossbarExceeded {
                c_in: self.c_in,
                c_out: self.c_out,
                rows: ima.rows,
                cols: ima.cols,
            });
        }
        Ok(())
    }

    /// Bytes streamed in (one input element per channel).
    pub fn in_bytes(&self, ima: &ImaConfig) -> u64 {
        elem_bytes(self.c_in, ima.input_bits)
    }

    pub fn out_bytes(&self, ima: &ImaConfig) -> u64 {
        elem_bytes(self.c_out, ima.input_bits)
    }
}

fn elem_bytes(channels: u32, bits: u32) -> u64 {
    (u64::from(channels) * u64::from(bits)).div_ceil(8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImaPhases {
    pub stream_in: Cycle,
    pub eval: Cycle,
    pub stream_out: Cycle,
}

impl ImaPhases {
    pub fn total(&self) -> Cycle {
        self.stream_in + self.eval + self.stream_out
    }
}

/// Contention-free phase lengths of a `c_in x c_out` job.
pub fn ima_phase_cycles(cfg: &ImaConfig, c_in: u32, c_out: u32, f_clock: f64) -> Result<ImaPhases, SimError> {
    let job = ImaJob {
        c_in,
        c_out,
        l1_src: 0,
        l1_dst: 0,
        needs_reprogram: false,
    };
    job.check(cfg)?;
    let beat = u64::from(cfg.stream_bytes_per_cycle());
    Ok(ImaPhases {
        stream_in: job.in_bytes(cfg).div_ceil(beat),
        eval: ns_to_cycles(cfg.t_eval_ns, f_clock),
        stream_out: job.out_bytes(cfg).div_ceil(beat),
    })
}

/// Exact (unrounded) duration of a job in seconds, as used by the baseline.
pub fn ima_job_seconds(cfg: &ImaConfig, c_in: u32, c_out: u32, f_clock: f64) -> f64 {
    let beat = f64::from(cfg.stream_bytes_per_cycle()) * f_clock;
    let t_in = elem_bytes(c_in, cfg.input_bits) as f64 / beat;
    let t_out = elem_bytes(c_out, cfg.input_bits) as f64 / beat;
    cfg.t_eval_ns * 1e-9 + t_in + t_out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ArchConfig;

    fn ima() -> ImaConfig {
        ArchConfig::reference().cluster.ima
    }

    #[test]
    fn full_job() {
        let p = ima_phase_cycles(&ima(), 256, 256, 350e6).unwrap();
        assert_eq!((p.stream_in, p.eval, p.stream_out), (4, 46, 4));
        assert_eq!(p.total(), 54);
    }

    #[test]
    fn one_beat_job() {
        let p = ima_phase_cycles(&ima(), 64, 64, 350e6).unwrap();
        assert_eq!((p.stream_in, p.eval, p.stream_out), (1, 46, 1));
    }

    #[test]
    fn too_many_rows() {
        assert!(matches!(
            ima_phase_cycles(&ima(), 300, 256, 350e6),
            Err(SimError::CrossbarExceeded { c_in: 300, .. })
        ));
        assert!(ima_phase_cycles(&ima(), 0, 256, 350e6).is_err());
    }

    #[test]
    fn exact_time() {
        let t = ima_job_seconds(&ima(), 256, 256, 350e6);
        let by_hand = 130e-9 + 2.0 * 256.0 / (64.0 * 350e6);
        assert!((t - by_hand).abs() < 1e-18);
    }
}
