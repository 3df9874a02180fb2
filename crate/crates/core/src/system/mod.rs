//! Whole-system simulation: hardware plus the tile runtime, driven by the
//! discrete-event engine.

pub mod hardware;
pub mod runtime;

use crate::cluster::{DmaDescriptor, ImaJob};
use crate::config::ValidatedArch;
use crate::engine::{Cycle, Engine, Model, ResourceId, Scheduler, SimEvent, Timeline};
use crate::error::SimError;
use crate::mapping::MappingPlan;

pub use hardware::{Completion, Hardware, HwCounters, HwEvent};
pub use runtime::{Action, Ctl, RunOptions, Runtime, WorkloadSummary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Hw(HwEvent),
    Resume { stage: usize, ctl: Ctl },
    /// A descriptor handed to the DMA at the event's cycle.
    IssueDma(DmaDescriptor),
}

impl From<HwEvent> for Payload {
    fn from(e: HwEvent) -> Self {
        Payload::Hw(e)
    }
}

struct Machine {
    hw: Hardware,
    rt: Option<Runtime>,
    /// Completion cycle of every finished DMA, by tag (raw runs only).
    dma_done: Vec<(u64, Cycle)>,
}

impl Machine {
    fn apply(&mut self, actions: Vec<Action>, sched: &mut Scheduler<Payload>, tl: &mut Timeline) -> Result<(), SimError> {
        for a in actions {
            match a {
                Action::Dma(d) => self.hw.submit_dma(d, sched)?,
                Action::Job { cluster, job, tag } => self.hw.submit_job(cluster, job, tag, sched, tl)?,
                Action::Resume { at, stage, ctl } => {
                    sched.schedule(at, ResourceId::System, Payload::Resume { stage, ctl })?;
                }
            }
        }
        Ok(())
    }

    fn complete(&mut self, c: Completion, sched: &mut Scheduler<Payload>, tl: &mut Timeline) -> Result<(), SimError> {
        let now = sched.now();
        let actions = match (&mut self.rt, c) {
            (Some(rt), Completion::Job { cluster, tag }) => rt.on_job_done(cluster, tag, now),
            (Some(rt), Completion::Dma { desc }) => rt.on_dma_done(&desc, now),
            (None, Completion::Dma { desc }) => {
                self.dma_done.push((desc.tag, now));
                Vec::new()
            }
            (None, Completion::Job { .. }) => Vec::new(),
        };
        self.apply(actions, sched, tl)
    }
}

impl Model for Machine {
    type Payload = Payload;

    fn handle(&mut self, ev: SimEvent<Payload>, sched: &mut Scheduler<Payload>, tl: &mut Timeline) -> Result<(), SimError> {
        match ev.payload {
            Payload::Hw(HwEvent::Tick) => self.hw.tick(sched, tl)?,
            Payload::Hw(HwEvent::ImaTimer(c)) => self.hw.on_ima_timer(c, sched)?,
            Payload::Hw(HwEvent::ImaJobDone(c)) => {
                if let Some(done) = self.hw.on_job_done(c, sched, tl)? {
                    self.complete(done, sched, tl)?;
                }
            }
            Payload::Hw(HwEvent::DmaDone { cluster, channel }) => {
                if let Some(done) = self.hw.on_dma_done(cluster, channel, sched, tl)? {
                    self.complete(done, sched, tl)?;
                }
            }
            Payload::Resume { stage, ctl } => {
                let rt = self.rt.as_mut().expect("resume without runtime");
                let actions = rt.on_resume(stage, ctl, sched.now(), tl)?;
                self.apply(actions, sched, tl)?;
            }
            Payload::IssueDma(d) => self.hw.submit_dma(d, sched)?,
        }
        self.hw.ensure_tick(sched)
    }

    fn on_idle(&mut self, now: Cycle) -> Result<(), SimError> {
        let unfinished = self.rt.as_ref().is_some_and(|rt| !rt.finished());
        if unfinished || !self.hw.is_quiescent() {
            let mut blocked = self.rt.as_ref().map(Runtime::blocked).unwrap_or_default();
            blocked.extend(self.hw.blocked());
            return Err(SimError::Deadlock { cycle: now, blocked });
        }
        Ok(())
    }
}

/// Everything a mapped run produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub tot_exec_cycles: Cycle,
    pub timeline: Timeline,
    pub counters: HwCounters,
    pub input_wait_cycles: Vec<Cycle>,
    pub workload: WorkloadSummary,
    pub events: u64,
}

/// Runs `plan` on `arch` to completion.
pub fn simulate(arch: &ValidatedArch, plan: &MappingPlan, opts: RunOptions) -> Result<SimOutcome, SimError> {
    let mut rt = Runtime::new(arch, plan, opts)?;
    let mut engine: Engine<Payload> = Engine::new();
    let start = rt.start();
    let mut m = Machine {
        hw: Hardware::new(arch),
        rt: None,
        dma_done: Vec::new(),
    };
    m.apply(start, &mut engine.sched, &mut engine.timeline)?;
    m.rt = Some(rt);
    m.hw.ensure_tick(&mut engine.sched)?;
    let end = engine.run_until_idle(&mut m)?;
    let events = engine.events_processed();
    let rt = m.rt.take().expect("runtime present");
    Ok(SimOutcome {
        tot_exec_cycles: end,
        timeline: engine.timeline,
        counters: m.hw.counters(),
        input_wait_cycles: rt.input_wait_cycles(arch.n_clusters as usize),
        workload: rt.summary().clone(),
        events,
    })
}

/// Runs IMA jobs back to back on one cluster whose inputs are already in
/// L1. Returns the final cycle and the timeline.
pub fn simulate_jobs(arch: &ValidatedArch, cluster: usize, jobs: &[ImaJob]) -> Result<(Cycle, Timeline), SimError> {
    let mut engine: Engine<Payload> = Engine::new();
    let mut m = Machine {
        hw: Hardware::new(arch),
        rt: None,
        dma_done: Vec::new(),
    };
    for (i, job) in jobs.iter().enumerate() {
        m.hw.submit_job(cluster, *job, Some(i as u64), &mut engine.sched, &mut engine.timeline)?;
    }
    engine.finish(&mut m)
}

/// Completion cycle of one DMA transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaTiming {
    pub tag: u64,
    pub done: Cycle,
}

/// Issues each `(cycle, descriptor)` and reports when every transfer ends.
pub fn simulate_dma(
    arch: &ValidatedArch,
    issues: &[(Cycle, DmaDescriptor)],
) -> Result<(Vec<DmaTiming>, HwCounters, Timeline), SimError> {
    let mut engine: Engine<Payload> = Engine::new();
    let mut m = Machine {
        hw: Hardware::new(arch),
        rt: None,
        dma_done: Vec::new(),
    };
    for (at, d) in issues {
        engine.schedule(*at, ResourceId::System, Payload::IssueDma(d.clone()))?;
    }
    engine.run_until_idle(&mut m)?;
    let mut done: Vec<DmaTiming> = m.dma_done.iter().map(|&(tag, done)| DmaTiming { tag, done }).collect();
    done.sort_by_key(|d| d.tag);
    Ok((done, m.hw.counters(), engine.timeline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::DmaDirection;
    use crate::config::{validate, ArchConfig, InterconnectConfig};
    use crate::engine::Phase;
    use crate::mapping::{map_data_parallel, map_pipelining, LayerDescriptor};

    fn arch(n: u32, ic: InterconnectConfig) -> ValidatedArch {
        let mut a = ArchConfig::reference();
        a.n_clusters = n;
        a.interconnect = ic;
        validate(&a).unwrap()
    }

    fn job(reprogram: bool) -> ImaJob {
        ImaJob {
            c_in: 256,
            c_out: 256,
            l1_src: 8192,
            l1_dst: 16384,
            needs_reprogram: reprogram,
        }
    }

    #[test]
    fn single_job_is_54_cycles() {
        let a = arch(1, InterconnectConfig::wired(256.0));
        let (end, tl) = simulate_jobs(&a, 0, &[job(false)]).unwrap();
        assert_eq!(end, 54);
        assert_eq!(tl.cycles_in(ResourceId::Ima(0), Phase::StreamIn), 4);
        assert_eq!(tl.cycles_in(ResourceId::Ima(0), Phase::Eval), 46);
        assert_eq!(tl.cycles_in(ResourceId::Ima(0), Phase::StreamOut), 4);
        assert_eq!(tl.cycles_in(ResourceId::Ima(0), Phase::ConflictStall), 0);
    }

    #[test]
    fn reprogram_adds_overhead() {
        let a = arch(1, InterconnectConfig::wired(256.0));
        let (end, _) = simulate_jobs(&a, 0, &[job(true)]).unwrap();
        assert_eq!(end, 204);
        let (end, _) = simulate_jobs(&a, 0, &[job(false), job(false), job(false)]).unwrap();
        assert_eq!(end, 162);
    }

    #[test]
    fn dma_read_on_idle_link() {
        let a = arch(1, InterconnectConfig::wired(256.0));
        let d = DmaDescriptor::l2_to_l1(0, 0, 8192, 12288);
        let (t, c, _) = simulate_dma(&a, &[(0, d)]).unwrap();
        assert_eq!(t[0].done, 384 + 9);
        assert_eq!(c.link_busy_cycles, 384);
        assert_eq!(c.l2_read_bytes, 12288);
    }

    #[test]
    fn two_channels_share_the_link() {
        let a = arch(1, InterconnectConfig::wired(64.0));
        let d0 = DmaDescriptor::l2_to_l1(0, 0, 8192, 256).with_tag(0);
        // Different L2 and L1 banks, so only the link is shared.
        let d1 = DmaDescriptor::l2_to_l1(0, 4096 + 8, 12288 + 32, 256).with_tag(1);
        let (t, c, tl) = simulate_dma(&a, &[(0, d0.clone()), (0, d1)]).unwrap();
        assert_eq!(t[0].done, 9 + 64);
        assert_eq!(t[1].done, 9 + 64);
        assert_eq!(c.link_busy_cycles, 64);
        assert_eq!(c.l2_conflicts, 0);
        let spans: Vec<_> = tl.entries().iter().filter(|e| e.phase == Phase::DmaRead).collect();
        assert_eq!(spans.len(), 2);
        assert!(spans.iter().all(|e| e.start == 0));

        // Same bank: the heads collide and the flows take turns.
        let d2 = DmaDescriptor::l2_to_l1(0, 4096, 12288 + 32, 256).with_tag(1);
        let (t, c, _) = simulate_dma(&a, &[(0, d0), (0, d2)]).unwrap();
        assert_eq!(c.link_busy_cycles, 64);
        assert!(c.l2_conflicts > 0);
        assert_eq!(t[1].done, 9 + 64);
    }

    #[test]
    fn remote_copy_uses_cluster_link() {
        let a = arch(2, InterconnectConfig::wired(256.0));
        let d = DmaDescriptor::l1_to_remote(0, 8192, 1, 8192, 2048);
        assert_eq!(d.direction, DmaDirection::L1ToL1Remote);
        let (t, c, _) = simulate_dma(&a, &[(0, d)]).unwrap();
        assert_eq!(c.link_busy_cycles, 0);
        assert_eq!(c.p2p_busy_cycles, 64);
        // One cycle to fill the read FIFO, then 64 beats, latency, write.
        assert_eq!(t[0].done, 1 + 64 + 9);
    }

    #[test]
    fn broadcast_reads_l2_once() {
        let a = arch(4, InterconnectConfig::wireless(256.0));
        let key = crate::cluster::BroadcastKey { id: 9, group_size: 4 };
        let issues: Vec<_> = (0..4)
            .map(|c| (c as u64, DmaDescriptor::l2_to_l1(c, 0, 8192, 256).with_broadcast(key).with_tag(c as u64)))
            .collect();
        let (t, c, _) = simulate_dma(&a, &issues).unwrap();
        assert_eq!(c.l2_read_bytes, 256);
        assert_eq!(c.broadcast_saved_bytes, 768);
        assert_eq!(c.link_busy_cycles, 8);
        // Starts once the last subscriber joins at cycle 3.
        assert!(t.iter().all(|x| x.done == 3 + 8 + 1));
    }

    #[test]
    fn small_runs_complete() {
        let layers: Vec<_> = (0..4).map(|i| LayerDescriptor::pointwise(&format!("l{i}"), 256, 256, 8, 8)).collect();
        for n in [1u32, 2, 4] {
            let a = arch(n, InterconnectConfig::wired(256.0));
            let p = map_pipelining(&layers, n as usize).unwrap();
            let o = simulate(&a, &p, RunOptions { iterations: 2, min_tiles: 8 }).unwrap();
            assert!(o.tot_exec_cycles > 0);
            let d = map_data_parallel(&LayerDescriptor::pointwise("d", 256, 256 * n, 8, 8), n as usize).unwrap();
            let w = arch(n, InterconnectConfig::wireless(256.0));
            let o = simulate(&w, &d, RunOptions::default()).unwrap();
            assert_eq!(o.counters.l2_read_bytes, 64 * 256);
        }
    }
}
