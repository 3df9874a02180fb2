//! Discrete-event kernel.
//!
//! Events are ordered by `(time, seq)` where `seq` is a global insertion
//! counter, so two events at the same cycle always run in the order they
//! were scheduled. Component models implement [`Model`] and record their
//! busy phases on a [`Timeline`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::io::{self, Write};

use serde::Serialize;

use crate::error::SimError;

pub type Cycle = u64;

/// Default cap on processed events before the watchdog fires.
pub const DEFAULT_EVENT_LIMIT: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResourceId {
    System,
    Ima(usize),
    Core(usize),
    Dma { cluster: usize, channel: usize },
    Link,
    P2p(usize),
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceId::System => write!(f, "system"),
            ResourceId::Ima(c) => write!(f, "cl{c}.ima"),
            ResourceId::Core(c) => write!(f, "cl{c}.core"),
            ResourceId::Dma { cluster, channel } => write!(f, "cl{cluster}.dma{channel}"),
            ResourceId::Link => write!(f, "link"),
            ResourceId::P2p(c) => write!(f, "p2p{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    StreamIn,
    Eval,
    StreamOut,
    DmaRead,
    DmaWrite,
    WaitEvent,
    Prog,
    ConflictStall,
    Idle,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::StreamIn => "stream-in",
            Phase::Eval => "eval",
            Phase::StreamOut => "stream-out",
            Phase::DmaRead => "dma-read",
            Phase::DmaWrite => "dma-write",
            Phase::WaitEvent => "wait-event",
            Phase::Prog => "prog",
            Phase::ConflictStall => "conflict-stall",
            Phase::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time: Cycle,
    pub seq: u64,
    pub target: ResourceId,
    pub payload: P,
}

// BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
impl<P> PartialEq for SimEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<P> Eq for SimEvent<P> {}

impl<P> PartialOrd for SimEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for SimEvent<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Pending-event queue plus the simulation clock.
#[derive(Debug)]
pub struct Scheduler<P> {
    now: Cycle,
    next_seq: u64,
    heap: BinaryHeap<SimEvent<P>>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self {
            now: 0,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Enqueues `payload` for `time`; returns the assigned sequence number.
    pub fn schedule(&mut self, time: Cycle, target: ResourceId, payload: P) -> Result<u64, SimError> {
        if time < self.now {
            return Err(SimError::ScheduleInPast {
                time,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent {
            time,
            seq,
            target,
            payload,
        });
        Ok(seq)
    }

    fn pop(&mut self) -> Option<SimEvent<P>> {
        let ev = self.heap.pop()?;
        self.now = ev.time;
        Some(ev)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineEntry {
    pub resource: ResourceId,
    pub phase: Phase,
    pub start: Cycle,
    pub end: Cycle,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    resource: String,
    phase: &'a str,
    start: Cycle,
    end: Cycle,
}

/// Busy/idle record of every resource.
///
/// Entries of one resource never overlap and are appended in start order.
/// Back-to-back entries with the same phase are merged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Timeline {
    entries: Vec<TimelineEntry>,
    last: HashMap<ResourceId, usize>,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, resource: ResourceId, phase: Phase, start: Cycle, end: Cycle) -> Result<(), SimError> {
        let bad = SimError::TimelineOrder {
            resource,
            start,
            end,
        };
        if end < start {
            return Err(bad);
        }
        if let Some(&i) = self.last.get(&resource) {
            let prev = &mut self.entries[i];
            if start < prev.end {
                return Err(bad);
            }
            if prev.phase == phase && prev.end == start {
                prev.end = end;
                return Ok(());
            }
        }
        self.last.insert(resource, self.entries.len());
        self.entries.push(TimelineEntry {
            resource,
            phase,
            start,
            end,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[TimelineEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn end(&self) -> Cycle {
        self.entries.iter().map(|e| e.end).max().unwrap_or(0)
    }

    /// Entries of one resource, in start order.
    pub fn for_resource(&self, resource: ResourceId) -> impl Iterator<Item = &TimelineEntry> {
        self.entries.iter().filter(move |e| e.resource == resource)
    }

    /// Total cycles `resource` spent in `phase`.
    pub fn cycles_in(&self, resource: ResourceId, phase: Phase) -> Cycle {
        self.for_resource(resource)
            .filter(|e| e.phase == phase)
            .map(|e| e.end - e.start)
            .sum()
    }

    /// Writes one JSON object per line: `{"resource","phase","start","end"}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.entries {
            let line = TraceLine {
                resource: e.resource.to_string(),
                phase: e.phase.label(),
                start: e.start,
                end: e.end,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A component model driven by the engine.
pub trait Model {
    type Payload;

    fn handle(
        &mut self,
        event: SimEvent<Self::Payload>,
        sched: &mut Scheduler<Self::Payload>,
        timeline: &mut Timeline,
    ) -> Result<(), SimError>;

    /// Called once the queue drains; lets the model report stuck waits.
    fn on_idle(&mut self, _now: Cycle) -> Result<(), SimError> {
        Ok(())
    }
}

#[derive(Debug)]
pub struct Engine<P> {
    pub sched: Scheduler<P>,
    pub timeline: Timeline,
    event_limit: u64,
    processed: u64,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Self {
            sched: Scheduler::new(),
            timeline: Timeline::new(),
            event_limit: DEFAULT_EVENT_LIMIT,
            processed: 0,
        }
    }

    pub fn with_event_limit(mut self, limit: u64) -> Self {
        self.event_limit = limit;
        self
    }

    pub fn schedule(&mut self, time: Cycle, target: ResourceId, payload: P) -> Result<u64, SimError> {
        self.sched.schedule(time, target, payload)
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    /// Runs events in `(time, seq)` order until none remain.
    ///
    /// Returns the final cycle: the later of the last event time and the
    /// end of the last timeline entry.
    pub fn run_until_idle<M: Model<Payload = P>>(&mut self, model: &mut M) -> Result<Cycle, SimError> {
        while let Some(ev) = self.sched.pop() {
            self.processed += 1;
            if self.processed > self.event_limit {
                return Err(SimError::Watchdog {
                    limit: self.event_limit,
                });
            }
            model.handle(ev, &mut self.sched, &mut self.timeline)?;
        }
        model.on_idle(self.sched.now)?;
        Ok(self.sched.now.max(self.timeline.end()))
    }

    /// Consumes the engine, returning `(final cycle, timeline)`.
    pub fn finish<M: Model<Payload = P>>(mut self, model: &mut M) -> Result<(Cycle, Timeline), SimError> {
        let end = self.run_until_idle(model)?;
        Ok((end, self.timeline))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Records `(time, seq, payload)` of every handled event.
    #[derive(Default)]
    struct Recorder {
        seen: Vec<(Cycle, u64, u32)>,
        respawn: u32,
    }

    impl Model for Recorder {
        type Payload = u32;

        fn handle(&mut self, ev: SimEvent<u32>, sched: &mut Scheduler<u32>, tl: &mut Timeline) -> Result<(), SimError> {
            self.seen.push((ev.time, ev.seq, ev.payload));
            tl.record(ResourceId::System, Phase::Idle, ev.time, ev.time)?;
            if self.respawn > 0 {
                self.respawn -= 1;
                sched.schedule(ev.time, ResourceId::System, ev.payload + 100)?;
            }
            Ok(())
        }
    }

    #[test]
    fn empty_queue_ends_at_zero() {
        let mut eng = Engine::<u32>::new();
        let (end, tl) = eng_finish(&mut eng, &mut Recorder::default());
        assert_eq!(end, 0);
        assert!(tl.is_empty());
    }

    fn eng_finish(eng: &mut Engine<u32>, m: &mut Recorder) -> (Cycle, Timeline) {
        let end = eng.run_until_idle(m).unwrap();
        (end, eng.timeline.clone())
    }

    #[test]
    fn equal_times_run_in_insertion_order() {
        let mut eng = Engine::new();
        eng.schedule(5, ResourceId::Link, 1).unwrap();
        eng.schedule(5, ResourceId::System, 2).unwrap();
        eng.schedule(3, ResourceId::Ima(0), 3).unwrap();
        eng.schedule(5, ResourceId::Ima(9), 4).unwrap();
        let mut m = Recorder::default();
        eng.run_until_idle(&mut m).unwrap();
        let order: Vec<u32> = m.seen.iter().map(|s| s.2).collect();
        assert_eq!(order, vec![3, 1, 2, 4]);
    }

    #[test]
    fn same_cycle_reschedule_runs_after_earlier_seq() {
        let mut eng = Engine::new();
        eng.schedule(0, ResourceId::System, 1).unwrap();
        eng.schedule(0, ResourceId::System, 2).unwrap();
        let mut m = Recorder {
            respawn: 1,
            ..Default::default()
        };
        eng.run_until_idle(&mut m).unwrap();
        let order: Vec<u32> = m.seen.iter().map(|s| s.2).collect();
        assert_eq!(order, vec![1, 2, 101]);
    }

    #[test]
    fn far_future_event_accepted() {
        let mut eng = Engine::new();
        eng.schedule(1_000_000_000, ResourceId::System, 0).unwrap();
        let end = eng.run_until_idle(&mut Recorder::default()).unwrap();
        assert_eq!(end, 1_000_000_000);
    }

    #[test]
    fn past_schedule_rejected() {
        let mut s = Scheduler::<u32>::new();
        s.schedule(10, ResourceId::System, 0).unwrap();
        s.pop();
        assert_eq!(
            s.schedule(9, ResourceId::System, 0),
            Err(SimError::ScheduleInPast { time: 9, now: 10 })
        );
    }

    #[test]
    fn watchdog_stops_livelock() {
        let mut eng = Engine::new().with_event_limit(50);
        eng.schedule(0, ResourceId::System, 0).unwrap();
        let mut m = Recorder {
            respawn: u32::MAX,
            ..Default::default()
        };
        assert_eq!(eng.run_until_idle(&mut m), Err(SimError::Watchdog { limit: 50 }));
    }

    #[test]
    fn timeline_rejects_overlap_and_merges() {
        let mut tl = Timeline::new();
        tl.record(ResourceId::Ima(0), Phase::StreamIn, 0, 2).unwrap();
        tl.record(ResourceId::Ima(0), Phase::StreamIn, 2, 4).unwrap();
        tl.record(ResourceId::Ima(1), Phase::Eval, 1, 3).unwrap();
        assert_eq!(tl.len(), 2);
        assert!(tl.record(ResourceId::Ima(0), Phase::Eval, 3, 5).is_err());
        assert!(tl.record(ResourceId::Ima(1), Phase::Eval, 9, 8).is_err());
        assert_eq!(tl.cycles_in(ResourceId::Ima(0), Phase::StreamIn), 4);
    }

    #[test]
    fn jsonl_trace_format() {
        let mut tl = Timeline::new();
        tl.record(ResourceId::Dma { cluster: 2, channel: 1 }, Phase::DmaRead, 3, 17).unwrap();
        let mut out = Vec::new();
        tl.write_jsonl(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "{\"resource\":\"cl2.dma1\",\"phase\":\"dma-read\",\"start\":3,\"end\":17}\n"
        );
    }
}
