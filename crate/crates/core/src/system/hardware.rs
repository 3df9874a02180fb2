//! Cycle-stepped hardware: per-cluster IMA, DMA channels and banked L1,
//! the shared CL-L2 link and the cluster-to-cluster links.
//!
//! The owning model calls [`Hardware::tick`] once per cycle while anything
//! is streaming, and forwards timed events (end of eval/prog, job done,
//! DMA done) to the matching handlers.

use std::collections::{HashMap, VecDeque};

use crate::cluster::{DmaDescriptor, DmaDirection, ImaJob, L1Banks, RequesterClass, WordStream};
use crate::config::{ValidatedArch, L1_WORD_BYTES};
use crate::engine::{Cycle, Phase, ResourceId, Scheduler, Timeline};
use crate::error::SimError;
use crate::interconnect::{Direction, FlowId, FlowSpec, L2Memory, Link};

/// Timed events the hardware asks the model to deliver back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HwEvent {
    Tick,
    /// Prog or eval of the current job ended.
    ImaTimer(usize),
    ImaJobDone(usize),
    DmaDone { cluster: usize, channel: usize },
}

/// Something the runtime may react to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    Job { cluster: usize, tag: u64 },
    Dma { desc: DmaDescriptor },
}

#[derive(Debug, Clone)]
struct QueuedJob {
    job: ImaJob,
    tag: Option<u64>,
}

#[derive(Debug, Clone)]
enum ImaState {
    Idle,
    Prog(QueuedJob),
    StreamIn(QueuedJob, WordStream),
    Eval(QueuedJob),
    StreamOut(QueuedJob, WordStream),
    /// Last beat written; the job retires next cycle.
    Retiring(QueuedJob),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum LinkSel {
    Shared,
    P2p(usize),
}

#[derive(Debug, Clone)]
enum Side {
    /// Data arrives from the link and is written into L1.
    Fill { stream: WordStream, arrived: u64 },
    /// Data is read from L1 and handed to the link.
    Drain { stream: WordStream, granted: u64 },
}

#[derive(Debug, Clone)]
struct Xfer {
    desc: DmaDescriptor,
    start: Cycle,
    side: Side,
    flow: Option<(LinkSel, FlowId)>,
}

#[derive(Debug, Clone)]
struct RemoteIn {
    src: (usize, usize),
    stream: WordStream,
    arrived: u64,
}

#[derive(Debug, Clone)]
struct ClusterHw {
    l1: L1Banks,
    ima: ImaState,
    jobs: VecDeque<QueuedJob>,
    channels: Vec<Option<Xfer>>,
    dma_queue: VecDeque<DmaDescriptor>,
    remote_in: Vec<RemoteIn>,
    ima_busy: Cycle,
    ima_stall: Cycle,
}

#[derive(Debug, Clone)]
enum Owner {
    Fill(Vec<(usize, usize)>),
    Drain { cluster: usize, channel: usize },
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Fill(usize, usize),
    L2 { cluster: usize, channel: usize, last: bool },
    Remote { dst: usize, src: (usize, usize) },
}

#[derive(Debug, Clone, Copy)]
struct Arrival {
    at: Cycle,
    target: Target,
    bytes: u64,
}

#[derive(Debug, Clone)]
struct Rendezvous {
    group: u32,
    bytes: u64,
    l2_addr: u64,
    members: Vec<(usize, usize)>,
}

/// Run-wide counters gathered by the hardware.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HwCounters {
    pub l1_conflicts: Vec<u64>,
    pub ima_busy_cycles: Vec<Cycle>,
    pub ima_stall_cycles: Vec<Cycle>,
    pub link_busy_cycles: u64,
    pub link_wait_cycles: u64,
    pub link_granted_bits: f64,
    pub link_max_bits_in_cycle: f64,
    pub p2p_busy_cycles: u64,
    pub l2_conflicts: u64,
    pub l2_read_bytes: u64,
    pub l2_write_bytes: u64,
    pub broadcast_saved_bytes: u64,
    pub dma_bytes: u64,
}

pub struct Hardware {
    arch: ValidatedArch,
    clusters: Vec<ClusterHw>,
    link: Link,
    p2p: Vec<Link>,
    l2: L2Memory,
    owners: HashMap<(LinkSel, FlowId), Owner>,
    arrivals: VecDeque<Arrival>,
    rendezvous: HashMap<u64, Rendezvous>,
    tick_at: Option<Cycle>,
    last_tick: Option<Cycle>,
    fifo_bytes: u64,
    broadcast_saved: u64,
    l2_read: u64,
    l2_write: u64,
    dma_bytes: u64,
}

fn window(bytes_per_cycle: u64, banks: u32) -> u32 {
    (bytes_per_cycle / u64::from(L1_WORD_BYTES)).clamp(1, u64::from(banks)) as u32
}

impl Hardware {
    pub fn new(arch: &ValidatedArch) -> Self {
        let c = &arch.cluster;
        let n = arch.n_clusters as usize;
        let ic = &arch.interconnect;
        let clusters = (0..n)
            .map(|_| ClusterHw {
                l1: L1Banks::new(c.l1_banks),
                ima: ImaState::Idle,
                jobs: VecDeque::new(),
                channels: vec![None; c.dma_channels as usize],
                dma_queue: VecDeque::new(),
                remote_in: Vec::new(),
                ima_busy: 0,
                ima_stall: 0,
            })
            .collect();
        Self {
            arch: arch.clone(),
            clusters,
            link: Link::from_config(ic),
            // Cluster-to-cluster copies travel on a dedicated link per
            // producer with the same width and latency as the main one.
            p2p: (0..n)
                .map(|_| Link::new(ic.bandwidth_bits_per_cycle, ic.latency_cycles, ic.accounting))
                .collect(),
            l2: L2Memory::new(&arch.l2),
            owners: HashMap::new(),
            arrivals: VecDeque::new(),
            rendezvous: HashMap::new(),
            tick_at: None,
            last_tick: None,
            fifo_bytes: 2 * u64::from(c.l1_banks) * u64::from(L1_WORD_BYTES),
            broadcast_saved: 0,
            l2_read: 0,
            l2_write: 0,
            dma_bytes: 0,
        }
    }

    pub fn arch(&self) -> &ValidatedArch {
        &self.arch
    }

    fn l1_addr(&self, addr: u64) -> u64 {
        addr % u64::from(self.arch.cluster.l1_bytes)
    }

    pub fn counters(&self) -> HwCounters {
        let ls = &self.link.stats;
        HwCounters {
            l1_conflicts: self.clusters.iter().map(|c| c.l1.stats.conflicts()).collect(),
            ima_busy_cycles: self.clusters.iter().map(|c| c.ima_busy).collect(),
            ima_stall_cycles: self.clusters.iter().map(|c| c.ima_stall).collect(),
            link_busy_cycles: ls.busy_cycles,
            link_wait_cycles: ls.wait_cycles.iter().sum(),
            link_granted_bits: ls.granted_bits,
            link_max_bits_in_cycle: ls.max_bits_in_cycle,
            p2p_busy_cycles: self.p2p.iter().map(|l| l.stats.busy_cycles).sum(),
            l2_conflicts: self.l2.conflicts,
            l2_read_bytes: self.l2_read,
            l2_write_bytes: self.l2_write,
            broadcast_saved_bytes: self.broadcast_saved,
            dma_bytes: self.dma_bytes,
        }
    }

    /// Whether any IMA, transfer or queue still holds work.
    pub fn is_quiescent(&self) -> bool {
        self.arrivals.is_empty()
            && self.link.is_idle()
            && self.p2p.iter().all(Link::is_idle)
            && self.rendezvous.is_empty()
            && self.clusters.iter().all(|c| {
                matches!(c.ima, ImaState::Idle)
                    && c.jobs.is_empty()
                    && c.dma_queue.is_empty()
                    && c.remote_in.is_empty()
                    && c.channels.iter().all(Option::is_none)
            })
    }

    fn needs_tick(&self) -> bool {
        !self.arrivals.is_empty()
            || !self.link.is_idle()
            || self.p2p.iter().any(|l| !l.is_idle())
            || self.clusters.iter().any(|c| {
                matches!(c.ima, ImaState::StreamIn(..) | ImaState::StreamOut(..))
                    || !c.remote_in.is_empty()
                    || c.channels.iter().flatten().any(|x| x.flow.is_some())
            })
    }

    /// Makes sure a tick is pending if there is streaming work.
    pub fn ensure_tick<P: From<HwEvent>>(&mut self, sched: &mut Scheduler<P>) -> Result<(), SimError> {
        let now = sched.now();
        if self.tick_at.is_some_and(|t| t >= now) || !self.needs_tick() {
            return Ok(());
        }
        let at = if self.last_tick == Some(now) { now + 1 } else { now };
        sched.schedule(at, ResourceId::System, HwEvent::Tick.into())?;
        self.tick_at = Some(at);
        Ok(())
    }

    /// Describes what each cluster is stuck on, for deadlock reports.
    pub fn blocked(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, r) in &self.rendezvous {
            out.push(format!("broadcast {k}: {} of {} subscribers", r.members.len(), r.group));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if !c.dma_queue.is_empty() {
                out.push(format!("cl{i}: {} queued DMA descriptors", c.dma_queue.len()));
            }
            if !c.jobs.is_empty() {
                out.push(format!("cl{i}: {} queued IMA jobs", c.jobs.len()));
            }
        }
        out
    }

    // ---- IMA -------------------------------------------------------------

    pub fn submit_job<P: From<HwEvent>>(
        &mut self,
        cluster: usize,
        job: ImaJob,
        tag: Option<u64>,
        sched: &mut Scheduler<P>,
        tl: &mut Timeline,
    ) -> Result<(), SimError> {
        job.check(&self.arch.cluster.ima)?;
        let c = self.clusters.get_mut(cluster).ok_or(SimError::NoSuchCluster(cluster))?;
        c.jobs.push_back(QueuedJob { job, tag });
        if matches!(c.ima, ImaState::Idle) {
            self.start_next_job(cluster, sched, tl)?;
        }
        Ok(())
    }

    fn start_next_job<P: From<HwEvent>>(&mut self, cl: usize, sched: &mut Scheduler<P>, tl: &mut Timeline) -> Result<(), SimError> {
        let now = sched.now();
        let prog = self.arch.cluster.prog_overhead_cycles;
        let c = &mut self.clusters[cl];
        let Some(q) = c.jobs.pop_front() else {
            c.ima = ImaState::Idle;
            return Ok(());
        };
        if q.job.needs_reprogram && prog > 0 {
            tl.record(ResourceId::Ima(cl), Phase::Prog, now, now + prog)?;
            c.ima_busy += prog;
            c.ima = ImaState::Prog(q);
            sched.schedule(now + prog, ResourceId::Ima(cl), HwEvent::ImaTimer(cl).into())?;
        } else {
            self.begin_stream_in(cl, q);
        }
        self.ensure_tick(sched)
    }

    fn ima_stream(&self, addr: u64, bytes: u64) -> WordStream {
        let ima = &self.arch.cluster.ima;
        let w = window(u64::from(ima.stream_bytes_per_cycle()), self.arch.cluster.l1_banks);
        WordStream::new(self.l1_addr(addr), bytes, w).fully_available()
    }

    fn begin_stream_in(&mut self, cl: usize, q: QueuedJob) {
        let s = self.ima_stream(q.job.l1_src, q.job.in_bytes(&self.arch.cluster.ima));
        self.clusters[cl].ima = ImaState::StreamIn(q, s);
    }

    fn begin_stream_out(&mut self, cl: usize, q: QueuedJob) {
        let s = self.ima_stream(q.job.l1_dst, q.job.out_bytes(&self.arch.cluster.ima));
        self.clusters[cl].ima = ImaState::StreamOut(q, s);
    }

    pub fn on_ima_timer<P: From<HwEvent>>(&mut self, cl: usize, sched: &mut Scheduler<P>) -> Result<(), SimError> {
        match std::mem::replace(&mut self.clusters[cl].ima, ImaState::Idle) {
            ImaState::Prog(q) => self.begin_stream_in(cl, q),
            ImaState::Eval(q) => self.begin_stream_out(cl, q),
            other => self.clusters[cl].ima = other,
        }
        self.ensure_tick(sched)
    }

    pub fn on_job_done<P: From<HwEvent>>(
        &mut self,
        cl: usize,
        sched: &mut Scheduler<P>,
        tl: &mut Timeline,
    ) -> Result<Option<Completion>, SimError> {
        let done = match std::mem::replace(&mut self.clusters[cl].ima, ImaState::Idle) {
            ImaState::Retiring(q) => q,
            other => {
                self.clusters[cl].ima = other;
                return Ok(None);
            }
        };
        self.start_next_job(cl, sched, tl)?;
        Ok(done.tag.map(|tag| Completion::Job { cluster: cl, tag }))
    }

    // ---- DMA -------------------------------------------------------------

    /// Queues a descriptor; it starts as soon as a channel is free.
    pub fn submit_dma<P: From<HwEvent>>(&mut self, desc: DmaDescriptor, sched: &mut Scheduler<P>) -> Result<(), SimError> {
        desc.validate(self.clusters.len(), self.arch.interconnect.broadcast_enabled)?;
        match desc.direction {
            DmaDirection::L2ToL1 | DmaDirection::L1ToL2 => self.l2.check_range(desc.l2_addr, desc.bytes)?,
            DmaDirection::L1ToL1Remote => {}
        }
        let cl = desc.cluster;
        self.clusters[cl].dma_queue.push_back(desc);
        self.start_queued(cl, sched)
    }

    fn start_queued<P: From<HwEvent>>(&mut self, cl: usize, sched: &mut Scheduler<P>) -> Result<(), SimError> {
        loop {
            let c = &mut self.clusters[cl];
            let Some(ch) = c.channels.iter().position(Option::is_none) else {
                break;
            };
            let Some(desc) = c.dma_queue.pop_front() else {
                break;
            };
            self.start_xfer(cl, ch, desc, sched.now());
        }
        self.ensure_tick(sched)
    }

    fn start_xfer(&mut self, cl: usize, ch: usize, desc: DmaDescriptor, now: Cycle) {
        let banks = self.arch.cluster.l1_banks;
        let l1 = self.l1_addr(desc.l1_addr);
        self.dma_bytes += desc.bytes;
        match desc.direction {
            DmaDirection::L2ToL1 => {
                let stream = WordStream::new(l1, desc.bytes, banks);
                let mut x = Xfer {
                    desc: desc.clone(),
                    start: now,
                    side: Side::Fill { stream, arrived: 0 },
                    flow: None,
                };
                match desc.broadcast.filter(|k| k.group_size > 1) {
                    Some(key) => {
                        self.clusters[cl].channels[ch] = Some(x);
                        let r = self.rendezvous.entry(key.id).or_insert_with(|| Rendezvous {
                            group: key.group_size,
                            bytes: desc.bytes,
                            l2_addr: desc.l2_addr,
                            members: Vec::new(),
                        });
                        r.members.push((cl, ch));
                        if r.members.len() as u32 >= r.group {
                            let r = self.rendezvous.remove(&key.id).expect("present");
                            self.open_read(r.members, r.bytes, r.l2_addr);
                        }
                    }
                    None => {
                        let id = self.open_read_flow(vec![(cl, ch)], desc.bytes, desc.l2_addr);
                        x.flow = Some((LinkSel::Shared, id));
                        self.clusters[cl].channels[ch] = Some(x);
                    }
                }
            }
            DmaDirection::L1ToL2 | DmaDirection::L1ToL1Remote => {
                let stream = WordStream::new(l1, desc.bytes, banks);
                let (sel, l2_addr) = match desc.remote {
                    None => {
                        self.l2_write += desc.bytes;
                        (LinkSel::Shared, Some(desc.l2_addr))
                    }
                    Some((dst, dst_addr)) => {
                        let s = WordStream::new(self.l1_addr(dst_addr), desc.bytes, banks);
                        self.clusters[dst].remote_in.push(RemoteIn {
                            src: (cl, ch),
                            stream: s,
                            arrived: 0,
                        });
                        (LinkSel::P2p(cl), None)
                    }
                };
                let spec = FlowSpec {
                    requester: cl,
                    bytes: desc.bytes,
                    direction: Direction::Write,
                    l2_addr,
                    fanout: 1,
                    incremental: true,
                };
                let id = match sel {
                    LinkSel::Shared => self.link.open(spec),
                    LinkSel::P2p(p) => self.p2p[p].open(spec),
                };
                self.owners.insert((sel, id), Owner::Drain { cluster: cl, channel: ch });
                let mut stream = stream;
                stream.set_available(self.fifo_bytes);
                self.clusters[cl].channels[ch] = Some(Xfer {
                    desc,
                    start: now,
                    side: Side::Drain { stream, granted: 0 },
                    flow: Some((sel, id)),
                });
            }
        }
    }

    fn open_read_flow(&mut self, members: Vec<(usize, usize)>, bytes: u64, l2_addr: u64) -> FlowId {
        let fanout = members.len() as u32;
        self.l2_read += bytes;
        self.broadcast_saved += u64::from(fanout - 1) * bytes;
        let id = self.link.open(FlowSpec {
            requester: members[0].0,
            bytes,
            direction: Direction::Read,
            l2_addr: Some(l2_addr),
            fanout,
            incremental: false,
        });
        self.owners.insert((LinkSel::Shared, id), Owner::Fill(members));
        id
    }

    fn open_read(&mut self, members: Vec<(usize, usize)>, bytes: u64, l2_addr: u64) {
        let id = self.open_read_flow(members.clone(), bytes, l2_addr);
        for (c, ch) in members {
            if let Some(x) = self.clusters[c].channels[ch].as_mut() {
                x.flow = Some((LinkSel::Shared, id));
            }
        }
    }

    /// Frees the channel, records its busy span and starts queued work.
    pub fn on_dma_done<P: From<HwEvent>>(
        &mut self,
        cl: usize,
        ch: usize,
        sched: &mut Scheduler<P>,
        tl: &mut Timeline,
    ) -> Result<Option<Completion>, SimError> {
        let Some(x) = self.clusters[cl].channels[ch].take() else {
            return Ok(None);
        };
        let phase = match x.desc.direction {
            DmaDirection::L2ToL1 => Phase::DmaRead,
            _ => Phase::DmaWrite,
        };
        tl.record(
            ResourceId::Dma {
                cluster: cl,
                channel: ch,
            },
            phase,
            x.start,
            sched.now(),
        )?;
        self.start_queued(cl, sched)?;
        Ok(Some(Completion::Dma { desc: x.desc }))
    }

    // ---- per-cycle step ----------------------------------------------------

    pub fn tick<P: From<HwEvent>>(&mut self, sched: &mut Scheduler<P>, tl: &mut Timeline) -> Result<(), SimError> {
        let now = sched.now();
        self.tick_at = None;
        self.last_tick = Some(now);
        self.deliver(now, sched)?;
        let mut supplies: Vec<(LinkSel, FlowId, u64)> = Vec::new();
        for cl in 0..self.clusters.len() {
            self.step_cluster(cl, now, sched, tl, &mut supplies)?;
        }
        self.step_links(now);
        for (sel, id, bytes) in supplies {
            match sel {
                LinkSel::Shared => self.link.supply(id, bytes),
                LinkSel::P2p(p) => self.p2p[p].supply(id, bytes),
            }
        }
        self.ensure_tick(sched)
    }

    fn deliver<P: From<HwEvent>>(&mut self, now: Cycle, sched: &mut Scheduler<P>) -> Result<(), SimError> {
        while self.arrivals.front().is_some_and(|a| a.at <= now) {
            let a = self.arrivals.pop_front().expect("checked");
            match a.target {
                Target::Fill(c, ch) => {
                    if let Some(Xfer {
                        side: Side::Fill { stream, arrived },
                        ..
                    }) = self.clusters[c].channels[ch].as_mut()
                    {
                        *arrived += a.bytes;
                        stream.set_available(*arrived);
                    }
                }
                Target::L2 { cluster, channel, last } => {
                    if last {
                        sched.schedule(now + 1, ResourceId::Dma { cluster, channel }, HwEvent::DmaDone { cluster, channel }.into())?;
                    }
                }
                Target::Remote { dst, src } => {
                    if let Some(r) = self.clusters[dst].remote_in.iter_mut().find(|r| r.src == src) {
                        r.arrived += a.bytes;
                        r.stream.set_available(r.arrived);
                    }
                }
            }
        }
        Ok(())
    }

    fn step_cluster<P: From<HwEvent>>(
        &mut self,
        cl: usize,
        now: Cycle,
        sched: &mut Scheduler<P>,
        tl: &mut Timeline,
        supplies: &mut Vec<(LinkSel, FlowId, u64)>,
    ) -> Result<(), SimError> {
        let banks = self.arch.cluster.l1_banks;
        let eval = self.arch.eval_cycles();
        let c = &mut self.clusters[cl];
        let ima_mask = match &c.ima {
            ImaState::StreamIn(_, s) | ImaState::StreamOut(_, s) => s.request_mask(banks),
            _ => 0,
        };
        let mut reqs = Vec::with_capacity(1 + c.channels.len() + c.remote_in.len());
        reqs.push((RequesterClass::Ima, ima_mask));
        for x in &c.channels {
            let m = match x {
                Some(Xfer {
                    side: Side::Fill { stream, .. } | Side::Drain { stream, .. },
                    flow: Some(_),
                    ..
                }) => stream.request_mask(banks),
                _ => 0,
            };
            reqs.push((RequesterClass::Dma, m));
        }
        for r in &c.remote_in {
            reqs.push((RequesterClass::Dma, r.stream.request_mask(banks)));
        }
        if reqs.iter().all(|r| r.1 == 0) {
            return Ok(());
        }
        let grants = c.l1.arbitrate(&reqs);

        // IMA
        if ima_mask != 0 {
            let full = grants[0] == ima_mask;
            let (phase, done) = match &mut c.ima {
                ImaState::StreamIn(_, s) => {
                    s.apply_grant(grants[0], banks);
                    (Phase::StreamIn, s.is_complete())
                }
                ImaState::StreamOut(_, s) => {
                    s.apply_grant(grants[0], banks);
                    (Phase::StreamOut, s.is_complete())
                }
                _ => unreachable!("mask only set while streaming"),
            };
            let phase = if full { phase } else { Phase::ConflictStall };
            if !full {
                c.ima_stall += 1;
            }
            c.ima_busy += 1;
            tl.record(ResourceId::Ima(cl), phase, now, now + 1)?;
            if done {
                match std::mem::replace(&mut c.ima, ImaState::Idle) {
                    ImaState::StreamIn(q, _) => {
                        if eval > 0 {
                            tl.record(ResourceId::Ima(cl), Phase::Eval, now + 1, now + 1 + eval)?;
                            c.ima_busy += eval;
                            c.ima = ImaState::Eval(q);
                            sched.schedule(now + 1 + eval, ResourceId::Ima(cl), HwEvent::ImaTimer(cl).into())?;
                        } else {
                            c.ima = ImaState::Eval(q);
                            sched.schedule(now + 1, ResourceId::Ima(cl), HwEvent::ImaTimer(cl).into())?;
                        }
                    }
                    ImaState::StreamOut(q, _) => {
                        c.ima = ImaState::Retiring(q);
                        sched.schedule(now + 1, ResourceId::Ima(cl), HwEvent::ImaJobDone(cl).into())?;
                    }
                    _ => unreachable!(),
                }
            }
        }

        // DMA channels
        for (ch, g) in grants[1..=c.channels.len()].iter().enumerate() {
            if *g == 0 {
                continue;
            }
            let x = c.channels[ch].as_mut().expect("granted channel is busy");
            match &mut x.side {
                Side::Fill { stream, .. } => {
                    stream.apply_grant(*g, banks);
                    if stream.is_complete() {
                        sched.schedule(
                            now + 1,
                            ResourceId::Dma { cluster: cl, channel: ch },
                            HwEvent::DmaDone { cluster: cl, channel: ch }.into(),
                        )?;
                        // Detach so the stream is not stepped again.
                        x.flow = None;
                    }
                }
                Side::Drain { stream, .. } => {
                    let moved = stream.apply_grant(*g, banks);
                    let (sel, id) = x.flow.expect("draining channel has a flow");
                    supplies.push((sel, id, moved));
                }
            }
        }

        // Remote writes landing in this L1
        let base = 1 + c.channels.len();
        let mut finished = Vec::new();
        for (i, r) in c.remote_in.iter_mut().enumerate() {
            let g = grants[base + i];
            if g != 0 {
                r.stream.apply_grant(g, banks);
                if r.stream.is_complete() {
                    finished.push(i);
                }
            }
        }
        for i in finished.into_iter().rev() {
            let r = c.remote_in.remove(i);
            let (cluster, channel) = r.src;
            sched.schedule(now + 1, ResourceId::Dma { cluster, channel }, HwEvent::DmaDone { cluster, channel }.into())?;
        }
        Ok(())
    }

    fn step_links(&mut self, now: Cycle) {
        let progress = self.link.step(Some(&mut self.l2));
        let lat = self.link.latency();
        self.route(LinkSel::Shared, now + lat, progress);
        for p in 0..self.p2p.len() {
            if self.p2p[p].is_idle() {
                continue;
            }
            let progress = self.p2p[p].step(None);
            let lat = self.p2p[p].latency();
            self.route(LinkSel::P2p(p), now + lat, progress);
        }
    }

    fn route(&mut self, sel: LinkSel, at: Cycle, progress: Vec<crate::interconnect::FlowProgress>) {
        for fp in progress {
            let key = (sel, fp.id);
            let owner = if fp.finished {
                self.owners.remove(&key)
            } else {
                self.owners.get(&key).cloned()
            };
            let Some(owner) = owner else { continue };
            match owner {
                Owner::Fill(members) => {
                    if fp.new_bytes > 0 {
                        for (c, ch) in members {
                            self.arrivals.push_back(Arrival {
                                at,
                                target: Target::Fill(c, ch),
                                bytes: fp.new_bytes,
                            });
                        }
                    }
                }
                Owner::Drain { cluster, channel } => {
                    let x = self.clusters[cluster].channels[channel]
                        .as_mut()
                        .expect("draining channel is busy");
                    let remote = x.desc.remote;
                    if let Side::Drain { stream, granted } = &mut x.side {
                        *granted += fp.new_bytes;
                        stream.set_available(*granted + self.fifo_bytes);
                    }
                    if fp.finished {
                        // The L1 side is done; only the link tail remains.
                        x.flow = None;
                    }
                    let target = match remote {
                        Some((dst, _)) => Target::Remote {
                            dst,
                            src: (cluster, channel),
                        },
                        None => Target::L2 {
                            cluster,
                            channel,
                            last: fp.finished,
                        },
                    };
                    if fp.new_bytes > 0 || fp.finished {
                        self.arrivals.push_back(Arrival {
                            at,
                            target,
                            bytes: fp.new_bytes,
                        });
                    }
                }
            }
        }
    }
}
