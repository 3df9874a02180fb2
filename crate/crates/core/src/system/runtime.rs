//! Tile runtime executed by the cluster cores: double-buffered input and
//! output tiles, an input fetcher, a compute loop driving the IMA and an
//! output writer, synchronized through each cluster's event unit.

use crate::cluster::{ima_job_seconds, ima_phase_cycles, BroadcastKey, DmaDescriptor, DmaDirection, EventUnit, ImaJob};
use crate::config::{ValidatedArch, L1_WORD_BYTES};
use crate::engine::{Cycle, Phase, ResourceId, Timeline};
use crate::error::SimError;
use crate::mapping::{
    balanced_split, build_tile_plan, ima_job_decompose, LayerDescriptor, MapError, MappingPlan, Strategy,
    RUNTIME_RESERVE_BYTES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ev {
    InReady(u64),
    InFree(u64),
    OutReady(u64),
    OutFree(u64),
    TileDone(u64),
    /// The consumer has released the input buffer a tile was written to.
    PeerInFree(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ctl {
    Input,
    Compute,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Port {
    L2,
    Stage(usize),
}

#[derive(Debug, Clone)]
struct TileInfo {
    /// Output pixels per local layer.
    px: Vec<u64>,
    in_bytes: u64,
    out_bytes: u64,
    l2_in: u64,
    l2_out: u64,
}

#[derive(Debug, Clone, Default)]
struct CtlState {
    next: u64,
    since: Cycle,
    sleeping: bool,
    overhead_done: bool,
}

#[derive(Debug, Clone)]
struct Stage {
    cluster: usize,
    layers: Vec<LayerDescriptor>,
    src: Port,
    dst: Port,
    in_buf: [u64; 2],
    out_buf: [u64; 2],
    mid_buf: [u64; 2],
    tiles: Vec<TileInfo>,
    broadcast: Option<u32>,
    eu: EventUnit<Ev>,
    input: CtlState,
    compute: CtlState,
    output: CtlState,
    input_wait: Cycle,
}

/// Run parameters that are not part of the hardware description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Frames pushed through the mapping.
    pub iterations: u32,
    /// Lower bound on tiles per frame so transfers overlap with compute.
    pub min_tiles: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            iterations: 1,
            min_tiles: 8,
        }
    }
}

/// Work the runtime asks the hardware to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Dma(DmaDescriptor),
    Job { cluster: usize, job: ImaJob, tag: Option<u64> },
    Resume { at: Cycle, stage: usize, ctl: Ctl },
}

/// Static facts about the workload, independent of timing.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSummary {
    pub active_clusters: Vec<usize>,
    pub tiles_per_frame: u64,
    pub frames: u64,
    pub macs_per_cluster: Vec<u64>,
    /// Unrounded IMA busy time per cluster over the whole run, in seconds.
    pub exact_seconds_per_cluster: Vec<f64>,
    /// Contention-free IMA cycles per cluster over the whole run.
    pub compute_cycles_per_cluster: Vec<Cycle>,
    /// Bytes moved over the shared link if nothing is broadcast.
    pub l2_in_bytes_per_frame: u64,
    pub l2_out_bytes_per_frame: u64,
}

pub struct Runtime {
    stages: Vec<Stage>,
    stage_of: Vec<Option<usize>>,
    frames: u64,
    tile_overhead: Cycle,
    ima_cfg: crate::config::ImaConfig,
    multi_layer_reprogram: Vec<bool>,
    summary: WorkloadSummary,
}

const ALIGN: u64 = 64;

fn align(x: u64) -> u64 {
    x.div_ceil(ALIGN) * ALIGN
}

impl Runtime {
    pub fn new(arch: &ValidatedArch, plan: &MappingPlan, opts: RunOptions) -> Result<Self, SimError> {
        plan.check()?;
        if plan.n_clusters != arch.n_clusters as usize {
            return Err(MapError::Plan(format!(
                "plan targets {} clusters but the architecture has {}",
                plan.n_clusters, arch.n_clusters
            ))
            .into());
        }
        if opts.iterations == 0 {
            return Err(MapError::Plan("iterations must be ≥ 1".into()).into());
        }
        let active = plan.active_clusters();
        let ns = active.len();
        // Effective per-stage layers (data-parallel stages see their slice).
        let stage_layers: Vec<Vec<LayerDescriptor>> = active
            .iter()
            .map(|&c| {
                plan.assignments[c]
                    .iter()
                    .map(|a| {
                        let mut l = plan.layers[a.layer].clone();
                        l.c_out = a.c_out.len;
                        l
                    })
                    .collect()
            })
            .collect();
        let (src, dst): (Vec<Port>, Vec<Port>) = (0..ns)
            .map(|i| match plan.strategy {
                Strategy::DataParallel => (Port::L2, Port::L2),
                Strategy::Pipelining => (
                    if i == 0 { Port::L2 } else { Port::Stage(i - 1) },
                    if i + 1 == ns { Port::L2 } else { Port::Stage(i + 1) },
                ),
            })
            .unzip();

        let l1 = u64::from(arch.cluster.l1_bytes);
        let mut t = opts.min_tiles.max(1);
        let mut max_px = 1;
        for ls in &stage_layers {
            for l in ls {
                t = t.max(build_tile_plan(l, l1, RUNTIME_RESERVE_BYTES)?.n_tiles);
                max_px = max_px.max(l.out_pixels());
            }
        }
        let mut t = t.min(max_px);
        let stages = loop {
            match Self::layout(arch, &stage_layers, &src, &dst, t) {
                Some(s) => break s,
                None if t < max_px => t += 1,
                None => {
                    let l = &stage_layers[0][0];
                    return Err(MapError::TileInfeasible {
                        needed: 2 * (l.in_tile_bytes(1) + l.out_tile_bytes(1)),
                        budget: l1 - RUNTIME_RESERVE_BYTES.min(l1),
                    }
                    .into());
                }
            }
        };

        let mut stages = stages;
        for (s, &c) in stages.iter_mut().zip(&active) {
            s.cluster = c;
        }
        // L2 layout: one input frame region, then output regions.
        let mut l2_top = 0u64;
        let mut l2_in_bytes = 0;
        let mut l2_out_bytes = 0;
        let in_base = l2_top;
        let mut frame_in = 0;
        if let Some(s) = stages.first() {
            frame_in = s.tiles.iter().map(|x| x.in_bytes).sum::<u64>();
        }
        l2_top += align(frame_in);
        for s in stages.iter_mut() {
            if s.src == Port::L2 {
                let mut off = in_base;
                for tile in &mut s.tiles {
                    tile.l2_in = off;
                    off += tile.in_bytes;
                }
                l2_in_bytes += s.tiles.iter().map(|x| x.in_bytes).sum::<u64>();
            }
            if s.dst == Port::L2 {
                let mut off = l2_top;
                for tile in &mut s.tiles {
                    tile.l2_out = off;
                    off += tile.out_bytes;
                }
                l2_out_bytes += off - l2_top;
                l2_top = align(off);
            }
        }
        if l2_top > arch.l2.capacity_bytes {
            return Err(SimError::L2OutOfRange {
                addr: 0,
                bytes: l2_top,
                capacity: arch.l2.capacity_bytes,
            });
        }
        let bc = arch.interconnect.broadcast_enabled && plan.strategy == Strategy::DataParallel && ns > 1;
        for s in &mut stages {
            s.broadcast = bc.then_some(ns as u32);
        }

        let frames = u64::from(opts.iterations);
        let ima_cfg = arch.cluster.ima.clone();
        let n = arch.n_clusters as usize;
        let mut macs = vec![0u64; n];
        let mut exact = vec![0f64; n];
        let mut cyc = vec![0u64; n];
        let mut stage_of = vec![None; n];
        for (i, s) in stages.iter().enumerate() {
            stage_of[s.cluster] = Some(i);
            for tile in &s.tiles {
                for (j, l) in s.layers.iter().enumerate() {
                    for job in ima_job_decompose(l, tile.px[j], l.c_out, &ima_cfg, 0, 0) {
                        macs[s.cluster] += u64::from(job.c_in) * u64::from(job.c_out);
                        exact[s.cluster] += ima_job_seconds(&ima_cfg, job.c_in, job.c_out, arch.f_clock);
                        cyc[s.cluster] += ima_phase_cycles(&ima_cfg, job.c_in, job.c_out, arch.f_clock)?.total();
                    }
                }
            }
        }
        for c in 0..n {
            macs[c] *= frames;
            exact[c] *= frames as f64;
            cyc[c] *= frames;
        }
        let multi_layer_reprogram = stages.iter().map(|s| s.layers.len() > 1).collect();
        let summary = WorkloadSummary {
            active_clusters: active,
            tiles_per_frame: t,
            frames,
            macs_per_cluster: macs,
            exact_seconds_per_cluster: exact,
            compute_cycles_per_cluster: cyc,
            l2_in_bytes_per_frame: l2_in_bytes,
            l2_out_bytes_per_frame: l2_out_bytes,
        };
        Ok(Self {
            stages,
            stage_of,
            frames,
            tile_overhead: arch.cluster.tile_overhead_cycles,
            ima_cfg,
            multi_layer_reprogram,
            summary,
        })
    }

    /// Lays out buffers for `t` tiles per frame, or `None` if some stage's
    /// buffers do not fit in L1.
    fn layout(
        arch: &ValidatedArch,
        stage_layers: &[Vec<LayerDescriptor>],
        src: &[Port],
        dst: &[Port],
        t: u64,
    ) -> Option<Vec<Stage>> {
        let l1 = u64::from(arch.cluster.l1_bytes);
        let splits: Vec<Vec<Vec<u64>>> = stage_layers
            .iter()
            .map(|ls| ls.iter().map(|l| balanced_split(l.out_pixels(), t)).collect())
            .collect();
        let out_bytes = |i: usize, k: usize| {
            let last = stage_layers[i].last().expect("stage has layers");
            last.out_tile_bytes(*splits[i].last().expect("split")[..].get(k).unwrap_or(&0))
        };
        let mut stages = Vec::with_capacity(stage_layers.len());
        for (i, ls) in stage_layers.iter().enumerate() {
            let tiles: Vec<TileInfo> = (0..t as usize)
                .map(|k| {
                    let px: Vec<u64> = splits[i].iter().map(|s| s[k]).collect();
                    let in_bytes = match src[i] {
                        Port::L2 if px[0] == 0 => 0,
                        Port::L2 => ls[0].in_tile_bytes(px[0]),
                        Port::Stage(p) => out_bytes(p, k),
                    };
                    TileInfo {
                        out_bytes: out_bytes(i, k),
                        px,
                        in_bytes,
                        l2_in: 0,
                        l2_out: 0,
                    }
                })
                .collect();
            let own_in = |k: usize| {
                let p = tiles[k].px[0];
                if p == 0 {
                    0
                } else {
                    ls[0].in_tile_bytes(p)
                }
            };
            let in_max = (0..t as usize).map(|k| tiles[k].in_bytes.max(own_in(k))).max().unwrap_or(0);
            let out_max = tiles.iter().map(|x| x.out_bytes).max().unwrap_or(0);
            let mid_max = (0..ls.len().saturating_sub(1))
                .flat_map(|j| tiles.iter().map(move |x| ls[j].out_tile_bytes(x.px[j])))
                .max()
                .unwrap_or(0);
            let mut top = RUNTIME_RESERVE_BYTES;
            let mut take = |size: u64| {
                let a = top;
                top += align(size.max(u64::from(L1_WORD_BYTES)));
                a
            };
            let in_buf = [take(in_max), take(in_max)];
            let out_buf = [take(out_max), take(out_max)];
            let mid_buf = if ls.len() > 1 {
                [take(mid_max), take(mid_max)]
            } else {
                [0, 0]
            };
            if top > l1 {
                return None;
            }
            stages.push(Stage {
                cluster: 0,
                layers: ls.clone(),
                src: src[i],
                dst: dst[i],
                in_buf,
                out_buf,
                mid_buf,
                tiles,
                broadcast: None,
                eu: EventUnit::new(arch.cluster.event_latency_cycles),
                input: CtlState::default(),
                compute: CtlState::default(),
                output: CtlState::default(),
                input_wait: 0,
            });
        }
        Some(stages)
    }

    pub fn summary(&self) -> &WorkloadSummary {
        &self.summary
    }

    pub fn input_wait_cycles(&self, n_clusters: usize) -> Vec<Cycle> {
        let mut v = vec![0; n_clusters];
        for s in &self.stages {
            v[s.cluster] = s.input_wait;
        }
        v
    }

    fn total_tiles(&self) -> u64 {
        self.frames * self.stages.first().map_or(0, |s| s.tiles.len() as u64)
    }

    /// First actions at cycle 0.
    pub fn start(&mut self) -> Vec<Action> {
        let mut out = Vec::new();
        for i in 0..self.stages.len() {
            for ctl in [Ctl::Input, Ctl::Compute, Ctl::Output] {
                self.poll(i, ctl, &mut out);
            }
        }
        out
    }

    fn ctl(&mut self, i: usize, ctl: Ctl) -> &mut CtlState {
        let s = &mut self.stages[i];
        match ctl {
            Ctl::Input => &mut s.input,
            Ctl::Compute => &mut s.compute,
            Ctl::Output => &mut s.output,
        }
    }

    fn mask(&self, i: usize, ctl: Ctl, g: u64) -> Vec<Ev> {
        let s = &self.stages[i];
        let mut m = Vec::with_capacity(3);
        match ctl {
            Ctl::Input => {
                if g >= 2 {
                    m.push(Ev::InFree(g - 2));
                }
            }
            Ctl::Compute => {
                m.push(Ev::InReady(g));
                if g >= 2 {
                    m.push(Ev::OutFree(g - 2));
                }
                if g >= 1 {
                    m.push(Ev::TileDone(g - 1));
                }
            }
            Ctl::Output => {
                m.push(Ev::OutReady(g));
                if g >= 2 && matches!(s.dst, Port::Stage(_)) {
                    m.push(Ev::PeerInFree(g - 2));
                }
            }
        }
        m
    }

    /// Puts a waiting controller to sleep until its events have fired.
    fn poll(&mut self, i: usize, ctl: Ctl, out: &mut Vec<Action>) {
        if ctl == Ctl::Input && self.stages[i].src != Port::L2 {
            return;
        }
        let total = self.total_tiles();
        let st = self.ctl(i, ctl).clone();
        if st.sleeping || st.next >= total {
            return;
        }
        let mask = self.mask(i, ctl, st.next);
        let resume = if mask.is_empty() {
            Some(st.since)
        } else {
            self.stages[i].eu.wait(&mask, st.since)
        };
        if let Some(at) = resume {
            self.ctl(i, ctl).sleeping = true;
            out.push(Action::Resume { at, stage: i, ctl });
        }
    }

    fn poll_all(&mut self, i: usize, out: &mut Vec<Action>) {
        for ctl in [Ctl::Input, Ctl::Compute, Ctl::Output] {
            self.poll(i, ctl, out);
        }
    }

    pub fn on_resume(&mut self, i: usize, ctl: Ctl, now: Cycle, tl: &mut Timeline) -> Result<Vec<Action>, SimError> {
        let mut out = Vec::new();
        let st = self.ctl(i, ctl).clone();
        let g = st.next;
        let t = self.stages[i].tiles.len() as u64;
        let k = (g % t) as usize;
        let cluster = self.stages[i].cluster;
        match ctl {
            Ctl::Input => {
                let s = &self.stages[i];
                let tile = &s.tiles[k];
                let buf = s.in_buf[(g % 2) as usize];
                if tile.in_bytes == 0 {
                    self.stages[i].eu.post(Ev::InReady(g), now);
                } else {
                    let mut d = DmaDescriptor::l2_to_l1(cluster, tile.l2_in, buf, tile.in_bytes).with_tag(g);
                    if let Some(group) = s.broadcast {
                        d = d.with_broadcast(BroadcastKey { id: g, group_size: group });
                    }
                    out.push(Action::Dma(d));
                }
            }
            Ctl::Compute => {
                if !st.overhead_done && self.tile_overhead > 0 {
                    if now > st.since {
                        tl.record(ResourceId::Core(cluster), Phase::WaitEvent, st.since, now)?;
                    }
                    self.account_input_wait(i, g);
                    tl.record(ResourceId::Core(cluster), Phase::Prog, now, now + self.tile_overhead)?;
                    let c = self.ctl(i, ctl);
                    c.overhead_done = true;
                    out.push(Action::Resume {
                        at: now + self.tile_overhead,
                        stage: i,
                        ctl,
                    });
                    return Ok(out);
                }
                if self.tile_overhead == 0 {
                    if now > st.since {
                        tl.record(ResourceId::Core(cluster), Phase::WaitEvent, st.since, now)?;
                    }
                    self.account_input_wait(i, g);
                }
                self.ctl(i, ctl).overhead_done = false;
                let jobs = self.tile_jobs(i, k, g);
                if jobs.is_empty() {
                    self.ctl(i, ctl).next += 1;
                    self.ctl(i, ctl).since = now;
                    self.ctl(i, ctl).sleeping = false;
                    self.tile_done(i, g, now, &mut out);
                    self.poll_all(i, &mut out);
                    return Ok(out);
                }
                let last = jobs.len() - 1;
                for (n, job) in jobs.into_iter().enumerate() {
                    out.push(Action::Job {
                        cluster,
                        job,
                        tag: (n == last).then_some(g),
                    });
                }
            }
            Ctl::Output => {
                let s = &self.stages[i];
                let tile = &s.tiles[k];
                let buf = s.out_buf[(g % 2) as usize];
                if tile.out_bytes == 0 {
                    self.output_done(i, g, now, &mut out);
                } else {
                    let d = match s.dst {
                        Port::L2 => DmaDescriptor::l1_to_l2(cluster, buf, tile.l2_out, tile.out_bytes),
                        Port::Stage(c) => {
                            let dst = &self.stages[c];
                            DmaDescriptor::l1_to_remote(
                                cluster,
                                buf,
                                dst.cluster,
                                dst.in_buf[(g % 2) as usize],
                                tile.out_bytes,
                            )
                        }
                    };
                    out.push(Action::Dma(d.with_tag(g)));
                }
            }
        }
        let c = self.ctl(i, ctl);
        c.next += 1;
        c.since = now;
        c.sleeping = false;
        self.poll(i, ctl, &mut out);
        Ok(out)
    }

    fn account_input_wait(&mut self, i: usize, g: u64) {
        let s = &mut self.stages[i];
        let ready = s.eu.fired_at(Ev::InReady(g)).unwrap_or(0);
        let prev = if g == 0 {
            0
        } else {
            s.eu.fired_at(Ev::TileDone(g - 1)).unwrap_or(0)
        };
        s.input_wait += ready.saturating_sub(prev);
    }

    fn tile_jobs(&self, i: usize, k: usize, g: u64) -> Vec<ImaJob> {
        let s = &self.stages[i];
        let tile = &s.tiles[k];
        let p = (g % 2) as usize;
        let n = s.layers.len();
        let mut jobs = Vec::new();
        for (j, l) in s.layers.iter().enumerate() {
            let src = if j == 0 { s.in_buf[p] } else { s.mid_buf[(j - 1) % 2] };
            let dst = if j + 1 == n { s.out_buf[p] } else { s.mid_buf[j % 2] };
            let mut part = ima_job_decompose(l, tile.px[j], l.c_out, &self.ima_cfg, src, dst);
            if self.multi_layer_reprogram[i] {
                if let Some(first) = part.first_mut() {
                    first.needs_reprogram = true;
                }
            }
            jobs.extend(part);
        }
        jobs
    }

    fn tile_done(&mut self, i: usize, g: u64, now: Cycle, out: &mut Vec<Action>) {
        let s = &mut self.stages[i];
        for e in [Ev::TileDone(g), Ev::InFree(g), Ev::OutReady(g)] {
            s.eu.post(e, now);
        }
        if let Port::Stage(p) = s.src {
            self.stages[p].eu.post(Ev::PeerInFree(g), now);
            self.poll_all(p, out);
        }
        self.poll_all(i, out);
    }

    fn output_done(&mut self, i: usize, g: u64, now: Cycle, out: &mut Vec<Action>) {
        self.stages[i].eu.post(Ev::OutFree(g), now);
        if let Port::Stage(c) = self.stages[i].dst {
            self.stages[c].eu.post(Ev::InReady(g), now);
            self.poll_all(c, out);
        }
        self.poll_all(i, out);
    }

    pub fn on_job_done(&mut self, cluster: usize, tag: u64, now: Cycle) -> Vec<Action> {
        let mut out = Vec::new();
        if let Some(i) = self.stage_of[cluster] {
            self.tile_done(i, tag, now, &mut out);
        }
        out
    }

    pub fn on_dma_done(&mut self, desc: &DmaDescriptor, now: Cycle) -> Vec<Action> {
        let mut out = Vec::new();
        let Some(i) = self.stage_of[desc.cluster] else {
            return out;
        };
        let g = desc.tag;
        match desc.direction {
            DmaDirection::L2ToL1 => {
                self.stages[i].eu.post(Ev::InReady(g), now);
                self.poll_all(i, &mut out);
            }
            DmaDirection::L1ToL2 | DmaDirection::L1ToL1Remote => self.output_done(i, g, now, &mut out),
        }
        out
    }

    /// Controllers that have not finished, with the events they lack.
    pub fn blocked(&self) -> Vec<String> {
        let total = self.total_tiles();
        let mut v = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            for (ctl, st) in [(Ctl::Input, &s.input), (Ctl::Compute, &s.compute), (Ctl::Output, &s.output)] {
                if ctl == Ctl::Input && s.src != Port::L2 {
                    continue;
                }
                if st.next < total {
                    let missing = s.eu.missing(&self.mask(i, ctl, st.next));
                    v.push(format!("cl{} {:?} tile {} waits {:?}", s.cluster, ctl, st.next, missing));
                }
            }
        }
        v
    }

    pub fn finished(&self) -> bool {
        let total = self.total_tiles();
        self.stages.iter().all(|s| {
            s.compute.next >= total
                && s.output.next >= total
                && (s.src != Port::L2 || s.input.next >= total)
                && s.eu.fired_at(Ev::OutFree(total - 1)).is_some()
        })
    }
}
