//! Shared-capacity link model.
//!
//! Every cycle the capacity of a pool is split max-min fairly among the
//! flows that can use it (the fluid limit of cycle-by-cycle round-robin).
//! Bits granted in cycle `x` land at the far end in cycle `x + latency`.
//! Flows that address L2 must also win their head bank for the cycle; the
//! losers sit out and the winners share the capacity.

use crate::config::{Accounting, InterconnectConfig};
use crate::engine::Cycle;
use crate::error::SimError;
use crate::interconnect::l2::L2Memory;

const EPS: f64 = 1e-6;

pub type FlowId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// L2 (or a producer) towards a cluster.
    Read,
    /// Cluster towards L2.
    Write,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub requester: usize,
    pub bytes: u64,
    pub direction: Direction,
    /// L2 address of the first byte, when the flow touches L2.
    pub l2_addr: Option<u64>,
    /// Number of destinations that receive the same bytes.
    pub fanout: u32,
    /// Data is handed to the link incrementally through [`Link::supply`].
    pub incremental: bool,
}

#[derive(Debug, Clone)]
struct Flow {
    id: FlowId,
    spec: FlowSpec,
    total_bits: f64,
    sent_bits: f64,
    supplied_bits: f64,
    sent_bytes_reported: u64,
}

impl Flow {
    fn demand(&self) -> f64 {
        let limit = if self.spec.incremental {
            self.supplied_bits.min(self.total_bits)
        } else {
            self.total_bits
        };
        (limit - self.sent_bits).max(0.0)
    }

    fn pool(&self, accounting: Accounting) -> usize {
        match (accounting, self.spec.direction) {
            (Accounting::AggregateShared, _) | (_, Direction::Read) => 0,
            (Accounting::PerDirection, Direction::Write) => 1,
        }
    }
}

/// What one flow achieved in one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProgress {
    pub id: FlowId,
    pub requester: usize,
    pub bits: f64,
    /// Whole bytes that completed this cycle.
    pub new_bytes: u64,
    /// All bytes have been sent; the last lands at `cycle + latency`.
    pub finished: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkStats {
    pub busy_cycles: u64,
    pub granted_bits: f64,
    pub max_bits_in_cycle: f64,
    /// Per requester: cycles with pending data that got less than it could use.
    pub wait_cycles: Vec<u64>,
    pub l2_stall_cycles: u64,
}

#[derive(Debug, Clone)]
pub struct Link {
    capacity: f64,
    latency: u64,
    accounting: Accounting,
    flows: Vec<Flow>,
    next_id: FlowId,
    pub stats: LinkStats,
}

/// Max-min fair split of `cap` among `demands`.
fn water_fill(cap: f64, demands: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| demands[a].total_cmp(&demands[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; demands.len()];
    let mut left = cap;
    let mut n = demands.len();
    for i in order {
        let share = left / n as f64;
        let give = demands[i].min(share);
        out[i] = give;
        left -= give;
        n -= 1;
    }
    out
}

impl Link {
    pub fn new(capacity_bits: f64, latency: u64, accounting: Accounting) -> Self {
        Self {
            capacity: capacity_bits,
            latency,
            accounting,
            flows: Vec::new(),
            next_id: 0,
            stats: LinkStats::default(),
        }
    }

    pub fn from_config(cfg: &InterconnectConfig) -> Self {
        Self::new(cfg.bandwidth_bits_per_cycle, cfg.latency_cycles, cfg.accounting)
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn pools(&self) -> usize {
        match self.accounting {
            Accounting::AggregateShared => 1,
            Accounting::PerDirection => 2,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn open(&mut self, spec: FlowSpec) -> FlowId {
        let id = self.next_id;
        self.next_id += 1;
        let total_bits = spec.bytes as f64 * 8.0;
        if self.stats.wait_cycles.len() <= spec.requester {
            self.stats.wait_cycles.resize(spec.requester + 1, 0);
        }
        self.flows.push(Flow {
            id,
            spec,
            total_bits,
            sent_bits: 0.0,
            supplied_bits: 0.0,
            sent_bytes_reported: 0,
        });
        id
    }

    /// Makes `bytes` more of an incremental flow available from the next step.
    pub fn supply(&mut self, id: FlowId, bytes: u64) {
        if let Some(f) = self.flows.iter_mut().find(|f| f.id == id) {
            f.supplied_bits += bytes as f64 * 8.0;
        }
    }

    /// Advances one cycle. Finished flows are removed.
    pub fn step(&mut self, l2: Option<&mut L2Memory>) -> Vec<FlowProgress> {
        let demands: Vec<f64> = self.flows.iter().map(Flow::demand).collect();
        let mut eligible: Vec<bool> = demands.iter().map(|&d| d > EPS).collect();

        if let Some(l2) = l2 {
            let heads: Vec<(u64, u64)> = self
                .flows
                .iter()
                .enumerate()
                .filter(|(i, f)| eligible[*i] && f.spec.l2_addr.is_some())
                .map(|(_, f)| {
                    let base = f.spec.l2_addr.unwrap_or(0);
                    (f.id, base + (f.sent_bits / 8.0) as u64)
                })
                .collect();
            if !heads.is_empty() {
                let won = l2.arbitrate(&heads);
                let mut k = 0;
                for (i, f) in self.flows.iter().enumerate() {
                    if eligible[i] && f.spec.l2_addr.is_some() {
                        if !won[k] {
                            eligible[i] = false;
                            self.stats.l2_stall_cycles += 1;
                        }
                        k += 1;
                    }
                }
            }
        }

        let mut grant = vec![0.0; self.flows.len()];
        for pool in 0..self.pools() {
            let idx: Vec<usize> = (0..self.flows.len())
                .filter(|&i| eligible[i] && self.flows[i].pool(self.accounting) == pool)
                .collect();
            let d: Vec<f64> = idx.iter().map(|&i| demands[i]).collect();
            for (k, g) in water_fill(self.capacity, &d).into_iter().enumerate() {
                grant[idx[k]] = g;
            }
        }

        let total: f64 = grant.iter().sum();
        if total > EPS {
            self.stats.busy_cycles += 1;
        }
        self.stats.granted_bits += total;
        self.stats.max_bits_in_cycle = self.stats.max_bits_in_cycle.max(total);

        let mut progress = Vec::with_capacity(self.flows.len());
        for (i, f) in self.flows.iter_mut().enumerate() {
            if demands[i] <= EPS {
                continue;
            }
            let usable = demands[i].min(self.capacity);
            if grant[i] + EPS < usable {
                self.stats.wait_cycles[f.spec.requester] += 1;
            }
            f.sent_bits += grant[i];
            let finished = f.sent_bits >= f.total_bits - EPS;
            if finished {
                f.sent_bits = f.total_bits;
            }
            let bytes_now = if finished {
                f.spec.bytes
            } else {
                ((f.sent_bits + EPS) / 8.0) as u64
            };
            let new_bytes = bytes_now - f.sent_bytes_reported;
            f.sent_bytes_reported = bytes_now;
            if grant[i] > 0.0 || finished {
                progress.push(FlowProgress {
                    id: f.id,
                    requester: f.spec.requester,
                    bits: grant[i],
                    new_bytes,
                    finished,
                });
            }
        }
        self.flows.retain(|f| f.sent_bits < f.total_bits);
        progress
    }
}

/// A standalone transfer request used by [`link_transfer`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRequest {
    pub requester: usize,
    pub bytes: u64,
    pub destinations: Vec<usize>,
    pub issue_cycle: Cycle,
}

/// `(first_beat_cycle, last_beat_cycle)`: the cycle the first beat lands,
/// and the end of the cycle in which the last beat lands.
pub type BeatWindow = (Cycle, Cycle);

/// Runs a trace of independent requests on an otherwise idle link, without
/// L2 bank effects, and reports when each one lands.
pub fn link_transfer(cfg: &InterconnectConfig, requests: &[LinkRequest]) -> Result<Vec<BeatWindow>, SimError> {
    for r in requests {
        if r.destinations.len() > 1 && !cfg.broadcast_enabled {
            return Err(SimError::BroadcastUnsupported);
        }
        if r.destinations.is_empty() {
            return Err(SimError::EmptyBroadcast);
        }
        if r.bytes == 0 {
            return Err(SimError::InvalidDescriptor("zero-byte transfer".into()));
        }
    }
    let mut link = Link::from_config(cfg);
    let lat = link.latency();
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by_key(|&i| (requests[i].issue_cycle, i));
    let mut next = 0;
    let mut ids: Vec<Option<FlowId>> = vec![None; requests.len()];
    let mut out: Vec<(Option<Cycle>, Cycle)> = vec![(None, 0); requests.len()];
    let mut done = 0;
    let mut cycle = requests.iter().map(|r| r.issue_cycle).min().unwrap_or(0);
    while done < requests.len() {
        while next < order.len() && requests[order[next]].issue_cycle <= cycle {
            let i = order[next];
            let r = &requests[i];
            ids[i] = Some(link.open(FlowSpec {
                requester: r.requester,
                bytes: r.bytes,
                direction: Direction::Read,
                l2_addr: None,
                fanout: r.destinations.len() as u32,
                incremental: false,
            }));
            next += 1;
        }
        for p in link.step(None) {
            let i = ids.iter().position(|x| *x == Some(p.id)).expect("known flow");
            if out[i].0.is_none() && p.bits > 0.0 {
                out[i].0 = Some(cycle + lat);
            }
            if p.finished {
                out[i].1 = cycle + lat + 1;
                done += 1;
            }
        }
        cycle += 1;
    }
    Ok(out.into_iter().map(|(f, l)| (f.unwrap_or(l), l)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastOutcome {
    /// `(destination, delivery cycle)`.
    pub deliveries: Vec<(usize, Cycle)>,
    /// Cycles the channel was occupied.
    pub occupied_cycles: u64,
    pub l2_read_bytes: u64,
}

/// One transmission from L2 delivered to every destination at once.
pub fn broadcast_transfer(cfg: &InterconnectConfig, dsts: &[usize], bytes: u64) -> Result<BroadcastOutcome, SimError> {
    if !cfg.broadcast_enabled {
        return Err(SimError::BroadcastUnsupported);
    }
    if dsts.is_empty() {
        return Err(SimError::EmptyBroadcast);
    }
    let req = LinkRequest {
        requester: 0,
        bytes,
        destinations: dsts.to_vec(),
        issue_cycle: 0,
    };
    let (_, last) = link_transfer(cfg, std::slice::from_ref(&req))?[0];
    Ok(BroadcastOutcome {
        deliveries: dsts.iter().map(|&d| (d, last)).collect(),
        occupied_cycles: last - cfg.latency_cycles,
        l2_read_bytes: bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(requester: usize, bytes: u64, issue: Cycle) -> LinkRequest {
        LinkRequest {
            requester,
            bytes,
            destinations: vec![requester],
            issue_cycle: issue,
        }
    }

    #[test]
    fn idle_wireless_256() {
        let cfg = InterconnectConfig::wireless(256.0);
        let r = link_transfer(&cfg, &[req(0, 256, 0)]).unwrap();
        assert_eq!(r[0], (1, 1 + 8));
    }

    #[test]
    fn idle_wired_64() {
        let cfg = InterconnectConfig::wired(64.0);
        let r = link_transfer(&cfg, &[req(0, 256, 0)]).unwrap();
        assert_eq!(r[0].1, 9 + 32);
    }

    /// Oracle for two equal requests: a strict alternating round-robin of
    /// half-capacity beats, simulated beat by beat.
    fn rr_oracle(cap_bits: u64, bytes: u64, n: u64) -> u64 {
        let half = cap_bits / n;
        let mut left = vec![bytes * 8; n as usize];
        let mut cycle = 0;
        while left.iter().any(|&l| l > 0) {
            for l in left.iter_mut() {
                *l = l.saturating_sub(half);
            }
            cycle += 1;
        }
        cycle
    }

    #[test]
    fn two_requests_halve_the_link() {
        let cfg = InterconnectConfig::wired(64.0);
        let r = link_transfer(&cfg, &[req(0, 256, 0), req(1, 256, 0)]).unwrap();
        let beats = rr_oracle(64, 256, 2);
        assert_eq!(beats, 64);
        assert_eq!(r, vec![(9, 9 + beats), (9, 9 + beats)]);
    }

    #[test]
    fn broadcast_occupies_once() {
        let cfg = InterconnectConfig::wireless(256.0);
        let dsts: Vec<usize> = (0..16).collect();
        let b = broadcast_transfer(&cfg, &dsts, 256).unwrap();
        assert_eq!(b.occupied_cycles, 8);
        assert_eq!(b.deliveries.len(), 16);
        assert!(b.deliveries.iter().all(|d| d.1 == 9));
        assert_eq!(b.l2_read_bytes, 256);
        let unicast: Vec<LinkRequest> = (0..16).map(|c| req(c, 256, 0)).collect();
        let u = link_transfer(&cfg, &unicast).unwrap();
        assert_eq!(u.iter().map(|x| x.1).max().unwrap() - 1, 128);
    }

    #[test]
    fn degenerate_broadcast_matches_unicast() {
        let cfg = InterconnectConfig::wireless(256.0);
        let b = broadcast_transfer(&cfg, &[3], 256).unwrap();
        let u = link_transfer(&cfg, &[req(3, 256, 0)]).unwrap();
        assert_eq!(b.deliveries, vec![(3, u[0].1)]);
    }

    #[test]
    fn broadcast_errors() {
        let wired = InterconnectConfig::wired(256.0);
        assert_eq!(broadcast_transfer(&wired, &[0, 1], 64), Err(SimError::BroadcastUnsupported));
        let multi = LinkRequest {
            requester: 0,
            bytes: 64,
            destinations: vec![0, 1],
            issue_cycle: 0,
        };
        assert_eq!(link_transfer(&wired, &[multi]), Err(SimError::BroadcastUnsupported));
        let wl = InterconnectConfig::wireless(256.0);
        assert_eq!(broadcast_transfer(&wl, &[], 64), Err(SimError::EmptyBroadcast));
    }

    #[test]
    fn per_direction_pools_are_independent() {
        let mut link = Link::new(64.0, 1, Accounting::PerDirection);
        for (r, dir) in [(0, Direction::Read), (1, Direction::Write)] {
            link.open(FlowSpec {
                requester: r,
                bytes: 64,
                direction: dir,
                l2_addr: None,
                fanout: 1,
                incremental: false,
            });
        }
        let p = link.step(None);
        assert!(p.iter().all(|x| (x.bits - 64.0).abs() < 1e-9));
    }

    #[test]
    fn incremental_flow_waits_for_supply() {
        let mut link = Link::new(64.0, 1, Accounting::AggregateShared);
        let id = link.open(FlowSpec {
            requester: 0,
            bytes: 16,
            direction: Direction::Write,
            l2_addr: None,
            fanout: 1,
            incremental: true,
        });
        assert!(link.step(None).is_empty());
        link.supply(id, 4);
        let p = link.step(None);
        assert_eq!(p[0].new_bytes, 4);
        link.supply(id, 12);
        let p = link.step(None);
        assert_eq!(p[0].new_bytes, 8);
        let p = link.step(None);
        assert!(p[0].finished);
        assert!(link.is_idle());
    }

    fn arb_trace() -> impl Strategy<Value = Vec<LinkRequest>> {
        prop::collection::vec((0usize..6, 1u64..600, 0u64..80), 1..8).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (r, b, t))| req(r * 10 + i, b, t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn single_requester_latency_isolation(bytes in 1u64..5000, bw in 1u32..512, lat in 1u64..20) {
            let mut cfg = InterconnectConfig::wired(f64::from(bw));
            cfg.latency_cycles = lat;
            let r = link_transfer(&cfg, &[req(0, bytes, 7)]).unwrap();
            let beats = (bytes * 8).div_ceil(u64::from(bw));
            prop_assert_eq!(r[0].1 - 7, lat + beats);
        }

        #[test]
        fn more_bandwidth_never_delays(trace in arb_trace(), lo in 8u32..200, extra in 1u32..200) {
            let slow = link_transfer(&InterconnectConfig::wired(f64::from(lo)), &trace).unwrap();
            let fast = link_transfer(&InterconnectConfig::wired(f64::from(lo + extra)), &trace).unwrap();
            for (s, f) in slow.iter().zip(&fast) {
                prop_assert!(f.1 <= s.1, "slow {:?} fast {:?}", slow, fast);
            }
        }

        #[test]
        fn capacity_is_conserved(sizes in prop::collection::vec(1u64..400, 1..10), bw in 1u32..300) {
            let mut link = Link::new(f64::from(bw), 3, Accounting::AggregateShared);
            for (i, &b) in sizes.iter().enumerate() {
                link.open(FlowSpec {
                    requester: i,
                    bytes: b,
                    direction: Direction::Read,
                    l2_addr: None,
                    fanout: 1,
                    incremental: false,
                });
            }
            let mut delivered = vec![0u64; sizes.len()];
            while !link.is_idle() {
                for p in link.step(None) {
                    delivered[p.requester] += p.new_bytes;
                }
            }
            prop_assert!(link.stats.max_bits_in_cycle <= f64::from(bw) + 1e-6);
            prop_assert_eq!(delivered, sizes);
        }
    }
}
