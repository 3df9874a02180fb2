//! Distribution of layers over clusters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::Cycle;
use crate::mapping::{balanced_split, LayerDescriptor, MapError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pipelining,
    DataParallel,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Pipelining, Strategy::DataParallel];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Pipelining => "pipelining",
            Strategy::DataParallel => "data_parallel",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, MapError> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "pipelining" | "pipeline" => Ok(Strategy::Pipelining),
            "data_parallel" | "dataparallel" | "data_parallelization" => Ok(Strategy::DataParallel),
            other => Err(MapError::UnknownStrategy(other.to_string())),
        }
    }
}

/// A half-open channel range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSlice {
    pub start: u32,
    pub len: u32,
}

impl ChannelSlice {
    pub fn full(n: u32) -> Self {
        Self { start: 0, len: n }
    }

    pub fn end(&self) -> u32 {
        self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub layer: usize,
    pub c_in: ChannelSlice,
    pub c_out: ChannelSlice,
    pub weight_tile: usize,
    /// Layer that must finish on the same crossbar before this one runs.
    pub serialized_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    L2,
    Cluster(usize),
}

/// Data movement feeding `layer` (or leaving it, when `to` is L2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub layer: usize,
    pub from: Endpoint,
    pub to: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub strategy: Strategy,
    pub n_clusters: usize,
    pub layers: Vec<LayerDescriptor>,
    /// Ordered work per cluster; clusters without work have an empty list.
    pub assignments: Vec<Vec<Assignment>>,
    pub edges: Vec<Edge>,
}

impl MappingPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let plan: MappingPlan = serde_json::from_str(text).map_err(|e| MapError::Plan(e.to_string()))?;
        plan.check()?;
        Ok(plan)
    }

    /// Clusters that have at least one assignment, in id order.
    pub fn active_clusters(&self) -> Vec<usize> {
        (0..self.n_clusters).filter(|&c| !self.assignments[c].is_empty()).collect()
    }

    /// Cluster running `layer` (pipelining plans).
    pub fn cluster_of(&self, layer: usize) -> Option<usize> {
        (0..self.n_clusters).find(|&c| self.assignments[c].iter().any(|a| a.layer == layer))
    }

    /// Structural checks shared by both strategies.
    pub fn check(&self) -> Result<(), MapError> {
        let bad = |m: String| Err(MapError::Plan(m));
        if self.assignments.len() != self.n_clusters {
            return bad(format!("{} assignment lists for {} clusters", self.assignments.len(), self.n_clusters));
        }
        if self.layers.is_empty() {
            return bad("plan has no layers".into());
        }
        for l in &self.layers {
            l.validate()?;
        }
        for (c, list) in self.assignments.iter().enumerate() {
            for (i, a) in list.iter().enumerate() {
                let Some(layer) = self.layers.get(a.layer) else {
                    return bad(format!("cluster {c}: unknown layer {}", a.layer));
                };
                if a.c_out.len == 0 || a.c_out.end() > layer.c_out || a.c_in.end() > layer.c_in {
                    return bad(format!("cluster {c}: channel slice outside layer {}", a.layer));
                }
                let shares = list[..i].iter().rev().find(|b| b.weight_tile == a.weight_tile);
                if let Some(prev) = shares {
                    if a.serialized_after != Some(prev.layer) {
                        return bad(format!(
                            "cluster {c}: layer {} shares weight tile {} without serialization",
                            a.layer, a.weight_tile
                        ));
                    }
                }
            }
        }
        match self.strategy {
            Strategy::DataParallel => {
                if self.layers.len() != 1 {
                    return bad("data-parallel plans hold exactly one layer".into());
                }
                let mut next = 0;
                for list in self.assignments.iter().filter(|l| !l.is_empty()) {
                    if list.len() != 1 || list[0].c_out.start != next {
                        return bad("data-parallel slices must be contiguous, one per cluster".into());
                    }
                    next = list[0].c_out.end();
                }
                if next != self.layers[0].c_out {
                    return bad("data-parallel slices do not cover the output channels".into());
                }
            }
            Strategy::Pipelining => {
                let mut seen = Vec::new();
                for list in &self.assignments {
                    for a in list {
                        if a.c_out != ChannelSlice::full(self.layers[a.layer].c_out) {
                            return bad("pipelining assigns whole layers".into());
                        }
                        seen.push(a.layer);
                    }
                }
                seen.sort_unstable();
                if seen != (0..self.layers.len()).collect::<Vec<_>>() {
                    return bad("every layer must be assigned exactly once".into());
                }
                // Consecutive layers on one cluster must stay in order and
                // contiguous, otherwise the chain would loop back.
                let mut order = Vec::new();
                for list in self.assignments.iter().filter(|l| !l.is_empty()) {
                    order.extend(list.iter().map(|a| a.layer));
                }
                if order != (0..self.layers.len()).collect::<Vec<_>>() {
                    return bad("pipeline stages must hold consecutive layers in cluster order".into());
                }
            }
        }
        Ok(())
    }
}

/// Chains layers over clusters in order. With more layers than clusters the
/// surplus goes to the last clusters, which serialize their layers.
pub fn map_pipelining(layers: &[LayerDescriptor], n_cl: usize) -> Result<MappingPlan, MapError> {
    if n_cl == 0 {
        return Err(MapError::Plan("n_cl must be ≥ 1".into()));
    }
    if layers.is_empty() {
        return Err(MapError::Plan("no layers to map".into()));
    }
    for l in layers {
        l.validate()?;
    }
    let n = layers.len();
    let stages = n.min(n_cl);
    let mut sizes = balanced_split(n as u64, stages as u64);
    sizes.reverse();
    let mut assignments = vec![Vec::new(); n_cl];
    let mut layer = 0;
    for (c, &size) in sizes.iter().enumerate() {
        for k in 0..size as usize {
            assignments[c].push(Assignment {
                layer,
                c_in: ChannelSlice::full(layers[layer].c_in),
                c_out: ChannelSlice::full(layers[layer].c_out),
                weight_tile: c,
                serialized_after: (k > 0).then(|| layer - 1),
            });
            layer += 1;
        }
    }
    let mut edges = Vec::new();
    let mut prev = Endpoint::L2;
    for (c, list) in assignments.iter().enumerate().take(stages) {
        edges.push(Edge {
            layer: list[0].layer,
            from: prev,
            to: Endpoint::Cluster(c),
        });
        prev = Endpoint::Cluster(c);
    }
    edges.push(Edge {
        layer: n - 1,
        from: prev,
        to: Endpoint::L2,
    });
    let plan = MappingPlan {
        strategy: Strategy::Pipelining,
        n_clusters: n_cl,
        layers: layers.to_vec(),
        assignments,
        edges,
    };
    plan.check()?;
    Ok(plan)
}

/// Splits the output channels of one layer into balanced contiguous slices.
pub fn map_data_parallel(layer: &LayerDescriptor, n_cl: usize) -> Result<MappingPlan, MapError> {
    if n_cl == 0 {
        return Err(MapError::Plan("n_cl must be ≥ 1".into()));
    }
    layer.validate()?;
    let mut assignments = vec![Vec::new(); n_cl];
    let mut edges = Vec::new();
    let mut start = 0u32;
    for (c, len) in balanced_split(u64::from(layer.c_out), n_cl as u64).into_iter().enumerate() {
        if len == 0 {
            continue;
        }
        assignments[c].push(Assignment {
            layer: 0,
            c_in: ChannelSlice::full(layer.c_in),
            c_out: ChannelSlice {
                start,
                len: len as u32,
            },
            weight_tile: c,
            serialized_after: None,
        });
        start += len as u32;
        edges.push(Edge {
            layer: 0,
            from: Endpoint::L2,
            to: Endpoint::Cluster(c),
        });
        edges.push(Edge {
            layer: 0,
            from: Endpoint::Cluster(c),
            to: Endpoint::L2,
        });
    }
    let plan = MappingPlan {
        strategy: Strategy::DataParallel,
        n_clusters: n_cl,
        layers: vec![layer.clone()],
        assignments,
        edges,
    };
    plan.check()?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTimes {
    /// Steady-state cycles per tile for every active cluster, in order.
    pub stage_cycles: Vec<Cycle>,
    pub critical: usize,
    pub interval: Cycle,
}

/// Index and value of the slowest stage; ties pick the first.
pub fn critical_stage(stage_cycles: &[Cycle]) -> (usize, Cycle) {
    let mut best = (0, 0);
    for (i, &c) in stage_cycles.iter().enumerate() {
        if c > best.1 {
            best = (i, c);
        }
    }
    best
}

/// Stage time = sum of the per-layer times of the layers a cluster runs.
pub fn pipeline_stage_cycles(plan: &MappingPlan, layer_cycles: &[Cycle]) -> StageTimes {
    let stage_cycles: Vec<Cycle> = plan
        .assignments
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| l.iter().map(|a| layer_cycles[a.layer]).sum())
        .collect();
    let (critical, interval) = critical_stage(&stage_cycles);
    StageTimes {
        stage_cycles,
        critical,
        interval,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn chain(n: usize) -> Vec<LayerDescriptor> {
        (0..n).map(|i| LayerDescriptor::pointwise(&format!("l{i}"), 256, 256, 8, 8)).collect()
    }

    #[test]
    fn sixteen_stages() {
        let p = map_pipelining(&chain(16), 16).unwrap();
        assert!(p.assignments.iter().all(|l| l.len() == 1 && l[0].serialized_after.is_none()));
        assert_eq!(p.edges.len(), 17);
        assert_eq!(p.edges[0].from, Endpoint::L2);
        assert_eq!(p.edges[5].from, Endpoint::Cluster(4));
        assert_eq!(p.edges[5].to, Endpoint::Cluster(5));
        assert_eq!(p.edges[16].to, Endpoint::L2);
    }

    #[test]
    fn four_layers_two_clusters() {
        let p = map_pipelining(&chain(4), 2).unwrap();
        let layers: Vec<Vec<usize>> = p.assignments.iter().map(|l| l.iter().map(|a| a.layer).collect()).collect();
        assert_eq!(layers, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(p.assignments[0][1].serialized_after, Some(0));
        assert_eq!(p.assignments[1][1].serialized_after, Some(2));
        assert_eq!(p.assignments[1][0].serialized_after, None);
    }

    #[test]
    fn surplus_goes_last() {
        let p = map_pipelining(&chain(5), 4).unwrap();
        let sizes: Vec<usize> = p.assignments.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 1, 1, 2]);
    }

    #[test]
    fn degenerate_plans_coincide() {
        let l = chain(1);
        let a = map_pipelining(&l, 1).unwrap();
        let b = map_data_parallel(&l[0], 1).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.edges, b.edges);
        assert_eq!(
            a.edges,
            vec![
                Edge { layer: 0, from: Endpoint::L2, to: Endpoint::Cluster(0) },
                Edge { layer: 0, from: Endpoint::Cluster(0), to: Endpoint::L2 },
            ]
        );
    }

    #[test]
    fn data_parallel_slices() {
        let p = map_data_parallel(&LayerDescriptor::pointwise("d", 256, 4096, 8, 8), 16).unwrap();
        assert!(p.assignments.iter().all(|l| l[0].c_out.len == 256));
        let q = map_data_parallel(&LayerDescriptor::pointwise("d", 256, 100, 8, 8), 16).unwrap();
        let lens: Vec<u32> = q.assignments.iter().map(|l| l[0].c_out.len).collect();
        assert_eq!(lens.iter().sum::<u32>(), 100);
        assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        let few = map_data_parallel(&LayerDescriptor::pointwise("d", 8, 3, 2, 2), 5).unwrap();
        assert_eq!(few.active_clusters(), vec![0, 1, 2]);
    }

    #[test]
    fn stage_times() {
        assert_eq!(critical_stage(&[54, 54, 108, 54]), (2, 108));
        assert_eq!(critical_stage(&[54, 54, 54]), (0, 54));
        let p = map_pipelining(&chain(3), 2).unwrap();
        let t = pipeline_stage_cycles(&p, &[54, 54, 54]);
        assert_eq!(t.stage_cycles, vec![54, 108]);
        assert_eq!((t.critical, t.interval), (1, 108));
    }

    #[test]
    fn json_round_trip() {
        let p = map_pipelining(&chain(3), 2).unwrap();
        assert_eq!(MappingPlan::from_json(&p.to_json()).unwrap(), p);
        let mut broken = p.clone();
        broken.assignments[1][1].serialized_after = None;
        assert!(MappingPlan::from_json(&broken.to_json()).is_err());
    }

    /// Brute force: every (pixel, output channel) of every layer is
    /// produced by exactly one assignment.
    fn coverage(plan: &MappingPlan) -> bool {
        let mut hits: HashMap<(usize, u64, u32), u32> = HashMap::new();
        for list in &plan.assignments {
            for a in list {
                for p in 0..plan.layers[a.layer].out_pixels() {
                    for c in a.c_out.start..a.c_out.end() {
                        *hits.entry((a.layer, p, c)).or_default() += 1;
                    }
                }
            }
        }
        let expected: u64 = plan.layers.iter().map(|l| l.out_pixels() * u64::from(l.c_out)).sum();
        hits.len() as u64 == expected && hits.values().all(|&n| n == 1)
    }

    proptest::proptest! {
        #[test]
        fn data_parallel_covers(c_out in 1u32..300, w in 1u32..5, n in 1usize..20) {
            let plan = map_data_parallel(&LayerDescriptor::pointwise("x", 16, c_out, w, w), n).unwrap();
            proptest::prop_assert!(coverage(&plan));
        }

        #[test]
        fn pipelining_covers(n_layers in 1usize..10, w in 1u32..4, n in 1usize..8) {
            let layers: Vec<_> = (0..n_layers)
                .map(|i| LayerDescriptor::pointwise(&format!("l{i}"), 8, 4 + i as u32, w, w))
                .collect();
            let plan = map_pipelining(&layers, n).unwrap();
            proptest::prop_assert!(coverage(&plan));
        }
    }
}
