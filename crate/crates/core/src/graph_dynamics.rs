//! Strongly connected components, the condensation poset, Morse graphs and
//! the downset index pairs `(N(q), N(q) \ π⁻¹(q))`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxset::BoxSet;
use crate::conley::ConleyIndex;
use crate::grid::BoxId;
use crate::outer_approx::BoxMap;

pub type ComponentId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("component {0} is not recurrent")]
    NodeNotRecurrent(ComponentId),
    #[error("no Morse node {0}")]
    UnknownNode(usize),
}

/// SCC decomposition of a [`BoxMap`].
///
/// Component ids follow completion order of the lowlink search, so every
/// condensation edge goes from a larger id to a smaller one.
#[derive(Debug, Clone)]
pub struct Condensation {
    component_of: Vec<ComponentId>,
    member_offsets: Vec<usize>,
    members: Vec<BoxId>,
    dag_offsets: Vec<usize>,
    dag_targets: Vec<ComponentId>,
    recurrent: Vec<bool>,
}

/// Iterative lowlink SCC search; returns `component_of` and the component count.
fn strongly_connected(map: &BoxMap) -> (Vec<ComponentId>, usize) {
    const UNSEEN: u32 = u32::MAX;
    let n = map.num_boxes();
    let offsets = map.raw_offsets();
    let targets = map.raw_targets();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut component_of = vec![0 as ComponentId; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut call: Vec<(u32, usize)> = Vec::new();
    let mut next = 0u32;
    let mut ncomp = 0usize;

    for root in 0..n as u32 {
        if index[root as usize] != UNSEEN {
            continue;
        }
        index[root as usize] = next;
        low[root as usize] = next;
        next += 1;
        stack.push(root);
        on_stack[root as usize] = true;
        call.push((root, offsets[root as usize]));

        while let Some(frame) = call.last_mut() {
            let v = frame.0 as usize;
            if frame.1 < offsets[v + 1] {
                let w = targets[frame.1] as usize;
                frame.1 += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w as u32);
                    on_stack[w] = true;
                    call.push((w as u32, offsets[w]));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().expect("lowlink stack underflow") as usize;
                    on_stack[w] = false;
                    component_of[w] = ncomp as ComponentId;
                    if w == v {
                        break;
                    }
                }
                ncomp += 1;
            }
            if let Some(parent) = call.last() {
                let p = parent.0 as usize;
                low[p] = low[p].min(low[v]);
            }
        }
    }
    (component_of, ncomp)
}

/// Computes the SCCs, the deduplicated condensation DAG and recurrence flags.
pub fn condensation(map: &BoxMap) -> Condensation {
    let n = map.num_boxes();
    let (component_of, ncomp) = strongly_connected(map);

    let mut member_offsets = vec![0usize; ncomp + 1];
    for &c in &component_of {
        member_offsets[c as usize + 1] += 1;
    }
    for c in 0..ncomp {
        member_offsets[c + 1] += member_offsets[c];
    }
    let mut fill = member_offsets.clone();
    let mut members = vec![0 as BoxId; n];
    for b in 0..n {
        let c = component_of[b] as usize;
        members[fill[c]] = b as BoxId;
        fill[c] += 1;
    }

    let mut dag_offsets = Vec::with_capacity(ncomp + 1);
    let mut dag_targets = Vec::new();
    let mut recurrent = vec![false; ncomp];
    dag_offsets.push(0);
    let mut scratch: Vec<ComponentId> = Vec::new();
    for c in 0..ncomp {
        let ms = &members[member_offsets[c]..member_offsets[c + 1]];
        recurrent[c] = ms.len() > 1 || map.has_self_loop(ms[0]);
        scratch.clear();
        for &b in ms {
            for &t in map.targets(b) {
                let ct = component_of[t as usize];
                if ct as usize != c {
                    scratch.push(ct);
                }
            }
        }
        scratch.sort_unstable();
        scratch.dedup();
        dag_targets.extend_from_slice(&scratch);
        dag_offsets.push(dag_targets.len());
    }
    Condensation {
        component_of,
        member_offsets,
        members,
        dag_offsets,
        dag_targets,
        recurrent,
    }
}

impl Condensation {
    pub fn num_components(&self) -> usize {
        self.recurrent.len()
    }

    pub fn component_of(&self, b: BoxId) -> ComponentId {
        self.component_of[b as usize]
    }

    /// Boxes of component `c`, ascending.
    pub fn members(&self, c: ComponentId) -> &[BoxId] {
        &self.members[self.member_offsets[c as usize]..self.member_offsets[c as usize + 1]]
    }

    pub fn successors(&self, c: ComponentId) -> &[ComponentId] {
        &self.dag_targets[self.dag_offsets[c as usize]..self.dag_offsets[c as usize + 1]]
    }

    pub fn is_recurrent(&self, c: ComponentId) -> bool {
        self.recurrent[c as usize]
    }

    pub fn recurrent_components(&self) -> impl Iterator<Item = ComponentId> + '_ {
        (0..self.num_components() as ComponentId).filter(|&c| self.is_recurrent(c))
    }

    pub fn dag_edges(&self) -> impl Iterator<Item = (ComponentId, ComponentId)> + '_ {
        (0..self.num_components() as ComponentId).flat_map(move |c| self.successors(c).iter().map(move |&t| (c, t)))
    }

    /// Components ordered so every DAG edge points forward.
    pub fn topological_order(&self) -> Vec<ComponentId> {
        (0..self.num_components() as ComponentId).rev().collect()
    }
}

/// One recurrent component of the box map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseNode {
    pub id: usize,
    pub component: ComponentId,
    /// `π⁻¹(q)`, ascending.
    pub region: Vec<BoxId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downset_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conley: Option<ConleyIndex>,
    /// Why the Conley index is missing, when it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conley_error: Option<String>,
}

/// Recurrent components with the reachability order: `(lower, upper)` is in
/// `order` iff there is a walk from `upper`'s region to `lower`'s region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseGraph {
    pub nodes: Vec<MorseNode>,
    pub order: Vec<(usize, usize)>,
}

/// Builds the Morse graph of a condensation. Nodes are numbered by their
/// smallest member box.
pub fn morse_graph(c: &Condensation) -> MorseGraph {
    let mut comps: Vec<ComponentId> = c.recurrent_components().collect();
    comps.sort_by_key(|&k| c.members(k)[0]);
    let nnodes = comps.len();
    let mut node_of = vec![usize::MAX; c.num_components()];
    for (i, &k) in comps.iter().enumerate() {
        node_of[k as usize] = i;
    }

    // reach[k] = recurrent nodes reachable from component k by a nonempty walk
    let words = nnodes.div_ceil(64).max(1);
    let mut reach = vec![0u64; c.num_components() * words];
    for k in 0..c.num_components() {
        for &s in c.successors(k as ComponentId) {
            let s = s as usize;
            debug_assert!(s < k, "condensation edges point to earlier components");
            let (head, tail) = reach.split_at_mut(k * words);
            let dst = &mut tail[..words];
            let src = &head[s * words..(s + 1) * words];
            for w in 0..words {
                dst[w] |= src[w];
            }
            if node_of[s] != usize::MAX {
                let q = node_of[s];
                dst[q / 64] |= 1 << (q % 64);
            }
        }
    }

    let mut order = Vec::new();
    for (upper, &k) in comps.iter().enumerate() {
        let bits = &reach[k as usize * words..(k as usize + 1) * words];
        for lower in 0..nnodes {
            if bits[lower / 64] >> (lower % 64) & 1 == 1 {
                order.push((lower, upper));
            }
        }
    }
    order.sort_unstable();

    let nodes = comps
        .iter()
        .enumerate()
        .map(|(id, &k)| MorseNode {
            id,
            component: k,
            region: c.members(k).to_vec(),
            downset_size: None,
            conley: None,
            conley_error: None,
        })
        .collect();
    MorseGraph { nodes, order }
}

impl MorseGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `lower < upper` in the Morse order.
    pub fn less(&self, lower: usize, upper: usize) -> bool {
        self.order.binary_search(&(lower, upper)).is_ok()
    }

    pub fn leq(&self, lower: usize, upper: usize) -> bool {
        lower == upper || self.less(lower, upper)
    }

    pub fn minimal_nodes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&q| !self.order.iter().any(|&(l, u)| u == q && l != q))
            .collect()
    }

    pub fn maximal_nodes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&q| !self.order.iter().any(|&(l, _)| l == q))
            .collect()
    }

    /// Transitive reduction of the order, as `(lower, upper)` pairs.
    pub fn hasse_edges(&self) -> Vec<(usize, usize)> {
        self.order
            .iter()
            .copied()
            .filter(|&(l, u)| !(0..self.len()).any(|m| m != l && m != u && self.less(l, m) && self.less(m, u)))
            .collect()
    }

    pub fn node_containing(&self, b: BoxId) -> Option<usize> {
        self.nodes.iter().position(|n| n.region.binary_search(&b).is_ok())
    }

    /// Display label `k : (s0, s1, ...)`, or `k` when no index is known.
    pub fn label(&self, q: usize) -> String {
        match &self.nodes[q].conley {
            Some(ci) => format!("{q} : {}", ci.label()),
            None => q.to_string(),
        }
    }

    /// Hasse diagram in DOT, maximal nodes on top.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph morse_graph {\n    rankdir=TB;\n    node [shape=ellipse];\n");
        for q in 0..self.len() {
            let _ = writeln!(s, "    {q} [label=\"{}\"];", self.label(q));
        }
        for (l, u) in self.hasse_edges() {
            let _ = writeln!(s, "    {u} -> {l};");
        }
        s.push_str("}\n");
        s
    }
}

/// Every box reachable from `start` (including `start`).
pub fn forward_closure(map: &BoxMap, start: &BoxSet) -> (BoxSet, usize) {
    let n = map.num_boxes();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<BoxId> = VecDeque::new();
    for b in start.iter() {
        if !seen[b as usize] {
            seen[b as usize] = true;
            queue.push_back(b);
        }
    }
    while let Some(b) = queue.pop_front() {
        for &t in map.targets(b) {
            if !seen[t as usize] {
                seen[t as usize] = true;
                queue.push_back(t);
            }
        }
    }
    let mut exterior = 0;
    for (b, s) in seen.iter_mut().enumerate() {
        if *s && map.is_exterior(b as BoxId) {
            *s = false;
            exterior += 1;
        }
    }
    (BoxSet::from_mask(&seen), exterior)
}

/// `N(q)`: boxes reachable from the region of recurrent component `q`.
/// Exterior-flagged boxes are left out.
pub fn downset(map: &BoxMap, c: &Condensation, q: ComponentId) -> Result<BoxSet, GraphError> {
    if q as usize >= c.num_components() || !c.is_recurrent(q) {
        return Err(GraphError::NodeNotRecurrent(q));
    }
    Ok(forward_closure(map, &BoxSet::from_ids(c.members(q).iter().copied())).0)
}

/// Combinatorial index pair `P1 = N(q)`, `P0 = N(q) \ π⁻¹(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPairC {
    pub p1: BoxSet,
    pub p0: BoxSet,
}

pub fn index_pair(map: &BoxMap, c: &Condensation, q: ComponentId) -> Result<IndexPairC, GraphError> {
    let p1 = downset(map, c, q)?;
    let region = BoxSet::from_ids(c.members(q).iter().copied());
    let p0 = p1.difference(&region);
    Ok(IndexPairC { p1, p0 })
}

/// True iff `n` is forward invariant, so `|n|` is an attracting block of every selector.
pub fn verify_attracting_block(map: &BoxMap, n: &BoxSet) -> bool {
    map.is_forward_invariant(n)
}

/// Shortest walk (as a box sequence) from some box of `from` to some box of
/// `to` with at least one step.
pub fn find_walk(map: &BoxMap, from: &BoxSet, to: &BoxSet) -> Option<Vec<BoxId>> {
    let n = map.num_boxes();
    let mut parent = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    let mut starts = vec![false; n];
    for b in from.iter() {
        starts[b as usize] = true;
    }
    for b in from.iter() {
        for &t in map.targets(b) {
            if parent[t as usize] == u32::MAX {
                parent[t as usize] = b;
                queue.push_back(t);
            }
        }
    }
    while let Some(b) = queue.pop_front() {
        if to.contains(b) {
            let mut path = vec![b];
            let mut cur = b;
            loop {
                let p = parent[cur as usize];
                path.push(p);
                if starts[p as usize] {
                    break;
                }
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for &t in map.targets(b) {
            if parent[t as usize] == u32::MAX {
                parent[t as usize] = b;
                queue.push_back(t);
            }
        }
    }
    None
}
