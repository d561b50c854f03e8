//! Projection of a fine Morse graph onto a coarse one and the check that the
//! projection `ν` is a poset epimorphism.
//!
//! The coarse analysis stands in for the unknown Morse representation of the
//! true map: conclusions concern two computed graphs, not the map itself.
//!
//! Coarse Morse tiles are taken in the lattice generated by the downsets
//! `N(m)`: the tile of `m` is `N(m)` minus every `N(m'')` with `m'' ≱ m`,
//! i.e. the boxes whose set of reaching nodes has `m` as its least element.
//! Tiles are pairwise disjoint. A fine node is sent to the tile containing
//! every parent box of its region.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Analysis;
use crate::graph_dynamics::{Condensation, MorseGraph};
use crate::grid::BoxId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompareError {
    #[error("the fine grid does not refine the coarse grid over the same phase space")]
    NotARefinement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// The fine region meets several coarse tiles.
    RegionStraddlesTiles { node: usize, tiles: Vec<usize> },
    /// Some boxes of the fine region lie in no coarse tile.
    RegionOutsideTiles { node: usize, boxes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuMap {
    /// `ν(q)` per fine node, `None` where undefined.
    pub assignment: Vec<Option<usize>>,
    pub well_defined: bool,
    pub surjective: bool,
    pub order_preserving: bool,
    pub diagnostics: Vec<Diagnostic>,
}

/// Tile index of every coarse box (`None` outside all downsets).
pub fn tile_of_boxes(cond: &Condensation, morse: &MorseGraph) -> Vec<Option<usize>> {
    let nodes = morse.len();
    let words = nodes.div_ceil(64).max(1);
    let ncomp = cond.num_components();
    let mut node_of = vec![usize::MAX; ncomp];
    for n in &morse.nodes {
        node_of[n.component as usize] = n.id;
    }
    // reached[k] = nodes whose region reaches component k; edges go to lower ids
    let mut reached = vec![0u64; ncomp * words];
    for k in (0..ncomp).rev() {
        if node_of[k] != usize::MAX {
            let q = node_of[k];
            reached[k * words + q / 64] |= 1 << (q % 64);
        }
        for &s in cond.successors(k as u32) {
            let s = s as usize;
            let (head, tail) = reached.split_at_mut(k * words);
            let src = &tail[..words];
            let dst = &mut head[s * words..(s + 1) * words];
            for w in 0..words {
                dst[w] |= src[w];
            }
        }
    }
    let tile_of_comp: Vec<Option<usize>> = (0..ncomp)
        .map(|k| {
            let bits = &reached[k * words..(k + 1) * words];
            let members: Vec<usize> = (0..nodes).filter(|&q| bits[q / 64] >> (q % 64) & 1 == 1).collect();
            members
                .iter()
                .copied()
                .find(|&m| members.iter().all(|&o| morse.leq(m, o)))
        })
        .collect();
    let nboxes: usize = (0..ncomp).map(|k| cond.members(k as u32).len()).sum();
    (0..nboxes as BoxId)
        .map(|b| tile_of_comp[cond.component_of(b) as usize])
        .collect()
}

pub fn project(fine: &Analysis, coarse: &Analysis) -> Result<NuMap, CompareError> {
    let (fg, cg) = (fine.grid(), coarse.grid());
    if fg.space() != cg.space() || !cg.is_refined_by(fg) {
        return Err(CompareError::NotARefinement);
    }
    let tiles = tile_of_boxes(&coarse.condensation, &coarse.morse);
    let mut assignment = Vec::with_capacity(fine.morse.len());
    let mut diagnostics = Vec::new();
    for node in &fine.morse.nodes {
        let mut hit: Vec<usize> = Vec::new();
        let mut outside = 0;
        for &b in &node.region {
            match tiles[cg.parent_of(fg, b) as usize] {
                Some(t) => hit.push(t),
                None => outside += 1,
            }
        }
        hit.sort_unstable();
        hit.dedup();
        if outside > 0 {
            diagnostics.push(Diagnostic::RegionOutsideTiles {
                node: node.id,
                boxes: outside,
            });
        }
        if hit.len() > 1 {
            diagnostics.push(Diagnostic::RegionStraddlesTiles {
                node: node.id,
                tiles: hit.clone(),
            });
        }
        assignment.push((outside == 0 && hit.len() == 1).then(|| hit[0]));
    }
    let report = check_epimorphism(&assignment, &fine.morse, &coarse.morse);
    Ok(NuMap {
        assignment,
        well_defined: report.total,
        surjective: report.surjective,
        order_preserving: report.order_preserving,
        diagnostics,
    })
}

/// Outcome of the epimorphism check with counterexamples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpimorphismReport {
    pub total: bool,
    pub surjective: bool,
    pub order_preserving: bool,
    pub passed: bool,
    pub unassigned: Vec<usize>,
    pub missed: Vec<usize>,
    /// Fine pairs `q0 < q1` with `ν(q0) ≰ ν(q1)`, as `[q0, q1, ν(q0), ν(q1)]`.
    pub violations: Vec<[usize; 4]>,
}

/// Checks totality, surjectivity and `q0 ≤ q1 ⇒ ν(q0) ≤ ν(q1)`.
pub fn check_epimorphism(assignment: &[Option<usize>], fine: &MorseGraph, coarse: &MorseGraph) -> EpimorphismReport {
    let unassigned: Vec<usize> = (0..fine.len())
        .filter(|&q| assignment.get(q).copied().flatten().is_none())
        .collect();
    let mut hit = vec![false; coarse.len()];
    for &m in assignment.iter().flatten() {
        if m < hit.len() {
            hit[m] = true;
        }
    }
    let missed: Vec<usize> = (0..coarse.len()).filter(|&m| !hit[m]).collect();
    let violations: Vec<[usize; 4]> = fine
        .order
        .iter()
        .filter_map(|&(q0, q1)| {
            match (
                assignment.get(q0).copied().flatten(),
                assignment.get(q1).copied().flatten(),
            ) {
                (Some(a), Some(b)) if !coarse.leq(a, b) => Some([q0, q1, a, b]),
                _ => None,
            }
        })
        .collect();
    let total = unassigned.is_empty() && assignment.len() == fine.len();
    let surjective = missed.is_empty();
    let order_preserving = violations.is_empty();
    EpimorphismReport {
        total,
        surjective,
        order_preserving,
        passed: total && surjective && order_preserving,
        unassigned,
        missed,
        violations,
    }
}

/// JSON document combining `ν` and its check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuReport {
    pub note: String,
    pub fine_nodes: usize,
    pub coarse_nodes: usize,
    pub nu: NuMap,
    pub check: EpimorphismReport,
}

pub const SURROGATE_NOTE: &str = "The coarse Morse graph stands in for the Morse representation of the \
     unknown map; nu relates two computed graphs and says nothing beyond them.";

pub fn nu_report(fine: &Analysis, coarse: &Analysis) -> Result<NuReport, CompareError> {
    let nu = project(fine, coarse)?;
    let check = check_epimorphism(&nu.assignment, &fine.morse, &coarse.morse);
    Ok(NuReport {
        note: SURROGATE_NOTE.into(),
        fine_nodes: fine.morse.len(),
        coarse_nodes: coarse.morse.len(),
        nu,
        check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{analyze, analyze_map};
    use crate::grid::{CubicalGrid, PhaseSpace};
    use crate::oracles::PiecewiseExample1D;
    use crate::outer_approx::BoxMap;

    fn piecewise(depth: u32) -> Analysis {
        let g = CubicalGrid::new(PhaseSpace::new(vec![-2.0], vec![2.0]).unwrap(), vec![depth]).unwrap();
        analyze(&g, &PiecewiseExample1D::new(1.5).unwrap(), 1e-3, None).unwrap()
    }

    #[test]
    fn identity_projection() {
        let a = piecewise(8);
        let nu = project(&a, &a).unwrap();
        assert_eq!(nu.assignment, (0..a.morse.len()).map(Some).collect::<Vec<_>>());
        assert!(nu.well_defined && nu.surjective && nu.order_preserving);
        assert!(nu.diagnostics.is_empty());
    }

    #[test]
    fn tiles_are_least_reaching_nodes() {
        // 0 <-> 1 -> 2 (self loop), 1 -> 3 -> 4 (self loop), 5 isolated
        let g = CubicalGrid::new(PhaseSpace::new(vec![0.0], vec![1.0]).unwrap(), vec![3]).unwrap();
        let lists = vec![
            vec![1],
            vec![0, 2, 3],
            vec![2],
            vec![4],
            vec![4],
            vec![5],
            vec![2],
            vec![7],
        ];
        let a = analyze_map(BoxMap::from_targets(g, 0.0, lists), None, 0.0);
        // nodes by smallest box: {0,1}, {2}, {4}, {5}, {7}; box 6 is reached by no node
        assert_eq!(a.morse.len(), 5);
        let tiles = tile_of_boxes(&a.condensation, &a.morse);
        assert_eq!(
            tiles,
            vec![Some(0), Some(0), Some(1), Some(0), Some(2), Some(3), None, Some(4)]
        );
    }

    #[test]
    fn epimorphism_counterexamples() {
        let a = piecewise(8);
        let n = a.morse.len();
        let id: Vec<Option<usize>> = (0..n).map(Some).collect();
        assert!(check_epimorphism(&id, &a.morse, &a.morse).passed);
        let (&(lo, hi), _) = a.morse.order.split_first().unwrap();
        let mut swapped = id.clone();
        swapped.swap(lo, hi);
        let r = check_epimorphism(&swapped, &a.morse, &a.morse);
        assert!(!r.order_preserving);
        assert!(r.violations.contains(&[lo, hi, hi, lo]));
        let collapsed = vec![Some(0); n];
        let r = check_epimorphism(&collapsed, &a.morse, &a.morse);
        assert!(r.order_preserving && r.total && !r.surjective);
    }

    #[test]
    fn rejects_non_refinements() {
        let a = piecewise(6);
        let b = piecewise(8);
        assert_eq!(project(&a, &b), Err(CompareError::NotARefinement));
    }
}
