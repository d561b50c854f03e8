//! End-to-end pipeline: box map, condensation, Morse graph, Conley indices.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conley::conley_index;
use crate::field::Fp;
use crate::graph_dynamics::{condensation, downset, morse_graph, Condensation, MorseGraph};
use crate::grid::CubicalGrid;
use crate::oracles::MapOracle;
use crate::outer_approx::{build_boxmap, ApproxError, BoxMap};

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub box_map: f64,
    pub condensation: f64,
    pub conley: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub map: BoxMap,
    pub condensation: Condensation,
    pub morse: MorseGraph,
    pub timings: Timings,
}

impl Analysis {
    pub fn grid(&self) -> &CubicalGrid {
        self.map.grid()
    }
}

/// Runs the pipeline. With `prime` set, every node gets a Conley index (or
/// the reason it could not be computed); nodes are processed in parallel.
pub fn analyze(
    grid: &CubicalGrid,
    oracle: &dyn MapOracle,
    rho: f64,
    prime: Option<Fp>,
) -> Result<Analysis, ApproxError> {
    let t = Instant::now();
    let map = build_boxmap(grid, oracle, rho)?;
    let box_map = t.elapsed().as_secs_f64();
    Ok(analyze_map(map, prime, box_map))
}

pub fn analyze_map(map: BoxMap, prime: Option<Fp>, box_map_secs: f64) -> Analysis {
    let t = Instant::now();
    let cond = condensation(&map);
    let mut morse = morse_graph(&cond);
    let condensation_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    morse.nodes.par_iter_mut().for_each(|node| {
        node.downset_size = downset(&map, &cond, node.component).ok().map(|d| d.len());
        if let Some(fp) = prime {
            match conley_index(&map, &cond, node.component, fp) {
                Ok(ci) => node.conley = Some(ci),
                Err(e) => node.conley_error = Some(e.to_string()),
            }
        }
    });
    let conley_secs = t.elapsed().as_secs_f64();

    Analysis {
        map,
        condensation: cond,
        morse,
        timings: Timings {
            box_map: box_map_secs,
            condensation: condensation_secs,
            conley: conley_secs,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhaseSpace;
    use crate::oracles::PiecewiseExample1D;

    #[test]
    fn piecewise_nontrivial_nodes() {
        let g = CubicalGrid::new(PhaseSpace::new(vec![-2.0], vec![2.0]).unwrap(), vec![10]).unwrap();
        let f = PiecewiseExample1D::new(1.5).unwrap();
        let a = analyze(&g, &f, 1e-3, Some(Fp::new(5).unwrap())).unwrap();
        let nontrivial: Vec<usize> = (0..a.morse.len())
            .filter(|&q| !a.morse.nodes[q].conley.as_ref().unwrap().is_trivial())
            .collect();
        let labels: Vec<String> = nontrivial
            .iter()
            .map(|&q| a.morse.nodes[q].conley.as_ref().unwrap().label())
            .collect();
        assert_eq!(labels, ["(x - 1, 0)", "(0, x - 1)", "(x - 1, 0)"]);
        let at = |x: f64| {
            let boxes = a.grid().boxes_intersecting(&crate::grid::Rect::point(&[x]));
            boxes.iter().find_map(|&b| a.morse.node_containing(b)).unwrap()
        };
        let (zero, one_half) = (at(0.0), at(1.5));
        let top = nontrivial[1];
        assert!(a.morse.less(zero, top) && a.morse.less(one_half, top));
        assert!(a.morse.nodes.iter().all(|n| n.conley_error.is_none()));
    }
}
