//! The combinatorial multivalued map `F_rho` on top-dimensional boxes.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::boxset::BoxSet;
use crate::grid::{BoxId, CubicalGrid};
use crate::oracles::MapOracle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("box maps live on different grids")]
    GridMismatch,
    #[error("oracle dimension {oracle} does not match grid dimension {grid}")]
    DimensionMismatch { oracle: usize, grid: usize },
    #[error("padding radius must be finite and nonnegative, got {0}")]
    InvalidRho(f64),
}

/// Directed graph on the boxes of a grid in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMap {
    grid: CubicalGrid,
    rho: f64,
    offsets: Vec<usize>,
    targets: Vec<BoxId>,
    exterior: Vec<bool>,
}

const CHUNK: usize = 4096;

/// Builds `F_rho`: each box maps to every box meeting its image enclosure
/// inflated by `rho` in the sup norm. Boxes whose inflated enclosure misses
/// `X` entirely get no targets and are flagged exterior.
pub fn build_boxmap(grid: &CubicalGrid, oracle: &dyn MapOracle, rho: f64) -> Result<BoxMap, ApproxError> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(ApproxError::InvalidRho(rho));
    }
    if oracle.dim() != grid.dim() {
        return Err(ApproxError::DimensionMismatch {
            oracle: oracle.dim(),
            grid: grid.dim(),
        });
    }
    let n = grid.num_boxes();
    let chunks: Vec<(Vec<u32>, Vec<BoxId>, Vec<bool>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut lens = Vec::with_capacity(end - start);
            let mut targets = Vec::new();
            let mut exterior = Vec::with_capacity(end - start);
            for b in start..end {
                let image = oracle.image_rect(&grid.realization(b as BoxId)).inflate(rho);
                let before = targets.len();
                match grid.index_ranges(&image) {
                    Some(ranges) => {
                        grid.push_block(&ranges, &mut targets);
                        exterior.push(false);
                    }
                    None => exterior.push(true),
                }
                lens.push((targets.len() - before) as u32);
            }
            (lens, targets, exterior)
        })
        .collect();

    let total: usize = chunks.iter().map(|c| c.1.len()).sum();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut targets = Vec::with_capacity(total);
    let mut exterior = Vec::with_capacity(n);
    offsets.push(0);
    for (lens, t, e) in chunks {
        for l in lens {
            let last = *offsets.last().expect("nonempty");
            offsets.push(last + l as usize);
        }
        targets.extend_from_slice(&t);
        exterior.extend_from_slice(&e);
    }
    Ok(BoxMap {
        grid: grid.clone(),
        rho,
        offsets,
        targets,
        exterior,
    })
}

impl BoxMap {
    /// Assembles a map from explicit target lists (sorted and deduplicated here).
    pub fn from_targets(grid: CubicalGrid, rho: f64, lists: Vec<Vec<BoxId>>) -> Self {
        assert_eq!(lists.len(), grid.num_boxes(), "one target list per box");
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            targets.extend_from_slice(&l);
            offsets.push(targets.len());
        }
        let exterior = vec![false; grid.num_boxes()];
        BoxMap {
            grid,
            rho,
            offsets,
            targets,
            exterior,
        }
    }

    pub(crate) fn from_parts(
        grid: CubicalGrid,
        rho: f64,
        offsets: Vec<usize>,
        targets: Vec<BoxId>,
        exterior: Vec<bool>,
    ) -> Self {
        BoxMap {
            grid,
            rho,
            offsets,
            targets,
            exterior,
        }
    }

    pub fn grid(&self) -> &CubicalGrid {
        &self.grid
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn num_boxes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self, b: BoxId) -> &[BoxId] {
        &self.targets[self.offsets[b as usize]..self.offsets[b as usize + 1]]
    }

    pub fn is_exterior(&self, b: BoxId) -> bool {
        self.exterior[b as usize]
    }

    pub fn exterior_count(&self) -> usize {
        self.exterior.iter().filter(|&&e| e).count()
    }

    pub fn has_self_loop(&self, b: BoxId) -> bool {
        self.targets(b).binary_search(&b).is_ok()
    }

    pub(crate) fn raw_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub(crate) fn raw_targets(&self) -> &[BoxId] {
        &self.targets
    }

    pub(crate) fn raw_exterior(&self) -> &[bool] {
        &self.exterior
    }

    /// True iff every target list of `other` is contained in the matching list of `self`.
    pub fn encloses(&self, other: &BoxMap) -> Result<bool, ApproxError> {
        if self.grid != other.grid {
            return Err(ApproxError::GridMismatch);
        }
        Ok((0..self.num_boxes() as BoxId).all(|b| is_sorted_subset(other.targets(b), self.targets(b))))
    }

    /// Subgraph induced on `boxes`: boxes outside the set keep no targets,
    /// and targets outside the set are dropped.
    pub fn restrict_to(&self, boxes: &BoxSet) -> BoxMap {
        let n = self.num_boxes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for b in 0..n as BoxId {
            if boxes.contains(b) {
                targets.extend(self.targets(b).iter().copied().filter(|&t| boxes.contains(t)));
            }
            offsets.push(targets.len());
        }
        let exterior = (0..n).map(|b| self.exterior[b] && boxes.contains(b as BoxId)).collect();
        BoxMap {
            grid: self.grid.clone(),
            rho: self.rho,
            offsets,
            targets,
            exterior,
        }
    }

    /// `F(N) ⊆ N`.
    pub fn is_forward_invariant(&self, set: &BoxSet) -> bool {
        set.iter()
            .all(|b| !self.is_exterior(b) && self.targets(b).iter().all(|&t| set.contains(t)))
    }

    /// One `source target` line per edge, linearized indices.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for b in 0..self.num_boxes() as BoxId {
            for t in self.targets(b) {
                writeln!(out, "{b} {t}")?;
            }
        }
        Ok(())
    }
}

fn is_sorted_subset(small: &[BoxId], big: &[BoxId]) -> bool {
    let mut j = 0;
    for &x in small {
        while j < big.len() && big[j] < x {
            j += 1;
        }
        if j == big.len() || big[j] != x {
            return false;
        }
    }
    true
}
