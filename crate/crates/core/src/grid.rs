//! Uniform dyadic cubical grids on an axis-aligned rectangle.
//!
//! Boxes are addressed by a multi-index `(i_0, .., i_{d-1})` with
//! `i_k < 2^depth_k`, and linearized row-major with axis 0 most significant,
//! so ascending [`BoxId`] order is lexicographic multi-index order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Linearized box index.
pub type BoxId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("point {point:?} lies outside the phase space")]
    PointOutsideDomain { point: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid phase space: {0}")]
    InvalidSpace(String),
    #[error("grid too large: {0} boxes exceeds the 32-bit box index range")]
    TooLarge(u128),
}

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Rect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Rect { lower, upper }
    }

    /// Degenerate rectangle holding a single point.
    pub fn point(p: &[f64]) -> Self {
        Rect {
            lower: p.to_vec(),
            upper: p.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Euclidean length of the diagonal.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| *l <= *x && *x <= *u)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        (0..self.dim()).all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    /// Grows every side by `r` (sup-norm inflation).
    pub fn inflate(&self, r: f64) -> Rect {
        Rect {
            lower: self.lower.iter().map(|l| l - r).collect(),
            upper: self.upper.iter().map(|u| u + r).collect(),
        }
    }

    /// Smallest rectangle containing all given points.
    pub fn hull<'a, I>(points: I) -> Option<Rect>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut r = Rect::point(first);
        for p in it {
            for (i, x) in p.iter().enumerate() {
                r.lower[i] = r.lower[i].min(*x);
                r.upper[i] = r.upper[i].max(*x);
            }
        }
        Some(r)
    }

    /// All `2^d` corners, bit `i` of the corner number selecting the upper bound on axis `i`.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|bits| {
                (0..d)
                    .map(|i| {
                        if bits >> i & 1 == 1 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// The rectangle `X` being discretized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PhaseSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GridError> {
        if lower.is_empty() {
            return Err(GridError::InvalidSpace("dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(GridError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(GridError::InvalidSpace(format!(
                    "axis {i}: need finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(PhaseSpace { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn as_rect(&self) -> Rect {
        Rect::new(self.lower.clone(), self.upper.clone())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *l <= *x && *x <= *u)
    }

    pub fn check_point(&self, p: &[f64]) -> Result<(), GridError> {
        if p.len() != self.dim() {
            return Err(GridError::DimensionMismatch {
                expected: self.dim(),
                got: p.len(),
            });
        }
        if !self.contains(p) {
            return Err(GridError::PointOutsideDomain { point: p.to_vec() });
        }
        Ok(())
    }
}

/// Uniform subdivision of a [`PhaseSpace`] into `prod 2^depth_i` boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct CubicalGrid {
    space: PhaseSpace,
    depths: Vec<u32>,
    counts: Vec<u32>,
    strides: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    space: PhaseSpace,
    depths: Vec<u32>,
}

impl TryFrom<GridRepr> for CubicalGrid {
    type Error = GridError;

    fn try_from(r: GridRepr) -> Result<Self, GridError> {
        CubicalGrid::new(r.space, r.depths)
    }
}

impl From<CubicalGrid> for GridRepr {
    fn from(g: CubicalGrid) -> Self {
        GridRepr {
            space: g.space,
            depths: g.depths,
        }
    }
}

impl CubicalGrid {
    pub fn new(space: PhaseSpace, depths: Vec<u32>) -> Result<Self, GridError> {
        if depths.len() != space.dim() {
            return Err(GridError::DimensionMismatch {
                expected: space.dim(),
                got: depths.len(),
            });
        }
        let total: u32 = depths.iter().sum();
        if total > 32 || depths.iter().any(|&k| k > 31) {
            return Err(GridError::TooLarge(1u128 << total.min(127)));
        }
        if total == 32 {
            return Err(GridError::TooLarge(1u128 << 32));
        }
        let counts: Vec<u32> = depths.iter().map(|&k| 1u32 << k).collect();
        let mut strides = vec![1u32; counts.len()];
        for i in (0..counts.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        Ok(CubicalGrid {
            space,
            depths,
            counts,
            strides,
        })
    }

    pub fn space(&self) -> &PhaseSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.depths.len()
    }

    pub fn depths(&self) -> &[u32] {
        &self.depths
    }

    /// Boxes per axis.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn num_boxes(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).product()
    }

    pub fn side(&self, axis: usize) -> f64 {
        (self.space.upper[axis] - self.space.lower[axis]) / f64::from(self.counts[axis])
    }

    /// Coordinate of the `k`-th grid plane on `axis`, `0 <= k <= counts[axis]`.
    pub fn plane(&self, axis: usize, k: u32) -> f64 {
        if k == self.counts[axis] {
            return self.space.upper[axis];
        }
        let t = f64::from(k) / f64::from(self.counts[axis]);
        self.space.lower[axis] + t * (self.space.upper[axis] - self.space.lower[axis])
    }

    pub fn linear(&self, index: &[u32]) -> BoxId {
        index.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, id: BoxId) -> Vec<u32> {
        let mut out = vec![0; self.dim()];
        self.write_multi_index(id, &mut out);
        out
    }

    pub fn write_multi_index(&self, id: BoxId, out: &mut [u32]) {
        let mut rem = id;
        for (i, s) in self.strides.iter().enumerate() {
            out[i] = rem / s;
            rem %= s;
        }
    }

    /// Closed realization `|b|`.
    pub fn realization(&self, id: BoxId) -> Rect {
        let idx = self.multi_index(id);
        let lower = (0..self.dim()).map(|i| self.plane(i, idx[i])).collect();
        let upper = (0..self.dim()).map(|i| self.plane(i, idx[i] + 1)).collect();
        Rect { lower, upper }
    }

    /// Euclidean diameter of one box.
    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i).powi(2)).sum::<f64>().sqrt()
    }

    /// The box containing `point`; points on shared faces go to the
    /// lexicographically smallest box.
    pub fn box_containing(&self, point: &[f64]) -> Result<BoxId, GridError> {
        self.space.check_point(point)?;
        let mut idx = vec![0u32; self.dim()];
        for (i, x) in point.iter().enumerate() {
            idx[i] = self.axis_containing(i, *x);
        }
        Ok(self.linear(&idx))
    }

    // Smallest k with plane(k+1) >= x, for x inside the axis range.
    fn axis_containing(&self, axis: usize, x: f64) -> u32 {
        let n = self.counts[axis];
        let t = (x - self.space.lower[axis]) / self.side(axis);
        let mut k = (t.ceil() as i64 - 1).clamp(0, i64::from(n) - 1) as u32;
        while k > 0 && self.plane(axis, k) >= x {
            k -= 1;
        }
        while k + 1 < n && self.plane(axis, k + 1) < x {
            k += 1;
        }
        k
    }

    /// Per-axis inclusive index range of boxes whose closed realization meets
    /// `r`; `None` if `r` misses `X`.
    pub fn index_ranges(&self, r: &Rect) -> Option<Vec<(u32, u32)>> {
        let mut ranges = Vec::with_capacity(self.dim());
        for axis in 0..self.dim() {
            let (a, b) = (r.lower[axis], r.upper[axis]);
            if !(a <= b) || b < self.space.lower[axis] || a > self.space.upper[axis] {
                return None;
            }
            let n = self.counts[axis];
            let side = self.side(axis);
            let lo_guess = ((a - self.space.lower[axis]) / side).floor() - 1.0;
            let hi_guess = ((b - self.space.lower[axis]) / side).floor();
            let mut lo = lo_guess.clamp(0.0, f64::from(n - 1)) as u32;
            let mut hi = hi_guess.clamp(0.0, f64::from(n - 1)) as u32;
            // box k meets [a, b] iff plane(k+1) >= a and plane(k) <= b
            while lo > 0 && self.plane(axis, lo) >= a {
                lo -= 1;
            }
            while lo < n - 1 && self.plane(axis, lo + 1) < a {
                lo += 1;
            }
            while hi < n - 1 && self.plane(axis, hi + 1) <= b {
                hi += 1;
            }
            while hi > 0 && self.plane(axis, hi) > b {
                hi -= 1;
            }
            if lo > hi {
                return None;
            }
            ranges.push((lo, hi));
        }
        Some(ranges)
    }

    /// Boxes whose closed realization intersects `r` (clipped to `X`), sorted.
    pub fn boxes_intersecting(&self, r: &Rect) -> Vec<BoxId> {
        let mut out = Vec::new();
        if let Some(ranges) = self.index_ranges(r) {
            self.push_block(&ranges, &mut out);
        }
        out
    }

    /// Appends every box of a product of index ranges in ascending order.
    pub fn push_block(&self, ranges: &[(u32, u32)], out: &mut Vec<BoxId>) {
        let d = self.dim();
        let mut idx: Vec<u32> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.push(self.linear(&idx));
            let mut axis = d;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if idx[axis] < ranges[axis].1 {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = ranges[axis].0;
            }
        }
    }

    /// Box of `self` containing fine box `id` of `fine`; requires `fine` to
    /// refine `self` axis by axis over the same phase space.
    pub fn parent_of(&self, fine: &CubicalGrid, id: BoxId) -> BoxId {
        let idx = fine.multi_index(id);
        let coarse: Vec<u32> = idx
            .iter()
            .enumerate()
            .map(|(i, k)| k >> (fine.depths[i] - self.depths[i]))
            .collect();
        self.linear(&coarse)
    }

    /// True if `fine` subdivides every box of `self`.
    pub fn is_refined_by(&self, fine: &CubicalGrid) -> bool {
        self.space == fine.space
            && self.depths.len() == fine.depths.len()
            && self.depths.iter().zip(&fine.depths).all(|(c, f)| c <= f)
    }
}
