//! Cubical (relative) homology over `F_p` and chain maps induced by a
//! [`BoxMap`] through acyclic carriers.
//!
//! Cells are elementary cubes `(anchor, mask)`: `anchor` is a vertex of the
//! grid and bit `i` of `mask` says whether the cell spans one box width along
//! axis `i`. A relative pair `(P1, P0)` is stored in excised form: the
//! complex `K` holds every face of a box in `P1 \ P0`, and the relative
//! chain complex consists of the cells of `K` that are not faces of `P0`.
//! These are exactly the cells of `cl(P1)` outside `cl(P0)`, so the relative
//! homology is unchanged while only the neighbourhood of `P1 \ P0` is built.

use std::collections::{HashMap, HashSet};
use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::boxset::BoxSet;
use crate::field::{axpy, normalize, FieldMatrix, Fp, SparseVec};
use crate::grid::{BoxId, CubicalGrid};
use crate::outer_approx::BoxMap;

/// `(linear vertex index << d) | mask`.
pub type CellKey = u64;

/// Chain with cells addressed by key.
pub type Chain = SparseVec<CellKey>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HomologyError {
    #[error("P0 is not a subset of P1")]
    NotNested,
    #[error("{0} is not forward invariant under the box map")]
    NotForwardInvariant(&'static str),
    #[error(
        "carrier of the {dim}-cell at vertex {anchor:?} (mask {mask:#b}) is not acyclic \
         (Betti numbers {betti:?}); refine the grid or change rho"
    )]
    CarrierNotAcyclic {
        anchor: Vec<u32>,
        mask: u32,
        dim: usize,
        betti: Vec<usize>,
    },
    #[error("chain is not a cycle")]
    NotACycle,
    #[error("chain map construction failed: {0}")]
    ChainMap(String),
}

/// Encodes and decodes elementary cubes of one grid.
#[derive(Debug, Clone)]
pub struct CellCoder {
    grid: CubicalGrid,
    vstrides: Vec<u64>,
}

impl CellCoder {
    pub fn new(grid: &CubicalGrid) -> Self {
        let d = grid.dim();
        let mut vstrides = vec![1u64; d];
        for i in (0..d.saturating_sub(1)).rev() {
            vstrides[i] = vstrides[i + 1] * (u64::from(grid.counts()[i + 1]) + 1);
        }
        CellCoder {
            grid: grid.clone(),
            vstrides,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn grid(&self) -> &CubicalGrid {
        &self.grid
    }

    pub fn encode(&self, anchor: &[u32], mask: u32) -> CellKey {
        let lin: u64 = anchor.iter().zip(&self.vstrides).map(|(&a, s)| u64::from(a) * s).sum();
        (lin << self.dim()) | u64::from(mask)
    }

    pub fn decode(&self, key: CellKey) -> (Vec<u32>, u32) {
        let d = self.dim();
        let mask = (key & ((1 << d) - 1)) as u32;
        let mut rem = key >> d;
        let mut anchor = vec![0u32; d];
        for (i, s) in self.vstrides.iter().enumerate() {
            anchor[i] = (rem / s) as u32;
            rem %= s;
        }
        (anchor, mask)
    }

    pub fn cell_dim(&self, key: CellKey) -> usize {
        ((key & ((1 << self.dim()) - 1)) as u32).count_ones() as usize
    }

    /// Faces of codimension one with orientation signs (`true` = +1).
    pub fn boundary(&self, key: CellKey) -> Vec<(CellKey, bool)> {
        let (anchor, mask) = self.decode(key);
        let mut out = Vec::with_capacity(2 * self.cell_dim(key));
        let mut j = 0;
        for i in 0..self.dim() {
            if mask >> i & 1 == 0 {
                continue;
            }
            let face_mask = mask & !(1 << i);
            let mut upper = anchor.clone();
            upper[i] += 1;
            let even = j % 2 == 0;
            out.push((self.encode(&upper, face_mask), even));
            out.push((self.encode(&anchor, face_mask), !even));
            j += 1;
        }
        out
    }

    /// All `3^d` faces of a box, the box itself included.
    pub fn box_faces(&self, b: BoxId) -> Vec<CellKey> {
        let idx = self.grid.multi_index(b);
        let d = self.dim();
        let full = (1u32 << d) - 1;
        let mut out = Vec::with_capacity(3usize.pow(d as u32));
        for mask in 0..=full {
            let free = full & !mask;
            // subsets of the axes not spanned choose the upper vertex
            let mut sub = free;
            loop {
                let anchor: Vec<u32> = (0..d).map(|i| idx[i] + (sub >> i & 1)).collect();
                out.push(self.encode(&anchor, mask));
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & free;
            }
        }
        out
    }

    /// Boxes having the cell as a face.
    pub fn coface_boxes(&self, key: CellKey) -> Vec<BoxId> {
        let (anchor, mask) = self.decode(key);
        let ranges: Option<Vec<(u32, u32)>> = (0..self.dim())
            .map(|i| {
                let n = self.grid.counts()[i];
                if mask >> i & 1 == 1 {
                    (anchor[i] < n).then_some((anchor[i], anchor[i]))
                } else {
                    let lo = anchor[i].saturating_sub(1);
                    let hi = anchor[i].min(n - 1);
                    (lo <= hi).then_some((lo, hi))
                }
            })
            .collect();
        let mut out = Vec::new();
        if let Some(r) = ranges {
            self.grid.push_block(&r, &mut out);
        }
        out
    }

    /// Boxes meeting the closed cell (sharing at least one vertex with it).
    pub fn touching_boxes(&self, key: CellKey) -> Vec<BoxId> {
        let (anchor, mask) = self.decode(key);
        let ranges: Vec<(u32, u32)> = (0..self.dim())
            .map(|i| {
                let n = self.grid.counts()[i];
                let lo = anchor[i].saturating_sub(1);
                let hi = (anchor[i] + (mask >> i & 1)).min(n - 1);
                (lo, hi)
            })
            .collect();
        let mut out = Vec::new();
        self.grid.push_block(&ranges, &mut out);
        out
    }

    pub fn vertices(&self, key: CellKey) -> Vec<CellKey> {
        let (anchor, mask) = self.decode(key);
        let mut out = Vec::new();
        let mut sub = mask;
        loop {
            let v: Vec<u32> = (0..self.dim()).map(|i| anchor[i] + (sub >> i & 1)).collect();
            out.push(self.encode(&v, 0));
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & mask;
        }
        out.sort_unstable();
        out
    }

    /// `∂` of a chain.
    pub fn boundary_chain(&self, fp: Fp, chain: &[(CellKey, u16)]) -> Chain {
        let mut terms = Vec::with_capacity(chain.len() * 2 * self.dim());
        for &(key, a) in chain {
            for (face, pos) in self.boundary(key) {
                terms.push((face, if pos { a } else { fp.neg(a) }));
            }
        }
        normalize(fp, terms)
    }

    /// Faces of every box in `boxes`, sorted and deduplicated.
    pub fn closure(&self, boxes: impl IntoIterator<Item = BoxId>) -> Vec<CellKey> {
        let mut set = HashSet::new();
        for b in boxes {
            set.extend(self.box_faces(b));
        }
        let mut v: Vec<CellKey> = set.into_iter().collect();
        v.sort_unstable();
        v
    }
}

/// Finite chain complex of cubical cells over `F_p`, cells indexed per dimension.
#[derive(Debug, Clone)]
pub struct CellComplex {
    fp: Fp,
    cells: Vec<Vec<CellKey>>,
    index: HashMap<CellKey, u32>,
    boundary: Vec<Vec<SparseVec<u32>>>,
}

impl CellComplex {
    /// Complex on the given cells; boundary faces outside the set are dropped,
    /// which realizes the quotient by the missing subcomplex.
    pub fn from_cells(coder: &CellCoder, fp: Fp, keys: impl IntoIterator<Item = CellKey>) -> Self {
        let d = coder.dim();
        let mut cells: Vec<Vec<CellKey>> = vec![Vec::new(); d + 1];
        for k in keys {
            cells[coder.cell_dim(k)].push(k);
        }
        for c in &mut cells {
            c.sort_unstable();
            c.dedup();
        }
        let mut index = HashMap::with_capacity(cells.iter().map(Vec::len).sum());
        for c in &cells {
            for (i, &k) in c.iter().enumerate() {
                index.insert(k, i as u32);
            }
        }
        let mut boundary = vec![Vec::new(); d + 1];
        boundary[0] = vec![Vec::new(); cells[0].len()];
        for k in 1..=d {
            boundary[k] = cells[k]
                .iter()
                .map(|&key| {
                    let terms = coder
                        .boundary(key)
                        .into_iter()
                        .filter_map(|(f, pos)| index.get(&f).map(|&i| (i, if pos { 1 } else { fp.neg(1) })))
                        .collect();
                    normalize(fp, terms)
                })
                .collect();
        }
        CellComplex {
            fp,
            cells,
            index,
            boundary,
        }
    }

    pub fn field(&self) -> Fp {
        self.fp
    }

    pub fn top_dim(&self) -> usize {
        self.cells.len() - 1
    }

    pub fn cells(&self, k: usize) -> &[CellKey] {
        &self.cells[k]
    }

    pub fn num_cells(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn index_of(&self, key: CellKey) -> Option<u32> {
        self.index.get(&key).copied()
    }

    /// Columns of `∂_k : C_k -> C_{k-1}`.
    pub fn boundary_matrix(&self, k: usize) -> &[SparseVec<u32>] {
        &self.boundary[k]
    }

    /// Re-expresses a keyed chain in local indices; `None` if a cell is missing.
    pub fn localize(&self, chain: &[(CellKey, u16)]) -> Option<SparseVec<u32>> {
        let v: Option<Vec<(u32, u16)>> = chain
            .iter()
            .map(|&(k, a)| self.index.get(&k).map(|&i| (i, a)))
            .collect();
        Some(normalize(self.fp, v?))
    }

    pub fn globalize(&self, k: usize, chain: &[(u32, u16)]) -> Chain {
        normalize(
            self.fp,
            chain.iter().map(|&(i, a)| (self.cells[k][i as usize], a)).collect(),
        )
    }

    /// Sparse triplets `k row col value` of every `∂_k`, local indices;
    /// each dimension is preceded by `# cells k <keys...>`.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (k, cells) in self.cells.iter().enumerate() {
            write!(out, "# cells {k}")?;
            for key in cells {
                write!(out, " {key}")?;
            }
            writeln!(out)?;
        }
        for (k, cols) in self.boundary.iter().enumerate().skip(1) {
            for (j, col) in cols.iter().enumerate() {
                for &(i, a) in col {
                    writeln!(out, "{k} {i} {j} {a}")?;
                }
            }
        }
        Ok(())
    }
}

/// Column reduction `R = D V` with `V` unit upper triangular.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub r: Vec<SparseVec<u32>>,
    pub v: Vec<SparseVec<u32>>,
    /// Column whose lowest nonzero sits in this row, or `u32::MAX`.
    pub pivot_col: Vec<u32>,
}

pub fn reduce(fp: Fp, columns: &[SparseVec<u32>], nrows: usize) -> Reduction {
    let mut r: Vec<SparseVec<u32>> = Vec::with_capacity(columns.len());
    let mut v: Vec<SparseVec<u32>> = Vec::with_capacity(columns.len());
    let mut pivot_col = vec![u32::MAX; nrows];
    for (j, col) in columns.iter().enumerate() {
        let mut rj = col.clone();
        let mut vj: SparseVec<u32> = vec![(j as u32, 1)];
        while let Some(&(low, a)) = rj.last() {
            let i = pivot_col[low as usize];
            if i == u32::MAX {
                pivot_col[low as usize] = j as u32;
                break;
            }
            let ri = &r[i as usize];
            let b = ri.last().expect("pivot column is nonzero").1;
            let f = fp.neg(fp.div(a, b));
            axpy(fp, &mut rj, f, ri);
            axpy(fp, &mut vj, f, &v[i as usize]);
        }
        r.push(rj);
        v.push(vj);
    }
    Reduction { r, v, pivot_col }
}

impl Reduction {
    pub fn rank(&self) -> usize {
        self.r.iter().filter(|c| !c.is_empty()).count()
    }
}

/// Homology of a [`CellComplex`]: ranks, representative cycles and the
/// reductions needed to express any cycle in the representative basis.
#[derive(Debug, Clone)]
pub struct HomologyBasis {
    fp: Fp,
    reductions: Vec<Reduction>,
    /// Per dimension, the cell indices `j` whose `V_j` is a representative.
    essential: Vec<Vec<u32>>,
    essential_pos: Vec<HashMap<u32, usize>>,
}

pub fn homology(complex: &CellComplex) -> HomologyBasis {
    let fp = complex.fp;
    let d = complex.top_dim();
    let reductions: Vec<Reduction> = (0..=d)
        .map(|k| {
            let nrows = if k == 0 { 0 } else { complex.cells[k - 1].len() };
            reduce(fp, &complex.boundary[k], nrows)
        })
        .collect();
    let mut essential = Vec::with_capacity(d + 1);
    let mut essential_pos = Vec::with_capacity(d + 1);
    for k in 0..=d {
        let ess: Vec<u32> = (0..complex.cells[k].len() as u32)
            .filter(|&j| reductions[k].r[j as usize].is_empty())
            .filter(|&j| k == d || reductions[k + 1].pivot_col[j as usize] == u32::MAX)
            .collect();
        essential_pos.push(ess.iter().enumerate().map(|(p, &j)| (j, p)).collect());
        essential.push(ess);
    }
    HomologyBasis {
        fp,
        reductions,
        essential,
        essential_pos,
    }
}

impl HomologyBasis {
    pub fn field(&self) -> Fp {
        self.fp
    }

    pub fn top_dim(&self) -> usize {
        self.essential.len() - 1
    }

    pub fn rank(&self, k: usize) -> usize {
        self.essential.get(k).map_or(0, Vec::len)
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.essential.iter().map(Vec::len).collect()
    }

    /// Representative cycles of `H_k` in local cell indices.
    pub fn representatives(&self, k: usize) -> Vec<&SparseVec<u32>> {
        self.essential[k]
            .iter()
            .map(|&j| &self.reductions[k].v[j as usize])
            .collect()
    }

    /// Coordinates of the class of cycle `z` in the representative basis.
    pub fn project(&self, k: usize, z: &SparseVec<u32>) -> Result<Vec<u16>, HomologyError> {
        let fp = self.fp;
        let mut z = z.clone();
        let mut coords = vec![0u16; self.rank(k)];
        let higher = self.reductions.get(k + 1);
        while let Some(&(low, a)) = z.last() {
            if let Some(red) = higher {
                let i = red.pivot_col.get(low as usize).copied().unwrap_or(u32::MAX);
                if i != u32::MAX {
                    let col = &red.r[i as usize];
                    let f = fp.neg(fp.div(a, col.last().expect("nonzero").1));
                    axpy(fp, &mut z, f, col);
                    continue;
                }
            }
            match self.essential_pos[k].get(&low) {
                Some(&p) => {
                    coords[p] = a;
                    axpy(fp, &mut z, fp.neg(a), &self.reductions[k].v[low as usize]);
                }
                None => return Err(HomologyError::NotACycle),
            }
        }
        Ok(coords)
    }

    /// Solves `∂c = z` for a `(k-1)`-chain `z`; `None` if `z` is not a boundary.
    pub fn solve_boundary(&self, k: usize, z: &SparseVec<u32>) -> Option<SparseVec<u32>> {
        let fp = self.fp;
        let red = self.reductions.get(k)?;
        let mut z = z.clone();
        let mut c: SparseVec<u32> = Vec::new();
        while let Some(&(low, a)) = z.last() {
            let i = *red.pivot_col.get(low as usize)?;
            if i == u32::MAX {
                return None;
            }
            let col = &red.r[i as usize];
            let f = fp.div(a, col.last().expect("nonzero").1);
            axpy(fp, &mut z, fp.neg(f), col);
            axpy(fp, &mut c, f, &red.v[i as usize]);
        }
        Some(c)
    }
}

/// Relative pair `(P1, P0)` of box sets in excised form.
#[derive(Debug, Clone)]
pub struct PairComplex {
    coder: CellCoder,
    p1: BoxSet,
    p0: BoxSet,
    /// Every face of a box in `P1 \ P0`.
    closure: Vec<CellKey>,
    relative: CellComplex,
}

pub fn build_pair_complex(grid: &CubicalGrid, p1: &BoxSet, p0: &BoxSet, fp: Fp) -> Result<PairComplex, HomologyError> {
    if !p0.is_subset(p1) {
        return Err(HomologyError::NotNested);
    }
    let coder = CellCoder::new(grid);
    let core = p1.difference(p0);
    let closure = coder.closure(core.iter());
    let in_p0 = |k: CellKey| coder.coface_boxes(k).into_iter().any(|b| p0.contains(b));
    let rel_keys: Vec<CellKey> = closure.iter().copied().filter(|&k| !in_p0(k)).collect();
    let relative = CellComplex::from_cells(&coder, fp, rel_keys);
    Ok(PairComplex {
        coder,
        p1: p1.clone(),
        p0: p0.clone(),
        closure,
        relative,
    })
}

impl PairComplex {
    pub fn coder(&self) -> &CellCoder {
        &self.coder
    }

    pub fn p1(&self) -> &BoxSet {
        &self.p1
    }

    pub fn p0(&self) -> &BoxSet {
        &self.p0
    }

    /// The relative chain complex `C(P1) / C(P0)`.
    pub fn relative(&self) -> &CellComplex {
        &self.relative
    }

    /// Cells of the excised complex (faces of `P1 \ P0`).
    pub fn closure_cells(&self) -> &[CellKey] {
        &self.closure
    }

    pub fn in_p0_closure(&self, key: CellKey) -> bool {
        self.coder.coface_boxes(key).into_iter().any(|b| self.p0.contains(b))
    }
}

pub fn relative_homology(pair: &PairComplex) -> HomologyBasis {
    homology(&pair.relative)
}

/// Union of the targets of the top cofaces of `cell` lying in `P1`,
/// intersected with `P1` (the face extension of the box map).
pub fn carrier(map: &BoxMap, pair: &PairComplex, cell: CellKey) -> BoxSet {
    pair.coder
        .coface_boxes(cell)
        .into_iter()
        .filter(|&b| pair.p1.contains(b))
        .flat_map(|b| map.targets(b).iter().copied())
        .filter(|&t| pair.p1.contains(t))
        .collect()
}

/// Carrier used for the chain map: the union of [`carrier`] over the
/// vertices of `cell`, drawing only on boxes of `P0` when `cell` is a face
/// of `P0`. Faces get smaller carriers than the cells they bound, and faces
/// of `P0` are carried into `P0`.
pub fn chain_carrier(map: &BoxMap, pair: &PairComplex, cell: CellKey) -> BoxSet {
    let source = if pair.in_p0_closure(cell) { &pair.p0 } else { &pair.p1 };
    pair.coder
        .touching_boxes(cell)
        .into_iter()
        .filter(|&b| source.contains(b))
        .flat_map(|b| map.targets(b).iter().copied())
        .filter(|&t| pair.p1.contains(t))
        .collect()
}

/// Which carrier vertex a vertex is sent to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VertexRule {
    #[default]
    Smallest,
    Largest,
}

/// Local absolute complex of a carrier with its homology.
#[derive(Debug)]
struct CarrierComplex {
    complex: CellComplex,
    basis: HomologyBasis,
}

impl CarrierComplex {
    fn new(coder: &CellCoder, fp: Fp, boxes: &BoxSet) -> Self {
        let complex = CellComplex::from_cells(coder, fp, coder.closure(boxes.iter()));
        let basis = homology(&complex);
        CarrierComplex { complex, basis }
    }

    fn is_acyclic(&self) -> bool {
        let ranks = self.basis.ranks();
        ranks[0] == 1 && ranks[1..].iter().all(|&r| r == 0)
    }
}

/// Chain map `φ` on the excised complex. Carriers are not stored; they are
/// recomputed by [`chain_carrier`].
#[derive(Debug, Clone)]
pub struct ChainMapData {
    fp: Fp,
    images: HashMap<CellKey, Chain>,
}

impl ChainMapData {
    pub fn image(&self, cell: CellKey) -> Option<&Chain> {
        self.images.get(&cell)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &Chain)> {
        self.images.iter()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sparse triplets `k source target value` over cell keys, sorted.
    pub fn write_triplets<W: Write>(&self, coder: &CellCoder, mut out: W) -> io::Result<()> {
        let mut keys: Vec<CellKey> = self.images.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let k = coder.cell_dim(key);
            for &(t, a) in &self.images[&key] {
                writeln!(out, "{k} {key} {t} {a}")?;
            }
        }
        Ok(())
    }

    /// `φ` applied to a keyed chain.
    pub fn apply(&self, chain: &[(CellKey, u16)]) -> Option<Chain> {
        let mut out: Chain = Vec::new();
        for &(k, a) in chain {
            axpy(self.fp, &mut out, a, self.images.get(&k)?);
        }
        Some(out)
    }
}

/// Bound on the cells held by the carrier-complex cache.
const CACHE_CELLS: usize = 1 << 21;

/// Builds `φ` dimension by dimension: a vertex goes to a vertex of its
/// carrier, and a `k`-cell `σ` to a chain `c` in its carrier with
/// `∂c = φ(∂σ)`. Every carrier is checked to be acyclic, and `∂φ = φ∂`
/// together with `φ(C(P0)) ⊆ C(P0)` is verified for every cell.
pub fn chain_map(map: &BoxMap, pair: &PairComplex, rule: VertexRule) -> Result<ChainMapData, HomologyError> {
    if !map.is_forward_invariant(&pair.p1) {
        return Err(HomologyError::NotForwardInvariant("P1"));
    }
    if !map.is_forward_invariant(&pair.p0) {
        return Err(HomologyError::NotForwardInvariant("P0"));
    }
    let fp = pair.relative.fp;
    let coder = &pair.coder;
    let mut by_dim: Vec<Vec<CellKey>> = vec![Vec::new(); coder.dim() + 1];
    for &k in &pair.closure {
        by_dim[coder.cell_dim(k)].push(k);
    }

    let mut cache: HashMap<Vec<BoxId>, Arc<CarrierComplex>> = HashMap::new();
    let mut cached_cells = 0usize;
    let mut images: HashMap<CellKey, Chain> = HashMap::with_capacity(pair.closure.len());

    for (k, cells) in by_dim.iter().enumerate() {
        for &cell in cells {
            let boxes = chain_carrier(map, pair, cell);
            let local = match cache.get(boxes.as_slice()) {
                Some(l) => l.clone(),
                None => {
                    let l = Arc::new(CarrierComplex::new(coder, fp, &boxes));
                    cached_cells += l.complex.num_cells();
                    if cached_cells > CACHE_CELLS {
                        cache.clear();
                        cached_cells = l.complex.num_cells();
                    }
                    cache.insert(boxes.as_slice().to_vec(), l.clone());
                    l
                }
            };
            if !local.is_acyclic() {
                let (anchor, mask) = coder.decode(cell);
                return Err(HomologyError::CarrierNotAcyclic {
                    anchor,
                    mask,
                    dim: k,
                    betti: local.basis.ranks(),
                });
            }
            let image: Chain = if k == 0 {
                let verts = local.complex.cells(0);
                let v = match rule {
                    VertexRule::Smallest => verts[0],
                    VertexRule::Largest => verts[verts.len() - 1],
                };
                vec![(v, 1)]
            } else {
                let target = images_of_boundary(coder, fp, &images, cell)?;
                let z = local.complex.localize(&target).ok_or_else(|| {
                    HomologyError::ChainMap(format!("boundary image of cell {cell} leaves its carrier"))
                })?;
                let c = local.basis.solve_boundary(k, &z).ok_or_else(|| {
                    HomologyError::ChainMap(format!("no filling for cell {cell} in an acyclic carrier"))
                })?;
                let chain = local.complex.globalize(k, &c);
                if coder.boundary_chain(fp, &chain) != target {
                    return Err(HomologyError::ChainMap(format!("∂φ ≠ φ∂ at cell {cell}")));
                }
                chain
            };
            if pair.in_p0_closure(cell) && !image.iter().all(|&(c, _)| pair.in_p0_closure(c)) {
                return Err(HomologyError::ChainMap(format!("φ(cell {cell}) leaves C(P0)")));
            }
            images.insert(cell, image);
        }
    }
    Ok(ChainMapData { fp, images })
}

fn images_of_boundary(
    coder: &CellCoder,
    fp: Fp,
    images: &HashMap<CellKey, Chain>,
    cell: CellKey,
) -> Result<Chain, HomologyError> {
    let mut out: Chain = Vec::new();
    for (face, pos) in coder.boundary(cell) {
        let img = images
            .get(&face)
            .ok_or_else(|| HomologyError::ChainMap(format!("face {face} of cell {cell} has no image")))?;
        axpy(fp, &mut out, if pos { 1 } else { fp.neg(1) }, img);
    }
    Ok(out)
}

/// Matrix of `φ_*` on `H_k(P1, P0)` for every `k`, in the representative basis.
pub fn induced_homology_map(
    cm: &ChainMapData,
    pair: &PairComplex,
    basis: &HomologyBasis,
) -> Result<Vec<FieldMatrix>, HomologyError> {
    let fp = basis.fp;
    let rel = &pair.relative;
    (0..=basis.top_dim())
        .map(|k| {
            let reps = basis.representatives(k);
            let columns: Vec<Vec<u16>> = reps
                .iter()
                .map(|z| {
                    let keyed = rel.globalize(k, z);
                    let image = cm
                        .apply(&keyed)
                        .ok_or_else(|| HomologyError::ChainMap("representative outside the chain map domain".into()))?;
                    let relative: Chain = image.into_iter().filter(|&(c, _)| !pair.in_p0_closure(c)).collect();
                    let local = rel
                        .localize(&relative)
                        .ok_or_else(|| HomologyError::ChainMap("image leaves the relative complex".into()))?;
                    basis.project(k, &local)
                })
                .collect::<Result<_, _>>()?;
            Ok(FieldMatrix::from_columns(fp, reps.len(), &columns))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhaseSpace;
    use crate::oracles::{ConstantOracle, IdentityOracle};
    use crate::outer_approx::build_boxmap;

    fn f5() -> Fp {
        Fp::new(5).unwrap()
    }

    fn grid(lower: Vec<f64>, upper: Vec<f64>, depths: Vec<u32>) -> CubicalGrid {
        CubicalGrid::new(PhaseSpace::new(lower, upper).unwrap(), depths).unwrap()
    }

    #[test]
    fn boundary_squares_to_zero() {
        let g = grid(vec![0.0; 3], vec![1.0; 3], vec![2, 2, 2]);
        let coder = CellCoder::new(&g);
        for key in coder.box_faces(g.linear(&[1, 0, 1])) {
            let once = coder.boundary_chain(f5(), &[(key, 1)]);
            assert!(coder.boundary_chain(f5(), &once).is_empty());
        }
        assert_eq!(coder.box_faces(0).len(), 27);
    }

    #[test]
    fn cell_queries() {
        let g = grid(vec![0.0; 2], vec![1.0; 2], vec![2, 2]);
        let c = CellCoder::new(&g);
        let v = c.encode(&[1, 1], 0);
        assert_eq!(c.coface_boxes(v).len(), 4);
        assert_eq!(c.coface_boxes(c.encode(&[0, 0], 0)), vec![0]);
        let edge = c.encode(&[1, 1], 0b01);
        assert_eq!(c.coface_boxes(edge).len(), 2);
        assert_eq!(c.touching_boxes(edge).len(), 6);
        assert_eq!(c.vertices(c.encode(&[0, 0], 0b11)).len(), 4);
        assert_eq!(c.decode(edge), (vec![1, 1], 0b01));
    }

    #[test]
    fn full_rectangle_is_acyclic() {
        let g = grid(vec![0.0; 2], vec![1.0; 2], vec![2, 3]);
        let all = BoxSet::all(g.num_boxes());
        let pair = build_pair_complex(&g, &all, &BoxSet::empty(), f5()).unwrap();
        assert_eq!(relative_homology(&pair).ranks(), vec![1, 0, 0]);
        let same = build_pair_complex(&g, &all, &all, f5()).unwrap();
        assert_eq!(relative_homology(&same).ranks(), vec![0, 0, 0]);
        let empty = build_pair_complex(&g, &BoxSet::empty(), &BoxSet::empty(), f5()).unwrap();
        assert_eq!(relative_homology(&empty).ranks(), vec![0, 0, 0]);
    }

    #[test]
    fn annulus_has_one_loop() {
        let g = grid(vec![0.0; 2], vec![1.0; 2], vec![2, 2]);
        let ring: BoxSet = (0..16)
            .filter(|&b| {
                let i = g.multi_index(b);
                i[0] == 0 || i[0] == 3 || i[1] == 0 || i[1] == 3
            })
            .collect();
        let pair = build_pair_complex(&g, &ring, &BoxSet::empty(), f5()).unwrap();
        assert_eq!(relative_homology(&pair).ranks(), vec![1, 1, 0]);
    }

    #[test]
    fn interval_relative_to_both_ends() {
        let g = grid(vec![-2.0], vec![2.0], vec![4]);
        let all = BoxSet::all(16);
        let ends: BoxSet = (0..16).filter(|&b| b < 4 || b >= 13).collect();
        let pair = build_pair_complex(&g, &all, &ends, f5()).unwrap();
        assert_eq!(relative_homology(&pair).ranks(), vec![0, 1]);
        let one_end: BoxSet = (0..4).collect();
        let pair = build_pair_complex(&g, &all, &one_end, f5()).unwrap();
        assert_eq!(relative_homology(&pair).ranks(), vec![0, 0]);
        assert_eq!(
            build_pair_complex(&g, &one_end, &all, f5()).unwrap_err(),
            HomologyError::NotNested
        );
    }

    #[test]
    fn projection_rejects_non_cycles() {
        let g = grid(vec![0.0], vec![1.0], vec![2]);
        let all = BoxSet::all(4);
        let pair = build_pair_complex(&g, &all, &BoxSet::empty(), f5()).unwrap();
        let h = relative_homology(&pair);
        let edge = vec![(0u32, 1u16)];
        assert_eq!(h.project(1, &edge), Err(HomologyError::NotACycle));
        // any vertex is homologous to the generator
        assert_eq!(h.project(0, &vec![(3u32, 2u16)]).unwrap(), vec![2]);
    }

    #[test]
    fn identity_map_induces_identity() {
        let g = grid(vec![0.0; 2], vec![1.0; 2], vec![2, 2]);
        let map = build_boxmap(&g, &IdentityOracle { dim: 2 }, 0.0).unwrap();
        let all = BoxSet::all(g.num_boxes());
        let pair = build_pair_complex(&g, &all, &BoxSet::empty(), f5()).unwrap();
        let basis = relative_homology(&pair);
        let cm = chain_map(&map, &pair, VertexRule::Smallest).unwrap();
        let mats = induced_homology_map(&cm, &pair, &basis).unwrap();
        assert_eq!(mats[0], FieldMatrix::identity(f5(), 1));
        assert_eq!(mats[1].rows(), 0);
    }

    #[test]
    fn constant_map_induces_identity_on_h0() {
        let g = grid(vec![0.0; 2], vec![1.0; 2], vec![2, 2]);
        let map = build_boxmap(&g, &ConstantOracle { value: vec![0.3, 0.6] }, 0.0).unwrap();
        let all = BoxSet::all(g.num_boxes());
        let pair = build_pair_complex(&g, &all, &BoxSet::empty(), f5()).unwrap();
        let basis = relative_homology(&pair);
        let cm = chain_map(&map, &pair, VertexRule::Largest).unwrap();
        let mats = induced_homology_map(&cm, &pair, &basis).unwrap();
        assert_eq!(mats[0], FieldMatrix::identity(f5(), 1));
    }

    #[test]
    fn carriers_in_one_dimension() {
        let g = grid(vec![0.0], vec![1.0], vec![3]);
        let map = build_boxmap(&g, &IdentityOracle { dim: 1 }, 0.0).unwrap();
        let all = BoxSet::all(8);
        let pair = build_pair_complex(&g, &all, &BoxSet::empty(), f5()).unwrap();
        let coder = pair.coder();
        // top cell: its own targets
        let top = coder.encode(&[3], 1);
        assert_eq!(carrier(&map, &pair, top).as_slice(), map.targets(3));
        // shared vertex: union over both boxes
        let v = coder.encode(&[3], 0);
        assert_eq!(carrier(&map, &pair, v).as_slice(), &[1, 2, 3, 4]);
        // identity carriers contain the cell's own cofaces
        for key in pair.closure_cells() {
            let c = carrier(&map, &pair, *key);
            assert!(coder.coface_boxes(*key).iter().all(|b| c.contains(*b)));
        }
    }

    #[test]
    fn chain_map_requires_invariant_pair() {
        let g = grid(vec![0.0], vec![1.0], vec![2]);
        let map = build_boxmap(&g, &IdentityOracle { dim: 1 }, 0.0).unwrap();
        let p1 = BoxSet::from_ids([1]);
        let pair = build_pair_complex(&g, &p1, &BoxSet::empty(), f5()).unwrap();
        assert_eq!(
            chain_map(&map, &pair, VertexRule::Smallest).unwrap_err(),
            HomologyError::NotForwardInvariant("P1")
        );
    }

    #[test]
    fn non_acyclic_carrier_is_reported() {
        // every box maps onto a ring of boxes
        let g = grid(vec![0.0; 2], vec![1.0; 2], vec![2, 2]);
        let ring: Vec<BoxId> = (0..16)
            .filter(|&b| {
                let i = g.multi_index(b);
                i[0] == 0 || i[0] == 3 || i[1] == 0 || i[1] == 3
            })
            .collect();
        let map = BoxMap::from_targets(g.clone(), 0.0, vec![ring; 16]);
        let all = BoxSet::all(16);
        let pair = build_pair_complex(&g, &all, &BoxSet::empty(), f5()).unwrap();
        match chain_map(&map, &pair, VertexRule::Smallest) {
            Err(HomologyError::CarrierNotAcyclic { betti, .. }) => assert_eq!(betti, vec![1, 1, 0]),
            other => panic!("expected CarrierNotAcyclic, got {other:?}"),
        }
    }
}
