//! Property suites shared by the `properties` and `acceptance` test targets.

use std::collections::HashMap;

use morse_conley::boxset::BoxSet;
use morse_conley::conley::{characteristic_polynomial, invariant_factors, shift_class};
use morse_conley::field::{FieldMatrix, Fp};
use morse_conley::graph_dynamics::{condensation, forward_closure, morse_graph};
use morse_conley::grid::{BoxId, CubicalGrid, PhaseSpace, Rect};
use morse_conley::homology::{
    build_pair_complex, chain_map, homology, relative_homology, CellCoder, CellComplex, CellKey, VertexRule,
};
use morse_conley::oracles::{
    Activation, ConstantOracle, DenseLayer, IdentityOracle, LeslieEnclosure, LeslieOracle, LipschitzDataOracle,
    MapOracle, MlpOracle, PiecewiseExample1D,
};
use morse_conley::outer_approx::{build_boxmap, BoxMap};
use proptest::prelude::*;
use proptest::test_runner::{TestCaseError, TestRunner};

pub const CASES: u32 = 256;

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: CASES,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn grid(lower: &[f64], upper: &[f64], depths: &[u32]) -> CubicalGrid {
    CubicalGrid::new(
        PhaseSpace::new(lower.to_vec(), upper.to_vec()).unwrap(),
        depths.to_vec(),
    )
    .unwrap()
}

// ---------- (a) strongly connected components ----------

fn reachability(n: usize, adj: &[Vec<BoxId>]) -> Vec<Vec<bool>> {
    // r[i][j]: a walk of length >= 1 from i to j
    let mut r = vec![vec![false; n]; n];
    for (i, ts) in adj.iter().enumerate() {
        for &t in ts {
            r[i][t as usize] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

fn digraph() -> impl Strategy<Value = (usize, Vec<Vec<BoxId>>)> {
    (1usize..=12).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec(proptest::collection::vec(0..n as BoxId, 0..4), n),
        )
    })
}

pub fn scc_matches_brute_force() -> Result<(), String> {
    run((digraph(),), |((n, mut adj),)| {
        for ts in &mut adj {
            ts.sort_unstable();
            ts.dedup();
        }
        let r = reachability(n, &adj);
        // the grid has 16 boxes; the ones past n have no edges
        let g = grid(&[0.0], &[1.0], &[4]);
        let mut lists = adj.clone();
        lists.resize(16, Vec::new());
        let map = BoxMap::from_targets(g, 0.0, lists);
        let c = condensation(&map);

        for i in 0..n {
            for j in 0..n {
                let same = i == j || (r[i][j] && r[j][i]);
                prop_assert_eq!(c.component_of(i as BoxId) == c.component_of(j as BoxId), same);
            }
            prop_assert_eq!(c.is_recurrent(c.component_of(i as BoxId)), r[i][i]);
        }
        for b in n..16 {
            prop_assert!(!c.is_recurrent(c.component_of(b as BoxId)));
        }
        for (hi, lo) in c.dag_edges() {
            prop_assert!(hi > lo);
        }

        let m = morse_graph(&c);
        let mut expected: Vec<Vec<BoxId>> = Vec::new();
        for i in 0..n {
            if r[i][i] && !expected.iter().any(|cl| cl.contains(&(i as BoxId))) {
                expected.push((0..n).filter(|&j| r[i][j] && r[j][i]).map(|j| j as BoxId).collect());
            }
        }
        expected.sort();
        let regions: Vec<Vec<BoxId>> = m.nodes.iter().map(|nd| nd.region.clone()).collect();
        prop_assert_eq!(&regions, &expected);
        for a in 0..m.len() {
            for b in 0..m.len() {
                let (x, y) = (expected[a][0] as usize, expected[b][0] as usize);
                prop_assert_eq!(m.less(a, b), a != b && r[y][x], "order between {} and {}", a, b);
            }
        }
        Ok(())
    })
}

// ---------- (b) enclosures grow with rho ----------

pub fn enclosure_is_monotone_in_rho() -> Result<(), String> {
    run(
        (0.2f64..2.0, 5.0f64..30.0, 5.0f64..30.0, 0.0f64..0.3, 0.0f64..0.3),
        |(theta, t1, t2, r1, dr)| {
            let g1 = grid(&[-2.0], &[2.0], &[6]);
            let pw = PiecewiseExample1D::new(theta).unwrap();
            let small = build_boxmap(&g1, &pw, r1).unwrap();
            let large = build_boxmap(&g1, &pw, r1 + dr).unwrap();
            prop_assert!(large.encloses(&small).unwrap());

            let g2 = grid(&[0.0, 0.0], &[90.0, 70.0], &[3, 3]);
            let les = LeslieOracle::new(t1, t2).unwrap();
            let small = build_boxmap(&g2, &les, 10.0 * r1).unwrap();
            let large = build_boxmap(&g2, &les, 10.0 * (r1 + dr)).unwrap();
            prop_assert!(large.encloses(&small).unwrap());
            for b in 0..g2.num_boxes() as BoxId {
                prop_assert!(!small.is_exterior(b) || large.is_exterior(b));
            }
            Ok(())
        },
    )
}

// ---------- (c) pointwise soundness ----------

fn random_point_in(r: &Rect, u: &[f64]) -> Vec<f64> {
    r.lower
        .iter()
        .zip(&r.upper)
        .zip(u)
        .map(|((lo, hi), t)| lo + t * (hi - lo))
        .collect()
}

fn assert_contains(r: &Rect, y: &[f64]) -> Result<(), TestCaseError> {
    prop_assert!(r.contains_point(y), "{:?} not in {:?}", y, r);
    Ok(())
}

fn random_mlp(weights: &[f64], widths: &[usize]) -> MlpOracle {
    let mut it = weights.iter().copied().cycle();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (cols, rows) = (w[0], w[1]);
            let wts: Vec<f64> = (0..rows * cols).map(|_| it.next().unwrap()).collect();
            let bias: Vec<f64> = (0..rows).map(|_| it.next().unwrap()).collect();
            DenseLayer::new(rows, cols, wts, bias).unwrap()
        })
        .collect();
    MlpOracle::new(layers, Activation::Relu).unwrap()
}

pub fn every_oracle_is_pointwise_sound() -> Result<(), String> {
    run(
        (
            0.2f64..2.0,
            1.0f64..40.0,
            1.0f64..40.0,
            proptest::collection::vec(0.0f64..1.0, 2),
            proptest::collection::vec(0.0f64..0.2, 2),
            proptest::collection::vec(0.0f64..=1.0, 2),
            proptest::collection::vec(-2.0f64..2.0, 8..40),
            1usize..5,
            proptest::collection::vec(-1.5f64..1.5, 4),
            proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30),
        ),
        |(theta, t1, t2, corner, size, u, weights, hidden, matrix, samples)| {
            let unit = |i: usize| (corner[i], (corner[i] + size[i]).min(1.0));
            // piecewise map on [-2, 2]
            let (a, b) = unit(0);
            let b1 = Rect::new(vec![4.0 * a - 2.0], vec![4.0 * b - 2.0]);
            let x = random_point_in(&b1, &u[..1]);
            let pw = PiecewiseExample1D::new(theta).unwrap();
            assert_contains(&pw.image_rect(&b1), &pw.eval(&x).unwrap())?;

            // Leslie on [0, 90] x [0, 70], both enclosure methods
            let (a1, b1_) = unit(0);
            let (a2, b2) = unit(1);
            let bl = Rect::new(vec![90.0 * a1, 70.0 * a2], vec![90.0 * b1_, 70.0 * b2]);
            let x = random_point_in(&bl, &u);
            for enc in [LeslieEnclosure::Exact, LeslieEnclosure::CornerLipschitz] {
                let les = LeslieOracle::new(t1, t2).unwrap().with_enclosure(enc);
                assert_contains(&les.image_rect(&bl), &les.eval(&x).unwrap())?;
            }

            let bu = Rect::new(vec![a1, a2], vec![b1_, b2]);
            let x = random_point_in(&bu, &u);
            let mlp = random_mlp(&weights, &[2, hidden, 2]);
            assert_contains(&mlp.image_rect(&bu), &mlp.eval(&x).unwrap())?;
            let id = IdentityOracle { dim: 2 };
            assert_contains(&id.image_rect(&bu), &id.eval(&x).unwrap())?;
            let k = ConstantOracle { value: vec![theta, t1] };
            assert_contains(&k.image_rect(&bu), &k.eval(&x).unwrap())?;

            // data oracle built from samples of a linear map with a known Lipschitz bound
            let f = |p: &[f64]| vec![matrix[0] * p[0] + matrix[1] * p[1], matrix[2] * p[0] + matrix[3] * p[1]];
            let frobenius = matrix.iter().map(|v| v * v).sum::<f64>().sqrt();
            let data: Vec<(Vec<f64>, Vec<f64>)> = samples.iter().map(|&(s, t)| (vec![s, t], f(&[s, t]))).collect();
            let oracle = LipschitzDataOracle::new(data, frobenius).unwrap();
            assert_contains(&oracle.image_rect(&bu), &f(&x))?;
            Ok(())
        },
    )
}

// ---------- (d) boundary and chain-map identities ----------

fn box_subset() -> impl Strategy<Value = (Vec<u32>, Vec<bool>)> {
    prop_oneof![
        Just(vec![3u32]),
        Just(vec![2u32, 2]),
        Just(vec![3u32, 2]),
        Just(vec![1u32, 1, 1]),
    ]
    .prop_flat_map(|depths| {
        let n = 1usize << depths.iter().sum::<u32>();
        (Just(depths), proptest::collection::vec(any::<bool>(), n))
    })
}

fn boxes_of(mask: &[bool]) -> Vec<BoxId> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i as BoxId)
        .collect()
}

/// Affine contraction of the unit cube towards `c`.
struct Contraction {
    c: Vec<f64>,
    lambda: f64,
}

impl MapOracle for Contraction {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, morse_conley::oracles::OracleError> {
        Ok(x.iter()
            .zip(&self.c)
            .map(|(xi, ci)| ci + self.lambda * (xi - ci))
            .collect())
    }
    fn image_rect(&self, b: &Rect) -> Rect {
        Rect::new(self.eval(&b.lower).unwrap(), self.eval(&b.upper).unwrap())
    }
    fn lipschitz_upper_bound(&self) -> f64 {
        self.lambda
    }
    fn describe(&self) -> String {
        "contraction".into()
    }
}

pub fn boundary_squared_vanishes() -> Result<(), String> {
    run((box_subset(),), |((depths, mask),)| {
        let d = depths.len();
        let g = grid(&vec![0.0; d], &vec![1.0; d], &depths);
        let coder = CellCoder::new(&g);
        let fp = Fp::new(5).unwrap();
        for key in coder.closure(boxes_of(&mask)) {
            let chain = coder.boundary_chain(fp, &[(key, 1)]);
            prop_assert!(coder.boundary_chain(fp, &chain).is_empty());
        }
        Ok(())
    })
}

pub fn chain_map_commutes_with_boundary() -> Result<(), String> {
    run(
        (
            box_subset(),
            proptest::collection::vec(0.05f64..0.95, 3),
            0.1f64..0.9,
            0.0f64..0.05,
        ),
        |((depths, mask), c, lambda, rho)| {
            let d = depths.len();
            let g = grid(&vec![0.0; d], &vec![1.0; d], &depths);
            let f = Contraction {
                c: c[..d].to_vec(),
                lambda,
            };
            let map = build_boxmap(&g, &f, rho).unwrap();
            let fp = Fp::new(5).unwrap();
            let p1 = BoxSet::all(g.num_boxes());
            let (p0, _) = forward_closure(&map, &BoxSet::from_ids(boxes_of(&mask)));
            let p0 = if p0.len() == g.num_boxes() { BoxSet::empty() } else { p0 };
            let pair = build_pair_complex(&g, &p1, &p0, fp).unwrap();
            let phi = match chain_map(&map, &pair, VertexRule::Smallest) {
                Ok(phi) => phi,
                Err(e) => return Err(TestCaseError::reject(e.to_string())),
            };
            let coder = pair.coder();
            let p0_cells = coder.closure(p0.iter());
            let mut images: HashMap<CellKey, Vec<(CellKey, u16)>> = HashMap::new();
            for key in pair.closure_cells() {
                let img = phi.image(*key).expect("every cell of cl(P1) is mapped");
                images.insert(*key, img.clone());
            }
            for key in pair.closure_cells() {
                let lhs = coder.boundary_chain(fp, &images[key]);
                let mut rhs: HashMap<CellKey, u16> = HashMap::new();
                for (face, positive) in coder.boundary(*key) {
                    let s = if positive { 1 } else { fp.neg(1) };
                    for (k, v) in &images[&face] {
                        let e = rhs.entry(*k).or_insert(0);
                        *e = fp.add(*e, fp.mul(s, *v));
                    }
                }
                rhs.retain(|_, v| *v != 0);
                let lhs: HashMap<CellKey, u16> = lhs.into_iter().collect();
                prop_assert_eq!(lhs, rhs);
                if p0_cells.binary_search(key).is_ok() {
                    for (k, _) in &images[key] {
                        prop_assert!(p0_cells.binary_search(k).is_ok());
                    }
                }
            }
            Ok(())
        },
    )
}

// ---------- (e) shift class is a similarity invariant ----------

fn matrix_of(fp: Fp, n: usize, entries: &[u16]) -> FieldMatrix {
    let rows: Vec<Vec<i64>> = (0..n)
        .map(|i| entries[i * n..(i + 1) * n].iter().map(|&v| i64::from(v)).collect())
        .collect();
    FieldMatrix::from_rows(fp, &rows)
}

pub fn shift_class_is_similarity_invariant() -> Result<(), String> {
    run(
        (
            1usize..6,
            proptest::collection::vec(0u16..5, 25),
            proptest::collection::vec(0u16..5, 25),
            0usize..3,
        ),
        |(n, m, s, nilpotent_rank)| {
            let fp = Fp::new(5).unwrap();
            let mut a = matrix_of(fp, n, &m);
            // sometimes zero out trailing rows to force a nontrivial generalized kernel
            for i in 0..nilpotent_rank.min(n - 1) {
                for j in 0..n {
                    a.set(n - 1 - i, j, 0);
                }
            }
            let sm = matrix_of(fp, n, &s);
            prop_assume!(sm.rank() == n);
            let conj = sm.mul(&a).mul(&sm.inverse().unwrap());
            prop_assert_eq!(shift_class(&a), shift_class(&conj));
            prop_assert_eq!(invariant_factors(&a), invariant_factors(&conj));
            prop_assert_eq!(characteristic_polynomial(&a), characteristic_polynomial(&conj));
            Ok(())
        },
    )
}

// ---------- (f) homology ranks against an independent reduction ----------

/// Rank over F_p of a dense matrix by plain Gaussian elimination.
fn dense_rank(p: u64, mut rows: Vec<Vec<u64>>) -> usize {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..ncols {
        let Some(pivot) = (rank..rows.len()).find(|&r| rows[r][col] % p != 0) else {
            continue;
        };
        rows.swap(rank, pivot);
        let inv = (1..p).find(|x| x * rows[rank][col] % p == 1).unwrap();
        for v in rows[rank].iter_mut() {
            *v = *v * inv % p;
        }
        for r in 0..rows.len() {
            if r != rank && rows[r][col] % p != 0 {
                let f = rows[r][col];
                for c in 0..ncols {
                    rows[r][c] = (rows[r][c] + p * p - f * rows[rank][c] % p) % p;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Betti numbers of the quotient `cells / sub`, from dense boundary matrices.
fn reference_betti(coder: &CellCoder, p: u64, cells: &[CellKey], sub: &[CellKey]) -> Vec<usize> {
    let d = coder.dim();
    let rel: Vec<CellKey> = cells
        .iter()
        .copied()
        .filter(|k| sub.binary_search(k).is_err())
        .collect();
    let by_dim: Vec<Vec<CellKey>> = (0..=d)
        .map(|k| rel.iter().copied().filter(|&c| coder.cell_dim(c) == k).collect())
        .collect();
    let rank_of = |k: usize| -> usize {
        if k == 0 || by_dim[k].is_empty() || by_dim[k - 1].is_empty() {
            return 0;
        }
        let index: HashMap<CellKey, usize> = by_dim[k - 1].iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut m = vec![vec![0u64; by_dim[k].len()]; by_dim[k - 1].len()];
        for (j, &c) in by_dim[k].iter().enumerate() {
            for (face, positive) in coder.boundary(c) {
                if let Some(&i) = index.get(&face) {
                    m[i][j] = if positive { 1 } else { p - 1 };
                }
            }
        }
        dense_rank(p, m)
    };
    (0..=d)
        .map(|k| by_dim[k].len() - rank_of(k) - if k < d { rank_of(k + 1) } else { 0 })
        .collect()
}

pub fn homology_ranks_match_reference() -> Result<(), String> {
    run(
        (
            box_subset(),
            proptest::collection::vec(any::<bool>(), 64),
            prop_oneof![Just(2u32), Just(3), Just(5), Just(7)],
        ),
        |((depths, mask), sub_mask, prime)| {
            let d = depths.len();
            let g = grid(&vec![0.0; d], &vec![1.0; d], &depths);
            let coder = CellCoder::new(&g);
            let fp = Fp::new(prime).unwrap();
            let boxes = boxes_of(&mask);
            let cells = coder.closure(boxes.iter().copied());
            prop_assert!(cells.len() <= 200);

            let complex = CellComplex::from_cells(&coder, fp, cells.iter().copied());
            let h = homology(&complex);
            let mut ranks = h.ranks();
            ranks.resize(d + 1, 0);
            prop_assert_eq!(ranks, reference_betti(&coder, prime as u64, &cells, &[]));

            // relative homology of (P1, P0) with P0 a subset of P1
            let p0: Vec<BoxId> = boxes.iter().copied().filter(|&b| sub_mask[b as usize]).collect();
            let pair =
                build_pair_complex(&g, &BoxSet::from_ids(boxes.clone()), &BoxSet::from_ids(p0.clone()), fp).unwrap();
            let mut rel = relative_homology(&pair).ranks();
            rel.resize(d + 1, 0);
            let p0_cells = coder.closure(p0);
            prop_assert_eq!(rel, reference_betti(&coder, prime as u64, &cells, &p0_cells));
            Ok(())
        },
    )
}
