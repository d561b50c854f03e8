//! Shift-equivalence invariants over `F_p` and homology Conley indices of Morse nodes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldMatrix, Fp};
use crate::graph_dynamics::{index_pair, ComponentId, Condensation, GraphError};
use crate::homology::{
    build_pair_complex, chain_map, induced_homology_map, relative_homology, HomologyError, VertexRule,
};
use crate::outer_approx::BoxMap;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConleyError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Homology(#[from] HomologyError),
}

/// Polynomial over `F_p`, coefficients in ascending order of powers, no trailing zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<u16>);

impl Poly {
    pub fn zero() -> Self {
        Poly(Vec::new())
    }

    pub fn one() -> Self {
        Poly(vec![1])
    }

    /// `x - a`.
    pub fn linear(fp: Fp, a: u16) -> Self {
        Poly(vec![fp.neg(a), 1]).trimmed()
    }

    fn trimmed(mut self) -> Self {
        while self.0.last() == Some(&0) {
            self.0.pop();
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.0.len().checked_sub(1)
    }

    pub fn coeff(&self, k: usize) -> u16 {
        self.0.get(k).copied().unwrap_or(0)
    }

    pub fn add(&self, fp: Fp, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly((0..n).map(|k| fp.add(self.coeff(k), other.coeff(k))).collect()).trimmed()
    }

    pub fn scale(&self, fp: Fp, a: u16) -> Poly {
        Poly(self.0.iter().map(|&c| fp.mul(c, a)).collect()).trimmed()
    }

    pub fn mul(&self, fp: Fp, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![0u16; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] = fp.add(out[i + j], fp.mul(a, b));
            }
        }
        Poly(out).trimmed()
    }

    /// Quotient and remainder; panics on division by zero.
    pub fn div_rem(&self, fp: Fp, d: &Poly) -> (Poly, Poly) {
        let dd = d.degree().expect("division by the zero polynomial");
        let lead_inv = fp.inv(d.0[dd]);
        let mut rem = self.0.clone();
        let mut quot = vec![0u16; self.0.len().saturating_sub(dd)];
        while rem.len() > dd {
            let k = rem.len() - 1 - dd;
            let c = fp.mul(rem[rem.len() - 1], lead_inv);
            quot[k] = c;
            for (i, &di) in d.0.iter().enumerate() {
                rem[k + i] = fp.sub(rem[k + i], fp.mul(c, di));
            }
            rem.pop();
            while rem.last() == Some(&0) {
                rem.pop();
            }
        }
        (Poly(quot).trimmed(), Poly(rem).trimmed())
    }

    pub fn monic(&self, fp: Fp) -> Poly {
        match self.0.last() {
            Some(&l) => self.scale(fp, fp.inv(l)),
            None => Poly::zero(),
        }
    }

    /// Human-readable form with symmetric coefficients, e.g. `x^3 - 1`.
    pub fn display(&self, fp: Fp) -> String {
        let Some(deg) = self.degree() else {
            return "0".into();
        };
        let mut s = String::new();
        for k in (0..=deg).rev() {
            let c = fp.signed(self.coeff(k));
            if c == 0 {
                continue;
            }
            let mag = c.unsigned_abs();
            if s.is_empty() {
                if c < 0 {
                    s.push('-');
                }
            } else {
                s.push_str(if c < 0 { " - " } else { " + " });
            }
            if mag != 1 || k == 0 {
                s.push_str(&mag.to_string());
            }
            match k {
                0 => {}
                1 => s.push('x'),
                _ => s.push_str(&format!("x^{k}")),
            }
        }
        s
    }
}

/// Invariant factors of `xI - m` (those of positive degree), monic, each
/// dividing the next. Their product is the characteristic polynomial.
pub fn invariant_factors(m: &FieldMatrix) -> Vec<Poly> {
    assert!(m.is_square(), "invariant factors need a square matrix");
    let fp = m.field();
    let n = m.rows();
    let mut a: Vec<Vec<Poly>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut c = vec![fp.neg(m.get(i, j))];
                    if i == j {
                        c.push(1);
                    }
                    Poly(c).trimmed()
                })
                .collect()
        })
        .collect();

    for t in 0..n {
        loop {
            // smallest-degree nonzero entry of the trailing block becomes the pivot
            let mut best: Option<(usize, usize, usize)> = None;
            for (i, row) in a.iter().enumerate().skip(t) {
                for (j, e) in row.iter().enumerate().skip(t) {
                    if let Some(d) = e.degree() {
                        if best.map_or(true, |b| d < b.2) {
                            best = Some((i, j, d));
                        }
                    }
                }
            }
            let Some((pi, pj, _)) = best else {
                break;
            };
            a.swap(t, pi);
            for row in a.iter_mut() {
                row.swap(t, pj);
            }
            let pivot = a[t][t].clone();
            let mut dirty = false;
            for i in t + 1..n {
                if a[i][t].is_zero() {
                    continue;
                }
                let (q, r) = a[i][t].div_rem(fp, &pivot);
                for j in t..n {
                    let sub = a[t][j].mul(fp, &q).scale(fp, fp.neg(1));
                    a[i][j] = a[i][j].add(fp, &sub);
                }
                dirty |= !r.is_zero();
            }
            for j in t + 1..n {
                if a[t][j].is_zero() {
                    continue;
                }
                let (q, r) = a[t][j].div_rem(fp, &pivot);
                for row in a.iter_mut().skip(t) {
                    let sub = row[t].mul(fp, &q).scale(fp, fp.neg(1));
                    row[j] = row[j].add(fp, &sub);
                }
                dirty |= !r.is_zero();
            }
            if dirty {
                continue;
            }
            // the pivot must divide the whole trailing block
            let offender = (t + 1..n).find(|&i| (t + 1..n).any(|j| !a[i][j].div_rem(fp, &pivot).1.is_zero()));
            match offender {
                Some(i) => {
                    for j in t..n {
                        let v = a[t][j].add(fp, &a[i][j]);
                        a[t][j] = v;
                    }
                }
                None => break,
            }
        }
    }
    (0..n)
        .map(|t| a[t][t].monic(fp))
        .filter(|p| p.degree().is_some_and(|d| d > 0))
        .collect()
}

/// Characteristic polynomial `det(xI - m)`.
pub fn characteristic_polynomial(m: &FieldMatrix) -> Poly {
    let fp = m.field();
    invariant_factors(m).iter().fold(Poly::one(), |acc, f| acc.mul(fp, f))
}

/// Shift-equivalence class of a square matrix over `F_p`: the restriction to
/// the eventual image, where the matrix acts invertibly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftClass {
    /// Characteristic polynomial of the invertible part.
    pub polynomial: Poly,
    pub invariant_factors: Vec<Poly>,
}

impl ShiftClass {
    pub fn degree(&self) -> usize {
        self.polynomial.degree().unwrap_or(0)
    }
}

/// Restriction of `m` to the column space of `m^k`, where `k` is the first
/// power with `rank m^k = rank m^{k+1}`.
pub fn eventual_restriction(m: &FieldMatrix) -> FieldMatrix {
    assert!(m.is_square(), "shift class needs a square matrix");
    let fp = m.field();
    let mut power = FieldMatrix::identity(fp, m.rows());
    let mut rank = power.rank();
    loop {
        let next = power.mul(m);
        let r = next.rank();
        if r == rank {
            break;
        }
        power = next;
        rank = r;
    }
    let basis = power.column_space_basis();
    let image = m.mul(&basis);
    let columns: Vec<Vec<u16>> = (0..basis.cols())
        .map(|j| basis.solve(&image.column(j)).expect("eventual image is invariant"))
        .collect();
    FieldMatrix::from_columns(fp, basis.cols(), &columns)
}

/// `None` when the eventual image is trivial (the zero marker).
pub fn shift_class(m: &FieldMatrix) -> Option<ShiftClass> {
    let restricted = eventual_restriction(m);
    if restricted.rows() == 0 {
        return None;
    }
    let invariant_factors = invariant_factors(&restricted);
    let fp = m.field();
    let polynomial = invariant_factors.iter().fold(Poly::one(), |acc, f| acc.mul(fp, f));
    Some(ShiftClass {
        polynomial,
        invariant_factors,
    })
}

/// Homology Conley index of a Morse node: one shift class per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConleyIndex {
    pub prime: u32,
    /// Ranks of `H_k(P1, P0)` of the index pair used.
    pub ranks: Vec<usize>,
    pub classes: Vec<Option<ShiftClass>>,
}

impl ConleyIndex {
    pub fn from_matrices(fp: Fp, matrices: &[FieldMatrix]) -> Self {
        ConleyIndex {
            prime: fp.p(),
            ranks: matrices.iter().map(FieldMatrix::rows).collect(),
            classes: matrices.iter().map(shift_class).collect(),
        }
    }

    fn field(&self) -> Fp {
        Fp::new(self.prime).expect("stored prime is valid")
    }

    /// Label entry for dimension `k`: the polynomial, or `0`.
    pub fn entry(&self, k: usize) -> String {
        match self.classes.get(k) {
            Some(Some(c)) => c.polynomial.display(self.field()),
            _ => "0".into(),
        }
    }

    /// `(s_0, s_1, ...)`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = (0..self.classes.len()).map(|k| self.entry(k)).collect();
        format!("({})", parts.join(", "))
    }

    pub fn is_trivial(&self) -> bool {
        self.classes.iter().all(Option::is_none)
    }
}

impl fmt::Display for ConleyIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Induced maps on `H_*(P1, P0)` for the index pair of component `q`.
pub fn index_maps(
    map: &BoxMap,
    c: &Condensation,
    q: ComponentId,
    fp: Fp,
    rule: VertexRule,
) -> Result<Vec<FieldMatrix>, ConleyError> {
    let pair = index_pair(map, c, q)?;
    let complex = build_pair_complex(map.grid(), &pair.p1, &pair.p0, fp)?;
    let basis = relative_homology(&complex);
    let phi = chain_map(map, &complex, rule)?;
    Ok(induced_homology_map(&phi, &complex, &basis)?)
}

pub fn conley_index(map: &BoxMap, c: &Condensation, q: ComponentId, fp: Fp) -> Result<ConleyIndex, ConleyError> {
    let matrices = index_maps(map, c, q, fp, VertexRule::Smallest)?;
    Ok(ConleyIndex::from_matrices(fp, &matrices))
}

/// True iff some dimension carries a nonzero shift class.
pub fn nontriviality(ci: &ConleyIndex) -> bool {
    !ci.is_trivial()
}

pub fn nontriviality_report(ci: &ConleyIndex) -> String {
    if nontriviality(ci) {
        format!(
            "Conley index {} is nontrivial: the isolated invariant set of this node is nonempty.",
            ci.label()
        )
    } else {
        format!(
            "Conley index {} is trivial: no conclusion. A trivial index does not imply an empty invariant set.",
            ci.label()
        )
    }
}
