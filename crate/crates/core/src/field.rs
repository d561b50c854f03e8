//! Arithmetic over a prime field `F_p` (`p < 2^16`): scalars, sparse
//! columns and small dense matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("{0} is not a prime below 2^16")]
    NotPrime(u32),
}

/// The prime field `F_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Fp {
    p: u32,
}

impl TryFrom<u32> for Fp {
    type Error = FieldError;

    fn try_from(p: u32) -> Result<Self, FieldError> {
        Fp::new(p)
    }
}

impl From<Fp> for u32 {
    fn from(f: Fp) -> u32 {
        f.p
    }
}

pub fn is_prime(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

impl Fp {
    pub fn new(p: u32) -> Result<Self, FieldError> {
        if p >= 1 << 16 || !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Fp { p })
    }

    pub fn p(self) -> u32 {
        self.p
    }

    pub fn reduce(self, x: i64) -> u16 {
        x.rem_euclid(i64::from(self.p)) as u16
    }

    pub fn add(self, a: u16, b: u16) -> u16 {
        ((u32::from(a) + u32::from(b)) % self.p) as u16
    }

    pub fn sub(self, a: u16, b: u16) -> u16 {
        ((u32::from(a) + self.p - u32::from(b)) % self.p) as u16
    }

    pub fn neg(self, a: u16) -> u16 {
        ((self.p - u32::from(a)) % self.p) as u16
    }

    pub fn mul(self, a: u16, b: u16) -> u16 {
        (u32::from(a) * u32::from(b) % self.p) as u16
    }

    pub fn pow(self, a: u16, mut e: u32) -> u16 {
        let mut base = u32::from(a) % self.p;
        let mut acc = 1u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % self.p;
            }
            base = base * base % self.p;
            e >>= 1;
        }
        acc as u16
    }

    /// Multiplicative inverse; panics on zero.
    pub fn inv(self, a: u16) -> u16 {
        assert!(a % self.p as u16 != 0, "inverse of zero in F_{}", self.p);
        self.pow(a, self.p - 2)
    }

    pub fn div(self, a: u16, b: u16) -> u16 {
        self.mul(a, self.inv(b))
    }

    /// Representative in `(-p/2, p/2]`, for display.
    pub fn signed(self, a: u16) -> i64 {
        let a = i64::from(a);
        let p = i64::from(self.p);
        if a > p / 2 {
            a - p
        } else {
            a
        }
    }
}

/// Sparse vector: `(index, nonzero value)` pairs sorted by index.
pub type SparseVec<I> = Vec<(I, u16)>;

/// `x += a * y` for sorted sparse vectors.
pub fn axpy<I: Ord + Copy>(fp: Fp, x: &mut SparseVec<I>, a: u16, y: &[(I, u16)]) {
    if a == 0 || y.is_empty() {
        return;
    }
    let mut out = Vec::with_capacity(x.len() + y.len());
    let (mut i, mut j) = (0, 0);
    while i < x.len() || j < y.len() {
        if j == y.len() || (i < x.len() && x[i].0 < y[j].0) {
            out.push(x[i]);
            i += 1;
        } else if i == x.len() || y[j].0 < x[i].0 {
            out.push((y[j].0, fp.mul(a, y[j].1)));
            j += 1;
        } else {
            let v = fp.add(x[i].1, fp.mul(a, y[j].1));
            if v != 0 {
                out.push((x[i].0, v));
            }
            i += 1;
            j += 1;
        }
    }
    *x = out;
}

/// Sorts and merges duplicate indices, dropping zeros.
pub fn normalize<I: Ord + Copy>(fp: Fp, mut v: Vec<(I, u16)>) -> SparseVec<I> {
    v.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: SparseVec<I> = Vec::with_capacity(v.len());
    for (i, a) in v {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 = fp.add(last.1, a),
            _ => out.push((i, a % fp.p() as u16)),
        }
        if out.last().is_some_and(|l| l.1 == 0) {
            out.pop();
        }
    }
    out
}

/// Dense matrix over `F_p`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMatrix {
    fp: Fp,
    rows: usize,
    cols: usize,
    data: Vec<u16>,
}

impl FieldMatrix {
    pub fn zeros(fp: Fp, rows: usize, cols: usize) -> Self {
        FieldMatrix {
            fp,
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(fp: Fp, n: usize) -> Self {
        let mut m = FieldMatrix::zeros(fp, n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    /// Builds from integer rows, reducing mod p.
    pub fn from_rows(fp: Fp, rows: &[Vec<i64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = FieldMatrix::zeros(fp, r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, fp.reduce(v));
            }
        }
        m
    }

    pub fn field(&self) -> Fp {
        self.fp
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: u16) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<u16> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn from_columns(fp: Fp, rows: usize, columns: &[Vec<u16>]) -> Self {
        let mut m = FieldMatrix::zeros(fp, rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn mul(&self, other: &FieldMatrix) -> FieldMatrix {
        assert_eq!(self.cols, other.rows, "shape mismatch");
        let fp = self.fp;
        let mut out = FieldMatrix::zeros(fp, self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = fp.add(out.get(i, j), fp.mul(a, other.get(k, j)));
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> FieldMatrix {
        assert!(self.is_square());
        let mut acc = FieldMatrix::identity(self.fp, self.rows);
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    /// Row echelon form; returns the pivot columns.
    fn echelon(&mut self) -> Vec<usize> {
        let fp = self.fp;
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..self.cols {
            if row == self.rows {
                break;
            }
            let Some(pr) = (row..self.rows).find(|&r| self.get(r, col) != 0) else {
                continue;
            };
            if pr != row {
                for j in 0..self.cols {
                    self.data.swap(pr * self.cols + j, row * self.cols + j);
                }
            }
            let inv = fp.inv(self.get(row, col));
            for j in 0..self.cols {
                let v = fp.mul(self.get(row, j), inv);
                self.set(row, j, v);
            }
            for r in 0..self.rows {
                if r != row {
                    let f = self.get(r, col);
                    if f != 0 {
                        for j in 0..self.cols {
                            let v = fp.sub(self.get(r, j), fp.mul(f, self.get(row, j)));
                            self.set(r, j, v);
                        }
                    }
                }
            }
            pivots.push(col);
            row += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        self.clone().echelon().len()
    }

    /// Basis of the column space, as a matrix whose columns are original columns.
    pub fn column_space_basis(&self) -> FieldMatrix {
        let pivots = self.clone().echelon();
        let cols: Vec<Vec<u16>> = pivots.iter().map(|&j| self.column(j)).collect();
        FieldMatrix::from_columns(self.fp, self.rows, &cols)
    }

    /// Solves `self * x = b` for one column `b`; `None` if inconsistent.
    pub fn solve(&self, b: &[u16]) -> Option<Vec<u16>> {
        let fp = self.fp;
        let mut aug = FieldMatrix::zeros(fp, self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug.set(i, j, self.get(i, j));
            }
            aug.set(i, self.cols, b[i]);
        }
        let pivots = aug.echelon();
        if pivots.last() == Some(&self.cols) {
            return None;
        }
        let mut x = vec![0u16; self.cols];
        for (r, &c) in pivots.iter().enumerate() {
            x[c] = aug.get(r, self.cols);
        }
        Some(x)
    }

    /// Inverse of a square matrix, if invertible.
    pub fn inverse(&self) -> Option<FieldMatrix> {
        assert!(self.is_square());
        let n = self.rows;
        let fp = self.fp;
        let mut aug = FieldMatrix::zeros(fp, n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug.set(i, j, self.get(i, j));
            }
            aug.set(i, n + i, 1);
        }
        let pivots = aug.echelon();
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return None;
        }
        let mut inv = FieldMatrix::zeros(fp, n, n);
        for i in 0..n {
            for j in 0..n {
                inv.set(i, j, aug.get(i, n + j));
            }
        }
        Some(inv)
    }
}
