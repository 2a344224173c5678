//! d-regular 0/1 matrices (directed graphs with loops, no multi-edges).
//!
//! Rows and columns are stored as flat arrays of sorted supports with stride
//! `d`. Indices are 0-based in memory; the text format is 1-based.

use num_complex::Complex64;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("switch ({i},{j}),({i2},{j2}) is not valid on this matrix")]
    SwitchInvalid { i: usize, j: usize, i2: usize, j2: usize },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RegularMatrix {
    n: usize,
    d: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl RegularMatrix {
    /// Builds from row supports (0-based). Each row must have `d` distinct
    /// columns and every column must be hit exactly `d` times.
    pub fn from_row_supports(n: usize, d: usize, supports: &[Vec<usize>]) -> Result<Self, GraphError> {
        if supports.len() != n {
            return Err(GraphError::InvalidInput(format!("expected {n} rows, got {}", supports.len())));
        }
        if d == 0 || d > n {
            return Err(GraphError::InvalidInput(format!("need 1 <= d <= n, got n={n}, d={d}")));
        }
        let mut rows = Vec::with_capacity(n * d);
        let mut col_deg = vec![0usize; n];
        for (i, s) in supports.iter().enumerate() {
            if s.len() != d {
                return Err(GraphError::InvalidInput(format!("row {i} has {} entries, expected {d}", s.len())));
            }
            let mut s = s.clone();
            s.sort_unstable();
            for w in s.windows(2) {
                if w[0] == w[1] {
                    return Err(GraphError::InvalidInput(format!("row {i} repeats column {}", w[0])));
                }
            }
            for &j in &s {
                if j >= n {
                    return Err(GraphError::InvalidInput(format!("column {j} out of range in row {i}")));
                }
                col_deg[j] += 1;
            }
            rows.extend_from_slice(&s);
        }
        if let Some(j) = col_deg.iter().position(|&c| c != d) {
            return Err(GraphError::InvalidInput(format!("column {j} has degree {}, expected {d}", col_deg[j])));
        }
        Ok(Self::from_rows_unchecked(n, d, rows))
    }

    /// `rows` must already be valid and sorted per row.
    fn from_rows_unchecked(n: usize, d: usize, rows: Vec<usize>) -> Self {
        let mut cols = vec![0usize; n * d];
        let mut fill = vec![0usize; n];
        for i in 0..n {
            for &j in &rows[i * d..(i + 1) * d] {
                cols[j * d + fill[j]] = i;
                fill[j] += 1;
            }
        }
        // rows are visited in increasing order, so each column list is sorted
        RegularMatrix { n, d, rows, cols }
    }

    /// Circulant matrix with `M_{i,(i+s) mod n} = 1` for each offset `s`.
    pub fn circulant(n: usize, offsets: &[usize]) -> Result<Self, GraphError> {
        let supports: Vec<Vec<usize>> = (0..n).map(|i| offsets.iter().map(|&s| (i + s) % n).collect()).collect();
        Self::from_row_supports(n, offsets.len(), &supports)
    }

    /// Permutation matrix with `M_{i,perm[i]} = 1`.
    pub fn permutation(perm: &[usize]) -> Result<Self, GraphError> {
        let supports: Vec<Vec<usize>> = perm.iter().map(|&j| vec![j]).collect();
        Self::from_row_supports(perm.len(), 1, &supports)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows_unchecked(n, 1, (0..n).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn col(&self, j: usize) -> &[usize] {
        &self.cols[j * self.d..(j + 1) * self.d]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }

    /// Dense 0/1 representation, row-major.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut out = vec![vec![0u8; self.n]; self.n];
        for (i, r) in out.iter_mut().enumerate() {
            for &j in self.row(i) {
                r[j] = 1;
            }
        }
        out
    }

    fn check_index(&self, idx: &[usize]) -> Result<(), GraphError> {
        match idx.iter().find(|&&v| v >= self.n) {
            Some(v) => Err(GraphError::InvalidInput(format!("index {v} out of range for n={}", self.n))),
            None => Ok(()),
        }
    }

    fn mask(&self, idx: &[usize]) -> Vec<bool> {
        let mut m = vec![false; self.n];
        for &v in idx {
            m[v] = true;
        }
        m
    }

    /// Number of ones in the `I x J` block (E(I,J)). Duplicate indices in
    /// `I` count once.
    pub fn edge_count(&self, i_set: &[usize], j_set: &[usize]) -> Result<usize, GraphError> {
        self.check_index(i_set)?;
        self.check_index(j_set)?;
        let jm = self.mask(j_set);
        let im = self.mask(i_set);
        Ok((0..self.n).filter(|&i| im[i]).map(|i| self.row(i).iter().filter(|&&j| jm[j]).count()).sum())
    }

    /// S_J: sorted rows whose support meets `J`.
    pub fn union_col_supports(&self, j_set: &[usize]) -> Result<Vec<usize>, GraphError> {
        self.check_index(j_set)?;
        let mut hit = vec![false; self.n];
        for &j in j_set {
            for &i in self.col(j) {
                hit[i] = true;
            }
        }
        Ok((0..self.n).filter(|&i| hit[i]).collect())
    }

    fn switch_is_valid(&self, i: usize, j: usize, i2: usize, j2: usize) -> bool {
        i != i2
            && j != j2
            && self.has_edge(i, j)
            && self.has_edge(i2, j2)
            && !self.has_edge(i, j2)
            && !self.has_edge(i2, j)
    }

    /// Flips (i,j),(i2,j2) into (i,j2),(i2,j).
    pub fn simple_switch(&self, i: usize, j: usize, i2: usize, j2: usize) -> Result<Self, GraphError> {
        let mut out = self.clone();
        out.switch_in_place(i, j, i2, j2)?;
        Ok(out)
    }

    /// In-place variant of [`simple_switch`](Self::simple_switch) for chain
    /// hot loops.
    pub fn switch_in_place(&mut self, i: usize, j: usize, i2: usize, j2: usize) -> Result<(), GraphError> {
        if i.max(j).max(i2).max(j2) >= self.n || !self.switch_is_valid(i, j, i2, j2) {
            return Err(GraphError::SwitchInvalid { i, j, i2, j2 });
        }
        let d = self.d;
        replace_sorted(&mut self.rows[i * d..(i + 1) * d], j, j2);
        replace_sorted(&mut self.rows[i2 * d..(i2 + 1) * d], j2, j);
        replace_sorted(&mut self.cols[j * d..(j + 1) * d], i, i2);
        replace_sorted(&mut self.cols[j2 * d..(j2 + 1) * d], i2, i);
        Ok(())
    }

    /// `((M - zI) x)_i` for `i` in `K`, in the order of `K`.
    pub fn shifted_apply(&self, z: ComplexShift, k: &RowMask, x: &[Complex64]) -> Result<Vec<Complex64>, GraphError> {
        if x.len() != self.n || k.n() != self.n {
            return Err(GraphError::InvalidInput(format!(
                "dimension mismatch: n={}, |x|={}, mask n={}",
                self.n,
                x.len(),
                k.n()
            )));
        }
        Ok(k.rows().iter().map(|&i| self.row(i).iter().map(|&j| x[j]).sum::<Complex64>() - z.0 * x[i]).collect())
    }

    /// Adjoint of [`shifted_apply`](Self::shifted_apply): maps a |K|-vector
    /// back to C^n.
    pub fn shifted_apply_adjoint(&self, z: ComplexShift, k: &RowMask, y: &[Complex64]) -> Result<Vec<Complex64>, GraphError> {
        if y.len() != k.len() || k.n() != self.n {
            return Err(GraphError::InvalidInput("dimension mismatch in adjoint".into()));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        let zc = z.0.conj();
        for (r, &i) in k.rows().iter().enumerate() {
            for &j in self.row(i) {
                out[j] += y[r];
            }
            out[i] -= zc * y[r];
        }
        Ok(out)
    }

    /// Text form: `n d` header, then one line of `d` sorted 1-based column
    /// indices per row.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.n * self.d * 6 + 16);
        let _ = writeln!(s, "{} {}", self.n, self.d);
        for i in 0..self.n {
            let mut first = true;
            for &j in self.row(i) {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{}", j + 1);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines.next().ok_or(GraphError::Parse { line: 1, msg: "empty input".into() })?;
        let nums = parse_usizes(header, hl + 1)?;
        if nums.len() != 2 {
            return Err(GraphError::Parse { line: hl + 1, msg: "header must be `n d`".into() });
        }
        let (n, d) = (nums[0], nums[1]);
        let mut supports = Vec::with_capacity(n);
        for (ln, line) in lines {
            let row = parse_usizes(line, ln + 1)?;
            if row.iter().any(|&v| v == 0) {
                return Err(GraphError::Parse { line: ln + 1, msg: "indices are 1-based".into() });
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GraphError::Parse { line: ln + 1, msg: "indices must be strictly increasing".into() });
            }
            supports.push(row.into_iter().map(|v| v - 1).collect());
        }
        Self::from_row_supports(n, d, &supports)
    }
}

fn parse_usizes(line: &str, ln: usize) -> Result<Vec<usize>, GraphError> {
    line.split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| GraphError::Parse { line: ln, msg: format!("{t:?}: {e}") }))
        .collect()
}

/// Replaces `old` by `new` in a sorted slice without duplicates, keeping it
/// sorted.
fn replace_sorted(s: &mut [usize], old: usize, new: usize) {
    let mut p = s.binary_search(&old).expect("entry present");
    s[p] = new;
    while p + 1 < s.len() && s[p] > s[p + 1] {
        s.swap(p, p + 1);
        p += 1;
    }
    while p > 0 && s[p] < s[p - 1] {
        s.swap(p, p - 1);
        p -= 1;
    }
}

/// Row subset `K` of `[n]`, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowMask {
    n: usize,
    rows: Vec<usize>,
}

impl RowMask {
    pub fn full(n: usize) -> Self {
        RowMask { n, rows: (0..n).collect() }
    }

    pub fn new(n: usize, mut rows: Vec<usize>) -> Result<Self, GraphError> {
        rows.sort_unstable();
        rows.dedup();
        if rows.last().is_some_and(|&r| r >= n) {
            return Err(GraphError::InvalidInput("row mask index out of range".into()));
        }
        Ok(RowMask { n, rows })
    }

    /// `[n]` minus the given rows.
    pub fn without(n: usize, removed: &[usize]) -> Result<Self, GraphError> {
        let mut keep = vec![true; n];
        for &r in removed {
            if r >= n {
                return Err(GraphError::InvalidInput("row mask index out of range".into()));
            }
            keep[r] = false;
        }
        Ok(RowMask { n, rows: (0..n).filter(|&i| keep[i]).collect() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn complement_len(&self) -> usize {
        self.n - self.rows.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexShift(pub Complex64);

impl ComplexShift {
    pub fn real(z: f64) -> Self {
        ComplexShift(Complex64::new(z, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn edge_count_examples() {
        let id = RegularMatrix::identity(5);
        let all: Vec<usize> = (0..5).collect();
        assert_eq!(id.edge_count(&all, &all).unwrap(), 5);
        assert_eq!(id.edge_count(&[], &all).unwrap(), 0);
        let m = RegularMatrix::circulant(4, &[0, 1]).unwrap();
        assert_eq!(m.edge_count(&[0], &[0, 1]).unwrap(), 2);
        assert!(m.edge_count(&[4], &[0]).is_err());
    }

    #[test]
    fn union_col_supports_examples() {
        let p = RegularMatrix::permutation(&[2, 0, 1, 4, 3]).unwrap();
        assert_eq!(p.union_col_supports(&[0, 3, 4]).unwrap().len(), 3);
        let m = RegularMatrix::circulant(4, &[0, 1]).unwrap();
        assert_eq!(m.union_col_supports(&[0, 1, 2, 3]).unwrap(), vec![0, 1, 2, 3]);
        // column 1 (1-based) is hit by rows 1 and 4
        assert_eq!(m.union_col_supports(&[0]).unwrap(), vec![0, 3]);
    }

    #[test]
    fn switch_examples() {
        let id = RegularMatrix::identity(2);
        let s = id.simple_switch(0, 0, 1, 1).unwrap();
        assert_eq!(s, RegularMatrix::permutation(&[1, 0]).unwrap());
        assert_eq!(s.simple_switch(0, 1, 1, 0).unwrap(), id);
        let m = RegularMatrix::circulant(4, &[0, 1]).unwrap();
        // M_{0,1} = 1 already
        assert!(matches!(m.simple_switch(0, 0, 1, 1), Err(GraphError::SwitchInvalid { .. })));
    }

    #[test]
    fn shifted_apply_examples() {
        let m = RegularMatrix::circulant(6, &[0, 2, 3]).unwrap();
        let ones = vec![c(1.0); 6];
        let k = RowMask::full(6);
        assert!(m.shifted_apply(ComplexShift::real(0.0), &k, &ones).unwrap().iter().all(|v| *v == c(3.0)));
        assert!(m.shifted_apply(ComplexShift::real(3.0), &k, &ones).unwrap().iter().all(|v| *v == c(0.0)));
        let perm = [3, 1, 0, 2];
        let p = RegularMatrix::permutation(&perm).unwrap();
        let x: Vec<Complex64> = (0..4).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let k = RowMask::new(4, vec![0, 2]).unwrap();
        assert_eq!(p.shifted_apply(ComplexShift::real(0.0), &k, &x).unwrap(), vec![x[3], x[0]]);
        assert!(p.shifted_apply(ComplexShift::real(0.0), &k, &x[..3]).is_err());
    }

    #[test]
    fn adjoint_matches_dense() {
        let m = RegularMatrix::circulant(5, &[0, 1, 3]).unwrap();
        let k = RowMask::new(5, vec![1, 2, 4]).unwrap();
        let z = ComplexShift(Complex64::new(0.3, -1.2));
        let x: Vec<Complex64> = (0..5).map(|i| Complex64::new(i as f64 * 0.5, 1.0 - i as f64)).collect();
        let y: Vec<Complex64> = (0..3).map(|i| Complex64::new(1.0 + i as f64, 0.25 * i as f64)).collect();
        let ax = m.shifted_apply(z, &k, &x).unwrap();
        let aty = m.shifted_apply_adjoint(z, &k, &y).unwrap();
        let lhs: Complex64 = ax.iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex64 = x.iter().zip(&aty).map(|(a, b)| a * b.conj()).sum();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let m = RegularMatrix::circulant(7, &[0, 3, 5]).unwrap();
        let t = m.to_text();
        assert!(t.starts_with("7 3\n1 4 6\n"));
        let back = RegularMatrix::from_text(&t).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), t);
        assert!(RegularMatrix::from_text("2 1\n1\n1\n").is_err());
        assert!(RegularMatrix::from_text("2 1\n0\n1\n").is_err());
    }

    #[test]
    fn rejects_bad_supports() {
        assert!(RegularMatrix::from_row_supports(2, 1, &[vec![0], vec![0]]).is_err());
        assert!(RegularMatrix::from_row_supports(2, 2, &[vec![0, 0], vec![1, 1]]).is_err());
        assert!(RegularMatrix::from_row_supports(2, 3, &[vec![0], vec![1]]).is_err());
    }

    pub(crate) fn check_invariants(m: &RegularMatrix) {
        let (n, d) = (m.n(), m.d());
        for i in 0..n {
            let r = m.row(i);
            assert!(r.windows(2).all(|w| w[0] < w[1]));
            for &j in r {
                assert!(m.col(j).binary_search(&i).is_ok());
            }
        }
        for j in 0..n {
            let c = m.col(j);
            assert_eq!(c.len(), d);
            assert!(c.windows(2).all(|w| w[0] < w[1]));
        }
    }

    proptest! {
        #[test]
        fn column_regularity(n in 3usize..20, seed in any::<u64>()) {
            let d = 1 + (seed as usize) % n.min(4);
            let offs: Vec<usize> = (0..d).collect();
            let m = RegularMatrix::circulant(n, &offs).unwrap();
            let j: Vec<usize> = (0..n).filter(|v| (seed >> (v % 60)) & 1 == 1).collect();
            let all: Vec<usize> = (0..n).collect();
            prop_assert_eq!(m.edge_count(&all, &j).unwrap(), d * j.len());
            prop_assert!(m.union_col_supports(&j).unwrap().len() <= d * j.len());
        }

        #[test]
        fn switches_preserve_invariants(ops in proptest::collection::vec((0usize..9, 0usize..9, 0usize..9, 0usize..9), 1..200)) {
            let mut m = RegularMatrix::circulant(9, &[0, 1, 4]).unwrap();
            for (i, j, i2, j2) in ops {
                let before = m.clone();
                if m.switch_in_place(i, j, i2, j2).is_ok() {
                    check_invariants(&m);
                    let back = m.simple_switch(i, j2, i2, j).unwrap();
                    prop_assert_eq!(back, before);
                } else {
                    prop_assert_eq!(&m, &before);
                }
            }
        }
    }
}
