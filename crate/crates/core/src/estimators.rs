//! The aggregated matrix `Q`, small-ball and trivial estimators, w-sets,
//! the offset functional `eta`, the standard-`Q` conditions and an empirical
//! concentration function.

use crate::ball::max_ball_at_points;
use crate::ell::{EllDecomposition, PartKind};
use crate::graph::RegularMatrix;
use crate::rng::rng_from;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("Q is not admissible: {0}")]
    NotAdmissible(String),
}

/// `n x m` nonnegative integer matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QMatrix {
    n: usize,
    m: usize,
    d: usize,
    entries: Vec<u32>,
}

impl QMatrix {
    /// Row sums must equal `d`.
    pub fn new(n: usize, m: usize, d: usize, entries: Vec<u32>) -> Result<Self, EstimatorError> {
        if entries.len() != n * m {
            return Err(EstimatorError::InvalidInput(format!("expected {} entries, got {}", n * m, entries.len())));
        }
        for i in 0..n {
            let s: u32 = entries[i * m..(i + 1) * m].iter().sum();
            if s as usize != d {
                return Err(EstimatorError::InvalidInput(format!("row {i} sums to {s}, expected {d}")));
            }
        }
        Ok(QMatrix { n, m, d, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, q: usize) -> u32 {
        self.entries[i * self.m + q]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn col_sum(&self, q: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, q) as u64).sum()
    }

    /// Column sums equal `d |L^(q)|` for the given decomposition.
    pub fn check_admissible(&self, decomp: &EllDecomposition) -> Result<(), EstimatorError> {
        if self.n != decomp.n() || self.m != decomp.num_parts() || self.d != decomp.d() {
            return Err(EstimatorError::NotAdmissible(format!(
                "shape ({}, {}, d={}) vs decomposition ({}, {}, d={})",
                self.n,
                self.m,
                self.d,
                decomp.n(),
                decomp.num_parts(),
                decomp.d()
            )));
        }
        for q in 0..self.m {
            let want = (self.d * decomp.parts()[q].len()) as u64;
            let got = self.col_sum(q);
            if got != want {
                return Err(EstimatorError::NotAdmissible(format!("column {q} sums to {got}, expected {want}")));
            }
        }
        Ok(())
    }
}

/// `Q_iq = sum_{j in L^(q)} M_ij`.
pub fn project_q(m: &RegularMatrix, decomp: &EllDecomposition) -> QMatrix {
    assert_eq!(m.n(), decomp.n(), "dimension mismatch");
    let parts = decomp.num_parts();
    let part_of = decomp.part_of();
    let n = m.n();
    let mut entries = vec![0u32; n * parts];
    for i in 0..n {
        for &j in m.row(i) {
            entries[i * parts + part_of[j]] += 1;
        }
    }
    QMatrix { n, m: parts, d: m.d(), entries }
}

/// `floor(log2(a / b))` for positive integers.
pub fn floor_log2_ratio(a: u128, b: u128) -> i64 {
    assert!(a > 0 && b > 0);
    let la = 128 - a.leading_zeros() as i64;
    let lb = 128 - b.leading_zeros() as i64;
    let t = la - lb;
    // 2^t <= a/b  <=>  a >= b 2^t (or a 2^-t >= b)
    let ge = |t: i64| -> bool {
        if t >= 0 {
            b.checked_shl(t as u32).is_some_and(|bt| bt >> t == b && a >= bt) || (b.checked_shl(t as u32).is_none())
        } else {
            a.checked_shl((-t) as u32).is_none_or(|at| at >> (-t) != a || at >= b)
        }
    };
    if ge(t) {
        t
    } else {
        t - 1
    }
}

/// Exact description of a truncated weight and its dyadic bucket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruncatedWeight {
    pub value: f64,
    pub bucket: i64,
    pub large: bool,
}

/// Truncated weight of a part of size `size` and height `h`.
pub fn truncated_weight(kind: PartKind, h: usize, size: usize, n: usize, d: usize) -> TruncatedWeight {
    let (h128, s, n128, d128) = (h as u128, size as u128, n as u128, d as u128);
    // |L| >= d^{-1/3} n  <=>  |L|^3 d >= n^3
    let large = s * s * s * d128 >= n128 * n128 * n128;
    let (value, bucket) = match (kind, large) {
        (PartKind::Regular, true) => (h as f64 * size as f64 / n as f64, floor_log2_ratio(h128 * s, n128)),
        (PartKind::Regular, false) => (h as f64 / d as f64, floor_log2_ratio(h128, d128)),
        (PartKind::Spread, true) => {
            // floor(log2 sqrt(r)) = floor(floor(log2 r) / 2)
            let b2 = floor_log2_ratio(h128 * h128 * d128 * s, n128);
            (h as f64 * (d as f64 * size as f64 / n as f64).sqrt(), b2.div_euclid(2))
        }
        (PartKind::Spread, false) => (h as f64, floor_log2_ratio(h128, 1)),
    };
    TruncatedWeight { value, bucket, large }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WSet {
    pub parts: Vec<usize>,
    pub size: usize,
    pub size_below: usize,
    pub size_above: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorBundle {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    /// `w_iq`, row-major.
    pub w: Vec<f64>,
    pub sb: Vec<f64>,
    pub log_sb: Vec<f64>,
    pub wtilde: Vec<TruncatedWeight>,
    pub log_te: Vec<f64>,
    /// `min { 1/w~_q : Q_iq != 0 }` per row, in logs.
    pub log_sb_tilde: Vec<f64>,
    pub b_min: i64,
    pub b_max: i64,
    pub b_of_row: Vec<i64>,
    pub wsets: BTreeMap<i64, WSet>,
    pub eta_i: Vec<f64>,
    pub eta: f64,
}

/// `w_iq`: `h Q_iq / d` on regular parts, `h sqrt(Q_iq)` on spread parts.
pub fn weight(kind: PartKind, h: usize, q_iq: u32, d: usize) -> f64 {
    match kind {
        PartKind::Regular => h as f64 * q_iq as f64 / d as f64,
        PartKind::Spread => h as f64 * (q_iq as f64).sqrt(),
    }
}

pub fn compute_bundle(decomp: &EllDecomposition, q: &QMatrix) -> Result<EstimatorBundle, EstimatorError> {
    q.check_admissible(decomp)?;
    let (n, m, d) = (decomp.n(), decomp.num_parts(), decomp.d());
    let parts = decomp.parts();
    let mut w = vec![0.0; n * m];
    let mut sb = vec![0.0; n];
    let mut log_sb = vec![0.0; n];
    for i in 0..n {
        let mut max_w: f64 = 0.0;
        for (p, part) in parts.iter().enumerate() {
            let v = weight(part.kind, part.height(), q.get(i, p), d);
            w[i * m + p] = v;
            max_w = max_w.max(v);
        }
        // min(1, min_q 1/w_iq) with 1/0 = inf
        sb[i] = if max_w > 1.0 { 1.0 / max_w } else { 1.0 };
        log_sb[i] = sb[i].ln();
    }
    let wtilde: Vec<TruncatedWeight> = parts.iter().map(|p| truncated_weight(p.kind, p.height(), p.len(), n, d)).collect();
    let b_min = floor_log2_ratio(1, d as u128);
    let mut log_te = vec![0.0; n];
    let mut log_sb_tilde = vec![0.0; n];
    let mut b_of_row = vec![i64::MIN; n];
    for i in 0..n {
        let mut lt = 0.0;
        let mut best = f64::INFINITY;
        for p in 0..m {
            let qi = q.get(i, p);
            if qi == 0 {
                continue;
            }
            let wt = wtilde[p];
            lt -= qi as f64 / d as f64 * wt.value.ln();
            best = best.min(-wt.value.ln());
            b_of_row[i] = b_of_row[i].max(wt.bucket);
        }
        log_te[i] = lt;
        log_sb_tilde[i] = best;
    }
    let b_max = *b_of_row.iter().max().unwrap_or(&b_min);
    let mut wsets: BTreeMap<i64, WSet> = BTreeMap::new();
    for b in b_min..=b_max {
        wsets.insert(b, WSet { parts: Vec::new(), size: 0, size_below: 0, size_above: 0 });
    }
    for (p, wt) in wtilde.iter().enumerate() {
        let e = wsets.get_mut(&wt.bucket).expect("bucket within [b_min, b_max]");
        e.parts.push(p);
        e.size += parts[p].len();
    }
    let mut below = 0;
    for ws in wsets.values_mut() {
        below += ws.size;
        ws.size_below = below;
        ws.size_above = n - below;
    }
    // eta_i = (1/d) sum_b min(sum_{b_q <= b} Q_iq, sum_{b_q > b} Q_iq)
    let nb = (b_max - b_min + 1) as usize;
    let mut eta_i = vec![0.0; n];
    let mut bucket_sum = vec![0u64; nb];
    for i in 0..n {
        bucket_sum.iter_mut().for_each(|v| *v = 0);
        for p in 0..m {
            bucket_sum[(wtilde[p].bucket - b_min) as usize] += q.get(i, p) as u64;
        }
        let mut acc = 0u64;
        let mut tot = 0u64;
        for &v in &bucket_sum {
            acc += v;
            tot += acc.min(d as u64 - acc);
        }
        eta_i[i] = tot as f64 / d as f64;
    }
    let eta = eta_i.iter().sum();
    Ok(EstimatorBundle { n, m, d, w, sb, log_sb, wtilde, log_te, log_sb_tilde, b_min, b_max, b_of_row, wsets, eta_i, eta })
}

impl EstimatorBundle {
    /// `sum_b min(|W_b^1|, |W_b^2|)`.
    pub fn wset_balance(&self) -> usize {
        self.wsets.values().map(|w| w.size_below.min(w.size_above)).sum()
    }

    /// Smallest `C` with `prod SB <= C^n 2^{-eta} prod TE` (at least 1).
    pub fn measured_sb_te_constant(&self) -> f64 {
        let lhs: f64 = self.log_sb.iter().sum();
        let te: f64 = self.log_te.iter().sum();
        let ex = (lhs + self.eta * std::f64::consts::LN_2 - te) / self.n as f64;
        ex.max(0.0).exp()
    }

    /// Rows violating `SB~_i <= 2^{-eta_i + 1} TE_i` (with relative slack
    /// `tol` in log space).
    pub fn sb_tilde_violations(&self, tol: f64) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.log_sb_tilde[i] > (1.0 - self.eta_i[i]) * std::f64::consts::LN_2 + self.log_te[i] + tol)
            .collect()
    }

    /// Rows violating `SB~_i >= SB_i / d`.
    pub fn sb_tilde_lower_violations(&self, tol: f64) -> Vec<usize> {
        let ld = (self.d as f64).ln();
        (0..self.n).filter(|&i| self.log_sb_tilde[i] < self.log_sb[i] - ld - tol).collect()
    }

    /// Entries with `Q_iq >= 1` and `w_iq < w~_q / d` (relative slack `tol`).
    pub fn pointwise_weight_violations(&self, q: &QMatrix, tol: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for p in 0..self.m {
                if q.get(i, p) >= 1 && self.w[i * self.m + p] < self.wtilde[p].value / self.d as f64 * (1.0 - tol) {
                    out.push((i, p));
                }
            }
        }
        out
    }

    /// Smallest `C` such that, for every w-set, the part sizes sorted in
    /// non-increasing order satisfy `N_s <= C |W_b| exp(-s/C)`, `s >= 0`.
    pub fn measured_majorization_constant(&self, decomp: &EllDecomposition) -> f64 {
        let mut worst: f64 = 0.0;
        for ws in self.wsets.values() {
            if ws.size == 0 {
                continue;
            }
            let mut sizes: Vec<usize> = ws.parts.iter().map(|&p| decomp.parts()[p].len()).collect();
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            for (s, &nsz) in sizes.iter().enumerate() {
                let target = nsz as f64 / ws.size as f64;
                worst = worst.max(solve_geometric(s as f64, target));
            }
        }
        worst
    }
}

/// Smallest `C > 0` with `C exp(-s/C) >= target` (the left side increases in C).
fn solve_geometric(s: f64, target: f64) -> f64 {
    let f = |c: f64| c * (-s / c).exp();
    let (mut lo, mut hi) = (1e-12, 1.0);
    while f(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardWitness {
    /// Heavy column with too many light rows.
    Column(usize),
    /// Part subset failing the two-sided row condition.
    Subset(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StandardReport {
    pub holds: bool,
    pub witness: Option<StandardWitness>,
    /// All nonempty subsets were checked.
    pub exhaustive: bool,
    pub subsets_checked: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StandardOptions {
    pub max_exhaustive_parts: usize,
    pub random_subsets: usize,
    pub seed: u64,
}

impl Default for StandardOptions {
    fn default() -> Self {
        StandardOptions { max_exhaustive_parts: 20, random_subsets: 256, seed: 0 }
    }
}

/// Conditions 1 and 2 of the standard class. Subsets `J` are exhaustive for
/// `m <= max_exhaustive_parts`; otherwise prefixes and suffixes in the
/// truncated-weight order (`wtilde_order`) plus random subsets are checked.
pub fn is_standard(q: &QMatrix, c_row: f64, c_two_sided: f64, wtilde_order: Option<&[usize]>, opts: &StandardOptions) -> StandardReport {
    let (n, m, d) = (q.n, q.m, q.d);
    let nf = n as f64;
    let col: Vec<u64> = (0..m).map(|p| q.col_sum(p)).collect();
    // condition 1
    for p in 0..m {
        let c = col[p] as f64;
        if c * c >= d as f64 * nf * nf {
            let light = (0..n).filter(|&i| (q.get(i, p) as f64) < c_row * c / nf).count() as f64;
            if light * light * d as f64 > nf * nf {
                return StandardReport { holds: false, witness: Some(StandardWitness::Column(p)), exhaustive: m <= opts.max_exhaustive_parts, subsets_checked: 0 };
            }
        }
    }
    // distinct rows with multiplicities
    let mut rows: BTreeMap<&[u32], usize> = BTreeMap::new();
    for i in 0..n {
        *rows.entry(q.row(i)).or_default() += 1;
    }
    let rows: Vec<(&[u32], usize)> = rows.into_iter().collect();
    let dn = (d * n) as u64;
    let check = |sums: &[u32], kappa: u64| -> bool {
        let lo1 = c_two_sided * kappa as f64 / nf;
        let lo2 = c_two_sided * (dn - kappa) as f64 / nf;
        let cnt: usize = rows.iter().zip(sums).filter(|(_, &s)| s as f64 >= lo1 && (d as u32 - s) as f64 >= lo2).map(|(r, _)| r.1).sum();
        let need = c_two_sided * (kappa.min(dn - kappa).min(n as u64)) as f64;
        cnt as f64 >= need
    };
    let mut checked = 0u64;
    if m <= opts.max_exhaustive_parts {
        // Gray-code walk over all nonempty subsets
        let mut sums = vec![0u32; rows.len()];
        let mut kappa = 0u64;
        let mut mask = 0u64;
        for g in 1u64..(1u64 << m) {
            let bit = g.trailing_zeros() as usize;
            mask ^= 1 << bit;
            let adding = mask >> bit & 1 == 1;
            for (s, r) in sums.iter_mut().zip(&rows) {
                if adding {
                    *s += r.0[bit];
                } else {
                    *s -= r.0[bit];
                }
            }
            if adding {
                kappa += col[bit];
            } else {
                kappa -= col[bit];
            }
            checked += 1;
            if !check(&sums, kappa) {
                let subset = (0..m).filter(|&b| mask >> b & 1 == 1).collect();
                return StandardReport { holds: false, witness: Some(StandardWitness::Subset(subset)), exhaustive: true, subsets_checked: checked };
            }
        }
        return StandardReport { holds: true, witness: None, exhaustive: true, subsets_checked: checked };
    }
    let order: Vec<usize> = wtilde_order.map_or_else(|| (0..m).collect(), |o| o.to_vec());
    let mut subsets: Vec<Vec<usize>> = Vec::new();
    for t in 1..=m {
        subsets.push(order[..t].to_vec());
        if t < m {
            subsets.push(order[t..].to_vec());
        }
    }
    let mut rng = rng_from(opts.seed, crate::rng::Module::Standard as u64);
    for _ in 0..opts.random_subsets {
        let s: Vec<usize> = (0..m).filter(|_| rng.random::<bool>()).collect();
        if !s.is_empty() {
            subsets.push(s);
        }
    }
    for s in subsets {
        let sums: Vec<u32> = rows.iter().map(|r| s.iter().map(|&p| r.0[p]).sum()).collect();
        let kappa: u64 = s.iter().map(|&p| col[p]).sum();
        checked += 1;
        if !check(&sums, kappa) {
            return StandardReport { holds: false, witness: Some(StandardWitness::Subset(s)), exhaustive: false, subsets_checked: checked };
        }
    }
    StandardReport { holds: true, witness: None, exhaustive: false, subsets_checked: checked }
}

/// Parts sorted by truncated weight (ties by index).
pub fn wtilde_order(bundle: &EstimatorBundle) -> Vec<usize> {
    let mut o: Vec<usize> = (0..bundle.m).collect();
    o.sort_by(|&a, &b| bundle.wtilde[a].value.total_cmp(&bundle.wtilde[b].value).then(a.cmp(&b)));
    o
}

/// Empirical concentration function: the largest fraction of samples in a
/// closed disk of radius `t` centered at a sample.
pub fn levy_estimate(samples: &[Complex64], t: f64) -> Result<f64, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::InvalidInput("no samples".into()));
    }
    if t.is_nan() || t <= 0.0 {
        return Err(EstimatorError::InvalidInput("t must be positive".into()));
    }
    Ok(max_ball_at_points(samples, t).0 as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ell::{decompose, KVector, Lat};
    use crate::rng::rng_from;

    fn dec_from(coords: Vec<Lat>, k: u128, d: usize) -> EllDecomposition {
        decompose(&KVector::new(k, coords).unwrap(), d).unwrap()
    }

    fn sorted_parts(dec: &EllDecomposition) -> Vec<Vec<usize>> {
        (0..dec.num_parts())
            .map(|p| {
                let mut v = dec.part_indices(p).to_vec();
                v.sort();
                v
            })
            .collect()
    }

    #[test]
    fn project_single_part() {
        let m = RegularMatrix::circulant(4, &[0, 1]).unwrap();
        let dec = dec_from(vec![(0, 0), (1, 0), (0, 1), (1, 1)], 1, 2);
        assert_eq!(dec.num_parts(), 1);
        let q = project_q(&m, &dec);
        q.check_admissible(&dec).unwrap();
        assert!((0..4).all(|i| q.get(i, 0) == 2));
    }

    #[test]
    fn project_two_blocks() {
        // values 0,0,9,9 with d = 2: order-0 spread {0,2}, order-1 spread {1,3}
        let dec = dec_from(vec![(0, 0), (0, 0), (9, 0), (9, 0)], 1, 2);
        assert_eq!(sorted_parts(&dec), vec![vec![0, 2], vec![1, 3]]);
        let m = RegularMatrix::circulant(4, &[0, 1]).unwrap();
        let q = project_q(&m, &dec);
        q.check_admissible(&dec).unwrap();
        for i in 0..4 {
            assert_eq!(q.row(i), &[1, 1]);
        }
    }

    #[test]
    fn project_rejects_bad_shapes() {
        let dec = dec_from(vec![(0, 0), (0, 0), (9, 0), (9, 0)], 1, 2);
        assert!(QMatrix::new(4, 2, 2, vec![2, 0, 2, 0, 2, 0, 2, 0]).unwrap().check_admissible(&dec).is_err());
        assert!(QMatrix::new(4, 2, 2, vec![2, 0, 2, 0, 2, 0, 2]).is_err());
        assert!(QMatrix::new(2, 1, 2, vec![2, 1]).is_err());
    }

    #[test]
    fn floor_log2_ratio_cases() {
        assert_eq!(floor_log2_ratio(1, 2), -1);
        assert_eq!(floor_log2_ratio(1, 3), -2);
        assert_eq!(floor_log2_ratio(1, 1), 0);
        assert_eq!(floor_log2_ratio(7, 2), 1);
        assert_eq!(floor_log2_ratio(8, 2), 2);
        assert_eq!(floor_log2_ratio(1, 1000), -10);
        for a in 1u128..200 {
            for b in 1u128..50 {
                let want = ((a as f64) / (b as f64)).log2().floor() as i64;
                // exact powers of two are safe in f64 at this size
                assert_eq!(floor_log2_ratio(a, b), want, "{a}/{b}");
            }
        }
    }

    #[test]
    fn weight_examples() {
        // one regular part of height 2 (values 0 and 1, d = 8)
        let dec = dec_from(vec![(0, 0), (1, 0)], 1, 8);
        assert_eq!((dec.parts()[0].kind, dec.parts()[0].height()), (PartKind::Regular, 2));
        let q = QMatrix::new(2, 1, 8, vec![8, 8]).unwrap();
        let b = compute_bundle(&dec, &q).unwrap();
        assert_eq!(b.w[0], 2.0);
        assert_eq!(b.sb[0], 0.5);
        // one spread part of height 3 with Q = 4: w = 3 sqrt(4)
        let dec = dec_from(vec![(0, 0), (10, 0), (20, 0)], 1, 4);
        assert_eq!((dec.parts()[0].kind, dec.parts()[0].height()), (PartKind::Spread, 3));
        let q = QMatrix::new(3, 1, 4, vec![4, 4, 4]).unwrap();
        let b = compute_bundle(&dec, &q).unwrap();
        assert_eq!(b.w[0], 6.0);
        assert!((b.sb[0] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(b.eta, 0.0);
    }

    #[test]
    fn truncated_weight_branches() {
        // n = 8, d = 8: large iff |L|^3 * 8 >= 512, i.e. |L| >= 4
        let t = truncated_weight(PartKind::Regular, 2, 4, 8, 8);
        assert!(t.large);
        assert_eq!((t.value, t.bucket), (1.0, 0));
        let t = truncated_weight(PartKind::Regular, 2, 3, 8, 8);
        assert!(!t.large);
        assert_eq!((t.value, t.bucket), (0.25, -2));
        // spread large: 3 sqrt(8 * 4 / 8) = 6, bucket 2
        let t = truncated_weight(PartKind::Spread, 3, 4, 8, 8);
        assert_eq!((t.value, t.bucket), (6.0, 2));
        let t = truncated_weight(PartKind::Spread, 3, 1, 8, 8);
        assert_eq!((t.value, t.bucket), (3.0, 1));
    }

    #[test]
    fn eta_hand_trace() {
        // y = (1, 0, 0), d = 2: regular parts of (size, height) (2, 2) and (1, 1)
        let dec = dec_from(vec![(1, 0), (0, 0), (0, 0)], 1, 2);
        let parts: Vec<(PartKind, usize, usize)> = dec.parts().iter().map(|p| (p.kind, p.len(), p.height())).collect();
        assert_eq!(parts, vec![(PartKind::Regular, 2, 2), (PartKind::Regular, 1, 1)]);
        let q = QMatrix::new(3, 2, 2, vec![1, 1, 1, 1, 2, 0]).unwrap();
        let b = compute_bundle(&dec, &q).unwrap();
        assert_eq!(b.wtilde[0].value, 1.0);
        assert_eq!(b.wtilde[1].value, 0.5);
        assert_eq!((b.b_min, b.b_max), (-1, 0));
        assert_eq!(b.eta_i, vec![0.5, 0.5, 0.0]);
        assert_eq!(b.eta, 1.0);
        assert_eq!(b.wsets[&-1].parts, vec![1]);
        assert_eq!((b.wsets[&-1].size_below, b.wsets[&-1].size_above), (1, 2));
        assert!((b.log_te[0] - 0.5 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(b.sb_tilde_violations(1e-12).is_empty());
        assert!(b.sb_tilde_lower_violations(1e-12).is_empty());
    }

    #[test]
    fn standard_examples() {
        let q = QMatrix::new(4, 1, 3, vec![3; 4]).unwrap();
        let r = is_standard(&q, 0.5, 0.5, None, &StandardOptions::default());
        assert!(r.holds);
        // all mass in one column: condition 2 is vacuous for J = {0} and J = {1}
        let q = QMatrix::new(4, 2, 4, vec![4, 0, 4, 0, 4, 0, 4, 0]).unwrap();
        assert!(is_standard(&q, 0.5, 0.5, None, &StandardOptions::default()).holds);
        // six rows (4,0), two rows (0,4): J = {0} has kappa = 24 and no row is
        // split between J and its complement
        let mut e = vec![4, 0].repeat(6);
        e.extend([0, 4, 0, 4]);
        let q = QMatrix::new(8, 2, 4, e).unwrap();
        let r = is_standard(&q, 0.5, 0.5, None, &StandardOptions::default());
        assert!(!r.holds && r.exhaustive);
        assert_eq!(r.witness, Some(StandardWitness::Subset(vec![0])));
        // heavy column 0 (sum 37 >= 2 * 16) with 9 > 16 / 2 rows below the mean
        let mut e = vec![4, 0].repeat(7);
        e.extend([1, 3].repeat(9));
        let q = QMatrix::new(16, 2, 4, e).unwrap();
        let r = is_standard(&q, 1.0, 0.0, None, &StandardOptions::default());
        assert_eq!(r.witness, Some(StandardWitness::Column(0)));
        assert!(is_standard(&q, 0.25, 0.0, None, &StandardOptions::default()).holds);
    }

    #[test]
    fn standard_sampled_mode_agrees_on_small_inputs() {
        let mut e = vec![4, 0, 0].repeat(6);
        e.extend([0, 2, 2, 0, 2, 2]);
        let q = QMatrix::new(8, 3, 4, e).unwrap();
        let full = is_standard(&q, 0.5, 0.5, None, &StandardOptions::default());
        let sampled = is_standard(&q, 0.5, 0.5, Some(&[2, 1, 0]), &StandardOptions { max_exhaustive_parts: 0, random_subsets: 64, seed: 1 });
        assert!(!full.holds && !sampled.holds);
        assert!(!sampled.exhaustive);
    }

    #[test]
    fn levy_examples() {
        assert_eq!(levy_estimate(&[Complex64::new(2.0, 1.0); 50], 0.1).unwrap(), 1.0);
        assert!(levy_estimate(&[], 0.1).is_err());
        let mut rng = rng_from(3, 0);
        let s: Vec<Complex64> = (0..10_000).map(|_| Complex64::new(rng.random_range(0..2) as f64, 0.0)).collect();
        let v = levy_estimate(&s, 0.4).unwrap();
        assert!((v - 0.5).abs() < 0.02);
        // uniform disk: between area ratio at t and at 2t
        let disk: Vec<Complex64> = std::iter::repeat_with(|| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .filter(|z| z.norm() <= 1.0)
            .take(20_000)
            .collect();
        let v = levy_estimate(&disk, 0.1).unwrap();
        assert!(v >= 0.01 * 0.8 && v <= 0.04 * 1.2, "{v}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn bundle_invariants_on_random_instances(seed in 0u64..10_000, n in 4usize..40, d in 1usize..4, spread in 1i128..30) {
            let d = d.min(n);
            let m = crate::sampler::sample_matrix(&mut rng_from(seed, 1), n, d, 2000).unwrap().0;
            let mut rng = rng_from(seed, 2);
            let coords: Vec<Lat> = (0..n).map(|_| (rng.random_range(0..spread), rng.random_range(0..spread))).collect();
            let dec = dec_from(coords, 4, d);
            let q = project_q(&m, &dec);
            q.check_admissible(&dec).unwrap();
            for i in 0..n {
                proptest::prop_assert_eq!(q.row(i).iter().map(|&v| v as usize).sum::<usize>(), d);
            }
            let b = compute_bundle(&dec, &q).unwrap();
            proptest::prop_assert!(b.sb.iter().all(|&v| v > 0.0 && v <= 1.0));
            proptest::prop_assert!(b.pointwise_weight_violations(&q, 1e-12).is_empty());
            proptest::prop_assert!(b.sb_tilde_lower_violations(1e-9).is_empty());
            for w in b.wsets.values() {
                proptest::prop_assert_eq!(w.size_below + w.size_above, n);
            }
        }

        #[test]
        fn weight_monotone_in_height(h in 1usize..50, extra in 1usize..50, qi in 0u32..30, d in 1usize..30) {
            for kind in [PartKind::Regular, PartKind::Spread] {
                let lo = weight(kind, h, qi, d);
                let hi = weight(kind, h + extra, qi, d);
                proptest::prop_assert!(hi >= lo);
                // SB = min(1, 1/max w) cannot increase
                let sb = |w: f64| if w > 1.0 { 1.0 / w } else { 1.0 };
                proptest::prop_assert!(sb(hi) <= sb(lo));
            }
        }
    }
}
