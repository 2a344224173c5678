//! Samplers for `M_{n,d}`, the per-part configuration multigraph and the
//! independent surrogate vector `Z`, plus exhaustive enumeration for tiny `n`.

use crate::ell::{EllDecomposition, Lat};
use crate::estimators::QMatrix;
use crate::graph::{RegularMatrix, RowMask};
use crate::rng::rng_from;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("rejection budget exhausted after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: u64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("enumeration guard: n={n} exceeds {max}")]
    TooLarge { n: usize, max: usize },
}

pub const DEFAULT_REJECTION_BUDGET: u64 = 1_000_000;
pub const ENUMERATE_MAX_N: usize = 6;

fn check_nd(n: usize, d: usize) -> Result<(), SamplerError> {
    if d == 0 || d > n {
        return Err(SamplerError::InvalidInput(format!("need 1 <= d <= n, got n={n}, d={d}")));
    }
    Ok(())
}

/// Uniform element of `M_{n,d}`: configuration pairing of half-edges,
/// restarted on the first repeated column within a row.
pub fn sample_uniform(n: usize, d: usize, seed: u64, budget: u64) -> Result<RegularMatrix, SamplerError> {
    sample_uniform_with(&mut rng_from(seed, 0), n, d, budget)
}

pub fn sample_uniform_with<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, budget: u64) -> Result<RegularMatrix, SamplerError> {
    check_nd(n, d)?;
    let mut pool: Vec<usize> = (0..n).flat_map(|j| std::iter::repeat_n(j, d)).collect();
    let total = pool.len();
    'attempt: for _ in 0..budget {
        // partial Fisher-Yates: slot t receives a uniform element of pool[t..]
        for i in 0..n {
            let row_start = i * d;
            for t in row_start..row_start + d {
                let s = rng.random_range(t..total);
                pool.swap(t, s);
                if pool[row_start..t].contains(&pool[t]) {
                    continue 'attempt;
                }
            }
        }
        let supports: Vec<Vec<usize>> = pool.chunks(d).map(|c| c.to_vec()).collect();
        return Ok(RegularMatrix::from_row_supports(n, d, &supports).expect("simple pairing is regular"));
    }
    Err(SamplerError::RejectionBudgetExceeded { attempts: budget })
}

/// Switch chain with uniform proposals over ordered edge pairs; invalid
/// proposals leave the state unchanged.
pub struct SwitchChain {
    m: RegularMatrix,
    accepted: u64,
    proposed: u64,
}

impl SwitchChain {
    pub fn new(start: RegularMatrix) -> Self {
        SwitchChain { m: start, accepted: 0, proposed: 0 }
    }

    pub fn state(&self) -> &RegularMatrix {
        &self.m
    }

    pub fn into_state(self) -> RegularMatrix {
        self.m
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn proposed(&self) -> u64 {
        self.proposed
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let (n, d) = (self.m.n(), self.m.d());
        let e1 = rng.random_range(0..n * d);
        let e2 = rng.random_range(0..n * d);
        let (i, i2) = (e1 / d, e2 / d);
        let (j, j2) = (self.m.row(i)[e1 % d], self.m.row(i2)[e2 % d]);
        self.proposed += 1;
        let ok = self.m.switch_in_place(i, j, i2, j2).is_ok();
        self.accepted += ok as u64;
        ok
    }

    /// Runs a fixed number of proposals. Stopping at a fixed number of
    /// accepted switches would instead sample the jump chain, whose law
    /// weights each matrix by its count of valid switches.
    pub fn run<R: Rng + ?Sized>(&mut self, rng: &mut R, steps: u64) {
        for _ in 0..steps {
            self.step(rng);
        }
    }
}

/// State after `steps` proposals started from `start`.
pub fn sample_mcmc(start: &RegularMatrix, steps: u64, seed: u64) -> RegularMatrix {
    let mut rng = rng_from(seed, 0);
    let mut chain = SwitchChain::new(start.clone());
    chain.run(&mut rng, steps);
    chain.into_state()
}

/// Burn-in heuristic: proposals made before a chain state is used as an
/// approximately uniform sample.
pub fn burn_in(n: usize, d: usize) -> u64 {
    20 * n as u64 * d as u64
}

/// How a matrix was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMethod {
    Rejection,
    Mcmc,
}

/// Rejection first; on budget exhaustion, a switch chain from the circulant
/// with offsets `0..d` run for [`burn_in`] proposals.
pub fn sample_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, budget: u64) -> Result<(RegularMatrix, SampleMethod), SamplerError> {
    check_nd(n, d)?;
    match sample_uniform_with(rng, n, d, budget) {
        Ok(m) => Ok((m, SampleMethod::Rejection)),
        Err(SamplerError::RejectionBudgetExceeded { .. }) => {
            let offsets: Vec<usize> = (0..d).collect();
            let start = RegularMatrix::circulant(n, &offsets).expect("circulant is regular");
            let mut chain = SwitchChain::new(start);
            chain.run(rng, burn_in(n, d));
            Ok((chain.into_state(), SampleMethod::Mcmc))
        }
        Err(e) => Err(e),
    }
}

/// Every element of `M_{n,d}` in lexicographic order of row supports.
pub fn enumerate_all(n: usize, d: usize) -> Result<Vec<RegularMatrix>, SamplerError> {
    if n > ENUMERATE_MAX_N {
        return Err(SamplerError::TooLarge { n, max: ENUMERATE_MAX_N });
    }
    check_nd(n, d)?;
    let subsets = k_subsets(n, d);
    let mut out = Vec::new();
    let mut cap = vec![d; n];
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    fn rec(row: usize, n: usize, d: usize, subsets: &[Vec<usize>], cap: &mut [usize], chosen: &mut Vec<usize>, out: &mut Vec<RegularMatrix>) {
        if row == n {
            let sup: Vec<Vec<usize>> = chosen.iter().map(|&s| subsets[s].clone()).collect();
            out.push(RegularMatrix::from_row_supports(n, d, &sup).expect("enumerated matrix is regular"));
            return;
        }
        let rows_left = n - row;
        for (si, s) in subsets.iter().enumerate() {
            if s.iter().any(|&j| cap[j] == 0) {
                continue;
            }
            for &j in s {
                cap[j] -= 1;
            }
            // every column must still be fillable by the remaining rows
            if cap.iter().all(|&c| c <= rows_left - 1) {
                chosen.push(si);
                rec(row + 1, n, d, subsets, cap, chosen, out);
                chosen.pop();
            }
            for &j in s {
                cap[j] += 1;
            }
        }
    }
    rec(0, n, d, &subsets, &mut cap, &mut chosen, &mut out);
    Ok(out)
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Bipartite multigraph adjacency with multiplicities, stored per row as
/// sorted `(column, multiplicity)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiGraphAdj {
    n: usize,
    m: usize,
    rows: Vec<Vec<(usize, u32)>>,
    is_simple: bool,
}

impl MultiGraphAdj {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_parts(&self) -> usize {
        self.m
    }

    pub fn is_simple(&self) -> bool {
        self.is_simple
    }

    pub fn row(&self, i: usize) -> &[(usize, u32)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> u32 {
        self.rows[i].iter().find(|e| e.0 == j).map_or(0, |e| e.1)
    }

    pub fn to_matrix(&self) -> Option<RegularMatrix> {
        if !self.is_simple {
            return None;
        }
        let d = self.rows.first().map_or(0, |r| r.len());
        let sup: Vec<Vec<usize>> = self.rows.iter().map(|r| r.iter().map(|e| e.0).collect()).collect();
        RegularMatrix::from_row_supports(self.n, d, &sup).ok()
    }

    /// `(A y)_i` numerators for `i` in `K`.
    pub fn apply_lattice(&self, y: &[Lat], k: &RowMask) -> Vec<Lat> {
        k.rows()
            .iter()
            .map(|&i| {
                self.rows[i].iter().fold((0i128, 0i128), |acc, &(j, c)| (acc.0 + c as i128 * y[j].0, acc.1 + c as i128 * y[j].1))
            })
            .collect()
    }
}

pub fn sample_multigraph(decomp: &EllDecomposition, q: &QMatrix, seed: u64) -> Result<MultiGraphAdj, SamplerError> {
    sample_multigraph_with(&mut rng_from(seed, 0), decomp, q)
}

/// Per part `q`: row half-edges `(i, w)`, `w <= Q_iq`, in lexicographic
/// order are matched to a uniform shuffle of the column half-edges
/// `L^(q) x [d]`.
pub fn sample_multigraph_with<R: Rng + ?Sized>(rng: &mut R, decomp: &EllDecomposition, q: &QMatrix) -> Result<MultiGraphAdj, SamplerError> {
    q.check_admissible(decomp).map_err(|e| SamplerError::InvalidInput(e.to_string()))?;
    let (n, m, d) = (decomp.n(), decomp.num_parts(), decomp.d());
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n * d);
    let mut cols: Vec<usize> = Vec::new();
    for p in 0..m {
        let mut part: Vec<usize> = decomp.part_indices(p).to_vec();
        part.sort_unstable();
        cols.clear();
        for &j in &part {
            cols.extend(std::iter::repeat_n(j, d));
        }
        cols.shuffle(rng);
        let mut pos = 0;
        for i in 0..n {
            for _ in 0..q.get(i, p) {
                pairs.push((i, cols[pos]));
                pos += 1;
            }
        }
    }
    pairs.sort_unstable();
    let mut rows: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n];
    let mut simple = true;
    for (i, j) in pairs {
        let r = &mut rows[i];
        match r.last_mut() {
            Some(last) if last.0 == j => {
                last.1 += 1;
                simple = false;
            }
            _ => r.push((j, 1)),
        }
    }
    Ok(MultiGraphAdj { n, m, rows, is_simple: simple })
}

/// Draw of the surrogate vector `Z` restricted to `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateDraw {
    pub z: Vec<Complex64>,
    pub z_lattice: Vec<Lat>,
    pub exact_count_flag: bool,
}

pub fn sample_z(decomp: &EllDecomposition, q: &QMatrix, k: &RowMask, seed: u64) -> Result<SurrogateDraw, SamplerError> {
    sample_z_with(&mut rng_from(seed, 0), decomp, q, k)
}

/// `Z_i = sum_q sum_{w <= Q_iq} y(L^q_xi)` with `P(xi = p) = |L^q_p| / |L^(q)|`.
/// Level labels are drawn for every row so that the exact-count event can be
/// evaluated over all of `Delta_q`.
pub fn sample_z_with<R: Rng + ?Sized>(rng: &mut R, decomp: &EllDecomposition, q: &QMatrix, k: &RowMask) -> Result<SurrogateDraw, SamplerError> {
    q.check_admissible(decomp).map_err(|e| SamplerError::InvalidInput(e.to_string()))?;
    if k.n() != decomp.n() {
        return Err(SamplerError::InvalidInput("row mask dimension mismatch".into()));
    }
    let (n, m, d) = (decomp.n(), decomp.num_parts(), decomp.d());
    let mut acc = vec![(0i128, 0i128); n];
    let mut exact = true;
    for p in 0..m {
        let sets = decomp.part_level_sets(p);
        let size = decomp.parts()[p].len();
        // cumulative level sizes for inverse-CDF lookup
        let mut cum = Vec::with_capacity(sets.len());
        let mut c = 0;
        for l in sets {
            c += l.len();
            cum.push(c);
        }
        let mut counts = vec![0usize; sets.len()];
        for (i, a) in acc.iter_mut().enumerate() {
            for _ in 0..q.get(i, p) {
                let u = rng.random_range(0..size);
                let lvl = cum.partition_point(|&c| c <= u);
                counts[lvl] += 1;
                let v = sets[lvl].value;
                a.0 += v.0;
                a.1 += v.1;
            }
        }
        exact &= counts.iter().zip(sets).all(|(&c, l)| c == d * l.len());
    }
    let z_lattice: Vec<Lat> = k.rows().iter().map(|&i| acc[i]).collect();
    let kk = decomp.k() as f64;
    let z = z_lattice.iter().map(|v| Complex64::new(v.0 as f64 / kk, v.1 as f64 / kk)).collect();
    Ok(SurrogateDraw { z, z_lattice, exact_count_flag: exact })
}

/// `log P(one fixed realization of the pairing)`:
/// `sum_q [ |L^q| ln d! + sum_i ln Q_iq! - ln (d |L^q|)! ]`.
pub fn log_pairing_weight(decomp: &EllDecomposition, q: &QMatrix) -> f64 {
    let d = decomp.d() as f64;
    let lf = |x: f64| ln_gamma(x + 1.0);
    (0..decomp.num_parts())
        .map(|p| {
            let l = decomp.parts()[p].len() as f64;
            let rows: f64 = (0..decomp.n()).map(|i| lf(q.get(i, p) as f64)).sum();
            l * lf(d) + rows - lf(d * l)
        })
        .sum()
}

/// Probability that the multigraph is simple, given the class size
/// `|M_{n,d}(Q, y)|`.
pub fn simple_probability(class_size: usize, decomp: &EllDecomposition, q: &QMatrix) -> f64 {
    class_size as f64 * log_pairing_weight(decomp, q).exp()
}
