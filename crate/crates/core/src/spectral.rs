//! Smallest singular pairs of `(M - zI)^K`, eigenpairs of `M` and the
//! eigenvector delocalization census.
//!
//! Every pair handed back is re-checked by a direct residual computation
//! through [`RegularMatrix::shifted_apply`].

use crate::ball::max_ball_bracket;
use crate::graph::{ComplexShift, GraphError, RegularMatrix, RowMask};
use crate::rng::{trial_rng, Module};
use crate::taxonomy::{many_levels_verdict, DichotomyVerdict, TaxonomyError, TaxonomyParams, XStar};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("n = {n} exceeds the dense solver budget {budget}")]
    OverBudget { n: usize, budget: usize },
    #[error("dense solver failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

type Result<T> = std::result::Result<T, SpectralError>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn scale(v: &mut [Complex64], s: f64) {
    v.iter_mut().for_each(|c| *c *= s);
}

/// Default shift grid: `{0, ±√d, ±i√d, √d ln d (1+i)/2}`.
pub fn default_z_grid(d: usize) -> Vec<Complex64> {
    let s = (d as f64).sqrt();
    let l = (d as f64).ln();
    vec![
        ZERO,
        Complex64::new(s, 0.0),
        Complex64::new(-s, 0.0),
        Complex64::new(0.0, s),
        Complex64::new(0.0, -s),
        Complex64::new(s * l / 2.0, s * l / 2.0),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralProbe {
    /// `‖(M - zI)^K x‖₂` for the returned unit `x`; an upper bound on the
    /// true smallest singular value.
    pub sigma_min: f64,
    pub x: Vec<Complex64>,
    /// Recomputed directly from `x`; equals `sigma_min` up to rounding.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Applies `A^H A + mu` with `A = (M - zI)^K`.
fn normal_apply(m: &RegularMatrix, z: ComplexShift, k: &RowMask, mu: f64, x: &[Complex64]) -> Result<Vec<Complex64>> {
    let y = m.shifted_apply(z, k, x)?;
    let mut out = m.shifted_apply_adjoint(z, k, &y)?;
    if mu != 0.0 {
        out.iter_mut().zip(x).for_each(|(o, xi)| *o += mu * xi);
    }
    Ok(out)
}

/// Conjugate gradients for `(A^H A + mu) y = b`, started at zero.
fn cg_normal(m: &RegularMatrix, z: ComplexShift, k: &RowMask, mu: f64, b: &[Complex64], rel_tol: f64, max_iter: usize) -> Result<Vec<Complex64>> {
    let n = b.len();
    let mut y = vec![ZERO; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r).re;
    let stop = rel_tol * rel_tol * rr;
    for _ in 0..max_iter {
        if rr <= stop || rr == 0.0 {
            break;
        }
        let ap = normal_apply(m, z, k, mu, &p)?;
        let pap = dot(&p, &ap).re;
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            y[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r).re;
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(y)
}

/// Inverse iteration on the normal operator of `(M - zI)^K`, inner solves
/// by conjugate gradients with a regularizing shift that follows the current
/// estimate down. `sigma_min` is always the directly computed
/// `‖(M - zI)^K x‖` of the returned iterate.
pub fn smallest_sv_probe(m: &RegularMatrix, z: Complex64, k: &RowMask, tol: f64, max_iter: usize, seed: u64) -> Result<SpectralProbe> {
    if !(tol > 0.0) {
        return Err(SpectralError::InvalidInput("tol must be positive".into()));
    }
    let n = m.n();
    if k.n() != n {
        return Err(SpectralError::InvalidInput("row mask dimension mismatch".into()));
    }
    let zs = ComplexShift(z);
    let scale_op = m.d() as f64 + z.norm();
    let floor = 1e-14 * scale_op.max(1.0);
    let mut rng = trial_rng(seed, 0, Module::Spectral);
    let mut x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
    let nx = norm(&x);
    scale(&mut x, 1.0 / nx);
    let residual_of = |x: &[Complex64]| -> Result<f64> { Ok(norm(&m.shifted_apply(zs, k, x)?)) };
    let mut sigma = residual_of(&x)?;
    let mut best = (sigma, x.clone());
    let inner = n.clamp(10, 400);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        if sigma <= floor {
            converged = true;
            break;
        }
        let mu = (0.1 * sigma * sigma).max(floor * floor);
        let mut y = cg_normal(m, zs, k, mu, &x, 1e-12, inner)?;
        let ny = norm(&y);
        if !(ny > 0.0 && ny.is_finite()) {
            break;
        }
        scale(&mut y, 1.0 / ny);
        let s_new = residual_of(&y)?;
        x = y;
        let prev = sigma;
        sigma = s_new;
        if sigma < best.0 {
            best = (sigma, x.clone());
        }
        if sigma <= floor || (prev - sigma).abs() <= tol * sigma.max(floor) {
            converged = true;
            break;
        }
    }
    let (sigma, x) = best;
    let residual = residual_of(&x)?;
    Ok(SpectralProbe { sigma_min: sigma.max(residual), x, residual, iterations, converged })
}

/// Smallest singular value of `(M - zI)^K` by a dense SVD; `0` when
/// `|K| < n`. Cross-check for [`smallest_sv_probe`].
pub fn smallest_sv_dense(m: &RegularMatrix, z: Complex64, k: &RowMask) -> Result<f64> {
    use ndarray::Array2;
    use ndarray_linalg::SVD;
    let n = m.n();
    if k.len() < n {
        return Ok(0.0);
    }
    let mut a = Array2::<Complex64>::zeros((k.len(), n));
    for (r, &i) in k.rows().iter().enumerate() {
        for &j in m.row(i) {
            a[[r, j]] += 1.0;
        }
        a[[r, i]] -= z;
    }
    let (_, s, _) = a.svd(false, false).map_err(|e| SpectralError::Solver(e.to_string()))?;
    Ok(s.iter().cloned().fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenPair {
    pub lambda: Complex64,
    /// Unit right eigenvector.
    pub x: Vec<Complex64>,
    /// `‖Mx - λx‖₂` computed through `shifted_apply`.
    pub residual: f64,
    /// Residual exceeded `tol·d`.
    pub flagged: bool,
}

pub const DENSE_BUDGET: usize = 4000;

/// All eigenpairs of `M` from a dense nonsymmetric solver, each certified by
/// its residual.
pub fn eigenpairs(m: &RegularMatrix, tol: f64, budget: usize) -> Result<Vec<EigenPair>> {
    use ndarray::Array2;
    use ndarray_linalg::Eig;
    if !(tol > 0.0) {
        return Err(SpectralError::InvalidInput("tol must be positive".into()));
    }
    let n = m.n();
    if n > budget {
        return Err(SpectralError::OverBudget { n, budget });
    }
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for &j in m.row(i) {
            a[[i, j]] = 1.0;
        }
    }
    let (vals, vecs) = a.eig().map_err(|e| SpectralError::Solver(e.to_string()))?;
    let full = RowMask::full(n);
    let limit = tol * m.d() as f64;
    (0..n)
        .into_par_iter()
        .map(|c| {
            let lambda = vals[c];
            let mut x: Vec<Complex64> = vecs.column(c).iter().cloned().collect();
            let nx = norm(&x);
            scale(&mut x, 1.0 / nx);
            let residual = norm(&m.shifted_apply(ComplexShift(lambda), &full, &x)?);
            Ok(EigenPair { lambda, x, residual, flagged: !(residual <= limit) })
        })
        .collect()
}

/// Eigenpair near `shift` without a dense solve: start from the smallest
/// singular vector of `M - σI`, then Rayleigh quotient iteration with the
/// linear solves done by conjugate gradients on the normal equations.
pub fn eigenpair_near(m: &RegularMatrix, shift: Complex64, tol: f64, rounds: usize, seed: u64) -> Result<EigenPair> {
    let n = m.n();
    let full = RowMask::full(n);
    let limit = tol * m.d() as f64;
    let mut x = smallest_sv_probe(m, shift, &full, tol, 200, seed)?.x;
    let rayleigh = |x: &[Complex64]| -> Result<Complex64> { Ok(dot(x, &m.shifted_apply(ComplexShift(ZERO), &full, x)?)) };
    let mut lambda = rayleigh(&x)?;
    let mut residual = norm(&m.shifted_apply(ComplexShift(lambda), &full, &x)?);
    for _ in 0..rounds {
        if residual <= limit {
            break;
        }
        let zs = ComplexShift(lambda);
        let rhs = m.shifted_apply_adjoint(zs, &full, &x)?;
        let mut y = cg_normal(m, zs, &full, 0.0, &rhs, 1e-13, 4 * n)?;
        let ny = norm(&y);
        if !(ny > 0.0 && ny.is_finite()) {
            break;
        }
        scale(&mut y, 1.0 / ny);
        let l_new = rayleigh(&y)?;
        let r_new = norm(&m.shifted_apply(ComplexShift(l_new), &full, &y)?);
        if r_new >= residual {
            break;
        }
        x = y;
        lambda = l_new;
        residual = r_new;
    }
    Ok(EigenPair { lambda, x, residual, flagged: !(residual <= limit) })
}

/// `x` is a multiple of the all-ones vector up to `tol` in relative norm.
pub fn is_perron(x: &[Complex64], tol: f64) -> bool {
    let n = x.len() as f64;
    let mean: Complex64 = x.iter().sum::<Complex64>() / n;
    let dev = x.iter().map(|c| (c - mean).norm_sqr()).sum::<f64>().sqrt();
    dev <= tol * norm(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Gradual,
    VerySteep,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenvectorCensus {
    pub index: usize,
    pub lambda: Complex64,
    pub residual: f64,
    pub flagged: bool,
    /// Number of computed eigenvalues within the clustering tolerance.
    pub multiplicity: usize,
    /// Brackets on `max_λ |{i : |x_i - λ| ≤ ρ x*_{⌊a3 n⌋}}|`.
    pub ball_lower: usize,
    pub ball_upper: usize,
    /// `ball_upper / (δ n)`.
    pub ball_mass: f64,
    pub ball_ok: bool,
    pub branch: Branch,
    pub verdict: DichotomyVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DelocReport {
    pub n: usize,
    pub d: usize,
    pub rho: f64,
    pub delta: f64,
    pub q: usize,
    pub perron_excluded: usize,
    pub vectors: Vec<EigenvectorCensus>,
    pub frac_gradual: f64,
    pub frac_very_steep: f64,
    pub frac_neither: f64,
    /// Fraction of analyzed vectors whose ball count exceeds `δ n`
    /// (upper bracket).
    pub frac_ball_violations: f64,
    pub flagged_pairs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CensusOptions {
    pub tol: f64,
    /// Decay index `q`; `None` uses `p^{r0}`.
    pub q: Option<usize>,
    /// Eigenvalues closer than this count as one cluster.
    pub cluster_tol: f64,
    pub budget: usize,
}

impl Default for CensusOptions {
    fn default() -> Self {
        CensusOptions { tol: 1e-8, q: None, cluster_tol: 1e-6, budget: DENSE_BUDGET }
    }
}

/// Ball count bracket at radius `rho · x*_{⌊a3 n⌋}`, the same index as
/// `many_levels_verdict` uses.
pub fn ball_bracket(x: &[Complex64], rho: f64, params: &TaxonomyParams) -> (usize, usize) {
    let xs = XStar::full(x);
    max_ball_bracket(x, rho * xs.get(params.n3.max(1)))
}

pub fn delocalization_census(m: &RegularMatrix, rho: f64, delta: f64, params: &TaxonomyParams, opts: &CensusOptions) -> Result<DelocReport> {
    let n = m.n();
    if params.n != n || params.d != m.d() {
        return Err(SpectralError::InvalidInput("params do not match the matrix".into()));
    }
    let pairs = eigenpairs(m, opts.tol, opts.budget)?;
    censor_pairs(&pairs, m.d(), rho, delta, params, opts)
}

/// Census over precomputed pairs.
pub fn censor_pairs(pairs: &[EigenPair], d: usize, rho: f64, delta: f64, params: &TaxonomyParams, opts: &CensusOptions) -> Result<DelocReport> {
    let n = params.n;
    let q = opts.q.unwrap_or_else(|| params.p_pow(params.r0)).clamp(1, n);
    let multiplicity: Vec<usize> = pairs.iter().map(|p| pairs.iter().filter(|o| (o.lambda - p.lambda).norm() <= opts.cluster_tol * d as f64).count()).collect();
    let keep: Vec<usize> = (0..pairs.len()).filter(|&i| !is_perron(&pairs[i].x, 1e-6)).collect();
    let vectors: Vec<EigenvectorCensus> = keep
        .par_iter()
        .map(|&i| {
            let p = &pairs[i];
            let verdict = many_levels_verdict(&p.x, rho, delta, q, params)?;
            let g = &verdict.general;
            let branch = if g.gradual() {
                Branch::Gradual
            } else if g.very_steep {
                Branch::VerySteep
            } else {
                Branch::Neither
            };
            let ball = g.ball;
            Ok(EigenvectorCensus {
                index: i,
                lambda: p.lambda,
                residual: p.residual,
                flagged: p.flagged,
                multiplicity: multiplicity[i],
                ball_lower: ball.lower,
                ball_upper: ball.upper,
                ball_mass: ball.upper as f64 / (delta * n as f64),
                ball_ok: ball.certified_ok(),
                branch,
                verdict,
            })
        })
        .collect::<Result<_>>()?;
    let total = vectors.len().max(1) as f64;
    let frac = |b: Branch| vectors.iter().filter(|v| v.branch == b).count() as f64 / total;
    Ok(DelocReport {
        n,
        d,
        rho,
        delta,
        q,
        perron_excluded: pairs.len() - keep.len(),
        frac_gradual: frac(Branch::Gradual),
        frac_very_steep: frac(Branch::VerySteep),
        frac_neither: frac(Branch::Neither),
        frac_ball_violations: vectors.iter().filter(|v| !v.ball_ok).count() as f64 / total,
        flagged_pairs: pairs.iter().filter(|p| p.flagged).count(),
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::sampler::{sample_matrix, sample_uniform};
    use crate::taxonomy::{derive_params, TaxonomyConstants};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn random_perm(n: usize, seed: u64) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng_from(seed, 99));
        p
    }

    #[test]
    fn permutation_minor_kernel() {
        for (n, seed) in [(7, 1), (50, 2), (300, 3)] {
            let perm = random_perm(n, seed);
            let m = RegularMatrix::permutation(&perm).unwrap();
            for j in [0, n / 2, n - 1] {
                let c = perm[j];
                let k = RowMask::without(n, &[j]).unwrap();
                let p = smallest_sv_probe(&m, ZERO, &k, 1e-10, 100, seed).unwrap();
                assert!(p.sigma_min < 1e-8, "sigma {}", p.sigma_min);
                assert!(p.x[c].norm() > 1.0 - 1e-6);
                assert!(p.residual <= p.sigma_min * (1.0 + 1e-9) + 1e-300);
            }
        }
    }

    #[test]
    fn perron_shift_and_orthogonal() {
        let m = RegularMatrix::circulant(40, &[0, 3, 7]).unwrap();
        let p = smallest_sv_probe(&m, Complex64::new(3.0, 0.0), &RowMask::full(40), 1e-10, 200, 5).unwrap();
        assert!(p.sigma_min < 1e-8);
        let inv = 1.0 / (40f64).sqrt();
        let phase = p.x[0] / p.x[0].norm();
        assert!(p.x.iter().all(|c| (c / phase - inv).norm() < 1e-6));

        let perm = random_perm(60, 8);
        let m = RegularMatrix::permutation(&perm).unwrap();
        let p = smallest_sv_probe(&m, ZERO, &RowMask::full(60), 1e-10, 50, 0).unwrap();
        assert!((p.sigma_min - 1.0).abs() < 1e-9);
    }

    #[test]
    fn probe_agrees_with_dense_svd() {
        for (seed, z) in [(1u64, ZERO), (2, Complex64::new(2.0, 1.0)), (3, Complex64::new(0.0, -2.2))] {
            let m = sample_uniform(60, 4, seed, 1000).unwrap();
            let k = RowMask::full(60);
            let dense = smallest_sv_dense(&m, z, &k).unwrap();
            let p = smallest_sv_probe(&m, z, &k, 1e-12, 500, seed).unwrap();
            // the probe is a Rayleigh quotient, so never below the truth
            assert!(p.sigma_min >= dense * (1.0 - 1e-9));
            assert!(p.sigma_min <= dense * (1.0 + 1e-4) + 1e-10, "probe {} dense {}", p.sigma_min, dense);
        }
    }

    #[test]
    fn eigenpairs_all_ones_and_shift() {
        let n = 6;
        let supports: Vec<Vec<usize>> = (0..n).map(|_| (0..n).collect()).collect();
        let m = RegularMatrix::from_row_supports(n, n, &supports).unwrap();
        let pairs = eigenpairs(&m, 1e-9, DENSE_BUDGET).unwrap();
        let mut re: Vec<f64> = pairs.iter().map(|p| p.lambda.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[n - 1] - n as f64).abs() < 1e-9);
        assert!(re[..n - 1].iter().all(|v| v.abs() < 1e-9));
        assert!(pairs.iter().all(|p| !p.flagged));

        // cyclic shift: roots of unity with Fourier eigenvectors
        let n = 12;
        let m = RegularMatrix::circulant(n, &[1]).unwrap();
        let pairs = eigenpairs(&m, 1e-9, DENSE_BUDGET).unwrap();
        for p in &pairs {
            assert!((p.lambda.norm() - 1.0).abs() < 1e-9);
            assert!((p.lambda.powu(n as u32) - 1.0).norm() < 1e-9);
            assert!(p.residual < 1e-9);
            assert!(p.x.iter().all(|c| (c.norm() - 1.0 / (n as f64).sqrt()).abs() < 1e-9));
        }
        assert!(eigenpairs(&m, 1e-9, 5).is_err());
    }

    #[test]
    fn perron_pair_present() {
        for seed in 0..3 {
            let m = sample_uniform(30, 3, seed, 1000).unwrap();
            let pairs = eigenpairs(&m, 1e-9, DENSE_BUDGET).unwrap();
            assert!(pairs.iter().any(|p| (p.lambda - 3.0).norm() < 1e-8 && is_perron(&p.x, 1e-6)));
        }
    }

    #[test]
    fn eigenpair_near_refines() {
        let m = sample_uniform(80, 3, 4, 1000).unwrap();
        let pairs = eigenpairs(&m, 1e-9, DENSE_BUDGET).unwrap();
        let target = pairs.iter().find(|p| p.lambda.norm() > 0.5 && !is_perron(&p.x, 1e-6)).unwrap();
        let near = eigenpair_near(&m, target.lambda + Complex64::new(1e-3, 0.0), 1e-10, 20, 1).unwrap();
        assert!((near.lambda - target.lambda).norm() < 1e-6);
        assert!(near.residual < 1e-6);
    }

    #[test]
    fn census_cyclic_shift_closed_form() {
        // Fourier vector of frequency f: x_i = ω^{fi}/√n sits on n/g points
        // of a circle, g = gcd(f, n), each hit g times.
        let n = 1000;
        let consts = TaxonomyConstants { p_scale: 1.0, ..Default::default() };
        let params = derive_params(n, 10, 1, &consts, false).unwrap();
        let m = RegularMatrix::circulant(n, &[1]).unwrap();
        // params were derived for d = 10; reuse the ranks on a d = 1 matrix
        let pairs = eigenpairs(&m, 1e-9, DENSE_BUDGET).unwrap();
        let rho = 1e-3;
        for p in pairs.iter().take(40) {
            let (lo, hi) = ball_bracket(&p.x, rho, &params);
            // radius 1e-3/√n is far below the chord 2 sin(π/n)/√n, so each
            // ball holds one orbit point
            let f = (p.lambda.arg() * n as f64 / std::f64::consts::TAU).round().rem_euclid(n as f64) as usize;
            let g = gcd(f, n);
            assert!(lo <= g && g <= hi, "f={f} g={g} bracket=({lo},{hi})");
        }
    }

    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }

    #[test]
    fn census_degenerate_all_ones() {
        let n = 8;
        let supports: Vec<Vec<usize>> = (0..n).map(|_| (0..n).collect()).collect();
        let m = RegularMatrix::from_row_supports(n, n, &supports).unwrap();
        // d = n lies outside the parameter window; take ranks from a valid
        // instance and overwrite the sizes
        let consts = TaxonomyConstants { p_scale: 1.0, ..Default::default() };
        let mut params = derive_params(1000, 10, 1, &consts, false).unwrap();
        params.n = n;
        params.d = n;
        params.n1 = 1;
        params.n3 = 1;
        params.r0 = 0;
        let pairs = eigenpairs(&m, 1e-9, DENSE_BUDGET).unwrap();
        // the solver's 0-eigenspace basis: replace with localized e_1 - e_2
        let mut local = pairs.clone();
        for p in local.iter_mut().filter(|p| p.lambda.norm() < 1e-6) {
            let mut x = vec![ZERO; n];
            x[0] = Complex64::new(1.0, 0.0);
            x[1] = Complex64::new(-1.0, 0.0);
            p.x = x;
        }
        let r = censor_pairs(&local, n, 0.5, 0.5, &params, &CensusOptions::default()).unwrap();
        assert_eq!(r.perron_excluded, 1);
        assert!(r.vectors.iter().all(|v| !v.ball_ok && v.multiplicity == n - 1));
        assert_eq!(r.frac_ball_violations, 1.0);
    }

    #[test]
    fn census_on_sampled_matrix() {
        let n = 1000;
        let d = 10;
        let consts = TaxonomyConstants { p_scale: 1.0, ..Default::default() };
        let params = derive_params(n, d, 1, &consts, false).unwrap();
        let (m, _) = sample_matrix(&mut rng_from(11, 0), n, d, 10_000).unwrap();
        let rho = (n as f64).powf(-0.3);
        let r = delocalization_census(&m, rho, 0.5, &params, &CensusOptions::default()).unwrap();
        assert_eq!(r.perron_excluded, 1);
        assert_eq!(r.vectors.len(), n - 1);
        assert_eq!(r.flagged_pairs, 0);
        assert!((r.frac_gradual + r.frac_very_steep + r.frac_neither - 1.0).abs() < 1e-12);
    }

    #[test]
    fn z_grid_inside_window() {
        for d in [3, 20, 100] {
            let g = default_z_grid(d);
            assert_eq!(g.len(), 6);
            let w = (d as f64).sqrt() * (d as f64).ln();
            assert!(g.iter().all(|z| z.norm() <= w + 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn probe_below_trivial_bound(seed in 0u64..1000, zr in -3.0f64..3.0, zi in -3.0f64..3.0, drop in 0usize..4) {
            let n = 30;
            let m = sample_uniform(n, 3, seed, 1000).unwrap();
            let removed: Vec<usize> = (0..drop).map(|i| (seed as usize + 7 * i) % n).collect();
            let k = RowMask::without(n, &removed).unwrap();
            let z = Complex64::new(zr, zi);
            let p = smallest_sv_probe(&m, z, &k, 1e-8, 100, seed).unwrap();
            prop_assert!(p.sigma_min <= 3.0 + z.norm() + 1e-12);
            prop_assert!((norm(&p.x) - 1.0).abs() < 1e-12);
            prop_assert!(p.residual <= p.sigma_min * (1.0 + 1e-7) + 1e-300);
            prop_assert!(p.sigma_min >= smallest_sv_dense(&m, z, &k).unwrap() * (1.0 - 1e-9) - 1e-12);
        }
    }
}
