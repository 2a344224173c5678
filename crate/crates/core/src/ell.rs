//! k-vectors and the l-decomposition.
//!
//! A k-vector stores integer numerators `(Re, Im)` over a common
//! denominator `k`. Every comparison in the decomposition is done on those
//! integers, so ties and the `d/k` separation test are exact.

use num_complex::Complex64;
use rustc_hash::FxHashMap;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::ops::Range;
use thiserror::Error;

/// Lattice point `(Re, Im)` numerators; ordering is lexicographic (Re, then Im).
pub type Lat = (i128, i128);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("k*x does not fit the integer range (coordinate {index})")]
    Overflow { index: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KVector {
    k: u128,
    coords: Vec<Lat>,
}

impl KVector {
    pub fn new(k: u128, coords: Vec<Lat>) -> Result<Self, EllError> {
        if k == 0 {
            return Err(EllError::InvalidInput("k must be positive".into()));
        }
        Ok(KVector { k, coords })
    }

    /// Componentwise `floor(k Re x_i)/k + i floor(k Im x_i)/k`, exact in the
    /// binary value of each double.
    pub fn approx(x: &[Complex64], k: u128) -> Result<Self, EllError> {
        if k == 0 {
            return Err(EllError::InvalidInput("k must be positive".into()));
        }
        let mut coords = Vec::with_capacity(x.len());
        for (index, v) in x.iter().enumerate() {
            let re = floor_mul_fast(v.re, k).ok_or(EllError::Overflow { index })?;
            let im = floor_mul_fast(v.im, k).ok_or(EllError::Overflow { index })?;
            coords.push((re, im));
        }
        Ok(KVector { k, coords })
    }

    pub fn k(&self) -> u128 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Lat] {
        &self.coords
    }

    pub fn value(&self, i: usize) -> Complex64 {
        lat_to_complex(self.coords[i], self.k)
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.coords.iter().map(|&c| lat_to_complex(c, self.k)).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        KVector { k: self.k, coords: perm.iter().map(|&p| self.coords[p]).collect() }
    }
}

pub fn lat_to_complex(c: Lat, k: u128) -> Complex64 {
    let k = k as f64;
    Complex64::new(c.0 as f64 / k, c.1 as f64 / k)
}

/// `floor_mul` with a float shortcut: the rounded product is used when a
/// window of `2^-50` relative width around it contains no integer, which
/// covers its rounding error.
#[inline]
fn floor_mul_fast(x: f64, k: u128) -> Option<i128> {
    const TWO52: f64 = 4_503_599_627_370_496.0;
    if k < (1u128 << 53) && x.abs() > 1e-290 {
        let p = x * k as f64;
        if p.abs() < TWO52 {
            let e = p.abs() * (2f64).powi(-50);
            let (lo, hi) = ((p - e).floor(), (p + e).floor());
            if lo == hi {
                return Some(lo as i128);
            }
        }
    }
    floor_mul(x, k)
}

/// Exact `floor(k * x)` for a finite double, `None` on overflow or non-finite
/// input.
pub fn floor_mul(x: f64, k: u128) -> Option<i128> {
    if !x.is_finite() {
        return None;
    }
    if x == 0.0 || k == 0 {
        return Some(0);
    }
    let bits = x.to_bits();
    let neg = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    // x = m * 2^e with m < 2^53
    let (m, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    // 256-bit product k*m as (hi, lo)
    let kl = k & u64::MAX as u128;
    let kh = k >> 64;
    let p0 = kl * m as u128;
    let p1 = kh * m as u128;
    let (lo, carry) = p0.overflowing_add(p1 << 64);
    let hi = (p1 >> 64) + carry as u128;
    let (q, inexact) = if e >= 0 {
        let e = e as u32;
        if e >= 128 || hi != 0 || (e > 0 && lo >> (128 - e) != 0) {
            return None;
        }
        (lo << e, false)
    } else {
        let s = (-e) as u32;
        if s >= 256 {
            (0u128, true)
        } else if s >= 128 {
            let s2 = s - 128;
            let q = if s2 == 0 { hi } else { hi >> s2 };
            let rem = lo != 0 || (s2 > 0 && hi & ((1u128 << s2) - 1) != 0);
            (q, rem)
        } else if s == 0 {
            if hi != 0 {
                return None;
            }
            (lo, false)
        } else {
            if hi >> s != 0 {
                return None;
            }
            let q = (lo >> s) | (hi << (128 - s));
            (q, lo & ((1u128 << s) - 1) != 0)
        }
    };
    if q > i128::MAX as u128 {
        return None;
    }
    let q = q as i128;
    Some(if neg { -q - inexact as i128 } else { q })
}

/// Distance between lattice values is at least `d` (in numerator units).
#[inline]
pub fn lat_far(a: Lat, b: Lat, d: i128) -> bool {
    let dx = (a.0 - b.0).abs();
    let dy = (a.1 - b.1).abs();
    if dx >= d || dy >= d {
        return true;
    }
    dx * dx + dy * dy >= d * d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKind {
    Spread,
    Regular,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSet {
    pub order: u32,
    pub value: Lat,
    span: Range<usize>,
}

impl LevelSet {
    pub fn len(&self) -> usize {
        self.span.len()
    }

    pub fn is_empty(&self) -> bool {
        self.span.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EllPart {
    pub order: u32,
    pub kind: PartKind,
    sets: Range<usize>,
    span: Range<usize>,
}

impl EllPart {
    pub fn height(&self) -> usize {
        self.sets.len()
    }

    pub fn len(&self) -> usize {
        self.span.len()
    }

    pub fn is_empty(&self) -> bool {
        self.span.is_empty()
    }
}

/// Ordered partition of `[n]` into spread parts (by increasing order) then
/// regular parts (by increasing order). Within a part, level sets are sorted
/// by decreasing lexicographic value; within a level set indices ascend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EllDecomposition {
    n: usize,
    d: usize,
    k: u128,
    indices: Vec<usize>,
    level_sets: Vec<LevelSet>,
    parts: Vec<EllPart>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
pub struct OrderStats {
    pub cs: usize,
    pub cr: usize,
    pub hs: usize,
    pub hr: usize,
}

impl EllDecomposition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> u128 {
        self.k
    }

    pub fn parts(&self) -> &[EllPart] {
        &self.parts
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn part_indices(&self, q: usize) -> &[usize] {
        &self.indices[self.parts[q].span.clone()]
    }

    pub fn part_level_sets(&self, q: usize) -> &[LevelSet] {
        &self.level_sets[self.parts[q].sets.clone()]
    }

    pub fn level_indices(&self, l: &LevelSet) -> &[usize] {
        &self.indices[l.span.clone()]
    }

    /// Part index of each coordinate.
    pub fn part_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for q in 0..self.parts.len() {
            for &i in self.part_indices(q) {
                out[i] = q;
            }
        }
        out
    }

    /// Value (as a lattice point) of every coordinate.
    pub fn values(&self) -> Vec<Lat> {
        let mut out = vec![(0, 0); self.n];
        for l in &self.level_sets {
            for &i in self.level_indices(l) {
                out[i] = l.value;
            }
        }
        out
    }

    pub fn spread_cardinality(&self) -> usize {
        self.parts.iter().filter(|p| p.kind == PartKind::Spread).map(|p| p.len()).sum()
    }

    pub fn max_order(&self) -> Option<u32> {
        self.parts.iter().map(|p| p.order).max()
    }

    /// `(cs_j, cr_j, hs_j, hr_j)` for `j = 0..=max order`.
    pub fn class_stats(&self) -> Vec<OrderStats> {
        let len = self.max_order().map_or(0, |m| m as usize + 1);
        let mut out = vec![OrderStats::default(); len];
        for p in &self.parts {
            let s = &mut out[p.order as usize];
            match p.kind {
                PartKind::Spread => {
                    s.cs += p.len();
                    s.hs += p.height();
                }
                PartKind::Regular => {
                    s.cr += p.len();
                    s.hr += p.height();
                }
            }
        }
        out
    }

    /// Nested, 1-based JSON view.
    pub fn to_json(&self) -> serde_json::Value {
        let parts: Vec<serde_json::Value> = (0..self.parts.len())
            .map(|q| {
                let p = &self.parts[q];
                let levels: Vec<serde_json::Value> = self
                    .part_level_sets(q)
                    .iter()
                    .map(|l| {
                        serde_json::json!({
                            "value": [l.value.0.to_string(), l.value.1.to_string()],
                            "indices": self.level_indices(l).iter().map(|i| i + 1).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                serde_json::json!({
                    "kind": p.kind,
                    "order": p.order,
                    "height": p.height(),
                    "size": p.len(),
                    "levels": levels,
                })
            })
            .collect();
        serde_json::json!({"n": self.n, "d": self.d, "k": self.k.to_string(), "parts": parts})
    }
}

/// Coordinates grouped by equal value: `order` lists indices sorted by
/// (value, index); group `g` occupies `order[starts[g]..starts[g+1]]`.
pub struct ValueGroups {
    pub order: Vec<usize>,
    pub values: Vec<Lat>,
    pub starts: Vec<usize>,
}

impl ValueGroups {
    pub fn new(coords: &[Lat]) -> Self {
        let n = coords.len();
        let mut order = Vec::with_capacity(n);
        let mut values = Vec::new();
        let mut starts = Vec::new();
        let bits = |span: u128| 128 - span.leading_zeros();
        let (lo_a, hi_a, lo_b, hi_b) = coords.iter().fold((i128::MAX, i128::MIN, i128::MAX, i128::MIN), |(a0, a1, b0, b1), &(a, b)| (a0.min(a), a1.max(a), b0.min(b), b1.max(b)));
        let spans = (n > 0).then(|| (hi_a.checked_sub(lo_a), hi_b.checked_sub(lo_b)));
        let (wa, wb) = match spans {
            Some((Some(sa), Some(sb))) => (bits(sa as u128), bits(sb as u128)),
            _ => (128, 128),
        };
        let wi = bits(n.saturating_sub(1) as u128).max(1);
        if n > 0 && wa + wb + wi <= 64 {
            // (Re - min, Im - min, index) packed; integer order is lexicographic
            let (sb, si) = (wb + wi, wi);
            let mut keys: Vec<u64> = coords.iter().enumerate().map(|(i, &(a, b))| (((a - lo_a) as u64) << sb) | (((b - lo_b) as u64) << si) | i as u64).collect();
            keys.sort_unstable();
            let mut prev = u64::MAX;
            for (p, &key) in keys.iter().enumerate() {
                let v = key >> si;
                if v != prev {
                    values.push(((v >> wb) as i128 + lo_a, (v & ((1u64 << wb) - 1)) as i128 + lo_b));
                    starts.push(p);
                    prev = v;
                }
                order.push((key & ((1u64 << si) - 1)) as usize);
            }
        } else if n > 0 && wa + wb + wi <= 128 {
            let (sb, si) = (wb + wi, wi);
            let mut keys: Vec<u128> = coords.iter().enumerate().map(|(i, &(a, b))| (((a - lo_a) as u128) << sb) | (((b - lo_b) as u128) << si) | i as u128).collect();
            keys.sort_unstable();
            let mut prev = u128::MAX;
            for (p, &key) in keys.iter().enumerate() {
                let v = key >> si;
                if v != prev {
                    values.push(((v >> wb) as i128 + lo_a, (v & ((1u128 << wb) - 1)) as i128 + lo_b));
                    starts.push(p);
                    prev = v;
                }
                order.push((key & ((1u128 << si) - 1)) as usize);
            }
        } else {
            let mut keyed: Vec<(Lat, usize)> = coords.iter().copied().zip(0..).collect();
            keyed.sort_unstable();
            for (p, &(v, i)) in keyed.iter().enumerate() {
                if p == 0 || keyed[p - 1].0 != v {
                    values.push(v);
                    starts.push(p);
                }
                order.push(i);
            }
        }
        starts.push(n);
        ValueGroups { order, values, starts }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self, g: usize) -> usize {
        self.starts[g + 1] - self.starts[g]
    }

    /// Size of the group containing each coordinate.
    pub fn group_sizes(&self, n: usize) -> Vec<usize> {
        let mut out = vec![0; n];
        for g in 0..self.len() {
            let c = self.count(g);
            for &i in &self.order[self.starts[g]..self.starts[g + 1]] {
                out[i] = c;
            }
        }
        out
    }
}

/// Sizes taken from a value with `count` remaining at steps 0, 1, 2, ...:
/// the leftmost `2^j` while at least `2^{j+1}` remain, then everything.
pub fn level_schedule(count: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut rem = count;
    let mut j = 0u32;
    while rem > 0 {
        let full = 1usize << j;
        if rem >= 2 * full {
            out.push(full);
            rem -= full;
        } else {
            out.push(rem);
            rem = 0;
        }
        j += 1;
    }
    out
}

/// Greedy spread selection over `values` sorted in increasing lexicographic
/// order. Returns positions (into `values`) of the selected values, in
/// decreasing lexicographic order; empty when the diameter is below `d`.
pub fn spread_select(values: &[Lat], d: i128) -> Vec<usize> {
    if values.len() < 2 {
        return Vec::new();
    }
    let first = match first_with_far_partner(values, d) {
        Some(p) => p,
        None => return Vec::new(),
    };
    let mut chosen = vec![first];
    // Values arrive in decreasing lexicographic order, so every chosen value
    // lies in the current cell column or the next one. Chosen values are
    // pairwise >= d apart: a d x d cell holds at most two of them.
    type Column = FxHashMap<i128, ([u32; 4], u8)>;
    // i128 division is a library call; use i64 when everything fits
    const LIM: i128 = 1 << 62;
    let small = d < LIM && values.iter().all(|&(a, b)| a.abs() < LIM && b.abs() < LIM);
    let cell = |v: Lat| {
        if small {
            let d64 = d as i64;
            ((v.0 as i64).div_euclid(d64) as i128, (v.1 as i64).div_euclid(d64) as i128)
        } else {
            (v.0.div_euclid(d), v.1.div_euclid(d))
        }
    };
    let (mut cur, mut next): (Column, Column) = (FxHashMap::default(), FxHashMap::default());
    let push = |col: &mut Column, cy: i128, p: usize| {
        let e = col.entry(cy).or_insert(([0; 4], 0));
        assert!((e.1 as usize) < 4, "cell capacity");
        e.0[e.1 as usize] = p as u32;
        e.1 += 1;
    };
    let (mut cur_cx, cy0) = cell(values[first]);
    push(&mut cur, cy0, first);
    for p in (0..first).rev() {
        let v = values[p];
        let (cx, cy) = cell(v);
        if cx < cur_cx {
            if cx == cur_cx - 1 {
                std::mem::swap(&mut cur, &mut next);
            } else {
                next.clear();
            }
            cur.clear();
            cur_cx = cx;
        }
        let blocked = [&cur, &next].iter().any(|col| {
            (-1..=1).any(|dy| col.get(&(cy + dy)).is_some_and(|(pts, len)| pts[..*len as usize].iter().any(|&w| !lat_far(v, values[w as usize], d))))
        });
        if !blocked {
            chosen.push(p);
            push(&mut cur, cy, p);
        }
    }
    chosen
}

/// Largest position whose value has some other value at distance >= d.
fn first_with_far_partner(values: &[Lat], d: i128) -> Option<usize> {
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (i128::MAX, i128::MIN, i128::MAX, i128::MIN);
    for &(x, y) in values {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    let ext_x = hi_x.checked_sub(lo_x);
    let ext_y = hi_y.checked_sub(lo_y);
    let wide = |e: Option<i128>| e.is_none_or(|e| e >= 2 * d);
    if wide(ext_x) || wide(ext_y) {
        // every point is at distance >= d from one end of the wide side
        return Some(values.len() - 1);
    }
    // all points fit in a small box: farthest points are hull vertices
    let rel: Vec<(i128, i128)> = values.iter().map(|&(x, y)| (x - lo_x, y - lo_y)).collect();
    let hull = convex_hull(&rel);
    (0..values.len()).rev().find(|&p| hull.iter().any(|&h| lat_far(rel[p], h, d)))
}

/// Andrew's monotone chain on points already sorted lexicographically.
fn convex_hull(pts: &[(i128, i128)]) -> Vec<(i128, i128)> {
    let mut pts = pts.to_vec();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (i128, i128), a: (i128, i128), b: (i128, i128)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(i128, i128)> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// The l-decomposition of `y` with separation `d/k`.
pub fn decompose(y: &KVector, d: usize) -> Result<EllDecomposition, EllError> {
    if d == 0 {
        return Err(EllError::InvalidInput("d must be positive".into()));
    }
    let groups = ValueGroups::new(&y.coords);
    Ok(decompose_grouped(y.len(), y.k, &groups, d))
}

pub(crate) fn decompose_grouped(n: usize, k: u128, groups: &ValueGroups, d: usize) -> EllDecomposition {
    let dd = d as i128;
    // (group, offset within group, size) per level set, per order and kind
    type Pieces = Vec<(usize, usize, usize)>;
    let mut spread: Vec<Pieces> = Vec::new();
    let mut regular: Vec<Pieces> = Vec::new();
    let mut alive: Vec<usize> = (0..groups.len()).collect();
    let mut taken = vec![0usize; groups.len()];
    let mut j = 0u32;
    while !alive.is_empty() {
        let full = 1usize << j;
        let vals: Vec<Lat> = alive.iter().map(|&g| groups.values[g]).collect();
        let sel = spread_select(&vals, dd);
        let mut is_spread = vec![false; alive.len()];
        for &p in &sel {
            is_spread[p] = true;
        }
        let mut sp = Vec::with_capacity(sel.len());
        for &p in &sel {
            let g = alive[p];
            let rem = groups.count(g) - taken[g];
            let size = if rem >= 2 * full { full } else { rem };
            sp.push((g, taken[g], size));
        }
        let mut rg = Vec::new();
        for p in (0..alive.len()).rev() {
            if is_spread[p] {
                continue;
            }
            let g = alive[p];
            let rem = groups.count(g) - taken[g];
            let size = if rem >= 2 * full { full } else { rem };
            rg.push((g, taken[g], size));
        }
        for &(g, _, size) in sp.iter().chain(rg.iter()) {
            taken[g] += size;
        }
        spread.push(sp);
        regular.push(rg);
        alive.retain(|&g| taken[g] < groups.count(g));
        j += 1;
    }

    let mut indices = Vec::with_capacity(n);
    let mut level_sets = Vec::new();
    let mut parts = Vec::new();
    for (kind, by_order) in [(PartKind::Spread, &spread), (PartKind::Regular, &regular)] {
        for (order, pieces) in by_order.iter().enumerate() {
            if pieces.is_empty() {
                continue;
            }
            let set_start = level_sets.len();
            let idx_start = indices.len();
            for &(g, off, size) in pieces {
                let s = indices.len();
                let base = groups.starts[g] + off;
                indices.extend_from_slice(&groups.order[base..base + size]);
                level_sets.push(LevelSet { order: order as u32, value: groups.values[g], span: s..indices.len() });
            }
            parts.push(EllPart { order: order as u32, kind, sets: set_start..level_sets.len(), span: idx_start..indices.len() });
        }
    }
    EllDecomposition { n, d, k, indices, level_sets, parts }
}

/// `log( n! prod_j hs_j^{cs_j} hr_j^{cr_j} / (cs_j! cr_j!) )` with `0^0 = 1`.
pub fn class_cardinality_log_bound(stats: &[OrderStats], n: usize) -> Result<f64, EllError> {
    let total: usize = stats.iter().map(|s| s.cs + s.cr).sum();
    if total != n {
        return Err(EllError::InvalidInput(format!("stats cover {total} coordinates, expected {n}")));
    }
    let lpow = |h: usize, c: usize| if c == 0 { 0.0 } else { c as f64 * (h as f64).ln() };
    let lfact = |m: usize| ln_gamma(m as f64 + 1.0);
    let mut acc = lfact(n);
    for s in stats {
        if (s.cs > 0 && s.hs == 0) || (s.cr > 0 && s.hr == 0) {
            return Err(EllError::InvalidInput("nonempty class with zero height".into()));
        }
        acc += lpow(s.hs, s.cs) + lpow(s.hr, s.cr) - lfact(s.cs) - lfact(s.cr);
    }
    Ok(acc)
}

/// Structural checks of a decomposition against its input: parts ordered
/// spread-then-regular with increasing order, level-set sizes within
/// `[2^{j-1}, 2^{j+1})`, part sizes within height times those bounds, exact
/// cover of `[n]`, pairwise separation of spread levels, the per-value level
/// schedule, and non-increasing cumulative heights over orders. Returns one
/// message per violation.
pub fn verify_structure(dec: &EllDecomposition, y: &KVector) -> Vec<String> {
    let mut bad = Vec::new();
    let n = y.len();
    if dec.n() != n {
        return vec![format!("decomposition has n={} but vector has {}", dec.n(), n)];
    }
    let mut seen = vec![false; n];
    let dd = dec.d() as i128;
    let mut spread_done = false;
    let mut last = (PartKind::Spread, 0u32);
    for q in 0..dec.num_parts() {
        let p = &dec.parts()[q];
        if p.kind == PartKind::Regular {
            spread_done = true;
        } else if spread_done {
            bad.push(format!("part {q}: spread part after a regular one"));
        }
        if q > 0 && p.kind == last.0 && p.order <= last.1 {
            bad.push(format!("part {q}: order {} not above {}", p.order, last.1));
        }
        last = (p.kind, p.order);
        let j = p.order;
        let lo = if j == 0 { 1 } else { 1usize << (j - 1) };
        let hi = 2usize << j;
        if !(lo * p.height() <= p.len() && p.len() <= hi * p.height()) {
            bad.push(format!("part {q}: size {} outside height bounds", p.len()));
        }
        let ls = dec.part_level_sets(q);
        for l in ls {
            if !(l.len() >= lo && l.len() < hi) {
                bad.push(format!("part {q}: level size {} outside [{lo}, {hi})", l.len()));
            }
            for &i in dec.level_indices(l) {
                if y.coords()[i] != l.value {
                    bad.push(format!("index {i}: value differs from its level"));
                }
                if seen[i] {
                    bad.push(format!("index {i}: covered twice"));
                }
                seen[i] = true;
            }
        }
        if p.kind == PartKind::Spread {
            if p.height() < 2 {
                bad.push(format!("part {q}: spread part of height {}", p.height()));
            }
            for a in 0..ls.len() {
                for b in a + 1..ls.len() {
                    if !lat_far(ls[a].value, ls[b].value, dd) {
                        bad.push(format!("part {q}: levels {a}, {b} closer than d/k"));
                    }
                }
            }
        }
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        bad.push(format!("index {i}: not covered"));
    }
    let groups = ValueGroups::new(y.coords());
    let mut sizes: FxHashMap<Lat, Vec<(u32, usize)>> = FxHashMap::default();
    for q in 0..dec.num_parts() {
        for l in dec.part_level_sets(q) {
            sizes.entry(l.value).or_default().push((l.order, l.len()));
        }
    }
    for g in 0..groups.len() {
        let mut s = sizes.get(&groups.values[g]).cloned().unwrap_or_default();
        s.sort();
        if s.iter().map(|x| x.1).collect::<Vec<_>>() != level_schedule(groups.count(g)) {
            bad.push(format!("value group {g}: level sizes off schedule"));
        }
    }
    let st = dec.class_stats();
    for (j, w) in st.windows(2).enumerate() {
        if w[0].hs + w[0].hr < w[1].hs + w[1].hr {
            bad.push(format!("cumulative height increases at order {}", j + 1));
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kv(k: u128, re: &[i128]) -> KVector {
        KVector::new(k, re.iter().map(|&r| (r, 0)).collect()).unwrap()
    }

    fn summary(dec: &EllDecomposition) -> Vec<(PartKind, u32, usize, Vec<usize>)> {
        (0..dec.num_parts())
            .map(|q| {
                let p = &dec.parts()[q];
                let mut idx: Vec<usize> = dec.part_indices(q).iter().map(|i| i + 1).collect();
                idx.sort();
                (p.kind, p.order, p.height(), idx)
            })
            .collect()
    }

    #[test]
    fn approx_examples() {
        let y = KVector::approx(&[Complex64::new(0.7, 0.3)], 2).unwrap();
        assert_eq!(y.coords(), &[(1, 0)]);
        let y = KVector::approx(&[Complex64::new(-0.3, 0.0)], 2).unwrap();
        assert_eq!(y.coords(), &[(-1, 0)]);
        let x = vec![Complex64::new(0.25, -0.75), Complex64::new(-2.5, 1.0)];
        let y = KVector::approx(&x, 4).unwrap();
        assert_eq!(y.to_complex(), x);
    }

    #[test]
    fn floor_mul_large_k() {
        let k = 10u128.pow(24);
        assert_eq!(floor_mul(0.5, k), Some(5 * 10i128.pow(23)));
        assert_eq!(floor_mul(-1e-30, k), Some(-1));
        assert_eq!(floor_mul(1e-30, k), Some(0));
        assert_eq!(floor_mul(-0.5, k), Some(-5 * 10i128.pow(23)));
        assert_eq!(floor_mul(1e20, k), None);
        assert_eq!(floor_mul(f64::NAN, 3), None);
        // 2^-1074 * 2^100
        assert_eq!(floor_mul(f64::from_bits(1), 1u128 << 100), Some(0));
        assert_eq!(floor_mul(-f64::from_bits(1), 1u128 << 100), Some(-1));
        assert_eq!(floor_mul(3.0, 1u128 << 125), Some(3i128 << 125));
        assert_eq!(floor_mul(4.0, 1u128 << 125), None);
    }

    proptest! {
        #[test]
        fn floor_mul_matches_i128_oracle(x in -1e6f64..1e6, k in 1u64..1_000_000_000) {
            // independent route: m * k / 2^s with i128 euclidean division
            let bits = x.to_bits();
            let exp = ((bits >> 52) & 0x7ff) as i32;
            prop_assume!(exp != 0);
            let m = ((bits & ((1u64 << 52) - 1)) | (1u64 << 52)) as i128;
            let e = exp - 1075;
            let s = if bits >> 63 == 1 { -1 } else { 1 };
            let num = s * m * k as i128;
            let want = if e >= 0 { num << e } else { num.div_euclid(1i128 << (-e)) };
            prop_assert_eq!(floor_mul(x, k as u128), Some(want));
        }

        #[test]
        fn approx_error_bound(re in -50f64..50.0, im in -50f64..50.0, k in 1u128..100_000) {
            let x = [Complex64::new(re, im)];
            let y = KVector::approx(&x, k).unwrap();
            prop_assert!((x[0] - y.value(0)).norm() <= 2f64.sqrt() / k as f64 + 1e-12);
        }
    }

    #[test]
    fn worked_example() {
        // (1/2, 1/3, 1/2, 1/6, 1/2, 1/3, -1/3) with k = 6
        let y = kv(6, &[3, 2, 3, 1, 3, 2, -2]);
        let dec = decompose(&y, 2).unwrap();
        assert_eq!(
            summary(&dec),
            vec![
                (PartKind::Spread, 0, 3, vec![1, 4, 7]),
                (PartKind::Regular, 0, 1, vec![2]),
                (PartKind::Regular, 1, 2, vec![3, 5, 6]),
            ]
        );
        let st = dec.class_stats();
        assert_eq!(st[0], OrderStats { cs: 3, cr: 1, hs: 3, hr: 1 });
        assert_eq!(st[1], OrderStats { cs: 0, cr: 3, hs: 0, hr: 2 });
        let lb = class_cardinality_log_bound(&st, 7).unwrap();
        let want = (5040.0f64 * 216.0 / 36.0).ln();
        assert!((lb - want).abs() < 1e-10);
    }

    #[test]
    fn constant_vector() {
        let dec = decompose(&kv(1, &[5, 5, 5, 5]), 3).unwrap();
        assert_eq!(
            summary(&dec),
            vec![(PartKind::Regular, 0, 1, vec![1]), (PartKind::Regular, 1, 1, vec![2, 3, 4])]
        );
        assert!(dec.class_stats().iter().all(|s| s.cs == 0));
    }

    #[test]
    fn two_far_values() {
        let dec = decompose(&kv(10, &[0, 7]), 5).unwrap();
        assert_eq!(summary(&dec), vec![(PartKind::Spread, 0, 2, vec![1, 2])]);
        // just below the separation: regular
        let dec = decompose(&kv(10, &[0, 4]), 5).unwrap();
        assert_eq!(summary(&dec), vec![(PartKind::Regular, 0, 2, vec![1, 2])]);
    }

    #[test]
    fn separation_boundary_is_exact() {
        // |(3,4)| = 5 exactly
        let y = KVector::new(1, vec![(0, 0), (3, 4)]).unwrap();
        assert_eq!(decompose(&y, 5).unwrap().parts()[0].kind, PartKind::Spread);
        let y = KVector::new(1, vec![(0, 0), (3, 3)]).unwrap();
        assert_eq!(decompose(&y, 5).unwrap().parts()[0].kind, PartKind::Regular);
    }

    #[test]
    fn log_bound_examples() {
        let one = [OrderStats { cs: 0, cr: 1, hs: 0, hr: 1 }];
        assert!(class_cardinality_log_bound(&one, 1).unwrap().abs() < 1e-12);
        let two = [OrderStats { cs: 0, cr: 2, hs: 0, hr: 1 }];
        assert!(class_cardinality_log_bound(&two, 2).unwrap().abs() < 1e-12);
        assert!(class_cardinality_log_bound(&two, 3).is_err());
    }

    #[test]
    fn schedule_matches_closed_form() {
        for c in 1..2000usize {
            let s = level_schedule(c);
            let u = ((c as f64 + 1.0) / 3.0).log2().floor() as i64;
            if u < 0 {
                assert_eq!(s, vec![c]);
                continue;
            }
            let u = u as usize;
            let mut want: Vec<usize> = (0..=u).map(|j| 1 << j).collect();
            want.push(c + 1 - (1 << (u + 1)));
            assert_eq!(s, want, "count {c}");
        }
    }

    /// Brute-force reference: literal substep procedure with quadratic scans.
    fn reference_decompose(y: &KVector, d: usize) -> Vec<(PartKind, u32, Vec<(Lat, Vec<usize>)>)> {
        let n = y.len();
        let dd = d as i128;
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut out_s = Vec::new();
        let mut out_r = Vec::new();
        let mut j = 0u32;
        while !remaining.is_empty() {
            let mut vals: Vec<Lat> = remaining.iter().map(|&i| y.coords()[i]).collect();
            vals.sort();
            vals.dedup();
            let mut levels: Vec<(Lat, Vec<usize>)> = Vec::new();
            for &v in vals.iter().rev() {
                let idx: Vec<usize> = remaining.iter().copied().filter(|&i| y.coords()[i] == v).collect();
                let take = if idx.len() < (2usize << j) { idx.len() } else { 1 << j };
                levels.push((v, idx[..take].to_vec()));
            }
            // substeps
            let mut chosen: Vec<Lat> = Vec::new();
            let diam_ok = vals.iter().any(|&a| vals.iter().any(|&b| lat_far(a, b, dd)));
            if diam_ok {
                loop {
                    let cand = vals.iter().rev().find(|&&v| {
                        !chosen.contains(&v)
                            && if chosen.is_empty() {
                                vals.iter().any(|&b| lat_far(v, b, dd))
                            } else {
                                chosen.iter().all(|&c| lat_far(v, c, dd))
                            }
                    });
                    match cand {
                        Some(&v) => chosen.push(v),
                        None => break,
                    }
                }
            }
            let sp: Vec<(Lat, Vec<usize>)> = levels.iter().filter(|l| chosen.contains(&l.0)).cloned().collect();
            let rg: Vec<(Lat, Vec<usize>)> = levels.iter().filter(|l| !chosen.contains(&l.0)).cloned().collect();
            for l in &levels {
                remaining.retain(|i| !l.1.contains(i));
            }
            if !sp.is_empty() {
                out_s.push((PartKind::Spread, j, sp));
            }
            if !rg.is_empty() {
                out_r.push((PartKind::Regular, j, rg));
            }
            j += 1;
        }
        out_s.extend(out_r);
        out_s
    }

    fn flatten(dec: &EllDecomposition) -> Vec<(PartKind, u32, Vec<(Lat, Vec<usize>)>)> {
        (0..dec.num_parts())
            .map(|q| {
                let p = &dec.parts()[q];
                let ls = dec.part_level_sets(q).iter().map(|l| (l.value, dec.level_indices(l).to_vec())).collect();
                (p.kind, p.order, ls)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn matches_reference(raw in proptest::collection::vec((-6i128..6, -3i128..3), 1..40), d in 1usize..6) {
            let y = KVector::new(3, raw).unwrap();
            let dec = decompose(&y, d).unwrap();
            prop_assert_eq!(flatten(&dec), reference_decompose(&y, d));
        }

        #[test]
        fn structural_invariants(raw in proptest::collection::vec((-20i128..20, -20i128..20), 1..300), d in 1usize..12) {
            let y = KVector::new(7, raw.clone()).unwrap();
            let dec = decompose(&y, d).unwrap();
            assert_eq!(verify_structure(&dec, &y), Vec::<String>::new());
            // permutation equivariance of the stats
            let perm: Vec<usize> = (0..raw.len()).rev().collect();
            let dp = decompose(&y.permuted(&perm), d).unwrap();
            prop_assert_eq!(dp.class_stats(), dec.class_stats());
        }
    }

}
