//! Counting points of a planar cloud inside closed disks.

use num_complex::Complex64;
use rustc_hash::FxHashMap;

/// Number of points with `|p - c| <= r`.
pub fn count_within(points: &[Complex64], c: Complex64, r: f64) -> usize {
    let r2 = r * r;
    points.iter().filter(|p| (**p - c).norm_sqr() <= r2).count()
}

/// Maximum over centers restricted to the points themselves of the number of
/// points within `r`, with a maximizing center. The true maximum over all
/// centers at radius `r` lies between this value and the same quantity at
/// radius `2r`.
pub fn max_ball_at_points(points: &[Complex64], r: f64) -> (usize, Complex64) {
    if points.is_empty() {
        return (0, Complex64::new(0.0, 0.0));
    }
    // merge exact duplicates first; constant clouds would otherwise be quadratic
    let mut uniq: FxHashMap<(u64, u64), (Complex64, usize)> = FxHashMap::default();
    for p in points {
        let key = (canon(p.re).to_bits(), canon(p.im).to_bits());
        uniq.entry(key).or_insert((*p, 0)).1 += 1;
    }
    let mut pts: Vec<(Complex64, usize)> = uniq.into_values().collect();
    pts.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    if r <= 0.0 || !r.is_finite() {
        let best = pts.iter().max_by_key(|p| p.1).expect("nonempty");
        if r.is_finite() {
            return (best.1, best.0);
        }
        return (points.len(), best.0);
    }
    let cell = |p: Complex64| ((p.re / r).floor() as i64, (p.im / r).floor() as i64);
    let mut grid: FxHashMap<(i64, i64), Vec<usize>> = FxHashMap::default();
    for (idx, p) in pts.iter().enumerate() {
        grid.entry(cell(p.0)).or_default().push(idx);
    }
    let r2 = r * r;
    let mut best = (0usize, pts[0].0);
    for p in &pts {
        let (cx, cy) = cell(p.0);
        let mut cnt = 0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = grid.get(&(cx + dx, cy + dy)) {
                    cnt += list.iter().filter(|&&o| (pts[o].0 - p.0).norm_sqr() <= r2).map(|&o| pts[o].1).sum::<usize>();
                }
            }
        }
        if cnt > best.0 {
            best = (cnt, p.0);
        }
    }
    best
}

fn canon(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Lower and upper bracket for `max_c |{p : |p - c| <= r}|`.
pub fn max_ball_bracket(points: &[Complex64], r: f64) -> (usize, usize) {
    (max_ball_at_points(points, r).0, max_ball_at_points(points, 2.0 * r).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(points: &[Complex64], r: f64) -> usize {
        points.iter().map(|&c| count_within(points, c, r)).max().unwrap_or(0)
    }

    #[test]
    fn matches_brute_force_on_lattice_cloud() {
        let pts: Vec<Complex64> = (0..400).map(|i| Complex64::new((i * 37 % 101) as f64 * 0.013, (i * 53 % 89) as f64 * 0.021)).collect();
        for r in [0.001, 0.02, 0.1, 0.5, 3.0] {
            assert_eq!(max_ball_at_points(&pts, r).0, brute(&pts, r));
        }
    }

    #[test]
    fn constant_and_empty() {
        let pts = vec![Complex64::new(1.0, -2.0); 1000];
        assert_eq!(max_ball_at_points(&pts, 0.1).0, 1000);
        assert_eq!(max_ball_at_points(&pts, 0.0).0, 1000);
        assert_eq!(max_ball_at_points(&[], 0.1).0, 0);
    }
}
