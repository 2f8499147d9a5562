//! Small statistics kit: population moments, Pearson correlation, a
//! one-sided one-sample t-test, and a maximum-weight assignment solver.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (divides by `n`).
pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Population covariance.
pub fn cov(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64
}

/// Pearson correlation; 0 when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (vx, vy) = (var(x), var(y));
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    (cov(x, y) / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0)
}

/// Sample standard deviation (divides by `n − 1`).
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// One-sample t-test against `mu0` with alternative `mean > mu0`.
/// Returns `(t, p)`. Zero spread gives `p = 0.5` when the mean equals
/// `mu0`, else 0 or 1 according to the side.
pub fn one_sided_ttest_greater(x: &[f64], mu0: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let m = mean(x);
    let sd = sample_std(x);
    if sd == 0.0 {
        return match m.partial_cmp(&mu0) {
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 0.0),
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 0.5),
        };
    }
    let t = (m - mu0) / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 2");
    (t, 1.0 - dist.cdf(t))
}

/// Assignment maximizing the summed `weight[row][col]` over a square
/// matrix; returns `col` for each row (Hungarian method with potentials).
pub fn max_weight_assignment(weight: &[Vec<f64>]) -> Vec<usize> {
    let n = weight.len();
    if n == 0 {
        return Vec::new();
    }
    let max = weight.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Minimize cost = max − weight, 1-based arrays as in the classic form.
    let cost = |i: usize, j: usize| max - weight[i - 1][j - 1];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// [`max_weight_assignment`] for `rows ≤ cols`: pads with zero rows and
/// returns the column of each real row.
pub fn max_weight_assignment_rect(weight: &[Vec<f64>]) -> Vec<usize> {
    let rows = weight.len();
    let cols = weight.first().map_or(0, |r| r.len());
    assert!(rows <= cols, "more rows than columns");
    let mut square = weight.to_vec();
    square.resize(cols, vec![0.0; cols]);
    let mut out = max_weight_assignment(&square);
    out.truncate(rows);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(w: &[Vec<f64>]) -> f64 {
        fn rec(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == w.len() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..w.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[row][j] + rec(w, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(w, 0, &mut vec![false; w.len()])
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (1u64 << 31) as f64
        };
        for n in 1..=6 {
            for _ in 0..20 {
                let w: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| next() * 2.0 - 1.0).collect()).collect();
                let a = max_weight_assignment(&w);
                let mut seen = a.clone();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                let total: f64 = a.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
                assert!((total - brute_force(&w)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ttest_hand_value() {
        // mean 0.88, sample sd 0.0570088, t = 0.38 / (0.0570088 / sqrt 5) ≈ 14.9
        let (t, p) = one_sided_ttest_greater(&[0.9, 0.8, 0.85, 0.95, 0.9], 0.5);
        let sd = (0.0130f64 / 4.0).sqrt();
        assert!((t - 0.38 / (sd / 5f64.sqrt())).abs() < 1e-9);
        assert!(p < 0.01);
        assert_eq!(one_sided_ttest_greater(&[0.5; 4], 0.5).1, 0.5);
        assert!(one_sided_ttest_greater(&[0.3, 0.35, 0.2], 0.5).1 > 0.5);
    }

    #[test]
    fn pearson_basic() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn rectangular_assignment() {
        let w = vec![vec![0.1, 0.9, 0.2], vec![0.8, 0.85, 0.1]];
        assert_eq!(max_weight_assignment_rect(&w), vec![1, 0]);
    }
}
