//! Small statistics helpers: fixed-order sums, percentile bootstrap, least squares.

use rand::Rng;

use crate::rng::stream;

/// Pairwise summation in a fixed tree order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(v) / v.len() as f64
}

/// Percentile bootstrap of `stat` over resamples of `v`; returns `(lo, hi)` at `level`.
pub fn bootstrap_ci(v: &[f64], stat: impl Fn(&[f64]) -> f64, resamples: usize, seed: u64, level: f64) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = stream(seed, 0xB007);
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = v[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    stats.sort_by(|a, b| a.total_cmp(b));
    percentile_pair(&stats, level)
}

pub fn percentile_pair(sorted: &[f64], level: f64) -> (f64, f64) {
    let n = sorted.len();
    let tail = (1.0 - level) / 2.0;
    let lo = ((tail * n as f64).floor() as usize).min(n - 1);
    let hi = (((1.0 - tail) * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    (sorted[lo], sorted[hi])
}

/// Ordinary least squares `y ≈ X β`; returns coefficients and their standard errors.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let p = x.first()?.len();
    if n < p {
        return None;
    }
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, yi) in x.iter().zip(y) {
        for a in 0..p {
            xty[a] += row[a] * yi;
            for b in 0..p {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let inv = invert(&xtx)?;
    let beta: Vec<f64> = (0..p).map(|a| (0..p).map(|b| inv[a][b] * xty[b]).sum()).collect();
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(&beta).map(|(r, b)| r * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    let dof = (n - p).max(1) as f64;
    let s2 = rss / dof;
    let se = (0..p).map(|a| (s2 * inv[a][a]).max(0.0).sqrt()).collect();
    Some((beta, se))
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let p = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..p).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..p {
        let pivot = (col..p).max_by(|i, j| m[*i][col].abs().total_cmp(&m[*j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * p {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[p..].to_vec()).collect())
}

/// Slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![1.0, v.ln()]).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (b, se) = least_squares(&rows, &ly)?;
    Some((b[1], se[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn least_squares_recovers_plane() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64, (i * i % 7) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 + 0.5 * r[1] - 1.5 * r[2]).collect();
        let (b, _) = least_squares(&rows, &y).unwrap();
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(b[1], 0.5, epsilon = 1e-10);
        assert_relative_eq!(b[2], -1.5, epsilon = 1e-10);
    }

    #[test]
    fn loglog_slope_of_power() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.7)).collect();
        assert_relative_eq!(loglog_slope(&x, &y).unwrap().0, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let a = bootstrap_ci(&v, mean, 200, 5, 0.95);
        let b = bootstrap_ci(&v, mean, 200, 5, 0.95);
        assert_eq!(a, b);
        assert!(a.0 <= mean(&v) && mean(&v) <= a.1);
    }
}
