//! Gauss rules and a graded composite rule for integrable point singularities.

use std::f64::consts::PI;

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Gauss–Hermite rule for `E f(Z)`, `Z ~ N(0,1)`: weights sum to 1.
///
/// Roots come from Sturm-sequence bisection on the Jacobi matrix and weights from the
/// orthonormal recurrence carried with a separate exponent, so large orders are safe.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    let nf = n as f64;
    let pim4 = PI.powf(-0.25);
    let offdiag2: Vec<f64> = (1..n).map(|k| k as f64 / 2.0).collect();
    // Number of Jacobi eigenvalues strictly below x.
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = -x;
        if q < 0.0 {
            count += 1;
        }
        for b2 in &offdiag2 {
            let prev = if q == 0.0 { f64::MIN_POSITIVE } else { q };
            q = -x - b2 / prev;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let bound = (2.0 * nf + 1.0).sqrt() + 1.0;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // The i-th smallest root is negative for i < n/2.
        let (mut lo, mut hi) = (-bound, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if count_below(mid) > i {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut z = 0.5 * (lo + hi);
        // Newton polish.
        for _ in 0..3 {
            let (p_n, p_nm1, _) = hermite_recurrence(n, z, pim4);
            if p_nm1 == 0.0 {
                break;
            }
            let dz = p_n / ((2.0 * nf).sqrt() * p_nm1);
            if dz.abs() < (hi - lo).abs() + 1e-14 * z.abs().max(1.0) {
                z -= dz;
            }
        }
        let (_, p_nm1, log_scale) = hermite_recurrence(n, z, pim4);
        // Physicists' weight 2/(2n p_{n-1}^2) for orthonormal p.
        let log_w = -nf.ln() - 2.0 * (p_nm1.abs().ln() + log_scale);
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = log_w.exp();
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let mut weights: Vec<f64> = w.iter().map(|v| v / PI.sqrt()).collect();
    let total: f64 = weights.iter().sum();
    for v in &mut weights {
        *v /= total;
    }
    Rule { nodes, weights }
}

/// Orthonormal Hermite recurrence at `z`, returning `(p_n, p_{n-1}, log_scale)` where the
/// true values are the returned ones times `exp(log_scale)`.
fn hermite_recurrence(n: usize, z: f64, pim4: f64) -> (f64, f64, f64) {
    let mut log_scale = 0.0;
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
        if p1.abs().max(p2.abs()) > 1e100 {
            p1 *= 1e-100;
            p2 *= 1e-100;
            log_scale += 100.0 * std::f64::consts::LN_10;
        }
    }
    (p1, p2, log_scale)
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let wv = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = wv;
        weights[n - 1 - i] = wv;
    }
    Rule { nodes, weights }
}

/// Composite Gauss–Legendre rule on `[a, b]` with panels graded geometrically toward each
/// breakpoint in `singular` and a maximal panel width `max_width` elsewhere.
pub fn graded_rule(a: f64, b: f64, singular: &[f64], max_width: f64, order: usize) -> Rule {
    let base = gauss_legendre(order);
    let mut breaks: Vec<f64> = vec![a, b];
    for &s in singular {
        if s > a && s < b {
            breaks.push(s);
        }
    }
    breaks.sort_by(|p, q| p.partial_cmp(q).unwrap());
    breaks.dedup();
    let is_sing = |v: f64| singular.contains(&v);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut push_panel = |lo: f64, hi: f64| {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (x, w) in base.nodes.iter().zip(&base.weights) {
            nodes.push(mid + half * x);
            weights.push(half * w);
        }
    };
    for win in breaks.windows(2) {
        let (lo, hi) = (win[0], win[1]);
        let len = hi - lo;
        let left = is_sing(lo);
        let right = is_sing(hi);
        let graded = |from: f64, to: f64, push: &mut dyn FnMut(f64, f64)| {
            let total = to - from;
            let mut edges = vec![0.0f64];
            let mut t = total.abs();
            while t > total.abs() * 1e-12 {
                edges.push(t);
                t *= 0.5;
            }
            edges.push(0.0);
            edges.sort_by(|p, q| p.partial_cmp(q).unwrap());
            edges.dedup();
            let sign = total.signum();
            for e in edges.windows(2) {
                let (u0, u1) = (from + sign * e[0], from + sign * e[1]);
                let (p, q) = if u0 < u1 { (u0, u1) } else { (u1, u0) };
                let w = q - p;
                let pieces = (w / max_width).ceil().max(1.0) as usize;
                for k in 0..pieces {
                    push(p + w * k as f64 / pieces as f64, p + w * (k + 1) as f64 / pieces as f64);
                }
            }
        };
        match (left, right) {
            (false, false) => {
                let pieces = (len / max_width).ceil().max(1.0) as usize;
                for k in 0..pieces {
                    push_panel(lo + len * k as f64 / pieces as f64, lo + len * (k + 1) as f64 / pieces as f64);
                }
            }
            (true, false) => graded(lo, hi, &mut push_panel),
            (false, true) => graded(hi, lo, &mut push_panel),
            (true, true) => {
                let mid = 0.5 * (lo + hi);
                graded(lo, mid, &mut push_panel);
                graded(hi, mid, &mut push_panel);
            }
        }
    }
    let mut idx: Vec<usize> = (0..nodes.len()).collect();
    idx.sort_by(|i, j| nodes[*i].partial_cmp(&nodes[*j]).unwrap());
    Rule {
        nodes: idx.iter().map(|i| nodes[*i]).collect(),
        weights: idx.iter().map(|i| weights[*i]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_moments() {
        for n in [5usize, 20, 60, 200] {
            let r = gauss_hermite(n);
            assert_relative_eq!(r.integrate(|_| 1.0), 1.0, epsilon = 1e-13);
            assert_relative_eq!(r.integrate(|x| x * x), 1.0, epsilon = 1e-11);
            assert_relative_eq!(r.integrate(|x| x.powi(4)), 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn hermite_large_order_oscillatory() {
        let r = gauss_hermite(1500);
        let v = r.integrate(|x| (20.0 * x).cos());
        assert!(v.abs() < 1e-12, "{v}");
        let v = r.integrate(|x| (3.0 * x).cos());
        assert_relative_eq!(v, (-4.5f64).exp(), epsilon = 1e-13);
    }

    #[test]
    fn legendre_polynomials_exact() {
        let r = gauss_legendre(7);
        assert_relative_eq!(r.integrate(|x| x.powi(12)), 2.0 / 13.0, epsilon = 1e-14);
    }

    #[test]
    fn graded_rule_handles_power_singularity() {
        let r = graded_rule(-1.0, 1.0, &[0.0], 0.1, 8);
        let v = r.integrate(|x| x.abs().powf(-0.6));
        assert_relative_eq!(v, 2.0 / 0.4, max_relative = 1e-5);
    }
}
