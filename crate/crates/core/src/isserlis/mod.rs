//! Exact joint moments of Wick powers organized by pairing-multiplicity matrices,
//! the reduction moves used to compare such moments, and cluster chaos coefficients.

mod lemma;

pub use lemma::{check_correlation_lemma, LemmaConfig, LemmaKind, RatioPoint, RatioReport};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::chaos::{truncated_trig_partial, ChaosTruncSpec};
use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite;

/// Symmetric zero-diagonal nonnegative integer matrix, stored as its upper triangle
/// in row-major order `(0,1), (0,2), …, (1,2), …`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DMatrix {
    size: usize,
    upper: Vec<u32>,
}

impl DMatrix {
    pub fn zeros(size: usize) -> Self {
        Self { size, upper: vec![0; size * size.saturating_sub(1) / 2] }
    }

    pub fn from_entries(size: usize, entries: &[(usize, usize, u32)]) -> Self {
        let mut d = Self::zeros(size);
        for &(i, j, v) in entries {
            d.set(i, j, v);
        }
        d
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn upper(&self) -> &[u32] {
        &self.upper
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * self.size - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        if i == j {
            0
        } else {
            self.upper[self.slot(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: u32) {
        assert_ne!(i, j, "diagonal of a DMatrix is fixed at zero");
        let s = self.slot(i, j);
        self.upper[s] = v;
    }

    pub fn row_sum(&self, i: usize) -> u32 {
        (0..self.size).map(|j| self.get(i, j)).sum()
    }

    pub fn row_sums(&self) -> Vec<u32> {
        (0..self.size).map(|i| self.row_sum(i)).collect()
    }

    /// `prod_{i<j} cov_ij^{d_ij}`.
    pub fn weight(&self, cov: &[Vec<f64>]) -> f64 {
        let mut w = 1.0;
        for i in 0..self.size {
            for j in i + 1..self.size {
                let d = self.get(i, j);
                if d > 0 {
                    w *= cov[i][j].powi(d as i32);
                }
            }
        }
        w
    }

    /// `prod n_i! / prod_{i<j} d_ij!`: the number of pairings realizing this matrix.
    pub fn multiplicity(&self) -> BigUint {
        let mut num = BigUint::one();
        for n in self.row_sums() {
            num *= factorial(n);
        }
        let mut den = BigUint::one();
        for d in &self.upper {
            den *= factorial(*d);
        }
        num / den
    }
}

pub fn factorial(n: u32) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

/// All matrices with the given row sums, lexicographic in the upper triangle.
pub fn enumerate_dmatrices(row_sums: &[u32]) -> Vec<DMatrix> {
    let k = row_sums.len();
    let total: u32 = row_sums.iter().sum();
    if total % 2 == 1 {
        return Vec::new();
    }
    let mut out = Vec::new();
    if k == 0 {
        out.push(DMatrix::zeros(0));
        return out;
    }
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let mut remaining = row_sums.to_vec();
    let mut current = DMatrix::zeros(k);
    fill(0, &pairs, &mut remaining, &mut current, &mut out);
    out
}

fn fill(p: usize, pairs: &[(usize, usize)], remaining: &mut [u32], current: &mut DMatrix, out: &mut Vec<DMatrix>) {
    if p == pairs.len() {
        if remaining.iter().all(|r| *r == 0) {
            out.push(current.clone());
        }
        return;
    }
    let (i, j) = pairs[p];
    let last_for_i = p + 1 == pairs.len() || pairs[p + 1].0 != i;
    let hi = remaining[i].min(remaining[j]);
    let lo = if last_for_i { remaining[i] } else { 0 };
    if lo > hi {
        return;
    }
    for v in lo..=hi {
        remaining[i] -= v;
        remaining[j] -= v;
        current.set(i, j, v);
        // Row i can still be served only by columns after j.
        let capacity: u32 = pairs[p + 1..]
            .iter()
            .filter(|(a, _)| *a == i)
            .map(|(_, b)| remaining[*b])
            .sum();
        if remaining[i] <= capacity {
            fill(p + 1, pairs, remaining, current, out);
        }
        remaining[i] += v;
        remaining[j] += v;
    }
    current.set(i, j, 0);
}

/// Precomputed pairing expansion of `E prod Z_i^{⋄n_i}`: matrices with exact multiplicities.
#[derive(Debug, Clone)]
pub struct WickExpansion {
    degrees: Vec<u32>,
    terms: Vec<(DMatrix, BigUint)>,
}

impl WickExpansion {
    pub fn new(degrees: &[u32]) -> Self {
        let terms = enumerate_dmatrices(degrees)
            .into_iter()
            .map(|d| {
                let m = d.multiplicity();
                (d, m)
            })
            .collect();
        Self { degrees: degrees.to_vec(), terms }
    }

    pub fn terms(&self) -> &[(DMatrix, BigUint)] {
        &self.terms
    }

    /// Total number of pairings, exact.
    pub fn pairing_count(&self) -> BigUint {
        self.terms.iter().map(|(_, m)| m.clone()).sum()
    }

    pub fn eval(&self, cov: &[Vec<f64>]) -> Result<f64> {
        check_cov(cov, self.degrees.len())?;
        Ok(self
            .terms
            .iter()
            .map(|(d, m)| m.to_f64().unwrap_or(f64::INFINITY) * d.weight(cov))
            .sum())
    }
}

fn check_cov(cov: &[Vec<f64>], k: usize) -> Result<()> {
    if cov.len() != k {
        return Err(Error::Dimension { expected: k, got: cov.len() });
    }
    if let Some(row) = cov.iter().find(|r| r.len() != k) {
        return Err(Error::Dimension { expected: k, got: row.len() });
    }
    Ok(())
}

/// `E prod_i Z_i^{⋄n_i}` for a centered Gaussian vector with covariance `cov`.
pub fn wick_moment(degrees: &[u32], cov: &[Vec<f64>]) -> Result<f64> {
    check_cov(cov, degrees.len())?;
    WickExpansion::new(degrees).eval(cov)
}

/// `E prod_i Z_i^{⋄n_i}` by summing over perfect matchings of the `Σ n_i` labelled legs
/// that never join two legs of the same factor.
pub fn matching_moment(degrees: &[u32], cov: &[Vec<f64>]) -> Result<f64> {
    check_cov(cov, degrees.len())?;
    let legs: Vec<usize> = degrees.iter().enumerate().flat_map(|(i, d)| std::iter::repeat_n(i, *d as usize)).collect();
    if legs.len() % 2 == 1 {
        return Ok(0.0);
    }
    fn walk(legs: &[usize], used: &mut [bool], cov: &[Vec<f64>]) -> f64 {
        let Some(first) = used.iter().position(|u| !u) else { return 1.0 };
        used[first] = true;
        let mut total = 0.0;
        for j in first + 1..legs.len() {
            if !used[j] && legs[j] != legs[first] {
                used[j] = true;
                total += cov[legs[first]][legs[j]] * walk(legs, used, cov);
                used[j] = false;
            }
        }
        used[first] = false;
        total
    }
    Ok(walk(&legs, &mut vec![false; legs.len()], cov))
}

/// Result of [`reduce_to_dstar`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub dstar: DMatrix,
    /// Exponent `p` such that `W_D <~ ε^{-p} W_{D*}`.
    pub penalty: f64,
    pub merge_moves: usize,
    pub rebalance_moves: usize,
}

impl Reduction {
    pub fn penalty_factor(&self, eps: f64) -> f64 {
        eps.powf(-self.penalty)
    }
}

/// Moves index-0 contractions onto `y`-pairs and rebalances the remaining row,
/// producing a matrix with `d*_{0i} = 0` and `d*_i >= m2` for `i >= 1`.
pub fn reduce_to_dstar(d: &DMatrix, m2: u32, alpha: f64) -> Result<Reduction> {
    let k = d.size();
    if k < 2 {
        return Err(Error::Structural("need the fixed point and at least one y".into()));
    }
    let mut cur = d.clone();
    let mut merge_moves = 0;
    // Move (i): pair off contractions with the fixed point two at a time.
    loop {
        let active: Vec<usize> = (1..k).filter(|i| cur.get(0, *i) > 0).collect();
        if active.len() < 2 {
            break;
        }
        let (i, j) = (active[0], active[1]);
        cur.set(0, i, cur.get(0, i) - 1);
        cur.set(0, j, cur.get(0, j) - 1);
        cur.set(i, j, cur.get(i, j) + 2);
        merge_moves += 1;
    }
    let mut rebalance_moves = 0;
    if let Some(star) = (1..k).find(|i| cur.get(0, *i) > 0) {
        // Move (ii): drop the last contraction with the fixed point, then rebalance.
        cur.set(0, star, 0);
        while cur.row_sum(star) < m2 {
            let pair = (1..k)
                .filter(|i| *i != star)
                .flat_map(|i| (i + 1..k).filter(move |j| *j != star).map(move |j| (i, j)))
                .find(|(i, j)| cur.get(*i, *j) > 0);
            let Some((i, j)) = pair else {
                return Err(Error::Structural(format!(
                    "row {star} has degree {} < {m2} and no y-pair is left to split",
                    cur.row_sum(star)
                )));
            };
            cur.set(star, i, cur.get(star, i) + 1);
            cur.set(star, j, cur.get(star, j) + 1);
            cur.set(i, j, cur.get(i, j) - 1);
            rebalance_moves += 1;
        }
    }
    for i in 1..k {
        if cur.row_sum(i) < m2 {
            return Err(Error::Structural(format!("row {i} ends with degree below {m2}")));
        }
    }
    Ok(Reduction {
        dstar: cur,
        penalty: 2.0 * alpha * rebalance_moves as f64,
        merge_moves,
        rebalance_moves,
    })
}

/// Inputs to [`cluster_coeff`]: one entry per cluster variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCoeffQuery {
    pub degrees: Vec<u32>,
    pub theta: Vec<f64>,
    pub deriv: Vec<u32>,
    pub trunc: Vec<ChaosTruncSpec>,
    pub cov: Vec<Vec<f64>>,
}

/// Largest cluster handled by tensor quadrature.
pub const MAX_CLUSTER: usize = 4;
/// Gauss–Hermite order per axis.
pub const CLUSTER_GH_ORDER: usize = 60;

/// `(1/n!) E prod_j ∂_θ^{r_j} ∂_Z^{n_j} T_{(t_j-1)}(trig(θ_j Z_j))` by tensor Gauss–Hermite.
pub fn cluster_coeff(q: &ClusterCoeffQuery) -> Result<f64> {
    cluster_coeff_with_order(q, CLUSTER_GH_ORDER)
}

pub fn cluster_coeff_with_order(q: &ClusterCoeffQuery, order: usize) -> Result<f64> {
    let k = q.degrees.len();
    if k == 0 || k > MAX_CLUSTER {
        return Err(Error::InvalidParameter(format!("cluster size {k} outside 1..={MAX_CLUSTER}")));
    }
    for len in [q.theta.len(), q.deriv.len(), q.trunc.len()] {
        if len != k {
            return Err(Error::Dimension { expected: k, got: len });
        }
    }
    check_cov(&q.cov, k)?;
    let l = cholesky(&q.cov)?;
    let rule = gauss_hermite(order);
    let n = rule.len();
    let mut idx = vec![0usize; k];
    let mut total = 0.0;
    let mut z = vec![0.0; k];
    loop {
        let mut w = 1.0;
        for i in &idx {
            w *= rule.weights[*i];
        }
        if w > 0.0 {
            for (row, zr) in z.iter_mut().enumerate() {
                *zr = (0..=row).map(|c| l[row][c] * rule.nodes[idx[c]]).sum();
            }
            let mut f = 1.0;
            for j in 0..k {
                f *= truncated_trig_partial(z[j], q.theta[j], &q.trunc[j], q.cov[j][j], q.deriv[j], q.degrees[j]);
            }
            total += w * f;
        }
        let mut a = 0;
        loop {
            idx[a] += 1;
            if idx[a] < n {
                break;
            }
            idx[a] = 0;
            a += 1;
            if a == k {
                let norm: f64 = q.degrees.iter().map(|d| factorial(*d).to_f64().unwrap()).product();
                return Ok(total / norm);
            }
        }
    }
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = a.len();
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-12 * scale;
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|c| l[i][c] * l[j][c]).sum();
            if i == j {
                let v = a[i][i] - s;
                if v < -tol {
                    return Err(Error::NotPsd);
                }
                l[i][i] = v.max(0.0).sqrt();
            } else if l[j][j] > 0.0 {
                l[i][j] = (a[i][j] - s) / l[j][j];
            } else if (a[i][j] - s).abs() > 1e-9 * scale {
                return Err(Error::NotPsd);
            }
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::{trig_chaos_coeff, Trig};
    use approx::assert_relative_eq;

    #[test]
    fn enumeration_examples() {
        let a = enumerate_dmatrices(&[2, 2]);
        assert_eq!(a, vec![DMatrix::from_entries(2, &[(0, 1, 2)])]);
        let b = enumerate_dmatrices(&[1, 1, 2]);
        assert_eq!(b, vec![DMatrix::from_entries(3, &[(0, 2, 1), (1, 2, 1)])]);
        assert!(enumerate_dmatrices(&[1, 1, 1]).is_empty());
        let c = enumerate_dmatrices(&[2, 2, 2]);
        assert_eq!(c, vec![DMatrix::from_entries(3, &[(0, 1, 1), (0, 2, 1), (1, 2, 1)])]);
        let d = enumerate_dmatrices(&[2, 2, 2, 2]);
        let uppers: Vec<_> = d.iter().map(|m| m.upper().to_vec()).collect();
        let mut sorted = uppers.clone();
        sorted.sort();
        assert_eq!(uppers, sorted);
        assert_eq!(
            uppers,
            vec![
                vec![0, 0, 2, 2, 0, 0],
                vec![0, 1, 1, 1, 1, 0],
                vec![0, 2, 0, 0, 2, 0],
                vec![1, 0, 1, 1, 0, 1],
                vec![1, 1, 0, 0, 1, 1],
                vec![2, 0, 0, 0, 0, 2],
            ]
        );
    }

    #[test]
    fn moment_examples() {
        let cov = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
        assert_relative_eq!(wick_moment(&[2, 2], &cov).unwrap(), 0.5, epsilon = 1e-15);
        let cov3 = vec![vec![1.0, 0.2, 0.3], vec![0.2, 1.0, 0.4], vec![0.3, 0.4, 1.0]];
        assert_relative_eq!(wick_moment(&[1, 1, 2], &cov3).unwrap(), 2.0 * 0.3 * 0.4, epsilon = 1e-15);
        assert_eq!(wick_moment(&[1, 1, 1], &cov3).unwrap(), 0.0);
        assert!(wick_moment(&[1, 1], &cov3).is_err());
    }

    #[test]
    fn matching_agrees_with_expansion() {
        let cov = vec![
            vec![1.0, 0.3, -0.2, 0.1],
            vec![0.3, 1.1, 0.4, 0.25],
            vec![-0.2, 0.4, 0.9, -0.15],
            vec![0.1, 0.25, -0.15, 1.2],
        ];
        for degrees in [[2, 2, 2, 2], [3, 1, 2, 2], [1, 3, 3, 1], [4, 2, 1, 1], [0, 2, 3, 1]] {
            let a = wick_moment(&degrees, &cov).unwrap();
            let b = matching_moment(&degrees, &cov).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn multiplicity_counts_pairings() {
        // Two half-edges per node on three nodes: the only shape is a triangle, 2!^3 ways.
        assert_eq!(WickExpansion::new(&[2, 2, 2]).pairing_count(), BigUint::from(8u32));
        // Four nodes: three double edges (2 ways each) plus three 4-cycles (16 ways each).
        assert_eq!(WickExpansion::new(&[2, 2, 2, 2]).pairing_count(), BigUint::from(60u32));
    }

    #[test]
    fn reduction_merge_move() {
        // x paired once with y1 and y2; y1,y2 otherwise paired with y3.
        let d = DMatrix::from_entries(4, &[(0, 1, 1), (0, 2, 1), (1, 3, 1), (2, 3, 1)]);
        let r = reduce_to_dstar(&d, 1, 0.5).unwrap();
        assert_eq!(r.dstar.get(0, 1), 0);
        assert_eq!(r.dstar.get(0, 2), 0);
        assert_eq!(r.dstar.get(1, 2), 2);
        assert_eq!(r.penalty, 0.0);
    }

    #[test]
    fn reduction_identity_and_rebalance() {
        let dstar = DMatrix::from_entries(3, &[(1, 2, 2)]);
        let r = reduce_to_dstar(&dstar, 2, 0.7).unwrap();
        assert_eq!(r.dstar, dstar);
        assert_eq!(r.penalty, 0.0);
        // x-y1 once, y1 otherwise unpaired, y2-y3 twice: dropping x-y1 leaves d_1 = 0 < 1.
        let d = DMatrix::from_entries(4, &[(0, 1, 1), (2, 3, 2)]);
        let r = reduce_to_dstar(&d, 1, 0.3).unwrap();
        assert_eq!(r.rebalance_moves, 1);
        assert_relative_eq!(r.penalty, 0.6);
        assert_eq!(r.dstar, DMatrix::from_entries(4, &[(1, 2, 1), (1, 3, 1), (2, 3, 1)]));
    }

    #[test]
    fn reduction_without_pairs_is_structural_error() {
        let d = DMatrix::from_entries(2, &[(0, 1, 1)]);
        assert!(matches!(reduce_to_dstar(&d, 1, 0.5), Err(Error::Structural(_))));
    }

    #[test]
    fn cluster_singleton_matches_coefficients() {
        for (trig, t) in [(Trig::Cos, 2u32), (Trig::Sin, 1), (Trig::Sin, 3)] {
            for n in 0..6 {
                let q = ClusterCoeffQuery {
                    degrees: vec![n],
                    theta: vec![1.3],
                    deriv: vec![0],
                    trunc: vec![ChaosTruncSpec::new(trig, t).unwrap()],
                    cov: vec![vec![0.8]],
                };
                let expect = if n < t { 0.0 } else { trig_chaos_coeff(trig, n, 1.3, 0.8) };
                assert_relative_eq!(cluster_coeff(&q).unwrap(), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cluster_mean_removed_and_independent_pair_factorizes() {
        let q = ClusterCoeffQuery {
            degrees: vec![0],
            theta: vec![2.0],
            deriv: vec![0],
            trunc: vec![ChaosTruncSpec::new(Trig::Cos, 2).unwrap()],
            cov: vec![vec![1.0]],
        };
        assert!(cluster_coeff(&q).unwrap().abs() < 1e-14);
        let pair = ClusterCoeffQuery {
            degrees: vec![1, 2],
            theta: vec![0.7, 1.1],
            deriv: vec![1, 0],
            trunc: vec![ChaosTruncSpec::for_order(1), ChaosTruncSpec::for_order(0)],
            cov: vec![vec![0.9, 0.0], vec![0.0, 1.2]],
        };
        let single = |j: usize| ClusterCoeffQuery {
            degrees: vec![pair.degrees[j]],
            theta: vec![pair.theta[j]],
            deriv: vec![pair.deriv[j]],
            trunc: vec![pair.trunc[j]],
            cov: vec![vec![pair.cov[j][j]]],
        };
        let prod = cluster_coeff(&single(0)).unwrap() * cluster_coeff(&single(1)).unwrap();
        assert_relative_eq!(cluster_coeff(&pair).unwrap(), prod, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        let l = cholesky(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_relative_eq!(l[1][0], 1.0);
        assert_eq!(l[1][1], 0.0);
    }
}
