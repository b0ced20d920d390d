//! Clustering at scale `Lε`, singleton detection and small-volume estimates.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScalingGeometry;
use crate::rng::stream;

/// Classes of the equivalence relation generated by `|z_i − z_j|_s ≤ scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub scale: f64,
    /// Classes sorted by their smallest index; indices ascending within a class.
    pub classes: Vec<Vec<usize>>,
    /// Indices of the points forming singleton classes.
    pub singletons: Vec<usize>,
}

impl ClusterPartition {
    pub fn class_of(&self, i: usize) -> Option<usize> {
        self.classes.iter().position(|c| c.contains(&i))
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

pub fn build_clusters(points: &[Vec<f64>], scale: f64, g: &ScalingGeometry) -> Result<ClusterPartition> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!("cluster scale {scale} must be positive")));
    }
    for p in points {
        g.check_dim(p)?;
    }
    Ok(clusters_unchecked(points, scale, g))
}

fn clusters_unchecked(points: &[Vec<f64>], scale: f64, g: &ScalingGeometry) -> ClusterPartition {
    let n = points.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if g.distance(&points[i], &points[j]) <= scale {
                uf.union(i, j);
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut root_class: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = uf.find(i);
        match root_class[r] {
            Some(c) => classes[c].push(i),
            None => {
                root_class[r] = Some(classes.len());
                classes.push(vec![i]);
            }
        }
    }
    let singletons = classes.iter().filter(|c| c.len() == 1).map(|c| c[0]).collect();
    ClusterPartition { scale, classes, singletons }
}

/// True iff some point is farther than `scale` from every other point.
pub fn in_s2n(points: &[Vec<f64>], scale: f64, g: &ScalingGeometry) -> bool {
    let n = points.len();
    (0..n).any(|i| (0..n).all(|j| j == i || g.distance(&points[i], &points[j]) > scale))
}

/// Membership in `C_m`: the points are linked into one class at `scale`.
pub fn in_cm(points: &[Vec<f64>], scale: f64, g: &ScalingGeometry) -> bool {
    points.len() >= 2 && clusters_unchecked(points, scale, g).classes.len() == 1
}

/// Set partitions of `0..n` whose blocks all have at least `min_block` elements,
/// in restricted-growth-string order.
pub fn set_partitions(n: usize, min_block: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn rec(i: usize, max_label: usize, labels: &mut Vec<usize>, min_block: usize, out: &mut Vec<Vec<Vec<usize>>>) {
        let n = labels.len();
        if i == n {
            let blocks = max_label;
            let mut parts = vec![Vec::new(); blocks];
            for (k, l) in labels.iter().enumerate() {
                parts[*l].push(k);
            }
            if parts.iter().all(|p| p.len() >= min_block) {
                out.push(parts);
            }
            return;
        }
        for l in 0..=max_label {
            labels[i] = l;
            rec(i + 1, max_label.max(l + 1), labels, min_block, out);
        }
    }
    if n == 0 {
        return vec![Vec::new()];
    }
    rec(0, 0, &mut labels, min_block, &mut out);
    out
}

/// Monte Carlo estimate of a volume with its confidence interval and reference bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub hits: u64,
    pub trials: u64,
    pub bound: f64,
    pub ratio: f64,
}

/// Uniform draw of `count` points in the box `{|z|_s ≤ r}`.
fn uniform_box_points(rng: &mut impl Rng, count: usize, half_widths: &[f64]) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| half_widths.iter().map(|w| rng.random_range(-*w..=*w)).collect())
        .collect()
}

const VOLUME_CHUNK: u64 = 4096;

/// Volume of `S_{2n}^c ∩ {|z⃗| ≤ 2λ}` at cluster scale `l·ε`, against
/// `(ε∧λ)^{n|s|} λ^{n|s|}`.
pub fn volume_sc(
    n: usize,
    eps: f64,
    lambda: f64,
    l: f64,
    g: &ScalingGeometry,
    n_mc: u64,
    seed: u64,
) -> Result<VolumeEstimate> {
    if n_mc < 10_000 {
        return Err(Error::InvalidParameter(format!("n_mc={n_mc} below 10^4")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let scale = l * eps;
    let half: Vec<f64> = g.s().iter().map(|s| (2.0 * lambda).powf(*s)).collect();
    let box_vol: f64 = half.iter().map(|w| 2.0 * w).product::<f64>().powi(2 * n as i32);
    let chunks = n_mc.div_ceil(VOLUME_CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c);
            let count = VOLUME_CHUNK.min(n_mc - c * VOLUME_CHUNK);
            (0..count)
                .filter(|_| {
                    let pts = uniform_box_points(&mut rng, 2 * n, &half);
                    !in_s2n(&pts, scale, g)
                })
                .count() as u64
        })
        .sum();
    if hits == 0 {
        return Err(Error::NoHits);
    }
    let p = hits as f64 / n_mc as f64;
    let (plo, phi) = wilson(hits, n_mc);
    let total = g.total();
    let bound = eps.min(lambda).powf(n as f64 * total) * lambda.powf(n as f64 * total);
    let estimate = p * box_vol;
    Ok(VolumeEstimate {
        estimate,
        lo: plo * box_vol,
        hi: phi * box_vol,
        hits,
        trials: n_mc,
        bound,
        ratio: estimate / bound,
    })
}

/// Wilson score interval at 95%.
pub fn wilson(hits: u64, trials: u64) -> (f64, f64) {
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub trials: u64,
    pub partitions: usize,
    pub in_sc: u64,
    pub violations: u64,
    /// First configuration on which the two sides disagree.
    pub witness: Option<Vec<Vec<f64>>>,
}

/// Checks `1_{S^c} = 1_{∪_P ∏ C_|u|}` at scale `l·ε` on random configurations in the `2λ`-box.
pub fn partition_sum_check(
    n: usize,
    eps: f64,
    lambda: f64,
    l: f64,
    g: &ScalingGeometry,
    n_mc: u64,
    seed: u64,
) -> Result<PartitionReport> {
    if n == 0 || 2 * n > 8 {
        return Err(Error::InvalidParameter(format!("2n={} outside 2..=8", 2 * n)));
    }
    let scale = l * eps;
    let partitions = set_partitions(2 * n, 2);
    let half: Vec<f64> = g.s().iter().map(|s| (2.0 * lambda).powf(*s)).collect();
    let chunks = n_mc.div_ceil(VOLUME_CHUNK);
    let results: Vec<(u64, u64, Option<Vec<Vec<f64>>>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c);
            let count = VOLUME_CHUNK.min(n_mc - c * VOLUME_CHUNK);
            let mut in_sc = 0;
            let mut bad = 0;
            let mut witness = None;
            for _ in 0..count {
                let pts = uniform_box_points(&mut rng, 2 * n, &half);
                let lhs = !in_s2n(&pts, scale, g);
                let rhs = partitions.iter().any(|p| {
                    p.iter().all(|block| {
                        let sub: Vec<Vec<f64>> = block.iter().map(|i| pts[*i].clone()).collect();
                        in_cm(&sub, scale, g)
                    })
                });
                in_sc += lhs as u64;
                if lhs != rhs {
                    bad += 1;
                    witness.get_or_insert(pts);
                }
            }
            (in_sc, bad, witness)
        })
        .collect();
    let mut report = PartitionReport { trials: n_mc, partitions: partitions.len(), in_sc: 0, violations: 0, witness: None };
    for (a, b, w) in results {
        report.in_sc += a;
        report.violations += b;
        if report.witness.is_none() {
            report.witness = w;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn cluster_examples() {
        let g = ScalingGeometry::euclidean(1);
        let c = build_clusters(&pts(&[0.0, 0.4, 10.0]), 1.0, &g).unwrap();
        assert_eq!(c.classes, vec![vec![0, 1], vec![2]]);
        assert_eq!(c.singletons, vec![2]);
        let c = build_clusters(&pts(&[0.3, 0.3, 0.3]), 1.0, &g).unwrap();
        assert_eq!(c.classes.len(), 1);
        let c = build_clusters(&pts(&[0.0, 0.9, 1.8]), 1.0, &g).unwrap();
        assert_eq!(c.classes, vec![vec![0, 1, 2]]);
        assert!(build_clusters(&pts(&[0.0]), 0.0, &g).is_err());
    }

    #[test]
    fn s2n_examples() {
        let g = ScalingGeometry::euclidean(1);
        assert!(in_s2n(&pts(&[0.0, 2.0]), 1.0, &g));
        assert!(!in_s2n(&pts(&[0.0, 0.5]), 1.0, &g));
        assert!(!in_s2n(&pts(&[0.0, 0.1, 5.0, 5.1]), 1.0, &g));
    }

    #[test]
    fn partitions_with_blocks_of_two() {
        assert_eq!(set_partitions(2, 2), vec![vec![vec![0, 1]]]);
        let p4 = set_partitions(4, 2);
        assert_eq!(p4.len(), 4);
        assert!(p4.contains(&vec![vec![0, 1, 2, 3]]));
        assert!(p4.contains(&vec![vec![0, 2], vec![1, 3]]));
        assert_eq!(set_partitions(6, 2).len(), 41);
        assert_eq!(set_partitions(4, 1).len(), 15);
    }

    #[test]
    fn everything_clustered_fills_box() {
        let g = ScalingGeometry::euclidean(1);
        let lambda = 0.1;
        let v = volume_sc(1, 1.0, lambda, 1.0, &g, 10_000, 1).unwrap();
        assert_eq!(v.hits, 10_000);
        assert!((v.estimate - (4.0 * lambda).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn two_point_volume_matches_closed_form() {
        let g = ScalingGeometry::euclidean(1);
        let (lambda, r) = (0.5, 0.3);
        let side = 4.0 * lambda;
        let exact = side * side - (side - r) * (side - r);
        let v = volume_sc(1, 0.1, lambda, r / 0.1, &g, 200_000, 3).unwrap();
        assert!(v.lo <= exact && exact <= v.hi, "{v:?} vs {exact}");
    }
}
