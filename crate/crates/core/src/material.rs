//! Material identification from reconstructed property maps.
//!
//! Pixels become points `(eps_r, sigma / (omega_c eps_0))`, are clustered by
//! DBSCAN under a Mahalanobis metric estimated from all pixels, and each
//! cluster is mapped to the nearest tabulated material.

use crate::error::{Error, Result};
use crate::scene::{MaterialDb, TargetMap};
use faer::Col;
use serde::{Deserialize, Serialize};

/// One pixel in feature space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelFeature {
    pub eps_r: f64,
    pub sigma_scaled: f64,
    pub index: usize,
}

impl PixelFeature {
    pub fn xy(&self) -> [f64; 2] {
        [self.eps_r, self.sigma_scaled]
    }
}

/// Features of every pixel of a property vector `[eps_r - 1; sigma_scaled]`.
pub fn features_from_s(s: &Col<f64>) -> Result<Vec<PixelFeature>> {
    if s.nrows() % 2 != 0 {
        return Err(Error::dims("property vector must have even length"));
    }
    let m = s.nrows() / 2;
    Ok((0..m)
        .map(|i| PixelFeature {
            eps_r: s[i] + 1.0,
            sigma_scaled: s[i + m],
            index: i,
        })
        .collect())
}

pub type Mat2 = [[f64; 2]; 2];

/// `sqrt((x - y)^T C^{-1} (x - y))`.
pub fn mahalanobis(x: [f64; 2], y: [f64; 2], cov_inv: &Mat2) -> f64 {
    let d = [x[0] - y[0], x[1] - y[1]];
    let q = d[0] * (cov_inv[0][0] * d[0] + cov_inv[0][1] * d[1]) + d[1] * (cov_inv[1][0] * d[0] + cov_inv[1][1] * d[1]);
    q.max(0.0).sqrt()
}

/// Inverse of the sample covariance of `points`, regularized when singular.
pub fn covariance_inverse(points: &[[f64; 2]]) -> Result<Mat2> {
    if points.len() < 2 {
        return Err(Error::invalid("covariance needs at least two points"));
    }
    let n = points.len() as f64;
    let mean = [
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for r in 0..2 {
            for k in 0..2 {
                c[r][k] += d[r] * d[k] / (n - 1.0);
            }
        }
    }
    let invert = |c: &Mat2| -> Option<Mat2> {
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let scale = c[0][0] * c[1][1];
        if !(det > 1e-12 * scale) || !det.is_finite() {
            return None;
        }
        Some([[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]])
    };
    if let Some(inv) = invert(&c) {
        return Ok(inv);
    }
    let trace = c[0][0] + c[1][1];
    if !(trace > 0.0) {
        return Err(Error::invalid("all features coincide; covariance is zero"));
    }
    let reg = 1e-9 * trace;
    let mut r = c;
    r[0][0] += reg;
    r[1][1] += reg;
    // Degenerate along one axis: fall back to per-axis scaling.
    invert(&r).or_else(|| {
        Some([
            [1.0 / (c[0][0] + reg), 0.0],
            [0.0, 1.0 / (c[1][1] + reg)],
        ])
    })
    .ok_or_else(|| Error::invalid("covariance cannot be inverted"))
}

/// Distance used for clustering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Euclidean,
    Mahalanobis(Mat2),
}

impl Metric {
    pub fn distance(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        match self {
            Metric::Euclidean => ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt(),
            Metric::Mahalanobis(ci) => mahalanobis(x, y, ci),
        }
    }
}

/// DBSCAN output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster id per point, `-1` for noise.
    pub labels: Vec<i64>,
    pub centroids: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
}

impl ClusterResult {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|l| **l < 0).count()
    }
}

fn neighbours(points: &[[f64; 2]], i: usize, eps: f64, metric: &Metric) -> Vec<usize> {
    (0..points.len())
        .filter(|&j| metric.distance(points[i], points[j]) <= eps)
        .collect()
}

/// Plain O(n^2) DBSCAN. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are numbered in order of
/// their first core point.
pub fn dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize, metric: &Metric) -> Result<ClusterResult> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::invalid(format!("DBSCAN needs eps > 0 and min_pts >= 1 (got {eps}, {min_pts})")));
    }
    const UNSEEN: i64 = -2;
    let n = points.len();
    let mut labels = vec![UNSEEN; n];
    let mut next = 0i64;
    for i in 0..n {
        if labels[i] != UNSEEN {
            continue;
        }
        let nb = neighbours(points, i, eps, metric);
        if nb.len() < min_pts {
            labels[i] = -1;
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = id;
        let mut queue: std::collections::VecDeque<usize> = nb.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == -1 {
                labels[j] = id;
            }
            if labels[j] != UNSEEN {
                continue;
            }
            labels[j] = id;
            let nj = neighbours(points, j, eps, metric);
            if nj.len() >= min_pts {
                queue.extend(nj.into_iter().filter(|&q| labels[q] == UNSEEN || labels[q] == -1));
            }
        }
    }
    let k = next as usize;
    let mut sums = vec![[0.0; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(&labels) {
        if l >= 0 {
            let l = l as usize;
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            counts[l] += 1;
        }
    }
    let centroids = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
        .collect();
    Ok(ClusterResult { labels, centroids, counts })
}

/// Sorted distances to the `k`-th nearest neighbour (self excluded).
pub fn k_distance_curve(points: &[[f64; 2]], k: usize, metric: &Metric) -> Vec<f64> {
    let mut out: Vec<f64> = (0..points.len())
        .map(|i| {
            let mut d: Vec<f64> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| metric.distance(points[i], points[j]))
                .collect();
            d.sort_by(f64::total_cmp);
            d.get(k.saturating_sub(1)).copied().unwrap_or(f64::INFINITY)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Knee of an ascending curve: the sample farthest below the chord joining
/// its end points, after normalizing both axes to `[0, 1]`.
pub fn knee(curve: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = curve.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    if n < 3 {
        return finite.last().copied();
    }
    let (lo, hi) = (finite[0], finite[n - 1]);
    if !(hi > lo) {
        return Some(hi);
    }
    let mut best = (0.0, n - 1);
    for (i, &v) in finite.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let y = (v - lo) / (hi - lo);
        let gap = x - y;
        if gap > best.0 {
            best = (gap, i);
        }
    }
    Some(finite[best.1])
}

/// Clustering hyperparameters; `None` means automatic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub eps: Option<f64>,
    pub min_pts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { eps: None, min_pts: 4 }
    }
}

/// Chooses `eps` from the knee of the `min_pts`-distance curve.
pub fn auto_eps(points: &[[f64; 2]], min_pts: usize, metric: &Metric) -> Result<f64> {
    let curve = k_distance_curve(points, min_pts, metric);
    let mut eps = knee(&curve).ok_or_else(|| Error::invalid("too few points to choose eps"))?;
    if !(eps > 0.0) {
        eps = curve
            .iter()
            .copied()
            .find(|v| *v > 0.0 && v.is_finite())
            .unwrap_or(1e-12);
    }
    Ok(eps)
}

/// Per-cluster and per-pixel material assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub clusters: ClusterResult,
    /// Cluster identified as air, if any cluster exists.
    pub air_cluster: Option<usize>,
    /// Material index of each cluster.
    pub cluster_material: Vec<usize>,
    /// Distance from each centroid to its material.
    pub cluster_distance: Vec<f64>,
    /// Material per pixel; `None` for outliers.
    pub pixel_labels: Vec<Option<usize>>,
    /// Set when no cluster other than air was found.
    pub air_only: bool,
    pub eps: f64,
    pub cov_inv: Mat2,
}

impl Classification {
    /// Mahalanobis distance of the air centroid from `(1, 0)`.
    pub fn air_offset(&self) -> Option<f64> {
        self.air_cluster
            .map(|c| mahalanobis(self.clusters.centroids[c], [1.0, 0.0], &self.cov_inv))
    }

    /// Number of distinct non-air clusters.
    pub fn target_clusters(&self) -> usize {
        self.clusters.n_clusters() - usize::from(self.air_cluster.is_some())
    }
}

/// Assigns materials to clusters. The cluster nearest `(1, 0)` is air; the
/// others take their nearest database entry, ties going to the lower index.
pub fn classify(clusters: &ClusterResult, db: &MaterialDb, omega_c: f64, cov_inv: &Mat2, eps: f64) -> Result<Classification> {
    if db.is_empty() {
        return Err(Error::invalid("material database is empty"));
    }
    let air_point = [1.0, 0.0];
    let air_cluster = (0..clusters.n_clusters()).min_by(|&a, &b| {
        mahalanobis(clusters.centroids[a], air_point, cov_inv).total_cmp(&mahalanobis(clusters.centroids[b], air_point, cov_inv))
    });
    let mut cluster_material = Vec::with_capacity(clusters.n_clusters());
    let mut cluster_distance = Vec::with_capacity(clusters.n_clusters());
    for (c, centroid) in clusters.centroids.iter().enumerate() {
        if Some(c) == air_cluster {
            cluster_material.push(0);
            cluster_distance.push(mahalanobis(*centroid, air_point, cov_inv));
            continue;
        }
        let (best, dist) = nearest_material(*centroid, db, omega_c, cov_inv);
        cluster_material.push(best);
        cluster_distance.push(dist);
    }
    let pixel_labels = clusters
        .labels
        .iter()
        .map(|&l| (l >= 0).then(|| cluster_material[l as usize]))
        .collect();
    let air_only = clusters.n_clusters() <= usize::from(air_cluster.is_some());
    if air_only {
        log::warn!("no non-air cluster found");
    }
    Ok(Classification {
        clusters: clusters.clone(),
        air_cluster,
        cluster_material,
        cluster_distance,
        pixel_labels,
        air_only,
        eps,
        cov_inv: *cov_inv,
    })
}

/// Nearest database entry; strict comparison keeps the lower index on ties.
pub fn nearest_material(x: [f64; 2], db: &MaterialDb, omega_c: f64, cov_inv: &Mat2) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, m) in db.entries().iter().enumerate() {
        let d = mahalanobis(x, m.feature(omega_c), cov_inv);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Full pipeline: features, covariance, automatic or fixed eps, DBSCAN, assignment.
pub fn identify(s: &Col<f64>, db: &MaterialDb, omega_c: f64, params: &ClusterParams) -> Result<Classification> {
    let pts: Vec<[f64; 2]> = features_from_s(s)?.iter().map(PixelFeature::xy).collect();
    let cov_inv = covariance_inverse(&pts)?;
    let metric = Metric::Mahalanobis(cov_inv);
    let eps = match params.eps {
        Some(e) => e,
        None => auto_eps(&pts, params.min_pts, &metric)?,
    };
    let clusters = dbscan(&pts, eps, params.min_pts, &metric)?;
    classify(&clusters, db, omega_c, &cov_inv, eps)
}

/// Classification accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Correct fraction over ground-truth target (non-air) pixels.
    pub target: f64,
    /// Correct fraction over every pixel.
    pub all: f64,
}

/// Outliers count as misclassified.
pub fn accuracy(assigned: &[Option<usize>], truth: &TargetMap) -> Result<Accuracy> {
    if assigned.len() != truth.len() {
        return Err(Error::dims(format!("{} labels for {} pixels", assigned.len(), truth.len())));
    }
    let targets = truth.target_pixels();
    if targets == 0 {
        return Err(Error::invalid("ground truth has no target pixels"));
    }
    let mut hit_target = 0;
    let mut hit_all = 0;
    for (a, &t) in assigned.iter().zip(truth.labels()) {
        if *a == Some(t) {
            hit_all += 1;
            if t != 0 {
                hit_target += 1;
            }
        }
    }
    Ok(Accuracy {
        target: hit_target as f64 / targets as f64,
        all: hit_all as f64 / truth.len() as f64,
    })
}

/// Adjusted Rand index between two labelings; `-1` is treated as one class.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims("labelings differ in length"));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    use std::collections::HashMap;
    let mut table: HashMap<(i64, i64), u64> = HashMap::new();
    let mut ra: HashMap<i64, u64> = HashMap::new();
    let mut rb: HashMap<i64, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let total = c2(n as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const I2: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn mahalanobis_basics() {
        assert_eq!(mahalanobis([3.0, 4.0], [0.0, 0.0], &I2), 5.0);
        assert_eq!(mahalanobis([1.5, -2.0], [1.5, -2.0], &[[2.0, 0.3], [0.3, 1.0]]), 0.0);
    }

    #[test]
    fn singular_covariance_is_regularized() {
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 0.0]).collect();
        let inv = covariance_inverse(&pts).unwrap();
        assert!(inv.iter().flatten().all(|v| v.is_finite()));
        assert!(covariance_inverse(&[[1.0, 1.0], [1.0, 1.0]]).is_err());
    }

    fn blobs(seed: u64, per: usize) -> (Vec<[f64; 2]>, Vec<i64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push([ctr[0] + rng.random::<f64>() - 0.5, ctr[1] + rng.random::<f64>() - 0.5]);
                truth.push(c as i64);
            }
        }
        (pts, truth)
    }

    #[test]
    fn separated_blobs_give_their_clusters() {
        let (pts, truth) = blobs(3, 40);
        let res = dbscan(&pts, 1.0, 4, &Metric::Euclidean).unwrap();
        assert_eq!(res.n_clusters(), 3);
        assert_eq!(res.n_noise(), 0);
        assert_eq!(adjusted_rand_index(&res.labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn identical_points_and_tiny_eps() {
        let pts = vec![[2.0, 3.0]; 9];
        let one = dbscan(&pts, 0.1, 4, &Metric::Euclidean).unwrap();
        assert_eq!(one.n_clusters(), 1);
        assert_eq!(one.n_noise(), 0);
        let spread: Vec<[f64; 2]> = (0..9).map(|i| [i as f64, 0.0]).collect();
        let none = dbscan(&spread, 1e-9, 2, &Metric::Euclidean).unwrap();
        assert_eq!(none.n_noise(), 9);
        assert!(dbscan(&spread, 0.0, 2, &Metric::Euclidean).is_err());
    }

    #[test]
    fn knee_of_a_hockey_stick() {
        let mut curve: Vec<f64> = (0..90).map(|i| 0.01 * i as f64 / 90.0).collect();
        curve.extend((0..10).map(|i| 1.0 + i as f64));
        let k = knee(&curve).unwrap();
        assert!(k <= 0.011, "{k}");
    }

    fn db() -> MaterialDb {
        MaterialDb::builtin()
    }

    #[test]
    fn exact_material_centroid_and_ties() {
        let omega_c = 2.0 * std::f64::consts::PI * 28e9;
        let db = db();
        let wood = db.find("wood").unwrap();
        let clusters = ClusterResult {
            labels: vec![0, 1],
            centroids: vec![[1.0, 0.0], db.get(wood).unwrap().feature(omega_c)],
            counts: vec![1, 1],
        };
        let cls = classify(&clusters, &db, omega_c, &I2, 1.0).unwrap();
        assert_eq!(cls.air_cluster, Some(0));
        assert_eq!(cls.cluster_material, vec![0, wood]);
        assert_eq!(cls.cluster_distance[1], 0.0);
        assert!(!cls.air_only);

        let a = db.get(1).unwrap().feature(omega_c);
        let b = db.get(2).unwrap().feature(omega_c);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let two = MaterialDb::new(vec![
            crate::scene::MaterialSpec::air(),
            db.get(1).unwrap().clone(),
            db.get(2).unwrap().clone(),
        ])
        .unwrap();
        assert_eq!(nearest_material(mid, &two, omega_c, &I2).0, 1);
    }

    #[test]
    fn air_only_is_flagged_and_classify_is_idempotent() {
        let omega_c = 1.0;
        let clusters = ClusterResult { labels: vec![0, 0, -1], centroids: vec![[1.1, 0.0]], counts: vec![2] };
        let cls = classify(&clusters, &db(), omega_c, &I2, 1.0).unwrap();
        assert!(cls.air_only);
        assert_eq!(cls.pixel_labels, vec![Some(0), Some(0), None]);
        let again = classify(&cls.clusters, &db(), omega_c, &cls.cov_inv, cls.eps).unwrap();
        assert_eq!(again, cls);
    }

    #[test]
    fn accuracy_examples() {
        let db = db();
        let truth = TargetMap::new(vec![0, 4, 4, 4, 4, 7, 7, 7, 7, 3, 3, 0], db).unwrap();
        let perfect: Vec<Option<usize>> = truth.labels().iter().map(|&l| Some(l)).collect();
        assert_eq!(accuracy(&perfect, &truth).unwrap().target, 1.0);
        let wrong: Vec<Option<usize>> = truth.labels().iter().map(|&l| Some(if l == 1 { 2 } else { 1 })).collect();
        assert_eq!(accuracy(&wrong, &truth).unwrap().target, 0.0);
        let mut half = perfect.clone();
        for p in half.iter_mut().skip(1).take(5) {
            *p = None;
        }
        let acc = accuracy(&half, &truth).unwrap();
        assert_eq!(acc.target, 0.5);
        assert_eq!(acc.all, 7.0 / 12.0);
        assert!(accuracy(&perfect, &TargetMap::air(12, MaterialDb::builtin())).is_err());
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(v < 0.0);
    }

    fn partition(labels: &[i64]) -> Vec<Vec<usize>> {
        let mut groups: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
        for (i, &l) in labels.iter().enumerate() {
            if l >= 0 {
                groups.entry(l).or_default().push(i);
            }
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort();
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn partitions_survive_reordering(seed in 0u64..1000, shift in 1usize..119) {
            // Well separated blobs have no ambiguous border points.
            let (pts, _) = blobs(seed, 40);
            let n = pts.len();
            let order: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
            let permuted: Vec<[f64; 2]> = order.iter().map(|&i| pts[i]).collect();
            let a = dbscan(&pts, 1.0, 4, &Metric::Euclidean).unwrap();
            let b = dbscan(&permuted, 1.0, 4, &Metric::Euclidean).unwrap();
            let mut back = vec![0i64; n];
            for (pos, &i) in order.iter().enumerate() {
                back[i] = b.labels[pos];
            }
            prop_assert_eq!(partition(&a.labels), partition(&back));
        }

        #[test]
        fn mahalanobis_ignores_axis_units(seed in 0u64..1000, factor in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<[f64; 2]> = (0..30).map(|_| [rng.random::<f64>() * 5.0, rng.random::<f64>()]).collect();
            let scaled: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], p[1] * factor]).collect();
            let ia = covariance_inverse(&pts).unwrap();
            let ib = covariance_inverse(&scaled).unwrap();
            for i in 0..pts.len() {
                for j in 0..i {
                    let da = mahalanobis(pts[i], pts[j], &ia);
                    let db = mahalanobis(scaled[i], scaled[j], &ib);
                    prop_assert!((da - db).abs() <= 1e-9 * da.max(1.0));
                }
            }
            let ea = auto_eps(&pts, 4, &Metric::Mahalanobis(ia)).unwrap();
            let eb = auto_eps(&scaled, 4, &Metric::Mahalanobis(ib)).unwrap();
            let ca = dbscan(&pts, ea, 4, &Metric::Mahalanobis(ia)).unwrap();
            let cb = dbscan(&scaled, eb, 4, &Metric::Mahalanobis(ib)).unwrap();
            prop_assert_eq!(partition(&ca.labels), partition(&cb.labels));
        }
    }
}
