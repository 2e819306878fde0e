//! Venue coordinates to soft cluster memberships.
//!
//! Coordinates are clustered with seeded k-means (k-means++ seeding, at most
//! 100 Lloyd iterations). Each venue then gets weights proportional to
//! exp(−d²/(2σ²)) over the centroids, where σ is the mean distance from a
//! venue to its own centroid. Distances are plain Euclidean on degrees,
//! which is adequate within a city.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::data::{seeded_rng, CovariateMatrix, IdMap};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;

/// Read `item_id lat lon` rows (whitespace or comma separated) aligned to `item_ids`.
pub fn load_locations(path: impl AsRef<Path>, item_ids: &IdMap) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut coords: Vec<Option<(f64, f64)>> = vec![None; item_ids.len()];
    for (idx, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed = match fields.as_slice() {
            [id, lat, lon] => lat.parse::<f64>().ok().zip(lon.parse::<f64>().ok()).map(|c| (*id, c)),
            _ => None,
        };
        let Some((id, (lat, lon))) = parsed.filter(|(_, (a, b))| a.is_finite() && b.is_finite()) else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx as u64 + 1,
                message: "expected `item_id lat lon`".into(),
            });
        };
        if let Some(item) = item_ids.index_of(id) {
            coords[item] = Some((lat, lon));
        }
    }
    let missing: Vec<&str> = coords
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_none())
        .take(10)
        .map(|(i, _)| item_ids.id(i).unwrap_or("?"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "items without a location in {}: {}",
            path.display(),
            missing.join(", ")
        )));
    }
    Ok(coords.into_iter().flatten().collect())
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<(f64, f64)>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

impl KMeans {
    pub fn fit(points: &[(f64, f64)], n_clusters: usize, seed: u64) -> Result<Self> {
        let distinct: HashSet<(u64, u64)> = points
            .iter()
            .map(|(a, b)| (a.to_bits(), b.to_bits()))
            .collect();
        if n_clusters == 0 {
            return Err(Error::config("n_clusters", "must be at least 1"));
        }
        if distinct.len() < n_clusters {
            return Err(Error::Data(format!(
                "{} distinct locations cannot form {n_clusters} clusters",
                distinct.len()
            )));
        }

        let mut rng = seeded_rng(seed);
        let mut centroids = vec![points[rng.random_range(0..points.len())]];
        let mut nearest: Vec<f64> = points.iter().map(|&p| sq_dist(p, centroids[0])).collect();
        while centroids.len() < n_clusters {
            let total: f64 = nearest.iter().sum();
            let mut target = rng.random::<f64>() * total;
            let mut pick = nearest.iter().rposition(|&d| d > 0.0).expect("distinct points remain");
            for (idx, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = idx;
                    break;
                }
                target -= d;
            }
            let c = points[pick];
            centroids.push(c);
            for (n, &p) in nearest.iter_mut().zip(points) {
                *n = n.min(sq_dist(p, c));
            }
        }

        let mut assignment = vec![0usize; points.len()];
        let mut iterations = 0;
        for iter in 0..MAX_ITERS {
            iterations = iter + 1;
            let mut changed = iter == 0;
            for (a, &p) in assignment.iter_mut().zip(points) {
                let best = closest(p, &centroids);
                if best != *a {
                    *a = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![(0.0, 0.0, 0usize); n_clusters];
            for (&a, &p) in assignment.iter().zip(points) {
                sums[a].0 += p.0;
                sums[a].1 += p.1;
                sums[a].2 += 1;
            }
            for (c, (sx, sy, n)) in centroids.iter_mut().zip(sums) {
                // empty clusters keep their previous centroid
                if n > 0 {
                    *c = (sx / n as f64, sy / n as f64);
                }
            }
        }
        Ok(Self {
            centroids,
            assignment,
            iterations,
        })
    }

    /// Mean Euclidean distance from each point to its assigned centroid.
    pub fn mean_within_distance(&self, points: &[(f64, f64)]) -> f64 {
        let total: f64 = points
            .iter()
            .zip(&self.assignment)
            .map(|(&p, &a)| sq_dist(p, self.centroids[a]).sqrt())
            .sum();
        total / points.len() as f64
    }
}

fn closest(p: (f64, f64), centroids: &[(f64, f64)]) -> usize {
    centroids
        .iter()
        .enumerate()
        .min_by(|a, b| sq_dist(p, *a.1).total_cmp(&sq_dist(p, *b.1)))
        .map(|(i, _)| i)
        .expect("at least one centroid")
}

/// Gaussian-kernel memberships of each point over `centroids`.
///
/// With `bandwidth == 0` every point is split evenly over its nearest
/// centroids.
pub fn soft_assign(
    points: &[(f64, f64)],
    centroids: &[(f64, f64)],
    bandwidth: f64,
) -> Result<CovariateMatrix> {
    let dim = centroids.len();
    let mut data = Vec::with_capacity(points.len() * dim);
    for &p in points {
        let d2: Vec<f64> = centroids.iter().map(|&c| sq_dist(p, c)).collect();
        let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
        if bandwidth > 0.0 {
            let scale = 2.0 * bandwidth * bandwidth;
            // shift by the nearest distance so the largest weight is exp(0)
            data.extend(d2.iter().map(|&d| (-(d - min) / scale).exp()));
        } else {
            data.extend(d2.iter().map(|&d| if d == min { 1.0 } else { 0.0 }));
        }
    }
    CovariateMatrix::new(points.len(), dim, data)
}

/// Cluster coordinates into `n_clusters` groups and return soft memberships.
pub fn cluster_locations(coords: &[(f64, f64)], n_clusters: usize, seed: u64) -> Result<CovariateMatrix> {
    let km = KMeans::fit(coords, n_clusters, seed)?;
    let bandwidth = km.mean_within_distance(coords);
    soft_assign(coords, &km.centroids, bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for k in 0..10 {
            let jitter = 0.001 * k as f64;
            pts.push((40.7 + jitter, -74.0 - jitter));
            pts.push((36.1 - jitter, -115.1 + jitter));
        }
        pts
    }

    #[test]
    fn separated_blobs_are_nearly_hard() {
        let pts = two_blobs();
        let x = cluster_locations(&pts, 2, 1).unwrap();
        for (idx, _) in pts.iter().enumerate() {
            let row = x.row(idx);
            assert!(row.iter().copied().fold(0.0, f64::max) > 0.99);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // points from the same city share a cluster
        let own = |idx: usize| if x.row(idx)[0] > 0.5 { 0 } else { 1 };
        assert!((0..pts.len()).all(|i| own(i) == own(i % 2)));
        assert_ne!(own(0), own(1));
    }

    #[test]
    fn symmetric_point_splits_evenly() {
        let x = soft_assign(&[(0.0, 0.0)], &[(-1.0, 0.0), (1.0, 0.0)], 0.7).unwrap();
        assert_eq!(x.row(0), &[0.5, 0.5]);
        let x = soft_assign(&[(0.0, 0.0)], &[(-1.0, 0.0), (1.0, 0.0)], 0.0).unwrap();
        assert_eq!(x.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn single_cluster_is_all_ones() {
        let x = cluster_locations(&two_blobs(), 1, 3).unwrap();
        assert!((0..20).all(|i| x.row(i) == [1.0]));
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![(1.0, 1.0); 5];
        assert!(matches!(cluster_locations(&pts, 2, 0), Err(Error::Data(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let pts = two_blobs();
        assert_eq!(KMeans::fit(&pts, 3, 9).unwrap(), KMeans::fit(&pts, 3, 9).unwrap());
    }
}
