//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once `(previous - current) / previous` inertia drops below this.
    pub rel_tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    pub iterations: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the centroid nearest to `x`, lowest index on ties.
///
/// Uses partial-distance elimination: a candidate is dropped as soon as its
/// running sum reaches the best distance so far, which cannot change the result.
pub fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let mut acc = 0.0;
        let mut pruned = false;
        for (xs, cs) in x.chunks(32).zip(c.chunks(32)) {
            acc += xs
                .iter()
                .zip(cs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            if acc >= best.1 {
                pruned = true;
                break;
            }
        }
        if !pruned && acc < best.1 {
            best = (j, acc);
        }
    }
    best
}

fn seed_plus_plus(
    data: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut min_d2: Vec<f64> = data
        .par_chunks_exact(dim)
        .map(|p| squared_distance(p, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = min_d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "fewer than {k} distinct points"
            )));
        }
        let mut target = rng.gen_range(0.0..total);
        let mut pick = n - 1;
        for (i, &d) in min_d2.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // Floating drift in the running subtraction can land on a zero-weight
        // point; walk back to the last point that has weight.
        while min_d2[pick] <= 0.0 {
            pick -= 1;
        }
        let c = data[pick * dim..(pick + 1) * dim].to_vec();
        min_d2
            .par_iter_mut()
            .zip(data.par_chunks_exact(dim))
            .for_each(|(m, p)| *m = m.min(squared_distance(p, &c)));
        centroids.extend(c);
    }
    Ok(centroids)
}

fn assign(data: &[f64], centroids: &[f64], dim: usize) -> Vec<(usize, f64)> {
    data.par_chunks_exact(dim)
        .map(|p| nearest(p, centroids, dim))
        .collect()
}

/// Clusters `n = data.len() / dim` points into `k` groups.
///
/// Empty clusters are reseeded to the point farthest from its current
/// centroid. The result is a pure function of the inputs and the RNG state.
pub fn kmeans(
    data: &[f64],
    dim: usize,
    k: usize,
    params: &KMeansParams,
    rng: &mut impl Rng,
) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not form {dim}-dimensional points",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientFrames {
            needed: k,
            actual: n,
        });
    }
    let mut centroids = seed_plus_plus(data, n, dim, k, rng)?;
    let mut assigned = assign(data, &centroids, dim);
    let mut inertia: f64 = assigned.iter().map(|a| a.1).sum();
    let mut iterations = 0;

    while iterations < params.max_iters && inertia > 0.0 {
        iterations += 1;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in data.chunks_exact(dim).zip(&assigned) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        for c in 0..k {
            let row = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (r, s) in row.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *r = s * inv;
                }
            } else {
                let far = dist
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &d)| if d > dist[best] { i } else { best });
                row.copy_from_slice(&data[far * dim..(far + 1) * dim]);
                dist[far] = 0.0;
            }
        }
        assigned = assign(data, &centroids, dim);
        let next: f64 = assigned.iter().map(|a| a.1).sum();
        let improvement = (inertia - next) / inertia;
        inertia = next;
        if improvement < params.rel_tol {
            break;
        }
    }

    Ok(KMeansFit {
        centroids,
        assignment: assigned.iter().map(|a| a.0).collect(),
        inertia,
        iterations,
    })
}

/// First pair of rows that agree within `tol` in every coordinate.
pub fn find_duplicate_rows(rows: &[f64], dim: usize, tol: f64) -> Option<(usize, usize)> {
    let k = rows.len() / dim;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| rows[a * dim].total_cmp(&rows[b * dim]));
    for (i, &a) in order.iter().enumerate() {
        let ra = &rows[a * dim..(a + 1) * dim];
        for &b in &order[i + 1..] {
            let rb = &rows[b * dim..(b + 1) * dim];
            if rb[0] - ra[0] > tol {
                break;
            }
            if ra.iter().zip(rb).all(|(x, y)| (x - y).abs() <= tol) {
                return Some((a.min(b), a.max(b)));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        (0..300)
            .flat_map(|i| {
                let c = centres[i % 3];
                [
                    c[0] + rng.gen_range(-1.0..1.0),
                    c[1] + rng.gen_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = blobs(1);
        let fit = kmeans(
            &data,
            2,
            1,
            &KMeansParams::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let n = data.len() / 2;
        let mx = data.iter().step_by(2).sum::<f64>() / n as f64;
        let my = data.iter().skip(1).step_by(2).sum::<f64>() / n as f64;
        assert!((fit.centroids[0] - mx).abs() < 1e-12);
        assert!((fit.centroids[1] - my).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let data = blobs(2);
        let fit = kmeans(
            &data,
            2,
            3,
            &KMeansParams::default(),
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        // Every point shares a cluster with the other points of its blob.
        for i in 0..fit.assignment.len() {
            assert_eq!(fit.assignment[i], fit.assignment[i % 3]);
        }
        assert!(fit.inertia / 300.0 < 1.0);
    }

    #[test]
    fn fit_is_deterministic() {
        let data = blobs(3);
        let p = KMeansParams::default();
        let a = kmeans(&data, 2, 7, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = kmeans(&data, 2, 7, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn nearest_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dim = 70;
        let centroids: Vec<f64> = (0..50 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..200 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let brute = centroids
                .chunks_exact(dim)
                .map(|c| squared_distance(&x, c))
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |b, (i, d)| if d < b.1 { (i, d) } else { b },
                );
            let got = nearest(&x, &centroids, dim);
            assert_eq!(got.0, brute.0);
            assert!((got.1 - brute.1).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_breaks_ties_low() {
        let centroids = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0];
        assert_eq!(nearest(&[0.0, 0.0], &centroids, 2).0, 0);
        assert_eq!(nearest(&[1.0, 0.0], &centroids, 2).0, 0);
    }

    #[test]
    fn too_few_points_or_distinct_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = KMeansParams::default();
        assert!(matches!(
            kmeans(&[0.0, 1.0], 1, 3, &p, &mut rng),
            Err(Error::InsufficientFrames {
                needed: 3,
                actual: 2
            })
        ));
        assert!(kmeans(&[1.0, 1.0, 1.0], 1, 2, &p, &mut rng).is_err());
        assert!(kmeans(&[1.0, 1.0, 2.0], 1, 0, &p, &mut rng).is_err());
    }

    #[test]
    fn duplicate_detection() {
        let rows = [0.0, 1.0, 5.0, 5.0, 0.0, 1.0 + 1e-13];
        assert_eq!(find_duplicate_rows(&rows, 2, 1e-12), Some((0, 2)));
        assert_eq!(find_duplicate_rows(&rows[..4], 2, 1e-12), None);
    }
}
