//! Directed spectral clustering of the count matrix, plus the adjusted Rand
//! index used to score recovered memberships.
//!
//! Each node is embedded by its rows of `[U sqrt(S) | V sqrt(S)]` from the
//! top-`K` singular triplets, rows are scaled to unit length, and k-means
//! groups the embedded points.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MulchError, Result};
use crate::events::CountMatrix;
use crate::model::Membership;

/// k-means settings.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Objective after each Lloyd iteration of the kept restart.
    pub history: Vec<f64>,
    /// Kept objective after each restart.
    pub best_so_far: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy k-means++ seeding: each step draws `2 + ln k` candidates with
/// probability proportional to squared distance and keeps the one that
/// lowers the potential most.
fn seed_centroids<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let idx = if potential > 0.0 {
                let target = rng.random::<f64>() * potential;
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, &d) in closest.iter().enumerate() {
                    acc += d;
                    if target < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, &d)| d.min(sq_dist(p, &points[idx])))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.1) {
                best = Some((idx, pot, updated));
            }
        }
        let (idx, _, updated) = best.expect("at least one trial");
        centroids.push(points[idx].clone());
        closest = updated;
    }
    centroids
}

fn lloyd(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    cfg: &KMeansConfig,
) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    for _ in 0..cfg.max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moved = moved.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        // Refill empty clusters with the point farthest from its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let (far, d) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i]])))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
                if d > 0.0 {
                    centroids[c] = points[far].clone();
                    moved = f64::INFINITY;
                }
            }
        }
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (l, d) = nearest(p, &centroids);
            labels[i] = l;
            inertia += d;
        }
        history.push(inertia);
        if moved <= cfg.tol {
            break;
        }
    }
    (labels, centroids, history)
}

/// k-means with restarts; restart `r` draws from stream `r` of `seed`.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    cfg: &KMeansConfig,
    seed: u64,
) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(MulchError::TooFewNodes { n: points.len(), k });
    }
    let mut best: Option<KMeansResult> = None;
    let mut best_so_far = Vec::with_capacity(cfg.restarts.max(1));
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let init = seed_centroids(points, k, &mut rng);
        let (labels, centroids, history) = lloyd(points, init, cfg);
        let inertia = *history.last().unwrap_or(&f64::INFINITY);
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(KMeansResult {
                labels,
                centroids,
                inertia,
                history,
                best_so_far: Vec::new(),
            });
        }
        best_so_far.push(best.as_ref().unwrap().inertia);
    }
    let mut out = best.expect("at least one restart");
    out.best_so_far = best_so_far;
    Ok(out)
}

/// Row-normalized singular embedding of `n`, `n x 2K`.
///
/// Uses at most `rank(n)` components; the returned count says how many.
pub fn spectral_embedding(n: &DMatrix<f64>, k: usize) -> (Vec<Vec<f64>>, usize) {
    let rows = n.nrows();
    let svd = n.clone().svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let s_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let tol = s_max * rows as f64 * f64::EPSILON;
    let used: Vec<usize> = order
        .into_iter()
        .take(k)
        .filter(|&i| svd.singular_values[i] > tol && svd.singular_values[i] > 0.0)
        .collect();
    let points = (0..rows)
        .map(|r| {
            let mut row = vec![0.0; 2 * k];
            for (slot, &i) in used.iter().enumerate() {
                let s = svd.singular_values[i].sqrt();
                row[slot] = u[(r, i)] * s;
                row[k + slot] = v_t[(i, r)] * s;
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
            row
        })
        .collect();
    (points, used.len())
}

/// Relabels so blocks are numbered in order of first appearance.
fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Clusters the nodes of a count matrix into `k` blocks.
pub fn spectral_cluster(counts: &CountMatrix, k: usize, seed: u64) -> Result<Membership> {
    spectral_cluster_with(counts, k, seed, &KMeansConfig::default())
}

pub fn spectral_cluster_with(
    counts: &CountMatrix,
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<Membership> {
    let n = counts.n();
    if k == 0 || n < k {
        return Err(MulchError::TooFewNodes { n, k });
    }
    if k == 1 {
        return Membership::new(vec![0; n], 1);
    }
    let (points, used) = spectral_embedding(&counts.to_dmatrix(), k);
    if used == 0 {
        log::warn!("count matrix is zero; every node is placed in one block");
        return Membership::new(vec![0; n], k);
    }
    if used < k {
        log::warn!("count matrix has rank {used} < K = {k}; clustering on {used} components");
    }
    let result = kmeans(&points, k, cfg, seed)?;
    Membership::new(canonical_labels(&result.labels), k)
}

/// Hubert-Arabie adjusted Rand index.
///
/// Two labelings that both put every node in one block (or have fewer than
/// two nodes) score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MulchError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    let comb2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let mut table = std::collections::HashMap::<(usize, usize), u64>::new();
    let mut rows = std::collections::HashMap::<usize, u64>::new();
    let mut cols = std::collections::HashMap::<usize, u64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// [`adjusted_rand_index`] on two memberships.
pub fn membership_ari(truth: &Membership, estimate: &Membership) -> Result<f64> {
    adjusted_rand_index(truth.labels(), estimate.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{count_matrix, Event, EventStream};

    #[test]
    fn ari_examples() {
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(),
            1.0
        );
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(),
            1.0
        );
        // contingency all ones: index 0, sums 2 and 2 over 6 pairs
        // -> (0 - 4/6) / (2 - 4/6) = -0.5
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    fn block_counts(labels: &[usize], high: u32, low: u32) -> CountMatrix {
        let n = labels.len();
        let mut events = Vec::new();
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let c = if labels[i] == labels[j] { high } else { low };
                for _ in 0..c {
                    t += 1.0;
                    events.push(Event::new(i, j, t));
                }
            }
        }
        count_matrix(&EventStream::from_events(events, n).unwrap())
    }

    #[test]
    fn block_constant_matrix_is_recovered() {
        let truth = vec![0, 1, 0, 1, 1, 0, 0, 1, 1, 0];
        let counts = block_counts(&truth, 5, 1);
        let z = spectral_cluster(&counts, 2, 3).unwrap();
        assert_eq!(adjusted_rand_index(&truth, z.labels()).unwrap(), 1.0);
    }

    #[test]
    fn zero_matrix_gives_one_block() {
        let z = spectral_cluster(&CountMatrix::zeros(5), 3, 1).unwrap();
        assert!(z.labels().iter().all(|&l| l == 0));
        assert_eq!(z.k(), 3);
    }

    #[test]
    fn too_few_nodes_is_an_error() {
        assert!(matches!(
            spectral_cluster(&CountMatrix::zeros(2), 3, 1),
            Err(MulchError::TooFewNodes { n: 2, k: 3 })
        ));
    }

    #[test]
    fn kmeans_objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random(), rng.random(), rng.random()])
            .collect();
        let res = kmeans(&points, 5, &KMeansConfig::default(), 4).unwrap();
        for w in res.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for w in res.best_so_far.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
