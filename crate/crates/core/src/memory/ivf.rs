//! Clustered inverted-list index: k-means coarse centroids, probe the
//! best-scoring lists, rescore their members exactly.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dot;
use crate::numerics::kernels::{gemm, MatRef};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IvfParams {
    /// Number of lists; `None` means `ceil(sqrt(n))`.
    pub num_lists: Option<usize>,
    /// Fraction of lists probed per query, at least one.
    pub probe_fraction: f64,
    pub iterations: usize,
    /// Cap on the k-means training sample, as a multiple of the list count.
    pub sample_per_list: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        IvfParams {
            num_lists: None,
            probe_fraction: 0.25,
            iterations: 12,
            sample_per_list: 64,
            seed: 0x1f5,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct IvfIndex {
    dim: usize,
    centroids: Vec<f64>,
    lists: Vec<Vec<usize>>,
    probes: usize,
}

/// Index of the centroid nearest to `x` in squared euclidean distance.
#[cfg(test)]
fn nearest(x: &[f64], centroids: &[f64], half_norms: &[f64], dim: usize) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(x, row) - half_norms[c];
        if s > best_score {
            best_score = s;
            best = c;
        }
    }
    best
}

fn assign_block(points: &[f64], n: usize, centroids: &[f64], half_norms: &[f64], dim: usize, out: &mut [usize]) {
    let lists = half_norms.len();
    let mut scores = vec![0.0; n * lists];
    gemm(
        n,
        dim,
        lists,
        MatRef::new(points, dim, false),
        MatRef::new(centroids, dim, true),
        &mut scores,
        lists,
        false,
    );
    for (i, row) in scores.chunks_exact(lists).enumerate() {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, s) in row.iter().enumerate() {
            let s = s - half_norms[c];
            if s > best_score {
                best_score = s;
                best = c;
            }
        }
        out[i] = best;
    }
}

fn half_norms(centroids: &[f64], dim: usize) -> Vec<f64> {
    centroids.chunks_exact(dim).map(|c| 0.5 * dot(c, c)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: each new centroid is drawn with probability
/// proportional to its squared distance from the nearest chosen one.
fn seed_centroids(points: &[f64], dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let first = rng.random_range(0..n);
    let mut centroids = row(first).to_vec();
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    while centroids.len() < count * dim {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

impl IvfIndex {
    /// Builds the index over the rows of `data` (`n × dim`, row-major).
    pub fn build(data: &[f64], dim: usize, params: &IvfParams) -> Self {
        let n = data.len() / dim;
        let target = params
            .num_lists
            .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
            .clamp(1, n.max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

        let sample_n = (target * params.sample_per_list.max(1)).min(n);
        let train_rows: Vec<usize> = if sample_n == n {
            (0..n).collect()
        } else {
            let mut rows = sample(&mut rng, n, sample_n).into_vec();
            rows.sort_unstable();
            rows
        };
        let train: Vec<f64> = train_rows
            .iter()
            .flat_map(|&r| data[r * dim..(r + 1) * dim].iter().copied())
            .collect();

        let mut centroids = seed_centroids(&train, dim, target, &mut rng);
        let mut assignment = vec![0usize; sample_n];
        for _ in 0..params.iterations {
            let hn = half_norms(&centroids, dim);
            assign_block(&train, sample_n, &centroids, &hn, dim, &mut assignment);
            let mut sums = vec![0.0; target * dim];
            let mut counts = vec![0usize; target];
            for (i, &c) in assignment.iter().enumerate() {
                counts[c] += 1;
                for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(&train[i * dim..(i + 1) * dim]) {
                    *s += x;
                }
            }
            for c in 0..target {
                // Empty clusters keep their previous centroid.
                if counts[c] > 0 {
                    let inv = 1.0 / counts[c] as f64;
                    for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                        *dst = s * inv;
                    }
                }
            }
        }

        let hn = half_norms(&centroids, dim);
        let mut all = vec![0usize; n];
        const BLOCK: usize = 4096;
        for (b, chunk) in data.chunks(BLOCK * dim).enumerate() {
            let rows = chunk.len() / dim;
            assign_block(chunk, rows, &centroids, &hn, dim, &mut all[b * BLOCK..b * BLOCK + rows]);
        }
        let mut lists = vec![Vec::new(); target];
        for (row, &c) in all.iter().enumerate() {
            lists[c].push(row);
        }
        let probes = ((target as f64 * params.probe_fraction).ceil() as usize).clamp(1, target);
        IvfIndex {
            dim,
            centroids,
            lists,
            probes,
        }
    }

    #[cfg(test)]
    fn num_lists(&self) -> usize {
        self.lists.len()
    }

    /// Row ids stored in the lists whose centroids score highest against `query`.
    pub fn candidates(&self, query: &[f64]) -> Vec<usize> {
        let mut ranked: Vec<(f64, usize)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(c, row)| (dot(query, row), c))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut out: Vec<usize> = ranked[..self.probes]
            .iter()
            .flat_map(|&(_, c)| self.lists[c].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    #[cfg(test)]
    fn list_of(&self, x: &[f64]) -> usize {
        nearest(x, &self.centroids, &half_norms(&self.centroids, self.dim), self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_lands_in_exactly_one_list() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let data: Vec<f64> = (0..500 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let idx = IvfIndex::build(&data, dim, &IvfParams::default());
        assert_eq!(idx.num_lists(), 23);
        let mut seen: Vec<usize> = idx.lists.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..500).collect::<Vec<_>>());
        for (c, list) in idx.lists.iter().enumerate() {
            for &r in list {
                assert_eq!(idx.list_of(&data[r * dim..(r + 1) * dim]), c);
            }
        }
    }

    #[test]
    fn probing_everything_returns_every_row() {
        let data: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let params = IvfParams {
            probe_fraction: 1.0,
            ..IvfParams::default()
        };
        let idx = IvfIndex::build(&data, 2, &params);
        assert_eq!(idx.candidates(&[1.0, 0.0]), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn separated_clusters_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let centers = [[10.0, 0.0], [0.0, 10.0], [-10.0, 0.0], [0.0, -10.0]];
        let data: Vec<f64> = (0..400)
            .flat_map(|i| {
                let c = centers[i % 4];
                [c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5)]
            })
            .collect();
        let params = IvfParams {
            num_lists: Some(4),
            probe_fraction: 0.25,
            ..IvfParams::default()
        };
        let idx = IvfIndex::build(&data, 2, &params);
        let got = idx.candidates(&[1.0, 0.0]);
        assert_eq!(got.len(), 100);
        assert!(got.iter().all(|r| r % 4 == 0));
    }
}
