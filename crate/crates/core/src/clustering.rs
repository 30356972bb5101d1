//! Normalized spectral clustering on `exp(-distance)` similarities with a
//! symmetric k-nearest-neighbour mask.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisconnectedPolicy {
    /// Grow `k_neighbors` one step at a time until the graph is connected.
    #[default]
    IncreaseK,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub disconnected: DisconnectedPolicy,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            restarts: 50,
            max_iter: 300,
            seed: 0,
            disconnected: DisconnectedPolicy::IncreaseK,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub m: usize,
    pub k_neighbors: usize,
    dist: Vec<f64>,
    /// `exp(-d)`, row-major `m x m`.
    pub similarity: Vec<f64>,
    /// Symmetric kNN mask; the diagonal is kept.
    pub mask: Vec<bool>,
}

fn check_metric(dist: &[f64], m: usize) -> Result<()> {
    if dist.len() != m * m {
        return Err(Error::Dimension(format!(
            "distance matrix has {} entries, expected {m}x{m}",
            dist.len()
        )));
    }
    for a in 0..m {
        if dist[a * m + a] != 0.0 {
            return Err(Error::Dimension(format!("distance matrix has nonzero diagonal at {a}")));
        }
        for b in 0..m {
            let v = dist[a * m + b];
            if !(v.is_finite() && v >= 0.0) || (v - dist[b * m + a]).abs() > 1e-9 * v.max(1.0) {
                return Err(Error::Dimension(format!(
                    "distance matrix is not a symmetric non-negative matrix at ({a}, {b})"
                )));
            }
        }
    }
    Ok(())
}

/// Each point's `k` nearest other points, by distance then index.
pub fn nearest_neighbors(dist: &[f64], m: usize, k: usize) -> Vec<Vec<usize>> {
    (0..m)
        .map(|a| {
            let mut others: Vec<usize> = (0..m).filter(|&b| b != a).collect();
            others.sort_by(|&x, &y| dist[a * m + x].total_cmp(&dist[a * m + y]).then(x.cmp(&y)));
            others.truncate(k);
            others
        })
        .collect()
}

pub fn build_similarity(dist: &[f64], m: usize, k_neighbors: usize) -> Result<SimilarityGraph> {
    check_metric(dist, m)?;
    if k_neighbors == 0 || k_neighbors >= m {
        return Err(Error::Config(format!(
            "k_neighbors must lie in 1..{m}, got {k_neighbors}"
        )));
    }
    let mut mask = vec![false; m * m];
    for (a, nn) in nearest_neighbors(dist, m, k_neighbors).into_iter().enumerate() {
        mask[a * m + a] = true;
        for b in nn {
            mask[a * m + b] = true;
            mask[b * m + a] = true;
        }
    }
    Ok(SimilarityGraph {
        m,
        k_neighbors,
        similarity: dist.iter().map(|d| (-d).exp()).collect(),
        dist: dist.to_vec(),
        mask,
    })
}

impl SimilarityGraph {
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        if self.mask[a * self.m + b] {
            self.similarity[a * self.m + b]
        } else {
            0.0
        }
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(a) = queue.pop_front() {
            for b in 0..self.m {
                if !seen[b] && self.mask[a * self.m + b] && self.similarity[a * self.m + b] > 0.0 {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub g: usize,
    /// Between-cluster share of the total sum of squares in the embedding.
    pub explained_variance: f64,
    /// Neighbourhood size actually used (after any automatic increase).
    pub k_neighbors: usize,
}

impl ClusterAssignment {
    /// Wraps externally produced labels (e.g. ground truth).
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let g = labels.iter().max().map_or(0, |&v| v + 1);
        Self {
            labels,
            g,
            explained_variance: f64::NAN,
            k_neighbors: 0,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.g];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }
}

/// Row-normalized top-`g` eigenvectors of `D^{-1/2} A D^{-1/2}`.
pub fn spectral_embedding(graph: &SimilarityGraph, g: usize) -> Vec<Vec<f64>> {
    let m = graph.m;
    let deg: Vec<f64> = (0..m).map(|a| (0..m).map(|b| graph.weight(a, b)).sum()).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let norm = DMatrix::from_fn(m, m, |a, b| {
        let w = 0.5 * (graph.weight(a, b) + graph.weight(b, a));
        inv_sqrt[a] * w * inv_sqrt[b]
    });
    let eig = SymmetricEigen::new(norm);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    (0..m)
        .map(|a| {
            let mut row: Vec<f64> = order[..g].iter().map(|&c| eig.eigenvectors[(a, c)]).collect();
            let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 0.0 {
                row.iter_mut().for_each(|v| *v /= len);
            }
            row
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum()
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub within_ss: f64,
    pub total_ss: f64,
}

fn kmeans_once(points: &[Vec<f64>], g: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let m = points.len();
    let dim = points[0].len();
    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..m)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < g {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut labels = vec![usize::MAX; m];
    for _ in 0..max_iter {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let best = (0..g)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap();
            if *l != best {
                *l = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; g];
        let mut counts = vec![0usize; g];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            for (s, v) in sums[*l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..g {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..m)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]])
                            .total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                            .then(b.cmp(&a))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let within_ss = labels.iter().zip(points).map(|(l, p)| sq_dist(p, &centers[*l])).sum();
    let mean: Vec<f64> = (0..dim).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / m as f64).collect();
    let total_ss = points.iter().map(|p| sq_dist(p, &mean)).sum();
    KMeansFit {
        labels,
        within_ss,
        total_ss,
    }
}

/// Relabels so that labels appear in order of first occurrence.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Best of `restarts` k-means++ runs by within-cluster sum of squares; the
/// earliest restart wins ties.
pub fn kmeans(points: &[Vec<f64>], g: usize, restarts: usize, max_iter: usize, seed: u64) -> KMeansFit {
    let fits: Vec<KMeansFit> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            kmeans_once(points, g, max_iter, &mut rng)
        })
        .collect();
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.within_ss < fits[best].within_ss {
            best = i;
        }
    }
    let mut fit = fits.into_iter().nth(best).unwrap();
    fit.labels = canonical_labels(&fit.labels);
    fit
}

pub fn spectral_cluster(
    graph: &SimilarityGraph,
    g: usize,
    config: &SpectralConfig,
) -> Result<ClusterAssignment> {
    if g < 2 || g >= graph.m {
        return Err(Error::Config(format!(
            "cluster count must lie in 2..{}, got {g}",
            graph.m
        )));
    }
    let mut grown;
    let mut graph = graph;
    while !graph.is_connected() {
        match config.disconnected {
            DisconnectedPolicy::Error => {
                return Err(Error::Config(format!(
                    "kNN graph with k = {} is disconnected",
                    graph.k_neighbors
                )))
            }
            DisconnectedPolicy::IncreaseK => {
                let k = graph.k_neighbors + 1;
                log::warn!("kNN graph with k = {} is disconnected; trying k = {k}", k - 1);
                grown = build_similarity(&graph.dist, graph.m, k)?;
                graph = &grown;
            }
        }
    }
    let emb = spectral_embedding(graph, g);
    let fit = kmeans(&emb, g, config.restarts, config.max_iter, config.seed);
    let explained_variance = if fit.total_ss > 0.0 {
        (1.0 - fit.within_ss / fit.total_ss).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(ClusterAssignment {
        labels: fit.labels,
        g,
        explained_variance,
        k_neighbors: graph.k_neighbors,
    })
}

/// Spectral clustering for every candidate `k`, keeping the one with the
/// largest explained variance (smaller `k` on ties).
pub fn choose_k_neighbors(
    dist: &[f64],
    m: usize,
    g: usize,
    candidates: &[usize],
    config: &SpectralConfig,
) -> Result<ClusterAssignment> {
    let mut ks: Vec<usize> = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::Config("no k_neighbors candidates".into()));
    }
    let mut best: Option<ClusterAssignment> = None;
    for k in ks {
        let graph = build_similarity(dist, m, k)?;
        let fit = spectral_cluster(&graph, g, config)?;
        log::debug!("k = {k}: explained variance {:.4}", fit.explained_variance);
        if best.as_ref().is_none_or(|b| fit.explained_variance > b.explained_variance) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

/// Neighbourhood sizes tried when none are configured. Always contains
/// `floor(m / 2)`, and 2 when `m > 2`.
pub fn default_k_candidates(m: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = [2, m / 10, m / 4, m / 2]
        .into_iter()
        .filter(|&k| k >= 1 && k < m)
        .collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMatch {
    /// `mapping[a_label]` is the matched label of `b`, if any.
    pub mapping: Vec<Option<usize>>,
    pub agreement: f64,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..k).collect();
    // Heap's algorithm
    let mut c = vec![0usize; k];
    out.push(perm.clone());
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            out.push(perm.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Label correspondence maximizing agreement: exhaustive over permutations
/// when both sides have at most six labels, greedy on the contingency table
/// otherwise.
pub fn match_clusters(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<ClusterMatch> {
    if a.labels.len() != b.labels.len() {
        return Err(Error::Dimension(format!(
            "assignments cover {} and {} units",
            a.labels.len(),
            b.labels.len()
        )));
    }
    let m = a.labels.len();
    let k = a.g.max(b.g);
    let mut table = vec![0usize; k * k];
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        table[x * k + y] += 1;
    }
    let mut mapping = vec![None; a.g];
    let mut hits = 0;
    if k <= 6 {
        let mut best: Option<(usize, Vec<usize>)> = None;
        for perm in permutations(k) {
            let score: usize = (0..k).map(|r| table[r * k + perm[r]]).sum();
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, perm));
            }
        }
        let (score, perm) = best.unwrap();
        hits = score;
        for (r, slot) in mapping.iter_mut().enumerate() {
            *slot = (perm[r] < b.g).then_some(perm[r]);
        }
    } else {
        let mut used_r = vec![false; k];
        let mut used_c = vec![false; k];
        let mut cells: Vec<(usize, usize)> = (0..k).flat_map(|r| (0..k).map(move |c| (r, c))).collect();
        cells.sort_by(|x, y| table[y.0 * k + y.1].cmp(&table[x.0 * k + x.1]).then(x.cmp(y)));
        for (r, c) in cells {
            if !used_r[r] && !used_c[c] {
                used_r[r] = true;
                used_c[c] = true;
                hits += table[r * k + c];
                if r < a.g && c < b.g {
                    mapping[r] = Some(c);
                }
            }
        }
    }
    Ok(ClusterMatch {
        mapping,
        agreement: if m == 0 { 1.0 } else { hits as f64 / m as f64 },
    })
}

/// Row-normalized confusion matrix (`truth` rows, `predicted` columns) after
/// relabeling `predicted` to best match `truth`. Rows of empty true classes
/// are zero.
pub fn confusion_matrix(truth: &ClusterAssignment, predicted: &ClusterAssignment) -> Result<Vec<Vec<f64>>> {
    let mt = match_clusters(predicted, truth)?;
    let g = truth.g;
    let mut counts = vec![vec![0usize; g]; g];
    let mut spill = vec![0usize; g];
    for (&t, &p) in truth.labels.iter().zip(&predicted.labels) {
        match mt.mapping[p] {
            Some(c) => counts[t][c] += 1,
            None => spill[t] += 1,
        }
    }
    Ok(counts
        .iter()
        .zip(&spill)
        .map(|(row, s)| {
            let total = row.iter().sum::<usize>() + s;
            row.iter()
                .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
                .collect()
        })
        .collect())
}

pub fn write_assignment_csv(path: &Path, labels: &[String], a: &ClusterAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "cluster"])?;
    for (id, l) in labels.iter().zip(&a.labels) {
        w.write_record([id.clone(), (l + 1).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_assignment_csv(path: &Path) -> Result<ClusterAssignment> {
    let mut r = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let v: usize = rec.get(1).and_then(|s| s.trim().parse().ok()).filter(|&v| v >= 1).ok_or_else(|| {
            Error::Format {
                path: path.to_path_buf(),
                reason: format!("row {} has no positive cluster label", row + 1),
            }
        })?;
        labels.push(v - 1);
    }
    Ok(ClusterAssignment::from_labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn euclid(points: &[[f64; 2]]) -> Vec<f64> {
        let m = points.len();
        let mut d = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                d[a * m + b] = ((points[a][0] - points[b][0]).powi(2) + (points[a][1] - points[b][1]).powi(2)).sqrt();
            }
        }
        d
    }

    fn blobs(per: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centers = [[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push([ctr[0] + noise.sample(&mut rng), ctr[1] + noise.sample(&mut rng)]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn similarity_basics() {
        let m = 4;
        let g = build_similarity(&vec![0.0; m * m], m, 1).unwrap();
        assert!(g.similarity.iter().all(|&s| s == 1.0));
        let pts = [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [7.0, 0.0]];
        let g = build_similarity(&euclid(&pts), 4, 3).unwrap();
        assert!(g.mask.iter().all(|&v| v));
        assert!(build_similarity(&euclid(&pts), 4, 4).is_err());
        assert!(build_similarity(&euclid(&pts), 4, 0).is_err());
    }

    #[test]
    fn knn_mask_matches_sort_oracle() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [5.0, 5.0], [6.0, 5.5]];
        let d = euclid(&pts);
        let g = build_similarity(&d, 5, 2).unwrap();
        let mut want = vec![false; 25];
        for a in 0..5 {
            want[a * 5 + a] = true;
            let mut idx: Vec<(f64, usize)> = (0..5).filter(|&b| b != a).map(|b| (d[a * 5 + b], b)).collect();
            idx.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for &(_, b) in &idx[..2] {
                want[a * 5 + b] = true;
                want[b * 5 + a] = true;
            }
        }
        assert_eq!(g.mask, want);
    }

    #[test]
    fn three_blobs_are_recovered() {
        let (pts, truth) = blobs(20, 1);
        let d = euclid(&pts);
        let g = build_similarity(&d, 60, 10).unwrap();
        let fit = spectral_cluster(&g, 3, &SpectralConfig::default()).unwrap();
        let m = match_clusters(&fit, &ClusterAssignment::from_labels(truth)).unwrap();
        assert_eq!(m.agreement, 1.0);
        assert!(fit.explained_variance >= 0.95);
        let again = spectral_cluster(&g, 3, &SpectralConfig::default()).unwrap();
        assert_eq!(fit, again);
    }

    #[test]
    fn bad_cluster_counts_rejected() {
        let (pts, _) = blobs(2, 2);
        let g = build_similarity(&euclid(&pts), 6, 2).unwrap();
        assert!(spectral_cluster(&g, 6, &SpectralConfig::default()).is_err());
        assert!(spectral_cluster(&g, 1, &SpectralConfig::default()).is_err());
    }

    #[test]
    fn duplicates_share_labels() {
        let (mut pts, _) = blobs(5, 3);
        pts.push(pts[2]);
        pts.push(pts[11]);
        let m = pts.len();
        let g = build_similarity(&euclid(&pts), m, m - 1).unwrap();
        let fit = spectral_cluster(&g, 3, &SpectralConfig::default()).unwrap();
        assert_eq!(fit.labels[m - 2], fit.labels[2]);
        assert_eq!(fit.labels[m - 1], fit.labels[11]);
    }

    #[test]
    fn disconnected_graph_policy() {
        let (pts, _) = blobs(10, 4);
        let d = euclid(&pts);
        let g = build_similarity(&d, 30, 2).unwrap();
        assert!(!g.is_connected());
        let cfg = SpectralConfig {
            disconnected: DisconnectedPolicy::Error,
            ..SpectralConfig::default()
        };
        assert!(spectral_cluster(&g, 3, &cfg).is_err());
        let fit = spectral_cluster(&g, 3, &SpectralConfig::default()).unwrap();
        assert!(fit.k_neighbors > 2);
    }

    #[test]
    fn choosing_k() {
        let (pts, _) = blobs(20, 5);
        let d = euclid(&pts);
        let one = choose_k_neighbors(&d, 60, 3, &[25], &SpectralConfig::default()).unwrap();
        assert_eq!(one.k_neighbors, 25);
        let best = choose_k_neighbors(&d, 60, 3, &default_k_candidates(60), &SpectralConfig::default()).unwrap();
        assert!(best.explained_variance >= 0.95);
        assert!(default_k_candidates(418).contains(&209));
        assert!(default_k_candidates(24).contains(&2));
    }

    #[test]
    fn matching() {
        let a = ClusterAssignment::from_labels(vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(match_clusters(&a, &a).unwrap().agreement, 1.0);
        let b = ClusterAssignment::from_labels(vec![2, 2, 0, 0, 1, 1]);
        let m = match_clusters(&a, &b).unwrap();
        assert_eq!(m.agreement, 1.0);
        assert_eq!(m.mapping, vec![Some(2), Some(0), Some(1)]);
        let c = ClusterAssignment::from_labels(vec![0, 0, 0, 1, 1, 1]);
        assert!((match_clusters(&a, &c).unwrap().agreement - 4.0 / 6.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = ClusterAssignment::from_labels((0..300).map(|i| i % 3).collect());
        let rand = ClusterAssignment::from_labels((0..300).map(|_| rng.random_range(0..3)).collect());
        let ag = match_clusters(&rand, &truth).unwrap().agreement;
        assert!((ag - 1.0 / 3.0).abs() < 0.08, "{ag}");

        // greedy path for many labels
        let big = ClusterAssignment::from_labels((0..80).map(|i| i % 8).collect());
        let shifted = ClusterAssignment::from_labels(big.labels.iter().map(|l| (l + 3) % 8).collect());
        assert_eq!(match_clusters(&big, &shifted).unwrap().agreement, 1.0);
    }

    #[test]
    fn heap_permutations_are_complete() {
        let p = permutations(4);
        assert_eq!(p.len(), 24);
        let mut s = p.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 24);
    }

    #[test]
    fn confusion_rows_sum_to_one() {
        let truth = ClusterAssignment::from_labels(vec![0, 0, 1, 1, 2, 2]);
        let pred = ClusterAssignment::from_labels(vec![1, 1, 0, 2, 2, 2]);
        let c = confusion_matrix(&truth, &pred).unwrap();
        for row in &c {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(c[0][0], 1.0);
        assert_eq!(c[2][2], 1.0);
    }

    #[test]
    fn shrinking_distances_never_lowers_similarity() {
        let (pts, _) = blobs(4, 7);
        let d = euclid(&pts);
        let a = build_similarity(&d, 12, 4).unwrap();
        let half: Vec<f64> = d.iter().map(|v| v * 0.5).collect();
        let b = build_similarity(&half, 12, 4).unwrap();
        for i in 0..144 {
            assert!(b.similarity[i] >= a.similarity[i]);
        }
        assert_eq!(a.mask, b.mask);
    }
}
