//! Pseudo-class assignment and the exact k-NN / density primitives the later
//! stages are built on. Everything is brute force; ties go to the lower index.

use serde::{Deserialize, Serialize};

use crate::activeft::CoreSet;
use crate::error::{Error, Result};
use crate::pool::FeaturePool;
use crate::util::euclidean;

/// Members of one pseudo-class, in ascending pool order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoCluster {
    pub center_index: usize,
    pub member_indices: Vec<usize>,
}

impl PseudoCluster {
    pub fn size(&self) -> usize {
        self.member_indices.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub rho: Vec<f64>,
    /// Neighbor count actually used (after clamping).
    pub k_neighbors: usize,
}

/// Assigns every sample to its nearest center (Euclidean).
///
/// A center always lands in its own cluster, even when another center shares
/// its coordinates.
pub fn assign_clusters(pool: &FeaturePool, cores: &CoreSet) -> Vec<PseudoCluster> {
    let centers = &cores.center_indices;
    let mut clusters: Vec<PseudoCluster> = centers
        .iter()
        .map(|&c| PseudoCluster {
            center_index: c,
            member_indices: Vec::new(),
        })
        .collect();
    let mut center_pos = vec![usize::MAX; pool.n()];
    for (pos, &c) in centers.iter().enumerate() {
        center_pos[c] = pos;
    }
    for j in 0..pool.n() {
        let pos = if center_pos[j] != usize::MAX {
            center_pos[j]
        } else {
            nearest_center(pool, j, centers).0
        };
        clusters[pos].member_indices.push(j);
    }
    clusters
}

/// Position (in `centers`) and distance of the nearest center to sample `j`.
pub fn nearest_center(pool: &FeaturePool, j: usize, centers: &[usize]) -> (usize, f64) {
    let f = pool.row(j);
    let mut best = (0, f64::INFINITY);
    for (pos, &c) in centers.iter().enumerate() {
        let d = euclidean(f, pool.row(c));
        if d < best.1 {
            best = (pos, d);
        }
    }
    best
}

/// Mean distance from each member of `subset` to its `k` nearest other members.
///
/// `k` is clamped to `|subset| - 1` with a warning.
pub fn density_distance(pool: &FeaturePool, subset: &[usize], k: usize) -> Result<DensityProfile> {
    if subset.len() < 2 {
        return Err(Error::DegenerateSubset(subset.len()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let k_eff = clamp_k(k, subset.len() - 1);
    let rho = subset
        .iter()
        .map(|&q| {
            let others: Vec<usize> = subset.iter().copied().filter(|&o| o != q).collect();
            let dists = sorted_distances(pool, q, &others);
            dists[..k_eff].iter().map(|&(_, d)| d).sum::<f64>() / k_eff as f64
        })
        .collect();
    Ok(DensityProfile {
        rho,
        k_neighbors: k_eff,
    })
}

fn clamp_k(k: usize, available: usize) -> usize {
    if k > available {
        log::warn!("k={k} exceeds the {available} available neighbors; clamping");
        available
    } else {
        k
    }
}

/// The `k` candidates closest to `query`, ascending by distance.
pub fn knn_of_point(
    pool: &FeaturePool,
    query: usize,
    candidates: &[usize],
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if k > candidates.len() {
        return Err(Error::Config(format!(
            "requested {k} neighbors from {} candidates",
            candidates.len()
        )));
    }
    let mut dists = sorted_distances(pool, query, candidates);
    dists.truncate(k);
    Ok(dists.into_iter().map(|(i, _)| i).collect())
}

/// `(candidate, distance)` pairs sorted by distance, then by pool index.
pub(crate) fn sorted_distances(
    pool: &FeaturePool,
    query: usize,
    candidates: &[usize],
) -> Vec<(usize, f64)> {
    let q = pool.row(query);
    let mut dists: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&c| (c, euclidean(q, pool.row(c))))
        .collect();
    sort_by_distance(&mut dists);
    dists
}

pub(crate) fn sort_by_distance(dists: &mut [(usize, f64)]) {
    dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
}

/// Dense distance matrix over `members`, indexed by position.
pub(crate) fn distance_matrix(pool: &FeaturePool, members: &[usize]) -> Vec<f64> {
    let m = members.len();
    let mut out = vec![0.0; m * m];
    for a in 0..m {
        for b in (a + 1)..m {
            let d = euclidean(pool.row(members[a]), pool.row(members[b]));
            out[a * m + b] = d;
            out[b * m + a] = d;
        }
    }
    out
}
