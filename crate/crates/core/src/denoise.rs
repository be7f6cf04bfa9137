//! Stage 2, step 2: drop the peripheral fraction of each pseudo-cluster.
//!
//! Three strategies are available besides `None`:
//!
//! * [`DenoiseStrategy::Idc`] grows the cluster outward from its center in
//!   rounds, always absorbing the members closest (on average) to their
//!   nearest already-included points. The last arrivals are removed.
//! * [`DenoiseStrategy::DensityBased`] removes the members with the largest
//!   k-NN density distance inside the cluster.
//! * [`DenoiseStrategy::DistanceGuide`] removes the members farthest from the
//!   center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{density_distance, distance_matrix, PseudoCluster};
use crate::pool::FeaturePool;
use crate::util::{euclidean, ratio_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseStrategy {
    Idc,
    DensityBased,
    DistanceGuide,
    None,
}

impl DenoiseStrategy {
    pub fn short_name(self) -> &'static str {
        match self {
            DenoiseStrategy::Idc => "idc",
            DenoiseStrategy::DensityBased => "db",
            DenoiseStrategy::DistanceGuide => "dg",
            DenoiseStrategy::None => "none",
        }
    }
}

impl std::str::FromStr for DenoiseStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "idc" => Ok(DenoiseStrategy::Idc),
            "db" | "density" | "density_based" => Ok(DenoiseStrategy::DensityBased),
            "dg" | "distance" | "distance_guide" => Ok(DenoiseStrategy::DistanceGuide),
            "none" => Ok(DenoiseStrategy::None),
            other => Err(Error::Config(format!("unknown denoise strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseConfig {
    pub strategy: DenoiseStrategy,
    pub removal_ratio: f64,
    pub include_fraction: f64,
    pub k_neighbors: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            strategy: DenoiseStrategy::Idc,
            removal_ratio: 0.10,
            include_fraction: 0.10,
            k_neighbors: 10,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.removal_ratio) {
            return Err(Error::Config("removal ratio must lie in [0, 1)".into()));
        }
        if !(self.include_fraction > 0.0 && self.include_fraction <= 1.0) {
            return Err(Error::Config("include fraction must lie in (0, 1]".into()));
        }
        if self.k_neighbors == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub center_index: usize,
    /// Surviving members, ascending pool index.
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// Order in which members joined the cluster (IDC only).
    pub inclusion_order: Vec<usize>,
}

impl DenoiseReport {
    fn from_removed(cluster: &PseudoCluster, removed: Vec<usize>, inclusion_order: Vec<usize>) -> Self {
        let kept = cluster
            .member_indices
            .iter()
            .copied()
            .filter(|i| !removed.contains(i))
            .collect();
        DenoiseReport {
            center_index: cluster.center_index,
            kept,
            removed,
            inclusion_order,
        }
    }

    /// The denoised cluster.
    pub fn kept_cluster(&self) -> PseudoCluster {
        PseudoCluster {
            center_index: self.center_index,
            member_indices: self.kept.clone(),
        }
    }
}

/// Dispatches on `cfg.strategy`.
pub fn denoise(pool: &FeaturePool, cluster: &PseudoCluster, cfg: &DenoiseConfig) -> Result<DenoiseReport> {
    cfg.validate()?;
    if cluster.member_indices.is_empty() {
        return Err(Error::Invariant("cannot denoise an empty cluster".into()));
    }
    match cfg.strategy {
        DenoiseStrategy::Idc => denoise_idc(pool, cluster, cfg),
        DenoiseStrategy::DensityBased => denoise_density(pool, cluster, cfg),
        DenoiseStrategy::DistanceGuide => denoise_distance(pool, cluster, cfg),
        DenoiseStrategy::None => Ok(DenoiseReport::from_removed(cluster, Vec::new(), Vec::new())),
    }
}

/// Iterative density-based clustering.
pub fn denoise_idc(pool: &FeaturePool, cluster: &PseudoCluster, cfg: &DenoiseConfig) -> Result<DenoiseReport> {
    let members = &cluster.member_indices;
    let n = members.len();
    let center_pos = members
        .iter()
        .position(|&m| m == cluster.center_index)
        .ok_or_else(|| Error::Invariant("center is not a member of its cluster".into()))?;
    let dist = distance_matrix(pool, members);
    let per_round = ratio_count(cfg.include_fraction, n).max(1);
    let k = cfg.k_neighbors.max(1);

    let mut included_pos = vec![center_pos];
    let mut in_cluster = vec![false; n];
    in_cluster[center_pos] = true;

    while included_pos.len() < n {
        let mut scored: Vec<(usize, f64)> = (0..n)
            .filter(|&p| !in_cluster[p])
            .map(|p| {
                let mut d: Vec<f64> = included_pos.iter().map(|&q| dist[p * n + q]).collect();
                let take = k.min(d.len());
                d.select_nth_unstable_by(take - 1, f64::total_cmp);
                let mut nearest = d[..take].to_vec();
                nearest.sort_by(f64::total_cmp);
                (p, nearest.iter().sum::<f64>() / take as f64)
            })
            .collect();
        // positions are in ascending pool order, so position order breaks ties by index
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for &(p, _) in scored.iter().take(per_round) {
            in_cluster[p] = true;
            included_pos.push(p);
        }
    }

    let inclusion_order: Vec<usize> = included_pos.iter().map(|&p| members[p]).collect();
    let n_rm = ratio_count(cfg.removal_ratio, n);
    let removed = inclusion_order[n - n_rm..].to_vec();
    Ok(DenoiseReport::from_removed(cluster, removed, inclusion_order))
}

/// Removes the largest k-NN density distances within the cluster.
pub fn denoise_density(pool: &FeaturePool, cluster: &PseudoCluster, cfg: &DenoiseConfig) -> Result<DenoiseReport> {
    let members = &cluster.member_indices;
    let n_rm = ratio_count(cfg.removal_ratio, members.len());
    if members.len() < 2 {
        if cfg.removal_ratio > 0.0 {
            log::warn!("cluster of center {} is too small to denoise", cluster.center_index);
        }
        return Ok(DenoiseReport::from_removed(cluster, Vec::new(), Vec::new()));
    }
    let profile = density_distance(pool, members, cfg.k_neighbors)?;
    let scored: Vec<(usize, f64)> = members.iter().copied().zip(profile.rho).collect();
    Ok(DenoiseReport::from_removed(
        cluster,
        largest_excluding_center(scored, n_rm, cluster.center_index),
        Vec::new(),
    ))
}

/// Removes the members farthest from the center.
pub fn denoise_distance(pool: &FeaturePool, cluster: &PseudoCluster, cfg: &DenoiseConfig) -> Result<DenoiseReport> {
    let members = &cluster.member_indices;
    let n_rm = ratio_count(cfg.removal_ratio, members.len());
    if members.len() < 2 {
        if cfg.removal_ratio > 0.0 {
            log::warn!("cluster of center {} is too small to denoise", cluster.center_index);
        }
        return Ok(DenoiseReport::from_removed(cluster, Vec::new(), Vec::new()));
    }
    let c = pool.row(cluster.center_index);
    let scored = members.iter().map(|&m| (m, euclidean(pool.row(m), c))).collect();
    Ok(DenoiseReport::from_removed(
        cluster,
        largest_excluding_center(scored, n_rm, cluster.center_index),
        Vec::new(),
    ))
}

/// The `count` highest-scoring members other than the center; ties remove
/// the lower index first.
fn largest_excluding_center(mut scored: Vec<(usize, f64)>, count: usize, center: usize) -> Vec<usize> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .filter(|&(m, _)| m != center)
        .take(count)
        .map(|(m, _)| m)
        .collect()
}
