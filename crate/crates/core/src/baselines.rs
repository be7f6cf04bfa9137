//! Comparison selectors: uniform random, farthest-distance sampling
//! (k-center greedy) and K-Means centroid matching.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::FeaturePool;
use crate::util::{euclidean, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Random,
    Fds,
    Kmeans,
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(BaselineMethod::Random),
            "fds" => Ok(BaselineMethod::Fds),
            "kmeans" | "k-means" => Ok(BaselineMethod::Kmeans),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Random => "random",
            BaselineMethod::Fds => "fds",
            BaselineMethod::Kmeans => "kmeans",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub budget: usize,
    pub seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod, budget: usize, seed: u64) -> Self {
        BaselineConfig {
            method,
            budget,
            seed,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
        }
    }

    fn check(&self, pool: &FeaturePool) -> Result<()> {
        if self.budget > pool.n() {
            return Err(Error::InfeasibleBudget(format!(
                "budget {} exceeds pool size {}",
                self.budget,
                pool.n()
            )));
        }
        Ok(())
    }
}

pub fn select_baseline(pool: &FeaturePool, cfg: &BaselineConfig) -> Result<Vec<usize>> {
    match cfg.method {
        BaselineMethod::Random => select_random(pool, cfg),
        BaselineMethod::Fds => select_fds(pool, cfg),
        BaselineMethod::Kmeans => select_kmeans(pool, cfg),
    }
}

pub fn select_random(pool: &FeaturePool, cfg: &BaselineConfig) -> Result<Vec<usize>> {
    cfg.check(pool)?;
    let mut rng = rng_from_seed(cfg.seed);
    Ok(sample(&mut rng, pool.n(), cfg.budget).into_vec())
}

/// Greedy max-min selection from a seeded random anchor.
pub fn select_fds(pool: &FeaturePool, cfg: &BaselineConfig) -> Result<Vec<usize>> {
    cfg.check(pool)?;
    if cfg.budget == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng_from_seed(cfg.seed);
    let first = sample(&mut rng, pool.n(), 1).index(0);
    Ok(fds_from(pool, first, cfg.budget))
}

/// Farthest-distance sampling from a fixed first pick.
pub fn fds_from(pool: &FeaturePool, first: usize, budget: usize) -> Vec<usize> {
    let n = pool.n();
    let mut selected = Vec::with_capacity(budget);
    let mut taken = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = first;
    while selected.len() < budget {
        selected.push(next);
        taken[next] = true;
        let anchor = pool.row(next);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = euclidean(pool.row(i), anchor);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if best.is_none_or(|(_, b)| min_dist[i] > b) {
                best = Some((i, min_dist[i]));
            }
        }
        match best {
            Some((i, _)) => next = i,
            None => break,
        }
    }
    selected
}

/// Lloyd iterations and the objective after every assignment step.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    /// `k × dim` centroids.
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(&x, &y)| (x as f64 - y).powi(2)).sum()
}

/// Lloyd's algorithm with uniform data-point initialization. Empty clusters
/// are re-seeded at the point farthest from its own centroid.
pub fn kmeans_fit(pool: &FeaturePool, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KmeansFit> {
    let n = pool.n();
    let dim = pool.dim();
    if k == 0 || k > n {
        return Err(Error::InfeasibleBudget(format!("k={k} for a pool of {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut centroids: Vec<f64> = sample(&mut rng, n, k)
        .iter()
        .flat_map(|i| pool.row(i).iter().map(|&v| v as f64))
        .collect();
    let mut assignment = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut objective = 0.0;
        let mut point_cost = vec![0.0; n];
        for i in 0..n {
            let f = pool.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(f, &centroids[c * dim..(c + 1) * dim]);
                if d < best.1 {
                    best = (c, d);
                }
            }
            assignment[i] = best.0;
            point_cost[i] = best.1;
            objective += best.1;
        }
        history.push(objective);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(pool.row(i))
                .for_each(|(s, &v)| *s += v as f64);
        }
        let mut updated = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for t in 0..dim {
                    updated[c * dim + t] = sums[c * dim + t] / counts[c] as f64;
                }
            }
        }
        // re-seed empty clusters at the currently worst-served points
        let mut reseeded = vec![false; n];
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        for c in empty {
            let far = (0..n)
                .filter(|&i| !reseeded[i] && counts[assignment[i]] > 1)
                .max_by(|&a, &b| point_cost[a].total_cmp(&point_cost[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                reseeded[i] = true;
                counts[assignment[i]] -= 1;
                counts[c] = 1;
                for t in 0..dim {
                    updated[c * dim + t] = pool.row(i)[t] as f64;
                }
            }
        }
        let shift = (0..k)
            .map(|c| {
                centroids[c * dim..(c + 1) * dim]
                    .iter()
                    .zip(&updated[c * dim..(c + 1) * dim])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < tol {
            break;
        }
    }
    Ok(KmeansFit {
        centroids,
        assignment,
        objective_history: history,
        iterations,
    })
}

/// Nearest pool sample to each K-Means centroid, with `K = budget`.
pub fn select_kmeans(pool: &FeaturePool, cfg: &BaselineConfig) -> Result<Vec<usize>> {
    cfg.check(pool)?;
    if cfg.budget == 0 {
        return Ok(Vec::new());
    }
    let fit = kmeans_fit(pool, cfg.budget, cfg.seed, cfg.kmeans_max_iters, cfg.kmeans_tol)?;
    let dim = pool.dim();
    let mut taken = vec![false; pool.n()];
    let mut out = Vec::with_capacity(cfg.budget);
    for c in 0..cfg.budget {
        let centroid = &fit.centroids[c * dim..(c + 1) * dim];
        let mut ranked: Vec<(usize, f64)> =
            (0..pool.n()).map(|i| (i, sq_dist(pool.row(i), centroid))).collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let pick = ranked
            .into_iter()
            .map(|(i, _)| i)
            .find(|&i| !taken[i])
            .ok_or_else(|| Error::Invariant("ran out of samples while matching centroids".into()))?;
        taken[pick] = true;
        out.push(pick);
    }
    Ok(out)
}
