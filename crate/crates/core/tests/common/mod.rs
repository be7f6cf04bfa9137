//! Brute-force reference implementations and random fixtures shared by the
//! integration tests. Everything here is written directly from the
//! definitions, without reusing library helpers.

#![allow(dead_code)]

use bilaf_core::{CoreParams, FeaturePool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n × dim` standard-normal rows, optionally L2-normalized.
pub fn random_pool(rng: &mut ChaCha8Rng, n: usize, dim: usize, normalize: bool) -> FeaturePool {
    let mut feats = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if normalize { norm } else { 1.0 };
        feats.extend(row.iter().map(|v| (v / scale) as f32));
    }
    FeaturePool::new(feats, dim, None, normalize).unwrap()
}

pub fn random_labelled_pool(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: u32) -> FeaturePool {
    let pool = random_pool(rng, n, dim, true);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    FeaturePool::new(pool.features().to_vec(), dim, Some(labels), true).unwrap()
}

/// `k` distinct indices from `0..n`, in draw order.
pub fn distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let i = rng.random_range(0..n);
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

pub fn dist(pool: &FeaturePool, a: usize, b: usize) -> f64 {
    let (x, y) = (pool.row(a), pool.row(b));
    let mut s = 0.0f64;
    for t in 0..x.len() {
        let d = x[t] as f64 - y[t] as f64;
        s += d * d;
    }
    s.sqrt()
}

pub fn dist_to(pool: &FeaturePool, a: usize, v: &[f64]) -> f64 {
    pool.row(a)
        .iter()
        .zip(v)
        .map(|(&x, &y)| (x as f64 - y) * (x as f64 - y))
        .sum::<f64>()
        .sqrt()
}

pub fn density(pool: &FeaturePool, subset: &[usize], k: usize) -> Vec<f64> {
    let k = k.min(subset.len() - 1);
    subset
        .iter()
        .map(|&q| {
            let mut d: Vec<f64> = subset.iter().filter(|&&o| o != q).map(|&o| dist(pool, q, o)).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Center position for each sample; centers own themselves.
pub fn assign(pool: &FeaturePool, centers: &[usize]) -> Vec<usize> {
    (0..pool.n())
        .map(|j| {
            if let Some(p) = centers.iter().position(|&c| c == j) {
                return p;
            }
            let mut best = 0;
            for p in 1..centers.len() {
                if dist(pool, j, centers[p]) < dist(pool, j, centers[best]) {
                    best = p;
                }
            }
            best
        })
        .collect()
}

pub fn knn(pool: &FeaturePool, q: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = candidates.iter().map(|&c| (dist(pool, q, c), c)).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d.into_iter().take(k).map(|(_, c)| c).collect()
}

/// Boundary score of `x` with basic_distance off: min over opponents of
/// `(delta^t * D - d_intra) / max(D, d_intra)`.
pub fn score(pool: &FeaturePool, cluster: &[usize], x: usize, centers: &[usize], own: usize, penalties: &[u32], delta: f64) -> (f64, usize) {
    let others: Vec<usize> = cluster.iter().copied().filter(|&m| m != x).collect();
    let d_intra = if others.is_empty() {
        0.0
    } else {
        others.iter().map(|&m| dist(pool, x, m)).sum::<f64>() / others.len() as f64
    };
    let mut best = (f64::INFINITY, usize::MAX);
    for l in 0..centers.len() {
        if l == own {
            continue;
        }
        let d = dist(pool, x, centers[l]);
        let denom = if d > d_intra { d } else { d_intra };
        let s = if denom == 0.0 {
            0.0
        } else {
            (delta.powi(penalties[l] as i32) * d - d_intra) / denom
        };
        if s < best.0 {
            best = (s, l);
        }
    }
    best
}

/// Inclusion order of iterative density-based clustering, by direct loop.
pub fn idc_order(pool: &FeaturePool, members: &[usize], center: usize, include_fraction: f64, k: usize) -> Vec<usize> {
    let n = members.len();
    let per_round = ((include_fraction * n as f64 + 1e-9).floor() as usize).max(1);
    let mut order = vec![center];
    while order.len() < n {
        let mut cand: Vec<(f64, usize)> = Vec::new();
        for &m in members {
            if order.contains(&m) {
                continue;
            }
            let mut d: Vec<f64> = order.iter().map(|&o| dist(pool, m, o)).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let take = k.min(d.len());
            cand.push((d[..take].iter().sum::<f64>() / take as f64, m));
        }
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, m) in cand.iter().take(per_round) {
            order.push(m);
        }
    }
    order
}

/// Members with the `count` largest `score` values, center excluded, ties to
/// the lower index.
pub fn top_excluding(members: &[usize], score: &[f64], count: usize, center: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = members
        .iter()
        .zip(score)
        .filter(|(&m, _)| m != center)
        .map(|(&m, &s)| (s, m))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = pairs.into_iter().take(count).map(|(_, m)| m).collect();
    out.sort();
    out
}

/// Proportional floors plus largest remainders, for cases where neither the
/// minimum nor the capacity rule binds.
pub fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| s * total / sum).collect();
    let left = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = (sizes[a] * total) % sum;
        let rb = (sizes[b] * total) % sum;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(left) {
        alloc[i] += 1;
    }
    alloc
}

fn sim(f: &[f32], p: &CoreParams, j: usize) -> f64 {
    f.iter().zip(p.row(j)).map(|(&a, &b)| a as f64 * b).sum()
}

/// Most similar parameter row per sample, ties to the lowest row.
pub fn argmax_assignment(pool: &FeaturePool, p: &CoreParams) -> Vec<usize> {
    pool.rows()
        .map(|f| {
            let mut best = 0;
            for j in 1..p.k_cores() {
                if sim(f, p, j) > sim(f, p, best) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// The loss written straight from its definition.
pub fn loss(pool: &FeaturePool, p: &CoreParams) -> f64 {
    loss_with_assignment(pool, p, &argmax_assignment(pool, p))
}

/// The loss with each sample's matched parameter row given, which is the
/// function the analytic gradient differentiates.
pub fn loss_with_assignment(pool: &FeaturePool, p: &CoreParams, assignment: &[usize]) -> f64 {
    let k = p.k_cores();
    let mut data = 0.0;
    for (f, &j) in pool.rows().zip(assignment) {
        data += sim(f, p, j) / p.tau;
    }
    data /= pool.n() as f64;
    let mut div = 0.0;
    for j in 0..k {
        let mut s = 0.0;
        for m in 0..k {
            if m != j {
                let t: f64 = p.row(j).iter().zip(p.row(m)).map(|(a, b)| a * b).sum();
                s += (t / p.tau).exp();
            }
        }
        div += s.ln();
    }
    -data + p.lambda_weight * div / k as f64
}

/// Unit-norm random parameters.
pub fn random_params(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> CoreParams {
    let theta: Vec<f64> = (0..k * dim).map(|_| StandardNormal.sample(rng)).collect();
    let mut p = CoreParams::new(theta, dim);
    p.normalize();
    p
}

pub fn accuracy(pool: &FeaturePool, selected: &[usize]) -> f64 {
    let labels = pool.labels().unwrap();
    let dim = pool.dim();
    let mut classes: Vec<u32> = selected.iter().map(|&i| labels[i]).collect();
    classes.sort();
    classes.dedup();
    let centroids: Vec<(u32, Vec<f64>)> = classes
        .iter()
        .map(|&c| {
            let rows: Vec<usize> = selected.iter().copied().filter(|&i| labels[i] == c).collect();
            let mut m = vec![0.0; dim];
            for &i in &rows {
                for t in 0..dim {
                    m[t] += pool.row(i)[t] as f64;
                }
            }
            let norm = m.iter().map(|v: &f64| v * v).sum::<f64>().sqrt() / rows.len() as f64;
            let m: Vec<f64> = m.iter().map(|v| v / rows.len() as f64 / norm).collect();
            // mimic the f32 storage of fitted centroids
            (c, m.iter().map(|&v| v as f32 as f64).collect())
        })
        .collect();
    let test: Vec<usize> = (0..pool.n()).filter(|i| !selected.contains(i)).collect();
    let hits = test
        .iter()
        .filter(|&&i| {
            let mut best = (u32::MAX, f64::INFINITY);
            for (c, m) in &centroids {
                let d = dist_to(pool, i, m);
                if d < best.1 {
                    best = (*c, d);
                }
            }
            best.0 == labels[i]
        })
        .count();
    hits as f64 / test.len() as f64
}
