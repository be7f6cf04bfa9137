//! Stage 1: core-sample selection.
//!
//! `K` continuous parameters on the unit sphere are fitted so that their
//! induced distribution matches the pool (first loss term) while staying
//! mutually diverse (second term). Each fitted parameter is then matched to
//! its most similar pool feature.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::FeaturePool;
use crate::util::{dot, rng_from_seed};

pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Rows per parallel work unit. Fixed so the reduction order never depends on
/// the thread count.
const CHUNK_ROWS: usize = 256;

/// The continuous parameters being optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreParams {
    /// `K × dim`, row-major, unit-norm rows.
    pub theta: Vec<f64>,
    pub dim: usize,
    pub tau: f64,
    pub lambda_weight: f64,
}

impl CoreParams {
    pub fn new(theta: Vec<f64>, dim: usize) -> Self {
        CoreParams {
            theta,
            dim,
            tau: DEFAULT_TAU,
            lambda_weight: DEFAULT_LAMBDA,
        }
    }

    pub fn k_cores(&self) -> usize {
        self.theta.len() / self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.theta[j * self.dim..(j + 1) * self.dim]
    }

    /// Projects every row back onto the unit sphere.
    pub fn normalize(&mut self) {
        for row in self.theta.chunks_mut(self.dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.theta
            .chunks(self.dim)
            .map(|r| (r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn validate(&self, pool: &FeaturePool) -> Result<()> {
        if self.dim != pool.dim() || self.theta.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} values for dim {}, pool dim is {}",
                self.theta.len(),
                self.dim,
                pool.dim()
            )));
        }
        if self.k_cores() < 2 {
            return Err(Error::Config(
                "at least two core parameters are needed for the diversity term".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.lambda_weight >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub tau: f64,
    pub lambda_weight: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            max_iters: 300,
            rel_tol: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            tau: DEFAULT_TAU,
            lambda_weight: DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0) || self.max_iters == 0 || !(self.rel_tol >= 0.0) {
            return Err(Error::Config(
                "learning_rate and max_iters must be positive, rel_tol non-negative".into(),
            ));
        }
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub loss: f64,
    /// Largest row-norm deviation from 1 of the parameters this loss was evaluated at.
    pub max_norm_deviation: f64,
}

/// Result of core selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSet {
    pub center_indices: Vec<usize>,
    #[serde(skip)]
    pub final_theta: Vec<f64>,
    pub final_loss: f64,
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

impl CoreSet {
    pub fn k(&self) -> usize {
        self.center_indices.len()
    }

    /// A core set given directly by indices (no optimization history).
    pub fn from_indices(center_indices: Vec<usize>) -> Self {
        CoreSet {
            center_indices,
            final_theta: Vec::new(),
            final_loss: f64::NAN,
            trace: Vec::new(),
        }
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,loss\n");
        for p in &self.trace {
            out.push_str(&format!("{},{}\n", p.iter, p.loss));
        }
        out
    }
}

struct Evaluation {
    loss: f64,
    assignment: Vec<usize>,
    grad: Option<Vec<f64>>,
}

fn evaluate(pool: &FeaturePool, params: &CoreParams, with_grad: bool) -> Result<Evaluation> {
    params.validate(pool)?;
    let k = params.k_cores();
    let dim = params.dim;
    let n = pool.n();
    let tau = params.tau;

    // Data term, chunked over rows.
    let chunks: Vec<(f64, Vec<usize>, Vec<f64>)> = pool
        .features()
        .par_chunks(CHUNK_ROWS * dim)
        .map(|block| {
            let mut sim_sum = 0.0;
            let mut assign = Vec::with_capacity(block.len() / dim);
            let mut feat_sum = if with_grad { vec![0.0; k * dim] } else { Vec::new() };
            for f in block.chunks(dim) {
                let mut best = (0, f64::NEG_INFINITY);
                for j in 0..k {
                    let s = dot(f, params.row(j));
                    if s > best.1 {
                        best = (j, s);
                    }
                }
                sim_sum += best.1;
                assign.push(best.0);
                if with_grad {
                    let acc = &mut feat_sum[best.0 * dim..(best.0 + 1) * dim];
                    acc.iter_mut().zip(f).for_each(|(a, &x)| *a += x as f64);
                }
            }
            (sim_sum, assign, feat_sum)
        })
        .collect();

    let mut sim_total = 0.0;
    let mut assignment = Vec::with_capacity(n);
    let mut feat_sum = vec![0.0; if with_grad { k * dim } else { 0 }];
    for (s, a, f) in chunks {
        sim_total += s;
        assignment.extend(a);
        feat_sum.iter_mut().zip(f).for_each(|(acc, v)| *acc += v);
    }
    let data_term = -sim_total / (n as f64 * tau);

    // Diversity term: mean over j of log sum_{k != j} exp(sim(theta_j, theta_k) / tau).
    let mut scaled = vec![0.0; k * k];
    for a in 0..k {
        for b in (a + 1)..k {
            let s = params.row(a).iter().zip(params.row(b)).map(|(x, y)| x * y).sum::<f64>() / tau;
            scaled[a * k + b] = s;
            scaled[b * k + a] = s;
        }
    }
    let mut lse = vec![0.0; k];
    for j in 0..k {
        let row = &scaled[j * k..(j + 1) * k];
        let max = (0..k).filter(|&m| m != j).map(|m| row[m]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..k).filter(|&m| m != j).map(|m| (row[m] - max).exp()).sum();
        lse[j] = max + sum.ln();
    }
    let diversity = lse.iter().sum::<f64>() / k as f64;
    let loss = data_term + params.lambda_weight * diversity;

    let grad = with_grad.then(|| {
        let mut g: Vec<f64> = feat_sum.iter().map(|v| -v / (n as f64 * tau)).collect();
        let coef = params.lambda_weight / (k as f64 * tau);
        // softmax weights p[j][m] over m != j
        let p = |j: usize, m: usize| (scaled[j * k + m] - lse[j]).exp();
        for m in 0..k {
            for other in 0..k {
                if other == m {
                    continue;
                }
                let w = coef * (p(m, other) + p(other, m));
                let src = params.row(other);
                g[m * dim..(m + 1) * dim]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(gv, &t)| *gv += w * t);
            }
        }
        g
    });

    Ok(Evaluation {
        loss,
        assignment,
        grad,
    })
}

fn require_normalized(pool: &FeaturePool) -> Result<()> {
    if pool.is_normalized() {
        Ok(())
    } else {
        Err(Error::Config(
            "core selection needs a normalized pool (similarity is a dot product of unit vectors)"
                .into(),
        ))
    }
}

/// Loss and hard assignment of each sample to its most similar parameter
/// (ties to the lowest parameter index).
pub fn activeft_loss(pool: &FeaturePool, params: &CoreParams) -> Result<(f64, Vec<usize>)> {
    require_normalized(pool)?;
    let e = evaluate(pool, params, false)?;
    Ok((e.loss, e.assignment))
}

/// Gradient of [`activeft_loss`] with respect to `theta`, holding the
/// assignment fixed.
pub fn activeft_grad(pool: &FeaturePool, params: &CoreParams) -> Result<Vec<f64>> {
    require_normalized(pool)?;
    Ok(evaluate(pool, params, true)?.grad.expect("requested"))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &OptimizerConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Selects `k_cores` distinct pool indices.
pub fn select_cores(pool: &FeaturePool, k_cores: usize, opt: &OptimizerConfig) -> Result<CoreSet> {
    require_normalized(pool)?;
    opt.validate()?;
    if k_cores > pool.n() {
        return Err(Error::InfeasibleBudget(format!(
            "{k_cores} cores requested from a pool of {}",
            pool.n()
        )));
    }
    if k_cores < 2 {
        return Err(Error::Config("core selection needs K >= 2".into()));
    }
    let dim = pool.dim();
    let mut rng = rng_from_seed(opt.seed);
    let init = sample(&mut rng, pool.n(), k_cores);
    let theta: Vec<f64> = init
        .iter()
        .flat_map(|i| pool.row(i).iter().map(|&v| v as f64))
        .collect();
    let mut params = CoreParams {
        theta,
        dim,
        tau: opt.tau,
        lambda_weight: opt.lambda_weight,
    };
    params.normalize();

    let mut adam = Adam::new(params.theta.len());
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    let mut final_loss = f64::NAN;
    for iter in 0..=opt.max_iters {
        let eval = evaluate(pool, &params, iter < opt.max_iters)?;
        trace.push(TracePoint {
            iter,
            loss: eval.loss,
            max_norm_deviation: params.max_norm_deviation(),
        });
        final_loss = eval.loss;
        if let Some(p) = prev {
            if (eval.loss - p).abs() / p.abs().max(1.0) < opt.rel_tol {
                break;
            }
        }
        prev = Some(eval.loss);
        let Some(grad) = eval.grad else { break };
        adam.step(&mut params.theta, &grad, opt);
        params.normalize();
    }

    let center_indices = match_to_pool(pool, &params);
    Ok(CoreSet {
        center_indices,
        final_theta: params.theta,
        final_loss,
        trace,
    })
}

/// Matches each parameter row to its most similar pool feature. When two rows
/// want the same feature the more similar row keeps it and the other moves to
/// its next-best unused feature.
pub fn match_to_pool(pool: &FeaturePool, params: &CoreParams) -> Vec<usize> {
    let k = params.k_cores();
    let n = pool.n();
    let ranked: Vec<Vec<(usize, f64)>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut sims: Vec<(usize, f64)> =
                (0..n).map(|i| (i, dot(pool.row(i), params.row(j)))).collect();
            sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sims
        })
        .collect();

    let mut cursor = vec![0usize; k];
    let mut matched: Vec<Option<usize>> = vec![None; k];
    let mut used = vec![false; n];
    loop {
        // (feature, similarity, theta row) proposals from every unmatched row
        let mut proposals: Vec<(usize, f64, usize)> = Vec::new();
        for j in (0..k).filter(|&j| matched[j].is_none()) {
            while used[ranked[j][cursor[j]].0] {
                cursor[j] += 1;
            }
            let (f, s) = ranked[j][cursor[j]];
            proposals.push((f, s, j));
        }
        if proposals.is_empty() {
            break;
        }
        proposals.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        let mut last_feature = usize::MAX;
        for (f, _, j) in proposals {
            if f == last_feature {
                continue;
            }
            last_feature = f;
            matched[j] = Some(f);
            used[f] = true;
        }
    }
    matched.into_iter().map(|m| m.expect("every row matched")).collect()
}
