//! End-to-end BiLAF selection and its configuration.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activeft::{select_cores, CoreSet, OptimizerConfig};
use crate::boundary::{allocate_budgets, select_boundary, BoundaryConfig, Criterion, Process, SelectionResult};
use crate::denoise::{denoise, DenoiseConfig, DenoiseReport, DenoiseStrategy};
use crate::error::{Error, Result};
use crate::geometry::{assign_clusters, PseudoCluster};
use crate::pool::FeaturePool;
use crate::util::derive_seed;

/// Every user-facing hyperparameter of a BiLAF run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub budget: usize,
    pub core_count: usize,
    pub knn_k: usize,
    pub removal_ratio: f64,
    pub include_fraction: f64,
    pub opponent_delta: f64,
    pub denoise: DenoiseStrategy,
    pub criterion: Criterion,
    pub process: Process,
    pub opponent_penalty: bool,
    pub recompute_intra: bool,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            budget: 100,
            core_count: 20,
            knn_k: 10,
            removal_ratio: 0.10,
            include_fraction: 0.10,
            opponent_delta: 1.1,
            denoise: DenoiseStrategy::Idc,
            criterion: Criterion::BoundaryScore,
            process: Process::IterativeRemoval,
            opponent_penalty: true,
            recompute_intra: false,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}; use on or off"))),
    }
}

impl SelectionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.core_count > self.budget {
            return Err(Error::InfeasibleBudget(format!(
                "core count {} exceeds budget {}; use a smaller core count",
                self.core_count, self.budget
            )));
        }
        if self.budget > n {
            return Err(Error::InfeasibleBudget(format!(
                "budget {} exceeds pool size {n}",
                self.budget
            )));
        }
        self.denoise_config().validate()?;
        self.boundary_config().validate()?;
        self.optimizer_config().validate()
    }

    pub fn denoise_config(&self) -> DenoiseConfig {
        DenoiseConfig {
            strategy: self.denoise,
            removal_ratio: self.removal_ratio,
            include_fraction: self.include_fraction,
            k_neighbors: self.knn_k,
        }
    }

    pub fn boundary_config(&self) -> BoundaryConfig {
        BoundaryConfig {
            opponent_delta: self.opponent_delta,
            criterion: self.criterion,
            process: self.process,
            use_opponent_penalty: self.opponent_penalty,
            recompute_intra: self.recompute_intra,
            record_trace: false,
        }
    }

    /// Optimizer settings with the stage seed split from the root seed.
    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: derive_seed(self.seed, "cores"),
            ..self.optimizer.clone()
        }
    }

    /// Applies one `key = value` setting. Keys are the long CLI flag names
    /// without the leading dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        match key {
            "budget" => self.budget = parse(key, value)?,
            "cores" => self.core_count = parse(key, value)?,
            "knn-k" => self.knn_k = parse(key, value)?,
            "removal-ratio" => self.removal_ratio = parse(key, value)?,
            "include-fraction" => self.include_fraction = parse(key, value)?,
            "delta" => self.opponent_delta = parse(key, value)?,
            "denoise" => self.denoise = value.parse()?,
            "criterion" => self.criterion = value.parse()?,
            "process" => self.process = value.parse()?,
            "opponent-penalty" => self.opponent_penalty = parse_switch(key, value)?,
            "recompute-intra" => self.recompute_intra = parse_switch(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lr" => self.optimizer.learning_rate = parse(key, value)?,
            "max-iters" => self.optimizer.max_iters = parse(key, value)?,
            "rel-tol" => self.optimizer.rel_tol = parse(key, value)?,
            "tau" => self.optimizer.tau = parse(key, value)?,
            "lambda" => self.optimizer.lambda_weight = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Applies a plain-text config: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!(
                "config line {}: expected key = value",
                i + 1
            )))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Round-trips through [`SelectionConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let o = &self.optimizer;
        let on = |b: bool| if b { "on" } else { "off" };
        let _ = writeln!(out, "budget = {}", self.budget);
        let _ = writeln!(out, "cores = {}", self.core_count);
        let _ = writeln!(out, "knn-k = {}", self.knn_k);
        let _ = writeln!(out, "removal-ratio = {}", self.removal_ratio);
        let _ = writeln!(out, "include-fraction = {}", self.include_fraction);
        let _ = writeln!(out, "delta = {}", self.opponent_delta);
        let _ = writeln!(out, "denoise = {}", self.denoise.short_name());
        let _ = writeln!(out, "criterion = {}", self.criterion.short_name());
        let _ = writeln!(out, "process = {}", self.process.short_name());
        let _ = writeln!(out, "opponent-penalty = {}", on(self.opponent_penalty));
        let _ = writeln!(out, "recompute-intra = {}", on(self.recompute_intra));
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "lr = {}", o.learning_rate);
        let _ = writeln!(out, "max-iters = {}", o.max_iters);
        let _ = writeln!(out, "rel-tol = {}", o.rel_tol);
        let _ = writeln!(out, "tau = {}", o.tau);
        let _ = writeln!(out, "lambda = {}", o.lambda_weight);
        out
    }
}

/// Everything a BiLAF run produced along the way.
#[derive(Debug, Clone)]
pub struct BilafRun {
    pub cores: CoreSet,
    pub clusters: Vec<PseudoCluster>,
    pub denoise_reports: Vec<DenoiseReport>,
    pub result: SelectionResult,
}

/// Core selection, clustering, denoising, budgeting and boundary selection.
pub fn run_bilaf(pool: &FeaturePool, config: &SelectionConfig) -> Result<SelectionResult> {
    Ok(run_bilaf_detailed(pool, config, false)?.result)
}

pub fn run_bilaf_detailed(pool: &FeaturePool, config: &SelectionConfig, record_trace: bool) -> Result<BilafRun> {
    config.validate(pool.n())?;
    let cores = select_cores(pool, config.core_count, &config.optimizer_config())?;
    run_from_cores(pool, config, cores, record_trace)
}

/// Stage 2 only, from a given core set.
pub fn run_from_cores(
    pool: &FeaturePool,
    config: &SelectionConfig,
    cores: CoreSet,
    record_trace: bool,
) -> Result<BilafRun> {
    let clusters = assign_clusters(pool, &cores);
    let dcfg = config.denoise_config();
    let denoise_reports: Vec<DenoiseReport> = clusters
        .par_iter()
        .map(|c| denoise(pool, c, &dcfg))
        .collect::<Result<_>>()?;
    let denoised: Vec<PseudoCluster> = denoise_reports.iter().map(DenoiseReport::kept_cluster).collect();
    let sizes: Vec<usize> = denoised.iter().map(PseudoCluster::size).collect();
    let budgets = allocate_budgets(&sizes, config.budget)?;
    let bcfg = BoundaryConfig {
        record_trace,
        ..config.boundary_config()
    };
    let result = select_boundary(pool, &denoised, &cores, &budgets, &bcfg)?;
    if result.selected.len() != config.budget {
        return Err(Error::Invariant(format!(
            "selected {} samples for budget {}",
            result.selected.len(),
            config.budget
        )));
    }
    Ok(BilafRun {
        cores,
        clusters,
        denoise_reports,
        result,
    })
}
