//! Nearest-centroid proxy evaluation of a labelled selection, and
//! multi-trial comparison of selectors.
//!
//! The test set is always the pool minus the selection.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{select_baseline, BaselineConfig, BaselineMethod};
use crate::error::{Error, Result};
use crate::pipeline::{run_bilaf, SelectionConfig};
use crate::pool::FeaturePool;
use crate::util::{derive_seed, derive_seed_indexed, euclidean, mean_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1_accuracy: f64,
    /// Recall per true class; `None` for classes with no test samples.
    pub per_class_recall: Vec<Option<f64>>,
    pub class_coverage: f64,
    /// Mean gap between the second-nearest and nearest fitted centroid over
    /// test samples; 0 when fewer than two centroids were fitted.
    pub mean_boundary_margin: f64,
    pub test_size: usize,
    pub fitted_classes: usize,
}

/// One centroid per class present in the selection: the renormalized mean of
/// that class's selected features.
pub fn fit_centroids(pool: &FeaturePool, selected: &[usize]) -> Result<Vec<(u32, Vec<f32>)>> {
    let labels = pool.labels().ok_or(Error::MissingLabels)?;
    let dim = pool.dim();
    let mut classes: Vec<u32> = selected.iter().map(|&i| labels[i]).collect();
    classes.sort_unstable();
    classes.dedup();
    Ok(classes
        .into_iter()
        .map(|c| {
            let mut mean = vec![0.0f64; dim];
            let mut count = 0usize;
            for &i in selected.iter().filter(|&&i| labels[i] == c) {
                count += 1;
                mean.iter_mut().zip(pool.row(i)).for_each(|(m, &v)| *m += v as f64);
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > 0.0 { norm } else { 1.0 };
            (c, mean.iter().map(|v| (v / scale) as f32).collect())
        })
        .collect())
}

pub fn evaluate_selection(pool: &FeaturePool, selected: &[usize]) -> Result<EvalReport> {
    let labels = pool.labels().ok_or(Error::MissingLabels)?;
    if selected.is_empty() {
        return Err(Error::Config("cannot evaluate an empty selection".into()));
    }
    if let Some(&bad) = selected.iter().find(|&&i| i >= pool.n()) {
        return Err(Error::Config(format!("selected index {bad} is outside the pool")));
    }
    let centroids = fit_centroids(pool, selected)?;
    let num_classes = pool.num_classes().unwrap_or(0);
    let mut in_selection = vec![false; pool.n()];
    selected.iter().for_each(|&i| in_selection[i] = true);

    let mut correct = 0usize;
    let mut test_size = 0usize;
    let mut class_total = vec![0usize; num_classes];
    let mut class_hit = vec![0usize; num_classes];
    let mut margin_sum = 0.0;
    for i in (0..pool.n()).filter(|&i| !in_selection[i]) {
        test_size += 1;
        let f = pool.row(i);
        let mut first = (u32::MAX, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (c, centroid) in &centroids {
            let d = euclidean(f, centroid);
            if d < first.1 {
                second = first.1;
                first = (*c, d);
            } else if d < second {
                second = d;
            }
        }
        if centroids.len() >= 2 {
            margin_sum += second - first.1;
        }
        let truth = labels[i] as usize;
        class_total[truth] += 1;
        if first.0 == labels[i] {
            correct += 1;
            class_hit[truth] += 1;
        }
    }
    if test_size == 0 {
        return Err(Error::Config("selection covers the whole pool; nothing left to test".into()));
    }
    let present: usize = (0..num_classes)
        .filter(|&c| centroids.iter().any(|(l, _)| *l as usize == c))
        .count();
    let class_count_with_samples = {
        let mut seen = vec![false; num_classes];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        seen.iter().filter(|&&s| s).count()
    };
    Ok(EvalReport {
        top1_accuracy: correct as f64 / test_size as f64,
        per_class_recall: (0..num_classes)
            .map(|c| (class_total[c] > 0).then(|| class_hit[c] as f64 / class_total[c] as f64))
            .collect(),
        class_coverage: present as f64 / class_count_with_samples.max(1) as f64,
        mean_boundary_margin: if centroids.len() >= 2 {
            margin_sum / test_size as f64
        } else {
            0.0
        },
        test_size,
        fitted_classes: centroids.len(),
    })
}

/// A selector taking part in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MethodSpec {
    Bilaf(SelectionConfig),
    Baseline { method: BaselineMethod, budget: usize },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Bilaf(_) => "bilaf",
            MethodSpec::Baseline { method, .. } => method.name(),
        }
    }

    /// Runs the selector with the given seed. Labels are never consulted.
    pub fn select(&self, pool: &FeaturePool, seed: u64) -> Result<Vec<usize>> {
        match self {
            MethodSpec::Bilaf(cfg) => {
                let cfg = SelectionConfig {
                    seed,
                    ..cfg.clone()
                };
                Ok(run_bilaf(pool, &cfg)?.indices())
            }
            MethodSpec::Baseline { method, budget } => {
                let cfg = BaselineConfig::new(*method, *budget, derive_seed(seed, method.name()));
                select_baseline(pool, &cfg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub method: String,
    pub trial: usize,
    pub accuracy: f64,
    pub coverage: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub trials: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_coverage: f64,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<TrialRow>,
    pub summary: Vec<MethodSummary>,
}

/// Seed used for trial `t` of a comparison rooted at `root`.
pub fn trial_seed(root: u64, trial: usize) -> u64 {
    derive_seed_indexed(root, "trial", trial as u64)
}

/// Runs every method `trials` times. Trial `t` of every method shares one
/// derived seed.
pub fn compare_methods(pool: &FeaturePool, methods: &[MethodSpec], trials: usize, root_seed: u64) -> Result<Comparison> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let cells: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..trials).map(move |t| (m, t)))
        .collect();
    let rows: Vec<TrialRow> = cells
        .par_iter()
        .map(|&(m, t)| {
            let method = &methods[m];
            let selected = method.select(pool, trial_seed(root_seed, t))?;
            let report = evaluate_selection(pool, &selected)?;
            Ok(TrialRow {
                method: method.name().to_string(),
                trial: t,
                accuracy: report.top1_accuracy,
                coverage: report.class_coverage,
                margin: report.mean_boundary_margin,
            })
        })
        .collect::<Result<_>>()?;
    let summary = rows
        .chunks(trials)
        .map(|chunk| summarize(&chunk[0].method, chunk))
        .collect();
    Ok(Comparison { rows, summary })
}

pub fn summarize(method: &str, rows: &[TrialRow]) -> MethodSummary {
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let n = rows.len().max(1) as f64;
    MethodSummary {
        method: method.to_string(),
        trials: rows.len(),
        mean_accuracy,
        std_accuracy,
        mean_coverage: rows.iter().map(|r| r.coverage).sum::<f64>() / n,
        mean_margin: rows.iter().map(|r| r.margin).sum::<f64>() / n,
    }
}

impl Comparison {
    /// `method,trial,accuracy,coverage,margin`
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("method,trial,accuracy,coverage,margin\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.method, r.trial, r.accuracy, r.coverage, r.margin);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,trials,mean_accuracy,std_accuracy,mean_coverage,mean_margin\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.method, s.trials, s.mean_accuracy, s.std_accuracy, s.mean_coverage, s.mean_margin
            );
        }
        out
    }
}
