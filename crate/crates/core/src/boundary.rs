//! Stage 2, step 3: boundary sample selection.
//!
//! Each pseudo-cluster gets a budget proportional to its denoised size. Its
//! first pick is the center; each later pick is the live candidate with the
//! lowest boundary score
//!
//! ```text
//! s_l = (delta^t_l * D(f, c_l) - d_intra) / max(D(f, c_l), d_intra)
//! score = min over opponent centers l of s_l
//! ```
//!
//! after which the pick and its nearest live neighbors are retired and the
//! counter `t_l` of the realized opponent is bumped.

use serde::{Deserialize, Serialize};

use crate::activeft::CoreSet;
use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, PseudoCluster};
use crate::pool::FeaturePool;
use crate::util::euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    BoundaryScore,
    BasicDistance,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bs" | "boundary_score" => Ok(Criterion::BoundaryScore),
            "bd" | "basic_distance" => Ok(Criterion::BasicDistance),
            other => Err(Error::Config(format!("unknown criterion {other:?}"))),
        }
    }
}

impl Criterion {
    pub fn short_name(self) -> &'static str {
        match self {
            Criterion::BoundaryScore => "bs",
            Criterion::BasicDistance => "bd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    IterativeRemoval,
    OneShot,
}

impl std::str::FromStr for Process {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isr" | "iterative_removal" => Ok(Process::IterativeRemoval),
            "os" | "one_shot" => Ok(Process::OneShot),
            other => Err(Error::Config(format!("unknown selection process {other:?}"))),
        }
    }
}

impl Process {
    pub fn short_name(self) -> &'static str {
        match self {
            Process::IterativeRemoval => "isr",
            Process::OneShot => "os",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub opponent_delta: f64,
    pub criterion: Criterion,
    pub process: Process,
    pub use_opponent_penalty: bool,
    /// Recompute the intra-class distance over the live candidates each round
    /// instead of freezing it at the denoised member set.
    pub recompute_intra: bool,
    /// Log the live candidate set and penalties at every pick.
    pub record_trace: bool,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            opponent_delta: 1.1,
            criterion: Criterion::BoundaryScore,
            process: Process::IterativeRemoval,
            use_opponent_penalty: true,
            recompute_intra: false,
            record_trace: false,
        }
    }
}

impl BoundaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.opponent_delta >= 1.0) {
            return Err(Error::Config("opponent delta must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Core,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickRecord {
    pub index: usize,
    pub pseudo_class: usize,
    pub stage: Stage,
    pub boundary_score_at_pick: Option<f64>,
    pub opponent_class: Option<usize>,
}

/// State at one boundary pick, enough to replay the argmin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickTrace {
    /// Position of the pick in `SelectionResult::selected`.
    pub pick: usize,
    pub pseudo_class: usize,
    /// Live candidates before the pick, ascending pool index.
    pub live: Vec<usize>,
    /// Set the intra-class distance was measured against.
    pub intra_reference: Vec<usize>,
    /// Opponent counters in effect for the pick.
    pub penalties: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<PickRecord>,
    pub per_cluster_budget: Vec<usize>,
    /// Picks actually made per cluster (differs from the budget only after a
    /// shortfall was reassigned).
    pub per_cluster_picks: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<PickTrace>,
}

impl SelectionResult {
    pub fn indices(&self) -> Vec<usize> {
        self.selected.iter().map(|r| r.index).collect()
    }

    /// One index per line.
    pub fn index_list(&self) -> String {
        self.selected.iter().map(|r| format!("{}\n", r.index)).collect()
    }
}

/// Splits `total` across clusters in proportion to their sizes.
///
/// Floors first, then the leftover by largest remainder (ties to the lower
/// cluster). Every nonempty cluster gets at least one pick and no cluster gets
/// more picks than members.
pub fn allocate_budgets(sizes: &[usize], total: usize) -> Result<Vec<usize>> {
    let k = sizes.len();
    if total < k {
        return Err(Error::InfeasibleBudget(format!(
            "budget {total} is smaller than the {k} pseudo-classes; use fewer cores"
        )));
    }
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return Err(Error::InfeasibleBudget("all clusters are empty".into()));
    }
    if sum < total {
        return Err(Error::PoolExhausted {
            selected: sum,
            budget: total,
        });
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| total * s / sum).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| ((total * sizes[b]) % sum).cmp(&((total * sizes[a]) % sum)).then(a.cmp(&b)));
    let leftover = total - alloc.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        alloc[i] += 1;
    }

    // at least one pick per nonempty cluster
    for i in 0..k {
        if sizes[i] > 0 && alloc[i] == 0 {
            let donor = (0..k)
                .filter(|&j| alloc[j] >= 2)
                .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
                .ok_or_else(|| Error::Invariant("no cluster can donate a pick".into()))?;
            alloc[donor] -= 1;
            alloc[i] = 1;
        }
    }

    // cap at cluster size, moving excess to the largest clusters with headroom
    let mut by_size: Vec<usize> = (0..k).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut excess = 0;
    for i in 0..k {
        if alloc[i] > sizes[i] {
            excess += alloc[i] - sizes[i];
            alloc[i] = sizes[i];
        }
    }
    while excess > 0 {
        let mut moved = false;
        for &i in &by_size {
            if excess > 0 && alloc[i] < sizes[i] {
                alloc[i] += 1;
                excess -= 1;
                moved = true;
            }
        }
        if !moved {
            return Err(Error::Invariant("budget exceeds total cluster capacity".into()));
        }
    }
    Ok(alloc)
}

/// Score of one opponent given the intra distance, the unpenalized distance
/// to the opponent center, and the penalty factor.
#[inline]
fn opponent_score(criterion: Criterion, d_intra: f64, d_opp: f64, factor: f64) -> f64 {
    match criterion {
        Criterion::BasicDistance => factor * d_opp,
        Criterion::BoundaryScore => {
            let denom = d_opp.max(d_intra);
            if denom == 0.0 {
                0.0
            } else {
                (factor * d_opp - d_intra) / denom
            }
        }
    }
}

/// Minimum over opponents `l != own` of the calibrated score, with the
/// realizing opponent (ties to the lower position).
fn calibrated_score(
    d_intra: f64,
    opp_dist: impl Fn(usize) -> f64,
    k: usize,
    own: usize,
    penalties: &[u32],
    cfg: &BoundaryConfig,
) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for l in (0..k).filter(|&l| l != own) {
        let factor = if cfg.use_opponent_penalty {
            cfg.opponent_delta.powi(penalties[l] as i32)
        } else {
            1.0
        };
        let s = opponent_score(cfg.criterion, d_intra, opp_dist(l), factor);
        if s < best.0 || best.1 == usize::MAX {
            best = (s, l);
        }
    }
    best
}

/// Boundary score of `sample` inside the cluster whose members are `cluster`
/// and whose center sits at position `own` of `centers`.
///
/// The intra-class distance is the mean distance to the other members.
pub fn boundary_score(
    pool: &FeaturePool,
    cluster: &[usize],
    sample: usize,
    centers: &CoreSet,
    own: usize,
    penalties: &[u32],
    cfg: &BoundaryConfig,
) -> Result<(f64, usize)> {
    if !cluster.contains(&sample) {
        return Err(Error::Config(format!("sample {sample} is not in the cluster")));
    }
    let k = centers.k();
    if k < 2 {
        return Err(Error::Config("boundary scores need at least two centers".into()));
    }
    if penalties.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} penalty counters for {k} centers",
            penalties.len()
        )));
    }
    let f = pool.row(sample);
    let d_intra = if cluster.len() < 2 {
        log::warn!("singleton cluster: intra-class distance taken as 0");
        0.0
    } else {
        let sum: f64 = cluster
            .iter()
            .filter(|&&m| m != sample)
            .map(|&m| euclidean(f, pool.row(m)))
            .sum();
        sum / (cluster.len() - 1) as f64
    };
    let opp = |l: usize| euclidean(f, pool.row(centers.center_indices[l]));
    Ok(calibrated_score(d_intra, opp, k, own, penalties, cfg))
}

struct ClusterRun<'a> {
    pos: usize,
    members: &'a [usize],
    center_pos: usize,
    dmat: Vec<f64>,
    frozen_intra: Vec<f64>,
    opp: Vec<f64>,
    alive: Vec<bool>,
    penalties: Vec<u32>,
    removal: usize,
    picks: usize,
}

impl<'a> ClusterRun<'a> {
    fn new(
        pool: &FeaturePool,
        pos: usize,
        cluster: &'a PseudoCluster,
        cores: &CoreSet,
        budget: usize,
        cfg: &BoundaryConfig,
    ) -> Result<Self> {
        let members = &cluster.member_indices[..];
        let m = members.len();
        let k = cores.k();
        let center_pos = members
            .iter()
            .position(|&x| x == cluster.center_index)
            .ok_or_else(|| Error::Invariant("center is missing from its denoised cluster".into()))?;
        let dmat = distance_matrix(pool, members);
        let frozen_intra = (0..m)
            .map(|p| {
                if m < 2 {
                    return 0.0;
                }
                let sum: f64 = (0..m).filter(|&q| q != p).map(|q| dmat[p * m + q]).sum();
                sum / (m - 1) as f64
            })
            .collect();
        let mut opp = vec![0.0; m * k];
        for p in 0..m {
            let f = pool.row(members[p]);
            for l in 0..k {
                opp[p * k + l] = euclidean(f, pool.row(cores.center_indices[l]));
            }
        }
        let removal = match cfg.process {
            Process::IterativeRemoval if budget > 0 => (m / budget).max(1),
            _ => 1,
        };
        Ok(ClusterRun {
            pos,
            members,
            center_pos,
            dmat,
            frozen_intra,
            opp,
            alive: vec![true; m],
            penalties: vec![0; k],
            removal,
            picks: 0,
        })
    }

    fn live_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    fn intra(&self, p: usize, cfg: &BoundaryConfig) -> f64 {
        if !cfg.recompute_intra {
            return self.frozen_intra[p];
        }
        let m = self.members.len();
        let others: Vec<usize> = (0..m).filter(|&q| q != p && self.alive[q]).collect();
        if others.is_empty() {
            return 0.0;
        }
        others.iter().map(|&q| self.dmat[p * m + q]).sum::<f64>() / others.len() as f64
    }

    fn pick_next(&mut self, cfg: &BoundaryConfig, k: usize, trace: Option<&mut Vec<PickTrace>>, pick_no: usize) -> Option<PickRecord> {
        let m = self.members.len();
        let live: Vec<usize> = (0..m).filter(|&p| self.alive[p]).collect();
        if live.is_empty() {
            return None;
        }
        let (chosen, record) = if self.picks == 0 && self.alive[self.center_pos] {
            let p = self.center_pos;
            (
                p,
                PickRecord {
                    index: self.members[p],
                    pseudo_class: self.pos,
                    stage: Stage::Core,
                    boundary_score_at_pick: None,
                    opponent_class: None,
                },
            )
        } else {
            if let Some(trace) = trace {
                let intra_reference = if cfg.recompute_intra {
                    live.iter().map(|&p| self.members[p]).collect()
                } else {
                    self.members.to_vec()
                };
                trace.push(PickTrace {
                    pick: pick_no,
                    pseudo_class: self.pos,
                    live: live.iter().map(|&p| self.members[p]).collect(),
                    intra_reference,
                    penalties: self.penalties.clone(),
                });
            }
            let mut best: Option<(usize, f64, usize)> = None;
            for &p in &live {
                let d_intra = self.intra(p, cfg);
                let (s, l) = calibrated_score(d_intra, |l| self.opp[p * k + l], k, self.pos, &self.penalties, cfg);
                if best.is_none_or(|(_, bs, _)| s < bs) {
                    best = Some((p, s, l));
                }
            }
            let (p, s, l) = best.expect("live is nonempty");
            if cfg.process == Process::IterativeRemoval {
                self.penalties[l] += 1;
            }
            (
                p,
                PickRecord {
                    index: self.members[p],
                    pseudo_class: self.pos,
                    stage: Stage::Boundary,
                    boundary_score_at_pick: Some(s),
                    opponent_class: Some(l),
                },
            )
        };

        // retire the pick and its nearest live neighbors
        self.alive[chosen] = false;
        let mut near: Vec<(usize, f64)> = live
            .iter()
            .filter(|&&p| p != chosen)
            .map(|&p| (p, self.dmat[chosen * m + p]))
            .collect();
        crate::geometry::sort_by_distance(&mut near);
        for &(p, _) in near.iter().take(self.removal.saturating_sub(1)) {
            self.alive[p] = false;
        }
        self.picks += 1;
        Some(record)
    }
}

/// Runs per-cluster selection over denoised clusters.
pub fn select_boundary(
    pool: &FeaturePool,
    clusters: &[PseudoCluster],
    cores: &CoreSet,
    budgets: &[usize],
    cfg: &BoundaryConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let k = cores.k();
    if clusters.len() != k || budgets.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} clusters and {} budgets for {k} centers",
            clusters.len(),
            budgets.len()
        )));
    }
    if k < 2 && budgets.iter().any(|&b| b > 1) {
        return Err(Error::Config("boundary picks need at least two centers".into()));
    }
    let total: usize = budgets.iter().sum();

    let mut runs = Vec::with_capacity(k);
    for (pos, cluster) in clusters.iter().enumerate() {
        if cluster.member_indices.is_empty() {
            runs.push(None);
        } else {
            runs.push(Some(ClusterRun::new(pool, pos, cluster, cores, budgets[pos], cfg)?));
        }
    }

    let mut selected = Vec::with_capacity(total);
    let mut trace = Vec::new();
    let mut shortfall = 0;
    for (pos, run) in runs.iter_mut().enumerate() {
        let Some(run) = run else {
            shortfall += budgets[pos];
            continue;
        };
        for _ in 0..budgets[pos] {
            let sink = cfg.record_trace.then_some(&mut trace);
            match run.pick_next(cfg, k, sink, selected.len()) {
                Some(r) => selected.push(r),
                None => {
                    shortfall += 1;
                }
            }
        }
    }

    while shortfall > 0 {
        let mut open: Vec<(usize, usize)> = runs
            .iter()
            .enumerate()
            .filter_map(|(p, r)| r.as_ref().map(|r| (p, r.live_count())))
            .filter(|&(_, live)| live > 0)
            .collect();
        if open.is_empty() {
            return Err(Error::PoolExhausted {
                selected: selected.len(),
                budget: total,
            });
        }
        open.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for (p, _) in open {
            if shortfall == 0 {
                break;
            }
            let run = runs[p].as_mut().expect("open run");
            let sink = cfg.record_trace.then_some(&mut trace);
            if let Some(r) = run.pick_next(cfg, k, sink, selected.len()) {
                log::warn!("pseudo-class {p} takes a reassigned pick");
                selected.push(r);
                shortfall -= 1;
            }
        }
    }

    let per_cluster_picks = runs.iter().map(|r| r.as_ref().map_or(0, |r| r.picks)).collect();
    let result = SelectionResult {
        selected,
        per_cluster_budget: budgets.to_vec(),
        per_cluster_picks,
        trace,
    };
    check_distinct(&result)?;
    Ok(result)
}

fn check_distinct(result: &SelectionResult) -> Result<()> {
    let mut idx = result.indices();
    idx.sort_unstable();
    if idx.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Invariant("a sample was selected twice".into()));
    }
    Ok(())
}
