//! Ranking construction and top-k metrics.
//!
//! Items are ranked by predicted score with ties broken by ascending item
//! index. Recall@k, NDCG@k and MAP@k are computed per user over the users
//! that have held-out items and then averaged; MPR is pooled over every
//! held-out entry.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{InteractionMatrix, ModelState};
use crate::em::predict_score;
use crate::error::{Error, Result};
use crate::exposure::ExposurePrior;
use crate::ingest::SplitDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionRule {
    /// θ_uᵀβ_i
    Dot,
    /// µ_ui · θ_uᵀβ_i
    ExposureWeighted,
}

impl PredictionRule {
    /// Dot product for everything except covariate priors.
    pub fn default_for(prior: &ExposurePrior) -> Self {
        match prior {
            ExposurePrior::Covariate(_) => PredictionRule::ExposureWeighted,
            _ => PredictionRule::Dot,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PredictionRule::Dot => "dot",
            PredictionRule::ExposureWeighted => "exposure_weighted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dot" => Some(PredictionRule::Dot),
            "exposure_weighted" | "exposure-weighted" => Some(PredictionRule::ExposureWeighted),
            _ => None,
        }
    }
}

/// One user's items in descending score order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// Rank `scores` (indexed by item), skipping items flagged in `excluded`.
    pub fn from_scores(user: usize, scores: &[f64], excluded: &[bool]) -> Self {
        let mut items: Vec<usize> = (0..scores.len()).filter(|&i| !excluded[i]).collect();
        // adding 0.0 maps -0.0 to +0.0 so signed zeros tie
        items.sort_by(|&a, &b| (scores[b] + 0.0).total_cmp(&(scores[a] + 0.0)).then(a.cmp(&b)));
        let scores = items.iter().map(|&i| scores[i]).collect();
        Self {
            user,
            items,
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn relevance(&self, test: &[usize]) -> Vec<bool> {
        let test: HashSet<usize> = test.iter().copied().collect();
        self.items.iter().map(|i| test.contains(i)).collect()
    }
}

pub fn rank_items(
    state: &ModelState,
    user: usize,
    exclude: &[usize],
    rule: PredictionRule,
) -> Result<RankedList> {
    if user >= state.n_users() {
        return Err(Error::Index(format!(
            "user {user} outside {} users",
            state.n_users()
        )));
    }
    let n_items = state.n_items();
    let mut excluded = vec![false; n_items];
    for &i in exclude {
        if i >= n_items {
            return Err(Error::Index(format!("item {i} outside {n_items} items")));
        }
        excluded[i] = true;
    }
    let scores: Vec<f64> = (0..n_items)
        .map(|i| predict_score(state, user, i, rule))
        .collect();
    Ok(RankedList::from_scores(user, &scores, &excluded))
}

/// Σ_{i ∈ test} 1{rank(i) ≤ k} / min(k, |test|). `None` for an empty test set.
pub fn recall_at_k(ranked: &RankedList, test: &[usize], k: usize) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let rel = ranked.relevance(test);
    Some(recall_from_relevance(&rel, test.len(), k))
}

fn recall_from_relevance(rel: &[bool], n_test: usize, k: usize) -> f64 {
    let hits = rel.iter().take(k).filter(|&&r| r).count();
    hits as f64 / k.min(n_test).max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    /// Σ_{n≤k} Precision@n / min(n, |test|), summing every cut-off whether
    /// or not position n holds a relevant item. Can exceed 1.
    Literal,
    /// Σ_{n≤k} Precision@n · rel_n / min(k, |test|).
    Standard,
}

/// Truncated average precision. Cut-offs beyond the end of the list are
/// not counted.
pub fn map_at_k(ranked: &RankedList, test: &[usize], k: usize, mode: MapMode) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let rel = ranked.relevance(test);
    Some(average_precision(&rel, test.len(), k, mode))
}

fn average_precision(rel: &[bool], n_test: usize, k: usize, mode: MapMode) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (idx, &r) in rel.iter().take(k).enumerate() {
        let n = idx + 1;
        if r {
            hits += 1;
        }
        let precision = hits as f64 / n as f64;
        match mode {
            MapMode::Literal => total += precision / n.min(n_test) as f64,
            MapMode::Standard if r => total += precision,
            MapMode::Standard => {}
        }
    }
    match mode {
        MapMode::Literal => total,
        MapMode::Standard => total / k.min(n_test).max(1) as f64,
    }
}

/// DCG@k / IDCG@k with binary relevance.
pub fn ndcg_at_k(ranked: &RankedList, test: &[usize], k: usize) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let rel = ranked.relevance(test);
    Some(ndcg_from_relevance(&rel, test.len(), k))
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

fn ndcg_from_relevance(rel: &[bool], n_test: usize, k: usize) -> f64 {
    let dcg: f64 = rel
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(idx, _)| discount(idx + 1))
        .fold(0.0, |a, b| a + b);
    let idcg: f64 = (1..=k.min(n_test)).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// (Σ perc, count) over the test items present in the list, perc in percent.
fn percentile_sum(rel: &[bool]) -> (f64, usize) {
    let len = rel.len();
    let mut total = 0.0;
    let mut count = 0;
    for (idx, _) in rel.iter().enumerate().filter(|(_, &r)| r) {
        total += if len > 1 {
            idx as f64 / (len - 1) as f64 * 100.0
        } else {
            0.0
        };
        count += 1;
    }
    (total, count)
}

/// Mean percentile rank pooled over every held-out entry, in percent.
pub fn mpr<'a, I>(lists: I) -> Option<f64>
where
    I: IntoIterator<Item = (&'a RankedList, &'a [usize])>,
{
    let (total, count) = lists
        .into_iter()
        .map(|(ranked, test)| percentile_sum(&ranked.relevance(test)))
        .fold((0.0, 0), |(t, c), (s, n)| (t + s, c + n));
    (count > 0).then(|| total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub recall_ks: Vec<usize>,
    pub ndcg_k: usize,
    pub map_k: usize,
    /// Defaults to the rule matching the model's exposure prior.
    pub rule: Option<PredictionRule>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            recall_ks: vec![20, 50],
            ndcg_k: 100,
            map_k: 100,
            rule: None,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.recall_ks.contains(&0) || self.ndcg_k == 0 || self.map_k == 0 {
            return Err(Error::config("ks", "cut-offs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user: usize,
    pub n_test: usize,
    pub recall: Vec<f64>,
    pub ndcg: f64,
    pub map_literal: f64,
    pub map_standard: f64,
    pub percentile_sum: f64,
    pub percentile_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub latent_dim: usize,
    pub rule: PredictionRule,
    pub recall_ks: Vec<usize>,
    pub ndcg_k: usize,
    pub map_k: usize,
    pub n_evaluated: usize,
    pub n_skipped: usize,
    pub recall: Vec<f64>,
    pub ndcg: f64,
    pub map_literal: f64,
    pub map_standard: f64,
    /// Percent, pooled over held-out entries.
    pub mpr: f64,
    pub users: Vec<UserMetrics>,
}

impl EvalReport {
    /// `key<TAB>value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "latent_dim\t{}", self.latent_dim);
        let _ = writeln!(out, "rule\t{}", self.rule.name());
        let _ = writeln!(out, "users_evaluated\t{}", self.n_evaluated);
        let _ = writeln!(out, "users_skipped\t{}", self.n_skipped);
        for (k, v) in self.recall_ks.iter().zip(&self.recall) {
            let _ = writeln!(out, "recall@{k}\t{v:.17e}");
        }
        let _ = writeln!(out, "ndcg@{}\t{:.17e}", self.ndcg_k, self.ndcg);
        let _ = writeln!(out, "map@{}_literal\t{:.17e}", self.map_k, self.map_literal);
        let _ = writeln!(out, "map@{}_standard\t{:.17e}", self.map_k, self.map_standard);
        let _ = writeln!(out, "mpr_percent\t{:.17e}", self.mpr);
        out
    }

    /// Per-user TSV table with a header row.
    pub fn users_table(&self) -> String {
        let mut out = String::from("user\tn_test");
        for k in &self.recall_ks {
            let _ = write!(out, "\trecall@{k}");
        }
        let _ = writeln!(
            out,
            "\tndcg@{0}\tmap@{1}_literal\tmap@{1}_standard\tpercentile_sum\tpercentile_count",
            self.ndcg_k, self.map_k
        );
        for u in &self.users {
            let _ = write!(out, "{}\t{}", u.user, u.n_test);
            for r in &u.recall {
                let _ = write!(out, "\t{r:.17e}");
            }
            let _ = writeln!(
                out,
                "\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{}",
                u.ndcg, u.map_literal, u.map_standard, u.percentile_sum, u.percentile_count
            );
        }
        out
    }

    /// Human-readable metric grid.
    pub fn grid(&self) -> String {
        let mut out = format!(
            "K = {}, rule = {}, users = {} ({} skipped)\n",
            self.latent_dim,
            self.rule.name(),
            self.n_evaluated,
            self.n_skipped
        );
        for (k, v) in self.recall_ks.iter().zip(&self.recall) {
            let _ = writeln!(out, "{:<20}{v:.4}", format!("Recall@{k}"));
        }
        let _ = writeln!(out, "{:<20}{:.4}", format!("NDCG@{}", self.ndcg_k), self.ndcg);
        let _ = writeln!(out, "{:<20}{:.4}", format!("MAP@{} (literal)", self.map_k), self.map_literal);
        let _ = writeln!(
            out,
            "{:<20}{:.4}",
            format!("MAP@{} (standard)", self.map_k),
            self.map_standard
        );
        let _ = writeln!(out, "{:<20}{:.2}%", "MPR", self.mpr);
        out
    }
}

fn user_metrics(
    state: &ModelState,
    user: usize,
    exclude: &[&InteractionMatrix],
    target: &InteractionMatrix,
    config: &EvalConfig,
    rule: PredictionRule,
) -> Option<UserMetrics> {
    let test = target.user_items(user);
    if test.is_empty() {
        return None;
    }
    let mut excluded = vec![false; state.n_items()];
    for m in exclude {
        for &i in m.user_items(user) {
            excluded[i] = true;
        }
    }
    let scores: Vec<f64> = (0..state.n_items())
        .map(|i| predict_score(state, user, i, rule))
        .collect();
    let ranked = RankedList::from_scores(user, &scores, &excluded);
    let rel = ranked.relevance(test);
    let (percentile_sum, percentile_count) = percentile_sum(&rel);
    Some(UserMetrics {
        user,
        n_test: test.len(),
        recall: config
            .recall_ks
            .iter()
            .map(|&k| recall_from_relevance(&rel, test.len(), k))
            .collect(),
        ndcg: ndcg_from_relevance(&rel, test.len(), config.ndcg_k),
        map_literal: average_precision(&rel, test.len(), config.map_k, MapMode::Literal),
        map_standard: average_precision(&rel, test.len(), config.map_k, MapMode::Standard),
        percentile_sum,
        percentile_count,
    })
}

/// Score `target` entries, excluding the items in `exclude` from each ranking.
pub fn evaluate_against(
    state: &ModelState,
    exclude: &[&InteractionMatrix],
    target: &InteractionMatrix,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    if target.n_users() != state.n_users() || target.n_items() != state.n_items() {
        return Err(Error::Dimension(format!(
            "model is {}x{}, evaluation data is {}x{}",
            state.n_users(),
            state.n_items(),
            target.n_users(),
            target.n_items()
        )));
    }
    let rule = config
        .rule
        .unwrap_or_else(|| PredictionRule::default_for(&state.exposure));
    let users: Vec<UserMetrics> = (0..state.n_users())
        .into_par_iter()
        .filter_map(|u| user_metrics(state, u, exclude, target, config, rule))
        .collect();
    if users.is_empty() {
        return Err(Error::EmptyDataset(
            "no user has held-out items to evaluate".into(),
        ));
    }
    let n = users.len() as f64;
    let mean = |f: &dyn Fn(&UserMetrics) -> f64| users.iter().map(f).sum::<f64>() / n;
    let recall = (0..config.recall_ks.len())
        .map(|j| mean(&|u| u.recall[j]))
        .collect();
    let (pct_sum, pct_count) = users
        .iter()
        .fold((0.0, 0usize), |(s, c), u| (s + u.percentile_sum, c + u.percentile_count));
    Ok(EvalReport {
        latent_dim: state.hyper.k,
        rule,
        recall_ks: config.recall_ks.clone(),
        ndcg_k: config.ndcg_k,
        map_k: config.map_k,
        n_evaluated: users.len(),
        n_skipped: state.n_users() - users.len(),
        recall,
        ndcg: mean(&|u| u.ndcg),
        map_literal: mean(&|u| u.map_literal),
        map_standard: mean(&|u| u.map_standard),
        mpr: if pct_count > 0 {
            pct_sum / pct_count as f64
        } else {
            0.0
        },
        users,
    })
}

/// Test-set metrics with training and validation items excluded.
pub fn evaluate(state: &ModelState, data: &SplitDataset, config: &EvalConfig) -> Result<EvalReport> {
    evaluate_against(state, &[&data.train, &data.validation], &data.test, config)
}

/// Mean validation NDCG@k with training items excluded.
pub fn validation_ndcg(
    state: &ModelState,
    data: &SplitDataset,
    k: usize,
    rule: PredictionRule,
) -> Result<f64> {
    let config = EvalConfig {
        recall_ks: vec![],
        ndcg_k: k,
        map_k: k,
        rule: Some(rule),
    };
    Ok(evaluate_against(state, &[&data.train], &data.validation, &config)?.ndcg)
}
