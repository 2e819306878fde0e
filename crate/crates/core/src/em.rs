//! Expectation-maximization for exposure MF.
//!
//! One iteration updates θ against a frozen β, then β against the new θ,
//! then the exposure prior. The expected exposures p_ui are never stored:
//! every row solve recomputes the ones it needs from the current factors.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{FactorMatrix, InteractionMatrix, ModelState};
use crate::error::{Error, Result};
use crate::eval::{self, PredictionRule};
use crate::exposure::{dot, ExposurePrior};
use crate::ingest::SplitDataset;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// log N(x | mean, precision⁻¹).
pub fn log_normal_pdf(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * d * d
}

/// Posterior probability of exposure for an unclicked pair with predicted
/// preference `score`, prior `mu` and observation precision `lambda_y`.
///
/// Evaluated as 1 / (1 + (1 − µ) / (µ·N(0 | score, λ_y⁻¹))) with the ratio
/// formed in log space.
pub fn e_step_score(score: f64, mu: f64, lambda_y: f64) -> f64 {
    let log_ratio = (-mu).ln_1p() - mu.ln() - log_normal_pdf(0.0, score, lambda_y);
    1.0 / (1.0 + log_ratio.exp())
}

pub fn e_step(theta_u: &[f64], beta_i: &[f64], mu: f64, lambda_y: f64) -> f64 {
    e_step_score(dot(theta_u, beta_i), mu, lambda_y)
}

/// Weight p_ui given to a user/item pair inside a factor solve.
pub trait ExposureWeights: Sync {
    fn weight(&self, user: usize, item: usize, observed: bool, score: f64) -> f64;
}

/// The EM weights: 1 for observed pairs, the E-step posterior otherwise.
/// Confidence priors fall back to their constant weights.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorExposure<'a> {
    pub prior: &'a ExposurePrior,
    pub lambda_y: f64,
}

impl ExposureWeights for PosteriorExposure<'_> {
    fn weight(&self, user: usize, item: usize, observed: bool, score: f64) -> f64 {
        match (self.prior, observed) {
            (ExposurePrior::Confidence { c1, .. }, true) => *c1,
            (ExposurePrior::Confidence { c0, .. }, false) => *c0,
            (_, true) => 1.0,
            (prior, false) => e_step_score(score, prior.mu(user, item), self.lambda_y),
        }
    }
}

/// Fixed weights independent of the factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantExposure {
    pub unobserved: f64,
    pub observed: f64,
}

impl ExposureWeights for ConstantExposure {
    fn weight(&self, _: usize, _: usize, observed: bool, _: f64) -> f64 {
        if observed {
            self.observed
        } else {
            self.unobserved
        }
    }
}

/// On-demand view of E[a_ui] under the current state.
pub struct ExpectedExposure<'a> {
    state: &'a ModelState,
    y: &'a InteractionMatrix,
}

impl<'a> ExpectedExposure<'a> {
    pub fn new(state: &'a ModelState, y: &'a InteractionMatrix) -> Self {
        Self { state, y }
    }

    fn weights(&self) -> PosteriorExposure<'a> {
        PosteriorExposure {
            prior: &self.state.exposure,
            lambda_y: self.state.hyper.lambda_y,
        }
    }

    pub fn p(&self, user: usize, item: usize) -> f64 {
        let score = dot(self.state.theta.row(user), self.state.beta.row(item));
        self.weights()
            .weight(user, item, self.y.contains(user, item), score)
    }

    /// p_u· over every item.
    pub fn user_row(&self, user: usize) -> Vec<f64> {
        let weights = self.weights();
        let theta = self.state.theta.row(user);
        let observed = self.y.user_items(user);
        let mut cursor = 0;
        (0..self.state.n_items())
            .map(|item| {
                let hit = cursor < observed.len() && observed[cursor] == item;
                if hit {
                    cursor += 1;
                }
                weights.weight(user, item, hit, dot(theta, self.state.beta.row(item)))
            })
            .collect()
    }

    /// Σ_u p_ui for every item.
    pub fn item_sums(&self) -> Vec<f64> {
        let weights = self.weights();
        (0..self.state.n_items())
            .into_par_iter()
            .map(|item| {
                let beta = self.state.beta.row(item);
                let observed = self.y.item_users(item);
                let mut cursor = 0;
                let mut total = 0.0;
                for user in 0..self.state.n_users() {
                    let hit = cursor < observed.len() && observed[cursor] == user;
                    if hit {
                        cursor += 1;
                    }
                    total += weights.weight(user, item, hit, dot(self.state.theta.row(user), beta));
                }
                total
            })
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Side {
    Users,
    Items,
}

/// Solve every row of one side against the frozen other side.
///
/// For row r: (λ_y Σ_c p_rc o_c o_cᵀ + reg·I)⁻¹ λ_y Σ_c p_rc y_rc o_c, where
/// the sums run over every column c (no sparsity shortcut applies because
/// p_rc varies per pair).
fn solve_side<W: ExposureWeights>(
    side: Side,
    current: &FactorMatrix,
    other: &FactorMatrix,
    y: &InteractionMatrix,
    reg: f64,
    lambda_y: f64,
    weights: &W,
) -> Result<FactorMatrix> {
    let k = current.k();
    let n_other = other.rows();
    let mut out = FactorMatrix::zeros(current.rows(), k);
    out.as_mut_slice()
        .par_chunks_mut(k)
        .enumerate()
        .try_for_each(|(row, dest)| {
            let (indices, values) = match side {
                Side::Users => (y.user_items(row), y.user_values(row)),
                Side::Items => (y.item_users(row), y.item_values(row)),
            };
            let this = current.row(row);
            let mut gram = vec![0.0; k * k];
            let mut rhs = vec![0.0; k];
            let mut cursor = 0;
            for col in 0..n_other {
                let o = other.row(col);
                let observed = cursor < indices.len() && indices[cursor] == col;
                let value = if observed {
                    cursor += 1;
                    values[cursor - 1]
                } else {
                    0.0
                };
                let score = dot(this, o);
                let p = match side {
                    Side::Users => weights.weight(row, col, observed, score),
                    Side::Items => weights.weight(col, row, observed, score),
                };
                if p == 0.0 {
                    continue;
                }
                for a in 0..k {
                    let wa = p * o[a];
                    let g = &mut gram[a * k..(a + 1) * k];
                    for b in a..k {
                        g[b] += wa * o[b];
                    }
                }
                if value != 0.0 {
                    let w = p * value;
                    for (r, oa) in rhs.iter_mut().zip(o) {
                        *r += w * oa;
                    }
                }
            }
            let label = match side {
                Side::Users => "user",
                Side::Items => "item",
            };
            let solution = solve_normal_equations(&gram, &rhs, k, lambda_y, reg)
                .ok_or_else(|| Error::Numerical(format!("{label} {row}: linear solve failed")))?;
            if solution.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "{label} {row}: non-finite factor after solve"
                )));
            }
            dest.copy_from_slice(&solution);
            Ok(())
        })?;
    Ok(out)
}

/// Cholesky solve of (λ_y·G + reg·I) x = λ_y·b where only the upper triangle
/// of G is filled. Retries once with 1e-10 diagonal jitter.
fn solve_normal_equations(
    gram_upper: &[f64],
    rhs: &[f64],
    k: usize,
    lambda_y: f64,
    reg: f64,
) -> Option<Vec<f64>> {
    let mut a = DMatrix::<f64>::zeros(k, k);
    for r in 0..k {
        for c in r..k {
            let v = lambda_y * gram_upper[r * k + c];
            a[(r, c)] = v;
            a[(c, r)] = v;
        }
        a[(r, r)] += reg;
    }
    let b = DVector::from_iterator(k, rhs.iter().map(|v| lambda_y * v));
    let chol = a.clone().cholesky().or_else(|| {
        let mut jittered = a;
        for r in 0..k {
            jittered[(r, r)] += 1e-10;
        }
        jittered.cholesky()
    })?;
    Some(chol.solve(&b).iter().copied().collect())
}

fn check_shapes(state: &ModelState, y: &InteractionMatrix) -> Result<()> {
    if state.n_users() != y.n_users() || state.n_items() != y.n_items() {
        return Err(Error::Dimension(format!(
            "model is {}x{}, data is {}x{}",
            state.n_users(),
            state.n_items(),
            y.n_users(),
            y.n_items()
        )));
    }
    Ok(())
}

/// θ update with caller-supplied weights.
pub fn update_user_factors_with<W: ExposureWeights>(
    state: &ModelState,
    y: &InteractionMatrix,
    weights: &W,
) -> Result<FactorMatrix> {
    check_shapes(state, y)?;
    solve_side(
        Side::Users,
        &state.theta,
        &state.beta,
        y,
        state.hyper.lambda_theta,
        state.hyper.lambda_y,
        weights,
    )
}

/// β update with caller-supplied weights.
pub fn update_item_factors_with<W: ExposureWeights>(
    state: &ModelState,
    y: &InteractionMatrix,
    weights: &W,
) -> Result<FactorMatrix> {
    check_shapes(state, y)?;
    solve_side(
        Side::Items,
        &state.beta,
        &state.theta,
        y,
        state.hyper.lambda_beta,
        state.hyper.lambda_y,
        weights,
    )
}

pub fn update_user_factors(state: &ModelState, y: &InteractionMatrix) -> Result<FactorMatrix> {
    let weights = PosteriorExposure {
        prior: &state.exposure,
        lambda_y: state.hyper.lambda_y,
    };
    update_user_factors_with(state, y, &weights)
}

pub fn update_item_factors(state: &ModelState, y: &InteractionMatrix) -> Result<FactorMatrix> {
    let weights = PosteriorExposure {
        prior: &state.exposure,
        lambda_y: state.hyper.lambda_y,
    };
    update_item_factors_with(state, y, &weights)
}

fn covariate_seed(seed: u64, iteration: u64) -> u64 {
    seed ^ (iteration.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Refit the exposure prior against the current factors.
pub fn update_exposure_prior(state: &mut ModelState, y: &InteractionMatrix) -> Result<()> {
    check_shapes(state, y)?;
    match &state.exposure {
        ExposurePrior::PerItem(_) => {
            let sums = ExpectedExposure::new(state, y).item_sums();
            let n_users = state.n_users();
            if let ExposurePrior::PerItem(prior) = &mut state.exposure {
                prior.update(&sums, n_users)?;
            }
        }
        ExposurePrior::Covariate(_) => {
            let seed = covariate_seed(state.hyper.seed, state.iteration);
            let snapshot = state.clone();
            let view = ExpectedExposure::new(&snapshot, y);
            if let ExposurePrior::Covariate(prior) = &mut state.exposure {
                prior.update(|u| view.user_row(u), seed);
                if prior.psi.as_slice().iter().chain(&prior.gamma).any(|v| !v.is_finite()) {
                    return Err(Error::Numerical("exposure coefficients diverged".into()));
                }
            }
        }
        ExposurePrior::Fixed { .. } | ExposurePrior::Confidence { .. } => {}
    }
    Ok(())
}

/// One full iteration: θ, then β with fresh exposures, then the prior.
pub fn em_step(state: &mut ModelState, y: &InteractionMatrix) -> Result<()> {
    state.theta = update_user_factors(state, y)?;
    state.beta = update_item_factors(state, y)?;
    update_exposure_prior(state, y)?;
    state.iteration += 1;
    Ok(())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log posterior with the exposures summed out.
///
/// Observed pairs contribute log µ + log N(y | θᵀβ, λ_y⁻¹); unobserved pairs
/// contribute log(µ·N(0 | θᵀβ, λ_y⁻¹) + 1 − µ). The Gaussian priors on θ
/// and β are added with their normalizers; for the per-item prior the Beta
/// log density of each µ_i is added up to its constant. Confidence-weighted
/// (WMF) states are scored with µ = 1 − ε. Cost is O(U·I·K).
pub fn marginal_log_posterior(state: &ModelState, y: &InteractionMatrix) -> Result<f64> {
    check_shapes(state, y)?;
    let lambda_y = state.hyper.lambda_y;
    let per_user: Vec<f64> = (0..state.n_users())
        .into_par_iter()
        .map(|u| {
            let theta = state.theta.row(u);
            let observed = y.user_items(u);
            let values = y.user_values(u);
            let mut cursor = 0;
            let mut total = 0.0;
            for i in 0..state.n_items() {
                let score = dot(theta, state.beta.row(i));
                let mu = state.exposure.mu(u, i);
                if cursor < observed.len() && observed[cursor] == i {
                    total += mu.ln() + log_normal_pdf(values[cursor], score, lambda_y);
                    cursor += 1;
                } else {
                    total += log_add_exp(
                        mu.ln() + log_normal_pdf(0.0, score, lambda_y),
                        (-mu).ln_1p(),
                    );
                }
            }
            total
        })
        .collect();
    let mut total: f64 = per_user.iter().sum();
    total += gaussian_log_prior(&state.theta, state.hyper.lambda_theta);
    total += gaussian_log_prior(&state.beta, state.hyper.lambda_beta);
    if let ExposurePrior::PerItem(prior) = &state.exposure {
        total += prior
            .mu
            .iter()
            .map(|&m| (prior.alpha1 - 1.0) * m.ln() + (prior.alpha2 - 1.0) * (-m).ln_1p())
            .sum::<f64>();
    }
    Ok(total)
}

fn gaussian_log_prior(factors: &FactorMatrix, precision: f64) -> f64 {
    let k = factors.k() as f64;
    let norm = 0.5 * k * (precision.ln() - LN_2PI);
    (0..factors.rows())
        .map(|r| {
            let v = factors.row(r);
            norm - 0.5 * precision * dot(v, v)
        })
        .sum()
}

/// Score used to rank item `item` for user `user`.
pub fn predict_score(state: &ModelState, user: usize, item: usize, rule: PredictionRule) -> f64 {
    let score = dot(state.theta.row(user), state.beta.row(item));
    match rule {
        PredictionRule::Dot => score,
        PredictionRule::ExposureWeighted => state.exposure.mu(user, item) * score,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    ValidationNdcg,
    MarginalLogPosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub stop_metric: StopMetric,
    pub patience: usize,
    pub ndcg_truncation: usize,
    /// Worker threads; 0 lets rayon decide. Never affects results.
    pub threads: usize,
    /// Also compute the marginal log posterior when stopping on NDCG.
    pub log_objective: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            stop_metric: StopMetric::ValidationNdcg,
            patience: 3,
            ndcg_truncation: 100,
            threads: 0,
            log_objective: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if self.ndcg_truncation == 0 {
            return Err(Error::config("ndcg_truncation", "must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal_log_posterior: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_ndcg: Option<f64>,
    pub seconds: f64,
}

impl IterationRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State with the best stopping metric seen (iteration 0 included).
    pub state: ModelState,
    pub best_iteration: u64,
    pub log: Vec<IterationRecord>,
}

pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))
}

/// Fit until the stopping metric stops improving.
///
/// The metric is evaluated on the initial state and after every iteration.
/// Training ends after `patience` consecutive iterations without a strict
/// improvement, or after `max_iters` iterations, and the best state is
/// returned.
pub fn train(state: ModelState, data: &SplitDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    state.validate()?;
    check_shapes(&state, &data.train)?;
    let pool = thread_pool(config.threads)?;
    pool.install(|| {
        let rule = PredictionRule::default_for(&state.exposure);
        let metric_of = |s: &ModelState| -> Result<(f64, IterationRecord)> {
            let mut record = IterationRecord {
                iteration: s.iteration,
                marginal_log_posterior: None,
                validation_ndcg: None,
                seconds: 0.0,
            };
            if config.stop_metric == StopMetric::MarginalLogPosterior || config.log_objective {
                record.marginal_log_posterior = Some(marginal_log_posterior(s, &data.train)?);
            }
            if config.stop_metric == StopMetric::ValidationNdcg {
                record.validation_ndcg = Some(eval::validation_ndcg(
                    s,
                    data,
                    config.ndcg_truncation,
                    rule,
                )?);
            }
            let value = match config.stop_metric {
                StopMetric::ValidationNdcg => record.validation_ndcg,
                StopMetric::MarginalLogPosterior => record.marginal_log_posterior,
            }
            .expect("stop metric computed");
            Ok((value, record))
        };
        fit_loop(
            state,
            config.max_iters,
            config.patience,
            |s| {
                em_step(s, &data.train).map_err(|e| match e {
                    Error::Numerical(m) => {
                        Error::Numerical(format!("iteration {}: {m}", s.iteration + 1))
                    }
                    other => other,
                })
            },
            metric_of,
        )
    })
}

/// The stopping loop, separated from EM so the contract can be tested with
/// scripted metrics.
pub(crate) fn fit_loop<S, M>(
    mut state: ModelState,
    max_iters: usize,
    patience: usize,
    mut step: S,
    mut metric: M,
) -> Result<TrainOutcome>
where
    S: FnMut(&mut ModelState) -> Result<()>,
    M: FnMut(&ModelState) -> Result<(f64, IterationRecord)>,
{
    let clock = Instant::now();
    let mut log = Vec::new();
    let (mut best_value, mut record) = metric(&state)?;
    record.seconds = clock.elapsed().as_secs_f64();
    log.push(record);
    let mut best = state.clone();
    let mut stale = 0;
    for _ in 0..max_iters {
        step(&mut state)?;
        let (value, mut record) = metric(&state)?;
        record.seconds = clock.elapsed().as_secs_f64();
        log.push(record);
        if value > best_value {
            best_value = value;
            best = state.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best_iteration: best.iteration,
        state: best,
        log,
    })
}
