//! Sampling datasets from the exposure generative model.
//!
//! Draw order for a seed: θ (U×K), β (I×K), the exposure parameters that are
//! random (per-item µ under the popularity process), then for every pair in
//! row-major order one uniform for the exposure and, when exposed, one
//! standard normal for the observation noise.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    seeded_rng, CovariateMatrix, FactorMatrix, Hyperparameters, IdMap, InteractionMatrix, ModelState,
};
use crate::em::ExpectedExposure;
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, RankedList};
use crate::exposure::{sigmoid, CovariatePrior, CovariateSettings, ExposurePrior, PerItemPrior};
use crate::ingest::SplitDataset;

#[derive(Debug, Clone, PartialEq)]
pub enum ExposureProcess {
    /// Every pair is exposed with probability `mu`.
    Constant { mu: f64 },
    /// µ_i ~ Beta(α₁, α₂) per item.
    Popularity { alpha1: f64, alpha2: f64 },
    /// µ_ui = σ(ψ_uᵀ x_i + γ_u).
    Covariate {
        psi: FactorMatrix,
        gamma: Vec<f64>,
        covariates: CovariateMatrix,
    },
}

impl ExposureProcess {
    /// Items split round-robin into `n_regions` regions with one-hot
    /// covariates; each user has one home region drawn uniformly. Home
    /// items are exposed with probability `home_mu`, the rest with `away_mu`.
    pub fn separated_regions(
        n_users: usize,
        n_items: usize,
        n_regions: usize,
        home_mu: f64,
        away_mu: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_regions == 0 || n_regions > n_items {
            return Err(Error::config("n_regions", "must lie in 1..=n_items"));
        }
        for (field, mu) in [("home_mu", home_mu), ("away_mu", away_mu)] {
            if !(mu > 0.0 && mu < 1.0) {
                return Err(Error::config(field, format!("must lie in (0, 1), got {mu}")));
            }
        }
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let mut x = vec![0.0; n_items * n_regions];
        for i in 0..n_items {
            x[i * n_regions + i % n_regions] = 1.0;
        }
        let mut psi = FactorMatrix::zeros(n_users, n_regions);
        for u in 0..n_users {
            let home = rng.random_range(0..n_regions);
            psi.row_mut(u)[home] = logit(home_mu) - logit(away_mu);
        }
        Ok(ExposureProcess::Covariate {
            psi,
            gamma: vec![logit(away_mu); n_users],
            covariates: CovariateMatrix::new(n_items, n_regions, x)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservationMode {
    /// Keep the real-valued draws y ~ N(θᵀβ, λ_y⁻¹) for exposed pairs.
    Gaussian,
    /// Emit 1 for exposed pairs whose noisy score clears a threshold chosen
    /// so that roughly `density`·U·I entries are ones.
    Binarized { density: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub k: usize,
    pub lambda_theta: f64,
    pub lambda_beta: f64,
    /// May be infinite for noiseless observations.
    pub lambda_y: f64,
    pub exposure: ExposureProcess,
    pub observation: ObservationMode,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.k == 0 {
            return Err(Error::config("shape", "U, I and K must be positive"));
        }
        for (field, v) in [("lambda_theta", self.lambda_theta), ("lambda_beta", self.lambda_beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.lambda_y > 0.0) {
            return Err(Error::config("lambda_y", format!("must be positive, got {}", self.lambda_y)));
        }
        match &self.exposure {
            ExposureProcess::Constant { mu } if !(0.0..=1.0).contains(mu) => {
                return Err(Error::config("mu", format!("must lie in [0, 1], got {mu}")))
            }
            ExposureProcess::Popularity { alpha1, alpha2 } if !(*alpha1 > 0.0 && *alpha2 > 0.0) => {
                return Err(Error::config("alpha", "Beta shapes must be positive"))
            }
            ExposureProcess::Covariate {
                psi,
                gamma,
                covariates,
            } => {
                if psi.rows() != self.n_users
                    || gamma.len() != self.n_users
                    || covariates.n_items() != self.n_items
                    || psi.k() != covariates.dim()
                {
                    return Err(Error::Dimension(
                        "covariate exposure parameters do not match U, I and L".into(),
                    ));
                }
            }
            _ => {}
        }
        if let ObservationMode::Binarized { density } = self.observation {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::config("density", format!("must lie in (0, 1], got {density}")));
            }
        }
        Ok(())
    }
}

/// True exposure parameters in a serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrueExposure {
    Constant {
        mu: f64,
    },
    PerItem {
        mu: Vec<f64>,
    },
    Covariate {
        dim: usize,
        psi: Vec<f64>,
        gamma: Vec<f64>,
        covariates: Vec<f64>,
    },
}

/// Everything drawn while sampling a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n_users: usize,
    pub n_items: usize,
    pub k: usize,
    pub lambda_theta: f64,
    pub lambda_beta: f64,
    pub lambda_y: f64,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub exposure: TrueExposure,
    /// Row-major flat indices u·I + i of exposed pairs, ascending.
    pub exposed: Vec<u64>,
    /// Binarization threshold, when one was applied and is finite.
    pub threshold: Option<f64>,
}

impl GroundTruth {
    pub fn theta_matrix(&self) -> FactorMatrix {
        FactorMatrix::from_vec(self.n_users, self.k, self.theta.clone()).expect("consistent truth")
    }

    pub fn beta_matrix(&self) -> FactorMatrix {
        FactorMatrix::from_vec(self.n_items, self.k, self.beta.clone()).expect("consistent truth")
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        let k = self.k;
        let t = &self.theta[user * k..(user + 1) * k];
        let b = &self.beta[item * k..(item + 1) * k];
        t.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn mu(&self, user: usize, item: usize) -> f64 {
        match &self.exposure {
            TrueExposure::Constant { mu } => *mu,
            TrueExposure::PerItem { mu } => mu[item],
            TrueExposure::Covariate {
                dim,
                psi,
                gamma,
                covariates,
            } => {
                let p = &psi[user * dim..(user + 1) * dim];
                let x = &covariates[item * dim..(item + 1) * dim];
                sigmoid(p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + gamma[user])
            }
        }
    }

    pub fn is_exposed(&self, user: usize, item: usize) -> bool {
        let flat = (user * self.n_items + item) as u64;
        self.exposed.binary_search(&flat).is_ok()
    }

    pub fn covariates(&self) -> Option<CovariateMatrix> {
        match &self.exposure {
            TrueExposure::Covariate { dim, covariates, .. } => {
                Some(CovariateMatrix::new(self.n_items, *dim, covariates.clone()).expect("stored rows are valid"))
            }
            _ => None,
        }
    }

    /// A model state holding the true parameters, for oracle comparisons.
    pub fn oracle_state(&self) -> ModelState {
        let hyper = Hyperparameters {
            k: self.k,
            lambda_theta: self.lambda_theta,
            lambda_beta: self.lambda_beta,
            lambda_y: if self.lambda_y.is_finite() { self.lambda_y } else { 1e12 },
            seed: self.seed,
            ..Hyperparameters::default()
        };
        let clamp = |m: f64| m.clamp(crate::exposure::MU_EPS, 1.0 - crate::exposure::MU_EPS);
        let exposure = match &self.exposure {
            TrueExposure::Constant { mu } => ExposurePrior::Fixed { mu: clamp(*mu) },
            TrueExposure::PerItem { mu } => ExposurePrior::PerItem(PerItemPrior {
                mu: mu.iter().map(|&m| clamp(m)).collect(),
                alpha1: hyper.alpha1,
                alpha2: hyper.alpha2,
            }),
            TrueExposure::Covariate { dim, psi, gamma, .. } => ExposurePrior::Covariate(CovariatePrior {
                psi: FactorMatrix::from_vec(self.n_users, *dim, psi.clone()).expect("consistent truth"),
                gamma: gamma.clone(),
                covariates: self.covariates().expect("covariate truth"),
                settings: CovariateSettings::default(),
            }),
        };
        ModelState {
            theta: self.theta_matrix(),
            beta: self.beta_matrix(),
            exposure,
            hyper,
            iteration: 0,
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub y: InteractionMatrix,
    pub truth: GroundTruth,
}

fn gaussian(rows: usize, k: usize, precision: f64, rng: &mut ChaCha8Rng) -> FactorMatrix {
    FactorMatrix::gaussian(rows, k, precision.sqrt().recip(), rng)
}

pub fn sample_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let (n_users, n_items) = (spec.n_users, spec.n_items);
    let mut rng = seeded_rng(spec.seed);
    let theta = gaussian(n_users, spec.k, spec.lambda_theta, &mut rng);
    let beta = gaussian(n_items, spec.k, spec.lambda_beta, &mut rng);

    let exposure = match &spec.exposure {
        ExposureProcess::Constant { mu } => TrueExposure::Constant { mu: *mu },
        ExposureProcess::Popularity { alpha1, alpha2 } => {
            let dist = Beta::new(*alpha1, *alpha2).map_err(|e| Error::config("alpha", e.to_string()))?;
            TrueExposure::PerItem {
                mu: (0..n_items).map(|_| dist.sample(&mut rng)).collect(),
            }
        }
        ExposureProcess::Covariate {
            psi,
            gamma,
            covariates,
        } => TrueExposure::Covariate {
            dim: covariates.dim(),
            psi: psi.as_slice().to_vec(),
            gamma: gamma.clone(),
            covariates: covariates.as_slice().to_vec(),
        },
    };

    let mut truth = GroundTruth {
        n_users,
        n_items,
        k: spec.k,
        lambda_theta: spec.lambda_theta,
        lambda_beta: spec.lambda_beta,
        lambda_y: spec.lambda_y,
        seed: spec.seed,
        theta: theta.as_slice().to_vec(),
        beta: beta.as_slice().to_vec(),
        exposure,
        exposed: Vec::new(),
        threshold: None,
    };

    let noise_sd = spec.lambda_y.sqrt().recip();
    let mut draws = Vec::new();
    for u in 0..n_users {
        for i in 0..n_items {
            let a = rng.random::<f64>() < truth.mu(u, i);
            if a {
                let eps: f64 = StandardNormal.sample(&mut rng);
                truth.exposed.push((u * n_items + i) as u64);
                draws.push((u, i, truth.score(u, i) + noise_sd * eps));
            }
        }
    }

    let entries: Vec<(usize, usize, f64)> = match spec.observation {
        // a draw of exactly zero is indistinguishable from no observation
        ObservationMode::Gaussian => draws.into_iter().filter(|e| e.2 != 0.0).collect(),
        ObservationMode::Binarized { density } => {
            let target = ((density * (n_users * n_items) as f64).round() as usize).min(draws.len());
            let mut sorted: Vec<f64> = draws.iter().map(|e| e.2).collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let tau = if target == 0 {
                f64::INFINITY
            } else if target == sorted.len() {
                f64::NEG_INFINITY
            } else {
                0.5 * (sorted[target - 1] + sorted[target])
            };
            truth.threshold = tau.is_finite().then_some(tau);
            draws
                .into_iter()
                .filter(|e| e.2 > tau)
                .map(|(u, i, _)| (u, i, 1.0))
                .collect()
        }
    };
    let y = InteractionMatrix::from_entries(
        IdMap::sequential("u", n_users),
        IdMap::sequential("i", n_items),
        entries,
    )?;
    Ok(SyntheticDataset { y, truth })
}

/// How well a fitted model recovers the generating process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    /// AUC of fitted p_ui against the true exposure on pairs with y = 0.
    /// Undefined in gaussian mode, where every exposed pair is observed.
    pub exposure_auc: Option<f64>,
    /// Pearson correlation of fitted and true µ; `None` when either is constant.
    pub mu_correlation: Option<f64>,
    pub heldout_ndcg: f64,
    /// Expected NDCG of a random ranking, estimated with seeded permutations.
    pub random_ndcg: f64,
}

impl RecoveryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Area under the ROC curve with average ranks for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += order[start..=end].iter().filter(|&&j| labels[j]).count() as f64 * avg_rank;
        start = end + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

const RANDOM_REPEATS: usize = 5;

/// Compare a fitted state to the truth that generated `data`.
///
/// Exposure AUC is taken over pairs absent from every split. The µ
/// correlation is item-level when both the fitted prior and the truth are
/// item-level, and over all pairs otherwise.
pub fn recovery_report(fitted: &ModelState, truth: &GroundTruth, data: &SplitDataset) -> Result<RecoveryReport> {
    let (n_users, n_items) = (truth.n_users, truth.n_items);
    if fitted.n_users() != n_users
        || fitted.n_items() != n_items
        || data.n_users() != n_users
        || data.n_items() != n_items
    {
        return Err(Error::Dimension(format!(
            "fitted {}x{}, data {}x{}, truth {n_users}x{n_items}",
            fitted.n_users(),
            fitted.n_items(),
            data.n_users(),
            data.n_items()
        )));
    }

    let view = ExpectedExposure::new(fitted, &data.train);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for u in 0..n_users {
        let row = view.user_row(u);
        for (i, &p) in row.iter().enumerate() {
            if data.train.contains(u, i) || data.validation.contains(u, i) || data.test.contains(u, i) {
                continue;
            }
            scores.push(p);
            labels.push(truth.is_exposed(u, i));
        }
    }
    let exposure_auc = auc(&scores, &labels);

    let item_level_truth = !matches!(truth.exposure, TrueExposure::Covariate { .. });
    let mu_correlation = match (&fitted.exposure, item_level_truth) {
        (ExposurePrior::Fixed { .. } | ExposurePrior::Confidence { .. }, _) => None,
        (ExposurePrior::PerItem(p), true) => {
            let true_mu: Vec<f64> = (0..n_items).map(|i| truth.mu(0, i)).collect();
            pearson(&p.mu, &true_mu)
        }
        (prior, _) => {
            let fitted_mu: Vec<f64> = (0..n_users * n_items)
                .map(|f| prior.mu(f / n_items, f % n_items))
                .collect();
            let true_mu: Vec<f64> = (0..n_users * n_items)
                .map(|f| truth.mu(f / n_items, f % n_items))
                .collect();
            pearson(&fitted_mu, &true_mu)
        }
    };

    let cfg = EvalConfig {
        recall_ks: vec![],
        ..EvalConfig::default()
    };
    let heldout_ndcg = eval::evaluate(fitted, data, &cfg)?.ndcg;
    let random_ndcg = random_ranking_ndcg(data, cfg.ndcg_k, truth.seed);
    Ok(RecoveryReport {
        exposure_auc,
        mu_correlation,
        heldout_ndcg,
        random_ndcg,
    })
}

/// Mean test NDCG@k of uniformly random rankings, averaged over a few seeded draws.
pub fn random_ranking_ndcg(data: &SplitDataset, k: usize, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed ^ 0x5EED_0F_7A4D_0A11);
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..RANDOM_REPEATS {
        for u in 0..data.n_users() {
            let test = data.test.user_items(u);
            if test.is_empty() {
                continue;
            }
            let mut excluded = vec![false; data.n_items()];
            for &i in data.train.user_items(u).iter().chain(data.validation.user_items(u)) {
                excluded[i] = true;
            }
            let scores: Vec<f64> = (0..data.n_items()).map(|_| rng.random()).collect();
            let ranked = RankedList::from_scores(u, &scores, &excluded);
            if let Some(v) = eval::ndcg_at_k(&ranked, test, k) {
                total += v;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Write `user_id<TAB>item_id<TAB>value` lines in index order.
pub fn write_tsv(y: &InteractionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (u, i, v) in y.iter() {
        out.push_str(&format!(
            "{}\t{}\t{v}\n",
            y.user_ids().id(u).unwrap_or_default(),
            y.item_ids().id(i).unwrap_or_default()
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
