//! Exposure priors µ_ui and their M-step updates.
//!
//! Three priors are supported: one fixed global probability, a per-item
//! probability with a Beta prior, and a per-user logistic model over item
//! covariates, σ(ψ_uᵀx_i + γ_u). A fourth variant carries the constant
//! confidence weights of weighted matrix factorization so that WMF models
//! share the same state and checkpoint layout.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{seeded_rng, CovariateMatrix, FactorMatrix};
use crate::error::{Error, Result};

/// Lower / upper clamp for exposure probabilities.
pub const MU_EPS: f64 = 1e-8;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_mu(mu: f64) -> f64 {
    mu.clamp(MU_EPS, 1.0 - MU_EPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerItemPrior {
    pub mu: Vec<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Mode of Beta(α₁ + Σp, α₂ + U − Σp), clamped to [ε, 1 − ε].
pub fn per_item_mode(alpha1: f64, alpha2: f64, n_users: usize, sum_p: f64) -> f64 {
    let mode = (alpha1 + sum_p - 1.0) / (alpha1 + alpha2 + n_users as f64 - 2.0);
    clamp_mu(mode)
}

impl PerItemPrior {
    /// Replace every µ_i by the posterior mode given Σ_u p_ui.
    pub fn update(&mut self, item_sums: &[f64], n_users: usize) -> Result<()> {
        if item_sums.len() != self.mu.len() {
            return Err(Error::Dimension(format!(
                "{} exposure sums for {} items",
                item_sums.len(),
                self.mu.len()
            )));
        }
        if self.alpha1 + self.alpha2 + n_users as f64 <= 2.0 {
            return Err(Error::config(
                "alpha1",
                "alpha1 + alpha2 + n_users must exceed 2 for the Beta mode to exist",
            ));
        }
        let (a1, a2) = (self.alpha1, self.alpha2);
        self.mu
            .par_iter_mut()
            .zip(item_sums.par_iter())
            .for_each(|(mu, &s)| *mu = per_item_mode(a1, a2, n_users, s));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSettings {
    /// Constant ascent step η.
    pub step_size: f64,
    /// Items per stochastic gradient.
    pub batch_size: usize,
    /// Passes over each user's items per EM iteration.
    pub epochs_per_m_step: usize,
    /// Learn the per-user intercept γ_u.
    pub use_bias: bool,
}

impl Default for CovariateSettings {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            batch_size: 10,
            epochs_per_m_step: 10,
            use_bias: true,
        }
    }
}

impl CovariateSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config("step_size", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.epochs_per_m_step == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePrior {
    /// U × L coefficients.
    pub psi: FactorMatrix,
    /// Per-user intercepts.
    pub gamma: Vec<f64>,
    pub covariates: CovariateMatrix,
    pub settings: CovariateSettings,
}

impl CovariatePrior {
    pub fn logit(&self, user: usize, item: usize) -> f64 {
        dot(self.psi.row(user), self.covariates.row(item)) + self.gamma[user]
    }

    pub fn mu(&self, user: usize, item: usize) -> f64 {
        clamp_mu(sigmoid(self.logit(user, item)))
    }

    /// Averaged log-likelihood gradient over `items` for user `user`.
    ///
    /// The result has `L + 1` entries; the last is the intercept coordinate.
    pub fn gradient(&self, user: usize, items: &[usize], p: impl Fn(usize) -> f64) -> Vec<f64> {
        gradient_for(
            self.psi.row(user),
            self.gamma[user],
            &self.covariates,
            items,
            p,
        )
    }

    /// One partial M-step: `epochs_per_m_step` shuffled passes of
    /// mini-batch ascent for every user.
    ///
    /// `user_exposure(u)` must return p_u· over all items. Each user draws
    /// its shuffles from its own ChaCha stream of `seed`, so the result does
    /// not depend on how users are scheduled across threads.
    pub fn update<F>(&mut self, user_exposure: F, seed: u64)
    where
        F: Fn(usize) -> Vec<f64> + Sync,
    {
        let settings = self.settings.clone();
        let covariates = &self.covariates;
        let n_items = covariates.n_items();
        let dim = covariates.dim();
        self.psi
            .as_mut_slice()
            .par_chunks_mut(dim)
            .zip(self.gamma.par_iter_mut())
            .enumerate()
            .for_each(|(user, (psi, gamma))| {
                let p = user_exposure(user);
                let mut rng = seeded_rng(seed);
                rng.set_stream(user as u64);
                let mut order: Vec<usize> = (0..n_items).collect();
                for _ in 0..settings.epochs_per_m_step {
                    order.shuffle(&mut rng);
                    for batch in order.chunks(settings.batch_size) {
                        let g = gradient_for(psi, *gamma, covariates, batch, |i| p[i]);
                        for (w, gl) in psi.iter_mut().zip(&g) {
                            *w += settings.step_size * gl;
                        }
                        if settings.use_bias {
                            *gamma += settings.step_size * g[dim];
                        }
                    }
                }
            });
    }
}

fn gradient_for(
    psi: &[f64],
    gamma: f64,
    covariates: &CovariateMatrix,
    items: &[usize],
    p: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let dim = psi.len();
    let mut g = vec![0.0; dim + 1];
    if items.is_empty() {
        return g;
    }
    for &i in items {
        let x = covariates.row(i);
        let resid = p(i) - sigmoid(dot(psi, x) + gamma);
        for (gl, xl) in g.iter_mut().zip(x) {
            *gl += resid * xl;
        }
        g[dim] += resid;
    }
    let scale = 1.0 / items.len() as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    g
}

/// Prior probability of exposure for every user/item pair.
#[derive(Debug, Clone, PartialEq)]
pub enum ExposurePrior {
    Fixed { mu: f64 },
    PerItem(PerItemPrior),
    Covariate(CovariatePrior),
    /// WMF confidence weights: unclicked pairs weigh `c0`, clicked `c1`.
    Confidence { c0: f64, c1: f64 },
}

impl ExposurePrior {
    /// µ_ui without bounds checks. The confidence variant treats every item
    /// as exposed and reports 1 − ε.
    pub fn mu(&self, user: usize, item: usize) -> f64 {
        match self {
            ExposurePrior::Fixed { mu } => clamp_mu(*mu),
            ExposurePrior::PerItem(p) => p.mu[item],
            ExposurePrior::Covariate(c) => c.mu(user, item),
            ExposurePrior::Confidence { .. } => 1.0 - MU_EPS,
        }
    }

    /// µ_ui with range checks on the indices the prior actually stores.
    pub fn try_mu(&self, user: usize, item: usize) -> Result<f64> {
        match self {
            ExposurePrior::PerItem(p) if item >= p.mu.len() => Err(Error::Index(format!(
                "item {item} outside {} items",
                p.mu.len()
            ))),
            ExposurePrior::Covariate(c) if user >= c.psi.rows() => Err(Error::Index(format!(
                "user {user} outside {} users",
                c.psi.rows()
            ))),
            ExposurePrior::Covariate(c) if item >= c.covariates.n_items() => Err(Error::Index(
                format!("item {item} outside {} items", c.covariates.n_items()),
            )),
            _ => Ok(self.mu(user, item)),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            ExposurePrior::Fixed { .. } => "fixed",
            ExposurePrior::PerItem(_) => "per-item",
            ExposurePrior::Covariate(_) => "covariate",
            ExposurePrior::Confidence { .. } => "wmf",
        }
    }

    pub(crate) fn check_dims(&self, n_users: usize, n_items: usize) -> Result<()> {
        match self {
            ExposurePrior::Fixed { mu } if !(*mu > 0.0 && *mu < 1.0) => {
                Err(Error::Data(format!("fixed mu {mu} outside (0, 1)")))
            }
            ExposurePrior::PerItem(p) if p.mu.len() != n_items => Err(Error::Dimension(format!(
                "per-item prior has {} entries for {n_items} items",
                p.mu.len()
            ))),
            ExposurePrior::Covariate(c)
                if c.psi.rows() != n_users
                    || c.gamma.len() != n_users
                    || c.covariates.n_items() != n_items
                    || c.psi.k() != c.covariates.dim() =>
            {
                Err(Error::Dimension(format!(
                    "covariate prior shaped {}x{} / {} intercepts / {} items, model is {n_users}x{n_items}",
                    c.psi.rows(),
                    c.psi.k(),
                    c.gamma.len(),
                    c.covariates.n_items()
                )))
            }
            _ => Ok(()),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Free-function form of [`CovariatePrior::gradient`].
pub fn psi_gradient(
    prior: &CovariatePrior,
    user: usize,
    items: &[usize],
    p: impl Fn(usize) -> f64,
) -> Vec<f64> {
    prior.gradient(user, items, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covariate_prior(psi: Vec<f64>, gamma: Vec<f64>, x: Vec<f64>, dim: usize) -> CovariatePrior {
        let n_users = gamma.len();
        let n_items = x.len() / dim;
        CovariatePrior {
            psi: FactorMatrix::from_vec(n_users, dim, psi).unwrap(),
            gamma,
            covariates: CovariateMatrix::new(n_items, dim, x).unwrap(),
            settings: CovariateSettings::default(),
        }
    }

    #[test]
    fn mu_variants() {
        let c = ExposurePrior::Covariate(covariate_prior(vec![0.0, 0.0], vec![0.0], vec![0.3, 0.7], 2));
        assert_eq!(c.mu(0, 0), 0.5);
        let p = ExposurePrior::PerItem(PerItemPrior {
            mu: vec![0.1, 0.3],
            alpha1: 1.0,
            alpha2: 1.0,
        });
        assert_eq!(p.mu(5, 1), 0.3);
        let c = ExposurePrior::Covariate(covariate_prior(vec![2.0, 0.0], vec![0.0], vec![1.0, 0.0], 2));
        assert!((c.mu(0, 0) - 0.880_797_077_977_882_4).abs() < 1e-12);
    }

    #[test]
    fn try_mu_checks_range() {
        let p = ExposurePrior::PerItem(PerItemPrior {
            mu: vec![0.1],
            alpha1: 1.0,
            alpha2: 1.0,
        });
        assert!(matches!(p.try_mu(0, 1), Err(Error::Index(_))));
        assert!(p.try_mu(0, 0).is_ok());
    }

    #[test]
    fn per_item_mode_examples() {
        assert!((per_item_mode(3.0, 4.0, 10, 2.0) - 4.0 / 15.0).abs() < 1e-15);
        assert!((per_item_mode(1.0, 1.0, 10, 5.0) - 0.5).abs() < 1e-15);
        assert_eq!(per_item_mode(1.0, 3.0, 10, 0.0), MU_EPS);
        assert_eq!(per_item_mode(1.0, 1.0, 10, 10.0), 1.0 - MU_EPS);
    }

    #[test]
    fn per_item_update_rejects_bad_lengths() {
        let mut prior = PerItemPrior {
            mu: vec![0.5; 3],
            alpha1: 1.0,
            alpha2: 1.0,
        };
        assert!(prior.update(&[1.0, 2.0], 4).is_err());
        prior.update(&[1.0, 2.0, 0.0], 4).unwrap();
        assert_eq!(prior.mu[0], 0.25);
    }

    #[test]
    fn gradient_single_item() {
        let prior = covariate_prior(vec![0.0, 0.0], vec![0.0], vec![1.0, 0.0], 2);
        let g = prior.gradient(0, &[0], |_| 1.0);
        assert_eq!(g, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn gradient_vanishes_at_stationarity() {
        let prior = covariate_prior(
            vec![0.4, -1.2, 0.3],
            vec![0.2],
            vec![0.2, 0.3, 0.5, 0.6, 0.1, 0.3],
            3,
        );
        let g = prior.gradient(0, &[0, 1], |i| prior.mu(0, i));
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_gradient_leaves_psi_unchanged() {
        let mut prior = covariate_prior(vec![0.0, 0.0], vec![0.0], vec![0.5, 0.5, 0.2, 0.8], 2);
        let before = prior.clone();
        prior.update(|_| vec![0.5, 0.5], 3);
        assert_eq!(prior, before);
    }

    #[test]
    fn two_point_fit_drives_mu_to_half() {
        // identical covariates with p = 1 and p = 0: the MLE is σ(·) = 1/2
        let mut prior = covariate_prior(vec![1.5, -0.5], vec![2.0], vec![0.5, 0.5, 0.5, 0.5], 2);
        prior.settings.batch_size = 2;
        prior.settings.epochs_per_m_step = 200;
        prior.update(|_| vec![1.0, 0.0], 11);
        assert!((prior.mu(0, 0) - 0.5).abs() < 1e-6, "{}", prior.mu(0, 0));
    }

    #[test]
    fn equal_covariates_give_item_constant_mu() {
        let mut prior = covariate_prior(
            vec![0.1, 0.2, -0.3, 0.0],
            vec![0.0, 0.5],
            vec![0.25, 0.75, 0.25, 0.75, 0.25, 0.75],
            2,
        );
        prior.update(|u| if u == 0 { vec![1.0, 0.2, 0.0] } else { vec![0.3, 0.3, 0.9] }, 5);
        for u in 0..2 {
            let first = prior.mu(u, 0);
            assert!((0..3).all(|i| prior.mu(u, i) == first));
        }
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(-3.0) + sigmoid(3.0) - 1.0).abs() < 1e-15);
    }
}
