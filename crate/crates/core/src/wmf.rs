//! Weighted matrix factorization baseline.
//!
//! WMF is run through the same row solver as exposure MF, with the exposure
//! weights pinned to `c1` for clicked pairs and `c0` for the rest and the
//! observation precision fixed at 1.

use crate::data::{init_model, FactorMatrix, Hyperparameters, InteractionMatrix, ModelState, PriorInit};
use crate::em::{self, ConstantExposure, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::ingest::SplitDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct WmfConfig {
    pub k: usize,
    pub lambda_theta: f64,
    pub lambda_beta: f64,
    /// Weight of unclicked pairs.
    pub c0: f64,
    /// Weight of clicked pairs.
    pub c1: f64,
    pub max_iters: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for WmfConfig {
    fn default() -> Self {
        let h = Hyperparameters::default();
        Self {
            k: h.k,
            lambda_theta: h.lambda_theta,
            lambda_beta: h.lambda_beta,
            c0: 0.01,
            c1: 1.0,
            max_iters: 50,
            init_scale: h.init_scale,
            seed: h.seed,
        }
    }
}

impl WmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0.is_finite() && self.c0 >= 0.0) {
            return Err(Error::config("c0", format!("must be finite and nonnegative, got {}", self.c0)));
        }
        if !(self.c1.is_finite() && self.c1 > self.c0) {
            return Err(Error::config(
                "c1",
                format!("must exceed c0 = {}, got {}", self.c0, self.c1),
            ));
        }
        self.hyperparameters().validate()
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            k: self.k,
            lambda_theta: self.lambda_theta,
            lambda_beta: self.lambda_beta,
            lambda_y: 1.0,
            init_scale: self.init_scale,
            seed: self.seed,
            ..Hyperparameters::default()
        }
    }

    pub fn weights(&self) -> ConstantExposure {
        ConstantExposure {
            unobserved: self.c0,
            observed: self.c1,
        }
    }

    /// Fresh state drawn exactly as an exposure MF model with the same seed.
    pub fn init_state(&self, n_users: usize, n_items: usize) -> Result<ModelState> {
        self.validate()?;
        init_model(
            n_users,
            n_items,
            &self.hyperparameters(),
            PriorInit::Confidence {
                c0: self.c0,
                c1: self.c1,
            },
        )
    }
}

/// One alternating sweep: θ against the current β, then β against the new θ.
pub fn wmf_step(state: &mut ModelState, y: &InteractionMatrix, weights: &ConstantExposure) -> Result<()> {
    state.theta = em::update_user_factors_with(state, y, weights)?;
    state.beta = em::update_item_factors_with(state, y, weights)?;
    state.iteration += 1;
    Ok(())
}

/// Run `max_iters` sweeps, calling `observe` after each with the iteration
/// number and the current factors.
pub fn wmf_train_traced<F>(y: &InteractionMatrix, config: &WmfConfig, mut observe: F) -> Result<ModelState>
where
    F: FnMut(u64, &FactorMatrix, &FactorMatrix),
{
    let mut state = config.init_state(y.n_users(), y.n_items())?;
    let weights = config.weights();
    for _ in 0..config.max_iters {
        wmf_step(&mut state, y, &weights)?;
        observe(state.iteration, &state.theta, &state.beta);
    }
    Ok(state)
}

/// Fixed-iteration WMF. Returns (θ, β).
pub fn wmf_train(y: &InteractionMatrix, config: &WmfConfig) -> Result<(FactorMatrix, FactorMatrix)> {
    let state = wmf_train_traced(y, config, |_, _, _| {})?;
    Ok((state.theta, state.beta))
}

/// WMF with validation-based stopping, sharing the exposure MF training loop.
/// `config.max_iters` is ignored in favor of `train.max_iters`.
pub fn wmf_fit(data: &SplitDataset, config: &WmfConfig, train: &TrainConfig) -> Result<TrainOutcome> {
    let state = config.init_state(data.n_users(), data.n_items())?;
    em::train(state, data, train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::em_step;

    fn small() -> InteractionMatrix {
        InteractionMatrix::from_pairs(4, 5, &[(0, 0), (0, 3), (1, 1), (2, 2), (2, 4), (3, 0), (3, 1)]).unwrap()
    }

    #[test]
    fn rejects_degenerate_weights() {
        let cfg = WmfConfig {
            c0: 1.0,
            c1: 1.0,
            ..WmfConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "c1"));
        let cfg = WmfConfig {
            c0: -0.1,
            ..WmfConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn one_by_one_closed_form() {
        // θ = c1·y·β / (c1·β² + λθ) with y = 1
        let y = InteractionMatrix::from_pairs(1, 1, &[(0, 0)]).unwrap();
        let cfg = WmfConfig {
            k: 1,
            lambda_theta: 0.5,
            lambda_beta: 0.25,
            c1: 2.0,
            ..WmfConfig::default()
        };
        let mut state = cfg.init_state(1, 1).unwrap();
        state.beta = FactorMatrix::from_vec(1, 1, vec![1.5]).unwrap();
        wmf_step(&mut state, &y, &cfg.weights()).unwrap();
        let theta = 2.0 * 1.5 / (2.0 * 1.5 * 1.5 + 0.5);
        let beta = 2.0 * theta / (2.0 * theta * theta + 0.25);
        assert!((state.theta.row(0)[0] - theta).abs() < 1e-14);
        assert!((state.beta.row(0)[0] - beta).abs() < 1e-14);
    }

    #[test]
    fn matches_exposure_mf_with_confidence_prior() {
        let y = small();
        let cfg = WmfConfig {
            k: 3,
            max_iters: 5,
            init_scale: 0.3,
            seed: 11,
            ..WmfConfig::default()
        };
        let mut expo = cfg.init_state(4, 5).unwrap();
        let mut traj = Vec::new();
        wmf_train_traced(&y, &cfg, |_, t, b| traj.push((t.clone(), b.clone()))).unwrap();
        for (t, b) in traj {
            em_step(&mut expo, &y).unwrap();
            assert_eq!(expo.theta.max_abs_diff(&t), 0.0);
            assert_eq!(expo.beta.max_abs_diff(&b), 0.0);
        }
    }
}
