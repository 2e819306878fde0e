//! Core data types shared by every other module.
//!
//! All random draws in the crate come from [`ChaCha8Rng`] seeded through
//! [`seeded_rng`]; ChaCha8 is portable and its output stream is fixed by its
//! specification, so a seed reproduces the same state on any platform.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exposure::{CovariatePrior, CovariateSettings, ExposurePrior, PerItemPrior};

/// Build the crate-wide deterministic generator for a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Bidirectional map between external string IDs and dense indices.
///
/// Indices are assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Map with IDs `"{prefix}{n}"` for `n` in `0..len`.
    pub fn sequential(prefix: &str, len: usize) -> Self {
        (0..len).map(|n| format!("{prefix}{n}")).collect()
    }

    pub fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.index.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), idx);
        idx
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> Option<&str> {
        self.ids.get(idx).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }
}

impl<S: AsRef<str>> FromIterator<S> for IdMap {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        let mut map = IdMap::new();
        for id in iter {
            map.get_or_insert(id.as_ref());
        }
        map
    }
}

/// Sparse user × item matrix of observed interactions.
///
/// Both orientations are kept (users → items and items → users) with sorted
/// indices. A stored entry means the interaction was observed; for click
/// data every stored value is `1.0`. Real-valued entries are permitted so
/// that data drawn from the Gaussian observation model can be fit directly.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    row_ptr: Vec<usize>,
    row_items: Vec<usize>,
    row_values: Vec<f64>,
    col_ptr: Vec<usize>,
    col_users: Vec<usize>,
    col_values: Vec<f64>,
    user_ids: IdMap,
    item_ids: IdMap,
}

impl InteractionMatrix {
    /// Build from `(user, item, value)` triples over dense indices.
    ///
    /// Rejects out-of-range indices, duplicate pairs and zero or non-finite
    /// values. The ID maps must cover exactly `n_users` / `n_items` entries.
    pub fn from_entries(
        user_ids: IdMap,
        item_ids: IdMap,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let n_users = user_ids.len();
        let n_items = item_ids.len();
        for &(u, i, v) in &entries {
            if u >= n_users || i >= n_items {
                return Err(Error::Index(format!(
                    "entry ({u}, {i}) outside {n_users}x{n_items}"
                )));
            }
            if v == 0.0 || !v.is_finite() {
                return Err(Error::Data(format!(
                    "entry ({u}, {i}) has value {v}; stored entries must be finite and nonzero"
                )));
            }
        }
        entries.sort_unstable_by_key(|&(u, i, _)| (u, i));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::Data(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }

        let mut row_ptr = vec![0usize; n_users + 1];
        for &(u, _, _) in &entries {
            row_ptr[u + 1] += 1;
        }
        for u in 0..n_users {
            row_ptr[u + 1] += row_ptr[u];
        }
        let row_items = entries.iter().map(|e| e.1).collect();
        let row_values = entries.iter().map(|e| e.2).collect();

        let mut col_ptr = vec![0usize; n_items + 1];
        for &(_, i, _) in &entries {
            col_ptr[i + 1] += 1;
        }
        for i in 0..n_items {
            col_ptr[i + 1] += col_ptr[i];
        }
        let mut fill = col_ptr.clone();
        let mut col_users = vec![0usize; entries.len()];
        let mut col_values = vec![0f64; entries.len()];
        // entries are sorted by user, so each column fills in user order
        for &(u, i, v) in &entries {
            col_users[fill[i]] = u;
            col_values[fill[i]] = v;
            fill[i] += 1;
        }

        Ok(Self {
            n_users,
            n_items,
            row_ptr,
            row_items,
            row_values,
            col_ptr,
            col_users,
            col_values,
            user_ids,
            item_ids,
        })
    }

    /// Binary matrix from `(user, item)` pairs with sequential IDs `u{n}` / `i{n}`.
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::from_entries(
            IdMap::sequential("u", n_users),
            IdMap::sequential("i", n_items),
            pairs.iter().map(|&(u, i)| (u, i, 1.0)).collect(),
        )
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.row_items.len()
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.item_ids
    }

    /// Sorted item indices observed for `user`.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.row_items[self.row_ptr[user]..self.row_ptr[user + 1]]
    }

    pub fn user_values(&self, user: usize) -> &[f64] {
        &self.row_values[self.row_ptr[user]..self.row_ptr[user + 1]]
    }

    /// Sorted user indices observed for `item`.
    pub fn item_users(&self, item: usize) -> &[usize] {
        &self.col_users[self.col_ptr[item]..self.col_ptr[item + 1]]
    }

    pub fn item_values(&self, item: usize) -> &[f64] {
        &self.col_values[self.col_ptr[item]..self.col_ptr[item + 1]]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.user_items(user).binary_search(&item).is_ok()
    }

    /// Stored value at `(user, item)`, zero when unobserved.
    pub fn get(&self, user: usize, item: usize) -> f64 {
        match self.user_items(user).binary_search(&item) {
            Ok(pos) => self.user_values(user)[pos],
            Err(_) => 0.0,
        }
    }

    /// Iterate `(user, item, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_users).flat_map(move |u| {
            self.user_items(u)
                .iter()
                .zip(self.user_values(u))
                .map(move |(&i, &v)| (u, i, v))
        })
    }

    pub fn is_binary(&self) -> bool {
        self.row_values.iter().all(|&v| v == 1.0)
    }
}

/// Dense row-major matrix holding one `k`-vector per user or item.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    k: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, k: usize) -> Self {
        Self {
            rows,
            k,
            data: vec![0.0; rows * k],
        }
    }

    pub fn from_vec(rows: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * k {
            return Err(Error::Dimension(format!(
                "factor data has {} values, expected {rows}x{k}",
                data.len()
            )));
        }
        Ok(Self { rows, k, data })
    }

    /// Zero-mean Gaussian entries with standard deviation `scale`.
    pub fn gaussian(rows: usize, k: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        Self { rows, k, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &FactorMatrix) -> f64 {
        if self.rows != other.rows || self.k != other.k {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-item nonnegative covariate rows, each summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    n_items: usize,
    dim: usize,
    data: Vec<f64>,
}

impl CovariateMatrix {
    /// Validates and renormalizes every row.
    pub fn new(n_items: usize, dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("covariate dimension must be at least 1".into()));
        }
        if data.len() != n_items * dim {
            return Err(Error::Dimension(format!(
                "covariate data has {} values, expected {n_items}x{dim}",
                data.len()
            )));
        }
        for (i, row) in data.chunks_mut(dim).enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Data(format!(
                    "covariate row {i} has invalid value {v}; entries must be finite and nonnegative"
                )));
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::Data(format!("covariate row {i} is all zero")));
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(Self { n_items, dim, data })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.data[item * self.dim..(item + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Latent dimension.
    pub k: usize,
    pub lambda_theta: f64,
    pub lambda_beta: f64,
    pub lambda_y: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Standard deviation of the initial factor draws.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            k: 100,
            lambda_theta: 1e-2,
            lambda_beta: 1e-2,
            lambda_y: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "latent dimension must be at least 1"));
        }
        let positive = [
            ("lambda_theta", self.lambda_theta),
            ("lambda_beta", self.lambda_beta),
            ("lambda_y", self.lambda_y),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("init_scale", self.init_scale),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    name,
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        Ok(())
    }
}

/// How the exposure prior of a fresh model is set up.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorInit {
    /// One global exposure probability, never updated.
    Fixed { mu: f64 },
    /// Per-item probabilities, all starting at `initial_mu`; Beta shapes come
    /// from the hyperparameters.
    PerItem { initial_mu: f64 },
    /// Logistic model on item covariates. `initial_mu` sets the starting
    /// intercept so every user starts near that exposure probability.
    Covariate {
        covariates: CovariateMatrix,
        settings: CovariateSettings,
        initial_mu: f64,
    },
    /// Constant confidence weights (the WMF special case).
    Confidence { c0: f64, c1: f64 },
}

impl PriorInit {
    pub fn per_item() -> Self {
        PriorInit::PerItem { initial_mu: 0.01 }
    }

    pub fn fixed() -> Self {
        PriorInit::Fixed { mu: 0.1 }
    }
}

/// Full parameter set of an exposure MF model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub theta: FactorMatrix,
    pub beta: FactorMatrix,
    pub exposure: ExposurePrior,
    pub hyper: Hyperparameters,
    pub iteration: u64,
}

impl ModelState {
    pub fn n_users(&self) -> usize {
        self.theta.rows()
    }

    pub fn n_items(&self) -> usize {
        self.beta.rows()
    }

    /// Check the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        let k = self.hyper.k;
        if self.theta.k() != k || self.beta.k() != k {
            return Err(Error::Dimension(format!(
                "factor widths {} / {} disagree with k = {k}",
                self.theta.k(),
                self.beta.k()
            )));
        }
        self.exposure.check_dims(self.n_users(), self.n_items())
    }
}

fn probability(field: &str, mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 1.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in (0, 1), got {mu}")))
    }
}

/// Draw a fresh model.
///
/// θ is drawn first, then β, then (for the covariate prior) ψ, all from one
/// generator seeded with `hyper.seed`.
pub fn init_model(
    n_users: usize,
    n_items: usize,
    hyper: &Hyperparameters,
    prior: PriorInit,
) -> Result<ModelState> {
    if n_users == 0 {
        return Err(Error::config("n_users", "need at least one user"));
    }
    if n_items == 0 {
        return Err(Error::config("n_items", "need at least one item"));
    }
    hyper.validate()?;

    let mut rng = seeded_rng(hyper.seed);
    let theta = FactorMatrix::gaussian(n_users, hyper.k, hyper.init_scale, &mut rng);
    let beta = FactorMatrix::gaussian(n_items, hyper.k, hyper.init_scale, &mut rng);

    let exposure = match prior {
        PriorInit::Fixed { mu } => {
            probability("fixed_mu", mu)?;
            ExposurePrior::Fixed { mu }
        }
        PriorInit::PerItem { initial_mu } => {
            probability("init_mu", initial_mu)?;
            ExposurePrior::PerItem(PerItemPrior {
                mu: vec![initial_mu; n_items],
                alpha1: hyper.alpha1,
                alpha2: hyper.alpha2,
            })
        }
        PriorInit::Covariate {
            covariates,
            settings,
            initial_mu,
        } => {
            probability("init_mu", initial_mu)?;
            settings.validate()?;
            if covariates.n_items() != n_items {
                return Err(Error::Dimension(format!(
                    "covariates cover {} items, model has {n_items}",
                    covariates.n_items()
                )));
            }
            let dim = covariates.dim();
            let psi = FactorMatrix::gaussian(n_users, dim, hyper.init_scale, &mut rng);
            let intercept = if settings.use_bias {
                (initial_mu / (1.0 - initial_mu)).ln()
            } else {
                0.0
            };
            ExposurePrior::Covariate(CovariatePrior {
                psi,
                gamma: vec![intercept; n_users],
                covariates,
                settings,
            })
        }
        PriorInit::Confidence { c0, c1 } => {
            if !(c0 >= 0.0 && c1 > c0 && c1.is_finite()) {
                return Err(Error::config(
                    "c1",
                    format!("confidence weights need c1 > c0 >= 0, got c0={c0} c1={c1}"),
                ));
            }
            ExposurePrior::Confidence { c0, c1 }
        }
    };

    Ok(ModelState {
        theta,
        beta,
        exposure,
        hyper: hyper.clone(),
        iteration: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_hyper() -> Hyperparameters {
        Hyperparameters {
            k: 4,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn init_shapes() {
        let state = init_model(3, 2, &small_hyper(), PriorInit::fixed()).unwrap();
        assert_eq!((state.theta.rows(), state.theta.k()), (3, 4));
        assert_eq!((state.beta.rows(), state.beta.k()), (2, 4));
        assert!(state.theta.is_finite() && state.beta.is_finite());
        assert_eq!(state.iteration, 0);
        state.validate().unwrap();
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(3, 2, &small_hyper(), PriorInit::per_item()).unwrap();
        let b = init_model(3, 2, &small_hyper(), PriorInit::per_item()).unwrap();
        assert_eq!(a, b);
        let bits = |m: &FactorMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.theta), bits(&b.theta));
    }

    #[test]
    fn init_rejects_empty_dims() {
        let err = init_model(0, 5, &small_hyper(), PriorInit::fixed()).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "n_users"));
    }

    #[test]
    fn invalid_hyper_names_field() {
        let hyper = Hyperparameters {
            lambda_y: 0.0,
            ..small_hyper()
        };
        let err = init_model(2, 2, &hyper, PriorInit::fixed()).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "lambda_y"));
        let hyper = Hyperparameters {
            k: 0,
            ..small_hyper()
        };
        assert!(matches!(
            hyper.validate(),
            Err(Error::Config { ref field, .. }) if field == "k"
        ));
    }

    #[test]
    fn transpose_consistency() {
        let m = InteractionMatrix::from_pairs(3, 4, &[(0, 1), (2, 1), (1, 3), (0, 0)]).unwrap();
        assert_eq!(m.user_items(0), &[0, 1]);
        assert_eq!(m.item_users(1), &[0, 2]);
        let mut from_rows: Vec<_> = m.iter().map(|(u, i, _)| (u, i)).collect();
        let mut from_cols: Vec<_> = (0..4)
            .flat_map(|i| m.item_users(i).iter().map(move |&u| (u, i)))
            .collect();
        from_rows.sort();
        from_cols.sort();
        assert_eq!(from_rows, from_cols);
        assert!(m.contains(1, 3) && !m.contains(1, 2));
    }

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        assert!(InteractionMatrix::from_pairs(2, 2, &[(0, 1), (0, 1)]).is_err());
        assert!(matches!(
            InteractionMatrix::from_pairs(2, 2, &[(2, 0)]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn covariate_rows_normalized() {
        let x = CovariateMatrix::new(2, 2, vec![2.0, 2.0, 0.2, 0.8]).unwrap();
        assert_eq!(x.row(0), &[0.5, 0.5]);
        assert!((x.row(1)[1] - 0.8).abs() < 1e-15);
        assert!(CovariateMatrix::new(1, 2, vec![-1.0, 2.0]).is_err());
        assert!(CovariateMatrix::new(1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn id_map_first_seen_order() {
        let map: IdMap = ["b", "a", "b", "c"].into_iter().collect();
        assert_eq!(map.len(), 3);
        assert_eq!(map.index_of("a"), Some(1));
        assert_eq!(map.id(2), Some("c"));
    }
}
