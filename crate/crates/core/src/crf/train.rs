//! Conditional log-likelihood and pseudolikelihood gradients, and per-sample
//! stochastic gradient ascent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_height, check_labels, exact_marginals, feature_counts, logistic, neighbor_balance, score, CrfModel,
    DEFAULT_MAX_EXACT_HEIGHT, MAX_EXACT_HEIGHT_LIMIT,
};
use crate::dataset::LabelGrid;
use crate::error::{Error, Result};
use crate::integrate::FeatureGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TrainMode {
    /// Exact conditional log-likelihood through the column transfer.
    #[default]
    #[serde(rename = "exact-dp")]
    ExactDp,
    /// Sum of per-site conditional log-likelihoods given the gold
    /// neighbours.
    #[serde(rename = "pseudolikelihood")]
    Pseudolikelihood,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::ExactDp => "exact-dp",
            TrainMode::Pseudolikelihood => "pseudolikelihood",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact-dp" => Ok(TrainMode::ExactDp),
            "pseudolikelihood" => Ok(TrainMode::Pseudolikelihood),
            other => Err(format!(
                "unknown training mode {other:?} (expected exact-dp or pseudolikelihood)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub max_exact_height: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            epochs: 50,
            l2: 0.0,
            seed: 0,
            mode: TrainMode::ExactDp,
            max_exact_height: DEFAULT_MAX_EXACT_HEIGHT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // alpha = 0 is accepted and leaves the weights untouched.
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} must be >= 0",
                self.alpha
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "l2 coefficient {} must be >= 0",
                self.l2
            )));
        }
        if !(1..=MAX_EXACT_HEIGHT_LIMIT).contains(&self.max_exact_height) {
            return Err(Error::InvalidParameter(format!(
                "max exact height {} must lie in 1..={MAX_EXACT_HEIGHT_LIMIT}",
                self.max_exact_height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: CrfModel,
    /// Mean per-sample objective of each epoch, accumulated during the pass.
    pub objective_history: Vec<f64>,
}

fn l2_penalty(model: &CrfModel, l2: f64) -> f64 {
    0.5 * l2 * model.weights().iter().map(|w| w * w).sum::<f64>()
}

/// `log p(gold | x; w) = score(gold) - log Z`.
pub fn log_likelihood(model: &CrfModel, features: &FeatureGrid, gold: &LabelGrid, max_height: usize) -> Result<f64> {
    check_height(features.rows(), max_height)?;
    let m = exact_marginals(model, features)?;
    Ok(score(model, features, gold)? - m.log_partition.unwrap_or(0.0))
}

fn cll_objective_and_gradient(
    model: &CrfModel,
    features: &FeatureGrid,
    gold: &LabelGrid,
    l2: f64,
    max_height: usize,
) -> Result<(f64, Vec<f64>)> {
    check_height(features.rows(), max_height)?;
    let observed = feature_counts(features, gold)?;
    let m = exact_marginals(model, features)?;
    let expected = m.expected_features(features);
    let weights = model.weights();
    let gradient = observed
        .iter()
        .zip(&expected)
        .zip(&weights)
        .map(|((f, e), w)| f - e - l2 * w)
        .collect();
    let observed_score: f64 = observed.iter().zip(&weights).map(|(f, w)| f * w).sum();
    let objective = observed_score - m.log_partition.unwrap_or(0.0) - l2_penalty(model, l2);
    Ok((objective, gradient))
}

/// Gradient of `log p(gold | x; w) - l2/2 |w|^2`:
/// `F_j(x, gold) - E[F_j] - l2 w_j`.
pub fn cll_gradient(
    model: &CrfModel,
    features: &FeatureGrid,
    gold: &LabelGrid,
    l2: f64,
    max_height: usize,
) -> Result<Vec<f64>> {
    Ok(cll_objective_and_gradient(model, features, gold, l2, max_height)?.1)
}

#[inline]
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn pl_objective_and_gradient(
    model: &CrfModel,
    features: &FeatureGrid,
    gold: &LabelGrid,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    check_labels(features, gold)?;
    let unary = model.unary_scores(features)?;
    let dim = features.dim();
    let mut gradient = vec![0.0; dim + 1];
    let mut objective = 0.0;
    for (i, &g) in gold.labels().iter().enumerate() {
        let balance = f64::from(neighbor_balance(gold, i));
        let a = unary[i] + model.pairwise_weight * balance;
        let g = f64::from(g);
        objective += g * a - softplus(a);
        let residual = g - logistic(a);
        for (o, phi) in gradient.iter_mut().zip(features.site(i)) {
            *o += phi * residual;
        }
        gradient[dim] += balance * residual;
    }
    for (o, w) in gradient.iter_mut().zip(model.weights()) {
        *o -= l2 * w;
    }
    Ok((objective - l2_penalty(model, l2), gradient))
}

/// `sum over sites of log p(gold_s | gold neighbours, x; w)`.
pub fn pseudo_log_likelihood(model: &CrfModel, features: &FeatureGrid, gold: &LabelGrid) -> Result<f64> {
    Ok(pl_objective_and_gradient(model, features, gold, 0.0)?.0)
}

/// Gradient of the pseudolikelihood minus `l2/2 |w|^2`.
pub fn pl_gradient(model: &CrfModel, features: &FeatureGrid, gold: &LabelGrid, l2: f64) -> Result<Vec<f64>> {
    Ok(pl_objective_and_gradient(model, features, gold, l2)?.1)
}

/// Per-sample gradient ascent, `w <- w + alpha * gradient`, visiting the
/// samples in a freshly shuffled order every epoch.
pub fn sgd_train(init: &CrfModel, data: &[(FeatureGrid, LabelGrid)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    for (features, labels) in data {
        if features.dim() != init.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "sample has {} features, model expects {}",
                features.dim(),
                init.feature_dim
            )));
        }
        check_labels(features, labels)?;
        if cfg.mode == TrainMode::ExactDp {
            check_height(features.rows(), cfg.max_exact_height)?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut model = init.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (features, gold) = &data[i];
            let (objective, gradient) = match cfg.mode {
                TrainMode::ExactDp => cll_objective_and_gradient(&model, features, gold, cfg.l2, cfg.max_exact_height)?,
                TrainMode::Pseudolikelihood => pl_objective_and_gradient(&model, features, gold, cfg.l2)?,
            };
            let weights: Vec<f64> = model
                .weights()
                .iter()
                .zip(&gradient)
                .map(|(w, g)| w + cfg.alpha * g)
                .collect();
            if !objective.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    alpha: cfg.alpha,
                });
            }
            model = model.with_weights(&weights);
            total += objective;
        }
        history.push(total / data.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        objective_history: history,
    })
}
