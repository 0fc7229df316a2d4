//! Binary grid CRF over particles.
//!
//! With site features `phi` (the integrated feature vectors) the feature
//! functions are
//!
//! * `F_j(x, y) = sum over sites of phi_j(site) * [y_site = 1]`, `j = 1..J`
//! * `F_{J+1}(x, y) = number of 4-connected neighbour pairs with equal labels`
//!
//! and `p(y | x; w) = exp(sum_j w_j F_j(x, y)) / Z(x, w)`. Exact inference
//! uses the column transfer in [`dp`]; grids taller than the configured
//! limit fall back to ICM decoding and pseudolikelihood training.

mod dp;
mod train;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelGrid;
use crate::error::{Error, Result};
use crate::integrate::FeatureGrid;

use dp::{Lattice, LogSum, MaxPlus, Transition};

pub use train::{
    cll_gradient, log_likelihood, pl_gradient, pseudo_log_likelihood, sgd_train, TrainConfig, TrainMode, TrainOutcome,
};

pub const CRF_SCHEMA_VERSION: u32 = 1;
/// Default cap on grid rows for exact inference (`2^16` column states).
pub const DEFAULT_MAX_EXACT_HEIGHT: usize = 16;
/// Hard ceiling on the exact-inference height.
pub const MAX_EXACT_HEIGHT_LIMIT: usize = 20;
/// Largest grid `partition_brute` will enumerate.
pub const MAX_BRUTE_SITES: usize = 20;
const ICM_MAX_SWEEPS: usize = 100;

/// Unary weights `w_1..w_J` and the Potts weight `w_{J+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    pub schema_version: u32,
    pub feature_dim: usize,
    pub unary_weights: Vec<f64>,
    pub pairwise_weight: f64,
}

impl CrfModel {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            schema_version: CRF_SCHEMA_VERSION,
            feature_dim,
            unary_weights: vec![0.0; feature_dim],
            pairwise_weight: 0.0,
        }
    }

    pub fn new(unary_weights: Vec<f64>, pairwise_weight: f64) -> Result<Self> {
        let model = Self {
            schema_version: CRF_SCHEMA_VERSION,
            feature_dim: unary_weights.len(),
            unary_weights,
            pairwise_weight,
        };
        model.validate()?;
        Ok(model)
    }

    /// All `J + 1` weights, Potts weight last.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = self.unary_weights.clone();
        w.push(self.pairwise_weight);
        w
    }

    /// Inverse of [`CrfModel::weights`].
    pub fn with_weights(&self, weights: &[f64]) -> Self {
        let (unary, pair) = weights.split_at(weights.len() - 1);
        Self {
            schema_version: self.schema_version,
            feature_dim: unary.len(),
            unary_weights: unary.to_vec(),
            pairwise_weight: pair[0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.unary_weights.len() != self.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "model declares {} features but has {} unary weights",
                self.feature_dim,
                self.unary_weights.len()
            )));
        }
        if self.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("CRF weights must be finite".into()));
        }
        Ok(())
    }

    fn check(&self, features: &FeatureGrid) -> Result<()> {
        if features.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features per particle, grid has {}",
                self.feature_dim,
                features.dim()
            )));
        }
        Ok(())
    }

    /// Unary score of label 1 at every site, row-major.
    pub fn unary_scores(&self, features: &FeatureGrid) -> Result<Vec<f64>> {
        self.check(features)?;
        Ok((0..features.len())
            .map(|i| {
                features
                    .site(i)
                    .iter()
                    .zip(&self.unary_weights)
                    .map(|(phi, w)| phi * w)
                    .sum()
            })
            .collect())
    }
}

/// How inference is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    /// Column-transfer DP; fails on grids taller than `max_height`.
    Exact { max_height: usize },
    /// ICM decoding; marginals are site conditionals at the ICM labeling.
    Approximate,
}

impl InferenceMode {
    /// Exact when the grid is short enough, approximate otherwise.
    pub fn for_rows(rows: usize, max_height: usize) -> Self {
        if rows <= max_height {
            InferenceMode::Exact { max_height }
        } else {
            InferenceMode::Approximate
        }
    }
}

/// Site marginals `P(y = 1)` and pair agreement probabilities `P(y_p = y_q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub cols: usize,
    pub rows: usize,
    /// Row-major, one per site.
    pub site: Vec<f64>,
    /// Pair `(r, c-1)-(r, c)` at index `r * (cols - 1) + c - 1`.
    pub horizontal: Vec<f64>,
    /// Pair `(r-1, c)-(r, c)` at index `(r - 1) * cols + c`.
    pub vertical: Vec<f64>,
    /// `log Z`; `None` for approximate inference.
    pub log_partition: Option<f64>,
}

impl Marginals {
    /// Expected value of every feature function, `E[F_j]`, Potts last.
    pub fn expected_features(&self, features: &FeatureGrid) -> Vec<f64> {
        let mut out = vec![0.0; features.dim() + 1];
        for (i, p) in self.site.iter().enumerate() {
            for (o, phi) in out.iter_mut().zip(features.site(i)) {
                *o += phi * p;
            }
        }
        out[features.dim()] = self.horizontal.iter().chain(&self.vertical).sum();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub map_labels: LabelGrid,
    pub site_marginals: Vec<f64>,
    pub log_partition: Option<f64>,
}

fn check_labels(features: &FeatureGrid, labels: &LabelGrid) -> Result<()> {
    if features.cols() != labels.cols() || features.rows() != labels.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} labels for a {}x{} feature grid",
            labels.cols(),
            labels.rows(),
            features.cols(),
            features.rows()
        )));
    }
    Ok(())
}

fn check_height(rows: usize, max_height: usize) -> Result<()> {
    let limit = max_height.min(MAX_EXACT_HEIGHT_LIMIT);
    if rows > limit {
        return Err(Error::HeightLimit { rows, limit });
    }
    Ok(())
}

/// Number of agreeing 4-neighbour pairs.
pub(crate) fn agreeing_pairs(labels: &LabelGrid) -> usize {
    let (cols, rows) = (labels.cols(), labels.rows());
    let mut n = 0;
    for r in 0..rows {
        for c in 0..cols {
            let y = labels.get(r, c);
            if c + 1 < cols && labels.get(r, c + 1) == y {
                n += 1;
            }
            if r + 1 < rows && labels.get(r + 1, c) == y {
                n += 1;
            }
        }
    }
    n
}

/// `F_j(x, y)` for every `j`, Potts feature last.
pub fn feature_counts(features: &FeatureGrid, labels: &LabelGrid) -> Result<Vec<f64>> {
    check_labels(features, labels)?;
    let mut out = vec![0.0; features.dim() + 1];
    for (i, &y) in labels.labels().iter().enumerate() {
        if y == 1 {
            for (o, phi) in out.iter_mut().zip(features.site(i)) {
                *o += phi;
            }
        }
    }
    out[features.dim()] = agreeing_pairs(labels) as f64;
    Ok(out)
}

/// `sum_j w_j F_j(x, y)`.
pub fn score(model: &CrfModel, features: &FeatureGrid, labels: &LabelGrid) -> Result<f64> {
    model.check(features)?;
    let counts = feature_counts(features, labels)?;
    Ok(counts.iter().zip(model.weights()).map(|(f, w)| f * w).sum())
}

/// `log Z` by enumerating every labeling; only for grids of at most
/// [`MAX_BRUTE_SITES`] sites.
pub fn partition_brute(model: &CrfModel, features: &FeatureGrid) -> Result<f64> {
    model.check(features)?;
    let n = features.len();
    if n > MAX_BRUTE_SITES {
        return Err(Error::TooManySites {
            sites: n,
            limit: MAX_BRUTE_SITES,
        });
    }
    let scores = (0..1usize << n)
        .map(|bits| {
            let labels = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
            let labels = LabelGrid::new(features.cols(), features.rows(), labels)?;
            score(model, features, &labels)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln())
}

fn lattice<'a>(model: &CrfModel, features: &FeatureGrid, unary: &'a [f64]) -> Lattice<'a> {
    Lattice {
        rows: features.rows(),
        cols: features.cols(),
        unary,
        pair: model.pairwise_weight,
        allowed: None,
    }
}

/// Exact `log Z` by the column transfer.
pub fn partition_dp(model: &CrfModel, features: &FeatureGrid, max_height: usize) -> Result<f64> {
    check_height(features.rows(), max_height)?;
    let unary = model.unary_scores(features)?;
    let lattice = lattice(model, features, &unary);
    Ok(Lattice::total::<LogSum>(&lattice.forward::<LogSum>()))
}

fn exact_marginals(model: &CrfModel, features: &FeatureGrid) -> Result<Marginals> {
    let unary = model.unary_scores(features)?;
    let lattice = lattice(model, features, &unary);
    let (rows, cols) = (features.rows(), features.cols());
    let bounds = lattice.forward::<LogSum>();
    let log_z = Lattice::total::<LogSum>(&bounds);
    let mut site = vec![0.0; rows * cols];
    let mut horizontal = vec![0.0; rows * (cols - 1)];
    let mut vertical = vec![0.0; (rows - 1) * cols];
    let first = lattice.sweep::<LogSum>(&bounds, |t: &Transition| {
        let p = (t.joint - log_z).exp();
        if t.y == 1 {
            site[t.row * cols + t.col] += p;
        }
        if t.left == t.y {
            horizontal[t.row * (cols - 1) + t.col - 1] += p;
        }
        if t.up == Some(t.y) {
            vertical[(t.row - 1) * cols + t.col] += p;
        }
    });
    for (state, joint) in first.into_iter().enumerate() {
        let p = (joint - log_z).exp();
        for r in 0..rows {
            let y = (state >> r) & 1;
            if y == 1 {
                site[r * cols] += p;
            }
            if r > 0 && (state >> (r - 1)) & 1 == y {
                vertical[(r - 1) * cols] += p;
            }
        }
    }
    let clamp = |v: &mut Vec<f64>| v.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    clamp(&mut site);
    clamp(&mut horizontal);
    clamp(&mut vertical);
    Ok(Marginals {
        cols,
        rows,
        site,
        horizontal,
        vertical,
        log_partition: Some(log_z),
    })
}

/// Site conditionals `P(y_s = 1 | neighbours)` at a fixed labeling.
fn conditionals(model: &CrfModel, unary: &[f64], labels: &LabelGrid) -> Vec<f64> {
    (0..unary.len())
        .map(|i| {
            let a = conditional_logit(model.pairwise_weight, unary, labels, i);
            logistic(a)
        })
        .collect()
}

/// Number of label-1 neighbours minus label-0 neighbours of site `i`.
pub(crate) fn neighbor_balance(labels: &LabelGrid, i: usize) -> i32 {
    let (cols, rows) = (labels.cols(), labels.rows());
    let (r, c) = (i / cols, i % cols);
    let mut neighbours = Vec::with_capacity(4);
    if c > 0 {
        neighbours.push((r, c - 1));
    }
    if c + 1 < cols {
        neighbours.push((r, c + 1));
    }
    if r > 0 {
        neighbours.push((r - 1, c));
    }
    if r + 1 < rows {
        neighbours.push((r + 1, c));
    }
    neighbours
        .into_iter()
        .map(|(rr, cc)| if labels.get(rr, cc) == 1 { 1 } else { -1 })
        .sum()
}

/// Score difference between label 1 and label 0 at site `i` given the labels
/// of its neighbours.
pub(crate) fn conditional_logit(pair: f64, unary: &[f64], labels: &LabelGrid, i: usize) -> f64 {
    unary[i] + pair * f64::from(neighbor_balance(labels, i))
}

#[inline]
pub(crate) fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn approximate_marginals(model: &CrfModel, features: &FeatureGrid) -> Result<Marginals> {
    let unary = model.unary_scores(features)?;
    let labels = icm(model, features, &unary)?;
    let site = conditionals(model, &unary, &labels);
    let (rows, cols) = (features.rows(), features.cols());
    let agree = |a: f64, b: f64| a * b + (1.0 - a) * (1.0 - b);
    let horizontal = (0..rows)
        .flat_map(|r| (1..cols).map(move |c| (r, c)))
        .map(|(r, c)| agree(site[r * cols + c - 1], site[r * cols + c]))
        .collect();
    let vertical = (1..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| agree(site[(r - 1) * cols + c], site[r * cols + c]))
        .collect();
    Ok(Marginals {
        cols,
        rows,
        site,
        horizontal,
        vertical,
        log_partition: None,
    })
}

pub fn marginals(model: &CrfModel, features: &FeatureGrid, mode: InferenceMode) -> Result<Marginals> {
    match mode {
        InferenceMode::Exact { max_height } => {
            check_height(features.rows(), max_height)?;
            exact_marginals(model, features)
        }
        InferenceMode::Approximate => approximate_marginals(model, features),
    }
}

/// Scores within this distance of the maximum count as ties.
fn tie_tolerance(best: f64) -> f64 {
    1e-9 * best.abs().max(1.0)
}

/// Max-marginals `max score` with site `i` fixed to each label.
fn max_marginals(lattice: &Lattice) -> (f64, Vec<[f64; 2]>) {
    let (rows, cols) = (lattice.rows, lattice.cols);
    let bounds = lattice.forward::<MaxPlus>();
    let best = Lattice::total::<MaxPlus>(&bounds);
    let mut mm = vec![[f64::NEG_INFINITY; 2]; rows * cols];
    let first = lattice.sweep::<MaxPlus>(&bounds, |t: &Transition| {
        let slot = &mut mm[t.row * cols + t.col][t.y];
        *slot = slot.max(t.joint);
    });
    for (state, joint) in first.into_iter().enumerate() {
        for r in 0..rows {
            let slot = &mut mm[r * cols][(state >> r) & 1];
            *slot = slot.max(joint);
        }
    }
    (best, mm)
}

/// Exact MAP labeling. Among labelings within the tie tolerance of the
/// maximum the lexicographically smallest in row-major order wins: sites are
/// fixed in row-major order, each to 0 whenever a near-maximal labeling
/// with that prefix exists.
fn exact_map(model: &CrfModel, features: &FeatureGrid) -> Result<LabelGrid> {
    let unary = model.unary_scores(features)?;
    let n = features.len();
    let mut allowed = vec![[true, true]; n];
    let (best, mut mm) = max_marginals(&lattice(model, features, &unary));
    let floor = best - tie_tolerance(best);
    let mut labels = vec![0u8; n];
    let mut i = 0;
    while i < n {
        let ok0 = mm[i][0] >= floor;
        let ok1 = mm[i][1] >= floor;
        match (ok0, ok1) {
            (true, true) if allowed[i] == [true, true] => {
                allowed[i] = [true, false];
                let restricted = Lattice {
                    allowed: Some(&allowed),
                    ..lattice(model, features, &unary)
                };
                mm = max_marginals(&restricted).1;
                // Restart the scan at this site under the new restriction.
                continue;
            }
            (true, _) => labels[i] = 0,
            (false, true) => labels[i] = 1,
            (false, false) => {
                // Only reachable through accumulated rounding; keep the
                // better label.
                labels[i] = u8::from(mm[i][1] > mm[i][0]);
            }
        }
        i += 1;
    }
    LabelGrid::new(features.cols(), features.rows(), labels)
}

/// Iterated conditional modes from the unary-greedy labeling; sweeps in
/// row-major order until no single flip strictly improves the score.
fn icm(model: &CrfModel, features: &FeatureGrid, unary: &[f64]) -> Result<LabelGrid> {
    let init = unary.iter().map(|&u| u8::from(u > 0.0)).collect();
    let mut labels = LabelGrid::new(features.cols(), features.rows(), init)?;
    for _ in 0..ICM_MAX_SWEEPS {
        let mut changed = false;
        for i in 0..unary.len() {
            let a = conditional_logit(model.pairwise_weight, unary, &labels, i);
            let current = labels.labels()[i];
            let better = if a > 0.0 {
                1
            } else if a < 0.0 {
                0
            } else {
                current
            };
            if better != current {
                let mut values = labels.labels().to_vec();
                values[i] = better;
                labels = LabelGrid::new(labels.cols(), labels.rows(), values)?;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}

pub fn map_labels(model: &CrfModel, features: &FeatureGrid, mode: InferenceMode) -> Result<LabelGrid> {
    match mode {
        InferenceMode::Exact { max_height } => {
            check_height(features.rows(), max_height)?;
            exact_map(model, features)
        }
        InferenceMode::Approximate => {
            let unary = model.unary_scores(features)?;
            icm(model, features, &unary)
        }
    }
}

/// MAP labels together with site marginals.
pub fn infer(model: &CrfModel, features: &FeatureGrid, mode: InferenceMode) -> Result<InferenceResult> {
    let map_labels = map_labels(model, features, mode)?;
    let m = marginals(model, features, mode)?;
    Ok(InferenceResult {
        map_labels,
        site_marginals: m.site,
        log_partition: m.log_partition,
    })
}
