//! Validated value objects shared by the two players and the round loop.
//!
//! Every type here is immutable after construction and checks its own
//! invariants in the constructor, so downstream code can rely on them
//! without re-validating. Group indices are 0-based everywhere.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Absolute tolerance on simplex sums and relative tolerance on ball radii.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-9;

/// Tolerance on the budget-counter partition identity, checked after every
/// round transition.
pub const COUNTER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("{what} must not be empty")]
    Empty { what: &'static str },
    #[error("{what}[{index}] = {value} is not finite")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{what}[{index}] = {value} is negative")]
    NegativeEntry {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("weights sum to {sum}, expected 1 within {MEMBERSHIP_TOLERANCE:e}")]
    NotNormalized { sum: f64 },
    #[error("point norm {norm} exceeds radius {radius}")]
    NormExceedsRadius { norm: f64, radius: f64 },
    #[error("radius {radius} must be positive and finite")]
    BadRadius { radius: f64 },
    #[error("budget {budget} outside [1, {groups}]")]
    BudgetOutOfRange { budget: usize, groups: usize },
    #[error("group index {index} outside [0, {groups})")]
    IndexOutOfRange { index: usize, groups: usize },
    #[error("group index {index} appears more than once in a selection")]
    DuplicateIndex { index: usize },
    #[error("selection holds {actual} distinct groups but the budget is {budget}")]
    SelectionSizeMismatch { actual: usize, budget: usize },
    #[error("observed loss for group {index} is {value}, outside [0, 1]")]
    LossOutOfRange { index: usize, value: f64 },
    #[error("loss estimate for group {index} is {value}, above the attainable bound {bound}")]
    EstimateAboveBound {
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("loss estimate for group {index} is {value}, but the group was not queried")]
    UnqueriedNonZero { index: usize, value: f64 },
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<(), ValidationError> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(ValidationError::NonFinite { what, index, value });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Simplex weights
// ---------------------------------------------------------------------------

/// A probability vector over the groups: nonnegative entries summing to 1
/// within [`MEMBERSHIP_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    weights: Vec<f64>,
}

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, ValidationError> {
        if weights.is_empty() {
            return Err(ValidationError::Empty {
                what: "simplex weights",
            });
        }
        check_finite("simplex weights", &weights)?;
        for (index, &value) in weights.iter().enumerate() {
            if value < 0.0 {
                return Err(ValidationError::NegativeEntry {
                    what: "simplex weights",
                    index,
                    value,
                });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > MEMBERSHIP_TOLERANCE {
            return Err(ValidationError::NotNormalized { sum });
        }
        Ok(Self { weights })
    }

    /// The uniform distribution over `groups` groups.
    pub fn uniform(groups: usize) -> Result<Self, ValidationError> {
        if groups == 0 {
            return Err(ValidationError::Empty {
                what: "simplex weights",
            });
        }
        Ok(Self {
            weights: vec![1.0 / groups as f64; groups],
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.weights[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

// ---------------------------------------------------------------------------
// Model point
// ---------------------------------------------------------------------------

/// A model vector together with the ball radius it is known to satisfy:
/// `‖coords‖₂ ≤ radius · (1 + MEMBERSHIP_TOLERANCE)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPoint {
    coords: Vec<f64>,
    radius: f64,
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl ModelPoint {
    pub fn new(coords: Vec<f64>, radius: f64) -> Result<Self, ValidationError> {
        if coords.is_empty() {
            return Err(ValidationError::Empty {
                what: "model coordinates",
            });
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ValidationError::BadRadius { radius });
        }
        check_finite("model coordinates", &coords)?;
        let norm = l2_norm(&coords);
        if norm > radius * (1.0 + MEMBERSHIP_TOLERANCE) {
            return Err(ValidationError::NormExceedsRadius { norm, radius });
        }
        Ok(Self { coords, radius })
    }

    /// The origin of a `dim`-dimensional ball of the given radius.
    pub fn origin(dim: usize, radius: f64) -> Result<Self, ValidationError> {
        Self::new(vec![0.0; dim], radius)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.coords)
    }
}

// ---------------------------------------------------------------------------
// Query budget and selection
// ---------------------------------------------------------------------------

/// The number of groups the player may query this round, between 1 and the
/// group count inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryBudget {
    budget: usize,
    groups: usize,
}

impl QueryBudget {
    pub fn new(budget: usize, groups: usize) -> Result<Self, ValidationError> {
        if budget < 1 || budget > groups {
            return Err(ValidationError::BudgetOutOfRange { budget, groups });
        }
        Ok(Self { budget, groups })
    }

    pub fn get(&self) -> usize {
        self.budget
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    /// True on rounds with exactly one query, which use the implicit
    /// exploration estimator instead of the inclusion-probability one.
    pub fn is_single(&self) -> bool {
        self.budget == 1
    }
}

impl fmt::Display for QueryBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.budget)
    }
}

/// The outcome of one round's group selection: the anchor drawn from the
/// simplex weights plus any extra groups drawn by dependent rounding.
///
/// The anchor never appears among the extras, and the total number of
/// distinct groups equals the round's budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionRecord {
    anchor: usize,
    extras: Vec<usize>,
    all: Vec<usize>,
    budget: QueryBudget,
}

impl SelectionRecord {
    pub fn new(
        anchor: usize,
        mut extras: Vec<usize>,
        budget: QueryBudget,
    ) -> Result<Self, ValidationError> {
        let groups = budget.groups();
        if anchor >= groups {
            return Err(ValidationError::IndexOutOfRange {
                index: anchor,
                groups,
            });
        }
        extras.sort_unstable();
        for pair in extras.windows(2) {
            if pair[0] == pair[1] {
                return Err(ValidationError::DuplicateIndex { index: pair[0] });
            }
        }
        for &index in &extras {
            if index >= groups {
                return Err(ValidationError::IndexOutOfRange { index, groups });
            }
            if index == anchor {
                return Err(ValidationError::DuplicateIndex { index });
            }
        }
        let mut all = extras.clone();
        all.push(anchor);
        all.sort_unstable();
        if all.len() != budget.get() {
            return Err(ValidationError::SelectionSizeMismatch {
                actual: all.len(),
                budget: budget.get(),
            });
        }
        Ok(Self {
            anchor,
            extras,
            all,
            budget,
        })
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn extras(&self) -> &[usize] {
        &self.extras
    }

    /// All queried groups in ascending order: the anchor and the extras.
    pub fn all(&self) -> &[usize] {
        &self.all
    }

    pub fn budget(&self) -> QueryBudget {
        self.budget
    }

    pub fn contains(&self, index: usize) -> bool {
        self.all.binary_search(&index).is_ok()
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Losses observed for the queried groups only, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedLosses {
    entries: BTreeMap<usize, f64>,
}

impl ObservedLosses {
    pub fn new(entries: BTreeMap<usize, f64>) -> Result<Self, ValidationError> {
        for (&index, &value) in &entries {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(ValidationError::LossOutOfRange { index, value });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self, ValidationError> {
        Self::new(pairs.into_iter().collect())
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.entries.get(&index).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Queried group indices in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&i, &v)| (i, v))
    }
}

/// A dense importance-weighted loss estimate over all groups.
///
/// Entries for groups outside the round's selection are exactly 0, and
/// every entry stays below the estimator's attainable bound for the round
/// (`1 / inclusion probability floor`, which the caller supplies).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedLossVector {
    entries: Vec<f64>,
}

impl EstimatedLossVector {
    pub fn new(
        entries: Vec<f64>,
        queried: &[usize],
        max_entry: f64,
    ) -> Result<Self, ValidationError> {
        if entries.is_empty() {
            return Err(ValidationError::Empty {
                what: "loss estimates",
            });
        }
        check_finite("loss estimates", &entries)?;
        let bound = max_entry * (1.0 + MEMBERSHIP_TOLERANCE);
        for (index, &value) in entries.iter().enumerate() {
            if value < 0.0 {
                return Err(ValidationError::NegativeEntry {
                    what: "loss estimates",
                    index,
                    value,
                });
            }
            if queried.binary_search(&index).is_err() {
                if value != 0.0 {
                    return Err(ValidationError::UnqueriedNonZero { index, value });
                }
            } else if value > bound {
                return Err(ValidationError::EstimateAboveBound {
                    index,
                    value,
                    bound: max_entry,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

// ---------------------------------------------------------------------------
// Player states
// ---------------------------------------------------------------------------

/// Which estimator family the weight player folds its feedback into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaMode {
    /// One cumulative loss vector shared by every round.
    Unified,
    /// Separate cumulative losses for single-query and multi-query rounds.
    Hybrid,
}

impl fmt::Display for PlaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlaMode::Unified => write!(f, "unified"),
            PlaMode::Hybrid => write!(f, "hybrid"),
        }
    }
}

/// The weight player's state after some number of completed rounds.
///
/// Budget counters advance when a round's budget is revealed; the loss
/// vectors and the round count advance when the round's estimate is folded
/// in. `inv_budget_sum` is derived as `single_count + multi_inv_budget_sum`,
/// so the partition identity over single-query and multi-query rounds holds
/// exactly by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaState {
    mode: PlaMode,
    cumulative: Vec<f64>,
    cumulative_single: Vec<f64>,
    cumulative_multi: Vec<f64>,
    single_count: u64,
    multi_inv_budget_sum: f64,
    round: u64,
}

impl PlaState {
    pub fn new(mode: PlaMode, groups: usize) -> Result<Self, ValidationError> {
        if groups == 0 {
            return Err(ValidationError::Empty {
                what: "weight player state",
            });
        }
        Ok(Self {
            mode,
            cumulative: vec![0.0; groups],
            cumulative_single: vec![0.0; groups],
            cumulative_multi: vec![0.0; groups],
            single_count: 0,
            multi_inv_budget_sum: 0.0,
            round: 0,
        })
    }

    pub fn mode(&self) -> PlaMode {
        self.mode
    }

    pub fn groups(&self) -> usize {
        self.cumulative.len()
    }

    /// Completed rounds.
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Cumulative estimated losses over every round (unified mode).
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Cumulative estimated losses over single-query rounds (hybrid mode).
    pub fn cumulative_single(&self) -> &[f64] {
        &self.cumulative_single
    }

    /// Cumulative estimated losses over multi-query rounds (hybrid mode).
    pub fn cumulative_multi(&self) -> &[f64] {
        &self.cumulative_multi
    }

    pub fn single_count(&self) -> u64 {
        self.single_count
    }

    pub fn multi_inv_budget_sum(&self) -> f64 {
        self.multi_inv_budget_sum
    }

    /// Sum of reciprocal budgets over all revealed rounds. Single-query
    /// rounds contribute exactly 1, so this equals
    /// `single_count + multi_inv_budget_sum`.
    pub fn inv_budget_sum(&self) -> f64 {
        self.single_count as f64 + self.multi_inv_budget_sum
    }

    /// Advances the budget counters for the current round. The schedule
    /// reveals the budget before the weights update, so step sizes read
    /// counters that already include this round.
    #[must_use]
    pub fn reveal_budget(mut self, budget: QueryBudget) -> Self {
        if budget.is_single() {
            self.single_count += 1;
        } else {
            self.multi_inv_budget_sum += 1.0 / budget.get() as f64;
        }
        self
    }

    pub(crate) fn fold_estimate(mut self, estimate: &EstimatedLossVector, single: bool) -> Self {
        debug_assert_eq!(estimate.dim(), self.groups());
        match self.mode {
            PlaMode::Unified => {
                for (total, value) in self.cumulative.iter_mut().zip(estimate.as_slice()) {
                    *total += value;
                }
            }
            PlaMode::Hybrid => {
                let target = if single {
                    &mut self.cumulative_single
                } else {
                    &mut self.cumulative_multi
                };
                for (total, value) in target.iter_mut().zip(estimate.as_slice()) {
                    *total += value;
                }
            }
        }
        self.round += 1;
        self
    }
}

/// The model player's state: the running gradient sum, bounded by
/// `round · grad_bound` in norm.
#[derive(Debug, Clone, PartialEq)]
pub struct OcoState {
    gradient_sum: Vec<f64>,
    round: u64,
    diameter: f64,
    grad_bound: f64,
}

impl OcoState {
    pub fn new(dim: usize, diameter: f64, grad_bound: f64) -> Result<Self, ValidationError> {
        if dim == 0 {
            return Err(ValidationError::Empty {
                what: "model player state",
            });
        }
        if !(diameter.is_finite() && diameter > 0.0) {
            return Err(ValidationError::BadRadius { radius: diameter });
        }
        if !(grad_bound.is_finite() && grad_bound > 0.0) {
            return Err(ValidationError::BadRadius { radius: grad_bound });
        }
        Ok(Self {
            gradient_sum: vec![0.0; dim],
            round: 0,
            diameter,
            grad_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.gradient_sum.len()
    }

    pub fn gradient_sum(&self) -> &[f64] {
        &self.gradient_sum
    }

    /// Completed gradient accumulations.
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Diameter bound of the regularizer domain, `radius / √2` for the
    /// Euclidean ball with the halved squared norm regularizer.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    pub(crate) fn fold_gradient(mut self, gradient: &[f64]) -> Self {
        debug_assert_eq!(gradient.len(), self.dim());
        for (total, value) in self.gradient_sum.iter_mut().zip(gradient) {
            *total += value;
        }
        self.round += 1;
        debug_assert!(
            l2_norm(&self.gradient_sum) <= self.round as f64 * self.grad_bound + 1e-6,
            "gradient sum escaped its norm bound"
        );
        self
    }
}
