//! The weight player: follow-the-regularized-leader over the group simplex
//! with prediction-with-limited-advice feedback.
//!
//! Each round the schedule reveals a budget `r`, the player softmaxes its
//! cumulative estimated losses into simplex weights, draws an anchor group
//! from them, and on multi-query rounds adds `r − 1` extra groups by
//! dependent rounding with equal marginals `(r − 1)/(m − 1)`. Observed
//! losses are importance weighted back into a dense estimate: single-query
//! rounds divide by the anchor weight plus an implicit exploration shift,
//! multi-query rounds divide by the exact inclusion probability.

use rand::Rng;
use thiserror::Error;

use crate::depround::{dep_round, DepRoundError};
use crate::types::{
    EstimatedLossVector, ObservedLosses, PlaMode, PlaState, QueryBudget, SelectionRecord,
    SimplexWeights, ValidationError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaError {
    #[error("{groups} group(s) cannot anchor a robust game, need at least 2")]
    DegenerateGroups { groups: usize },
    #[error("observed losses cover groups {actual:?} but the selection queried {expected:?}")]
    ObservationMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Rounding(#[from] DepRoundError),
    #[error(transparent)]
    Construction(#[from] ValidationError),
}

/// The learning rate for the softmax update and the implicit exploration
/// shift added to the estimator denominator on single-query rounds.
/// `exploration` is half the learning rate whenever the shift is in use and
/// 0 on hybrid multi-query rounds, which need no exploration bonus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub learning_rate: f64,
    pub exploration: f64,
}

fn require_groups(groups: usize) -> Result<(), PlaError> {
    // A single group makes ln(m) vanish and every step size 0.
    if groups < 2 {
        return Err(PlaError::DegenerateGroups { groups });
    }
    Ok(())
}

/// Step sizes for a unified-mode state whose counters already include the
/// current round's revealed budget.
pub fn unified_step_size(state: &PlaState) -> Result<StepSizes, PlaError> {
    assert_eq!(state.mode(), PlaMode::Unified, "state is not in unified mode");
    require_groups(state.groups())?;
    let sum = state.inv_budget_sum();
    assert!(sum > 0.0, "budget must be revealed before the weights update");
    let groups = state.groups() as f64;
    let learning_rate = (groups.ln() / (groups * sum)).sqrt();
    Ok(StepSizes {
        learning_rate,
        exploration: learning_rate / 2.0,
    })
}

/// Step sizes for a hybrid-mode state, picked per the current budget:
/// single-query rounds scale with the number of single-query rounds so far,
/// multi-query rounds with the reciprocal budget mass of multi-query rounds.
pub fn hybrid_step_sizes(state: &PlaState, budget: QueryBudget) -> Result<StepSizes, PlaError> {
    assert_eq!(state.mode(), PlaMode::Hybrid, "state is not in hybrid mode");
    require_groups(state.groups())?;
    let groups = state.groups() as f64;
    if budget.is_single() {
        let count = state.single_count() as f64;
        assert!(count > 0.0, "budget must be revealed before the weights update");
        let learning_rate = (groups.ln() / (groups * count)).sqrt();
        Ok(StepSizes {
            learning_rate,
            exploration: learning_rate / 2.0,
        })
    } else {
        let sum = state.multi_inv_budget_sum();
        assert!(sum > 0.0, "budget must be revealed before the weights update");
        Ok(StepSizes {
            learning_rate: (groups.ln() / (groups * sum)).sqrt(),
            exploration: 0.0,
        })
    }
}

/// The cumulative loss vector the weights update reads this round: the
/// shared vector in unified mode, the branch matching the budget in hybrid
/// mode.
pub fn active_cumulative<'a>(state: &'a PlaState, budget: QueryBudget) -> &'a [f64] {
    match state.mode() {
        PlaMode::Unified => state.cumulative(),
        PlaMode::Hybrid => {
            if budget.is_single() {
                state.cumulative_single()
            } else {
                state.cumulative_multi()
            }
        }
    }
}

/// Softmax of the negated cumulative losses. Shifting by the minimum keeps
/// every exponent in [-inf, 0], so the numerators stay in [0, 1] and the
/// denominator is at least 1 regardless of how large the losses grow.
pub fn update_weights(cumulative: &[f64], learning_rate: f64) -> SimplexWeights {
    assert!(!cumulative.is_empty(), "no groups to weight");
    assert!(
        learning_rate.is_finite() && learning_rate >= 0.0,
        "learning rate must be finite and nonnegative"
    );
    let lowest = cumulative.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(lowest.is_finite(), "cumulative losses must be finite");
    let numerators: Vec<f64> = cumulative
        .iter()
        .map(|&loss| (-learning_rate * (loss - lowest)).exp())
        .collect();
    let total: f64 = numerators.iter().sum();
    let weights = numerators.into_iter().map(|n| n / total).collect();
    SimplexWeights::new(weights).expect("softmax output is a valid simplex point")
}

/// Probability that group `i` with weight `q_i` ends up queried this round:
/// the anchor probability plus, on multi-query rounds, the dependent
/// rounding marginal for non-anchor slots.
pub fn inclusion_probability(weight: f64, budget: QueryBudget) -> f64 {
    if budget.is_single() {
        weight
    } else {
        let extra = (budget.get() - 1) as f64 / (budget.groups() - 1) as f64;
        weight + (1.0 - weight) * extra
    }
}

/// Draws the anchor group from the simplex weights by inverse CDF; boundary
/// ties resolve to the lower index and zero-weight groups are skipped.
pub fn draw_anchor<R: Rng + ?Sized>(weights: &SimplexWeights, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (index, &weight) in weights.as_slice().iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        acc += weight;
        if u <= acc {
            return index;
        }
    }
    // The weight sum may round to slightly below 1; the leftover sliver of
    // u belongs to the last group carrying mass.
    weights
        .as_slice()
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("simplex weights sum to 1, some entry is positive")
}

/// Completes the round's selection around a drawn anchor: extras are chosen
/// by dependent rounding of the uniform marginal (r-1)/(m-1) over the
/// non-anchor indices.
pub fn complete_selection<R: Rng + ?Sized>(
    anchor: usize,
    budget: QueryBudget,
    rng: &mut R,
) -> Result<SelectionRecord, PlaError> {
    let groups = budget.groups();
    require_groups(groups)?;
    let extras = if budget.is_single() {
        Vec::new()
    } else {
        let marginal = (budget.get() - 1) as f64 / (groups - 1) as f64;
        let marginals = vec![marginal; groups - 1];
        let positions = dep_round(&marginals, rng)?;
        positions
            .into_iter()
            .map(|p| if p < anchor { p } else { p + 1 })
            .collect()
    };
    Ok(SelectionRecord::new(anchor, extras, budget)?)
}

/// Draws the full selection from one randomness source. Runs that keep the
/// anchor and rounding draws on separate streams call the two steps
/// directly.
pub fn select_groups<R: Rng + ?Sized>(
    weights: &SimplexWeights,
    budget: QueryBudget,
    rng: &mut R,
) -> Result<SelectionRecord, PlaError> {
    let groups = weights.dim();
    require_groups(groups)?;
    assert_eq!(groups, budget.groups(), "budget sized for a different game");
    let anchor = draw_anchor(weights, rng);
    complete_selection(anchor, budget, rng)
}

/// Importance weights the observed losses into a dense estimate over all
/// groups. The observed index set must equal the selection exactly.
pub fn estimate_losses(
    observed: &ObservedLosses,
    selection: &SelectionRecord,
    weights: &SimplexWeights,
    steps: &StepSizes,
) -> Result<EstimatedLossVector, PlaError> {
    let groups = weights.dim();
    let budget = selection.budget();
    assert_eq!(groups, budget.groups(), "selection sized for a different game");
    let actual: Vec<usize> = observed.indices().collect();
    if actual != selection.all() {
        return Err(PlaError::ObservationMismatch {
            expected: selection.all().to_vec(),
            actual,
        });
    }

    let mut entries = vec![0.0; groups];
    let max_entry;
    if budget.is_single() {
        assert!(
            steps.exploration > 0.0,
            "single-query estimates need a positive exploration shift"
        );
        let anchor = selection.anchor();
        let observed_loss = observed.get(anchor).expect("anchor was observed");
        entries[anchor] = observed_loss / (weights.get(anchor) + steps.exploration);
        max_entry = 1.0 / steps.exploration;
    } else if budget.get() == groups {
        // Full information: inclusion probability 1 for everyone.
        for (index, observed_loss) in observed.iter() {
            entries[index] = observed_loss;
        }
        max_entry = 1.0;
    } else {
        for (index, observed_loss) in observed.iter() {
            entries[index] = observed_loss / inclusion_probability(weights.get(index), budget);
        }
        max_entry = (budget.groups() - 1) as f64 / (budget.get() - 1) as f64;
    }
    Ok(EstimatedLossVector::new(
        entries,
        selection.all(),
        max_entry,
    )?)
}

/// The full round transition for the weight player: advances the budget
/// counters for this round and folds the estimate into the cumulative
/// vector the budget selects (the shared one in unified mode).
///
/// Step sizes are computed before this from `state.clone().reveal_budget(b)`;
/// both paths add the same reciprocal budget to the same base, so the
/// counters agree bitwise.
#[must_use]
pub fn accumulate(
    state: PlaState,
    estimate: &EstimatedLossVector,
    budget: QueryBudget,
) -> PlaState {
    assert_eq!(state.groups(), estimate.dim(), "estimate sized for a different game");
    assert_eq!(state.groups(), budget.groups(), "budget sized for a different game");
    let single = budget.is_single();
    state.reveal_budget(budget).fold_estimate(estimate, single)
}
