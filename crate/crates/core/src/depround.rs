//! Dependent rounding of a fractional marginal vector into a subset.
//!
//! Given marginals `p ∈ [0,1]^m` whose sum is an integer `k`, the rounding
//! repeatedly resolves the two lowest-index fractional entries against each
//! other until every entry is 0 or 1, then returns the indices set to 1.
//! Each pair resolution preserves the sum and is a martingale step for both
//! entries, so the output contains exactly `k` indices, every index `i`
//! appears with probability exactly `p_i`, and at most `m − 1` resolutions
//! occur.

use rand::Rng;
use thiserror::Error;

/// Entries this close to 0 or 1 are treated as integral. Pair resolutions
/// leave residues around 1e-16, far below this.
const SNAP_TOLERANCE: f64 = 1e-12;

/// Permitted deviation of the marginal sum from the nearest integer.
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DepRoundError {
    #[error("marginal[{index}] = {value} outside [0, 1]")]
    MarginalOutOfRange { index: usize, value: f64 },
    #[error("marginals sum to {sum}, expected an integer within {SUM_TOLERANCE:e}")]
    NonIntegerSum { sum: f64 },
}

fn snap(value: f64) -> f64 {
    if value.abs() <= SNAP_TOLERANCE {
        0.0
    } else if (value - 1.0).abs() <= SNAP_TOLERANCE {
        1.0
    } else {
        value
    }
}

fn is_fractional(value: f64) -> bool {
    value != 0.0 && value != 1.0
}

fn next_fractional(work: &[f64], from: usize) -> Option<usize> {
    (from..work.len()).find(|&i| is_fractional(work[i]))
}

/// Rounds `marginals` to a random subset with exact per-index inclusion
/// probabilities and fixed cardinality `k = round(Σ p_i)`.
///
/// Returns the chosen indices in ascending order. Fails when an entry lies
/// outside [0, 1] after snapping or the sum is not close to an integer.
pub fn dep_round<R: Rng + ?Sized>(
    marginals: &[f64],
    rng: &mut R,
) -> Result<Vec<usize>, DepRoundError> {
    let mut work: Vec<f64> = Vec::with_capacity(marginals.len());
    for (index, &value) in marginals.iter().enumerate() {
        if !value.is_finite() {
            return Err(DepRoundError::MarginalOutOfRange { index, value });
        }
        let snapped = snap(value);
        if !(0.0..=1.0).contains(&snapped) {
            return Err(DepRoundError::MarginalOutOfRange { index, value });
        }
        work.push(snapped);
    }
    let sum: f64 = work.iter().sum();
    let cardinality = sum.round();
    if (sum - cardinality).abs() > SUM_TOLERANCE {
        return Err(DepRoundError::NonIntegerSum { sum });
    }
    let cardinality = cardinality as usize;

    // Keep (i, j) as the two lowest-index fractional entries. Everything
    // below them is already integral, so replacements only scan forward.
    let mut first = next_fractional(&work, 0);
    let mut second = first.and_then(|i| next_fractional(&work, i + 1));
    while let (Some(i), Some(j)) = (first, second) {
        let up_room = (1.0 - work[i]).min(work[j]);
        let down_room = work[i].min(1.0 - work[j]);
        debug_assert!(up_room > 0.0 && down_room > 0.0);
        let u: f64 = rng.random();
        if u < down_room / (up_room + down_room) {
            work[i] += up_room;
            work[j] -= up_room;
        } else {
            work[i] -= down_room;
            work[j] += down_room;
        }
        work[i] = snap(work[i]);
        work[j] = snap(work[j]);
        let scan = j + 1;
        if is_fractional(work[i]) {
            second = next_fractional(&work, scan);
        } else if is_fractional(work[j]) {
            first = Some(j);
            second = next_fractional(&work, scan);
        } else {
            first = next_fractional(&work, scan);
            second = first.and_then(|i| next_fractional(&work, i + 1));
        }
    }
    if let Some(last) = first {
        // A single fractional entry can only be input slack or accumulated
        // rounding residue; by conservation it must sit next to an integer.
        let nearest = work[last].round();
        assert!(
            (work[last] - nearest).abs() <= 1e-6,
            "dependent rounding left a genuinely fractional entry: {}",
            work[last]
        );
        work[last] = nearest;
    }

    let chosen: Vec<usize> = (0..work.len()).filter(|&i| work[i] == 1.0).collect();
    assert_eq!(
        chosen.len(),
        cardinality,
        "dependent rounding changed the subset cardinality"
    );
    Ok(chosen)
}
