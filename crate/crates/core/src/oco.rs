//! The model player: projected online gradient descent over a Euclidean
//! ball, driven by one anchor-group gradient per round.
//!
//! With the halved squared norm as regularizer, follow-the-regularized-
//! leader reduces to projecting the scaled negative gradient sum onto the
//! ball. The step size decays as `√2 · D / (√5 · G · √t)`, where `D` is the
//! domain diameter under that regularizer (`radius / √2` for the ball) and
//! `G` bounds every incoming gradient norm.

use thiserror::Error;

use crate::types::{l2_norm, ModelPoint, OcoState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcoError {
    #[error("gradient norm {norm} exceeds the declared bound {bound}")]
    GradientBoundViolation { norm: f64, bound: f64 },
}

/// Step size for round `t` (1-based).
pub fn w_step_size(round: u64, diameter: f64, grad_bound: f64) -> f64 {
    assert!(round >= 1, "rounds are 1-based");
    assert!(diameter > 0.0 && diameter.is_finite());
    assert!(grad_bound > 0.0 && grad_bound.is_finite());
    std::f64::consts::SQRT_2 * diameter / (5.0_f64.sqrt() * grad_bound * (round as f64).sqrt())
}

/// Euclidean projection onto the ball of the given radius: interior points
/// pass through untouched, exterior points scale back to the boundary.
pub fn project_ball(point: &[f64], radius: f64) -> ModelPoint {
    assert!(radius > 0.0 && radius.is_finite());
    let norm = l2_norm(point);
    assert!(norm.is_finite(), "cannot project a non-finite point");
    let coords = if norm <= radius {
        point.to_vec()
    } else {
        let scale = radius / norm;
        point.iter().map(|v| v * scale).collect()
    };
    ModelPoint::new(coords, radius).expect("projection lands inside the ball")
}

/// The round's model: the scaled negative gradient sum projected onto the
/// ball. With an empty gradient sum this is the origin.
pub fn update_model(state: &OcoState, step: f64, radius: f64) -> ModelPoint {
    assert!(step >= 0.0 && step.is_finite());
    let scaled: Vec<f64> = state.gradient_sum().iter().map(|g| -step * g).collect();
    project_ball(&scaled, radius)
}

/// Folds one anchor gradient into the running sum after checking it against
/// the declared norm bound (with a sliver of slack for rounding).
pub fn accumulate_gradient(state: OcoState, gradient: &[f64]) -> Result<OcoState, OcoError> {
    assert_eq!(state.dim(), gradient.len(), "gradient dimension mismatch");
    let norm = l2_norm(gradient);
    let bound = state.grad_bound();
    if !norm.is_finite() || norm > bound * (1.0 + 1e-6) {
        return Err(OcoError::GradientBoundViolation { norm, bound });
    }
    Ok(state.fold_gradient(gradient))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_size_matches_closed_form() {
        // D = G = 1, t = 1: sqrt(2/5).
        assert!((w_step_size(1, 1.0, 1.0) - 0.6324555320336759).abs() < 1e-15);
        // t = 2: 1/sqrt(5).
        assert!((w_step_size(2, 1.0, 1.0) - 0.4472135954999579).abs() < 1e-15);
    }

    #[test]
    fn step_size_decays() {
        let mut previous = f64::INFINITY;
        for t in 1..200 {
            let step = w_step_size(t, 0.7, 2.0);
            assert!(step < previous);
            previous = step;
        }
    }

    #[test]
    fn projection_scales_exterior_points() {
        let p = project_ball(&[3.0, 4.0], 1.0);
        assert!((p.coords()[0] - 0.6).abs() < 1e-12);
        assert!((p.coords()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn projection_keeps_interior_points_bitwise() {
        let p = project_ball(&[0.1, -0.2, 0.05], 1.0);
        assert_eq!(p.coords(), &[0.1, -0.2, 0.05]);
        let zero = project_ball(&[0.0, 0.0], 2.5);
        assert_eq!(zero.coords(), &[0.0, 0.0]);
    }

    #[test]
    fn first_model_is_the_origin() {
        let state = OcoState::new(3, 1.0, 1.0).unwrap();
        let w = update_model(&state, w_step_size(1, 1.0, 1.0), 1.0);
        assert_eq!(w.coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn update_projects_scaled_gradient_sum() {
        let state = OcoState::new(2, 1.0, 20.0).unwrap();
        // Large sum clips to the boundary: -0.5 * (10, 0) projects to (-1, 0).
        let state = accumulate_gradient(state, &[10.0, 0.0]).unwrap();
        let w = update_model(&state, 0.5, 1.0);
        assert!((w.coords()[0] + 1.0).abs() < 1e-12);
        assert_eq!(w.coords()[1], 0.0);
    }

    #[test]
    fn update_keeps_interior_exactly() {
        let state = OcoState::new(2, 1.0, 1.0).unwrap();
        let state = accumulate_gradient(state, &[0.2, 0.0]).unwrap();
        let w = update_model(&state, 1.0, 1.0);
        assert_eq!(w.coords(), &[-0.2, 0.0]);
    }

    #[test]
    fn gradient_bound_is_enforced() {
        let state = OcoState::new(2, 1.0, 1.0).unwrap();
        let result = accumulate_gradient(state, &[3.0, 4.0]);
        assert!(matches!(
            result,
            Err(OcoError::GradientBoundViolation { .. })
        ));
    }

    #[test]
    fn accumulation_sums_and_counts() {
        let state = OcoState::new(2, 1.0, 5.0).unwrap();
        let state = accumulate_gradient(state, &[1.0, 2.0]).unwrap();
        let state = accumulate_gradient(state, &[-0.5, 1.0]).unwrap();
        assert_eq!(state.gradient_sum(), &[0.5, 3.0]);
        assert_eq!(state.round(), 2);
    }
}
