//! The full game loop: both players, the environment, averaged iterates,
//! and metric emission.
//!
//! One run is strictly sequential. All randomness derives from a single run
//! seed through fixed per-purpose stream indices, so the number of draws
//! one component consumes can never shift another component's sequence.
//! Evaluation and diagnostics use their own streams, which makes training
//! trajectories identical whether or not they are enabled, and makes every
//! metric row depend only on the rounds played so far, never on the
//! configured horizon.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::env::{BudgetSchedule, EnvError, GroupEnvironment};
use crate::oco::{self, OcoError};
use crate::pla::{self, PlaError};
use crate::types::{ModelPoint, OcoState, PlaMode, PlaState, QueryBudget, SimplexWeights};

/// Fixed stream indices for the per-purpose random sequences of a run.
/// Dataset generation gets its own index so a dataset seed that collides
/// with a run seed still yields unrelated draws.
pub mod stream {
    pub const BUDGET: u64 = 1;
    pub const ANCHOR: u64 = 2;
    pub const ROUNDING: u64 = 3;
    pub const DATA: u64 = 4;
    pub const DIAGNOSTICS: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const GENERATION: u64 = 7;
    pub const GAP: u64 = 8;
}

/// A deterministic generator for one purpose-specific stream of a seed.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha12Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run options: {detail}")]
    InvalidOptions { detail: String },
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error("round {round}: {source}")]
    Selection { round: u64, source: PlaError },
    #[error("round {round}: {source}")]
    Gradient { round: u64, source: OcoError },
    #[error("diagnostics were not enabled for this run")]
    DiagnosticsDisabled,
}

/// Everything a run needs besides the environment.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: PlaMode,
    pub schedule: BudgetSchedule,
    pub iters: u64,
    pub seed: u64,
    /// Metric rows are emitted at every round divisible by this.
    pub eval_every: u64,
    /// Fresh draws per group for each risk evaluation (ignored for
    /// empirical environments, which are averaged exactly).
    pub eval_samples: usize,
    /// Record full loss vectors each round and report the regret columns
    /// and the duality-gap estimate.
    pub diagnostics: bool,
    /// Projected gradient steps for the gap estimate's inner minimization.
    pub offline_iters: usize,
}

impl RunOptions {
    pub fn new(mode: PlaMode, schedule: BudgetSchedule, iters: u64, seed: u64) -> Self {
        Self {
            mode,
            schedule,
            iters,
            seed,
            eval_every: 100,
            eval_samples: 10_000,
            diagnostics: false,
            offline_iters: 500,
        }
    }
}

/// One emitted metrics row. Optional fields are `None` when diagnostics
/// are off.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub samples_used: u64,
    pub max_risk: f64,
    pub regret_q_prime: Option<f64>,
    pub regret_ratio: Option<f64>,
    pub eps_phi_est: Option<f64>,
    pub wall_time_ms: f64,
    pub clamp_count: u64,
}

/// Final state of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    /// Averaged model iterate over all rounds.
    pub model: Vec<f64>,
    /// Averaged simplex weights over all rounds.
    pub weights: Vec<f64>,
    pub samples_used: u64,
    pub clamp_count: u64,
}

// ---------------------------------------------------------------------------
// Averaged iterates
// ---------------------------------------------------------------------------

/// Running averages of both players' iterates.
#[derive(Debug, Clone)]
pub struct AveragedIterates {
    model: Vec<f64>,
    weights: Vec<f64>,
    count: u64,
}

impl AveragedIterates {
    pub fn new(dim: usize, groups: usize) -> Self {
        Self {
            model: vec![0.0; dim],
            weights: vec![0.0; groups],
            count: 0,
        }
    }

    /// Folds one round's iterates in: each mean becomes
    /// `(count * mean + new) / (count + 1)`.
    pub fn fold(&mut self, model: &[f64], weights: &[f64]) {
        assert_eq!(model.len(), self.model.len(), "model dimension mismatch");
        assert_eq!(weights.len(), self.weights.len(), "weight dimension mismatch");
        let n = self.count as f64;
        for (mean, &value) in self.model.iter_mut().zip(model) {
            *mean = (n * *mean + value) / (n + 1.0);
        }
        for (mean, &value) in self.weights.iter_mut().zip(weights) {
            *mean = (n * *mean + value) / (n + 1.0);
        }
        self.count += 1;
    }

    pub fn model(&self) -> &[f64] {
        &self.model
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Highest per-group empirical risk of a model: fresh draws per group for
/// sampled environments, the exact dataset mean for empirical ones. Ties
/// resolve to the lowest group index, which the strict comparison gives
/// for free.
pub fn max_risk<R: Rng + ?Sized>(
    model: &ModelPoint,
    env: &GroupEnvironment,
    eval_samples: usize,
    rng: &mut R,
) -> f64 {
    assert!(eval_samples >= 1, "need at least one evaluation sample");
    let mut worst = f64::NEG_INFINITY;
    for group in 0..env.groups() {
        let risk = group_risk(model, env, group, eval_samples, rng);
        if risk > worst {
            worst = risk;
        }
    }
    worst
}

fn group_risk<R: Rng + ?Sized>(
    model: &ModelPoint,
    env: &GroupEnvironment,
    group: usize,
    eval_samples: usize,
    rng: &mut R,
) -> f64 {
    match env.group_data(group) {
        Some(data) => {
            let total: f64 = data.iter().map(|z| env.loss(model, z)).sum();
            total / data.len() as f64
        }
        None => {
            let total: f64 = (0..eval_samples)
                .map(|_| env.loss(model, &env.draw_sample(group, rng)))
                .sum();
            total / eval_samples as f64
        }
    }
}

/// Incrementally maintained diagnostic history: the weight/loss inner
/// products, per-group cumulative losses, and the regret normalizer
/// `Σ_j (m / r_j) · ln m`.
#[derive(Debug, Clone)]
pub struct DiagnosticHistory {
    enabled: bool,
    dot_sum: f64,
    cumulative: Vec<f64>,
    normalizer_sum: f64,
}

impl DiagnosticHistory {
    pub fn new(groups: usize) -> Self {
        Self {
            enabled: true,
            dot_sum: 0.0,
            cumulative: vec![0.0; groups],
            normalizer_sum: 0.0,
        }
    }

    /// A history that records nothing and refuses to report.
    pub fn disabled(groups: usize) -> Self {
        Self {
            enabled: false,
            ..Self::new(groups)
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    /// Folds in one round: the played weights, the full loss vector over
    /// every group, and the round's budget.
    pub fn record(&mut self, weights: &SimplexWeights, full_losses: &[f64], budget: QueryBudget) {
        if !self.enabled {
            return;
        }
        assert_eq!(full_losses.len(), self.cumulative.len(), "group count mismatch");
        let groups = self.cumulative.len() as f64;
        self.dot_sum += weights
            .as_slice()
            .iter()
            .zip(full_losses)
            .map(|(q, s)| q * s)
            .sum::<f64>();
        for (total, &s) in self.cumulative.iter_mut().zip(full_losses) {
            *total += s;
        }
        self.normalizer_sum += groups / budget.get() as f64 * groups.ln();
    }

    /// Played cumulative loss minus the best single group in hindsight,
    /// ties to the lowest index.
    pub fn regret_q_prime(&self) -> Result<f64, RunError> {
        if !self.enabled {
            return Err(RunError::DiagnosticsDisabled);
        }
        let best = self
            .cumulative
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(self.dot_sum - best)
    }

    /// Regret scaled by the budget-aware normalizer; zero before any round
    /// is recorded.
    pub fn regret_ratio(&self) -> Result<f64, RunError> {
        let regret = self.regret_q_prime()?;
        if self.normalizer_sum == 0.0 {
            return Ok(0.0);
        }
        Ok(regret / self.normalizer_sum.sqrt())
    }
}

/// Estimated duality gap of the averaged iterates: the worst per-group
/// batch risk of the averaged model, minus an approximate minimum of the
/// weighted batch risk over the ball, both on the same fixed batches. The
/// minimum comes from projected gradient descent with step `1/sqrt(k)`
/// starting at the averaged model, keeping the best visited value, so the
/// result can only overestimate the true gap (up to batch noise).
pub fn eps_phi_estimate<R: Rng + ?Sized>(
    avg: &AveragedIterates,
    env: &GroupEnvironment,
    eval_samples: usize,
    offline_iters: usize,
    rng: &mut R,
) -> f64 {
    assert!(offline_iters >= 1, "need at least one descent step");
    assert!(eval_samples >= 1, "need at least one evaluation sample");
    let groups = env.groups();
    let batches: Vec<Vec<crate::env::Datum>> = (0..groups)
        .map(|group| match env.group_data(group) {
            Some(data) => data.to_vec(),
            None => (0..eval_samples)
                .map(|_| env.draw_sample(group, rng))
                .collect(),
        })
        .collect();

    let center = ModelPoint::new(avg.model().to_vec(), env.radius())
        .expect("averaged iterate stays inside the ball");
    let batch_risk = |model: &ModelPoint, batch: &[crate::env::Datum]| -> f64 {
        batch.iter().map(|z| env.loss(model, z)).sum::<f64>() / batch.len() as f64
    };
    let objective = |model: &ModelPoint| -> f64 {
        avg.weights()
            .iter()
            .zip(&batches)
            .map(|(&q, batch)| q * batch_risk(model, batch))
            .sum()
    };

    let max_term = batches
        .iter()
        .map(|batch| batch_risk(&center, batch))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut point = center;
    let mut best = objective(&point);
    for k in 1..=offline_iters {
        let mut gradient = vec![0.0; env.dim()];
        for (&q, batch) in avg.weights().iter().zip(&batches) {
            let scale = q / batch.len() as f64;
            for z in batch {
                for (g, part) in gradient.iter_mut().zip(env.loss_gradient(&point, z)) {
                    *g += scale * part;
                }
            }
        }
        let step = 1.0 / (k as f64).sqrt();
        let moved: Vec<f64> = point
            .coords()
            .iter()
            .zip(&gradient)
            .map(|(w, g)| w - step * g)
            .collect();
        point = oco::project_ball(&moved, env.radius());
        best = best.min(objective(&point));
    }
    max_term - best
}

// ---------------------------------------------------------------------------
// The run loop
// ---------------------------------------------------------------------------

/// Plays the game for `options.iters` rounds and returns the emitted
/// metric rows plus the final averaged iterates. Any per-round failure
/// aborts with the failing round index.
pub fn run(env: &GroupEnvironment, options: &RunOptions) -> Result<RunOutcome, RunError> {
    let groups = env.groups();
    if groups < 2 {
        return Err(RunError::InvalidOptions {
            detail: format!("the game needs at least 2 groups, environment has {groups}"),
        });
    }
    if options.eval_every == 0 {
        return Err(RunError::InvalidOptions {
            detail: "eval_every must be at least 1".to_string(),
        });
    }
    if options.eval_samples == 0 {
        return Err(RunError::InvalidOptions {
            detail: "eval_samples must be at least 1".to_string(),
        });
    }
    if options.offline_iters == 0 {
        return Err(RunError::InvalidOptions {
            detail: "offline_iters must be at least 1".to_string(),
        });
    }

    let mut budget_rng = seeded_stream(options.seed, stream::BUDGET);
    let mut anchor_rng = seeded_stream(options.seed, stream::ANCHOR);
    let mut rounding_rng = seeded_stream(options.seed, stream::ROUNDING);
    let mut data_rng = seeded_stream(options.seed, stream::DATA);
    let mut diag_rng = seeded_stream(options.seed, stream::DIAGNOSTICS);
    let mut eval_rng = seeded_stream(options.seed, stream::EVAL);
    let mut gap_rng = seeded_stream(options.seed, stream::GAP);

    let mut pla_state =
        PlaState::new(options.mode, groups).map_err(|e| RunError::InvalidOptions {
            detail: e.to_string(),
        })?;
    let mut oco_state = OcoState::new(env.dim(), env.diameter(), env.grad_bound()).map_err(|e| {
        RunError::InvalidOptions {
            detail: e.to_string(),
        }
    })?;
    let mut averages = AveragedIterates::new(env.dim(), groups);
    let mut history = if options.diagnostics {
        DiagnosticHistory::new(groups)
    } else {
        DiagnosticHistory::disabled(groups)
    };

    let started = Instant::now();
    let mut rows = Vec::new();
    let mut samples_used = 0_u64;
    let mut clamp_count = 0_u64;

    for round in 1..=options.iters {
        let budget = options.schedule.reveal(round, groups, &mut budget_rng)?;
        let revealed = pla_state.clone().reveal_budget(budget);
        let steps = match options.mode {
            PlaMode::Unified => pla::unified_step_size(&revealed),
            PlaMode::Hybrid => pla::hybrid_step_sizes(&revealed, budget),
        }
        .map_err(|source| RunError::Selection { round, source })?;

        let weights =
            pla::update_weights(pla::active_cumulative(&pla_state, budget), steps.learning_rate);
        let anchor = pla::draw_anchor(&weights, &mut anchor_rng);
        let selection = pla::complete_selection(anchor, budget, &mut rounding_rng)
            .map_err(|source| RunError::Selection { round, source })?;

        let model = oco::update_model(
            &oco_state,
            oco::w_step_size(round, env.diameter(), env.grad_bound()),
            env.radius(),
        );

        let observation = env.observed_losses(&model, &selection, &mut data_rng);
        samples_used += budget.get() as u64;
        clamp_count += observation.clamped;

        let estimate = pla::estimate_losses(&observation.losses, &selection, &weights, &steps)
            .map_err(|source| RunError::Selection { round, source })?;

        if history.enabled() {
            let full = env.diagnostic_losses(&model, &observation, &selection, &mut diag_rng);
            history.record(&weights, &full, budget);
        }

        pla_state = pla::accumulate(pla_state, &estimate, budget);
        let gradient = env.loss_gradient(&model, &observation.anchor_sample);
        oco_state = oco::accumulate_gradient(oco_state, &gradient)
            .map_err(|source| RunError::Gradient { round, source })?;
        averages.fold(model.coords(), weights.as_slice());

        if round % options.eval_every == 0 {
            let averaged_model = ModelPoint::new(averages.model().to_vec(), env.radius())
                .expect("averaged iterate stays inside the ball");
            let risk = max_risk(&averaged_model, env, options.eval_samples, &mut eval_rng);
            let (regret, ratio, gap) = if history.enabled() {
                (
                    Some(history.regret_q_prime()?),
                    Some(history.regret_ratio()?),
                    Some(eps_phi_estimate(
                        &averages,
                        env,
                        options.eval_samples,
                        options.offline_iters,
                        &mut gap_rng,
                    )),
                )
            } else {
                (None, None, None)
            };
            rows.push(MetricsRow {
                round,
                samples_used,
                max_risk: risk,
                regret_q_prime: regret,
                regret_ratio: ratio,
                eps_phi_est: gap,
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
                clamp_count,
            });
        }
    }

    Ok(RunOutcome {
        rows,
        model: averages.model().to_vec(),
        weights: averages.weights().to_vec(),
        samples_used,
        clamp_count,
    })
}
