//! Group environments: where samples, losses, and per-round budgets come
//! from.
//!
//! An environment is immutable once built. Synthetic environments hold one
//! ground-truth unit classifier per group and draw standard normal
//! features, clipped to a norm cap, with labels flipped at a configured
//! probability. Empirical environments hold a finite dataset per group and
//! draw uniformly with replacement. Both share the same loss: a logistic
//! loss normalized by a cap `κ` and clamped into [0, 1], so every observed
//! loss and every gradient norm is bounded before the players see them.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::types::{l2_norm, ModelPoint, ObservedLosses, QueryBudget, SelectionRecord};

/// Gradient bounds are floored here so a degenerate all-zero dataset cannot
/// produce a zero bound and a division by zero in the step size.
const MIN_GRAD_BOUND: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment configuration: {detail}")]
    InvalidConfig { detail: String },
    #[error("budget schedule exhausted at round {round}, only {length} entries")]
    ScheduleExhausted { round: u64, length: usize },
    #[error("round {round}: budget {budget} outside [1, {groups}]")]
    InvalidBudget {
        round: u64,
        budget: usize,
        groups: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {detail}")]
    MalformedRow { row: u64, detail: String },
    #[error("column {name:?} not found in the CSV header")]
    MissingColumn { name: String },
    #[error("group {key:?} has no rows left after label filtering")]
    EmptyGroup { key: String },
    #[error("found {found} group(s), need at least 2")]
    TooFewGroups { found: usize },
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

/// One labeled sample: a feature vector and a label in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Datum {
    features: Vec<f64>,
    label: f64,
}

impl Datum {
    pub fn new(features: Vec<f64>, label: f64) -> Result<Self, EnvError> {
        if !(label == 1.0 || label == -1.0) {
            return Err(EnvError::InvalidConfig {
                detail: format!("label {label} is not -1 or +1"),
            });
        }
        if features.is_empty() || features.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::InvalidConfig {
                detail: "features must be nonempty and finite".to_string(),
            });
        }
        Ok(Self { features, label })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self) -> f64 {
        self.label
    }
}

// ---------------------------------------------------------------------------
// Budget schedules
// ---------------------------------------------------------------------------

/// How many groups may be queried each round.
#[derive(Debug, Clone, PartialEq)]
pub enum BudgetSchedule {
    /// The same budget every round.
    Fixed(usize),
    /// Independent uniform draw from `lo..=hi` each round.
    UniformRandom { lo: usize, hi: usize },
    /// An explicit per-round list; the run fails if it is shorter than the
    /// horizon.
    FromList(Vec<usize>),
}

impl BudgetSchedule {
    /// The default dynamic schedule: uniform over `[1, m - 1]`.
    pub fn uniform_default(groups: usize) -> Self {
        BudgetSchedule::UniformRandom {
            lo: 1,
            hi: groups.saturating_sub(1).max(1),
        }
    }

    /// The budget for 1-based `round`. Uniform schedules consume exactly
    /// one draw per call.
    pub fn reveal<R: Rng + ?Sized>(
        &self,
        round: u64,
        groups: usize,
        rng: &mut R,
    ) -> Result<QueryBudget, EnvError> {
        let raw = match self {
            BudgetSchedule::Fixed(r) => *r,
            BudgetSchedule::UniformRandom { lo, hi } => {
                if lo > hi {
                    return Err(EnvError::InvalidConfig {
                        detail: format!("uniform schedule bounds [{lo}, {hi}] are inverted"),
                    });
                }
                rng.random_range(*lo..=*hi)
            }
            BudgetSchedule::FromList(list) => {
                let index = round
                    .checked_sub(1)
                    .expect("rounds are 1-based") as usize;
                *list.get(index).ok_or(EnvError::ScheduleExhausted {
                    round,
                    length: list.len(),
                })?
            }
        };
        QueryBudget::new(raw, groups).map_err(|_| EnvError::InvalidBudget {
            round,
            budget: raw,
            groups,
        })
    }
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum GroupSampler {
    Synthetic {
        classifiers: Vec<Vec<f64>>,
        flip_probability: f64,
    },
    Empirical {
        groups: Vec<Vec<Datum>>,
    },
}

/// Optional overrides for the loss geometry; `None` picks the documented
/// defaults during construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossOverrides {
    /// Feature norm cap. Default: `3·√dim` for synthetic data, the maximum
    /// observed feature norm for empirical data.
    pub feature_cap: Option<f64>,
    /// Loss normalizer `κ`. Default: `ln(1 + exp(radius · feature_cap))`,
    /// the largest raw logistic loss the ball and the cap allow, so the
    /// clamp is inert unless `κ` is overridden downward.
    pub normalizer: Option<f64>,
    /// Gradient norm bound `G`. Default: `feature_cap / κ`.
    pub grad_bound: Option<f64>,
}

/// Configuration for a synthetic environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub groups: usize,
    pub dim: usize,
    /// Probability that a drawn label disagrees with the ground-truth sign.
    pub flip_probability: f64,
    /// Correlation knob for the ground-truth classifiers: 0 draws them
    /// independently uniform on the sphere, 1 makes them identical.
    pub similarity: f64,
    pub seed: u64,
    pub radius: f64,
    pub overrides: LossOverrides,
}

impl SyntheticConfig {
    pub fn new(groups: usize, dim: usize, seed: u64) -> Self {
        Self {
            groups,
            dim,
            flip_probability: 0.1,
            similarity: 0.0,
            seed,
            radius: 1.0,
            overrides: LossOverrides::default(),
        }
    }
}

/// The sampling and loss side of the game, fixed for a whole run.
#[derive(Debug, Clone)]
pub struct GroupEnvironment {
    sampler: GroupSampler,
    dim: usize,
    radius: f64,
    feature_cap: f64,
    normalizer: f64,
    grad_bound: f64,
}

/// `ln(1 + exp(a))` without overflow in either tail.
pub fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn clip_to_norm(features: &mut [f64], cap: f64) {
    let norm = l2_norm(features);
    if norm > cap {
        let scale = cap / norm;
        for value in features.iter_mut() {
            *value *= scale;
        }
    }
}

fn resolve_geometry(
    radius: f64,
    default_cap: f64,
    overrides: &LossOverrides,
) -> Result<(f64, f64, f64), EnvError> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(EnvError::InvalidConfig {
            detail: format!("radius {radius} must be positive"),
        });
    }
    let feature_cap = overrides.feature_cap.unwrap_or(default_cap);
    if !(feature_cap.is_finite() && feature_cap >= 0.0) {
        return Err(EnvError::InvalidConfig {
            detail: format!("feature cap {feature_cap} must be nonnegative"),
        });
    }
    let normalizer = overrides
        .normalizer
        .unwrap_or_else(|| softplus(radius * feature_cap));
    if !(normalizer.is_finite() && normalizer > 0.0) {
        return Err(EnvError::InvalidConfig {
            detail: format!("loss normalizer {normalizer} must be positive"),
        });
    }
    let grad_bound = overrides
        .grad_bound
        .unwrap_or((feature_cap / normalizer).max(MIN_GRAD_BOUND));
    if !(grad_bound.is_finite() && grad_bound > 0.0) {
        return Err(EnvError::InvalidConfig {
            detail: format!("gradient bound {grad_bound} must be positive"),
        });
    }
    Ok((feature_cap, normalizer, grad_bound))
}

impl GroupEnvironment {
    /// Builds a synthetic environment: one uniformly random unit classifier
    /// per group (correlated through the similarity knob), generated from
    /// the dataset seed independently of any run seed.
    pub fn synthetic(config: &SyntheticConfig) -> Result<Self, EnvError> {
        if config.groups < 2 {
            return Err(EnvError::TooFewGroups {
                found: config.groups,
            });
        }
        if config.dim == 0 {
            return Err(EnvError::InvalidConfig {
                detail: "feature dimension must be at least 1".to_string(),
            });
        }
        if !(0.0..=1.0).contains(&config.flip_probability) {
            return Err(EnvError::InvalidConfig {
                detail: format!("flip probability {} outside [0, 1]", config.flip_probability),
            });
        }
        if !(0.0..=1.0).contains(&config.similarity) {
            return Err(EnvError::InvalidConfig {
                detail: format!("similarity {} outside [0, 1]", config.similarity),
            });
        }
        let mut rng = generation_rng(config.seed);
        let shared = random_direction(config.dim, &mut rng);
        let shared_weight = config.similarity.sqrt();
        let own_weight = (1.0 - config.similarity).sqrt();
        let classifiers = (0..config.groups)
            .map(|_| {
                let own = random_direction(config.dim, &mut rng);
                let mixed: Vec<f64> = shared
                    .iter()
                    .zip(&own)
                    .map(|(s, o)| shared_weight * s + own_weight * o)
                    .collect();
                normalize(mixed)
            })
            .collect();

        let default_cap = 3.0 * (config.dim as f64).sqrt();
        let (feature_cap, normalizer, grad_bound) =
            resolve_geometry(config.radius, default_cap, &config.overrides)?;
        Ok(Self {
            sampler: GroupSampler::Synthetic {
                classifiers,
                flip_probability: config.flip_probability,
            },
            dim: config.dim,
            radius: config.radius,
            feature_cap,
            normalizer,
            grad_bound,
        })
    }

    /// Builds an empirical environment from per-group datasets. Features
    /// are clipped to the cap here, once, so draws are plain lookups.
    ///
    /// A single group is allowed for direct risk evaluation; the game
    /// itself rejects fewer than two groups at configuration time.
    pub fn from_groups(
        groups: Vec<Vec<Datum>>,
        radius: f64,
        overrides: LossOverrides,
    ) -> Result<Self, EnvError> {
        if groups.is_empty() {
            return Err(EnvError::TooFewGroups { found: 0 });
        }
        let dim = groups
            .iter()
            .flatten()
            .map(|d| d.features.len())
            .next()
            .ok_or_else(|| EnvError::InvalidConfig {
                detail: "no samples in any group".to_string(),
            })?;
        for (index, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(EnvError::EmptyGroup {
                    key: index.to_string(),
                });
            }
            if group.iter().any(|d| d.features.len() != dim) {
                return Err(EnvError::InvalidConfig {
                    detail: format!("group {index} mixes feature dimensions"),
                });
            }
        }
        let observed_cap = groups
            .iter()
            .flatten()
            .map(|d| l2_norm(&d.features))
            .fold(0.0_f64, f64::max);
        let (feature_cap, normalizer, grad_bound) =
            resolve_geometry(radius, observed_cap, &overrides)?;
        let mut groups = groups;
        for group in &mut groups {
            for datum in group.iter_mut() {
                clip_to_norm(&mut datum.features, feature_cap);
            }
        }
        Ok(Self {
            sampler: GroupSampler::Empirical { groups },
            dim,
            radius,
            feature_cap,
            normalizer,
            grad_bound,
        })
    }

    pub fn groups(&self) -> usize {
        match &self.sampler {
            GroupSampler::Synthetic { classifiers, .. } => classifiers.len(),
            GroupSampler::Empirical { groups } => groups.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Domain diameter under the halved squared norm regularizer.
    pub fn diameter(&self) -> f64 {
        self.radius / std::f64::consts::SQRT_2
    }

    pub fn feature_cap(&self) -> f64 {
        self.feature_cap
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    /// True when the groups hold finite datasets rather than samplers, in
    /// which case risk evaluation iterates each full group instead of
    /// drawing.
    pub fn is_empirical(&self) -> bool {
        matches!(self.sampler, GroupSampler::Empirical { .. })
    }

    /// The finite dataset of a group, when empirical.
    pub fn group_data(&self, group: usize) -> Option<&[Datum]> {
        match &self.sampler {
            GroupSampler::Empirical { groups } => Some(&groups[group]),
            GroupSampler::Synthetic { .. } => None,
        }
    }

    /// Draws one sample from a group's distribution.
    pub fn draw_sample<R: Rng + ?Sized>(&self, group: usize, rng: &mut R) -> Datum {
        match &self.sampler {
            GroupSampler::Synthetic {
                classifiers,
                flip_probability,
            } => {
                let mut features: Vec<f64> =
                    (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                clip_to_norm(&mut features, self.feature_cap);
                let dot: f64 = features
                    .iter()
                    .zip(&classifiers[group])
                    .map(|(x, w)| x * w)
                    .sum();
                let clean = if dot >= 0.0 { 1.0 } else { -1.0 };
                let flip: f64 = rng.random();
                let label = if flip < *flip_probability { -clean } else { clean };
                Datum { features, label }
            }
            GroupSampler::Empirical { groups } => {
                let data = &groups[group];
                data[rng.random_range(0..data.len())].clone()
            }
        }
    }

    /// Normalized clamped logistic loss in [0, 1], plus whether the clamp
    /// was active (raw loss at or above the normalizer).
    pub fn loss_with_clamp(&self, model: &ModelPoint, sample: &Datum) -> (f64, bool) {
        assert_eq!(model.dim(), sample.features.len(), "dimension mismatch");
        let margin: f64 = sample
            .features
            .iter()
            .zip(model.coords())
            .map(|(x, w)| x * w)
            .sum::<f64>()
            * sample.label;
        let raw = softplus(-margin);
        if raw >= self.normalizer {
            (1.0, true)
        } else {
            (raw / self.normalizer, false)
        }
    }

    pub fn loss(&self, model: &ModelPoint, sample: &Datum) -> f64 {
        self.loss_with_clamp(model, sample).0
    }

    /// Gradient of the loss in the model. Exactly zero where the clamp is
    /// active, since the capped region is flat.
    pub fn loss_gradient(&self, model: &ModelPoint, sample: &Datum) -> Vec<f64> {
        assert_eq!(model.dim(), sample.features.len(), "dimension mismatch");
        let margin: f64 = sample
            .features
            .iter()
            .zip(model.coords())
            .map(|(x, w)| x * w)
            .sum::<f64>()
            * sample.label;
        if softplus(-margin) >= self.normalizer {
            return vec![0.0; self.dim];
        }
        let coefficient = -sample.label * logistic(-margin) / self.normalizer;
        sample.features.iter().map(|x| coefficient * x).collect()
    }

    /// Draws one sample per queried group in ascending index order and
    /// reports the complement of each loss, keeping the anchor's sample for
    /// the model player's gradient step.
    pub fn observed_losses<R: Rng + ?Sized>(
        &self,
        model: &ModelPoint,
        selection: &SelectionRecord,
        rng: &mut R,
    ) -> Observation {
        let mut entries = BTreeMap::new();
        let mut anchor_sample = None;
        let mut clamped = 0_u64;
        for &group in selection.all() {
            let sample = self.draw_sample(group, rng);
            let (loss, was_clamped) = self.loss_with_clamp(model, &sample);
            if was_clamped {
                clamped += 1;
            }
            entries.insert(group, 1.0 - loss);
            if group == selection.anchor() {
                anchor_sample = Some(sample);
            }
        }
        Observation {
            losses: ObservedLosses::new(entries).expect("losses in [0, 1] by construction"),
            anchor_sample: anchor_sample.expect("anchor is always queried"),
            clamped,
        }
    }

    /// Completes an observation into a dense vector over all groups for
    /// diagnostics, drawing unqueried groups from a separate stream so the
    /// training trajectory is identical with diagnostics on or off.
    pub fn diagnostic_losses<R: Rng + ?Sized>(
        &self,
        model: &ModelPoint,
        observation: &Observation,
        selection: &SelectionRecord,
        rng: &mut R,
    ) -> Vec<f64> {
        (0..self.groups())
            .map(|group| match observation.losses.get(group) {
                Some(value) => value,
                None => {
                    debug_assert!(!selection.contains(group));
                    let sample = self.draw_sample(group, rng);
                    1.0 - self.loss(model, &sample)
                }
            })
            .collect()
    }
}

/// One round's observations: complement losses for the queried groups, the
/// anchor's sample, and how many losses hit the clamp.
#[derive(Debug, Clone)]
pub struct Observation {
    pub losses: ObservedLosses,
    pub anchor_sample: Datum,
    pub clamped: u64,
}

fn generation_rng(seed: u64) -> ChaCha12Rng {
    crate::gdro::seeded_stream(seed, crate::gdro::stream::GENERATION)
}

fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if l2_norm(&raw) > 1e-12 {
            return normalize(raw);
        }
    }
}

fn normalize(mut values: Vec<f64>) -> Vec<f64> {
    let norm = l2_norm(&values);
    for value in values.iter_mut() {
        *value /= norm;
    }
    values
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// How to read a grouped binary classification dataset from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSpec {
    pub path: PathBuf,
    pub feature_cols: Vec<String>,
    pub label_col: String,
    /// Rows are partitioned by the tuple of these columns; groups are
    /// indexed by the lexicographic order of their distinct key tuples.
    pub group_cols: Vec<String>,
    /// Label value mapped to +1.
    pub positive_label: String,
    /// When set, only rows labeled with the positive or this value are
    /// kept and this value maps to -1; other rows are dropped. When unset,
    /// every non-positive label maps to -1.
    pub negative_label: Option<String>,
    pub radius: f64,
    pub overrides: LossOverrides,
}

/// Reads, filters, and partitions a CSV into an empirical environment.
pub fn ingest_grouped_csv(spec: &CsvSpec) -> Result<GroupEnvironment, EnvError> {
    if spec.feature_cols.is_empty() {
        return Err(EnvError::InvalidConfig {
            detail: "at least one feature column is required".to_string(),
        });
    }
    if spec.group_cols.is_empty() {
        return Err(EnvError::InvalidConfig {
            detail: "at least one group column is required".to_string(),
        });
    }
    let mut reader = csv::Reader::from_path(&spec.path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize, EnvError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EnvError::MissingColumn {
                name: name.to_string(),
            })
    };
    let feature_idx: Vec<usize> = spec
        .feature_cols
        .iter()
        .map(|n| column(n))
        .collect::<Result<_, _>>()?;
    let label_idx = column(&spec.label_col)?;
    let group_idx: Vec<usize> = spec
        .group_cols
        .iter()
        .map(|n| column(n))
        .collect::<Result<_, _>>()?;

    let mut partitions: BTreeMap<Vec<String>, Vec<Datum>> = BTreeMap::new();
    let mut row_number = 0_u64;
    for record in reader.records() {
        let record = record?;
        row_number += 1;
        let key: Vec<String> = group_idx
            .iter()
            .map(|&i| {
                record
                    .get(i)
                    .map(str::to_string)
                    .ok_or(EnvError::MalformedRow {
                        row: row_number,
                        detail: "missing group field".to_string(),
                    })
            })
            .collect::<Result<_, _>>()?;
        let partition = partitions.entry(key).or_default();

        let raw_label = record.get(label_idx).ok_or(EnvError::MalformedRow {
            row: row_number,
            detail: "missing label field".to_string(),
        })?;
        let label = if raw_label == spec.positive_label {
            1.0
        } else {
            match &spec.negative_label {
                Some(negative) if raw_label != negative => continue,
                _ => -1.0,
            }
        };

        let mut features = Vec::with_capacity(feature_idx.len());
        for &i in &feature_idx {
            let field = record.get(i).ok_or(EnvError::MalformedRow {
                row: row_number,
                detail: "missing feature field".to_string(),
            })?;
            let value: f64 = field.trim().parse().map_err(|_| EnvError::MalformedRow {
                row: row_number,
                detail: format!("feature {field:?} is not a number"),
            })?;
            if !value.is_finite() {
                return Err(EnvError::MalformedRow {
                    row: row_number,
                    detail: format!("feature {value} is not finite"),
                });
            }
            features.push(value);
        }
        partition.push(Datum { features, label });
    }

    for (key, rows) in &partitions {
        if rows.is_empty() {
            return Err(EnvError::EmptyGroup {
                key: key.join("/"),
            });
        }
    }
    if partitions.len() < 2 {
        return Err(EnvError::TooFewGroups {
            found: partitions.len(),
        });
    }
    let groups: Vec<Vec<Datum>> = partitions.into_values().collect();
    GroupEnvironment::from_groups(groups, spec.radius, spec.overrides.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::io::Write;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn tiny_synthetic(seed: u64) -> GroupEnvironment {
        GroupEnvironment::synthetic(&SyntheticConfig::new(3, 4, seed)).unwrap()
    }

    #[test]
    fn loss_at_origin_with_ln2_normalizer_is_exactly_one() {
        let mut config = SyntheticConfig::new(2, 3, 0);
        config.overrides.normalizer = Some(std::f64::consts::LN_2);
        let env = GroupEnvironment::synthetic(&config).unwrap();
        let w = ModelPoint::origin(3, 1.0).unwrap();
        let z = Datum::new(vec![1.0, -2.0, 0.5], 1.0).unwrap();
        let (loss, clamped) = env.loss_with_clamp(&w, &z);
        assert_eq!(loss, 1.0);
        assert!(clamped);
    }

    #[test]
    fn loss_stays_in_unit_interval() {
        let env = tiny_synthetic(4);
        let mut r = rng(9);
        let w = ModelPoint::new(vec![0.5, -0.5, 0.3, 0.1], env.radius()).unwrap();
        for _ in 0..1000 {
            let z = env.draw_sample(1, &mut r);
            let loss = env.loss(&w, &z);
            assert!((0.0..=1.0).contains(&loss));
        }
    }

    #[test]
    fn gradient_at_origin_is_half_negative_label_times_features() {
        let mut config = SyntheticConfig::new(2, 2, 0);
        config.overrides.normalizer = Some(1.0);
        let env = GroupEnvironment::synthetic(&config).unwrap();
        let w = ModelPoint::origin(2, 1.0).unwrap();
        let z = Datum::new(vec![0.4, -0.6], -1.0).unwrap();
        let grad = env.loss_gradient(&w, &z);
        // ln 2 < κ = 1 so the clamp is inactive: gradient is -0.5 y x.
        assert!((grad[0] - 0.2).abs() < 1e-15);
        assert!((grad[1] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn clamped_region_has_zero_gradient() {
        let mut config = SyntheticConfig::new(2, 1, 0);
        config.overrides.normalizer = Some(1.0);
        config.overrides.feature_cap = Some(20.0);
        let env = GroupEnvironment::synthetic(&config).unwrap();
        let w = ModelPoint::new(vec![1.0], 1.0).unwrap();
        let z = Datum::new(vec![10.0], -1.0).unwrap();
        // Margin -10: raw loss about 10, far above the normalizer 1.
        assert_eq!(env.loss(&w, &z), 1.0);
        assert_eq!(env.loss_gradient(&w, &z), vec![0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let env = tiny_synthetic(21);
        let mut r = rng(33);
        for trial in 0..20 {
            let z = env.draw_sample(trial % 3, &mut r);
            let coords: Vec<f64> = (0..4).map(|_| 0.4 * (r.random::<f64>() - 0.5)).collect();
            let w = ModelPoint::new(coords.clone(), env.radius()).unwrap();
            let grad = env.loss_gradient(&w, &z);
            for k in 0..4 {
                let h = 1e-6;
                let mut up = coords.clone();
                up[k] += h;
                let mut down = coords.clone();
                down[k] -= h;
                let f_up = env.loss(&ModelPoint::new(up, env.radius()).unwrap(), &z);
                let f_down = env.loss(&ModelPoint::new(down, env.radius()).unwrap(), &z);
                let numeric = (f_up - f_down) / (2.0 * h);
                let scale = grad[k].abs().max(1e-3);
                assert!(
                    (grad[k] - numeric).abs() / scale < 1e-5,
                    "trial {trial} coord {k}: analytic {} numeric {numeric}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn gradient_norm_respects_declared_bound() {
        let env = tiny_synthetic(5);
        let mut r = rng(6);
        let w = ModelPoint::new(vec![0.3, 0.3, -0.3, 0.2], env.radius()).unwrap();
        for _ in 0..1000 {
            let z = env.draw_sample(0, &mut r);
            let grad = env.loss_gradient(&w, &z);
            assert!(l2_norm(&grad) <= env.grad_bound() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn labels_flip_at_the_configured_rate() {
        let mut config = SyntheticConfig::new(2, 6, 77);
        config.flip_probability = 0.1;
        let env = GroupEnvironment::synthetic(&config).unwrap();
        let classifier = match &env.sampler {
            GroupSampler::Synthetic { classifiers, .. } => classifiers[0].clone(),
            _ => unreachable!(),
        };
        let mut r = rng(91);
        let trials = 100_000;
        let mut flipped = 0_u32;
        for _ in 0..trials {
            let z = env.draw_sample(0, &mut r);
            let dot: f64 = z.features().iter().zip(&classifier).map(|(x, w)| x * w).sum();
            let clean = if dot >= 0.0 { 1.0 } else { -1.0 };
            if z.label() != clean {
                flipped += 1;
            }
        }
        let rate = flipped as f64 / trials as f64;
        assert!((rate - 0.1).abs() < 0.01, "flip rate {rate}");
    }

    #[test]
    fn zero_flip_probability_never_flips() {
        let mut config = SyntheticConfig::new(2, 3, 15);
        config.flip_probability = 0.0;
        let env = GroupEnvironment::synthetic(&config).unwrap();
        let classifier = match &env.sampler {
            GroupSampler::Synthetic { classifiers, .. } => classifiers[1].clone(),
            _ => unreachable!(),
        };
        let mut r = rng(16);
        for _ in 0..2000 {
            let z = env.draw_sample(1, &mut r);
            let dot: f64 = z.features().iter().zip(&classifier).map(|(x, w)| x * w).sum();
            let clean = if dot >= 0.0 { 1.0 } else { -1.0 };
            assert_eq!(z.label(), clean);
        }
    }

    #[test]
    fn features_are_clipped_to_the_cap() {
        let mut config = SyntheticConfig::new(2, 8, 3);
        config.overrides.feature_cap = Some(1.0);
        let env = GroupEnvironment::synthetic(&config).unwrap();
        let mut r = rng(4);
        for _ in 0..500 {
            let z = env.draw_sample(0, &mut r);
            assert!(l2_norm(z.features()) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn same_dataset_seed_reproduces_the_environment() {
        let a = tiny_synthetic(123);
        let b = tiny_synthetic(123);
        let (ca, cb) = match (&a.sampler, &b.sampler) {
            (
                GroupSampler::Synthetic { classifiers: ca, .. },
                GroupSampler::Synthetic { classifiers: cb, .. },
            ) => (ca, cb),
            _ => unreachable!(),
        };
        assert_eq!(ca, cb);
    }

    #[test]
    fn full_similarity_makes_classifiers_identical() {
        let mut config = SyntheticConfig::new(3, 5, 8);
        config.similarity = 1.0;
        let env = GroupEnvironment::synthetic(&config).unwrap();
        if let GroupSampler::Synthetic { classifiers, .. } = &env.sampler {
            for c in classifiers.iter().skip(1) {
                for (a, b) in c.iter().zip(&classifiers[0]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fixed_schedule_repeats() {
        let schedule = BudgetSchedule::Fixed(3);
        let mut r = rng(0);
        for round in 1..=10 {
            assert_eq!(schedule.reveal(round, 5, &mut r).unwrap().get(), 3);
        }
    }

    #[test]
    fn uniform_schedule_hits_mean_and_bounds() {
        let schedule = BudgetSchedule::UniformRandom { lo: 1, hi: 19 };
        let mut r = rng(10);
        let trials = 100_000;
        let mut total = 0_u64;
        for round in 1..=trials {
            let b = schedule.reveal(round, 20, &mut r).unwrap().get();
            assert!((1..=19).contains(&b));
            total += b as u64;
        }
        let mean = total as f64 / trials as f64;
        assert!((mean - 10.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn list_schedule_exhausts_cleanly() {
        let schedule = BudgetSchedule::FromList(vec![1, 2, 3]);
        let mut r = rng(0);
        assert_eq!(schedule.reveal(3, 4, &mut r).unwrap().get(), 3);
        assert!(matches!(
            schedule.reveal(4, 4, &mut r),
            Err(EnvError::ScheduleExhausted { round: 4, length: 3 })
        ));
    }

    #[test]
    fn out_of_range_budget_is_rejected_with_its_round() {
        let schedule = BudgetSchedule::FromList(vec![2, 9]);
        let mut r = rng(0);
        assert!(matches!(
            schedule.reveal(2, 4, &mut r),
            Err(EnvError::InvalidBudget { round: 2, budget: 9, groups: 4 })
        ));
    }

    #[test]
    fn default_uniform_range_is_one_to_m_minus_one() {
        assert_eq!(
            BudgetSchedule::uniform_default(20),
            BudgetSchedule::UniformRandom { lo: 1, hi: 19 }
        );
    }

    #[test]
    fn observation_covers_exactly_the_selection() {
        let env = tiny_synthetic(2);
        let budget = QueryBudget::new(2, 3).unwrap();
        let sel = SelectionRecord::new(2, vec![0], budget).unwrap();
        let w = ModelPoint::origin(4, 1.0).unwrap();
        let obs = env.observed_losses(&w, &sel, &mut rng(7));
        assert_eq!(obs.losses.indices().collect::<Vec<_>>(), vec![0, 2]);
        // The reported anchor value is the complement loss of the retained
        // anchor sample.
        let expected = 1.0 - env.loss(&w, &obs.anchor_sample);
        assert_eq!(obs.losses.get(2), Some(expected));
    }

    #[test]
    fn diagnostics_fill_unqueried_groups_without_touching_observed_ones() {
        let env = tiny_synthetic(2);
        let budget = QueryBudget::new(2, 3).unwrap();
        let sel = SelectionRecord::new(2, vec![0], budget).unwrap();
        let w = ModelPoint::origin(4, 1.0).unwrap();
        let obs = env.observed_losses(&w, &sel, &mut rng(7));
        let full = env.diagnostic_losses(&w, &obs, &sel, &mut rng(8));
        assert_eq!(full.len(), 3);
        assert_eq!(full[0], obs.losses.get(0).unwrap());
        assert_eq!(full[2], obs.losses.get(2).unwrap());
        assert!((0.0..=1.0).contains(&full[1]));
    }

    #[test]
    fn empirical_draws_come_from_the_dataset() {
        let groups = vec![
            vec![
                Datum::new(vec![1.0, 0.0], 1.0).unwrap(),
                Datum::new(vec![0.0, 1.0], -1.0).unwrap(),
            ],
            vec![Datum::new(vec![-1.0, 0.0], 1.0).unwrap()],
        ];
        let env =
            GroupEnvironment::from_groups(groups.clone(), 1.0, LossOverrides::default()).unwrap();
        let mut r = rng(14);
        for _ in 0..100 {
            let z = env.draw_sample(0, &mut r);
            assert!(groups[0].contains(&z));
        }
        assert_eq!(env.draw_sample(1, &mut r), groups[1][0]);
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file.flush().unwrap();
        file
    }

    fn base_spec(path: PathBuf) -> CsvSpec {
        CsvSpec {
            path,
            feature_cols: vec!["f0".to_string(), "f1".to_string()],
            label_col: "label".to_string(),
            group_cols: vec!["grp".to_string()],
            positive_label: "yes".to_string(),
            negative_label: None,
            radius: 1.0,
            overrides: LossOverrides::default(),
        }
    }

    #[test]
    fn csv_ingestion_partitions_by_sorted_group_key() {
        let file = write_csv(
            "f0,f1,label,grp\n\
             1.0,2.0,yes,b\n\
             0.5,0.5,no,a\n\
             3.0,1.0,yes,a\n",
        );
        let env = ingest_grouped_csv(&base_spec(file.path().to_path_buf())).unwrap();
        assert_eq!(env.groups(), 2);
        // Keys sort as [a, b]: group 0 holds two rows, group 1 one row.
        assert_eq!(env.group_data(0).unwrap().len(), 2);
        assert_eq!(env.group_data(1).unwrap().len(), 1);
        assert_eq!(env.group_data(0).unwrap()[0].label(), -1.0);
        assert_eq!(env.group_data(1).unwrap()[0].label(), 1.0);
    }

    #[test]
    fn csv_rejects_unparseable_features() {
        let file = write_csv("f0,f1,label,grp\n1.0,oops,yes,a\n2.0,1.0,no,b\n");
        assert!(matches!(
            ingest_grouped_csv(&base_spec(file.path().to_path_buf())),
            Err(EnvError::MalformedRow { row: 1, .. })
        ));
    }

    #[test]
    fn csv_rejects_missing_columns() {
        let file = write_csv("f0,label,grp\n1.0,yes,a\n");
        assert!(matches!(
            ingest_grouped_csv(&base_spec(file.path().to_path_buf())),
            Err(EnvError::MissingColumn { .. })
        ));
    }

    #[test]
    fn csv_requires_two_groups() {
        let file = write_csv("f0,f1,label,grp\n1.0,2.0,yes,only\n0.1,0.2,no,only\n");
        assert!(matches!(
            ingest_grouped_csv(&base_spec(file.path().to_path_buf())),
            Err(EnvError::TooFewGroups { found: 1 })
        ));
    }

    #[test]
    fn csv_label_filter_can_empty_a_group() {
        let file = write_csv(
            "f0,f1,label,grp\n\
             1.0,2.0,yes,a\n\
             0.5,0.5,maybe,b\n\
             3.0,1.0,no,a\n",
        );
        let mut spec = base_spec(file.path().to_path_buf());
        spec.negative_label = Some("no".to_string());
        // Group b only has a "maybe" row, which the filter drops.
        assert!(matches!(
            ingest_grouped_csv(&spec),
            Err(EnvError::EmptyGroup { .. })
        ));
    }

    #[test]
    fn csv_label_filter_drops_other_labels() {
        let file = write_csv(
            "f0,f1,label,grp\n\
             1.0,2.0,yes,a\n\
             0.5,0.5,maybe,a\n\
             3.0,1.0,no,b\n\
             0.2,0.1,yes,b\n",
        );
        let mut spec = base_spec(file.path().to_path_buf());
        spec.negative_label = Some("no".to_string());
        let env = ingest_grouped_csv(&spec).unwrap();
        assert_eq!(env.group_data(0).unwrap().len(), 1);
        assert_eq!(env.group_data(1).unwrap().len(), 2);
    }

    #[test]
    fn empirical_feature_cap_defaults_to_max_norm() {
        let groups = vec![
            vec![Datum::new(vec![3.0, 4.0], 1.0).unwrap()],
            vec![Datum::new(vec![1.0, 0.0], -1.0).unwrap()],
        ];
        let env = GroupEnvironment::from_groups(groups, 1.0, LossOverrides::default()).unwrap();
        assert!((env.feature_cap() - 5.0).abs() < 1e-12);
        assert!((env.normalizer() - softplus(5.0)).abs() < 1e-12);
        assert!((env.grad_bound() - 5.0 / softplus(5.0)).abs() < 1e-12);
    }
}
