//! Cost-aware Thompson-sampling action selection.
//!
//! One Bayesian linear reward model per mitigation action: Gaussian ridge
//! posterior with precision `A` (unit prior) and moment vector `b`, so
//! `θ̂ = A⁻¹b` and `Σ = v²·A⁻¹`. Each decision samples a weight vector per
//! action, scores the current context, subtracts the λ-weighted action cost,
//! and takes the argmax — ties break toward the cheaper action, then the
//! lower index, so runs are deterministic.
//!
//! The context vector is `[state…, μ̂, σ̂, 1]`: the encoded forecaster state,
//! the forecast moments, and a trailing bias feature (the linear model could
//! not express action-specific constant offsets without it).
//!
//! Rewards come in two flavors, selected by [`RewardMode`]: the improvement
//! in logical error minus the cost penalty, or next-horizon fidelity minus
//! the same penalty.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::ActionKind;

// ---------------------------------------------------------------------------
// Context assembly
// ---------------------------------------------------------------------------

/// `[state…, μ̂, σ̂, 1]` — forecast moments appended, bias last.
pub fn bandit_context(state: &[f64], mu_hat: f64, sigma_hat: f64) -> Vec<f64> {
    let mut z = Vec::with_capacity(state.len() + 3);
    z.extend_from_slice(state);
    z.push(mu_hat);
    z.push(sigma_hat);
    z.push(1.0);
    z
}

// ---------------------------------------------------------------------------
// Per-action reward model
// ---------------------------------------------------------------------------

/// Bayesian linear reward model for one action: precision `A` (symmetric PD,
/// initialized to `identity·prior_scale`), moment vector `b`, and the number
/// of observations folded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub count: u64,
}

impl ActionModel {
    pub fn new(dim: usize, prior_scale: f64) -> Self {
        ActionModel {
            a: DMatrix::identity(dim, dim) * prior_scale,
            b: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.a.clone())
            .ok_or_else(|| Error::LinAlg("action precision matrix is not positive definite".into()))
    }

    /// Posterior mean and covariance: `θ̂ = A⁻¹b`, `Σ = v²·A⁻¹`.
    pub fn posterior(&self, v: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let chol = self.cholesky()?;
        let theta = chol.solve(&self.b);
        let sigma = chol.inverse() * (v * v);
        Ok((theta, sigma))
    }

    /// One draw `θ̃ ~ N(θ̂, v²A⁻¹)` via `θ̂ + v·L⁻ᵀη` with `A = LLᵀ`.
    fn sample_weights<R: Rng + ?Sized>(&self, v: f64, rng: &mut R) -> Result<DVector<f64>> {
        let chol = self.cholesky()?;
        let theta = chol.solve(&self.b);
        let eta = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let lt = chol.l().transpose();
        let perturb = lt
            .solve_upper_triangular(&eta)
            .ok_or_else(|| Error::LinAlg("triangular solve failed in posterior sampling".into()))?;
        Ok(theta + perturb * v)
    }

    /// Rank-one Bayesian update: `A += zzᵀ`, `b += r·z`.
    pub fn update(&mut self, z: &[f64], r: f64) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        if !r.is_finite() {
            return Err(Error::InvalidData(format!("non-finite reward {r}")));
        }
        let zv = DVector::from_column_slice(z);
        self.a += &zv * zv.transpose();
        self.b += zv * r;
        self.count += 1;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Policy parameters
// ---------------------------------------------------------------------------

/// Which scalar the bandit is paid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `r = (ε_t − ε_{t+1}) − λ·C(a)`.
    #[default]
    ErrorDelta,
    /// `r = F_{t+Δ} − λ·C(a)`.
    Fidelity,
}

/// Where the Thompson randomness enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingForm {
    /// Sample weights from the posterior, then score (default).
    #[default]
    WeightPosterior,
    /// Score with the mean weights, then add value noise `N(0, v²)`.
    ValueNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    /// Cost multiplier λ ≥ 0.
    pub lambda: f64,
    /// Posterior/exploration scale v > 0.
    pub exploration: f64,
    pub reward_mode: RewardMode,
    pub sampling: SamplingForm,
    /// Use posterior means directly (Σ treated as 0); for reproducible tests.
    pub deterministic: bool,
    /// Scale of the identity prior on each action's precision.
    pub prior_scale: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            lambda: 0.05,
            exploration: 0.25,
            reward_mode: RewardMode::ErrorDelta,
            sampling: SamplingForm::WeightPosterior,
            deterministic: false,
            prior_scale: 1.0,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        if !positive(self.exploration) || !positive(self.prior_scale) {
            return Err(Error::Config(
                "exploration scale and prior_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

/// Argmax of `value − λ·cost` with deterministic tie-breaking: lowest cost
/// first, then lowest index. Shared by both sampling forms, so adding a
/// constant to every value provably cannot change the winner.
pub(crate) fn select_from_values(values: &[f64], costs: &[f64], lambda: f64) -> usize {
    let mut best = 0usize;
    let mut best_u = values[0] - lambda * costs[0];
    for i in 1..values.len() {
        let u = values[i] - lambda * costs[i];
        let better = u > best_u
            || (u == best_u
                && (costs[i] < costs[best] || (costs[i] == costs[best] && i < best)));
        if better {
            best = i;
            best_u = u;
        }
    }
    best
}

/// One Thompson-sampling decision: per action, draw a reward estimate for
/// context `z`, penalize by `λ·cost`, pick the argmax. Returns the chosen
/// index plus the per-action sampled values.
pub fn ts_select<R: Rng + ?Sized>(
    z: &[f64],
    models: &[ActionModel],
    costs: &[f64],
    params: &PolicyParams,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    if models.is_empty() || models.len() != costs.len() {
        return Err(Error::InvalidData(
            "need one model and one cost per action, at least one action".into(),
        ));
    }
    for m in models {
        if m.dim() != z.len() {
            return Err(Error::DimensionMismatch { expected: m.dim(), got: z.len() });
        }
    }
    let zv = DVector::from_column_slice(z);
    let mut values = Vec::with_capacity(models.len());
    for m in models {
        let value = if params.deterministic {
            let (theta, _) = m.posterior(params.exploration)?;
            theta.dot(&zv)
        } else {
            match params.sampling {
                SamplingForm::WeightPosterior => {
                    m.sample_weights(params.exploration, rng)?.dot(&zv)
                }
                SamplingForm::ValueNoise => {
                    let (theta, _) = m.posterior(params.exploration)?;
                    let eps: f64 = StandardNormal.sample(rng);
                    theta.dot(&zv) + params.exploration * eps
                }
            }
        };
        values.push(value);
    }
    Ok((select_from_values(&values, costs, params.lambda), values))
}

// ---------------------------------------------------------------------------
// Rewards and the expert heuristic
// ---------------------------------------------------------------------------

/// Realized reward for an action with cycle-errors `eps_t` (before) and
/// `eps_next` (after/next horizon).
pub fn reward(eps_t: f64, eps_next: f64, cost: f64, lambda: f64, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::ErrorDelta => (eps_t - eps_next) - lambda * cost,
        RewardMode::Fidelity => (1.0 - eps_next) - lambda * cost,
    }
}

/// Threshold heuristic on an inferred noise proxy: quiet → NONE, elevated →
/// MODERATE, severe → SEVERE.
pub fn expert_policy(p_proxy: f64, lo: f64, hi: f64) -> ActionKind {
    debug_assert!(lo < hi);
    if p_proxy < lo {
        ActionKind::None
    } else if p_proxy < hi {
        ActionKind::Moderate
    } else {
        ActionKind::Severe
    }
}

/// Default expert thresholds on the p_eff proxy, chosen so the expert
/// actually switches within the drift range of a p_phys0 = 0.01 run.
pub const EXPERT_THRESHOLDS: (f64, f64) = (0.005, 0.02);

// ---------------------------------------------------------------------------
// Policy bundle
// ---------------------------------------------------------------------------

/// The per-action models plus shared parameters; serializes to JSON for
/// checkpoint/resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditPolicy {
    pub models: Vec<ActionModel>,
    pub params: PolicyParams,
}

impl BanditPolicy {
    pub fn new(dim: usize, num_actions: usize, params: PolicyParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 || num_actions == 0 {
            return Err(Error::Config("policy needs at least one action and one feature".into()));
        }
        Ok(BanditPolicy {
            models: (0..num_actions).map(|_| ActionModel::new(dim, params.prior_scale)).collect(),
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn select<R: Rng + ?Sized>(
        &self,
        z: &[f64],
        costs: &[f64],
        rng: &mut R,
    ) -> Result<(usize, Vec<f64>)> {
        ts_select(z, &self.models, costs, &self.params, rng)
    }

    /// Fold a realized reward into the chosen action's model only.
    pub fn update(&mut self, action: usize, z: &[f64], r: f64) -> Result<()> {
        let model = self
            .models
            .get_mut(action)
            .ok_or_else(|| Error::InvalidData(format!("no model for action index {action}")))?;
        model.update(z, r)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Seed the per-action models from expert demonstrations `(z, action, r)`.
/// Each demonstration updates only the demonstrated action's model; actions
/// never demonstrated keep their priors untouched.
pub fn bootstrap_from_demonstrations(
    demos: &[(Vec<f64>, ActionKind, f64)],
    mut policy: BanditPolicy,
) -> Result<BanditPolicy> {
    for (z, action, r) in demos {
        policy.update(action.index(), z, *r)?;
    }
    Ok(policy)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
