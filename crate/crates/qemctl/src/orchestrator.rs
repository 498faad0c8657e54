//! Run composition: offline training from logged traces, the online control
//! loop, fixed-action baselines, and paired strategy comparisons.
//!
//! Every run is driven by one seed. The plant derives its drift, logical-bit,
//! and shot randomness from per-cycle streams of that seed, and the
//! controller draws its decisions from a fourth, sequential stream — so two
//! strategies run against the *same seed* experience bitwise-identical noise
//! trajectories no matter which actions they pick. That pairing is what makes
//! "adaptive vs. unmitigated on the same drift realization" a meaningful
//! counterfactual rather than two different experiments.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::forecaster::{svgp_train, StateEncoder, SvgpModel};
use crate::ghsom::{train_ghsom, GhsomTree};
use crate::plant::{
    stream_rng, ActionKind, Plant, WorkloadDescriptor, STREAM_POLICY,
};
use crate::policy::{
    bandit_context, bootstrap_from_demonstrations, expert_policy, reward, BanditPolicy,
    RewardMode,
};
use crate::telemetry::{fit_normalizer, FeatureVector13, NormStats, TelemetryRecord};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Run logs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Unmitigated,
    StaticSevere,
    Adaptive,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Unmitigated => "unmitigated",
            Strategy::StaticSevere => "static_severe",
            Strategy::Adaptive => "adaptive",
        }
    }
}

/// Forecast moments the controller acted on at one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastLog {
    pub cycle: u32,
    pub mu_hat: f64,
    pub sigma_hat: f64,
}

/// Complete record of one run of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub strategy: Strategy,
    pub workload: String,
    pub seed: u64,
    pub records: Vec<TelemetryRecord>,
    pub total_cost: f64,
    /// Cycle counts per action, indexed like [`ActionKind::index`].
    pub action_histogram: [u64; 3],
    pub mean_fidelity: f64,
    /// Populated only by the adaptive controller.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forecasts: Vec<ForecastLog>,
}

// ---------------------------------------------------------------------------
// Controllers
// ---------------------------------------------------------------------------

/// How actions are chosen while a run unrolls.
enum Controller<'a> {
    /// The same action every cycle (baselines).
    Fixed(ActionKind),
    /// Threshold heuristic on the last observed p_eff, with optional
    /// uniform-random exploration for trace coverage.
    Expert { lo: f64, hi: f64, explore_prob: f64 },
    /// The trained stack: contextualize, forecast, Thompson-select, learn.
    Adaptive { stack: &'a TrainedStack, policy: BanditPolicy },
}

/// Behavior policy for offline trace collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorPolicy {
    /// Expert heuristic with the configured exploration probability.
    Expert,
    /// Uniform-random actions (ablation; maximal coverage, no skill).
    UniformRandom,
}

/// Encoded forecaster state for a logged record, exactly as the online loop
/// builds it: normalize → map to a context → encode with the record's own
/// cycle index.
pub fn encode_record_state(
    stack: &TrainedStack,
    rec: &TelemetryRecord,
    t_run: u32,
) -> Result<Vec<f64>> {
    let normalized = stack.norm_stats.normalize(&rec.features);
    let context = stack.contexts.map_context(&normalized);
    stack.forecaster.encoder.encode(
        context,
        rec.p_eff,
        rec.code_dist,
        rec.cycle,
        t_run,
        rec.fidelity,
    )
}

// ---------------------------------------------------------------------------
// Run loop
// ---------------------------------------------------------------------------

fn execute_run(
    config: &ExperimentConfig,
    workload: &WorkloadDescriptor,
    seed: u64,
    strategy: Strategy,
    mut controller: Controller<'_>,
) -> Result<RunLog> {
    let t_run = config.plant.drift.t_run;
    let costs = config.plant.actions.costs();
    let lambda = config.policy.lambda;
    let mode = config.policy.reward_mode;
    let p_nominal = config.plant.drift.p_phys0;

    let mut plant = Plant::new(config.plant.clone(), workload.clone(), seed)?;
    let mut policy_rng: ChaCha8Rng = stream_rng(seed, STREAM_POLICY);

    let mut records: Vec<TelemetryRecord> = Vec::with_capacity(t_run as usize);
    let mut forecasts: Vec<ForecastLog> = Vec::new();
    let mut histogram = [0u64; 3];
    let mut total_cost = 0.0;

    for t in 0..t_run {
        let prev = records.last();
        // Decide. The adaptive controller also reports the bandit context it
        // used, so the realized reward can be folded back in afterwards.
        let (action, context): (ActionKind, Option<Vec<f64>>) = match &mut controller {
            Controller::Fixed(a) => (*a, None),
            Controller::Expert { lo, hi, explore_prob } => {
                // Proxy on the drifting base rate, not the scaled effective
                // rate: thresholding the expert's own mitigated rate would
                // de-escalate it the moment its action starts working.
                let proxy = prev.map_or(p_nominal, |r| r.p_phys);
                let mut a = expert_policy(proxy, *lo, *hi);
                if *explore_prob > 0.0 && policy_rng.random::<f64>() < *explore_prob {
                    a = ActionKind::ALL[policy_rng.random_range(0..ActionKind::ALL.len())];
                }
                (a, None)
            }
            Controller::Adaptive { stack, policy } => match prev {
                // No telemetry yet: probe with the cheapest action.
                None => (ActionKind::None, None),
                Some(prev) => {
                    let state = encode_record_state(stack, prev, t_run)?;
                    let forecast = stack.forecaster.predict(&state)?;
                    let z = bandit_context(&state, forecast.mu_hat, forecast.sigma_hat);
                    let (idx, _) = policy.select(&z, &costs, &mut policy_rng)?;
                    forecasts.push(ForecastLog {
                        cycle: t,
                        mu_hat: forecast.mu_hat,
                        sigma_hat: forecast.sigma_hat,
                    });
                    (
                        ActionKind::from_index(idx).expect("selection index in range"),
                        Some(z),
                    )
                }
            },
        };

        let level = *config.plant.actions.level(action);
        let prev_eps = prev.map(|r| r.eps_logical);
        let mut rec = plant.step(&level)?;

        // Realized reward for reward-seeking controllers; baselines stay bare.
        if !matches!(controller, Controller::Fixed(_)) {
            rec.reward = match mode {
                RewardMode::Fidelity => Some(reward(0.0, rec.eps_logical, level.cost, lambda, mode)),
                RewardMode::ErrorDelta => prev_eps
                    .map(|e| reward(e, rec.eps_logical, level.cost, lambda, mode)),
            };
        }
        if let (Controller::Adaptive { policy, .. }, Some(z), Some(r)) =
            (&mut controller, &context, rec.reward)
        {
            policy.update(action.index(), z, r)?;
        }

        histogram[action.index()] += 1;
        total_cost += level.cost;
        records.push(rec);
    }

    let mean_fidelity = records.iter().map(|r| r.fidelity).sum::<f64>() / records.len() as f64;
    Ok(RunLog {
        strategy,
        workload: workload.name.clone(),
        seed,
        records,
        total_cost,
        action_histogram: histogram,
        mean_fidelity,
        forecasts,
    })
}

// ---------------------------------------------------------------------------
// Offline: trace collection and training
// ---------------------------------------------------------------------------

/// Run the plant once per seed under a behavior policy, rotating through the
/// configured workloads, and return each run's telemetry. Deterministic per
/// seed list.
pub fn collect_traces(
    config: &ExperimentConfig,
    seeds: &[u64],
    behavior: BehaviorPolicy,
) -> Result<Vec<Vec<TelemetryRecord>>> {
    let mut runs = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let workload = config.workload_for(i);
        let explore_prob = match behavior {
            BehaviorPolicy::Expert => config.policy.explore_prob,
            BehaviorPolicy::UniformRandom => 1.0,
        };
        let controller = Controller::Expert {
            lo: config.policy.expert_lo,
            hi: config.policy.expert_hi,
            explore_prob,
        };
        // Strategy label is irrelevant for training data; reuse Adaptive's
        // record plumbing without its policy.
        let log = execute_run(config, workload, seed, Strategy::Unmitigated, controller)?;
        runs.push(log.records);
    }
    Ok(runs)
}

/// Everything the online loop needs, trained from logged traces: the feature
/// normalizer, the context tree, the fidelity forecaster, and bandit priors
/// bootstrapped from the demonstrated actions. Serializes to a single JSON
/// artifact whose `content_hash` (SHA-256 of the body) detects corruption or
/// hand-editing on reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedStack {
    pub norm_stats: NormStats,
    pub contexts: GhsomTree,
    pub forecaster: SvgpModel,
    /// Bootstrapped per-action priors; cloned, never mutated, by online runs.
    pub policy: BanditPolicy,
    pub config: ExperimentConfig,
    pub content_hash: String,
}

impl TrainedStack {
    fn body_json(&self) -> Result<String> {
        let mut body = self.clone();
        body.content_hash = String::new();
        Ok(serde_json::to_string(&body)?)
    }

    fn compute_hash(&self) -> Result<String> {
        let body = self.body_json()?;
        let digest = Sha256::digest(body.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut stamped = self.clone();
        stamped.content_hash = self.compute_hash()?;
        Ok(serde_json::to_string(&stamped)?)
    }

    /// Parse and verify a stack artifact; `origin` names the source in
    /// integrity errors.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let stack: TrainedStack = serde_json::from_str(text)?;
        let expected = stack.compute_hash()?;
        if stack.content_hash != expected {
            return Err(Error::Integrity {
                path: origin.to_string(),
                detail: format!(
                    "content hash mismatch: stored {}, computed {}",
                    stack.content_hash, expected
                ),
            });
        }
        Ok(stack)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read stack file {}: {e}", path.display()))
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

/// Offline training: normalizer → context tree → forecaster → bandit priors.
///
/// Forecaster pairs are `(state_t, fidelity_{t+Δ})` within each run — the
/// last Δ cycles of a run are dropped rather than wrapped, so nothing leaks
/// across runs. Demonstrations pair each logged decision with the reward it
/// realized under the configured reward mode.
pub fn train_offline(
    runs: &[Vec<TelemetryRecord>],
    config: &ExperimentConfig,
) -> Result<TrainedStack> {
    if runs.iter().all(|r| r.is_empty()) {
        return Err(Error::InvalidData("training dataset is empty".into()));
    }
    let delta = config.svgp.delta as usize;
    let t_run = config.plant.drift.t_run;
    let seed = config.run.train_seed;

    // 1. Feature conditioning.
    let all_features: Vec<FeatureVector13> = runs
        .iter()
        .flat_map(|run| run.iter().map(|r| r.features))
        .collect();
    let norm_stats = fit_normalizer(&all_features, config.telemetry.std_floor)?;

    // 2. Context discovery on normalized features.
    let normalized: Vec<Vec<f64>> = runs
        .iter()
        .flat_map(|run| run.iter().map(|r| norm_stats.normalize(&r.features).to_vec()))
        .collect();
    let contexts = train_ghsom(&normalized, norm_stats.clone(), &config.ghsom, seed)?;

    // 3. Forecaster on (state, future fidelity) pairs.
    let encoder = StateEncoder {
        encoding: config.svgp.encoding,
        num_contexts: contexts.num_contexts as usize,
        include_distance: config.svgp.include_distance,
    };
    let encode = |rec: &TelemetryRecord| -> Result<Vec<f64>> {
        let context = contexts.map_context(&norm_stats.normalize(&rec.features));
        encoder.encode(context, rec.p_eff, rec.code_dist, rec.cycle, t_run, rec.fidelity)
    };
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for run in runs {
        if run.len() <= delta {
            continue; // too short to contribute a single pair
        }
        for t in 0..run.len() - delta {
            xs.push(encode(&run[t])?);
            ys.push(run[t + delta].fidelity);
        }
    }
    if xs.is_empty() {
        return Err(Error::InvalidData(format!(
            "no trainable pairs: every run is shorter than delta+1 = {} cycles",
            delta + 1
        )));
    }
    let mut svgp_cfg = config.svgp.clone();
    svgp_cfg.num_inducing = svgp_cfg.num_inducing.min(xs.len());
    let forecaster = svgp_train(&xs, &ys, encoder, &svgp_cfg, seed)?;

    // 4. Bandit priors from demonstrations. The context for the action logged
    // at cycle t+1 is built from cycle t's record — the same convention the
    // online loop uses when it decides from the previous cycle's telemetry —
    // and the reward is the one that action realized on its own cycle.
    let params = config.policy.params();
    let lambda = params.lambda;
    let mode = params.reward_mode;
    let mut demos: Vec<(Vec<f64>, ActionKind, f64)> = Vec::new();
    for run in runs {
        for t in 0..run.len().saturating_sub(1) {
            let action = run[t + 1].action_level;
            let cost = config.plant.actions.level(action).cost;
            let r = reward(run[t].eps_logical, run[t + 1].eps_logical, cost, lambda, mode);
            let state = encode(&run[t])?;
            let forecast = forecaster.predict(&state)?;
            demos.push((
                bandit_context(&state, forecast.mu_hat, forecast.sigma_hat),
                action,
                r,
            ));
        }
    }
    let z_dim = encoder.dim() + 3;
    let priors = BanditPolicy::new(z_dim, ActionKind::ALL.len(), params)?;
    let policy = bootstrap_from_demonstrations(&demos, priors)?;

    let mut stack = TrainedStack {
        norm_stats,
        contexts,
        forecaster,
        policy,
        config: config.clone(),
        content_hash: String::new(),
    };
    stack.content_hash = stack.compute_hash()?;
    Ok(stack)
}

// ---------------------------------------------------------------------------
// Online execution
// ---------------------------------------------------------------------------

/// One adaptive run: the five-step observe → contextualize → forecast →
/// decide → act loop, with the bandit posterior updating every cycle. The
/// stack itself is never mutated; runtime policy parameters (λ, exploration,
/// determinism) come from `config`, so flag overrides apply.
pub fn run_online(
    stack: &TrainedStack,
    config: &ExperimentConfig,
    workload: &WorkloadDescriptor,
    seed: u64,
) -> Result<RunLog> {
    let policy = BanditPolicy {
        models: stack.policy.models.clone(),
        params: config.policy.params(),
    };
    execute_run(
        config,
        workload,
        seed,
        Strategy::Adaptive,
        Controller::Adaptive { stack, policy },
    )
}

/// One fixed-action baseline run.
pub fn run_baseline(
    config: &ExperimentConfig,
    workload: &WorkloadDescriptor,
    seed: u64,
    action: ActionKind,
) -> Result<RunLog> {
    let strategy = match action {
        ActionKind::Severe => Strategy::StaticSevere,
        _ => Strategy::Unmitigated,
    };
    execute_run(config, workload, seed, strategy, Controller::Fixed(action))
}

// ---------------------------------------------------------------------------
// Paired comparison
// ---------------------------------------------------------------------------

/// The three strategies run against one (workload, seed) pair — identical
/// drift realization by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRuns {
    pub workload: String,
    pub seed: u64,
    pub unmitigated: RunLog,
    pub static_severe: RunLog,
    pub adaptive: RunLog,
}

/// One benchmark row: seed-averaged mean fidelities and the relative gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub class: String,
    pub benchmark: String,
    pub unmitigated: f64,
    pub adaptive: f64,
    /// `100·(adaptive/unmitigated − 1)`.
    pub gain_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: u32,
    pub n: u32,
    /// One-sided p-value: P[Binomial(n, ½) ≥ wins].
    pub p_value: f64,
}

/// Exact one-sided binomial sign test against p = ½; ties count as losses.
pub fn sign_test(wins: u32, n: u32) -> SignTest {
    // Σ_{k=wins..n} C(n,k) / 2^n, evaluated in log space for stability.
    let ln_half_n = f64::from(n) * 0.5f64.ln();
    let mut p = 0.0;
    for k in wins..=n {
        let mut ln_c = 0.0;
        for j in 0..k.min(n - k) {
            ln_c += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
        }
        p += (ln_c + ln_half_n).exp();
    }
    SignTest { wins, n, p_value: p.min(1.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<BenchmarkRow>,
    pub seeds: Vec<u64>,
    pub cost_adaptive: f64,
    pub cost_static: f64,
    /// `1 − cost_adaptive / cost_static`.
    pub cost_reduction: f64,
    /// Fraction of adaptive cycles spent at NONE.
    pub none_fraction: f64,
    /// Per-seed mean adaptive fidelity vs. unmitigated, across workloads.
    pub sign_test: SignTest,
    /// SEVERE usage within the noisiest vs. quietest quartile of cycles
    /// (noise ranked by the paired unmitigated run's effective rate).
    pub severe_frac_top_quartile: f64,
    pub severe_frac_bottom_quartile: f64,
}

/// Run all three strategies for every (workload, seed) pair and aggregate.
pub fn paired_comparison(
    stack: &TrainedStack,
    config: &ExperimentConfig,
    seeds: &[u64],
) -> Result<(ComparisonReport, Vec<PairedRuns>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidData("paired comparison needs at least one seed".into()));
    }
    let mut pairs: Vec<PairedRuns> = Vec::new();
    for workload in &config.workloads {
        for &seed in seeds {
            let unmitigated = run_baseline(config, workload, seed, ActionKind::None)?;
            let static_severe = run_baseline(config, workload, seed, ActionKind::Severe)?;
            let adaptive = run_online(stack, config, workload, seed)?;
            pairs.push(PairedRuns {
                workload: workload.name.clone(),
                seed,
                unmitigated,
                static_severe,
                adaptive,
            });
        }
    }

    // Benchmark rows: seed-averaged mean fidelity per workload.
    let mut rows = Vec::new();
    for workload in &config.workloads {
        let of_wl: Vec<&PairedRuns> =
            pairs.iter().filter(|p| p.workload == workload.name).collect();
        let n = of_wl.len() as f64;
        let f_u = of_wl.iter().map(|p| p.unmitigated.mean_fidelity).sum::<f64>() / n;
        let f_a = of_wl.iter().map(|p| p.adaptive.mean_fidelity).sum::<f64>() / n;
        rows.push(BenchmarkRow {
            class: format!("{:?}", workload.family),
            benchmark: workload.name.clone(),
            unmitigated: f_u,
            adaptive: f_a,
            gain_pct: 100.0 * (f_a / f_u - 1.0),
        });
    }

    // Costs and action usage.
    let cost_adaptive: f64 = pairs.iter().map(|p| p.adaptive.total_cost).sum();
    let cost_static: f64 = pairs.iter().map(|p| p.static_severe.total_cost).sum();
    let total_cycles: u64 =
        pairs.iter().map(|p| p.adaptive.records.len() as u64).sum();
    let none_cycles: u64 = pairs.iter().map(|p| p.adaptive.action_histogram[0]).sum();

    // Sign test: per seed, workload-averaged adaptive vs. unmitigated.
    let mut wins = 0u32;
    for &seed in seeds {
        let of_seed: Vec<&PairedRuns> = pairs.iter().filter(|p| p.seed == seed).collect();
        let n = of_seed.len() as f64;
        let f_a = of_seed.iter().map(|p| p.adaptive.mean_fidelity).sum::<f64>() / n;
        let f_u = of_seed.iter().map(|p| p.unmitigated.mean_fidelity).sum::<f64>() / n;
        if f_a > f_u {
            wins += 1;
        }
    }

    // Escalation profile: pool (noise level, action) cycles over all runs,
    // rank by the unmitigated partner's p_eff, compare SEVERE usage in the
    // top vs. bottom quartile.
    let mut noise_action: Vec<(f64, ActionKind)> = Vec::with_capacity(total_cycles as usize);
    for p in &pairs {
        for (u_rec, a_rec) in p.unmitigated.records.iter().zip(&p.adaptive.records) {
            noise_action.push((u_rec.p_eff, a_rec.action_level));
        }
    }
    noise_action.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite noise levels"));
    let quartile = noise_action.len() / 4;
    let severe_frac = |slice: &[(f64, ActionKind)]| {
        if slice.is_empty() {
            return 0.0;
        }
        slice.iter().filter(|(_, a)| *a == ActionKind::Severe).count() as f64
            / slice.len() as f64
    };
    let severe_bot = severe_frac(&noise_action[..quartile]);
    let severe_top = severe_frac(&noise_action[noise_action.len() - quartile..]);

    let report = ComparisonReport {
        rows,
        seeds: seeds.to_vec(),
        cost_adaptive,
        cost_static,
        cost_reduction: 1.0 - cost_adaptive / cost_static,
        none_fraction: none_cycles as f64 / total_cycles as f64,
        sign_test: sign_test(wins, seeds.len() as u32),
        severe_frac_top_quartile: severe_top,
        severe_frac_bottom_quartile: severe_bot,
    };
    Ok((report, pairs))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::DriftMode;

    /// Small, fast configuration for loop tests: short runs, tiny models.
    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::reference();
        cfg.plant.drift.t_run = 50;
        cfg.plant.drift.mode = DriftMode::Stochastic;
        cfg.ghsom.epochs = 8;
        cfg.ghsom.max_rows = 4;
        cfg.ghsom.max_cols = 4;
        cfg.svgp.num_inducing = 8;
        cfg.svgp.iters = 150;
        cfg.run.collect_seeds = vec![101, 102, 103];
        cfg.run.seeds = vec![1, 2, 3];
        cfg.workloads.truncate(3);
        cfg
    }

    fn small_stack(cfg: &ExperimentConfig) -> TrainedStack {
        let runs = collect_traces(cfg, &cfg.run.collect_seeds, BehaviorPolicy::Expert).unwrap();
        train_offline(&runs, cfg).unwrap()
    }

    #[test]
    fn collect_traces_counts_and_replays_deterministically() {
        let cfg = small_config();
        let runs = collect_traces(&cfg, &cfg.run.collect_seeds, BehaviorPolicy::Expert).unwrap();
        assert_eq!(runs.len(), 3);
        assert!(runs.iter().all(|r| r.len() == 50));
        let again = collect_traces(&cfg, &cfg.run.collect_seeds, BehaviorPolicy::Expert).unwrap();
        assert_eq!(runs, again);
        // Workload rotation: seed i gets workload i mod len.
        assert_eq!(runs[0][0].workload_name, cfg.workloads[0].name);
        assert_eq!(runs[1][0].workload_name, cfg.workloads[1].name);
        // Empty seed list → empty dataset, which training rejects.
        let empty = collect_traces(&cfg, &[], BehaviorPolicy::Expert).unwrap();
        assert!(empty.is_empty());
        assert!(train_offline(&empty, &cfg).is_err());
    }

    #[test]
    fn trace_rewards_follow_the_configured_mode() {
        let mut cfg = small_config();
        cfg.policy.reward_mode = RewardMode::ErrorDelta;
        let runs = collect_traces(&cfg, &[101], BehaviorPolicy::Expert).unwrap();
        let run = &runs[0];
        // error_delta: first cycle has no predecessor → no reward.
        assert_eq!(run[0].reward, None);
        let cost = cfg.plant.actions.level(run[1].action_level).cost;
        let expected =
            (run[0].eps_logical - run[1].eps_logical) - cfg.policy.lambda * cost;
        assert_eq!(run[1].reward, Some(expected));

        cfg.policy.reward_mode = RewardMode::Fidelity;
        let runs = collect_traces(&cfg, &[101], BehaviorPolicy::Expert).unwrap();
        let run = &runs[0];
        // fidelity: the action's own-cycle outcome is priced immediately.
        let cost0 = cfg.plant.actions.level(run[0].action_level).cost;
        let expected0 = (1.0 - run[0].eps_logical) - cfg.policy.lambda * cost0;
        assert_eq!(run[0].reward, Some(expected0));
    }

    #[test]
    fn training_rejects_runs_shorter_than_the_horizon() {
        let cfg = small_config();
        let mut runs = collect_traces(&cfg, &[101], BehaviorPolicy::Expert).unwrap();
        runs[0].truncate(1); // one cycle, delta = 1 → zero pairs
        let err = train_offline(&runs, &cfg).unwrap_err();
        assert!(err.to_string().contains("delta"), "{err}");
    }

    #[test]
    fn stack_round_trips_with_bit_identical_predictions() {
        let cfg = small_config();
        let stack = small_stack(&cfg);
        let json = stack.to_json().unwrap();
        let back = TrainedStack::from_json(&json, "test").unwrap();
        assert_eq!(stack.norm_stats, back.norm_stats);
        assert_eq!(stack.forecaster, back.forecaster);
        // Probe prediction on a real logged state.
        let runs = collect_traces(&cfg, &[101], BehaviorPolicy::Expert).unwrap();
        let state = encode_record_state(&stack, &runs[0][10], cfg.plant.drift.t_run).unwrap();
        let f1 = stack.forecaster.predict(&state).unwrap();
        let f2 = back.forecaster.predict(&state).unwrap();
        assert_eq!(f1.mu_hat.to_bits(), f2.mu_hat.to_bits());
        assert_eq!(f1.sigma_hat.to_bits(), f2.sigma_hat.to_bits());
    }

    #[test]
    fn tampered_stack_artifacts_are_rejected() {
        let cfg = small_config();
        let stack = small_stack(&cfg);
        let json = stack.to_json().unwrap();
        let tampered = json.replacen("\"p_phys0\":0.01", "\"p_phys0\":0.02", 1);
        assert_ne!(json, tampered, "tamper target not found");
        let err = TrainedStack::from_json(&tampered, "tampered.json").unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }), "{err:?}");
    }

    #[test]
    fn baselines_have_exact_costs_and_horizons() {
        let cfg = small_config();
        let wl = &cfg.workloads[0];
        let none = run_baseline(&cfg, wl, 7, ActionKind::None).unwrap();
        let severe = run_baseline(&cfg, wl, 7, ActionKind::Severe).unwrap();
        assert_eq!(none.records.len(), 50);
        assert_eq!(none.total_cost, 0.0);
        assert_eq!(severe.total_cost, 50.0);
        assert_eq!(none.action_histogram, [50, 0, 0]);
        assert_eq!(severe.action_histogram, [0, 0, 50]);
        let mean = none.records.iter().map(|r| r.fidelity).sum::<f64>() / 50.0;
        assert_eq!(none.mean_fidelity, mean);
        // Mitigation helps on the same drift realization.
        assert!(severe.mean_fidelity >= none.mean_fidelity);
        // Baselines carry no rewards.
        assert!(none.records.iter().all(|r| r.reward.is_none()));
    }

    #[test]
    fn strategies_share_bitwise_identical_drift() {
        let cfg = small_config();
        let stack = small_stack(&cfg);
        let wl = &cfg.workloads[2];
        let a = run_baseline(&cfg, wl, 11, ActionKind::None).unwrap();
        let b = run_baseline(&cfg, wl, 11, ActionKind::Severe).unwrap();
        let c = run_online(&stack, &cfg, wl, 11).unwrap();
        for t in 0..50 {
            assert_eq!(a.records[t].p_phys.to_bits(), b.records[t].p_phys.to_bits());
            assert_eq!(a.records[t].p_phys.to_bits(), c.records[t].p_phys.to_bits());
        }
    }

    #[test]
    fn prohibitive_lambda_collapses_to_all_none() {
        let cfg = small_config();
        let stack = small_stack(&cfg);
        let mut run_cfg = cfg.clone();
        run_cfg.policy.lambda = 1e9;
        run_cfg.policy.deterministic = true;
        let wl = &cfg.workloads[0];
        let adaptive = run_online(&stack, &run_cfg, wl, 5).unwrap();
        assert_eq!(adaptive.action_histogram, [50, 0, 0]);
        // Physically identical to the unmitigated baseline on that seed.
        let baseline = run_baseline(&run_cfg, wl, 5, ActionKind::None).unwrap();
        for (a, b) in adaptive.records.iter().zip(&baseline.records) {
            assert_eq!(a.p_eff.to_bits(), b.p_eff.to_bits());
            assert_eq!(a.fidelity.to_bits(), b.fidelity.to_bits());
        }
    }

    #[test]
    fn rigged_bootstrap_replays_the_expert_exactly() {
        // A bootstrap that provably encodes the expert: with thresholds
        // spanning the whole reachable p_eff range the expert is constantly
        // MODERATE. Demonstrations pay MODERATE r = 1000 at every logged
        // trace context — the same region of context space the online run
        // visits — while the other actions keep their zero priors. The ridge
        // prediction for MODERATE then stays in the hundreds across that
        // region, a margin the run's own per-cycle reward updates (|r| ≪ 1)
        // cannot erode, so deterministic selection must replay the expert
        // decision for the entire run.
        let cfg = small_config();
        let mut stack = small_stack(&cfg);
        let mut run_cfg = cfg.clone();
        run_cfg.policy.lambda = 0.0;
        run_cfg.policy.deterministic = true;
        run_cfg.policy.expert_lo = 1e-6; // below both rate-clip floors
        run_cfg.policy.expert_hi = 1.0;

        let runs = collect_traces(&cfg, &cfg.run.collect_seeds, BehaviorPolicy::Expert).unwrap();
        let mut demos = Vec::new();
        for run in &runs {
            for rec in run {
                let state = encode_record_state(&stack, rec, cfg.plant.drift.t_run).unwrap();
                let f = stack.forecaster.predict(&state).unwrap();
                let z = bandit_context(&state, f.mu_hat, f.sigma_hat);
                demos.push((z, ActionKind::Moderate, 1000.0));
            }
        }
        let priors = BanditPolicy::new(stack.policy.dim(), 3, run_cfg.policy.params()).unwrap();
        stack.policy = bootstrap_from_demonstrations(&demos, priors).unwrap();

        let wl = &cfg.workloads[0];
        let log = run_online(&stack, &run_cfg, wl, 9).unwrap();
        assert_eq!(log.records[0].action_level, ActionKind::None); // probe
        for t in 1..log.records.len() {
            let expected = expert_policy(
                log.records[t - 1].p_eff,
                run_cfg.policy.expert_lo,
                run_cfg.policy.expert_hi,
            );
            assert_eq!(expected, ActionKind::Moderate);
            assert_eq!(
                log.records[t].action_level,
                expected,
                "cycle {t}: proxy {}",
                log.records[t - 1].p_eff
            );
        }
    }

    #[test]
    fn online_runs_are_seed_deterministic() {
        let cfg = small_config();
        let stack = small_stack(&cfg);
        let wl = &cfg.workloads[1];
        let a = run_online(&stack, &cfg, wl, 3).unwrap();
        let b = run_online(&stack, &cfg, wl, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sign_test_matches_hand_binomials() {
        let t = sign_test(10, 10);
        assert!((t.p_value - 1.0 / 1024.0).abs() < 1e-12);
        let t = sign_test(0, 10);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let t = sign_test(8, 10);
        // C(10,8)+C(10,9)+C(10,10) = 45+10+1 = 56 → 56/1024.
        assert!((t.p_value - 56.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn paired_comparison_report_is_internally_consistent() {
        let cfg = small_config();
        let stack = small_stack(&cfg);
        let (report, pairs) = paired_comparison(&stack, &cfg, &cfg.run.seeds).unwrap();
        assert_eq!(pairs.len(), 9); // 3 workloads × 3 seeds
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            let expected = 100.0 * (row.adaptive / row.unmitigated - 1.0);
            assert!((row.gain_pct - expected).abs() < 1e-12);
        }
        assert!(
            (report.cost_reduction - (1.0 - report.cost_adaptive / report.cost_static)).abs()
                < 1e-12
        );
        assert_eq!(report.cost_static, 9.0 * 50.0);
        for p in &pairs {
            assert_eq!(p.adaptive.action_histogram.iter().sum::<u64>(), 50);
            let cost_sum: f64 = p
                .adaptive
                .records
                .iter()
                .map(|r| cfg.plant.actions.level(r.action_level).cost)
                .sum();
            assert_eq!(cost_sum, p.adaptive.total_cost);
            assert!(p.adaptive.total_cost <= p.static_severe.total_cost);
        }
        let nf = report.none_fraction;
        assert!((0.0..=1.0).contains(&nf));
    }

    #[test]
    fn infinite_lambda_makes_adaptive_rows_equal_unmitigated() {
        let cfg = small_config();
        let stack = small_stack(&cfg);
        let mut run_cfg = cfg.clone();
        run_cfg.policy.lambda = 1e9;
        run_cfg.policy.deterministic = true;
        run_cfg.workloads.truncate(1);
        let (report, _) = paired_comparison(&stack, &run_cfg, &[4]).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.unmitigated.to_bits(), row.adaptive.to_bits());
        assert_eq!(report.none_fraction, 1.0);
    }

    #[test]
    fn constant_fidelity_dataset_forecasts_the_constant() {
        // Synthesize a run whose fidelity never moves; the trained stack must
        // predict that constant on its own training states.
        use crate::plant::WorkloadFamily;
        use crate::telemetry::{build_features, FeatureInputs};
        let mut cfg = small_config();
        cfg.svgp.num_inducing = 8;
        let wl = WorkloadDescriptor {
            name: "flatline".into(),
            n_qubits: 3,
            depth: 4,
            gate_count: 6,
            t_count: 0,
            two_qubit_count: 2,
            family: WorkloadFamily::Clifford,
        };
        let mut history = Vec::new();
        let run: Vec<TelemetryRecord> = (0..60u32)
            .map(|t| {
                // p_eff wiggles (so features vary) but fidelity stays fixed.
                let p_eff = 0.01 + 0.002 * f64::from(t % 7);
                let eps = 0.05;
                history.push(eps);
                let features = build_features(&FeatureInputs {
                    cycle: t,
                    t_run: 60,
                    workload: &wl,
                    p_eff,
                    eps_logical: eps,
                    entropy_bits: 0.3,
                    history: &history,
                    window: 10,
                });
                TelemetryRecord {
                    cycle: t,
                    code_dist: 5,
                    p_phys: p_eff,
                    p_eff,
                    eps_logical: eps,
                    fidelity: 0.95,
                    detection_rate: 0.1,
                    features,
                    action_level: ActionKind::None,
                    reward: None,
                    workload_name: wl.name.clone(),
                }
            })
            .collect();
        cfg.plant.drift.t_run = 60;
        let stack = train_offline(std::slice::from_ref(&run), &cfg).unwrap();
        for rec in run.iter().take(59) {
            let state = encode_record_state(&stack, rec, 60).unwrap();
            let f = stack.forecaster.predict(&state).unwrap();
            assert!(
                (f.mu_hat - 0.95).abs() <= 0.01,
                "cycle {}: forecast {} far from 0.95",
                rec.cycle,
                f.mu_hat
            );
        }
    }
}
