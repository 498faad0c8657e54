//! Repetition-code logical memory under drifting bit-flip noise.
//!
//! The plant stands in for a distance-d repetition code exposed to an
//! independent bit-flip channel whose physical rate drifts over the run. Under
//! that channel and computational-basis readout the full circuit collapses to
//! `d` independent Bernoulli(p_eff) flips per shot, so the module samples that
//! classical equivalent directly and keeps exact binomial oracles alongside
//! the Monte Carlo path. An intervention level rescales the physical rate
//! before sampling, which is what the controller ultimately steers.
//!
//! Two evaluation backends share the same drift and intervention plumbing:
//!
//! * **memory** — shot-sampled repetition-code memory cycles with majority
//!   decoding, detection flags, and an outcome histogram;
//! * **workload** — a deterministic surrogate that maps a gate-count
//!   descriptor to a logical error via `1 − (1 − p_eff)^G`. The surrogate is
//!   deliberately simple (monotone error accumulation, no entanglement
//!   structure) and is isolated behind [`surrogate_workload_error`] so it can
//!   be swapped without touching the control stack.
//!
//! Determinism is load-bearing everywhere: all randomness flows through
//! counter-style ChaCha streams derived from a master seed, with separate
//! streams for drift, logical-bit draws, shot noise, and the policy, so an
//! action choice at cycle t can never perturb the noise realization at cycle
//! t+1. That is what makes paired counterfactual runs (same drift, different
//! controller) meaningful.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{self, FeatureInputs, TelemetryRecord};

/// Code distances the decoder and the analytic oracles support.
pub const VALID_DISTANCES: [u32; 3] = [1, 3, 5];

/// Clip bounds applied to the effective (post-intervention) rate.
pub const EFF_CLIP_LO: f64 = 1e-5;
pub const EFF_CLIP_HI: f64 = 0.5;

// ---------------------------------------------------------------------------
// RNG stream discipline
// ---------------------------------------------------------------------------

/// Stream kinds carved out of the ChaCha stream id space.
///
/// Per-cycle streams are derived as `(cycle << 3) | kind`, so every cycle of
/// every kind gets an independent, order-free stream: stepping a plant with a
/// different action sequence replays the identical drift, logical-bit, and
/// shot randomness cycle for cycle. The policy stream is sequential (one
/// generator advanced across the run) because decisions are inherently
/// ordered.
pub const STREAM_DRIFT: u64 = 0;
pub const STREAM_BIT: u64 = 1;
pub const STREAM_SHOTS: u64 = 2;
pub const STREAM_POLICY: u64 = 3;

/// RNG for a (seed, kind, cycle) triple. Independent of call order.
pub fn cycle_rng(seed: u64, kind: u64, cycle: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(cycle) << 3) | kind);
    rng
}

/// RNG for a run-scoped sequential stream (policy decisions, expert jitter).
pub fn stream_rng(seed: u64, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind);
    rng
}

// ---------------------------------------------------------------------------
// Drift process
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    /// Pure sinusoid: same (seed, t) always yields the same base rate.
    Deterministic,
    /// Sinusoid plus zero-mean Gaussian jitter inside the bracket.
    Stochastic,
}

/// Optional mid-run surge added inside the drift bracket.
///
/// The published drift is a slow sinusoid; stress scenarios additionally want
/// a rapid rise to a peak partway through the run. The surge is modeled as a
/// Gaussian bump `gain·exp(−½((t−c)/w)²)` with `c = center_frac·T_run` and
/// `w = width_frac·T_run`, which keeps the schedule smooth and clip-safe.
/// This functional form is a configuration choice, not a physical claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakSchedule {
    pub center_frac: f64,
    pub width_frac: f64,
    pub gain: f64,
}

impl Default for PeakSchedule {
    fn default() -> Self {
        PeakSchedule { center_frac: 0.5, width_frac: 0.1, gain: 1.5 }
    }
}

/// Parameters of the drifting base error rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftParams {
    /// Nominal physical error rate the drift oscillates around.
    pub p_phys0: f64,
    /// Cycles per run.
    pub t_run: u32,
    /// Relative sinusoid amplitude α.
    pub amplitude: f64,
    /// Std dev of the per-cycle jitter ξ_t (stochastic mode only).
    pub noise_sigma: f64,
    pub mode: DriftMode,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Optional mid-run surge.
    pub peak: Option<PeakSchedule>,
}

impl Default for DriftParams {
    /// The reference drift schedule: stochastic sinusoid with a mid-run
    /// surge. Tests that need exact anchor values construct deterministic
    /// parameters explicitly.
    fn default() -> Self {
        DriftParams {
            p_phys0: 0.01,
            t_run: 200,
            amplitude: 0.5,
            noise_sigma: 0.05,
            mode: DriftMode::Stochastic,
            clip_lo: 1e-4,
            clip_hi: 0.5,
            peak: Some(PeakSchedule::default()),
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_phys0 > 0.0 && self.p_phys0 <= self.clip_hi) {
            return Err(Error::Config(format!(
                "p_phys0 = {} must lie in (0, clip_hi = {}]",
                self.p_phys0, self.clip_hi
            )));
        }
        if !(self.clip_lo < self.clip_hi && self.clip_hi <= 0.5 && self.clip_lo > 0.0) {
            return Err(Error::Config(format!(
                "drift clips ({}, {}) must satisfy 0 < lo < hi <= 0.5",
                self.clip_lo, self.clip_hi
            )));
        }
        if self.amplitude < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config(
                "drift amplitude and noise_sigma must be nonnegative".into(),
            ));
        }
        if self.t_run < 2 {
            return Err(Error::Config(format!(
                "t_run = {} must be at least 2",
                self.t_run
            )));
        }
        if let Some(p) = &self.peak {
            if !(p.width_frac > 0.0 && p.gain >= 0.0 && (0.0..=1.0).contains(&p.center_frac)) {
                return Err(Error::Config(
                    "peak schedule needs width_frac > 0, gain >= 0, center_frac in [0,1]".into(),
                ));
            }
        }
        Ok(())
    }
}

fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.clamp(lo, hi)
}

/// Base physical error rate at cycle `t`.
///
/// `p_base(t) = clip(p_phys0 · [1 + α·sin(2πt/T_run) + ξ_t + surge(t)], lo, hi)`
/// where `ξ_t ~ N(0, σ²)` is drawn only in stochastic mode. The RNG must be
/// the drift stream for cycle `t`; the draw happens once per call regardless
/// of the action taken, so paired runs see identical drift.
pub fn drift_base_rate<R: Rng>(t: u32, params: &DriftParams, rng: &mut R) -> f64 {
    let phase = TAU * f64::from(t) / f64::from(params.t_run);
    let mut bracket = 1.0 + params.amplitude * phase.sin();
    if params.mode == DriftMode::Stochastic {
        // Normal::new only fails on non-finite/negative sigma, which
        // validate() excludes; sigma == 0 is a valid degenerate draw.
        let noise = Normal::new(0.0, params.noise_sigma).expect("validated sigma");
        bracket += noise.sample(rng);
    }
    if let Some(peak) = &params.peak {
        let center = peak.center_frac * f64::from(params.t_run);
        let width = peak.width_frac * f64::from(params.t_run);
        let z = (f64::from(t) - center) / width;
        bracket += peak.gain * (-0.5 * z * z).exp();
    }
    clip(params.p_phys0 * bracket, params.clip_lo, params.clip_hi)
}

// ---------------------------------------------------------------------------
// Intervention levels
// ---------------------------------------------------------------------------

/// The three intervention strengths the controller can apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActionKind {
    None,
    Moderate,
    Severe,
}

impl ActionKind {
    pub const ALL: [ActionKind; 3] = [ActionKind::None, ActionKind::Moderate, ActionKind::Severe];

    /// Dense index used for per-action arrays and histograms.
    pub fn index(self) -> usize {
        match self {
            ActionKind::None => 0,
            ActionKind::Moderate => 1,
            ActionKind::Severe => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<ActionKind> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            ActionKind::None => "NONE",
            ActionKind::Moderate => "MODERATE",
            ActionKind::Severe => "SEVERE",
        }
    }
}

impl std::fmt::Display for ActionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One intervention level: a rate scale `s` in (0,1] and a cost `C` in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionLevel {
    pub kind: ActionKind,
    pub scale: f64,
    pub cost: f64,
}

/// The ordered intervention library (NONE, MODERATE, SEVERE).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSet {
    pub levels: [ActionLevel; 3],
}

impl Default for ActionSet {
    fn default() -> Self {
        // Scales drawn from the supported factor set {1.0, 0.9, 0.7, 0.5, 0.3}:
        // monotone representatives for the three levels.
        ActionSet {
            levels: [
                ActionLevel { kind: ActionKind::None, scale: 1.0, cost: 0.0 },
                ActionLevel { kind: ActionKind::Moderate, scale: 0.7, cost: 0.3 },
                ActionLevel { kind: ActionKind::Severe, scale: 0.3, cost: 1.0 },
            ],
        }
    }
}

impl ActionSet {
    pub fn level(&self, kind: ActionKind) -> &ActionLevel {
        &self.levels[kind.index()]
    }

    pub fn costs(&self) -> [f64; 3] {
        [
            self.levels[0].cost,
            self.levels[1].cost,
            self.levels[2].cost,
        ]
    }

    /// Stronger levels must suppress strictly more (smaller scale) and cost
    /// strictly more; NONE is the identity at zero cost.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.levels.iter().enumerate() {
            if l.kind.index() != i {
                return Err(Error::Config(format!(
                    "action levels out of order: slot {i} holds {}",
                    l.kind
                )));
            }
            if !(l.scale > 0.0 && l.scale <= 1.0) || !(0.0..=1.0).contains(&l.cost) {
                return Err(Error::Config(format!(
                    "action {} needs scale in (0,1] and cost in [0,1]",
                    l.kind
                )));
            }
        }
        let [n, m, s] = &self.levels;
        if n.scale != 1.0 || n.cost != 0.0 {
            return Err(Error::Config("NONE must have scale 1.0 and cost 0.0".into()));
        }
        if !(m.scale > s.scale && n.scale > m.scale) {
            return Err(Error::Config("scales must strictly decrease with strength".into()));
        }
        if !(m.cost < s.cost && n.cost < m.cost) {
            return Err(Error::Config("costs must strictly increase with strength".into()));
        }
        Ok(())
    }
}

/// Effective post-intervention rate: `clip(s·p_base, 1e-5, 0.5)`.
pub fn effective_rate(p_base: f64, scale: f64) -> f64 {
    clip(scale * p_base, EFF_CLIP_LO, EFF_CLIP_HI)
}

// ---------------------------------------------------------------------------
// Repetition-code sampling and analytic oracles
// ---------------------------------------------------------------------------

/// Decode a d-bit pattern (bit j = qubit j) by majority vote.
///
/// Returns the majority bit and whether the shot was non-unanimous.
fn decode_pattern(pattern: u32, d: u32) -> (u8, bool) {
    let ones = pattern.count_ones();
    let b_hat = u8::from(ones * 2 > d);
    let detect = ones != 0 && ones != d;
    (b_hat, detect)
}

/// Majority-decode a measured bitstring such as `"00100"`.
///
/// The string must be odd-length over {'0','1'} so the vote cannot tie.
pub fn majority_decode(bits: &str) -> Result<(u8, bool)> {
    let d = bits.len();
    if d == 0 || d.is_multiple_of(2) || !bits.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(Error::InvalidBits(bits.to_string()));
    }
    let mut pattern: u32 = 0;
    for (j, b) in bits.bytes().enumerate() {
        pattern |= u32::from(b == b'1') << j;
    }
    Ok(decode_pattern(pattern, d as u32))
}

/// Shot-level counts for one memory cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleCounts {
    pub shots: u64,
    pub decode_errors: u64,
    pub detection_events: u64,
    /// Measured d-bit string (char j = qubit j) → occurrence count.
    pub bitstring_histogram: BTreeMap<String, u64>,
}

impl CycleCounts {
    /// Empirical outcome distribution in histogram order.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.shots as f64;
        self.bitstring_histogram.values().map(|&c| c as f64 / n).collect()
    }
}

/// Sample one memory cycle: `shots` repetitions of d independent
/// Bernoulli(p_eff) flips applied to the encoded bit `true_bit`, majority
/// decoded per shot.
pub fn sample_memory_cycle<R: Rng>(
    d: u32,
    p_eff: f64,
    shots: u64,
    true_bit: u8,
    rng: &mut R,
) -> CycleCounts {
    debug_assert!(VALID_DISTANCES.contains(&d));
    debug_assert!(shots >= 1);
    let base: u32 = if true_bit == 1 { (1 << d) - 1 } else { 0 };
    let mut hist = vec![0u64; 1 << d];
    let mut decode_errors = 0u64;
    let mut detection_events = 0u64;
    for _ in 0..shots {
        let mut pattern = base;
        for j in 0..d {
            if rng.random::<f64>() < p_eff {
                pattern ^= 1 << j;
            }
        }
        hist[pattern as usize] += 1;
        let (b_hat, detect) = decode_pattern(pattern, d);
        decode_errors += u64::from(b_hat != true_bit);
        detection_events += u64::from(detect);
    }
    let bitstring_histogram = hist
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .map(|(pattern, c)| {
            let s: String = (0..d)
                .map(|j| if pattern as u32 >> j & 1 == 1 { '1' } else { '0' })
                .collect();
            (s, c)
        })
        .collect();
    CycleCounts { shots, decode_errors, detection_events, bitstring_histogram }
}

fn binomial(n: u32, k: u32) -> f64 {
    // Exact for the tiny n used here (n ≤ 5 fits comfortably in u64).
    let mut num = 1u64;
    let mut den = 1u64;
    for i in 0..k.min(n - k) {
        num *= u64::from(n - i);
        den *= u64::from(i + 1);
    }
    (num / den) as f64
}

/// Exact logical error rate of majority decoding:
/// `Σ_{k=⌈d/2⌉}^{d} C(d,k) p^k (1−p)^{d−k}`.
pub fn analytic_logical_error(d: u32, p: f64) -> f64 {
    debug_assert!(d % 2 == 1);
    let k0 = d / 2 + 1;
    (k0..=d)
        .map(|k| binomial(d, k) * p.powi(k as i32) * (1.0 - p).powi((d - k) as i32))
        .sum()
}

/// Exact non-unanimous-shot rate: `1 − (1−p)^d − p^d`.
pub fn analytic_detection_rate(d: u32, p: f64) -> f64 {
    1.0 - (1.0 - p).powi(d as i32) - p.powi(d as i32)
}

/// Distance-scaling factor Λ(d₁→d₂) = ε(d₁)/ε(d₂).
pub fn lambda_factor(eps_d1: f64, eps_d2: f64) -> Result<f64> {
    if eps_d2 == 0.0 {
        return Err(Error::DegenerateRatio);
    }
    Ok(eps_d1 / eps_d2)
}

// ---------------------------------------------------------------------------
// Workload surrogate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadFamily {
    Clifford,
    NonClifford,
    Structured,
}

/// Gate-count summary of a benchmark circuit.
///
/// Only the counts matter to the surrogate error model and the feature
/// vector; no circuit structure is represented.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadDescriptor {
    pub name: String,
    pub n_qubits: u32,
    pub depth: u32,
    pub gate_count: u32,
    pub t_count: u32,
    pub two_qubit_count: u32,
    pub family: WorkloadFamily,
}

impl WorkloadDescriptor {
    /// Descriptor for the raw memory experiment itself: d data qubits holding
    /// one encoded bit for a single round.
    pub fn memory(d: u32) -> Self {
        WorkloadDescriptor {
            name: format!("memory_d{d}"),
            n_qubits: d,
            depth: 1,
            gate_count: d,
            t_count: 0,
            two_qubit_count: d.saturating_sub(1),
            family: WorkloadFamily::Clifford,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("workload name must be nonempty".into()));
        }
        if !(self.gate_count >= self.depth && self.depth >= 1 && self.n_qubits >= 1) {
            return Err(Error::Config(format!(
                "workload {:?} needs gate_count >= depth >= 1 and n_qubits >= 1",
                self.name
            )));
        }
        if self.t_count > self.gate_count || self.two_qubit_count > self.gate_count {
            return Err(Error::Config(format!(
                "workload {:?}: t_count and two_qubit_count cannot exceed gate_count",
                self.name
            )));
        }
        Ok(())
    }
}

/// Surrogate workload logical error: `clip(1 − (1 − p_eff)^G, 0, 1)`.
///
/// A deliberately simple accumulation model — every gate independently
/// corrupts the output with probability p_eff — standing in for a
/// distribution-distance measurement on the real circuit.
pub fn surrogate_workload_error(w: &WorkloadDescriptor, p_eff: f64) -> f64 {
    clip(1.0 - (1.0 - p_eff).powi(w.gate_count as i32), 0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Plant state machine
// ---------------------------------------------------------------------------

/// Evaluation backend for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Memory,
    Workload,
}

/// Static configuration of a plant instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub kind: PlantKind,
    pub code_distance: u32,
    pub shots: u64,
    pub drift: DriftParams,
    pub actions: ActionSet,
    /// Rolling-window length for the trailing error statistics.
    pub window: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            kind: PlantKind::Workload,
            code_distance: 5,
            shots: 2000,
            drift: DriftParams::default(),
            actions: ActionSet::default(),
            window: 10,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !VALID_DISTANCES.contains(&self.code_distance) {
            return Err(Error::InvalidDistance(self.code_distance));
        }
        if self.shots == 0 {
            return Err(Error::Config("shots must be >= 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        self.drift.validate()?;
        self.actions.validate()
    }
}

/// The stateful plant: owns the cycle counter, the master seed, and the
/// trailing logical-error window; every step draws its randomness from
/// per-cycle streams derived from the seed.
#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    workload: WorkloadDescriptor,
    seed: u64,
    cycle: u32,
    last_p_base: f64,
    last_p_eff: f64,
    last_eps: f64,
    eps_history: Vec<f64>,
}

impl Plant {
    pub fn new(config: PlantConfig, workload: WorkloadDescriptor, seed: u64) -> Result<Self> {
        config.validate()?;
        workload.validate()?;
        Ok(Plant {
            config,
            workload,
            seed,
            cycle: 0,
            last_p_base: 0.0,
            last_p_eff: 0.0,
            last_eps: 0.0,
            eps_history: Vec::new(),
        })
    }

    /// Reinitialize time and the drift process under a (possibly new) seed.
    pub fn reset(&mut self, seed: u64) {
        self.seed = seed;
        self.cycle = 0;
        self.last_p_base = 0.0;
        self.last_p_eff = 0.0;
        self.last_eps = 0.0;
        self.eps_history.clear();
    }

    pub fn cycle(&self) -> u32 {
        self.cycle
    }

    pub fn t_run(&self) -> u32 {
        self.config.drift.t_run
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn workload(&self) -> &WorkloadDescriptor {
        &self.workload
    }

    pub fn last_p_eff(&self) -> f64 {
        self.last_p_eff
    }

    pub fn last_p_base(&self) -> f64 {
        self.last_p_base
    }

    pub fn last_fidelity(&self) -> f64 {
        1.0 - self.last_eps
    }

    /// Advance one cycle under intervention `action` and emit the telemetry
    /// record for the cycle just executed.
    ///
    /// Drift, the encoded logical bit, and shot noise each come from their
    /// own per-cycle stream, so the realization at cycle t is identical
    /// across runs that share a seed no matter which actions were taken.
    pub fn step(&mut self, action: &ActionLevel) -> Result<TelemetryRecord> {
        let t = self.cycle;
        let drift = &self.config.drift;
        if t >= drift.t_run {
            return Err(Error::EndOfRun { cycle: t, t_run: drift.t_run });
        }
        let d = self.config.code_distance;

        let p_base = {
            let mut rng = cycle_rng(self.seed, STREAM_DRIFT, t);
            drift_base_rate(t, drift, &mut rng)
        };
        let p_eff = effective_rate(p_base, action.scale);

        let (eps, detection_rate, entropy_bits) = match self.config.kind {
            PlantKind::Memory => {
                let true_bit = u8::from(cycle_rng(self.seed, STREAM_BIT, t).random::<bool>());
                let mut shot_rng = cycle_rng(self.seed, STREAM_SHOTS, t);
                let counts =
                    sample_memory_cycle(d, p_eff, self.config.shots, true_bit, &mut shot_rng);
                let n = counts.shots as f64;
                let eps = counts.decode_errors as f64 / n;
                let det = counts.detection_events as f64 / n;
                let h = telemetry::shannon_entropy(&counts.probabilities())?;
                (eps, det, h)
            }
            PlantKind::Workload => {
                // The surrogate has no shot record to histogram; report the
                // channel's analytic detection rate at this distance and the
                // entropy of the pass/fail outcome distribution instead.
                let eps = surrogate_workload_error(&self.workload, p_eff);
                let det = analytic_detection_rate(d, p_eff);
                let h = telemetry::shannon_entropy(&[1.0 - eps, eps])?;
                (eps, det, h)
            }
        };

        let features = telemetry::build_features(&FeatureInputs {
            cycle: t,
            t_run: drift.t_run,
            workload: &self.workload,
            p_eff,
            eps_logical: eps,
            entropy_bits,
            history: &self.eps_history,
            window: self.config.window,
        });

        self.eps_history.push(eps);
        self.last_p_base = p_base;
        self.last_p_eff = p_eff;
        self.last_eps = eps;
        self.cycle = t + 1;

        Ok(TelemetryRecord {
            cycle: t,
            code_dist: d,
            p_phys: p_base,
            p_eff,
            eps_logical: eps,
            fidelity: 1.0 - eps,
            detection_rate,
            features,
            action_level: action.kind,
            reward: None,
            workload_name: self.workload.name.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
