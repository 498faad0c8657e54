//! Per-cycle telemetry: feature construction, normalization, persistence.
//!
//! Every control cycle is summarized by a [`TelemetryRecord`] carrying the
//! raw rates plus a fixed 13-slot feature vector consumed by the context
//! mapper, the forecaster, and the policy. The slots are, in order (1-based
//! here, 0-based in code):
//!
//! | slot | value                                  |
//! |------|----------------------------------------|
//! | 1    | t / (T_run − 1)                        |
//! | 2    | n_qubits / 10                          |
//! | 3    | depth / 100                            |
//! | 4    | p_eff                                  |
//! | 5    | ε_L (logical error)                    |
//! | 6    | F_L (logical fidelity)                 |
//! | 7    | H(p̂) / 10 (outcome entropy, bits)      |
//! | 8    | t_count / 50                           |
//! | 9    | two_qubit_count / 100                  |
//! | 10   | log10(max(ε_L, 1e-9))                  |
//! | 11   | log10(max(p_eff, 1e-9))                |
//! | 12   | rolling mean of ε_L over the window    |
//! | 13   | rolling population variance of ε_L     |
//!
//! Records persist as line-delimited JSON, one object per cycle, with floats
//! written at full round-trip precision so replay is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{ActionKind, WorkloadDescriptor};

/// Dimensionality of the context feature vector.
pub const FEATURE_DIM: usize = 13;

/// Floor applied inside the log10 feature slots.
pub const LOG_FLOOR: f64 = 1e-9;

/// Default floor for normalizer standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Record and feature vector
// ---------------------------------------------------------------------------

/// The 13-dimensional context/policy input for one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector13(pub [f64; FEATURE_DIM]);

impl FeatureVector13 {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One control cycle's full observation.
///
/// `fidelity` serializes as `"fidelity_logical"`; the remaining names are the
/// wire schema verbatim, so logs interoperate across implementations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub cycle: u32,
    pub code_dist: u32,
    /// Drifting base rate before intervention (the drift knob).
    pub p_phys: f64,
    pub p_eff: f64,
    pub eps_logical: f64,
    #[serde(rename = "fidelity_logical")]
    pub fidelity: f64,
    pub detection_rate: f64,
    pub features: FeatureVector13,
    pub action_level: ActionKind,
    /// Filled in once the following cycle's outcome is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    pub workload_name: String,
}

/// Raw ingredients for one feature vector.
pub struct FeatureInputs<'a> {
    pub cycle: u32,
    pub t_run: u32,
    pub workload: &'a WorkloadDescriptor,
    pub p_eff: f64,
    pub eps_logical: f64,
    /// Shannon entropy (bits) of the cycle's outcome distribution.
    pub entropy_bits: f64,
    /// Logical errors of preceding cycles, oldest first (current excluded).
    pub history: &'a [f64],
    pub window: usize,
}

/// Shannon entropy in bits of a probability vector; zero entries contribute 0.
pub fn shannon_entropy(dist: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &p in dist {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidDistribution(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum())
}

/// Mean and population variance of the last `min(w, len)` entries.
///
/// Empty history yields `(0, 0)` — the defined cold-start convention.
pub fn window_stats(history: &[f64], w: usize) -> (f64, f64) {
    let tail = &history[history.len().saturating_sub(w)..];
    if tail.is_empty() {
        return (0.0, 0.0);
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Assemble the 13-slot feature vector. Pure: identical inputs produce
/// bit-identical output.
pub fn build_features(inputs: &FeatureInputs<'_>) -> FeatureVector13 {
    debug_assert!(inputs.t_run >= 2, "need at least two cycles per run");
    let w = inputs.workload;
    let (win_mean, win_var) = window_stats(inputs.history, inputs.window);
    FeatureVector13([
        f64::from(inputs.cycle) / f64::from(inputs.t_run - 1),
        f64::from(w.n_qubits) / 10.0,
        f64::from(w.depth) / 100.0,
        inputs.p_eff,
        inputs.eps_logical,
        1.0 - inputs.eps_logical,
        inputs.entropy_bits / 10.0,
        f64::from(w.t_count) / 50.0,
        f64::from(w.two_qubit_count) / 100.0,
        inputs.eps_logical.max(LOG_FLOOR).log10(),
        inputs.p_eff.max(LOG_FLOOR).log10(),
        win_mean,
        win_var,
    ])
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-dimension mean and floored standard deviation used to whiten features
/// before clustering and forecasting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
}

/// Fit per-dimension statistics over a dataset; `floor` bounds every std away
/// from zero so constant dimensions normalize to 0 instead of dividing out.
pub fn fit_normalizer(data: &[FeatureVector13], floor: f64) -> Result<NormStats> {
    if data.is_empty() {
        return Err(Error::InvalidData("cannot fit a normalizer on an empty dataset".into()));
    }
    let n = data.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    for f in data {
        for (m, x) in mean.iter_mut().zip(f.0.iter()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = [0.0; FEATURE_DIM];
    for f in data {
        for ((s, x), m) in std.iter_mut().zip(f.0.iter()).zip(mean.iter()) {
            let d = x - m;
            *s += d * d;
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt().max(floor);
    }
    Ok(NormStats { mean, std })
}

impl NormStats {
    /// Elementwise `(f − μ) / σ`.
    pub fn normalize(&self, f: &FeatureVector13) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|i| (f.0[i] - self.mean[i]) / self.std[i])
    }

    /// Inverse of [`NormStats::normalize`].
    pub fn denormalize(&self, f_norm: &[f64; FEATURE_DIM]) -> FeatureVector13 {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            out[i] = f_norm[i] * self.std[i] + self.mean[i];
        }
        FeatureVector13(out)
    }
}

// ---------------------------------------------------------------------------
// Persistence (line-delimited JSON)
// ---------------------------------------------------------------------------

/// Append one record as a single JSON line.
pub fn append_record<W: Write>(sink: &mut W, record: &TelemetryRecord) -> Result<()> {
    serde_json::to_writer(&mut *sink, record)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Write a whole run to `path`, one record per line.
pub fn write_records(path: &Path, records: &[TelemetryRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        append_record(&mut out, r)?;
    }
    out.flush()?;
    Ok(())
}

/// Parse records from raw file content.
///
/// Blank lines are skipped. A malformed line is an error carrying its 1-based
/// line number — except a malformed final line with no trailing newline,
/// which is treated as a truncated in-flight write and dropped.
pub fn read_records_str(content: &str) -> Result<Vec<TelemetryRecord>> {
    let ends_with_newline = content.ends_with('\n');
    let mut out = Vec::new();
    let lines: Vec<&str> = content.split('\n').collect();
    let last = lines.len() - 1;
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TelemetryRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last && !ends_with_newline => break,
            Err(e) => {
                return Err(Error::Parse { line: i + 1, message: e.to_string() });
            }
        }
    }
    Ok(out)
}

/// Read every record from a reader.
pub fn read_records<R: Read>(src: R) -> Result<Vec<TelemetryRecord>> {
    let mut content = String::new();
    BufReader::new(src).read_to_string(&mut content)?;
    read_records_str(&content)
}

/// Read every record from a `.jsonl` file.
pub fn read_records_path(path: &Path) -> Result<Vec<TelemetryRecord>> {
    read_records(File::open(path)?)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
