//! Sparse variational GP forecaster for near-horizon logical fidelity.
//!
//! The forecaster regresses next-horizon fidelity `F_{t+Δ}` on a compact
//! state vector `[context, p_eff, d, t/T_run, F_t]` (context one-hot by
//! default) and reports a Gaussian predictive `(μ̂, σ̂)` that the policy
//! consumes as two extra context features — moments, never samples.
//!
//! The model is the uncollapsed inducing-point construction: `q(u) = N(m, S)`
//! over function values at M inducing inputs Z, trained by maximizing
//!
//! ```text
//! ELBO = Σ_i E_q[log N(y_i | f_i, σ_n²)] − KL(q(u) ‖ p(u)),
//! ```
//!
//! with `S` parameterized by its Cholesky factor (log-diagonal) and kernel
//! hyperparameters in log space, so every iterate is valid by construction.
//! Gradients are fully analytic — the test suite checks them against central
//! finite differences — and after the gradient loop the variational pair
//! `(m, S)` is set to its closed-form optimum for the final hyperparameters
//! (the exact maximizer of the same ELBO for a Gaussian likelihood), which
//! makes the M = N configuration reproduce the exact GP posterior.
//!
//! An exact GP ([`ExactGp`]) lives alongside as the validation oracle; it
//! shares only [`kernel_eval`] with the sparse path.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

/// RBF-ARD hyperparameters plus the Gaussian observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Signal variance σ_k².
    pub variance: f64,
    /// One lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
    /// Observation noise variance σ_n².
    pub noise: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.variance > 0.0
            && self.noise > 0.0
            && !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|&l| l > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("kernel parameters must all be strictly positive".into()))
        }
    }
}

/// `σ_k² · exp(−½ Σ_d (x_d − x'_d)² / ℓ_d²)`.
pub fn kernel_eval(x: &[f64], xp: &[f64], params: &KernelParams) -> f64 {
    debug_assert_eq!(x.len(), xp.len());
    debug_assert_eq!(x.len(), params.lengthscales.len());
    let mut s = 0.0;
    for ((a, b), l) in x.iter().zip(xp).zip(&params.lengthscales) {
        let d = (a - b) / l;
        s += d * d;
    }
    params.variance * (-0.5 * s).exp()
}

fn gram(a: &[Vec<f64>], b: &[Vec<f64>], params: &KernelParams) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel_eval(&a[i], &b[j], params))
}

// ---------------------------------------------------------------------------
// Exact GP oracle
// ---------------------------------------------------------------------------

/// Dense zero-mean GP regressor. Cubic in N; used as the validation oracle
/// and for small problems.
#[derive(Debug, Clone)]
pub struct ExactGp {
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
    kernel: KernelParams,
    chol: Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

impl ExactGp {
    /// Fit `(K + σ_n²·I)⁻¹ y` by Cholesky factorization.
    pub fn fit(x: &[Vec<f64>], y: &[f64], kernel: KernelParams) -> Result<Self> {
        kernel.validate()?;
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidData(
                "exact GP needs equally many inputs and targets, at least one".into(),
            ));
        }
        let n = x.len();
        let mut k = gram(x, x, &kernel);
        for i in 0..n {
            k[(i, i)] += kernel.noise;
        }
        let chol = Cholesky::new(k).ok_or_else(|| {
            Error::LinAlg("gram matrix plus noise is not positive definite".into())
        })?;
        let y = DVector::from_column_slice(y);
        let alpha = chol.solve(&y);
        Ok(ExactGp { x: x.to_vec(), y, kernel, chol, alpha })
    }

    /// Posterior mean and variance (noise-free latent) at a query point.
    pub fn predict(&self, query: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| kernel_eval(xi, query, &self.kernel)),
        );
        let mu = ks.dot(&self.alpha);
        let v = self.chol.solve(&ks);
        let var = (self.kernel.variance - ks.dot(&v)).max(0.0);
        (mu, var)
    }

    /// log p(y | X, θ) = −½ yᵀα − Σ log L_ii − (N/2)·log 2π.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * self.y.dot(&self.alpha) - log_det_half - 0.5 * n * (std::f64::consts::TAU).ln()
    }
}

// ---------------------------------------------------------------------------
// State encoding
// ---------------------------------------------------------------------------

/// How the discrete context id enters the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextEncoding {
    OneHot,
    RawId,
}

/// Turns `(c, p_eff, d, t, T_run, F)` into the model's input vector.
///
/// Ordering is `[context…, p_eff, d, t/T_run, F_L]`; the code distance slot
/// can be dropped (`include_distance = false`) to match the reduced state
/// form that omits d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEncoder {
    pub encoding: ContextEncoding,
    pub num_contexts: usize,
    pub include_distance: bool,
}

impl StateEncoder {
    pub fn dim(&self) -> usize {
        let ctx = match self.encoding {
            ContextEncoding::OneHot => self.num_contexts,
            ContextEncoding::RawId => 1,
        };
        ctx + 3 + usize::from(self.include_distance)
    }

    pub fn encode(
        &self,
        context: usize,
        p_eff: f64,
        d: u32,
        t: u32,
        t_run: u32,
        fidelity: f64,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        match self.encoding {
            ContextEncoding::OneHot => {
                if context >= self.num_contexts {
                    return Err(Error::UnknownContext { id: context, known: self.num_contexts });
                }
                out.extend((0..self.num_contexts).map(|i| f64::from(i == context)));
            }
            ContextEncoding::RawId => out.push(context as f64),
        }
        out.push(p_eff);
        if self.include_distance {
            out.push(f64::from(d));
        }
        out.push(f64::from(t) / f64::from(t_run));
        out.push(fidelity);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// SVGP model
// ---------------------------------------------------------------------------

/// Inducing-input initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InducingInit {
    /// k-means++ style seeding from the training inputs (default).
    KmeansPlusPlus,
    /// Z = the training inputs themselves; requires M = N.
    AtTrainingInputs,
}

/// Optimizer for the ELBO loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain fixed-step gradient ascent.
    GradientAscent,
    /// Fixed-step Adam (deterministic, full batch).
    Adam,
}

/// Training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvgpConfig {
    pub num_inducing: usize,
    pub iters: u32,
    pub step_size: f64,
    /// Forecast horizon in cycles.
    pub delta: u32,
    pub jitter: f64,
    pub inducing_init: InducingInit,
    pub optimizer: Optimizer,
    /// Freeze kernel/noise at their initial values (variational params only).
    pub optimize_hyperparams: bool,
    pub encoding: ContextEncoding,
    pub include_distance: bool,
}

impl Default for SvgpConfig {
    fn default() -> Self {
        SvgpConfig {
            num_inducing: 16,
            iters: 2000,
            step_size: 0.02,
            delta: 1,
            jitter: 1e-6,
            inducing_init: InducingInit::KmeansPlusPlus,
            optimizer: Optimizer::Adam,
            optimize_hyperparams: true,
            encoding: ContextEncoding::OneHot,
            include_distance: true,
        }
    }
}

/// Gaussian forecast of fidelity `Δ` cycles ahead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub horizon: u32,
}

/// Trained sparse GP: inducing inputs, variational distribution (via the
/// Cholesky factor of S), kernel hyperparameters, and target scaling.
/// Everything needed to predict serializes to one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpModel {
    pub encoder: StateEncoder,
    pub kernel: KernelParams,
    pub z: Vec<Vec<f64>>,
    pub m: Vec<f64>,
    /// Row-major lower Cholesky factor of S.
    pub s_chol: Vec<Vec<f64>>,
    pub y_mean: f64,
    pub y_std: f64,
    pub delta: u32,
    pub jitter: f64,
}

impl SvgpModel {
    pub fn num_inducing(&self) -> usize {
        self.z.len()
    }

    /// Smallest reportable predictive deviation, in target units.
    pub fn noise_floor(&self) -> f64 {
        self.kernel.noise.sqrt() * self.y_std
    }

    fn chol_kzz(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let m = self.z.len();
        let mut kzz = gram(&self.z, &self.z, &self.kernel);
        for i in 0..m {
            kzz[(i, i)] += self.jitter;
        }
        Cholesky::new(kzz)
            .ok_or_else(|| Error::LinAlg("inducing gram matrix is not positive definite".into()))
    }

    fn s_matrix(&self) -> DMatrix<f64> {
        let m = self.z.len();
        let l = DMatrix::from_fn(m, m, |i, j| self.s_chol[i][j]);
        &l * l.transpose()
    }

    /// Predictive moments at one encoded input:
    /// `μ̂ = k*ᵀ P m`, `σ̂² = k** − k*ᵀPk* + k*ᵀPSPk* + σ_n²` with
    /// `P = (K_ZZ + jitter·I)⁻¹`, then mapped back to raw target units.
    pub fn predict(&self, query: &[f64]) -> Result<Forecast> {
        let expected = self.kernel.lengthscales.len();
        if query.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: query.len() });
        }
        let chol = self.chol_kzz()?;
        let ks = DVector::from_iterator(
            self.z.len(),
            self.z.iter().map(|zi| kernel_eval(zi, query, &self.kernel)),
        );
        let b = chol.solve(&ks); // P k*
        let m_vec = DVector::from_column_slice(&self.m);
        let mu_std = b.dot(&m_vec);
        let s = self.s_matrix();
        let var_std =
            (self.kernel.variance - ks.dot(&b) + b.dot(&(&s * &b))).max(0.0) + self.kernel.noise;
        Ok(Forecast {
            mu_hat: mu_std * self.y_std + self.y_mean,
            sigma_hat: var_std.sqrt() * self.y_std,
            horizon: self.delta,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

// ---------------------------------------------------------------------------
// ELBO and analytic gradients over packed parameters
// ---------------------------------------------------------------------------

/// Flat parameter layout: `[m (M) | L row-wise lower triangle with
/// log-diagonal (M(M+1)/2) | log σ_k² | log ℓ (D) | log σ_n²]`.
struct Packing {
    m: usize,
    d: usize,
}

impl Packing {
    fn len(&self) -> usize {
        self.m + self.m * (self.m + 1) / 2 + 1 + self.d + 1
    }

    fn unpack(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, KernelParams) {
        let mm = self.m;
        let m_vec = DVector::from_iterator(mm, p.iter().take(mm).copied());
        let mut l = DMatrix::zeros(mm, mm);
        let mut idx = mm;
        for i in 0..mm {
            for j in 0..=i {
                l[(i, j)] = if i == j { p[idx].exp() } else { p[idx] };
                idx += 1;
            }
        }
        let variance = p[idx].exp();
        idx += 1;
        let lengthscales: Vec<f64> = (0..self.d).map(|k| p[idx + k].exp()).collect();
        idx += self.d;
        let noise = p[idx].exp();
        (m_vec, l, KernelParams { variance, lengthscales, noise })
    }

    fn pack(&self, m_vec: &DVector<f64>, l: &DMatrix<f64>, k: &KernelParams) -> DVector<f64> {
        let mut p = DVector::zeros(self.len());
        for i in 0..self.m {
            p[i] = m_vec[i];
        }
        let mut idx = self.m;
        for i in 0..self.m {
            for j in 0..=i {
                p[idx] = if i == j { l[(i, j)].ln() } else { l[(i, j)] };
                idx += 1;
            }
        }
        p[idx] = k.variance.ln();
        idx += 1;
        for (k_, l_) in k.lengthscales.iter().enumerate() {
            p[idx + k_] = l_.ln();
        }
        idx += self.d;
        p[idx] = k.noise.ln();
        p
    }
}

/// Everything fixed during one training run.
struct Problem {
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
    z: Vec<Vec<f64>>,
    jitter: f64,
    packing: Packing,
    /// Per-dimension squared differences, precomputed once: Z×Z and Z×X.
    dzz: Vec<DMatrix<f64>>,
    dzn: Vec<DMatrix<f64>>,
}

impl Problem {
    fn new(x: Vec<Vec<f64>>, y: DVector<f64>, z: Vec<Vec<f64>>, jitter: f64) -> Self {
        let d = x[0].len();
        let m = z.len();
        let n = x.len();
        let dzz = (0..d)
            .map(|k| DMatrix::from_fn(m, m, |i, j| (z[i][k] - z[j][k]).powi(2)))
            .collect();
        let dzn = (0..d)
            .map(|k| DMatrix::from_fn(m, n, |i, j| (z[i][k] - x[j][k]).powi(2)))
            .collect();
        Problem { x, y, z, jitter, packing: Packing { m, d }, dzz, dzn }
    }

    fn kernel_matrices(&self, k: &KernelParams) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.z.len();
        let n = self.x.len();
        let inv2l: Vec<f64> = k.lengthscales.iter().map(|l| 0.5 / (l * l)).collect();
        let mut kzz: DMatrix<f64> = DMatrix::zeros(m, m);
        for (c, dist) in inv2l.iter().zip(&self.dzz) {
            kzz.zip_apply(dist, |v, d| *v += c * d);
        }
        kzz.apply(|v| *v = k.variance * (-*v).exp());
        let mut kzn: DMatrix<f64> = DMatrix::zeros(m, n);
        for (c, dist) in inv2l.iter().zip(&self.dzn) {
            kzn.zip_apply(dist, |v, d| *v += c * d);
        }
        kzn.apply(|v| *v = k.variance * (-*v).exp());
        (kzz, kzn)
    }

    /// ELBO value and gradient in the packed parameterization.
    fn elbo_grad(&self, p: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (m_vec, l, kern) = self.packing.unpack(p);
        let mm = self.packing.m;
        let n = self.x.len();
        let nf = n as f64;
        let noise = kern.noise;

        let (mut kzz, kzn) = self.kernel_matrices(&kern);
        let kzz_kernel = kzz.clone();
        for i in 0..mm {
            kzz[(i, i)] += self.jitter;
        }
        let chol = Cholesky::new(kzz)
            .ok_or_else(|| Error::LinAlg("inducing gram matrix lost positive definiteness".into()))?;
        let p_inv = chol.inverse();
        let w = &p_inv * &m_vec; // P m
        let b = &p_inv * &kzn; // M×N columns b_i = P κ_i
        let s = &l * l.transpose();
        let sb = &s * &b;
        let g = &p_inv * &sb; // columns g_i = P S b_i

        let mu = b.transpose() * &m_vec; // N
        let mut v = DVector::zeros(n);
        for i in 0..n {
            let vi = kern.variance - kzn.column(i).dot(&b.column(i))
                + b.column(i).dot(&sb.column(i));
            v[i] = vi;
        }

        // Log-likelihood expectation.
        let resid = &self.y - &mu;
        let sq_plus_v = resid.component_mul(&resid) + &v;
        let ll = -0.5 * nf * (std::f64::consts::TAU * noise).ln()
            - sq_plus_v.sum() / (2.0 * noise);

        // KL(q ‖ p) with p = N(0, K_ZZ + jitter·I).
        let log_det_kzz = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_det_s = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let tr_ps = (&p_inv * &s).trace();
        let kl = 0.5 * (tr_ps + m_vec.dot(&w) - mm as f64 + log_det_kzz - log_det_s);

        let elbo = ll - kl;

        // ---- gradients -----------------------------------------------------
        let r = resid.map(|e| e / noise); // (y − μ)/σ_n²
        let br = &b * &r;

        // ∂/∂m = B r − P m
        let grad_m = &br - &w;

        // ∂/∂S = −BBᵀ/(2σ_n²) − ½P + ½S⁻¹, chained onto L.
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::LinAlg("variational Cholesky factor is singular".into()))?;
        let s_inv = l_inv.transpose() * &l_inv;
        let bbt = &b * b.transpose();
        let g_s = bbt.scale(-0.5 / noise) - p_inv.scale(0.5) + s_inv.scale(0.5);
        let mut grad_l = (&g_s + g_s.transpose()) * &l;
        for i in 0..mm {
            for j in 0..mm {
                if j > i {
                    grad_l[(i, j)] = 0.0;
                } else if j == i {
                    grad_l[(i, j)] *= l[(i, j)]; // log-diagonal chain rule
                }
            }
        }

        // Coefficient matrices for the kernel blocks: d(ELBO) =
        // sum(CZZ ⊙ dK_ZZ) + sum(CZN ⊙ dK_ZN) + Σ_i czz_diag·dk_ii.
        let psp = &p_inv * &s * &p_inv;
        let czz = -(&w * br.transpose())
            - (bbt.clone() - &b * g.transpose() - &g * b.transpose()).scale(0.5 / noise)
            + (psp + &w * w.transpose() - &p_inv).scale(0.5);
        let czn = &w * r.transpose() + (&b - &g).scale(1.0 / noise);
        let cdiag = -0.5 / noise; // per-point coefficient on dk_ii

        // log σ_k²: every kernel entry scales linearly with the variance.
        let grad_log_var = czz.component_mul(&kzz_kernel).sum()
            + czn.component_mul(&kzn).sum()
            + cdiag * nf * kern.variance;

        // log ℓ_d: dK/dlogℓ_d = K ⊙ Δ²_d / ℓ_d² (diagonal terms vanish).
        let mut grad_log_ell = vec![0.0; self.packing.d];
        for (dim, g) in grad_log_ell.iter_mut().enumerate() {
            let inv_l2 = 1.0 / (kern.lengthscales[dim] * kern.lengthscales[dim]);
            let gzz = czz
                .component_mul(&kzz_kernel)
                .component_mul(&self.dzz[dim])
                .sum();
            let gzn = czn.component_mul(&kzn).component_mul(&self.dzn[dim]).sum();
            *g = (gzz + gzn) * inv_l2;
        }

        // log σ_n².
        let grad_log_noise = -0.5 * nf + sq_plus_v.sum() / (2.0 * noise);

        // Pack.
        let mut grad = DVector::zeros(self.packing.len());
        for i in 0..mm {
            grad[i] = grad_m[i];
        }
        let mut idx = mm;
        for i in 0..mm {
            for j in 0..=i {
                grad[idx] = grad_l[(i, j)];
                idx += 1;
            }
        }
        grad[idx] = grad_log_var;
        idx += 1;
        for dim in 0..self.packing.d {
            grad[idx + dim] = grad_log_ell[dim];
        }
        idx += self.packing.d;
        grad[idx] = grad_log_noise;

        Ok((elbo, grad))
    }

    /// Closed-form optimum of (m, S) at fixed hyperparameters: with
    /// Q = P + BBᵀ/σ_n², the ELBO is maximized by S* = Q⁻¹ and
    /// m* = Q⁻¹ B y / σ_n². Exact coordinate ascent on the same objective.
    fn refit_variational(&self, p: &mut DVector<f64>) -> Result<()> {
        let (_, _, kern) = self.packing.unpack(p);
        let mm = self.packing.m;
        let (mut kzz, kzn) = self.kernel_matrices(&kern);
        for i in 0..mm {
            kzz[(i, i)] += self.jitter;
        }
        let chol = Cholesky::new(kzz)
            .ok_or_else(|| Error::LinAlg("inducing gram matrix lost positive definiteness".into()))?;
        let p_inv = chol.inverse();
        let b = &p_inv * &kzn;
        let q = &p_inv + (&b * b.transpose()).scale(1.0 / kern.noise);
        let q_chol = Cholesky::new(q)
            .ok_or_else(|| Error::LinAlg("variational precision is not positive definite".into()))?;
        let s_star = q_chol.inverse();
        let m_star = q_chol.solve(&(&b * &self.y)).scale(1.0 / kern.noise);
        let l_star = Cholesky::new(s_star)
            .ok_or_else(|| Error::LinAlg("optimal variational covariance lost PD".into()))?
            .l();
        let repacked = self.packing.pack(&m_star, &l_star, &kern);
        p.copy_from(&repacked);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Public ELBO entry point
// ---------------------------------------------------------------------------

/// ELBO of a trained model's variational state evaluated on a batch of
/// already-encoded inputs and raw targets (standardized internally with the
/// model's stored scaling). Finite for any valid inputs.
pub fn svgp_elbo(model: &SvgpModel, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidData("ELBO needs a nonempty batch of (x, y) pairs".into()));
    }
    let y_std: Vec<f64> = y.iter().map(|v| (v - model.y_mean) / model.y_std).collect();
    let problem = Problem::new(
        x.to_vec(),
        DVector::from_column_slice(&y_std),
        model.z.clone(),
        model.jitter,
    );
    let m_vec = DVector::from_column_slice(&model.m);
    let mm = model.z.len();
    let l = DMatrix::from_fn(mm, mm, |i, j| model.s_chol[i][j]);
    let packed = problem.packing.pack(&m_vec, &l, &model.kernel);
    let (elbo, _) = problem.elbo_grad(&packed)?;
    Ok(elbo)
}

/// Self-check: worst relative disagreement between the analytic ELBO
/// gradient and a central-difference estimate, over every packed coordinate
/// at a seeded random (variational state, hyperparameter) point. Inducing
/// points are the first `num_inducing` training inputs. A correct gradient
/// implementation keeps the result at ~1e-6; anything above 1e-4 indicates a
/// broken derivative.
pub fn elbo_gradient_check(
    x: &[Vec<f64>],
    y: &[f64],
    num_inducing: usize,
    seed: u64,
) -> Result<f64> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidData("gradient check needs (x, y) pairs".into()));
    }
    if num_inducing == 0 || num_inducing > x.len() {
        return Err(Error::InvalidData(format!(
            "gradient check needs 1..=N inducing points, got {num_inducing} for N = {}",
            x.len()
        )));
    }
    let dim = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = Problem::new(
        x.to_vec(),
        DVector::from_column_slice(y),
        x[..num_inducing].to_vec(),
        1e-6,
    );
    let m = num_inducing;
    let mut l0 = DMatrix::identity(m, m);
    for i in 0..m {
        for j in 0..i {
            l0[(i, j)] = 0.3 * (rng.random::<f64>() - 0.5);
        }
        l0[(i, i)] = 0.5 + rng.random::<f64>();
    }
    let m0 = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
    let k0 = KernelParams {
        variance: 0.5 + rng.random::<f64>(),
        lengthscales: (0..dim).map(|_| 0.7 + rng.random::<f64>()).collect(),
        noise: 0.1 + 0.2 * rng.random::<f64>(),
    };
    let p0 = problem.packing.pack(&m0, &l0, &k0);
    let (_, grad) = problem.elbo_grad(&p0)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..p0.len() {
        let mut plus = p0.clone();
        plus[idx] += h;
        let mut minus = p0.clone();
        minus[idx] -= h;
        let (ep, _) = problem.elbo_grad(&plus)?;
        let (em, _) = problem.elbo_grad(&minus)?;
        let fd = (ep - em) / (2.0 * h);
        let denom = fd.abs().max(grad[idx].abs()).max(1e-6);
        worst = worst.max((fd - grad[idx]).abs() / denom);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// k-means++ style seeding: greedy spread of M distinct training inputs.
fn kmeanspp_init(x: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    let mut min_d2: Vec<f64> = x
        .iter()
        .map(|xi| sq_euclid(xi, &x[chosen[0]]))
        .collect();
    while chosen.len() < m {
        let total: f64 = min_d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d2) in min_d2.iter().enumerate() {
                if u < d2 {
                    pick = i;
                    break;
                }
                u -= d2;
            }
            pick
        } else {
            // All remaining mass sits on chosen points (duplicates): take the
            // first index not yet selected to keep Z distinct where possible.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d2) in min_d2.iter_mut().enumerate() {
            *d2 = d2.min(sq_euclid(&x[i], &x[next]));
        }
    }
    chosen.into_iter().map(|i| x[i].clone()).collect()
}

fn sq_euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Train the sparse GP on encoded inputs `x` and raw targets `y`.
///
/// Deterministic given `(x, y, cfg, seed)`. Standardizes targets, seeds the
/// inducing inputs, runs `cfg.iters` full-batch optimizer steps on the ELBO,
/// then installs the closed-form optimal `(m, S)` for the final
/// hyperparameters. Non-finite objectives abort with diagnostics.
pub fn svgp_train(
    x: &[Vec<f64>],
    y: &[f64],
    encoder: StateEncoder,
    cfg: &SvgpConfig,
    seed: u64,
) -> Result<SvgpModel> {
    if x.is_empty() {
        return Err(Error::InvalidData("cannot train a forecaster on an empty dataset".into()));
    }
    if x.len() != y.len() {
        return Err(Error::InvalidData(format!(
            "input/target length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let m = cfg.num_inducing;
    if m == 0 || m > n {
        return Err(Error::InvalidData(format!(
            "need 1 <= num_inducing <= N, got M={m} with N={n}"
        )));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|xi| xi.len() != dim) {
        return Err(Error::InvalidData("inputs must share a nonzero dimension".into()));
    }
    if !(cfg.step_size > 0.0 && cfg.jitter > 0.0) {
        return Err(Error::Config("step_size and jitter must be positive".into()));
    }

    // Standardize targets (population stats, floored like the feature path).
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n as f64;
    let y_std = y_var.sqrt().max(1e-8);
    let y_scaled: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = match cfg.inducing_init {
        InducingInit::KmeansPlusPlus => kmeanspp_init(x, m, &mut rng),
        InducingInit::AtTrainingInputs => {
            if m != n {
                return Err(Error::Config(format!(
                    "inducing at training inputs requires M = N (got M={m}, N={n})"
                )));
            }
            x.to_vec()
        }
    };

    let problem = Problem::new(
        x.to_vec(),
        DVector::from_column_slice(&y_scaled),
        z.clone(),
        cfg.jitter,
    );

    // Init: m = 0, S = I, unit kernel, σ_n² = 0.1 (standardized space).
    let init_kernel = KernelParams {
        variance: 1.0,
        lengthscales: vec![1.0; dim],
        noise: 0.1,
    };
    let mut params = problem.packing.pack(
        &DVector::zeros(m),
        &DMatrix::identity(m, m),
        &init_kernel,
    );

    let hyper_start = m + m * (m + 1) / 2;
    let n_params = problem.packing.len();
    let mut adam_m: DVector<f64> = DVector::zeros(n_params);
    let mut adam_v: DVector<f64> = DVector::zeros(n_params);
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);

    for it in 0..cfg.iters {
        let (elbo, mut grad) = problem.elbo_grad(&params)?;
        if !elbo.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite ELBO at iteration {it} (step_size {})",
                cfg.step_size
            )));
        }
        if !cfg.optimize_hyperparams {
            for i in hyper_start..n_params {
                grad[i] = 0.0;
            }
        }
        match cfg.optimizer {
            Optimizer::GradientAscent => {
                params.axpy(cfg.step_size, &grad, 1.0);
            }
            Optimizer::Adam => {
                let t = f64::from(it + 1);
                for i in 0..n_params {
                    adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * grad[i];
                    adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mh = adam_m[i] / (1.0 - beta1.powf(t));
                    let vh = adam_v[i] / (1.0 - beta2.powf(t));
                    params[i] += cfg.step_size * mh / (vh.sqrt() + eps);
                }
            }
        }
        // Keep log-parameters in a sane box so the loop cannot silently
        // drive the noise (and with it the likelihood term) to ±∞.
        for i in hyper_start..n_params {
            params[i] = params[i].clamp(-13.8, 6.9); // e^±… ≈ [1e-6, 1e3]
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite parameter after iteration {it} (step_size {})",
                cfg.step_size
            )));
        }
    }

    // Exact (m, S) for the final hyperparameters.
    let mut final_params = params;
    problem.refit_variational(&mut final_params)?;
    let (m_vec, l, kernel) = problem.packing.unpack(&final_params);

    let s_chol: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| if j <= i { l[(i, j)] } else { 0.0 }).collect())
        .collect();
    Ok(SvgpModel {
        encoder,
        kernel,
        z,
        m: m_vec.iter().copied().collect(),
        s_chol,
        y_mean,
        y_std,
        delta: cfg.delta,
        jitter: cfg.jitter,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} !~ {b} (tol {tol})");
    }

    fn kernel_1d() -> KernelParams {
        KernelParams { variance: 1.0, lengthscales: vec![1.0], noise: 0.1 }
    }

    fn toy_encoder() -> StateEncoder {
        StateEncoder {
            encoding: ContextEncoding::RawId,
            num_contexts: 1,
            include_distance: false,
        }
    }

    /// Smooth 1-D regression set on [0, 3].
    fn toy_data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![3.0 * i as f64 / (n - 1) as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (1.3 * x[0]).sin() * 0.5 + 0.2 * x[0]).collect();
        (xs, ys)
    }

    #[test]
    fn kernel_anchors() {
        let k = kernel_1d();
        assert_eq!(kernel_eval(&[0.7], &[0.7], &k), 1.0);
        approx(kernel_eval(&[0.0], &[1.0], &k), 0.6065306597126334, 1e-15);
        assert!(kernel_eval(&[0.0], &[100.0], &k) < 1e-300);
        // ARD: per-dimension scaling.
        let k2 = KernelParams { variance: 2.0, lengthscales: vec![1.0, 10.0], noise: 0.1 };
        approx(
            kernel_eval(&[0.0, 0.0], &[1.0, 0.0], &k2),
            2.0 * (-0.5f64).exp(),
            1e-15,
        );
        approx(
            kernel_eval(&[0.0, 0.0], &[0.0, 10.0], &k2),
            2.0 * (-0.5f64).exp(),
            1e-15,
        );
    }

    #[test]
    fn exact_gp_interpolates_in_the_noiseless_limit() {
        let k = KernelParams { noise: 1e-10, ..kernel_1d() };
        let gp = ExactGp::fit(&[vec![0.5]], &[2.0], k).unwrap();
        let (mu, var) = gp.predict(&[0.5]);
        approx(mu, 2.0, 1e-6);
        assert!(var < 1e-6);
    }

    #[test]
    fn exact_gp_reverts_to_prior_far_away() {
        let (xs, ys) = toy_data(10);
        let gp = ExactGp::fit(&xs, &ys, kernel_1d()).unwrap();
        let (mu, var) = gp.predict(&[500.0]);
        approx(mu, 0.0, 1e-12);
        approx(var, 1.0, 1e-12); // latent variance reverts to σ_k²
    }

    #[test]
    fn exact_gp_matches_hand_solved_two_point_system() {
        // K + σ²I = [[1.1, q], [q, 1.1]] with q = exp(−0.5).
        let q = (-0.5f64).exp();
        let x = vec![vec![0.0], vec![1.0]];
        let y = [0.8, -0.4];
        let gp = ExactGp::fit(&x, &y, kernel_1d()).unwrap();
        let det = 1.1 * 1.1 - q * q;
        let alpha = [
            (1.1 * y[0] - q * y[1]) / det,
            (-q * y[0] + 1.1 * y[1]) / det,
        ];
        let query: f64 = 0.4;
        let k1 = (-0.5 * query * query).exp();
        let k2 = (-0.5 * (query - 1.0) * (query - 1.0)).exp();
        let mu_hand = k1 * alpha[0] + k2 * alpha[1];
        // σ² = k** − k*ᵀ (K+σ²I)⁻¹ k*
        let solve1 = (1.1 * k1 - q * k2) / det;
        let solve2 = (-q * k1 + 1.1 * k2) / det;
        let var_hand = 1.0 - (k1 * solve1 + k2 * solve2);
        let (mu, var) = gp.predict(&[query]);
        approx(mu, mu_hand, 1e-10);
        approx(var, var_hand, 1e-10);
    }

    #[test]
    fn exact_gp_rejects_singular_systems() {
        let k = KernelParams { noise: 1e-300, ..kernel_1d() };
        let x = vec![vec![0.3], vec![0.3]]; // duplicate rows, no noise
        let r = ExactGp::fit(&x, &[1.0, 1.0], k);
        assert!(matches!(r, Err(Error::LinAlg(_))), "{r:?}");
    }

    #[test]
    fn state_encoding_anchors() {
        let enc = StateEncoder {
            encoding: ContextEncoding::OneHot,
            num_contexts: 3,
            include_distance: true,
        };
        let v = enc.encode(0, 0.01, 5, 0, 200, 0.98).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.01, 5.0, 0.0, 0.98]);
        assert_eq!(v.len(), enc.dim());

        let raw = StateEncoder { encoding: ContextEncoding::RawId, ..enc };
        assert_eq!(
            raw.encode(0, 0.01, 5, 0, 200, 0.98).unwrap(),
            vec![0.0, 0.01, 5.0, 0.0, 0.98]
        );

        assert!(matches!(
            enc.encode(7, 0.01, 5, 0, 200, 0.98),
            Err(Error::UnknownContext { id: 7, known: 3 })
        ));

        let no_d = StateEncoder { include_distance: false, ..enc };
        assert_eq!(
            no_d.encode(1, 0.01, 5, 100, 200, 0.9).unwrap(),
            vec![0.0, 1.0, 0.0, 0.01, 0.5, 0.9]
        );
    }

    /// Hand-built tiny model for algebraic checks.
    fn tiny_model(m_val: f64, s_scale: f64) -> SvgpModel {
        SvgpModel {
            encoder: toy_encoder(),
            kernel: kernel_1d(),
            z: vec![vec![0.0]],
            m: vec![m_val],
            s_chol: vec![vec![s_scale]],
            y_mean: 0.0,
            y_std: 1.0,
            delta: 1,
            jitter: 1e-6,
        }
    }

    #[test]
    fn predict_matches_hand_algebra_at_m_equals_one() {
        let model = tiny_model(0.7, 1e-6);
        let f = model.predict(&[0.0]).unwrap();
        // μ̂ = k(0,0)/(k(0,0)+j)·m ≈ m; with S ≈ 0:
        // σ̂² = σ_k² − σ_k⁴/(σ_k²+j) + σ_n².
        let p = 1.0 / (1.0 + 1e-6);
        approx(f.mu_hat, p * 0.7, 1e-12);
        approx(f.sigma_hat, (1.0 - p + 0.1f64).sqrt(), 1e-6);
    }

    #[test]
    fn predict_reverts_to_prior_far_from_inducing_points() {
        let model = tiny_model(0.9, 0.5);
        let f = model.predict(&[1e4]).unwrap();
        approx(f.mu_hat, 0.0, 1e-12);
        approx(f.sigma_hat, (1.0 + 0.1f64).sqrt(), 1e-12);
    }

    #[test]
    fn predict_is_deterministic() {
        let (xs, ys) = toy_data(12);
        let model = svgp_train(&xs, &ys, toy_encoder(), &SvgpConfig {
            num_inducing: 6,
            iters: 200,
            ..SvgpConfig::default()
        }, 3)
        .unwrap();
        let a = model.predict(&[1.1]).unwrap();
        let b = model.predict(&[1.1]).unwrap();
        assert_eq!(a.mu_hat.to_bits(), b.mu_hat.to_bits());
        assert_eq!(a.sigma_hat.to_bits(), b.sigma_hat.to_bits());
    }

    #[test]
    fn kl_vanishes_when_q_equals_prior() {
        // m = 0 and S = K_ZZ + jitter·I makes q(u) the prior exactly, so the
        // ELBO reduces to the expected log-likelihood: compare against the
        // same model with the KL recomputed by hand (must equal 0).
        let (xs, ys) = toy_data(8);
        let z = vec![vec![0.0], vec![1.5], vec![3.0]];
        let kern = kernel_1d();
        let mut kzz = gram(&z, &z, &kern);
        for i in 0..3 {
            kzz[(i, i)] += 1e-6;
        }
        let l = Cholesky::new(kzz.clone()).unwrap().l();
        let model = SvgpModel {
            encoder: toy_encoder(),
            kernel: kern.clone(),
            z: z.clone(),
            m: vec![0.0; 3],
            s_chol: (0..3).map(|i| (0..3).map(|j| l[(i, j)]).collect()).collect(),
            y_mean: 0.0,
            y_std: 1.0,
            delta: 1,
            jitter: 1e-6,
        };
        let elbo = svgp_elbo(&model, &xs, &ys).unwrap();
        // Recompute only the expected log-likelihood part by hand.
        let p_inv = Cholesky::new(kzz).unwrap().inverse();
        let kzn = gram(&z, &xs, &kern);
        let b = &p_inv * &kzn;
        let s = DMatrix::from_fn(3, 3, |i, j| {
            (0..3).map(|k| model.s_chol[i][k] * model.s_chol[j][k]).sum::<f64>()
        });
        let mut ll = 0.0;
        for (i, y) in ys.iter().enumerate() {
            let mu: f64 = 0.0;
            let v = kern.variance - kzn.column(i).dot(&b.column(i))
                + b.column(i).dot(&(&s * b.column(i)));
            ll += -0.5 * (std::f64::consts::TAU * kern.noise).ln()
                - ((y - mu).powi(2) + v) / (2.0 * kern.noise);
        }
        approx(elbo, ll, 1e-8);
    }

    #[test]
    fn elbo_never_exceeds_exact_log_marginal_likelihood() {
        let (xs, ys) = toy_data(14);
        let model = svgp_train(&xs, &ys, toy_encoder(), &SvgpConfig {
            num_inducing: 5,
            iters: 400,
            ..SvgpConfig::default()
        }, 11)
        .unwrap();
        let elbo = svgp_elbo(&model, &xs, &ys).unwrap();
        let y_scaled: Vec<f64> = ys.iter().map(|v| (v - model.y_mean) / model.y_std).collect();
        let exact = ExactGp::fit(&xs, &y_scaled, model.kernel.clone()).unwrap();
        let lml = exact.log_marginal_likelihood();
        assert!(elbo <= lml + 1e-6, "ELBO {elbo} > log evidence {lml}");
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        // Random small instances, every packed coordinate, relative 1e-4.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..4 {
            let n = 8 + trial;
            let d = 2;
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 3.0 - 1.5).collect())
                .collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|x| (x[0]).sin() + 0.3 * x[1] + 0.05 * rng.random::<f64>())
                .collect();
            let m = 3 + trial % 2;
            let z: Vec<Vec<f64>> = xs[..m].to_vec();
            let problem = Problem::new(
                xs.clone(),
                DVector::from_column_slice(&ys),
                z,
                1e-6,
            );
            // Random-ish but valid starting point.
            let mut l0 = DMatrix::identity(m, m);
            for i in 0..m {
                for j in 0..i {
                    l0[(i, j)] = 0.3 * (rng.random::<f64>() - 0.5);
                }
                l0[(i, i)] = 0.5 + rng.random::<f64>();
            }
            let m0 = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
            let k0 = KernelParams {
                variance: 0.8,
                lengthscales: vec![0.9, 1.4],
                noise: 0.2,
            };
            let p0 = problem.packing.pack(&m0, &l0, &k0);
            let (_, grad) = problem.elbo_grad(&p0).unwrap();
            let h = 1e-5;
            for idx in 0..p0.len() {
                let mut plus = p0.clone();
                plus[idx] += h;
                let mut minus = p0.clone();
                minus[idx] -= h;
                let (ep, _) = problem.elbo_grad(&plus).unwrap();
                let (em, _) = problem.elbo_grad(&minus).unwrap();
                let fd = (ep - em) / (2.0 * h);
                let denom = fd.abs().max(grad[idx].abs()).max(1e-6);
                assert!(
                    (fd - grad[idx]).abs() / denom <= 1e-4,
                    "trial {trial} coord {idx}: analytic {} vs fd {fd}",
                    grad[idx]
                );
            }
        }
    }

    #[test]
    fn one_ascent_step_increases_the_elbo() {
        let (xs, ys) = toy_data(10);
        let z = vec![vec![0.2], vec![1.4], vec![2.8]];
        let problem = Problem::new(xs, DVector::from_column_slice(&ys), z, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m0 = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
        let p0 = problem.packing.pack(&m0, &DMatrix::identity(3, 3), &kernel_1d());
        let (e0, grad) = problem.elbo_grad(&p0).unwrap();
        let mut p1 = p0.clone();
        p1.axpy(1e-6, &grad, 1.0);
        let (e1, _) = problem.elbo_grad(&p1).unwrap();
        assert!(e1 > e0, "ELBO did not increase: {e0} -> {e1}");
    }

    #[test]
    fn variational_refit_never_lowers_the_elbo() {
        let (xs, ys) = toy_data(12);
        let z = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let problem = Problem::new(xs, DVector::from_column_slice(&ys), z, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m0 = DVector::from_fn(4, |_, _| rng.random::<f64>() * 0.4);
        let mut p = problem.packing.pack(&m0, &DMatrix::identity(4, 4), &kernel_1d());
        let (before, _) = problem.elbo_grad(&p).unwrap();
        problem.refit_variational(&mut p).unwrap();
        let (after, _) = problem.elbo_grad(&p).unwrap();
        assert!(after >= before - 1e-9, "refit lowered ELBO: {before} -> {after}");
    }

    #[test]
    fn m_equals_n_reproduces_the_exact_gp() {
        let (xs, ys) = toy_data(12);
        let cfg = SvgpConfig {
            num_inducing: 12,
            iters: 1500,
            step_size: 0.02,
            inducing_init: InducingInit::AtTrainingInputs,
            ..SvgpConfig::default()
        };
        let model = svgp_train(&xs, &ys, toy_encoder(), &cfg, 5).unwrap();
        let y_scaled: Vec<f64> =
            ys.iter().map(|v| (v - model.y_mean) / model.y_std).collect();
        let exact = ExactGp::fit(&xs, &y_scaled, model.kernel.clone()).unwrap();
        let mut sq = 0.0;
        for (x, _) in xs.iter().zip(&ys) {
            let f = model.predict(x).unwrap();
            let (mu_std, _) = exact.predict(x);
            let mu_exact = mu_std * model.y_std + model.y_mean;
            sq += (f.mu_hat - mu_exact).powi(2);
        }
        let rmse = (sq / xs.len() as f64).sqrt();
        assert!(rmse <= 1e-3, "RMSE vs exact GP = {rmse}");
    }

    #[test]
    fn constant_targets_predict_the_constant() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1]).collect();
        let ys = vec![0.93; 20];
        let model = svgp_train(&xs, &ys, toy_encoder(), &SvgpConfig {
            num_inducing: 8,
            iters: 300,
            ..SvgpConfig::default()
        }, 2)
        .unwrap();
        for x in &xs {
            let f = model.predict(x).unwrap();
            approx(f.mu_hat, 0.93, 0.01);
        }
    }

    #[test]
    fn empty_and_oversized_configs_are_rejected() {
        assert!(svgp_train(&[], &[], toy_encoder(), &SvgpConfig::default(), 1).is_err());
        let (xs, ys) = toy_data(5);
        let cfg = SvgpConfig { num_inducing: 9, ..SvgpConfig::default() };
        assert!(svgp_train(&xs, &ys, toy_encoder(), &cfg, 1).is_err());
    }

    #[test]
    fn divergent_configurations_abort_with_diagnostics() {
        let (xs, ys) = toy_data(10);
        let cfg = SvgpConfig {
            num_inducing: 4,
            iters: 400,
            step_size: 1e9, // deliberately absurd
            optimizer: Optimizer::GradientAscent,
            ..SvgpConfig::default()
        };
        let r = svgp_train(&xs, &ys, toy_encoder(), &cfg, 1);
        assert!(
            matches!(r, Err(Error::Diverged(_)) | Err(Error::LinAlg(_))),
            "expected divergence, got {r:?}"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (xs, ys) = toy_data(15);
        let cfg = SvgpConfig { num_inducing: 6, iters: 150, ..SvgpConfig::default() };
        let a = svgp_train(&xs, &ys, toy_encoder(), &cfg, 77).unwrap();
        let b = svgp_train(&xs, &ys, toy_encoder(), &cfg, 77).unwrap();
        assert_eq!(a, b);
        let fa = a.predict(&[0.77]).unwrap();
        let fb = b.predict(&[0.77]).unwrap();
        assert_eq!(fa.mu_hat.to_bits(), fb.mu_hat.to_bits());
    }

    #[test]
    fn model_serialization_round_trips_bit_exactly() {
        let (xs, ys) = toy_data(12);
        let cfg = SvgpConfig { num_inducing: 5, iters: 100, ..SvgpConfig::default() };
        let model = svgp_train(&xs, &ys, toy_encoder(), &cfg, 8).unwrap();
        let back = SvgpModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, back);
        for q in [0.0, 0.9, 2.2] {
            let f1 = model.predict(&[q]).unwrap();
            let f2 = back.predict(&[q]).unwrap();
            assert_eq!(f1.mu_hat.to_bits(), f2.mu_hat.to_bits());
            assert_eq!(f1.sigma_hat.to_bits(), f2.sigma_hat.to_bits());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn predictive_deviation_never_drops_below_the_noise_floor(
            seed in 0u64..200,
            q in -2.0f64..5.0,
        ) {
            let (xs, ys) = toy_data(10);
            let cfg = SvgpConfig { num_inducing: 4, iters: 120, ..SvgpConfig::default() };
            let model = svgp_train(&xs, &ys, toy_encoder(), &cfg, seed).unwrap();
            let f = model.predict(&[q]).unwrap();
            prop_assert!(f.sigma_hat >= model.noise_floor() - 1e-9);
        }

        #[test]
        fn kernel_is_symmetric_and_bounded(
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            var in 0.1f64..4.0,
            ell in 0.1f64..4.0,
        ) {
            let k = KernelParams { variance: var, lengthscales: vec![ell], noise: 0.1 };
            let kab = kernel_eval(&[a], &[b], &k);
            let kba = kernel_eval(&[b], &[a], &k);
            prop_assert_eq!(kab.to_bits(), kba.to_bits());
            prop_assert!(kab > 0.0 && kab <= var);
        }
    }
}
