//! Empirical parameter rules: training residual variance, saliency
//! statistics, and the derived solver weights.


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FrameVector, SaliencyVector};
use crate::subspace::SubspaceState;

/// Floor applied to beta when the training residual is exactly zero, so the
/// objective stays well-posed.
pub const BETA_FLOOR: f64 = 1e-6;

/// Decay of the running residual-variance estimate (~20-frame memory).
pub const EMA_DECAY: f64 = 0.95;

/// Solver weights and loop counts. Dumps/loads as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Subspace dimension (basis-vector count).
    pub m: usize,
    /// Saliency weight.
    pub alpha: f64,
    /// Sparsity weight.
    pub beta: f64,
    /// Connectivity weight.
    pub lambda: f64,
    /// Initial penalty, reset at each frame.
    pub mu0: f64,
    /// Penalty growth factor.
    pub a: f64,
    /// Binarization threshold.
    pub t: f64,
    /// Manifold step size.
    pub eta: f64,
    pub outer_iters: usize,
    pub admm_inner_iters: usize,
    pub u_inner_iters: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            m: 5,
            alpha: 0.0,
            beta: 1.0,
            lambda: 5.0,
            mu0: 0.1,
            a: 1.25,
            t: 0.5,
            eta: crate::subspace::DEFAULT_ETA,
            outer_iters: 10,
            admm_inner_iters: 5,
            u_inner_iters: 3,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParam(msg.into()))
            }
        };
        check(self.m >= 1, "m must be >= 1")?;
        check(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha must be >= 0")?;
        check(self.beta > 0.0 && self.beta.is_finite(), "beta must be > 0")?;
        check(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be >= 0")?;
        check(self.mu0 > 0.0 && self.mu0.is_finite(), "mu0 must be > 0")?;
        check(self.a > 1.0 && self.a.is_finite(), "a must be > 1")?;
        check(self.t > 0.0 && self.t < 1.0, "t must lie in (0, 1)")?;
        check(self.eta > 0.0 && self.eta.is_finite(), "eta must be > 0")?;
        check(self.outer_iters >= 1, "outer_iters must be >= 1")?;
        check(self.admm_inner_iters >= 1, "admm_inner_iters must be >= 1")?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: SolverParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }
}

/// Per-field overrides; any set field wins over the derived value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamOverrides {
    pub m: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub mu0: Option<f64>,
    pub a: Option<f64>,
    pub t: Option<f64>,
    pub eta: Option<f64>,
    pub outer_iters: Option<usize>,
    pub admm_inner_iters: Option<usize>,
    pub u_inner_iters: Option<usize>,
}

impl ParamOverrides {
    /// Parse a `key=value` pair as accepted by the CLI.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::InvalidParam(format!("cannot parse `{value}` for parameter {key}"))
            })
        }
        match key {
            "m" => self.m = Some(num(key, value)?),
            "alpha" => self.alpha = Some(num(key, value)?),
            "beta" => self.beta = Some(num(key, value)?),
            "lambda" => self.lambda = Some(num(key, value)?),
            "mu0" => self.mu0 = Some(num(key, value)?),
            "a" => self.a = Some(num(key, value)?),
            "t" => self.t = Some(num(key, value)?),
            "eta" => self.eta = Some(num(key, value)?),
            "outer_iters" => self.outer_iters = Some(num(key, value)?),
            "admm_inner_iters" => self.admm_inner_iters = Some(num(key, value)?),
            "u_inner_iters" => self.u_inner_iters = Some(num(key, value)?),
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown parameter `{other}` (expected one of m, alpha, beta, lambda, mu0, a, t, eta, outer_iters, admm_inner_iters, u_inner_iters)"
                )))
            }
        }
        Ok(())
    }

    fn merged_with(&self, other: &ParamOverrides) -> ParamOverrides {
        ParamOverrides {
            m: self.m.or(other.m),
            alpha: self.alpha.or(other.alpha),
            beta: self.beta.or(other.beta),
            lambda: self.lambda.or(other.lambda),
            mu0: self.mu0.or(other.mu0),
            a: self.a.or(other.a),
            t: self.t.or(other.t),
            eta: self.eta.or(other.eta),
            outer_iters: self.outer_iters.or(other.outer_iters),
            admm_inner_iters: self.admm_inner_iters.or(other.admm_inner_iters),
            u_inner_iters: self.u_inner_iters.or(other.u_inner_iters),
        }
    }

    /// Overlay `self` on top of `base` (fields set in `self` win).
    pub fn over(&self, base: &ParamOverrides) -> ParamOverrides {
        self.merged_with(base)
    }
}

/// Statistics of the training window used to derive parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    /// Residual variance over the training window.
    pub sigma_hat_sq: f64,
    /// Grand mean saliency over the training maps (s_M).
    pub saliency_mean: f64,
    /// Fraction of pixel samples whose saliency strictly exceeds the mean (s_m).
    pub exceed_fraction: f64,
    /// Training-frame count |Ω|.
    pub omega_size: usize,
}

/// `σ̂² = (1/(2|Ω|)) Σ ‖Uv − o‖₂²` over the training frames, with each `v`
/// taken as `Uᵀo`.
pub fn residual_variance(
    subspace: &SubspaceState,
    training_frames: &[FrameVector],
) -> Result<f64> {
    if training_frames.is_empty() {
        return Err(Error::EmptyInput("training frames for residual variance".into()));
    }
    let mut total = 0.0;
    for frame in training_frames {
        let coeffs = subspace.coefficients(frame)?;
        let recon = subspace.basis() * coeffs;
        total += (recon - &frame.values).norm_squared();
    }
    Ok(total / (2.0 * training_frames.len() as f64))
}

/// Squared reconstruction error of one frame scaled by ½, the per-frame
/// analogue of the training residual variance.
pub fn frame_residual_term(subspace: &SubspaceState, frame: &FrameVector) -> Result<f64> {
    let coeffs = subspace.coefficients(frame)?;
    let recon = subspace.basis() * coeffs;
    Ok(0.5 * (recon - &frame.values).norm_squared())
}

/// Grand mean saliency s_M and the strict-exceedance fraction s_m.
pub fn saliency_stats(training_saliency: &[SaliencyVector]) -> Result<(f64, f64)> {
    if training_saliency.is_empty() {
        return Err(Error::EmptyInput("training saliency maps".into()));
    }
    let total_pixels: usize = training_saliency.iter().map(|s| s.values.len()).sum();
    let sum: f64 = training_saliency
        .iter()
        .map(|s| s.values.iter().sum::<f64>())
        .sum();
    let s_mean = sum / total_pixels as f64;
    let exceed: usize = training_saliency
        .iter()
        .map(|s| s.values.iter().filter(|&&v| v > s_mean).count())
        .sum();
    Ok((s_mean, exceed as f64 / total_pixels as f64))
}

/// Collect the training statistics in one pass.
pub fn training_stats(
    subspace: &SubspaceState,
    training_frames: &[FrameVector],
    training_saliency: Option<&[SaliencyVector]>,
) -> Result<TrainingStats> {
    let sigma_hat_sq = residual_variance(subspace, training_frames)?;
    let (saliency_mean, exceed_fraction) = match training_saliency {
        Some(maps) if !maps.is_empty() => saliency_stats(maps)?,
        _ => (0.0, 0.0),
    };
    Ok(TrainingStats {
        sigma_hat_sq,
        saliency_mean,
        exceed_fraction,
        omega_size: training_frames.len(),
    })
}

/// Derive solver parameters from the empirical rules, with overrides winning.
///
/// beta starts at `4.5 σ̂²` (floored when the training residual is zero),
/// lambda is `5 beta`, and alpha is
/// `min(floor(s_m / (s_m − s_M)) σ̂ s_m, 6.5 beta)`, falling back to
/// `6.5 beta s_m` when the denominator is non-positive.
pub fn derive_params(stats: &TrainingStats, overrides: &ParamOverrides) -> Result<SolverParams> {
    let mut p = SolverParams::default();
    let mut beta = 4.5 * stats.sigma_hat_sq;
    if beta <= 0.0 && overrides.beta.is_none() {
        log::warn!("training residual variance is zero; flooring beta at {BETA_FLOOR:e}");
        beta = BETA_FLOOR;
    }
    p.beta = overrides.beta.unwrap_or(beta);
    p.lambda = overrides.lambda.unwrap_or(5.0 * p.beta);

    let s_m = stats.exceed_fraction;
    let s_mean = stats.saliency_mean;
    let sigma_hat = stats.sigma_hat_sq.max(0.0).sqrt();
    let alpha = if s_m > s_mean && s_m > 0.0 {
        let ratio = (s_m / (s_m - s_mean)).floor();
        (ratio * sigma_hat * s_m).min(6.5 * p.beta)
    } else {
        6.5 * p.beta * s_m
    };
    p.alpha = overrides.alpha.unwrap_or(alpha);

    if let Some(m) = overrides.m {
        p.m = m;
    }
    if let Some(mu0) = overrides.mu0 {
        p.mu0 = mu0;
    }
    if let Some(a) = overrides.a {
        p.a = a;
    }
    if let Some(t) = overrides.t {
        p.t = t;
    }
    if let Some(eta) = overrides.eta {
        p.eta = eta;
    }
    if let Some(n) = overrides.outer_iters {
        p.outer_iters = n;
    }
    if let Some(n) = overrides.admm_inner_iters {
        p.admm_inner_iters = n;
    }
    if let Some(n) = overrides.u_inner_iters {
        p.u_inner_iters = n;
    }
    p.validate()?;
    Ok(p)
}

/// Per-frame sparsity-weight update: `max(β/2, 4.5 σ̂²)`.
pub fn update_beta(current_beta: f64, sigma_hat_sq: f64) -> f64 {
    (current_beta / 2.0).max(4.5 * sigma_hat_sq)
}

/// Exponential moving average of the per-frame residual term, feeding
/// [`update_beta`] after the training window.
#[derive(Debug, Clone, Copy)]
pub struct ResidualEma {
    value: f64,
    decay: f64,
}

impl ResidualEma {
    pub fn new(initial: f64) -> Self {
        ResidualEma {
            value: initial,
            decay: EMA_DECAY,
        }
    }

    pub fn observe(&mut self, frame_residual_term: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * frame_residual_term;
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}
