//! Per-frame alternating minimization.
//!
//! Each frame runs `outer_iters` rounds of, in order: the closed-form
//! background step, several ADMM rounds coupling the total-variation split
//! (c = Dw, w = b) with growing penalty, a few geodesic basis updates, and
//! the coefficient refresh. The background vector is clamped to [0, 1] and
//! thresholded into the final mask.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diff::DifferenceOperator;
use crate::error::{Error, Result};
use crate::grid::{ForegroundMask, FrameVector, ImageGrid, SaliencyVector};
use crate::params::SolverParams;
use crate::subspace::SubspaceState;

/// Tolerance for the inner smoothing solve; tighter than the operator default
/// so downstream comparisons at 1e-8 hold with headroom.
const W_STEP_TOL: f64 = 1e-10;

/// Relative objective change below which the trace counts as stable.
pub const STABILIZATION_TOL: f64 = 1e-3;

/// Outer iteration (1-indexed) from which stability is required.
pub const STABILIZATION_FROM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Sparsity + reconstruction only.
    Baseline,
    /// Adds the total-variation connectivity term.
    AddConnectivity,
    /// Full objective including the saliency term.
    AddSaliencyMap,
}

impl AblationMode {
    /// Fold the mode into the weights: Baseline zeroes alpha and lambda,
    /// AddConnectivity zeroes alpha.
    pub fn effective(self, params: &SolverParams) -> SolverParams {
        let mut p = params.clone();
        match self {
            AblationMode::Baseline => {
                p.alpha = 0.0;
                p.lambda = 0.0;
            }
            AblationMode::AddConnectivity => p.alpha = 0.0,
            AblationMode::AddSaliencyMap => {}
        }
        p
    }

    pub fn requires_saliency(self) -> bool {
        matches!(self, AblationMode::AddSaliencyMap)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Baseline => "baseline",
            AblationMode::AddConnectivity => "connectivity",
            AblationMode::AddSaliencyMap => "saliency",
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(AblationMode::Baseline),
            "connectivity" => Ok(AblationMode::AddConnectivity),
            "saliency" => Ok(AblationMode::AddSaliencyMap),
            other => Err(Error::InvalidParam(format!(
                "unknown mode `{other}` (expected baseline, connectivity, or saliency)"
            ))),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-frame ADMM variables and the current penalty.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Background score per pixel, clamped to [0, 1].
    pub b: DVector<f64>,
    /// Split variable for Dw, length 2N.
    pub c: DVector<f64>,
    /// Split variable tied to b.
    pub w: DVector<f64>,
    /// Dual for w = b.
    pub x: DVector<f64>,
    /// Dual for c = Dw, length 2N.
    pub y: DVector<f64>,
    /// Current penalty.
    pub mu: f64,
}

impl SolverState {
    /// Fresh per-frame state: b warm-started (all-ones at stream start),
    /// w = b, everything else zero, penalty reset to mu0.
    pub fn init(n: usize, warm_b: Option<&DVector<f64>>, mu0: f64) -> SolverState {
        let b = match warm_b {
            Some(prev) if prev.len() == n => prev.map(|v| v.clamp(0.0, 1.0)),
            _ => DVector::from_element(n, 1.0),
        };
        SolverState {
            w: b.clone(),
            b,
            c: DVector::zeros(2 * n),
            x: DVector::zeros(n),
            y: DVector::zeros(2 * n),
            mu: mu0,
        }
    }
}

/// Soft-thresholding (shrinkage) operator `S_eps(x) = sgn(x)·max(|x|−eps, 0)`.
#[inline]
pub fn soft_threshold(x: f64, eps: f64) -> f64 {
    x.signum() * (x.abs() - eps).max(0.0)
}

/// Closed-form background update before clamping:
/// `b_i = (β + μw_i + x_i − ½((Uv)_i − o_i)² + α(1 − s_i)) / μ`.
pub fn b_step_raw(
    state: &SolverState,
    subspace: &SubspaceState,
    frame: &FrameVector,
    saliency: Option<&SaliencyVector>,
    params: &SolverParams,
) -> Result<DVector<f64>> {
    if state.mu <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "penalty mu must be positive, got {}",
            state.mu
        )));
    }
    let n = frame.grid.n();
    let recon = subspace.reconstruction();
    if recon.len() != n || state.b.len() != n {
        return Err(Error::LengthMismatch {
            context: "b-step".into(),
            expected: n,
            found: recon.len(),
        });
    }
    let mu = state.mu;
    let out = DVector::from_fn(n, |i, _| {
        let r = recon[i] - frame.values[i];
        let s = saliency.map_or(0.0, |s| s.values[i]);
        (params.beta + mu * state.w[i] + state.x[i] - 0.5 * r * r + params.alpha * (1.0 - s)) / mu
    });
    Ok(out)
}

/// Background update clamped into [0, 1].
pub fn b_step(
    state: &SolverState,
    subspace: &SubspaceState,
    frame: &FrameVector,
    saliency: Option<&SaliencyVector>,
    params: &SolverParams,
) -> Result<DVector<f64>> {
    Ok(b_step_raw(state, subspace, frame, saliency, params)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Shrinkage update `c = S_{λ/μ}(Dw − y/μ)`.
pub fn c_step(
    state: &SolverState,
    diff: &DifferenceOperator,
    params: &SolverParams,
) -> Result<DVector<f64>> {
    let eps = params.lambda / state.mu;
    let mut m = diff.apply(&state.w)?;
    m.axpy(-1.0 / state.mu, &state.y, 1.0);
    Ok(m.map(|v| soft_threshold(v, eps)))
}

/// Smoothing update `w = (I + DᵀD)⁻¹[Dᵀ(c + y/μ) + b − x/μ]`, warm-started
/// from the current w.
pub fn w_step(
    state: &SolverState,
    diff: &DifferenceOperator,
    _params: &SolverParams,
) -> Result<DVector<f64>> {
    let mut cy = state.c.clone();
    cy.axpy(1.0 / state.mu, &state.y, 1.0);
    let mut rhs = diff.apply_transpose(&cy)?;
    rhs += &state.b;
    rhs.axpy(-1.0 / state.mu, &state.x, 1.0);
    diff.solve_with_guess(&rhs, W_STEP_TOL, Some(&state.w))
}

/// Dual ascent `x ← x + μ(w−b)`, `y ← y + μ(c−Dw)`, then `μ ← aμ`. Both dual
/// updates use the pre-update penalty.
pub fn dual_step(
    state: &mut SolverState,
    diff: &DifferenceOperator,
    params: &SolverParams,
) -> Result<()> {
    let mu = state.mu;
    let dw = diff.apply(&state.w)?;
    for i in 0..state.x.len() {
        state.x[i] += mu * (state.w[i] - state.b[i]);
    }
    for i in 0..state.y.len() {
        state.y[i] += mu * (state.c[i] - dw[i]);
    }
    state.mu = params.a * mu;
    Ok(())
}

/// Objective value of the given mode for the current background vector,
/// evaluated with `‖Db‖₁` directly (not the split variable) so traces are
/// comparable across modes.
pub fn objective(
    b: &DVector<f64>,
    subspace: &SubspaceState,
    frame: &FrameVector,
    saliency: Option<&SaliencyVector>,
    params: &SolverParams,
    mode: AblationMode,
    diff: &DifferenceOperator,
) -> Result<f64> {
    let params = mode.effective(params);
    let saliency = if params.alpha == 0.0 { None } else { saliency };
    let n = frame.grid.n();
    if b.len() != n {
        return Err(Error::LengthMismatch {
            context: "objective".into(),
            expected: n,
            found: b.len(),
        });
    }
    let recon = subspace.reconstruction();
    let mut total = 0.0;
    for i in 0..n {
        let r = recon[i] - frame.values[i];
        let s = saliency.map_or(0.0, |s| s.values[i]);
        total += 0.5 * b[i] * r * r + params.beta * (1.0 - b[i])
            - params.alpha * b[i] * (1.0 - s);
    }
    if params.lambda != 0.0 {
        total += params.lambda * diff.tv_norm(b)?;
    }
    Ok(total)
}

/// Threshold the background vector into a mask: `f_i = 1` iff `b_i < t`.
pub fn binarize(b: &DVector<f64>, t: f64, grid: ImageGrid) -> Result<ForegroundMask> {
    if !(0.0 < t && t < 1.0) {
        return Err(Error::InvalidParam(format!(
            "binarization threshold must lie in (0, 1), got {t}"
        )));
    }
    let values = b.iter().map(|&v| u8::from(v < t)).collect();
    ForegroundMask::new(grid, values)
}

/// Whether consecutive objective values settled: requires
/// `|L_k − L_{k−1}| / max(1, |L_1|) < tol` for every `k ≥ from` (1-indexed).
/// Traces shorter than the window are held to the same test on their final step.
pub fn trace_stabilized(trace: &[f64], from: usize, tol: f64) -> bool {
    if trace.len() < 2 {
        return true;
    }
    let scale = trace[0].abs().max(1.0);
    let start = from.max(2);
    if trace.len() < start {
        let dl = (trace[trace.len() - 1] - trace[trace.len() - 2]).abs();
        return dl / scale < tol;
    }
    (start..=trace.len()).all(|k| (trace[k - 1] - trace[k - 2]).abs() / scale < tol)
}

/// Outcome of one processed frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub mask: ForegroundMask,
    /// Final background vector, clamped to [0, 1].
    pub b: DVector<f64>,
    /// Objective value after each outer iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Final ‖w − b‖₂.
    pub feas_w_b: f64,
    /// Final ‖c − Dw‖₂.
    pub feas_c_dw: f64,
    /// Penalty after the last inner round.
    pub final_mu: f64,
}

/// Run the full alternating minimization for one frame, updating the
/// background subspace in place.
///
/// Step order per outer iteration: b, ADMM rounds of c/w/duals, geodesic
/// basis updates, coefficient refresh. The penalty resets to `mu0` at frame
/// start and the duals reset with it; `warm_b` carries the previous frame's
/// background vector (all-ones at stream start).
pub fn process_frame(
    subspace: &mut SubspaceState,
    frame: &FrameVector,
    saliency: Option<&SaliencyVector>,
    diff: &DifferenceOperator,
    params: &SolverParams,
    mode: AblationMode,
    warm_b: Option<&DVector<f64>>,
) -> Result<FrameResult> {
    params.validate()?;
    if mode.requires_saliency() && saliency.is_none() {
        return Err(Error::InvalidParam(
            "saliency map required in saliency mode".into(),
        ));
    }
    if let Some(s) = saliency {
        if s.grid != frame.grid {
            return Err(Error::DimensionMismatch {
                context: "saliency map".into(),
                expected_width: frame.grid.width(),
                expected_height: frame.grid.height(),
                found_width: s.grid.width(),
                found_height: s.grid.height(),
            });
        }
    }
    if let Some(warm) = warm_b {
        if warm.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("warm-start background vector".into()));
        }
    }
    let eff = mode.effective(params);
    let saliency = if eff.alpha == 0.0 { None } else { saliency };
    let n = frame.grid.n();
    subspace.eta = eff.eta;
    let mut state = SolverState::init(n, warm_b, eff.mu0);
    let mut trace = Vec::with_capacity(eff.outer_iters);

    for _outer in 0..eff.outer_iters {
        state.b = b_step(&state, subspace, frame, saliency, &eff)?;
        for _inner in 0..eff.admm_inner_iters {
            state.c = c_step(&state, diff, &eff)?;
            state.w = w_step(&state, diff, &eff)?;
            dual_step(&mut state, diff, &eff)?;
        }
        for _round in 0..eff.u_inner_iters {
            let residual = subspace.residual(frame, &state.b)?;
            subspace.grassmann_update(&residual)?;
        }
        subspace.update_coefficients(frame)?;
        let value = objective(&state.b, subspace, frame, saliency, params, mode, diff)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective after outer iteration {}",
                trace.len() + 1
            )));
        }
        trace.push(value);
    }

    let mask = binarize(&state.b, eff.t, frame.grid)?;
    let converged = trace_stabilized(&trace, STABILIZATION_FROM, STABILIZATION_TOL);
    let feas_w_b = (&state.w - &state.b).norm();
    let feas_c_dw = (&state.c - diff.apply(&state.w)?).norm();
    Ok(FrameResult {
        mask,
        b: state.b,
        objective_trace: trace,
        converged,
        feas_w_b,
        feas_c_dw,
        final_mu: state.mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_pixel_setup(v: f64, o: f64) -> (SubspaceState, FrameVector, ImageGrid) {
        let grid = ImageGrid::new(1, 1).unwrap();
        let u = DMatrix::from_element(1, 1, 1.0);
        let state =
            SubspaceState::from_parts(u, DVector::from_vec(vec![v]), 1e-4).unwrap();
        let frame = FrameVector::new(grid, DVector::from_vec(vec![o])).unwrap();
        (state, frame, grid)
    }

    fn params(beta: f64, alpha: f64, lambda: f64, mu0: f64) -> SolverParams {
        SolverParams {
            alpha,
            beta,
            lambda,
            mu0,
            ..SolverParams::default()
        }
    }

    #[test]
    fn b_step_worked_examples() {
        // (Uv - o)^2 = 0.04 on a single pixel
        let (subspace, frame, grid) = single_pixel_setup(0.0, 0.2);
        let p = params(1.0, 1.0, 0.0, 2.0);
        let mut state = SolverState::init(1, None, 2.0);
        state.w[0] = 0.5;
        state.x[0] = 0.0;

        let fully_salient =
            SaliencyVector::new(grid, DVector::from_vec(vec![1.0])).unwrap();
        let raw = b_step_raw(&state, &subspace, &frame, Some(&fully_salient), &p).unwrap();
        assert!((raw[0] - 0.99).abs() < 1e-12, "raw {}", raw[0]);

        let non_salient = SaliencyVector::new(grid, DVector::zeros(1)).unwrap();
        let raw = b_step_raw(&state, &subspace, &frame, Some(&non_salient), &p).unwrap();
        assert!((raw[0] - 1.49).abs() < 1e-12);
        let clamped = b_step(&state, &subspace, &frame, Some(&non_salient), &p).unwrap();
        assert_eq!(clamped[0], 1.0);

        // huge residual: (Uv - o)^2 = 100 forces the pixel to foreground
        let (subspace, frame, _) = single_pixel_setup(0.0, 10.0);
        let raw = b_step_raw(&state, &subspace, &frame, Some(&fully_salient), &p).unwrap();
        assert!((raw[0] + 24.0).abs() < 1e-12, "raw {}", raw[0]);
        let clamped = b_step(&state, &subspace, &frame, Some(&fully_salient), &p).unwrap();
        assert_eq!(clamped[0], 0.0);
    }

    #[test]
    fn b_step_rejects_nonpositive_mu() {
        let (subspace, frame, _) = single_pixel_setup(0.0, 0.0);
        let p = params(1.0, 0.0, 0.0, 1.0);
        let mut state = SolverState::init(1, None, 1.0);
        state.mu = 0.0;
        assert!(b_step_raw(&state, &subspace, &frame, None, &p).is_err());
    }

    #[test]
    fn b_step_raw_is_strictly_decreasing_in_saliency() {
        let (subspace, frame, grid) = single_pixel_setup(0.3, 0.1);
        let p = params(2.0, 1.5, 0.0, 0.7);
        let state = SolverState::init(1, None, 0.7);
        let mut prev = f64::INFINITY;
        for step in 0..=10 {
            let s = step as f64 / 10.0;
            let map = SaliencyVector::new(grid, DVector::from_vec(vec![s])).unwrap();
            let raw = b_step_raw(&state, &subspace, &frame, Some(&map), &p).unwrap()[0];
            assert!(raw < prev, "saliency {s}: {raw} !< {prev}");
            prev = raw;
        }
    }

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
    }

    #[test]
    fn w_step_on_single_pixel_reduces_to_identity_system() {
        let grid = ImageGrid::new(1, 1).unwrap();
        let diff = DifferenceOperator::new(grid);
        let p = params(1.0, 0.0, 0.0, 2.0);
        let mut state = SolverState::init(1, None, 2.0);
        state.b[0] = 0.8;
        state.x[0] = 0.4;
        let w = w_step(&state, &diff, &p).unwrap();
        assert!((w[0] - (0.8 - 0.4 / 2.0)).abs() < 1e-10);
    }

    #[test]
    fn w_step_zero_rhs_gives_zero() {
        let grid = ImageGrid::new(2, 2).unwrap();
        let diff = DifferenceOperator::new(grid);
        let p = params(1.0, 0.0, 0.0, 1.0);
        let mut state = SolverState::init(4, None, 1.0);
        state.b.fill(0.0);
        state.w.fill(0.0);
        let w = w_step(&state, &diff, &p).unwrap();
        assert!(w.norm() < 1e-12);
    }

    #[test]
    fn dual_step_examples() {
        let grid = ImageGrid::new(1, 2).unwrap();
        let diff = DifferenceOperator::new(grid);
        let p = params(1.0, 0.0, 0.0, 2.0);

        // zero constraint violation leaves duals unchanged, scales mu
        let mut state = SolverState::init(2, None, 2.0);
        state.c = diff.apply(&state.w).unwrap();
        dual_step(&mut state, &diff, &p).unwrap();
        assert_eq!(state.x, DVector::zeros(2));
        assert_eq!(state.y, DVector::zeros(4));
        assert_eq!(state.mu, 2.5);

        // x accumulates mu * (w - b)
        let mut state = SolverState::init(2, None, 2.0);
        state.w = DVector::from_element(2, 1.5); // w - b = 0.5
        state.c = diff.apply(&state.w).unwrap();
        dual_step(&mut state, &diff, &p).unwrap();
        assert_eq!(state.x, DVector::from_element(2, 1.0));

        // mu growth: 0.1 * 1.25^3
        let mut state = SolverState::init(2, None, 0.1);
        state.c = diff.apply(&state.w).unwrap();
        for _ in 0..3 {
            dual_step(&mut state, &diff, &p).unwrap();
        }
        assert_eq!(state.mu, 0.1953125);
    }

    #[test]
    fn objective_trivial_cases() {
        let grid = ImageGrid::new(2, 2).unwrap();
        let diff = DifferenceOperator::new(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let training: Vec<_> = (0..3)
            .map(|_| {
                FrameVector::new(grid, DVector::from_fn(4, |_, _| rng.gen_range(1.0..255.0)))
                    .unwrap()
            })
            .collect();
        let mut subspace = crate::subspace::init_subspace(&training, 2, &mut rng).unwrap();
        let frame = training[0].clone();
        subspace.update_coefficients(&frame).unwrap();
        let p = params(3.0, 0.0, 0.0, 0.1);

        // b = 0 leaves only the sparsity term: N * beta
        let zero_b = DVector::zeros(4);
        let l = objective(&zero_b, &subspace, &frame, None, &p, AblationMode::Baseline, &diff)
            .unwrap();
        assert!((l - 4.0 * 3.0).abs() < 1e-12);

        // b = 1 with perfect reconstruction and full saliency: everything vanishes
        let inside = FrameVector::new(grid, subspace.reconstruction()).unwrap();
        let mut aligned = subspace.clone();
        aligned.update_coefficients(&inside).unwrap();
        let ones = DVector::from_element(4, 1.0);
        let salient = SaliencyVector::new(grid, DVector::from_element(4, 1.0)).unwrap();
        let p_full = params(3.0, 2.0, 7.0, 0.1);
        let l = objective(
            &ones,
            &aligned,
            &inside,
            Some(&salient),
            &p_full,
            AblationMode::AddSaliencyMap,
            &diff,
        )
        .unwrap();
        assert!(l.abs() < 1e-9, "L = {l}");
    }

    #[test]
    fn objective_matches_term_by_term_oracle() {
        let grid = ImageGrid::new(3, 2).unwrap();
        let diff = DifferenceOperator::new(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let training: Vec<_> = (0..3)
            .map(|_| {
                FrameVector::new(grid, DVector::from_fn(6, |_, _| rng.gen_range(0.0..255.0)))
                    .unwrap()
            })
            .collect();
        let mut subspace = crate::subspace::init_subspace(&training, 2, &mut rng).unwrap();
        let frame =
            FrameVector::new(grid, DVector::from_fn(6, |_, _| rng.gen_range(0.0..255.0))).unwrap();
        subspace.update_coefficients(&frame).unwrap();
        let b = DVector::from_fn(6, |_, _| rng.gen_range(0.0..1.0));
        let s = SaliencyVector::new(grid, DVector::from_fn(6, |_, _| rng.gen_range(0.0..1.0)))
            .unwrap();
        let p = params(2.0, 1.3, 0.8, 0.1);

        let got = objective(
            &b,
            &subspace,
            &frame,
            Some(&s),
            &p,
            AblationMode::AddSaliencyMap,
            &diff,
        )
        .unwrap();

        // independent re-evaluation, term by term
        let recon = subspace.basis() * subspace.coefficient_vector();
        let mut expect = 0.0;
        for i in 0..6 {
            let r = recon[i] - frame.values[i];
            expect += 0.5 * b[i] * r * r;
            expect += p.beta * (1.0 - b[i]);
            expect -= p.alpha * b[i] * (1.0 - s.values[i]);
        }
        let w = grid.width();
        let h = grid.height();
        for row in 0..h {
            for col in 0..w {
                let i = grid.flatten(row, col);
                if col + 1 < w {
                    expect += p.lambda * (b[i + 1] - b[i]).abs();
                }
                if row + 1 < h {
                    expect += p.lambda * (b[i + w] - b[i]).abs();
                }
            }
        }
        assert!((got - expect).abs() < 1e-9 * expect.abs().max(1.0));
    }

    #[test]
    fn admm_feasibility_gaps_shrink_over_the_last_rounds() {
        let grid = ImageGrid::new(4, 4).unwrap();
        let diff = DifferenceOperator::new(grid);
        let p = params(1.0, 0.0, 2.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let mut state = SolverState::init(16, None, p.mu0);
            state.b = DVector::from_fn(16, |_, _| rng.gen_range(0.0..1.0));
            state.w = state.b.clone();
            let mut gaps = Vec::new();
            for _ in 0..6 {
                state.c = c_step(&state, &diff, &p).unwrap();
                state.w = w_step(&state, &diff, &p).unwrap();
                dual_step(&mut state, &diff, &p).unwrap();
                let wb = (&state.w - &state.b).norm();
                let cdw = (&state.c - diff.apply(&state.w).unwrap()).norm();
                gaps.push((wb, cdw));
            }
            for k in gaps.len() - 3..gaps.len() - 1 {
                assert!(
                    gaps[k + 1].0 <= gaps[k].0 + 1e-12,
                    "trial {trial}: w-b gap rose {:?}",
                    gaps
                );
                assert!(
                    gaps[k + 1].1 <= gaps[k].1 + 1e-12,
                    "trial {trial}: c-Dw gap rose {:?}",
                    gaps
                );
            }
        }
    }

    #[test]
    fn binarize_follows_the_threshold_rule() {
        let grid = ImageGrid::new(2, 1).unwrap();
        let b = DVector::from_vec(vec![0.9, 0.1]);
        let mask = binarize(&b, 0.5, grid).unwrap();
        assert_eq!(mask.values, vec![0, 1]);

        // boundary goes to background
        let b = DVector::from_vec(vec![0.5, 0.49999]);
        let mask = binarize(&b, 0.5, grid).unwrap();
        assert_eq!(mask.values, vec![0, 1]);

        assert!(binarize(&b, 0.0, grid).is_err());
        assert!(binarize(&b, 1.0, grid).is_err());
    }

    #[test]
    fn trace_stabilization_window() {
        // flat after iteration 8 counts as stable
        let mut trace: Vec<f64> = (0..8).map(|k| 1000.0 / (k + 1) as f64).collect();
        trace.push(trace[7] - 0.05);
        trace.push(*trace.last().unwrap());
        assert!(trace_stabilized(&trace, 9, 1e-3));

        // a late jump breaks stability
        let mut jumpy = trace.clone();
        jumpy[9] += 700.0;
        assert!(!trace_stabilized(&jumpy, 9, 1e-3));
    }

    fn tiny_scene() -> (
        SubspaceState,
        FrameVector,
        SaliencyVector,
        DifferenceOperator,
        SolverParams,
    ) {
        let grid = ImageGrid::new(4, 4).unwrap();
        let diff = DifferenceOperator::new(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let training: Vec<_> = (0..6)
            .map(|_| {
                FrameVector::new(
                    grid,
                    DVector::from_fn(16, |_, _| 100.0 + rng.gen_range(-3.0..3.0)),
                )
                .unwrap()
            })
            .collect();
        let subspace = crate::subspace::init_subspace(&training, 3, &mut rng).unwrap();
        let mut frame = training[0].clone();
        frame.values[5] += 80.0; // one bright pixel
        let saliency = SaliencyVector::new(
            grid,
            DVector::from_fn(16, |i, _| if i == 5 { 1.0 } else { 0.0 }),
        )
        .unwrap();
        let p = SolverParams {
            alpha: 20.0,
            beta: 30.0,
            lambda: 10.0,
            eta: 1e-9,
            ..SolverParams::default()
        };
        (subspace, frame, saliency, diff, p)
    }

    #[test]
    fn ablation_modes_collapse_bitwise_when_weights_vanish() {
        let (subspace, frame, saliency, diff, p) = tiny_scene();

        // alpha = 0: saliency mode must equal connectivity mode bitwise
        let mut p_no_alpha = p.clone();
        p_no_alpha.alpha = 0.0;
        let mut s1 = subspace.clone();
        let r1 = process_frame(
            &mut s1,
            &frame,
            Some(&saliency),
            &diff,
            &p_no_alpha,
            AblationMode::AddSaliencyMap,
            None,
        )
        .unwrap();
        let mut s2 = subspace.clone();
        let r2 = process_frame(
            &mut s2,
            &frame,
            None,
            &diff,
            &p_no_alpha,
            AblationMode::AddConnectivity,
            None,
        )
        .unwrap();
        assert_eq!(r1.b, r2.b);
        assert_eq!(r1.mask, r2.mask);
        assert_eq!(r1.objective_trace, r2.objective_trace);

        // alpha = 0 and lambda = 0: everything matches the baseline
        let mut p_plain = p_no_alpha.clone();
        p_plain.lambda = 0.0;
        let mut s3 = subspace.clone();
        let r3 = process_frame(
            &mut s3,
            &frame,
            Some(&saliency),
            &diff,
            &p_plain,
            AblationMode::AddSaliencyMap,
            None,
        )
        .unwrap();
        let mut s4 = subspace.clone();
        let r4 = process_frame(
            &mut s4,
            &frame,
            None,
            &diff,
            &p_plain,
            AblationMode::Baseline,
            None,
        )
        .unwrap();
        assert_eq!(r3.b, r4.b);
        assert_eq!(r3.objective_trace, r4.objective_trace);
    }

    #[test]
    fn saliency_mode_without_map_is_rejected() {
        let (mut subspace, frame, _saliency, diff, p) = tiny_scene();
        let err = process_frame(
            &mut subspace,
            &frame,
            None,
            &diff,
            &p,
            AblationMode::AddSaliencyMap,
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn non_finite_warm_start_aborts_with_diagnostic() {
        let (mut subspace, frame, saliency, diff, p) = tiny_scene();
        let mut warm = DVector::from_element(16, 1.0);
        warm[3] = f64::NAN;
        let err = process_frame(
            &mut subspace,
            &frame,
            Some(&saliency),
            &diff,
            &p,
            AblationMode::AddSaliencyMap,
            Some(&warm),
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn bright_pixel_is_flagged_foreground() {
        let (mut subspace, frame, saliency, diff, p) = tiny_scene();
        let result = process_frame(
            &mut subspace,
            &frame,
            Some(&saliency),
            &diff,
            &p,
            AblationMode::AddSaliencyMap,
            None,
        )
        .unwrap();
        assert_eq!(result.mask.values[5], 1, "b = {:?}", result.b[5]);
        assert_eq!(result.objective_trace.len(), p.outer_iters);
    }

    proptest! {
        #[test]
        fn soft_threshold_matches_piecewise_definition(x in -100.0f64..100.0, eps in 0.0f64..50.0) {
            let expected = if x > eps {
                x - eps
            } else if x < -eps {
                x + eps
            } else {
                0.0
            };
            prop_assert_eq!(soft_threshold(x, eps), expected);
        }

        #[test]
        fn binarize_is_monotone_in_threshold(seed in 0u64..200) {
            let grid = ImageGrid::new(4, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = DVector::from_fn(8, |_, _| rng.gen_range(0.0..1.0));
            let mut prev = binarize(&b, 0.01, grid).unwrap();
            for k in 1..20 {
                let t = 0.01 + 0.98 * k as f64 / 19.0;
                let cur = binarize(&b, t, grid).unwrap();
                for i in 0..8 {
                    // raising t never turns foreground back into background
                    prop_assert!(cur.values[i] >= prev.values[i]);
                }
                prev = cur;
            }
        }

        #[test]
        fn binarize_is_idempotent_and_pure(seed in 0u64..50) {
            let grid = ImageGrid::new(3, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = DVector::from_fn(9, |_, _| rng.gen_range(0.0..1.0));
            let first = binarize(&b, 0.5, grid).unwrap();
            let second = binarize(&b, 0.5, grid).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
