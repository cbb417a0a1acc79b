//! Shared helpers for the integration suites: dense oracles kept independent
//! of the library's matrix-free implementations, plus the solver
//! configuration the synthetic harness scenes run with.

#![allow(dead_code)]

use modsm::grid::ImageGrid;
use modsm::params::ParamOverrides;
use nalgebra::{DMatrix, DVector};

/// Harness solver weights for the synthetic scenes.
///
/// The empirical derivation rules key the sparsity weight to the training
/// residual accumulated over whole frames, which saturates the closed-form
/// background step at desk scale, and the oracle saliency maps are exactly
/// zero over the object-free training window, which zeroes the derived
/// saliency weight. The harness therefore pins the weights explicitly,
/// keeping the published shape (lambda = 5 beta, beta = 4.5 x the per-pixel
/// noise variance of the sigma = 5 scenes).
pub const HARNESS_BETA: f64 = 112.5;
pub const HARNESS_LAMBDA: f64 = 562.5;
pub const HARNESS_ALPHA: f64 = 4000.0;
/// Step size sized so the basis keeps adapting without the noise floor of
/// intensity-scale residuals dominating the late objective trace.
pub const HARNESS_ETA: f64 = 1e-11;

pub fn harness_overrides() -> ParamOverrides {
    let mut ov = ParamOverrides::default();
    ov.set("beta", &HARNESS_BETA.to_string()).unwrap();
    ov.set("lambda", &HARNESS_LAMBDA.to_string()).unwrap();
    ov.set("alpha", &HARNESS_ALPHA.to_string()).unwrap();
    ov.set("eta", &HARNESS_ETA.to_string()).unwrap();
    ov
}

/// Dense first-difference matrix: N horizontal rows over N vertical rows,
/// forward differences, zero rows at the last column/row.
pub fn dense_difference_matrix(grid: ImageGrid) -> DMatrix<f64> {
    let n = grid.n();
    let w = grid.width();
    let h = grid.height();
    let mut d = DMatrix::zeros(2 * n, n);
    for row in 0..h {
        for col in 0..w {
            let i = grid.flatten(row, col);
            if col + 1 < w {
                d[(i, i)] = -1.0;
                d[(i, i + 1)] = 1.0;
            }
            if row + 1 < h {
                d[(n + i, i)] = -1.0;
                d[(n + i, i + w)] = 1.0;
            }
        }
    }
    d
}

/// Direct dense solve of (I + DᵀD) x = rhs.
pub fn dense_smoothing_solve(grid: ImageGrid, rhs: &DVector<f64>) -> DVector<f64> {
    let d = dense_difference_matrix(grid);
    let n = grid.n();
    let a = DMatrix::identity(n, n) + d.transpose() * &d;
    a.lu().solve(rhs).expect("SPD system is invertible")
}

/// Independent weighted reconstruction loss used by the finite-difference
/// gradient oracle: `½ Σ b_i (U_i·v − o_i)²` computed from raw matrices.
pub fn weighted_loss(u: &DMatrix<f64>, v: &DVector<f64>, b: &DVector<f64>, o: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..u.nrows() {
        let mut row_dot = 0.0;
        for j in 0..u.ncols() {
            row_dot += u[(i, j)] * v[j];
        }
        let r = row_dot - o[i];
        total += 0.5 * b[i] * r * r;
    }
    total
}

/// Random column-orthonormal basis via QR.
pub fn random_orthonormal(
    n: usize,
    m: usize,
    rng: &mut impl rand::Rng,
) -> DMatrix<f64> {
    loop {
        let raw = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0f64..1.0));
        let qr = raw.qr();
        let q = qr.q();
        if q.ncols() == m {
            return q;
        }
    }
}
