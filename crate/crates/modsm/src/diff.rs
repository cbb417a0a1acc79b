//! First-difference operator over the image grid, matrix-free.
//!
//! The operator stacks N horizontal forward differences above N vertical
//! forward differences, with zero rows at the last column/row. Its normal
//! matrix DᵀD is the 4-neighbor graph Laplacian, so I + DᵀD is symmetric
//! positive definite and the smoothing system always has a unique solution.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy)]
pub struct DifferenceOperator {
    grid: ImageGrid,
}

impl DifferenceOperator {
    pub fn new(grid: ImageGrid) -> Self {
        DifferenceOperator { grid }
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    fn check_len(&self, context: &str, found: usize, expected: usize) -> Result<()> {
        if found != expected {
            return Err(Error::LengthMismatch {
                context: context.into(),
                expected,
                found,
            });
        }
        Ok(())
    }

    /// D·vec: horizontal differences in entries 0..N, vertical in N..2N.
    pub fn apply(&self, vec: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.grid.n();
        self.check_len("difference apply", vec.len(), n)?;
        let w = self.grid.width();
        let h = self.grid.height();
        let mut out = DVector::zeros(2 * n);
        for row in 0..h {
            for col in 0..w {
                let i = self.grid.flatten(row, col);
                if col + 1 < w {
                    out[i] = vec[i + 1] - vec[i];
                }
                if row + 1 < h {
                    out[n + i] = vec[i + w] - vec[i];
                }
            }
        }
        Ok(out)
    }

    /// Dᵀ·vec, the exact adjoint of [`DifferenceOperator::apply`].
    pub fn apply_transpose(&self, vec: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.grid.n();
        self.check_len("difference apply_transpose", vec.len(), 2 * n)?;
        let w = self.grid.width();
        let h = self.grid.height();
        let mut out = DVector::zeros(n);
        for row in 0..h {
            for col in 0..w {
                let i = self.grid.flatten(row, col);
                if col + 1 < w {
                    let d = vec[i];
                    out[i] -= d;
                    out[i + 1] += d;
                }
                if row + 1 < h {
                    let d = vec[n + i];
                    out[i] -= d;
                    out[i + w] += d;
                }
            }
        }
        Ok(out)
    }

    /// ‖D·vec‖₁.
    pub fn tv_norm(&self, vec: &DVector<f64>) -> Result<f64> {
        Ok(self.apply(vec)?.iter().map(|d| d.abs()).sum())
    }

    /// (I + DᵀD)·vec without forming intermediates for the caller.
    fn apply_system(&self, vec: &DVector<f64>, scratch: &mut DVector<f64>) -> DVector<f64> {
        let n = self.grid.n();
        let w = self.grid.width();
        let h = self.grid.height();
        scratch.fill(0.0);
        for row in 0..h {
            for col in 0..w {
                let i = self.grid.flatten(row, col);
                if col + 1 < w {
                    scratch[i] = vec[i + 1] - vec[i];
                }
                if row + 1 < h {
                    scratch[n + i] = vec[i + w] - vec[i];
                }
            }
        }
        let mut out = vec.clone();
        for row in 0..h {
            for col in 0..w {
                let i = self.grid.flatten(row, col);
                if col + 1 < w {
                    let d = scratch[i];
                    out[i] -= d;
                    out[i + 1] += d;
                }
                if row + 1 < h {
                    let d = scratch[n + i];
                    out[i] -= d;
                    out[i + w] += d;
                }
            }
        }
        out
    }

    /// Diagonal of I + DᵀD: one plus the number of incident grid edges.
    fn system_diagonal(&self) -> DVector<f64> {
        let w = self.grid.width();
        let h = self.grid.height();
        DVector::from_fn(self.grid.n(), |i, _| {
            let (row, col) = self.grid.unflatten(i);
            let mut deg = 0.0;
            if col + 1 < w {
                deg += 1.0;
            }
            if col > 0 {
                deg += 1.0;
            }
            if row + 1 < h {
                deg += 1.0;
            }
            if row > 0 {
                deg += 1.0;
            }
            1.0 + deg
        })
    }

    /// Solve (I + DᵀD)·w = rhs to ‖residual‖₂ ≤ tol·max(1, ‖rhs‖₂).
    /// 1e-8 is a good default tolerance.
    pub fn solve_smoothing_system(&self, rhs: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        self.solve_with_guess(rhs, tol, None)
    }

    /// Same solve, warm-started. Jacobi-preconditioned conjugate gradient,
    /// iteration cap 10·√N.
    pub fn solve_with_guess(
        &self,
        rhs: &DVector<f64>,
        tol: f64,
        guess: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let n = self.grid.n();
        self.check_len("smoothing solve", rhs.len(), n)?;
        if tol <= 0.0 {
            return Err(Error::InvalidParam("solve tolerance must be positive".into()));
        }
        let max_iters = (10.0 * (n as f64).sqrt()).ceil() as usize + 2;
        let threshold = tol * rhs.norm().max(1.0);

        let inv_diag = self.system_diagonal().map(|d| 1.0 / d);
        let mut scratch = DVector::zeros(2 * n);
        let mut x = match guess {
            Some(g) if g.len() == n => g.clone(),
            _ => DVector::zeros(n),
        };
        let mut r = rhs - self.apply_system(&x, &mut scratch);
        let mut achieved = r.norm();
        if achieved <= threshold {
            return Ok(x);
        }
        let mut z = r.component_mul(&inv_diag);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        for iter in 0..max_iters {
            let ap = self.apply_system(&p, &mut scratch);
            let pap = p.dot(&ap);
            if pap <= 0.0 {
                // SPD system: only reachable through round-off on a converged p
                break;
            }
            let alpha = rz / pap;
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            achieved = r.norm();
            let mut restarted = false;
            if achieved <= threshold {
                // recurrence residual can drift; confirm against the true residual
                let true_res = (rhs - self.apply_system(&x, &mut scratch)).norm();
                if true_res <= threshold {
                    return Ok(x);
                }
                achieved = true_res;
                if iter + 1 == max_iters {
                    break;
                }
                r = rhs - self.apply_system(&x, &mut scratch);
                restarted = true;
            }
            z = r.component_mul(&inv_diag);
            let rz_next = r.dot(&z);
            if restarted {
                p = z.clone();
            } else {
                p = &z + (rz_next / rz) * &p;
            }
            rz = rz_next;
        }
        Err(Error::CgNoConvergence {
            iterations: max_iters,
            tol,
            achieved,
        })
    }
}
