//! Orthonormal background subspace and its geodesic update.
//!
//! The background model is an N×m column-orthonormal basis `U` plus the
//! current coefficient vector `v`. Per frame, the basis moves along a
//! Grassmannian geodesic driven by the mask-weighted reconstruction residual,
//! and is re-orthonormalized to keep ‖UᵀU − I‖ at round-off.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::FrameVector;

/// Default manifold step size; overridable through solver parameters.
pub const DEFAULT_ETA: f64 = 1e-4;

/// Relative eigenvalue cutoff below which a training direction counts as
/// rank-deficient and is replaced by a random orthonormal complement.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SubspaceState {
    /// N×m basis, columns orthonormal.
    u: DMatrix<f64>,
    /// Current m-dimensional coefficient vector.
    v: DVector<f64>,
    /// Geodesic step size.
    pub eta: f64,
}

/// Mask-weighted reconstruction residual, `R_i = b_i ((Uv)_i − o_i)`.
pub type ResidualVector = DVector<f64>;

impl SubspaceState {
    /// Assemble a state from an explicit basis; the basis must already be
    /// column-orthonormal to within 1e-6.
    pub fn from_parts(u: DMatrix<f64>, v: DVector<f64>, eta: f64) -> Result<Self> {
        if u.ncols() == 0 || u.ncols() > u.nrows() {
            return Err(Error::InvalidParam(format!(
                "basis must be tall with at least one column, got {}x{}",
                u.nrows(),
                u.ncols()
            )));
        }
        if v.len() != u.ncols() {
            return Err(Error::LengthMismatch {
                context: "coefficient vector".into(),
                expected: u.ncols(),
                found: v.len(),
            });
        }
        let state = SubspaceState { u, v, eta };
        let defect = state.orthonormality_error();
        if defect > 1e-6 {
            return Err(Error::InvalidParam(format!(
                "basis is not orthonormal (defect {defect:e})"
            )));
        }
        Ok(state)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn coefficient_vector(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn pixel_count(&self) -> usize {
        self.u.nrows()
    }

    /// Coefficients of a frame in the current basis, `v = Uᵀo`.
    pub fn coefficients(&self, frame: &FrameVector) -> Result<DVector<f64>> {
        self.check_frame(frame)?;
        Ok(self.u.tr_mul(&frame.values))
    }

    /// Replace the stored coefficient vector with `Uᵀo` for this frame.
    pub fn update_coefficients(&mut self, frame: &FrameVector) -> Result<()> {
        self.v = self.coefficients(frame)?;
        Ok(())
    }

    /// Current background reconstruction `Uv`.
    pub fn reconstruction(&self) -> DVector<f64> {
        &self.u * &self.v
    }

    /// `R_i = b_i ((Uv)_i − o_i)`.
    pub fn residual(&self, frame: &FrameVector, b: &DVector<f64>) -> Result<ResidualVector> {
        self.check_frame(frame)?;
        self.check_b(b)?;
        let recon = self.reconstruction();
        Ok(b.component_mul(&(recon - &frame.values)))
    }

    /// Weighted reconstruction loss `½ Σ b_i ((Uv)_i − o_i)²`.
    pub fn reconstruction_loss(&self, frame: &FrameVector, b: &DVector<f64>) -> Result<f64> {
        self.check_frame(frame)?;
        self.check_b(b)?;
        let recon = self.reconstruction();
        Ok(0.5
            * b.iter()
                .zip(recon.iter().zip(frame.values.iter()))
                .map(|(&bi, (&ri, &oi))| bi * (ri - oi) * (ri - oi))
                .sum::<f64>())
    }

    /// Euclidean gradient of the weighted loss with respect to U: the rank-1
    /// matrix `R vᵀ`.
    pub fn euclidean_gradient(&self, residual: &ResidualVector) -> DMatrix<f64> {
        residual * self.v.transpose()
    }

    /// One geodesic step against the manifold gradient.
    ///
    /// The residual is first projected onto the tangent space,
    /// `R⊥ = (I − UUᵀ)R`, the step angle is `σ = ‖R⊥‖·‖v‖` scaled by `eta`, and
    /// the basis is re-orthonormalized afterwards. A zero residual, zero
    /// coefficient vector, or zero step leaves U bitwise unchanged.
    pub fn grassmann_update(&mut self, residual: &ResidualVector) -> Result<()> {
        if residual.len() != self.pixel_count() {
            return Err(Error::LengthMismatch {
                context: "grassmann residual".into(),
                expected: self.pixel_count(),
                found: residual.len(),
            });
        }
        if residual.iter().any(|x| !x.is_finite()) || self.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("grassmann update inputs".into()));
        }
        let proj = self.u.tr_mul(residual);
        let perp = residual - &self.u * &proj;
        let perp_norm = perp.norm();
        let v_norm = self.v.norm();
        if perp_norm == 0.0 || v_norm == 0.0 || self.eta == 0.0 {
            return Ok(());
        }
        let sigma = perp_norm * v_norm;
        let angle = sigma * self.eta;
        let p = &self.v / v_norm;
        let up = &self.u * &p;
        self.u.ger(angle.cos() - 1.0, &up, &p, 1.0);
        self.u.ger(-angle.sin() / perp_norm, &perp, &p, 1.0);
        self.reorthonormalize();
        Ok(())
    }

    /// ‖UᵀU − I‖_F, the orthonormality defect.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.dim();
        (self.u.tr_mul(&self.u) - DMatrix::<f64>::identity(m, m)).norm()
    }

    fn reorthonormalize(&mut self) {
        let qr = self.u.clone().qr();
        let r = qr.r();
        let mut q = qr.q();
        for j in 0..q.ncols() {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        self.u = q;
    }

    fn check_frame(&self, frame: &FrameVector) -> Result<()> {
        if frame.values.len() != self.pixel_count() {
            return Err(Error::LengthMismatch {
                context: "subspace frame".into(),
                expected: self.pixel_count(),
                found: frame.values.len(),
            });
        }
        Ok(())
    }

    fn check_b(&self, b: &DVector<f64>) -> Result<()> {
        if b.len() != self.pixel_count() {
            return Err(Error::LengthMismatch {
                context: "subspace weights".into(),
                expected: self.pixel_count(),
                found: b.len(),
            });
        }
        Ok(())
    }

    /// Serialize the basis: u64 LE rows, u64 LE cols, then row-major f64 LE.
    pub fn save_basis(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(16 + 8 * self.u.len());
        out.write_all(&(self.u.nrows() as u64).to_le_bytes())
            .expect("vec write");
        out.write_all(&(self.u.ncols() as u64).to_le_bytes())
            .expect("vec write");
        for row in 0..self.u.nrows() {
            for col in 0..self.u.ncols() {
                out.write_all(&self.u[(row, col)].to_le_bytes())
                    .expect("vec write");
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Load a serialized basis. The coefficient vector starts at zero; call
    /// [`SubspaceState::update_coefficients`] with the first frame before use.
    pub fn load_basis(path: &Path, eta: f64) -> Result<SubspaceState> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        if data.len() < 16 {
            return Err(Error::format(path, "truncated basis file"));
        }
        let rows = u64::from_le_bytes(data[0..8].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
        let expected = 16 + 8 * rows * cols;
        if rows == 0 || cols == 0 || data.len() != expected {
            return Err(Error::format(path, "basis file size does not match header"));
        }
        let mut u = DMatrix::zeros(rows, cols);
        let mut off = 16;
        for row in 0..rows {
            for col in 0..cols {
                u[(row, col)] = f64::from_le_bytes(data[off..off + 8].try_into().unwrap());
                off += 8;
            }
        }
        Ok(SubspaceState {
            u,
            v: DVector::zeros(cols),
            eta,
        })
    }
}

/// Initialize the basis from the top-m left singular vectors of the training
/// matrix, with `v` set from the last training frame.
///
/// Rank-deficient training directions are padded with random orthonormal
/// complements drawn from `rng` (reported through `log::warn`).
pub fn init_subspace(
    training_frames: &[FrameVector],
    m: usize,
    rng: &mut impl Rng,
) -> Result<SubspaceState> {
    if training_frames.is_empty() {
        return Err(Error::EmptyInput("training frames".into()));
    }
    if m == 0 {
        return Err(Error::InvalidParam("subspace dimension m must be >= 1".into()));
    }
    if training_frames.len() < m {
        return Err(Error::InvalidParam(format!(
            "need at least m = {m} training frames, got {}",
            training_frames.len()
        )));
    }
    let grid = training_frames[0].grid;
    let n = grid.n();
    if m > n {
        return Err(Error::InvalidParam(format!(
            "subspace dimension m = {m} exceeds pixel count {n}"
        )));
    }
    for f in training_frames {
        if f.grid != grid {
            return Err(Error::DimensionMismatch {
                context: "training frame".into(),
                expected_width: grid.width(),
                expected_height: grid.height(),
                found_width: f.grid.width(),
                found_height: f.grid.height(),
            });
        }
    }
    let k = training_frames.len();
    let a = DMatrix::from_fn(n, k, |row, col| training_frames[col].values[row]);

    // Left singular vectors via the K×K Gram spectrum: for A = UΣVᵀ,
    // AᵀA = VΣ²Vᵀ and U = AVΣ⁻¹. K is the training count, so this stays small.
    let gram = a.tr_mul(&a);
    let eigen = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eigen.eigenvalues[j].total_cmp(&eigen.eigenvalues[i]));
    let lambda_max = eigen.eigenvalues[order[0]].max(0.0);

    let mut u = DMatrix::zeros(n, m);
    let mut deficient = 0usize;
    for (col, &idx) in order.iter().take(m).enumerate() {
        let lambda = eigen.eigenvalues[idx];
        if lambda > lambda_max * RANK_TOL && lambda > 0.0 {
            let dir = &a * eigen.eigenvectors.column(idx);
            u.set_column(col, &(dir / lambda.sqrt()));
        } else {
            deficient += 1;
            let filler = random_complement(&u, col, rng);
            u.set_column(col, &filler);
        }
    }
    if deficient > 0 {
        log::warn!(
            "training matrix is rank-deficient: padded {deficient} of {m} basis columns with random complements"
        );
    }

    let mut state = SubspaceState {
        u,
        v: DVector::zeros(m),
        eta: DEFAULT_ETA,
    };
    state.reorthonormalize();
    fix_column_signs(&mut state.u);
    state.v = state.u.tr_mul(&training_frames[k - 1].values);
    Ok(state)
}

/// Force the largest-magnitude entry of each column positive so the
/// decomposition is deterministic.
fn fix_column_signs(u: &mut DMatrix<f64>) {
    for j in 0..u.ncols() {
        let col = u.column(j);
        let mut lead = 0.0f64;
        for &x in col.iter() {
            if x.abs() > lead.abs() {
                lead = x;
            }
        }
        if lead < 0.0 {
            u.column_mut(j).neg_mut();
        }
    }
}

fn random_complement(u: &DMatrix<f64>, filled: usize, rng: &mut impl Rng) -> DVector<f64> {
    let n = u.nrows();
    loop {
        let mut cand = DVector::from_fn(n, |_, _| rng.gen_range(-1.0f64..1.0));
        // two Gram-Schmidt passes against the columns already placed
        for _ in 0..2 {
            for j in 0..filled {
                let col = u.column(j);
                let proj = col.dot(&cand);
                cand.axpy(-proj, &col.clone_owned(), 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-6 {
            return cand / norm;
        }
    }
}
