//! Separable 2D blur operator with an SVD pseudo-inverse.
//!
//! `A = A_H ⊗ A_W` acts on the last two axes of a row-major tensor as
//! `A(X) = A_H · X · A_Wᵀ`, where `A_H` and `A_W` are banded stencil matrices
//! built from 1D kernels. Both factors are kept in SVD form, which gives the
//! pseudo-inverse directly and two complementary projectors:
//!
//! - low-pass `B(z) = A⁺A z`, the projection onto the row space of `A`;
//! - high-pass `(I − A⁺A) z`, the projection onto the null space of `A`.
//!
//! Singular values at or below [`SINGULAR_CUTOFF`] get a zero reciprocal.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub const SINGULAR_CUTOFF: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreqError {
    #[error("bad kernel: {0}")]
    BadKernel(String),
    #[error("bad dimensions: {0}")]
    BadDims(String),
    #[error("shape mismatch: length {len} is not a positive multiple of {plane}")]
    ShapeMismatch { len: usize, plane: usize },
}

/// A projector on flat latent vectors, as consumed by the anti-artifact sampler.
pub trait LowPass: Sync {
    /// Whether a latent of `len` scalars has a shape this projector accepts.
    fn accepts(&self, len: usize) -> bool;

    /// Low-frequency part of `z`. Callers check [`LowPass::accepts`] first.
    fn low_pass(&self, z: &[f64]) -> Vec<f64>;
}

/// Square `n×n` stencil matrix: `A[i, j] = kernel[j − i + half]` for in-range
/// `j`. Taps that fall outside the matrix are dropped without renormalizing.
pub fn banded_matrix(kernel: &[f64], n: usize) -> DMatrix<f64> {
    let half = (kernel.len() / 2) as isize;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n as isize {
        for j in (i - half)..=(i + half) {
            if (0..n as isize).contains(&j) {
                a[(i as usize, j as usize)] = kernel[(j - i + half) as usize];
            }
        }
    }
    a
}

#[derive(Clone, Debug)]
struct AxisFactors {
    u: DMatrix<f64>,
    s: Vec<f64>,
    vt: DMatrix<f64>,
    s_pinv: Vec<f64>,
}

impl AxisFactors {
    fn new(a: DMatrix<f64>) -> Self {
        let svd = a.svd(true, true);
        let s: Vec<f64> = svd.singular_values.iter().copied().collect();
        let s_pinv = s
            .iter()
            .map(|&v| if v > SINGULAR_CUTOFF { 1.0 / v } else { 0.0 })
            .collect();
        AxisFactors {
            u: svd.u.expect("requested U"),
            s,
            vt: svd.v_t.expect("requested Vt"),
            s_pinv,
        }
    }

    fn rank(&self) -> usize {
        self.s_pinv.iter().filter(|&&r| r != 0.0).count()
    }

    fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.vt
    }
}

fn scale_rows(m: &mut DMatrix<f64>, s: &[f64]) {
    for (i, s) in s.iter().enumerate() {
        m.row_mut(i).scale_mut(*s);
    }
}

fn scale_cols(m: &mut DMatrix<f64>, s: &[f64]) {
    for (j, s) in s.iter().enumerate() {
        m.column_mut(j).scale_mut(*s);
    }
}

/// The factored blur operator; immutable once built.
#[derive(Clone, Debug)]
pub struct SeparableOperator2D {
    h: usize,
    w: usize,
    height: AxisFactors,
    width: AxisFactors,
}

fn check_kernel(name: &str, k: &[f64], limit: usize) -> Result<(), FreqError> {
    if k.is_empty() || k.len().is_multiple_of(2) {
        return Err(FreqError::BadKernel(format!(
            "{name} must have odd length, got {}",
            k.len()
        )));
    }
    if k.len() >= limit {
        return Err(FreqError::BadKernel(format!(
            "{name} length {} must be smaller than min(H, W) = {limit}",
            k.len()
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(FreqError::BadKernel(format!("{name} has non-finite taps")));
    }
    Ok(())
}

/// Builds and factorizes both axis operators.
pub fn build_operator(
    kernel_h: &[f64],
    kernel_w: &[f64],
    h: usize,
    w: usize,
) -> Result<SeparableOperator2D, FreqError> {
    if h < 2 || w < 2 {
        return Err(FreqError::BadDims(format!("H and W must be at least 2, got {h}×{w}")));
    }
    let limit = h.min(w);
    check_kernel("kernel_h", kernel_h, limit)?;
    check_kernel("kernel_w", kernel_w, limit)?;
    let (height, width) = par_pair(
        || AxisFactors::new(banded_matrix(kernel_h, h)),
        || AxisFactors::new(banded_matrix(kernel_w, w)),
    );
    Ok(SeparableOperator2D { h, w, height, width })
}

#[cfg(feature = "parallel")]
fn par_pair<A: Send, B: Send>(a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    rayon::join(a, b)
}

#[cfg(not(feature = "parallel"))]
fn par_pair<A, B>(a: impl FnOnce() -> A, b: impl FnOnce() -> B) -> (A, B) {
    (a(), b())
}

impl SeparableOperator2D {
    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn singular_values_h(&self) -> &[f64] {
        &self.height.s
    }

    pub fn singular_values_w(&self) -> &[f64] {
        &self.width.s
    }

    pub fn pinv_singulars_h(&self) -> &[f64] {
        &self.height.s_pinv
    }

    pub fn pinv_singulars_w(&self) -> &[f64] {
        &self.width.s_pinv
    }

    /// Numerical ranks `(rank A_H, rank A_W)` after the cutoff.
    pub fn ranks(&self) -> (usize, usize) {
        (self.height.rank(), self.width.rank())
    }

    /// `U_H S_H V_Hᵀ`, i.e. the height stencil reassembled from its factors.
    pub fn height_matrix(&self) -> DMatrix<f64> {
        self.height.reconstruct()
    }

    pub fn width_matrix(&self) -> DMatrix<f64> {
        self.width.reconstruct()
    }

    /// Right singular vectors of `A_H` (columns of `V_H`).
    pub fn v_h(&self) -> DMatrix<f64> {
        self.height.vt.transpose()
    }

    pub fn v_w(&self) -> DMatrix<f64> {
        self.width.vt.transpose()
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn check(&self, len: usize) -> Result<(), FreqError> {
        let plane = self.plane();
        if len == 0 || !len.is_multiple_of(plane) {
            return Err(FreqError::ShapeMismatch { len, plane });
        }
        Ok(())
    }

    fn map_planes(
        &self,
        z: &[f64],
        f: impl Fn(DMatrix<f64>) -> DMatrix<f64> + Sync + Send,
    ) -> Result<Vec<f64>, FreqError> {
        self.check(z.len())?;
        let plane = self.plane();
        let planes = par::map_range(z.len() / plane, |p| {
            let x = DMatrix::from_row_slice(self.h, self.w, &z[p * plane..(p + 1) * plane]);
            f(x)
        });
        let mut out = Vec::with_capacity(z.len());
        for y in planes {
            for r in y.row_iter() {
                out.extend(r.iter());
            }
        }
        Ok(out)
    }

    fn forward_plane(&self, x: DMatrix<f64>) -> DMatrix<f64> {
        // height: U_H S_H V_Hᵀ X
        let mut t = &self.height.vt * x;
        scale_rows(&mut t, &self.height.s);
        let t = &self.height.u * t;
        // width: (·) V_W S_W U_Wᵀ
        let mut t = t * self.width.vt.transpose();
        scale_cols(&mut t, &self.width.s);
        t * self.width.u.transpose()
    }

    fn pinv_plane(&self, y: DMatrix<f64>) -> DMatrix<f64> {
        // width: Y U_W S_W⁺ V_Wᵀ
        let mut t = y * &self.width.u;
        scale_cols(&mut t, &self.width.s_pinv);
        let t = t * &self.width.vt;
        // height: V_H S_H⁺ U_Hᵀ (·)
        let mut t = self.height.u.transpose() * t;
        scale_rows(&mut t, &self.height.s_pinv);
        self.height.vt.transpose() * t
    }

    /// `A z` on every trailing `H×W` plane of a row-major tensor.
    pub fn apply_a(&self, z: &[f64]) -> Result<Vec<f64>, FreqError> {
        self.map_planes(z, |x| self.forward_plane(x))
    }

    /// `A⁺ y` with thresholded reciprocal singular values.
    pub fn apply_pinv(&self, y: &[f64]) -> Result<Vec<f64>, FreqError> {
        self.map_planes(y, |x| self.pinv_plane(x))
    }

    /// `B(z) = A⁺A z`.
    pub fn low_pass(&self, z: &[f64]) -> Result<Vec<f64>, FreqError> {
        self.map_planes(z, |x| self.pinv_plane(self.forward_plane(x)))
    }

    /// `(I − A⁺A) z`, computed as `z − B(z)`.
    pub fn null_space_project(&self, z: &[f64]) -> Result<Vec<f64>, FreqError> {
        let low = self.low_pass(z)?;
        Ok(z.iter().zip(&low).map(|(a, b)| a - b).collect())
    }
}

impl LowPass for SeparableOperator2D {
    fn accepts(&self, len: usize) -> bool {
        self.check(len).is_ok()
    }

    fn low_pass(&self, z: &[f64]) -> Vec<f64> {
        SeparableOperator2D::low_pass(self, z).expect("caller checked the shape")
    }
}

/// `A⁺A` for an arbitrary dense `A`, materialized as an `n×n` matrix. Useful
/// for small latents that have no image layout.
#[derive(Clone, Debug)]
pub struct DenseProjector {
    b: DMatrix<f64>,
}

impl DenseProjector {
    pub fn from_operator(a: DMatrix<f64>) -> Self {
        let n = a.ncols();
        let svd = a.svd(true, true);
        let v_t = svd.v_t.expect("requested Vt");
        let mut b = DMatrix::zeros(n, n);
        for (k, s) in svd.singular_values.iter().enumerate() {
            if *s > SINGULAR_CUTOFF {
                let v = v_t.row(k).transpose();
                b += &v * v.transpose();
            }
        }
        DenseProjector { b }
    }

    /// Projection onto the constant vector: the blur that replaces every
    /// coordinate by the mean.
    pub fn averaging(n: usize) -> Self {
        Self::from_operator(DMatrix::from_element(n, n, 1.0 / n as f64))
    }

    pub fn identity(n: usize) -> Self {
        DenseProjector {
            b: DMatrix::identity(n, n),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }
}

impl LowPass for DenseProjector {
    fn accepts(&self, len: usize) -> bool {
        len == self.b.ncols()
    }

    fn low_pass(&self, z: &[f64]) -> Vec<f64> {
        (&self.b * nalgebra::DVector::from_column_slice(z))
            .iter()
            .copied()
            .collect()
    }
}

/// JSON kernel configuration `{"kernel_h": [...], "kernel_w": [...], "h": H, "w": W}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kernel_h: Vec<f64>,
    pub kernel_w: Vec<f64>,
    pub h: usize,
    pub w: usize,
}

impl KernelConfig {
    /// Height kernel `[0.1, 0.8, 0.1]` and width kernel `[0.2, 0.6, 0.2]`.
    pub fn reference(h: usize, w: usize) -> Self {
        KernelConfig {
            kernel_h: vec![0.1, 0.8, 0.1],
            kernel_w: vec![0.2, 0.6, 0.2],
            h,
            w,
        }
    }

    pub fn build(&self) -> Result<SeparableOperator2D, FreqError> {
        build_operator(&self.kernel_h, &self.kernel_w, self.h, self.w)
    }
}
