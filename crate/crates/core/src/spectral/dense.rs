//! Dense eigensolvers used as oracles for small groups.

use faer::{c64, Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measures::{convolve, reverse, GroupMeasure};
use crate::modgroup::{new_space_projector, project_mean_zero, GroupTable};

use super::Subspace;

/// Largest group order handled by the dense oracles.
pub const DENSE_MAX: usize = 2200;

fn check_size(group: &GroupTable) -> Result<()> {
    if group.order() > DENSE_MAX {
        return Err(Error::Resource(format!(
            "dense oracle limited to |G| <= {DENSE_MAX}, got {}",
            group.order()
        )));
    }
    Ok(())
}

type Projector<'g> = Box<dyn Fn(&mut [Complex64]) + 'g>;

fn projector_fn(group: &GroupTable, subspace: Subspace) -> Result<Projector<'_>> {
    Ok(match subspace {
        Subspace::Full => Box::new(|_| {}),
        Subspace::MeanZero => Box::new(project_mean_zero),
        Subspace::NewSpace => {
            let p = new_space_projector(group)?;
            Box::new(move |v| p.apply_in_place(v))
        }
    })
}

/// Matrix of `phi -> h * phi` with `H[x, g^-1 x] += h(g)`.
fn left_matrix(group: &GroupTable, h: &GroupMeasure) -> Mat<c64> {
    let n = group.order();
    let mut m = Mat::<c64>::zeros(n, n);
    for (g, c) in h.iter() {
        let ginv = group.inverse(g);
        for x in 0..n as u32 {
            m[(x as usize, group.mul(ginv, x) as usize)] += c;
        }
    }
    m
}

/// Matrix of `phi -> sum_g h(g) phi(x g)`.
fn right_matrix(group: &GroupTable, h: &GroupMeasure) -> Mat<c64> {
    let n = group.order();
    let mut m = Mat::<c64>::zeros(n, n);
    for (g, c) in h.iter() {
        for x in 0..n as u32 {
            m[(x as usize, group.mul(x, g) as usize)] += c;
        }
    }
    m
}

/// `P H` with `P` applied column by column; equal to `P H P` when `H`
/// commutes with the projection.
fn project_columns(group: &GroupTable, subspace: Subspace, mut h: Mat<c64>) -> Result<Mat<c64>> {
    let project = projector_fn(group, subspace)?;
    let n = h.nrows();
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..h.ncols() {
        for i in 0..n {
            col[i] = h[(i, j)];
        }
        project(&mut col);
        for i in 0..n {
            h[(i, j)] = col[i];
        }
    }
    Ok(h)
}

fn as_real(h: &Mat<c64>) -> Option<Mat<f64>> {
    let real = (0..h.ncols()).all(|j| (0..h.nrows()).all(|i| h[(i, j)].im == 0.0));
    real.then(|| Mat::<f64>::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)].re))
}

fn hermitian_eigenvalues(h: &Mat<c64>) -> Result<Vec<f64>> {
    let eig = match as_real(h) {
        Some(r) => r.self_adjoint_eigenvalues(Side::Lower),
        None => h.self_adjoint_eigenvalues(Side::Lower),
    };
    eig.map_err(|e| Error::Estimation(format!("dense eigensolver failed: {e:?}")))
}

/// Eigenvalues (ascending) of `P (reverse(mu) * mu) P`; the orthogonal
/// complement of the subspace contributes zeros.
pub fn gram_eigenvalues(group: &GroupTable, mu: &GroupMeasure, subspace: Subspace) -> Result<Vec<f64>> {
    check_size(group)?;
    let h = convolve(group, &reverse(group, mu)?, mu)?;
    let m = project_columns(group, subspace, left_matrix(group, &h))?;
    hermitian_eigenvalues(&m)
}

pub fn dense_operator_norm(group: &GroupTable, mu: &GroupMeasure, subspace: Subspace) -> Result<f64> {
    let eig = gram_eigenvalues(group, mu, subspace)?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Norm of `mu` acting through the right-regular representation.
pub fn dense_right_operator_norm(group: &GroupTable, mu: &GroupMeasure, subspace: Subspace) -> Result<f64> {
    check_size(group)?;
    let a = right_matrix(group, mu);
    let gram = a.adjoint() * &a;
    let m = project_columns(group, subspace, gram)?;
    let eig = hermitian_eigenvalues(&m)?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Largest eigenvalue of a self-reversed measure acting on the subspace.
/// The spectrum is shifted above zero first, so that the zeros contributed
/// by the orthogonal complement cannot win.
pub fn dense_top_eigenvalue(group: &GroupTable, h: &GroupMeasure, subspace: Subspace) -> Result<f64> {
    check_size(group)?;
    let shift = h.l1() + 1.0;
    let mut m = left_matrix(group, h);
    for i in 0..group.order() {
        m[(i, i)] += shift;
    }
    let m = project_columns(group, subspace, m)?;
    let eig = hermitian_eigenvalues(&m)?;
    Ok(eig.last().copied().unwrap_or(shift) - shift)
}

/// `tr[(A* A)^2]` on the full space, as the squared Frobenius norm of the
/// Gram matrix.
pub fn gram_trace_square(group: &GroupTable, mu: &GroupMeasure) -> Result<f64> {
    check_size(group)?;
    let a = left_matrix(group, mu);
    if let Some(r) = as_real(&a) {
        let gram = r.transpose() * &r;
        return Ok(gram.norm_l2().powi(2));
    }
    let gram = a.adjoint() * &a;
    Ok(gram.norm_l2().powi(2))
}

/// Number of eigenvalues within `rtol` (relative) of the largest one.
pub fn top_multiplicity(eigenvalues: &[f64], rtol: f64) -> usize {
    let Some(&top) = eigenvalues.iter().max_by(|a, b| a.total_cmp(b)) else {
        return 0;
    };
    eigenvalues
        .iter()
        .filter(|&&e| (top - e).abs() <= rtol * top.abs())
        .count()
}
