//! Dense complex linear algebra for small Hermitian and unitary matrices.
//!
//! The shipped model is 3×3 but nothing here assumes a dimension.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Tolerance for accepting a matrix as Hermitian, in units of J.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance for accepting a matrix as unitary.
pub const UNITARY_TOL: f64 = 1e-10;
/// Below this eigenvalue gap a spectrum is treated as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn check_finite(m: &CMatrix) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Contract("matrix has non-finite entries".into()))
    }
}

/// Distance from unitarity, `max |V†V - I|`.
pub fn unitarity_defect(v: &CMatrix) -> f64 {
    let n = v.ncols();
    max_abs(&(v.adjoint() * v - CMatrix::identity(n, n)))
}

/// A square matrix known to be Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct Hermitian(CMatrix);

impl Hermitian {
    /// Accepts `m` if `max |M - M†| <= 1e-12`, then stores the exactly
    /// Hermitian part `(M + M†)/2`.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Contract(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        let skew = max_abs(&(&m - m.adjoint()));
        if skew > HERMITIAN_TOL {
            return Err(Error::Contract(format!(
                "matrix is not Hermitian (max |M - M^dagger| = {skew:.3e})"
            )));
        }
        let sym = (&m + m.adjoint()).scale(0.5);
        Ok(Hermitian(sym))
    }

    pub fn zeros(dim: usize) -> Self {
        Hermitian(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Hermitian(CMatrix::identity(dim, dim))
    }

    /// Real diagonal matrix.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Hermitian(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.0[(i, j)]
    }

    /// Sum of two Hermitian matrices.
    pub fn add(&self, other: &Hermitian) -> Hermitian {
        Hermitian(&self.0 + &other.0)
    }

    /// Copy with every off-diagonal entry set to zero.
    pub fn diagonal_part(&self) -> Hermitian {
        let n = self.dim();
        Hermitian(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.0[(i, j)]
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }
}

/// A square matrix known to be unitary. Columns are the frame vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Unitary(CMatrix);

impl Unitary {
    /// Accepts `m` if `max |M†M - I| <= 1e-10`.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Contract("unitary matrix must be square".into()));
        }
        check_finite(&m)?;
        let defect = unitarity_defect(&m);
        if defect > UNITARY_TOL {
            return Err(Error::Contract(format!(
                "matrix is not unitary (max |V^dagger V - I| = {defect:.3e})"
            )));
        }
        Ok(Unitary(m))
    }

    pub fn identity(dim: usize) -> Self {
        Unitary(CMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn defect(&self) -> f64 {
        unitarity_defect(&self.0)
    }

    /// `V M V†`
    pub fn conjugate(&self, m: &Hermitian) -> Hermitian {
        Hermitian(&self.0 * m.matrix() * self.0.adjoint())
    }

    /// `V† M V`
    pub fn conjugate_adjoint(&self, m: &Hermitian) -> Hermitian {
        Hermitian(self.0.adjoint() * m.matrix() * &self.0)
    }
}

/// Rotates each column so that its largest-magnitude entry is real and
/// positive. Ties (within 1e-12 relative) resolve to the lowest row index.
fn fix_phases(v: &mut CMatrix) {
    for mut col in v.column_iter_mut() {
        let max = col.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        if max == 0.0 {
            continue;
        }
        let pivot = col
            .iter()
            .position(|z| z.norm() >= max * (1.0 - 1e-12))
            .unwrap_or(0);
        let p = col[pivot];
        let phase = p.conj() / p.norm();
        for z in col.iter_mut() {
            *z *= phase;
        }
        col[pivot] = Complex64::new(col[pivot].norm(), 0.0);
    }
}

/// Cyclic Jacobi diagonalisation. Returns `(diagonal, V)` with `A = V D V†`.
fn jacobi(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = CMatrix::identity(n, n);
    let scale = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    for _sweep in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-18 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                let phase = apq / mag;
                let (app, aqq) = (a[(p, p)].re, a[(q, q)].re);
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G = [[c, s e^{iφ}], [-s e^{-iφ}, c]] acting on columns p, q
                let gpq = phase * s;
                let gqp = -phase.conj() * s;
                let cc = Complex64::new(c, 0.0);
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * cc + akq * gqp;
                    a[(k, q)] = akp * gpq + akq * cc;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = cc * apk + gqp.conj() * aqk;
                    a[(q, k)] = gpq.conj() * apk + cc * aqk;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                a[(p, p)].im = 0.0;
                a[(q, q)].im = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * cc + vkq * gqp;
                    v[(k, q)] = vkp * gpq + vkq * cc;
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)].re).collect(), v)
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues are returned in ascending order with eigenvectors as the
/// matching columns of a unitary frame. Each eigenvector has its
/// largest-magnitude component real and positive. Degenerate spectra are
/// accepted (any orthonormal basis of the eigenspace is returned); use
/// [`eig_hermitian_nondegenerate`] when uniqueness matters.
pub fn eig_hermitian(m: &Hermitian) -> Result<(Vec<f64>, Unitary)> {
    let n = m.dim();
    let (raw, vecs) = jacobi(m.matrix());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let values: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let mut vectors = CMatrix::from_fn(n, n, |r, c| vecs[(r, order[c])]);
    fix_phases(&mut vectors);
    check_finite(&vectors)?;
    Ok((values, Unitary(vectors)))
}

/// Smallest gap between consecutive ascending eigenvalues.
pub fn min_gap(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Like [`eig_hermitian`] but rejects spectra with a gap below 1e-10.
pub fn eig_hermitian_nondegenerate(m: &Hermitian) -> Result<(Vec<f64>, Unitary)> {
    let (values, frame) = eig_hermitian(m)?;
    let gap = min_gap(&values);
    if gap < DEGENERACY_GAP {
        return Err(Error::Degenerate(format!(
            "eigenvalue gap {gap:.3e} below {DEGENERACY_GAP:.0e}"
        )));
    }
    Ok((values, frame))
}

/// `exp(-i dt (H - shift I))` by spectral decomposition of `H`.
pub fn propagate_unitary(h: &Hermitian, shift: f64, dt: f64) -> Result<CMatrix> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Contract(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let (values, frame) = eig_hermitian(h)?;
    let w = frame.matrix();
    let n = values.len();
    let mut scaled = w.clone();
    for (c, &lambda) in values.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -dt * (lambda - shift));
        for r in 0..n {
            scaled[(r, c)] *= phase;
        }
    }
    Ok(scaled * w.adjoint())
}

/// Nearest unitary matrix in Frobenius norm (the polar factor
/// `V (V†V)^{-1/2}`). A matrix that is already unitary to 1e-13 is returned
/// unchanged.
pub fn reunitarize(v: &CMatrix) -> Result<Unitary> {
    if !v.is_square() {
        return Err(Error::Contract(
            "cannot reunitarize a non-square matrix".into(),
        ));
    }
    check_finite(v)?;
    if unitarity_defect(v) <= 1e-13 {
        return Ok(Unitary(v.clone()));
    }
    let gram = Hermitian::new(v.adjoint() * v)?;
    let (values, frame) = eig_hermitian(&gram)?;
    let smallest = values.first().copied().unwrap_or(0.0);
    if smallest <= 1e-14 * values.last().copied().unwrap_or(1.0).max(1.0) {
        return Err(Error::Degenerate(format!(
            "matrix is singular (smallest Gram eigenvalue {smallest:.3e})"
        )));
    }
    let w = frame.matrix();
    let mut scaled = w.clone();
    for (c, &lambda) in values.iter().enumerate() {
        let s = Complex64::new(1.0 / lambda.sqrt(), 0.0);
        for r in 0..values.len() {
            scaled[(r, c)] *= s;
        }
    }
    let inv_sqrt = scaled * w.adjoint();
    Ok(Unitary(v * inv_sqrt))
}
