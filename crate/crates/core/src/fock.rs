//! Truncated Fock space: field states, ladder operators and displacements.
//!
//! Photon numbers run over `0..dim`. With real displacement amplitudes,
//! diagonal measurement operators and the real Lindblad generator, every
//! state the simulator produces is a real symmetric matrix, so
//! [`DensityMatrix`] stores one. [`ComplexDensityMatrix`] covers the general
//! Hermitian case for the maps that have to accept it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Hermiticity and unit-trace tolerance of a valid state.
pub const STATE_TOLERANCE: f64 = 1e-10;
/// Most negative population accepted in a valid state.
pub const POPULATION_FLOOR: f64 = -1e-12;
/// Largest displacement amplitude accepted by [`displacement_exact`].
pub const DISPLACEMENT_RANGE: f64 = 0.2;

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    Ok(())
}

/// A real operator on the truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    m: DMatrix<f64>,
}

impl FockOperator {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        check_dim(m.nrows())?;
        Ok(Self { m })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: DMatrix::zeros(dim, dim),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self {
            m: DMatrix::from_diagonal(&DVector::from_column_slice(values)),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.m * v
    }

    pub fn compose(&self, rhs: &FockOperator) -> Self {
        Self { m: &self.m * &rhs.m }
    }

    pub fn commutator(&self, rhs: &FockOperator) -> Self {
        Self {
            m: &self.m * &rhs.m - &rhs.m * &self.m,
        }
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.m[(row, col)]
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        self.m
            .clone()
            .singular_values()
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }
}

/// Annihilation, creation and number operators for one truncation.
#[derive(Debug, Clone)]
pub struct Ladder {
    pub a: FockOperator,
    pub a_dagger: FockOperator,
    pub number: FockOperator,
}

pub fn ladder_operators(dim: usize) -> Result<Ladder> {
    check_dim(dim)?;
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = (n as f64).sqrt();
    }
    let a_dagger = a.transpose();
    let number = DMatrix::from_fn(dim, dim, |i, j| if i == j { i as f64 } else { 0.0 });
    Ok(Ladder {
        a: FockOperator { m: a },
        a_dagger: FockOperator { m: a_dagger },
        number: FockOperator { m: number },
    })
}

/// Generators of the quadratic displacement model
/// `D(alpha) ~ I + alpha * A + alpha^2 / 2 * A2`, with `A = a† - a`.
pub fn displacement_quadratic_terms(dim: usize) -> Result<(FockOperator, FockOperator)> {
    let ladder = ladder_operators(dim)?;
    let gen = &ladder.a_dagger.m - &ladder.a.m;
    let gen2 = &gen * &gen;
    Ok((FockOperator { m: gen }, FockOperator { m: gen2 }))
}

/// `D(alpha) = exp(alpha (a† - a))` by dense matrix exponential of the
/// truncated generator.
pub fn displacement_exact(alpha: f64, dim: usize) -> Result<FockOperator> {
    if !alpha.is_finite() || alpha.abs() > DISPLACEMENT_RANGE {
        return Err(Error::AmplitudeOutOfRange(alpha));
    }
    let (gen, _) = displacement_quadratic_terms(dim)?;
    Ok(FockOperator {
        m: (gen.m * alpha).exp(),
    })
}

/// Precomputed spectral form of the displacement generator.
///
/// `i (a† - a)` is Hermitian, so `D(alpha) = V exp(-i alpha L) V†`. Building
/// one displacement then costs two small matrix products instead of a full
/// Padé evaluation, which matters inside the feedback loop.
#[derive(Debug, Clone)]
pub struct DisplacementGenerator {
    vectors: DMatrix<Complex64>,
    values: DVector<f64>,
}

impl DisplacementGenerator {
    pub fn new(dim: usize) -> Result<Self> {
        let (gen, _) = displacement_quadratic_terms(dim)?;
        let hermitian = gen.m.map(|x| Complex64::new(0.0, x));
        let eig = SymmetricEigen::new(hermitian);
        Ok(Self {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Exact truncated `D(alpha)`. Unlike [`displacement_exact`] no range
    /// check is applied.
    pub fn operator(&self, alpha: f64) -> FockOperator {
        let dim = self.dim();
        if alpha == 0.0 {
            return FockOperator::identity(dim);
        }
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            let phase = Complex64::from_polar(1.0, -alpha * self.values[k]);
            col *= phase;
        }
        let full = scaled * self.vectors.adjoint();
        FockOperator {
            m: full.map(|z| z.re),
        }
    }
}

/// Real symmetric density matrix in the truncated Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: DMatrix<f64>,
}

impl DensityMatrix {
    /// Validates the matrix against the state invariants.
    pub fn from_matrix(rho: DMatrix<f64>) -> Result<Self> {
        let state = Self { rho };
        state.validate()?;
        Ok(state)
    }

    pub(crate) fn from_matrix_unchecked(rho: DMatrix<f64>) -> Self {
        Self { rho }
    }

    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if n >= dim {
            return Err(Error::InvalidState(format!(
                "Fock level {n} outside truncation 0..{dim}"
            )));
        }
        let mut rho = DMatrix::zeros(dim, dim);
        rho[(n, n)] = 1.0;
        Ok(Self { rho })
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            rho: DMatrix::identity(dim, dim) / dim as f64,
        })
    }

    /// Diagonal state from non-negative weights, normalized to unit trace.
    pub fn from_populations(weights: &[f64]) -> Result<Self> {
        check_dim(weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidState(
                "populations must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidState("populations sum to zero".into()));
        }
        let v: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            rho: DMatrix::from_diagonal(&DVector::from_vec(v)),
        })
    }

    /// Pure state `|psi><psi|` from a real amplitude vector (normalized here).
    pub fn pure(psi: &DVector<f64>) -> Result<Self> {
        check_dim(psi.len())?;
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let psi = psi / norm;
        Ok(Self {
            rho: &psi * psi.transpose(),
        })
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.rho
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.rho[(row, col)]
    }

    pub fn population(&self, n: usize) -> f64 {
        self.rho[(n, n)]
    }

    pub fn populations(&self) -> Vec<f64> {
        self.rho.diagonal().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace()
    }

    pub fn purity(&self) -> f64 {
        self.rho.component_mul(&self.rho).sum()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.rho
            .diagonal()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Shannon entropy (nats) of the photon-number distribution.
    pub fn photon_number_entropy(&self) -> f64 {
        self.rho
            .diagonal()
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.rho.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// `<psi|rho|psi>` for a normalized real vector.
    pub fn overlap(&self, psi: &DVector<f64>) -> f64 {
        (psi.transpose() * &self.rho * psi)[(0, 0)]
    }

    /// Largest absolute off-diagonal entry.
    pub fn max_coherence(&self) -> f64 {
        let dim = self.dim();
        let mut best = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    best = best.max(self.rho[(i, j)].abs());
                }
            }
        }
        best
    }

    /// `U rho U†` without renormalization.
    pub fn conjugate(&self, op: &FockOperator) -> Result<Self> {
        self.ensure_dim(op.dim())?;
        Ok(Self {
            rho: &op.m * &self.rho * op.m.transpose(),
        })
    }

    /// Restores unit trace and exact symmetry. Returns the probability that
    /// had leaked (`1 - trace` before the call).
    pub fn renormalize(&mut self) -> f64 {
        let trace = self.rho.trace();
        if trace > 0.0 {
            self.rho /= trace;
        }
        let sym = (&self.rho + self.rho.transpose()) * 0.5;
        self.rho = sym;
        1.0 - trace
    }

    pub fn normalized(mut self) -> Self {
        self.renormalize();
        self
    }

    pub(crate) fn ensure_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.rho
    }

    pub fn validate(&self) -> Result<()> {
        let rho = &self.rho;
        if rho.nrows() != rho.ncols() {
            return Err(Error::InvalidState("density matrix is not square".into()));
        }
        check_dim(rho.nrows())?;
        if rho.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let asym = (rho - rho.transpose()).amax();
        if asym > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("asymmetry {asym:e}")));
        }
        let trace = rho.trace();
        if (trace - 1.0).abs() > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace {trace}")));
        }
        if let Some(p) = rho.diagonal().iter().find(|p| **p < POPULATION_FLOOR) {
            return Err(Error::InvalidState(format!("negative population {p:e}")));
        }
        Ok(())
    }
}

/// General Hermitian density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexDensityMatrix {
    rho: DMatrix<Complex64>,
}

impl ComplexDensityMatrix {
    pub fn from_matrix(rho: DMatrix<Complex64>) -> Result<Self> {
        let state = Self { rho };
        state.validate()?;
        Ok(state)
    }

    pub fn from_real(state: &DensityMatrix) -> Self {
        Self {
            rho: state.rho.map(|x| Complex64::new(x, 0.0)),
        }
    }

    /// Pure state from a complex amplitude vector (normalized here).
    pub fn pure(psi: &DVector<Complex64>) -> Result<Self> {
        check_dim(psi.len())?;
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let psi = psi.unscale(norm);
        Ok(Self {
            rho: &psi * psi.adjoint(),
        })
    }

    pub(crate) fn from_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Self {
        Self {
            rho: DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| {
                Complex64::new(re[(i, j)], im[(i, j)])
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn real_part(&self) -> DMatrix<f64> {
        self.rho.map(|z| z.re)
    }

    pub fn imag_part(&self) -> DMatrix<f64> {
        self.rho.map(|z| z.im)
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.rho.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.rho.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// `U rho U†` for a real operator.
    pub fn conjugate(&self, op: &FockOperator) -> Result<Self> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                found: self.dim(),
            });
        }
        let u = op.m.map(|x| Complex64::new(x, 0.0));
        Ok(Self {
            rho: &u * &self.rho * u.adjoint(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let rho = &self.rho;
        if rho.nrows() != rho.ncols() {
            return Err(Error::InvalidState("density matrix is not square".into()));
        }
        check_dim(rho.nrows())?;
        let herm = self.hermiticity_error();
        if herm > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("non-Hermitian by {herm:e}")));
        }
        let trace = rho.trace();
        if (trace.re - 1.0).abs() > STATE_TOLERANCE || trace.im.abs() > STATE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace {trace}")));
        }
        if let Some(p) = rho.diagonal().iter().find(|p| p.re < POPULATION_FLOOR) {
            return Err(Error::InvalidState(format!("negative population {p}")));
        }
        Ok(())
    }
}

/// Coherent state amplitudes `e^{-a^2/2} a^n / sqrt(n!)` on `0..dim`,
/// renormalized after truncation.
pub fn coherent_amplitudes(amplitude: f64, dim: usize) -> Result<DVector<f64>> {
    check_dim(dim)?;
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(Error::InvalidParameter {
            name: "amplitude",
            value: amplitude,
            reason: "must be finite and non-negative",
        });
    }
    if amplitude * amplitude > dim as f64 / 3.0 {
        return Err(Error::TruncationRisk { amplitude, dim });
    }
    let mut psi = DVector::zeros(dim);
    psi[0] = (-amplitude * amplitude / 2.0).exp();
    for n in 1..dim {
        psi[n] = psi[n - 1] * amplitude / (n as f64).sqrt();
    }
    let norm = psi.norm();
    Ok(psi / norm)
}

/// Pure coherent state `|alpha><alpha|` with a real amplitude.
pub fn coherent_state(amplitude: f64, dim: usize) -> Result<DensityMatrix> {
    let psi = coherent_amplitudes(amplitude, dim)?;
    Ok(DensityMatrix {
        rho: &psi * psi.transpose(),
    })
}
