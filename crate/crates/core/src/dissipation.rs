//! Finite-temperature cavity relaxation over one loop iteration.
//!
//! The generator is
//! `L(rho) = k(1+n_th) D[a](rho) + k n_th D[a†](rho)`, `k = 1/T_c`, built
//! on the truncated operators and exponentiated once into a `dim² x dim²`
//! propagator acting on column-stacked matrices.
//!
//! Damping only couples `rho[i][i+k]` to `rho[i±1][i+k±1]`, so the
//! propagator is block diagonal in the bands of constant `j - i`. The blocks
//! are kept separately and used for the per-iteration update.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fock::{ladder_operators, ComplexDensityMatrix, DensityMatrix};

/// Per-application trace loss above which a warning is logged.
pub const LEAK_WARNING: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct RelaxationModel {
    t_c: f64,
    n_th: f64,
    dt: f64,
    dim: usize,
    propagator: DMatrix<f64>,
    /// `bands[k]` propagates the entries `(i, i + k)`, `i in 0..dim-k`.
    bands: Vec<DMatrix<f64>>,
}

fn vec_index(dim: usize, row: usize, col: usize) -> usize {
    row + col * dim
}

/// Lindblad generator as a `dim² x dim²` matrix on column-stacked `rho`.
pub fn lindblad_generator(t_c: f64, n_th: f64, dim: usize) -> Result<DMatrix<f64>> {
    let l = ladder_operators(dim)?;
    let a = l.a.matrix();
    let ad = l.a_dagger.matrix();
    let n = l.number.matrix();
    let m = a * ad;
    let id = DMatrix::<f64>::identity(dim, dim);
    let kappa = 1.0 / t_c;

    // vec(A X B) = (Bᵀ ⊗ A) vec(X)
    let down = a.kronecker(a) - (id.kronecker(n) + n.kronecker(&id)) * 0.5;
    let up = ad.kronecker(ad) - (id.kronecker(&m) + m.kronecker(&id)) * 0.5;
    Ok(down * (kappa * (1.0 + n_th)) + up * (kappa * n_th))
}

pub fn build_propagator(t_c: f64, n_th: f64, dt: f64, dim: usize) -> Result<RelaxationModel> {
    if !(t_c > 0.0) {
        return Err(Error::InvalidParameter {
            name: "T_c",
            value: t_c,
            reason: "cavity damping time must be positive",
        });
    }
    if !(n_th >= 0.0 && n_th.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "n_th",
            value: n_th,
            reason: "thermal photon number must be finite and non-negative",
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            value: dt,
            reason: "time step must be positive and finite",
        });
    }
    let generator = lindblad_generator(t_c, n_th, dim)?;
    let propagator = (generator * dt).exp();

    let bands = (0..dim)
        .map(|k| {
            let len = dim - k;
            DMatrix::from_fn(len, len, |p, q| {
                propagator[(vec_index(dim, p, p + k), vec_index(dim, q, q + k))]
            })
        })
        .collect();

    Ok(RelaxationModel {
        t_c,
        n_th,
        dt,
        dim,
        propagator,
        bands,
    })
}

impl RelaxationModel {
    pub fn t_c(&self) -> f64 {
        self.t_c
    }

    pub fn n_th(&self) -> f64 {
        self.n_th
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn propagator(&self) -> &DMatrix<f64> {
        &self.propagator
    }

    fn ensure_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: dim,
            });
        }
        Ok(())
    }

    /// Applies the full superoperator to an arbitrary real matrix.
    pub fn apply_full(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let dim = self.dim;
        let v = nalgebra::DVector::from_column_slice(m.as_slice());
        let out = &self.propagator * v;
        DMatrix::from_column_slice(dim, dim, out.as_slice())
    }

    /// Band-blocked update of a real symmetric matrix, in place.
    pub(crate) fn apply_bands(&self, m: &mut DMatrix<f64>) {
        let dim = self.dim;
        let mut buf = nalgebra::DVector::zeros(dim);
        for (k, block) in self.bands.iter().enumerate() {
            let len = dim - k;
            let mut band = buf.rows_mut(0, len);
            for i in 0..len {
                band[i] = m[(i, i + k)];
            }
            let out = block * band;
            for i in 0..len {
                m[(i, i + k)] = out[i];
                m[(i + k, i)] = out[i];
            }
        }
    }

    /// Relaxation over one step `dt`.
    pub fn relax(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        self.ensure_dim(rho.dim())?;
        let mut out = rho.clone();
        self.relax_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn relax_in_place(&self, rho: &mut DensityMatrix) {
        self.apply_bands(rho.matrix_mut());
        let leaked = rho.renormalize();
        if leaked.abs() > LEAK_WARNING {
            log::warn!("relaxation leaked {leaked:e} of probability at the truncation edge");
        }
    }

    /// Relaxation of a general Hermitian state through the full propagator.
    pub fn relax_complex(&self, rho: &ComplexDensityMatrix) -> Result<ComplexDensityMatrix> {
        self.ensure_dim(rho.dim())?;
        let re = self.apply_full(&rho.real_part());
        let im = self.apply_full(&rho.imag_part());
        Ok(ComplexDensityMatrix::from_parts(&re, &im))
    }

    /// One step of the quantum-jump unraveling of the same generator.
    ///
    /// To first order in `dt`, a photon is lost with probability
    /// `dt k(1+n_th) <N>` and gained with probability `dt k n_th <a a†>`;
    /// otherwise the state evolves under the diagonal no-jump operator.
    pub fn jump_step<R: Rng + ?Sized>(&self, rho: &DensityMatrix, rng: &mut R) -> Result<DensityMatrix> {
        self.ensure_dim(rho.dim())?;
        let dim = self.dim;
        let kappa = 1.0 / self.t_c;
        let down = kappa * (1.0 + self.n_th);
        let up = kappa * self.n_th;
        let m = rho.matrix();

        // a a† on the truncation is diag(1, 2, .., dim-1, 0)
        let raise_weight = |n: usize| if n + 1 < dim { (n + 1) as f64 } else { 0.0 };
        let mean_n: f64 = (0..dim).map(|n| n as f64 * m[(n, n)]).sum();
        let mean_raise: f64 = (0..dim).map(|n| raise_weight(n) * m[(n, n)]).sum();
        let p_down = self.dt * down * mean_n;
        let p_up = self.dt * up * mean_raise;

        let r: f64 = rng.random();
        let out = if r < p_down {
            // a rho a† : (i, j) <- sqrt((i+1)(j+1)) rho(i+1, j+1)
            DMatrix::from_fn(dim, dim, |i, j| {
                if i + 1 < dim && j + 1 < dim {
                    (((i + 1) * (j + 1)) as f64).sqrt() * m[(i + 1, j + 1)]
                } else {
                    0.0
                }
            })
        } else if r < p_down + p_up {
            DMatrix::from_fn(dim, dim, |i, j| {
                if i >= 1 && j >= 1 {
                    ((i * j) as f64).sqrt() * m[(i - 1, j - 1)]
                } else {
                    0.0
                }
            })
        } else {
            let k: Vec<f64> = (0..dim)
                .map(|n| (-0.5 * self.dt * (down * n as f64 + up * raise_weight(n))).exp())
                .collect();
            DMatrix::from_fn(dim, dim, |i, j| k[i] * k[j] * m[(i, j)])
        };
        Ok(DensityMatrix::from_matrix_unchecked(out).normalized())
    }
}
