//! Dense complex linear algebra over truncated bosonic Fock spaces.
//!
//! Everything here is an exact (up to roundoff) finite-dimensional computation:
//! ladder operators, displacement unitaries built by eigendecomposition, and a
//! two-mode displaced-squeezed-state oracle. The rest of the crate treats these
//! values as ground truth.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Tolerance used when tagging a matrix Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance used when tagging a matrix unitary.
pub const UNITARY_TOL: f64 = 1e-10;
/// Norm defect above which the pair-state oracle refuses to answer.
pub const LEAKAGE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FockError {
    #[error("truncation level must be at least {min}, got {got}")]
    InvalidTruncation { min: usize, got: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite parameter {0}")]
    NonFinite(f64),
    #[error("squeezing parameter {0} outside the supported range |gamma| <= 2")]
    GammaOutOfRange(f64),
    #[error(
        "truncation leakage {leak:.3e} exceeds {limit:.1e}; raise the per-mode truncation for \
         the requested displacement/squeezing"
    )]
    TruncationLeakage { leak: f64, limit: f64 },
}

/// Dense complex matrix in row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self {
            dim,
            entries: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m.set(k, k, Complex64::new(1.0, 0.0));
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.entries[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.entries[r * self.dim + c] = v;
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self.get(c, r).conj())
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matrix product dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.get(r, k);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for c in 0..n {
                    let v = out.get(r, c) + a * other.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    /// A * B^T (plain transpose, no conjugation).
    pub fn mul_transpose(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matrix product dimension mismatch");
        let n = self.dim;
        Self::from_fn(n, |r, c| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += self.get(r, k) * other.get(c, k);
            }
            acc
        })
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector, FockError> {
        if state.dim() != self.dim {
            return Err(FockError::DimensionMismatch(self.dim, state.dim()));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for (r, slot) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..self.dim {
                acc += self.get(r, c) * state.amplitudes[c];
            }
            *slot = acc;
        }
        Ok(StateVector { amplitudes: out })
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// max |A - A^dagger|, the Hermiticity defect.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// max |U^dagger U - I|, the unitarity defect.
    pub fn unitarity_error(&self) -> f64 {
        let prod = self.adjoint().mul(self);
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                let want = if r == c {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                worst = worst.max((prod.get(r, c) - want).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Complex state vector over a truncated Fock space (or a tensor product of two).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Basis vector |0>, the vacuum.
    pub fn vacuum(dim: usize) -> Self {
        Self::basis(dim, 0)
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index out of range");
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Self {
        assert!(!amplitudes.is_empty());
        Self { amplitudes }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    #[inline]
    pub fn amplitude(&self, k: usize) -> Complex64 {
        self.amplitudes[k]
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for z in &mut self.amplitudes {
                *z /= n;
            }
        }
    }
}

/// Truncated bosonic creation operator b~dagger_N: entries sqrt(k+1) on the
/// subdiagonal, zero elsewhere.
pub fn ladder(n: usize) -> Result<ComplexMatrix, FockError> {
    if n < 2 {
        return Err(FockError::InvalidTruncation { min: 2, got: n });
    }
    let mut m = ComplexMatrix::zeros(n);
    for k in 0..n - 1 {
        m.set(k + 1, k, Complex64::new(((k + 1) as f64).sqrt(), 0.0));
    }
    Ok(m)
}

/// The Hermitian generator H = i(b~dagger - b~) of the truncated displacement,
/// satisfying exp(-i theta H) = exp(theta (b~dagger - b~)).
pub fn displacement_generator(n: usize) -> Result<ComplexMatrix, FockError> {
    let bdag = ladder(n)?;
    let b = bdag.adjoint();
    Ok(ComplexMatrix::from_fn(n, |r, c| {
        Complex64::new(0.0, 1.0) * (bdag.get(r, c) - b.get(r, c))
    }))
}

/// Eigensystem of the displacement generator, reduced to a real symmetric
/// problem.
///
/// H = i(b~dagger - b~) is purely imaginary Hermitian; conjugating by
/// Lambda = diag(i^k) turns it into the real symmetric tridiagonal matrix T
/// with off-diagonals sqrt(k+1). The vacuum weight w_k = V[0,k]^2 gives the
/// closed form <0| exp(theta(b~dagger - b~)) |0> = sum_k w_k exp(-i theta l_k),
/// which the kernel layer evaluates in O(N) per point.
#[derive(Debug, Clone)]
pub struct DisplacementSpectrum {
    pub levels: usize,
    pub eigenvalues: Vec<f64>,
    /// Columns of the real eigenvector matrix V, flattened row-major.
    eigenvectors: Vec<f64>,
    pub vacuum_weights: Vec<f64>,
}

impl DisplacementSpectrum {
    fn vec_entry(&self, row: usize, col: usize) -> f64 {
        self.eigenvectors[row * self.levels + col]
    }

    /// <0| D~_N(theta) |0> in O(N).
    pub fn vacuum_amplitude(&self, theta: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (w, l) in self.vacuum_weights.iter().zip(&self.eigenvalues) {
            acc += Complex64::from_polar(*w, -theta * l);
        }
        acc
    }
}

fn real_symmetric_eigen(t: DMatrix<f64>) -> (Vec<f64>, Vec<f64>, usize) {
    let n = t.nrows();
    let eig = nalgebra::linalg::SymmetricEigen::new(t);
    let mut values = Vec::with_capacity(n);
    let mut vectors = vec![0.0; n * n];
    for k in 0..n {
        values.push(eig.eigenvalues[k]);
        for r in 0..n {
            vectors[r * n + k] = eig.eigenvectors[(r, k)];
        }
    }
    (values, vectors, n)
}

pub fn displacement_spectrum(n: usize) -> Result<DisplacementSpectrum, FockError> {
    if n < 2 {
        return Err(FockError::InvalidTruncation { min: 2, got: n });
    }
    let mut t = DMatrix::<f64>::zeros(n, n);
    for k in 0..n - 1 {
        let v = ((k + 1) as f64).sqrt();
        t[(k + 1, k)] = v;
        t[(k, k + 1)] = v;
    }
    let (eigenvalues, eigenvectors, _) = real_symmetric_eigen(t);
    let mut vacuum_weights = Vec::with_capacity(n);
    for k in 0..n {
        let v0 = eigenvectors[k];
        vacuum_weights.push(v0 * v0);
    }
    Ok(DisplacementSpectrum {
        levels: n,
        eigenvalues,
        eigenvectors,
        vacuum_weights,
    })
}

/// Powers of i, cycling with period 4.
#[inline]
fn i_pow(k: usize) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Finite-dimensional displacement operator D~_N(theta) = exp(theta(b~dagger - b~)).
///
/// Built from the eigendecomposition of the Hermitian generator, so the result
/// is unitary to roundoff for any theta.
pub fn displacement_unitary(n: usize, theta: f64) -> Result<ComplexMatrix, FockError> {
    if !theta.is_finite() {
        return Err(FockError::NonFinite(theta));
    }
    let spec = displacement_spectrum(n)?;
    let phases: Vec<Complex64> = spec
        .eigenvalues
        .iter()
        .map(|l| Complex64::from_polar(1.0, -theta * l))
        .collect();
    let mut u = ComplexMatrix::zeros(n);
    for a in 0..n {
        for b in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += phases[k] * (spec.vec_entry(a, k) * spec.vec_entry(b, k));
            }
            // U = Lambda (V e^{-i theta D} V^T) Lambda^dagger with Lambda = diag(i^k)
            u.set(a, b, i_pow(a) * acc * i_pow(b).conj());
        }
    }
    debug_assert!(u.unitarity_error() <= UNITARY_TOL);
    Ok(u)
}

/// Amplitudes of exp(gamma(b b - b^dag b^dag))|0,0> on the diagonal subspace
/// span{|k,k>}: the generator restricted there is the real antisymmetric
/// tridiagonal with A[k+1,k] = -gamma(k+1), exponentiated by the same
/// phase-similarity reduction as the displacement.
fn squeezed_diagonal_amplitudes(n: usize, gamma: f64) -> Vec<Complex64> {
    let mut t = DMatrix::<f64>::zeros(n, n);
    for k in 0..n - 1 {
        let v = -gamma * ((k + 1) as f64);
        t[(k + 1, k)] = v;
        t[(k, k + 1)] = v;
    }
    let (values, vectors, _) = real_symmetric_eigen(t);
    let mut w = Vec::with_capacity(n);
    for a in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..n {
            acc += Complex64::from_polar(1.0, -values[k]) * (vectors[a * n + k] * vectors[k]);
        }
        w.push(i_pow(a) * acc);
    }
    w
}

/// Dense two-mode oracle state D_i(alpha_i) D_j(alpha_j) S_ij(gamma) |0,0>,
/// on the N^2-dimensional tensor space (index a*N + b for |a>_i |b>_j).
///
/// All three operators are exact truncated exponentials, so the norm is
/// conserved by construction; truncation damage instead shows up as amplitude
/// piling up against the Fock-space edge. The leakage guard therefore measures
/// the population of the top two levels of either mode and refuses when it
/// exceeds `LEAKAGE_TOL`.
pub fn pair_state_oracle(
    n_per_mode: usize,
    alpha_i: f64,
    alpha_j: f64,
    gamma: f64,
) -> Result<StateVector, FockError> {
    if n_per_mode < 8 {
        return Err(FockError::InvalidTruncation {
            min: 8,
            got: n_per_mode,
        });
    }
    for v in [alpha_i, alpha_j, gamma] {
        if !v.is_finite() {
            return Err(FockError::NonFinite(v));
        }
    }
    if gamma.abs() > 2.0 {
        return Err(FockError::GammaOutOfRange(gamma));
    }
    let n = n_per_mode;
    let squeezed = squeezed_diagonal_amplitudes(n, gamma);
    let mut grid = ComplexMatrix::zeros(n);
    for (k, amp) in squeezed.iter().enumerate() {
        grid.set(k, k, *amp);
    }
    let di = displacement_unitary(n, alpha_i)?;
    let dj = displacement_unitary(n, alpha_j)?;
    // (D_i x I) then (I x D_j): left-multiply on the row index, D_j^T on columns.
    let grid = di.mul(&grid).mul_transpose(&dj);

    let mut leak = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a >= n - 2 || b >= n - 2 {
                leak += grid.get(a, b).norm_sqr();
            }
        }
    }
    if leak > LEAKAGE_TOL {
        return Err(FockError::TruncationLeakage {
            leak,
            limit: LEAKAGE_TOL,
        });
    }

    let mut amplitudes = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            amplitudes.push(grid.get(a, b));
        }
    }
    let mut state = StateVector::from_amplitudes(amplitudes);
    state.normalize();
    Ok(state)
}

/// <a|b>, conjugate-linear in the first argument.
pub fn overlap(a: &StateVector, b: &StateVector) -> Result<Complex64, FockError> {
    if a.dim() != b.dim() {
        return Err(FockError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Test-only matrix exponential by scaling-and-squaring Taylor series,
    /// independent of the eigendecomposition path it cross-checks.
    fn expm_taylor(m: &ComplexMatrix) -> ComplexMatrix {
        let n = m.dim();
        let scale_pow = (m.max_abs() * n as f64).log2().ceil().max(0.0) as u32 + 2;
        let factor = Complex64::new(1.0 / 2f64.powi(scale_pow as i32), 0.0);
        let scaled = ComplexMatrix::from_fn(n, |r, c| m.get(r, c) * factor);
        let mut acc = ComplexMatrix::identity(n);
        let mut term = ComplexMatrix::identity(n);
        for k in 1..40 {
            term = term.mul(&scaled);
            let inv = Complex64::new(1.0 / k as f64, 0.0);
            term = ComplexMatrix::from_fn(n, |r, c| term.get(r, c) * inv);
            for r in 0..n {
                for c in 0..n {
                    acc.set(r, c, acc.get(r, c) + term.get(r, c));
                }
            }
            if term.max_abs() < 1e-18 {
                break;
            }
        }
        for _ in 0..scale_pow {
            acc = acc.mul(&acc);
        }
        acc
    }

    #[test]
    fn ladder_matches_printed_n4() {
        let b = ladder(4).unwrap();
        let expect = [
            [0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 2f64.sqrt(), 0.0, 0.0],
            [0.0, 0.0, 3f64.sqrt(), 0.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert_abs_diff_eq!(b.get(r, c).re, expect[r][c], epsilon = 0.0);
                assert_eq!(b.get(r, c).im, 0.0);
            }
        }
    }

    #[test]
    fn ladder_n2_is_minimal() {
        let b = ladder(2).unwrap();
        assert_eq!(b.get(1, 0), Complex64::new(1.0, 0.0));
        assert_eq!(b.get(0, 0), Complex64::new(0.0, 0.0));
        assert_eq!(b.get(0, 1), Complex64::new(0.0, 0.0));
        assert_eq!(b.get(1, 1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn ladder_rejects_small_truncation() {
        assert!(matches!(
            ladder(1),
            Err(FockError::InvalidTruncation { min: 2, got: 1 })
        ));
    }

    #[test]
    fn number_operator_diagonal_at_n8() {
        // (b~dagger)^dagger b~dagger is diagonal 1..N-1 plus the corner defect;
        // equivalently b~dagger b~ has diagonal 0..N-2 and a vanishing corner.
        let bdag = ladder(8).unwrap();
        let num = bdag.mul(&bdag.adjoint());
        for k in 0..7 {
            assert_abs_diff_eq!(num.get(k + 1, k + 1).re, (k + 1) as f64, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(num.get(0, 0).re, 0.0, epsilon = 1e-12);
        // off-diagonals vanish
        for r in 0..8 {
            for c in 0..8 {
                if r != c {
                    assert!(num.get(r, c).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn generator_is_hermitian() {
        for n in [2usize, 4, 8, 16, 32] {
            let h = displacement_generator(n).unwrap();
            assert!(h.hermiticity_error() <= HERMITIAN_TOL * h.max_abs().max(1.0));
        }
    }

    #[test]
    fn displacement_at_zero_is_identity() {
        let u = displacement_unitary(6, 0.0).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(6)) < 1e-13);
    }

    #[test]
    fn displacement_n2_is_rotation() {
        let theta = 0.7343;
        let u = displacement_unitary(2, theta).unwrap();
        assert_abs_diff_eq!(u.get(0, 0).re, theta.cos(), epsilon = 1e-13);
        assert_abs_diff_eq!(u.get(0, 1).re, -theta.sin(), epsilon = 1e-13);
        assert_abs_diff_eq!(u.get(1, 0).re, theta.sin(), epsilon = 1e-13);
        assert_abs_diff_eq!(u.get(1, 1).re, theta.cos(), epsilon = 1e-13);
        for r in 0..2 {
            for c in 0..2 {
                assert!(u.get(r, c).im.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn displacement_rejects_non_finite() {
        assert!(matches!(
            displacement_unitary(4, f64::NAN),
            Err(FockError::NonFinite(_))
        ));
    }

    #[test]
    fn displacement_matches_taylor_exponential() {
        let n = 12;
        let theta = 0.9;
        let bdag = ladder(n).unwrap();
        let b = bdag.adjoint();
        let gen = ComplexMatrix::from_fn(n, |r, c| {
            Complex64::new(theta, 0.0) * (bdag.get(r, c) - b.get(r, c))
        });
        let expect = expm_taylor(&gen);
        let got = displacement_unitary(n, theta).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-11);
    }

    #[test]
    fn vacuum_amplitude_approaches_coherent_limit() {
        // <0|D~_N(1.3)|0> -> exp(-1.3^2/2) as N grows.
        let want = (-1.3f64 * 1.3 / 2.0).exp();
        let got = displacement_spectrum(32).unwrap().vacuum_amplitude(1.3).re;
        assert_abs_diff_eq!(got, want, epsilon = 1e-6);
    }

    #[test]
    fn vacuum_probability_converges_monotonically() {
        for theta in [0.5f64, 1.0, 1.7, 2.0] {
            let want = (-theta * theta).exp();
            let mut prev = f64::INFINITY;
            for n in [8usize, 16, 32, 64] {
                let amp = displacement_spectrum(n).unwrap().vacuum_amplitude(theta);
                // below ~1e-13 the sequence sits at the roundoff floor
                let err = (amp.norm_sqr() - want).abs().max(1e-13);
                assert!(
                    err <= prev + 1e-15,
                    "N={n} theta={theta}: err {err} > prev {prev}"
                );
                prev = err;
            }
        }
    }

    #[test]
    fn displacement_echo_identity() {
        let theta = 1.1;
        for n in [2usize, 4, 8, 32] {
            let d = displacement_unitary(n, theta).unwrap();
            let dinv = displacement_unitary(n, -theta).unwrap();
            let prod = d.mul(&dinv);
            assert!(prod.max_abs_diff(&ComplexMatrix::identity(n)) < 1e-10);
        }
    }

    #[test]
    fn displacement_preserves_norm() {
        for n in [2usize, 4, 16, 64] {
            let u = displacement_unitary(n, 1.37).unwrap();
            let state = u.apply(&StateVector::vacuum(n)).unwrap();
            assert_abs_diff_eq!(state.norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn overlap_basics() {
        let v = StateVector::basis(5, 0);
        let w = StateVector::basis(5, 1);
        assert_eq!(overlap(&v, &v).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(overlap(&v, &w).unwrap(), Complex64::new(0.0, 0.0));
        let d = displacement_unitary(32, 1.0).unwrap();
        let disp = d.apply(&StateVector::vacuum(32)).unwrap();
        let amp = overlap(&StateVector::vacuum(32), &disp).unwrap();
        assert_abs_diff_eq!(amp.re, (-0.5f64).exp(), epsilon = 1e-6);
        assert!(amp.im.abs() < 1e-12);
    }

    #[test]
    fn overlap_rejects_dimension_mismatch() {
        let v = StateVector::vacuum(4);
        let w = StateVector::vacuum(5);
        assert!(matches!(
            overlap(&v, &w),
            Err(FockError::DimensionMismatch(4, 5))
        ));
    }

    #[test]
    fn pair_state_trivial_is_vacuum() {
        let state = pair_state_oracle(10, 0.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(state.amplitude(0).re, 1.0, epsilon = 1e-12);
        for k in 1..state.dim() {
            assert!(state.amplitude(k).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_squeeze_matches_tanh_series() {
        // gamma=0.3, no displacement: amplitude on |n,n> is (-tanh g)^n / cosh g.
        let n = 24;
        let gamma = 0.3;
        let state = pair_state_oracle(n, 0.0, 0.0, gamma).unwrap();
        for k in 0..8 {
            let want = (-gamma.tanh()).powi(k as i32) / gamma.cosh();
            let got = state.amplitude(k * n + k);
            assert_abs_diff_eq!(got.re, want, epsilon = 1e-10);
            assert!(got.im.abs() < 1e-10);
        }
        // off-diagonal amplitudes vanish
        assert!(state.amplitude(1).norm() < 1e-12);
        assert!(state.amplitude(n).norm() < 1e-12);
        assert!(state.amplitude(2 * n + 3).norm() < 1e-12);
    }

    #[test]
    fn pair_state_matches_dense_tensor_exponential() {
        // Cross-check the subspace construction against a brute-force
        // exponential on the full N^2-dimensional tensor space.
        let n = 10usize;
        let (alpha_i, alpha_j, gamma) = (0.3, -0.2, 0.2);
        let dim = n * n;
        let bdag = ladder(n).unwrap();
        let b = bdag.adjoint();
        let kron = |x: &ComplexMatrix, y: &ComplexMatrix| {
            let mut out = ComplexMatrix::zeros(dim);
            for a in 0..n {
                for bb in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            out.set(a * n + c, bb * n + d, x.get(a, bb) * y.get(c, d));
                        }
                    }
                }
            }
            out
        };
        let id = ComplexMatrix::identity(n);
        let gen = {
            let bb = kron(&b, &b);
            let bdbd = kron(&bdag, &bdag);
            ComplexMatrix::from_fn(dim, |r, c| {
                Complex64::new(gamma, 0.0) * (bb.get(r, c) - bdbd.get(r, c))
            })
        };
        let s = expm_taylor(&gen);
        let di = displacement_unitary(n, alpha_i).unwrap();
        let dj = displacement_unitary(n, alpha_j).unwrap();
        let full = kron(&di, &id).mul(&kron(&id, &dj)).mul(&s);
        let want = full.apply(&StateVector::vacuum(dim)).unwrap();

        let got = pair_state_oracle(n, alpha_i, alpha_j, gamma).unwrap();
        let fidelity = overlap(&want, &got).unwrap().norm();
        assert!(
            (fidelity - 1.0).abs() < 1e-9,
            "fidelity {fidelity} too far from 1"
        );
        for k in 0..dim {
            assert!((want.amplitude(k) - got.amplitude(k)).norm() < 1e-9);
        }
    }

    #[test]
    fn pair_state_factorizes_at_zero_squeezing() {
        let n = 40;
        let a = pair_state_oracle(n, 1.0, -0.5, 0.0).unwrap();
        let b = pair_state_oracle(n, 0.2, 0.7, 0.0).unwrap();
        let got = overlap(&a, &b).unwrap().norm();
        // product of single-mode coherent overlap magnitudes
        let coherent = |x: f64, y: f64| (-(x - y) * (x - y) / 2.0f64).exp();
        let want = coherent(1.0, 0.2) * coherent(-0.5, 0.7);
        assert_abs_diff_eq!(got, want, epsilon = 1e-8);
    }

    #[test]
    fn pair_state_overlap_regression_fixture() {
        // frozen from this oracle at N_per_mode = 40; guards the whole
        // squeeze + displace + overlap path against silent drift
        let a = pair_state_oracle(40, 1.0, -0.5, 0.5).unwrap();
        let b = pair_state_oracle(40, 0.3, 0.4, -0.2).unwrap();
        let o = overlap(&b, &a).unwrap();
        assert_abs_diff_eq!(o.re, 5.402293335614247e-1, epsilon = 1e-12);
        assert!(o.im.abs() < 1e-12);
    }

    #[test]
    fn pair_state_guards_against_leakage() {
        // gamma close to the validity edge at a small truncation must refuse.
        let err = pair_state_oracle(8, 0.0, 0.0, 1.5).unwrap_err();
        assert!(matches!(err, FockError::TruncationLeakage { .. }));
        assert!(matches!(
            pair_state_oracle(16, 0.0, 0.0, 2.5),
            Err(FockError::GammaOutOfRange(_))
        ));
    }
}
