//! Pauli-string decomposition of the truncated displacement generator and
//! first-order Trotter evolution on log2(N) qubits.
//!
//! Convention: the decomposition targets the Hermitian generator
//! H = i(b~dagger_N - b~_N), so that exp(-i theta H) = exp(theta(b~dagger - b~)).
//! Under this identification the N=2 generator is literally the single Pauli Y.
//!
//! Qubit labeling is little-endian: the first symbol of a string acts on the
//! least-significant bit of the Fock index. This is the labeling under which
//! the N=4 decomposition reads (1+sqrt3)/2 YI + (1-sqrt3)/2 YZ + sqrt2/2 (XY - YX).

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fock::{displacement_generator, ComplexMatrix, FockError, StateVector};

/// Coefficients with magnitude below this are pruned from decompositions.
pub const COEFF_PRUNE_TOL: f64 = 1e-12;
/// Largest truncation the decomposer accepts (64 levels = 6 qubits).
pub const MAX_LEVELS: usize = 64;

#[derive(Debug, Error)]
pub enum PauliError {
    #[error("truncation level {0} is not a power of two in 2..={MAX_LEVELS}")]
    InvalidTruncation(usize),
    #[error("state dimension {state} does not match 2^{qubits}")]
    DimensionMismatch { state: usize, qubits: usize },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error(transparent)]
    Fock(#[from] FockError),
}

/// Single-qubit Pauli symbol. The derived order (I < X < Y < Z) is the
/// lexicographic order used for deterministic term ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// One weighted Pauli string. `symbols[k]` acts on qubit k (bit k of the
/// basis index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub coefficient: f64,
    pub symbols: Vec<Pauli>,
}

impl PauliTerm {
    pub fn new(coefficient: f64, symbols: Vec<Pauli>) -> Self {
        Self {
            coefficient,
            symbols,
        }
    }

    pub fn string(&self) -> String {
        self.symbols.iter().map(|p| p.symbol()).collect()
    }

    /// Bit mask of qubits flipped by this string (X or Y positions).
    fn flip_mask(&self) -> usize {
        let mut mask = 0usize;
        for (k, p) in self.symbols.iter().enumerate() {
            if matches!(p, Pauli::X | Pauli::Y) {
                mask |= 1 << k;
            }
        }
        mask
    }

    /// <r ^ flip_mask | P | r>: the single nonzero entry of column r.
    fn column_phase(&self, r: usize) -> Complex64 {
        let mut phase = Complex64::new(1.0, 0.0);
        for (k, p) in self.symbols.iter().enumerate() {
            let bit = (r >> k) & 1;
            match p {
                Pauli::I | Pauli::X => {}
                Pauli::Y => {
                    // Y = [[0, -i], [i, 0]]: column 0 -> +i, column 1 -> -i
                    phase *= if bit == 1 {
                        Complex64::new(0.0, -1.0)
                    } else {
                        Complex64::new(0.0, 1.0)
                    };
                }
                Pauli::Z => {
                    if bit == 1 {
                        phase = -phase;
                    }
                }
            }
        }
        phase
    }
}

/// A real-weighted sum of Pauli strings, terms in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliSum {
    pub qubits: usize,
    pub terms: Vec<PauliTerm>,
}

impl PauliSum {
    pub fn dim(&self) -> usize {
        1 << self.qubits
    }

    /// Dense matrix sum_k c_k P_k.
    pub fn to_matrix(&self) -> ComplexMatrix {
        let dim = self.dim();
        let mut out = ComplexMatrix::zeros(dim);
        for term in &self.terms {
            let mask = term.flip_mask();
            for r in 0..dim {
                let phase = term.column_phase(r);
                let v = out.get(r ^ mask, r) + phase * term.coefficient;
                out.set(r ^ mask, r, v);
            }
        }
        out
    }

    /// max |dense(self) - i(b~dagger - b~)|, the reconstruction residual.
    pub fn reconstruction_residual(&self) -> Result<f64, PauliError> {
        let h = displacement_generator(self.dim())?;
        Ok(self.to_matrix().max_abs_diff(&h))
    }
}

fn qubit_count(n: usize) -> Result<usize, PauliError> {
    if n < 2 || n > MAX_LEVELS || !n.is_power_of_two() {
        return Err(PauliError::InvalidTruncation(n));
    }
    Ok(n.trailing_zeros() as usize)
}

/// Decompose H = i(b~dagger_N - b~_N) into Pauli strings by the trace inner
/// product c_P = Tr(P H) / N over all 4^q strings; zero terms are pruned.
///
/// For this generator every surviving coefficient is exactly real (the trace
/// picks out the odd-Y strings).
pub fn pauli_decompose(n: usize) -> Result<PauliSum, PauliError> {
    let qubits = qubit_count(n)?;
    let h = displacement_generator(n)?;
    let mut terms = Vec::new();
    // Base-4 digits with symbols[0] as the most significant digit enumerate
    // strings in lexicographic order directly.
    for code in 0..(1usize << (2 * qubits)) {
        let mut symbols = Vec::with_capacity(qubits);
        for k in 0..qubits {
            let digit = (code >> (2 * (qubits - 1 - k))) & 0b11;
            symbols.push(match digit {
                0 => Pauli::I,
                1 => Pauli::X,
                2 => Pauli::Y,
                _ => Pauli::Z,
            });
        }
        let term = PauliTerm::new(1.0, symbols);
        let mask = term.flip_mask();
        // Tr(P H) = sum_r P[r, r^mask] H[r^mask, r]; P[r, r^mask] is the
        // phase of column r^mask.
        let mut trace = Complex64::new(0.0, 0.0);
        for r in 0..n {
            trace += term.column_phase(r ^ mask) * h.get(r ^ mask, r);
        }
        let coeff = trace.re / n as f64;
        debug_assert!(trace.im.abs() < 1e-10, "non-real trace coefficient");
        if coeff.abs() >= COEFF_PRUNE_TOL {
            terms.push(PauliTerm::new(coeff, term.symbols));
        }
    }
    Ok(PauliSum { qubits, terms })
}

/// Apply exp(-i * angle * coefficient * P) to a state. Norm is preserved.
pub fn exp_pauli_apply(
    term: &PauliTerm,
    angle: f64,
    state: &StateVector,
) -> Result<StateVector, PauliError> {
    let dim = 1usize << term.symbols.len();
    if state.dim() != dim {
        return Err(PauliError::DimensionMismatch {
            state: state.dim(),
            qubits: term.symbols.len(),
        });
    }
    let lambda = angle * term.coefficient;
    let (c, s) = (lambda.cos(), lambda.sin());
    let mask = term.flip_mask();
    let mut out = state.amplitudes().to_vec();
    if mask == 0 {
        // diagonal string: pure phases exp(-i lambda * (+/-1))
        for (r, z) in out.iter_mut().enumerate() {
            let sign = term.column_phase(r).re;
            *z *= Complex64::new(c, -s * sign);
        }
    } else {
        for r in 0..dim {
            let p = r ^ mask;
            if p < r {
                continue;
            }
            let vr = out[r];
            let vp = out[p];
            // P|r> = phase_r |p>, P|p> = phase_p |r>
            let phase_r = term.column_phase(r);
            let phase_p = term.column_phase(p);
            out[r] = c * vr - Complex64::new(0.0, s) * (phase_p * vp);
            out[p] = c * vp - Complex64::new(0.0, s) * (phase_r * vr);
        }
    }
    Ok(StateVector::from_amplitudes(out))
}

/// First-order product formula: starting from |0...0>, apply
/// exp(-i (theta/steps) c_k P_k) for each term in the sum's deterministic
/// order, repeated `steps` times.
pub fn trotter_evolve(sum: &PauliSum, theta: f64, steps: usize) -> Result<StateVector, PauliError> {
    assert!(steps >= 1, "steps must be at least 1");
    let mut state = StateVector::vacuum(sum.dim());
    let dt = theta / steps as f64;
    for _ in 0..steps {
        for term in &sum.terms {
            state = exp_pauli_apply(term, dt, &state)?;
        }
    }
    Ok(state)
}

/// Vacuum-return probability |<0...0| trotter_evolve(decompose(N), theta, steps)>|^2.
///
/// For kernel use theta encodes (x - x') / (sqrt2 c): the echo reduction means
/// only the single displacement D~_N(alpha - beta) is ever applied.
pub fn echo_probability(n: usize, theta: f64, steps: usize) -> Result<f64, PauliError> {
    let sum = pauli_decompose(n)?;
    echo_probability_of(&sum, theta, steps)
}

/// Same as [`echo_probability`] but reusing an already-built decomposition.
pub fn echo_probability_of(sum: &PauliSum, theta: f64, steps: usize) -> Result<f64, PauliError> {
    let state = trotter_evolve(sum, theta, steps)?;
    Ok(state.amplitude(0).norm_sqr())
}

/// Binomial shot-noise estimate of a probability: draws k ~ Binomial(shots, p)
/// from a generator seeded per call and returns k / shots.
pub fn shot_estimate(p: f64, shots: u64, seed: u64) -> Result<f64, PauliError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(PauliError::InvalidProbability(p));
    }
    assert!(shots >= 1, "shots must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Binomial::new(shots, p)
        .expect("validated probability")
        .sample(&mut rng);
    Ok(k as f64 / shots as f64)
}
