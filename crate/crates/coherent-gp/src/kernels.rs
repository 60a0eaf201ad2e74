//! Kernel families, Gram-matrix construction, and hardware-style noise
//! emulation.
//!
//! Five families are supported:
//!
//! - `AnalyticCoherent` — the closed-form squared-exponential limit,
//!   k_i = exp(-(x-x')^2 / (2 c_i^2)) per dimension;
//! - `FiniteCoherent(N)` — vacuum-echo probability of the N-level truncated
//!   displacement, evaluated in O(N) from a cached eigensystem;
//! - `QubitTrotter(N, m)` — the same echo prepared on log2(N) qubits with m
//!   first-order Trotter steps;
//! - `Squeezed { series_cap }` — three data dimensions pairwise entangled by
//!   two-mode squeezing; each pair factor is a truncated double series over
//!   displaced-number-state overlaps and enters as a magnitude (not squared),
//!   so the zero-squeezing limit reproduces the coherent product kernel;
//! - `ExternalGram` — an ingested Gram matrix rescaled by `s`; pointwise
//!   evaluation is rejected.
//!
//! All evaluators are pure; Gram fill is deterministic regardless of schedule.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fock::{displacement_spectrum, DisplacementSpectrum, FockError};
use crate::pauli::{echo_probability_of, pauli_decompose, PauliError, PauliSum};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Default truncation of the squeezed double series (inclusive: n, m = 0..=8).
pub const DEFAULT_SERIES_CAP: usize = 8;
/// Hard cap protecting the factorial ratios in the overlap formula.
pub const MAX_SERIES_CAP: usize = 20;
/// |gamma| beyond which the truncated series is outside its validated range.
pub const SQUEEZED_GAMMA_VALIDATED: f64 = 2.0;

/// Default fraction of shots replaced by background noise in hardware
/// emulation. With an unbiased (p = 1/2) background this puts the noise floor
/// at 0.02 and the emulated Gram diagonal at 0.98, the two distortions the
/// hardware comparison exhibits.
pub const DEFAULT_HW_FLOOR_RATE: f64 = 0.04;
/// Success probability of a background (noise) shot.
pub const HW_BACKGROUND_SUCCESS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("point dimensionality {got} does not match kernel dims {want}")]
    DimsMismatch { want: usize, got: usize },
    #[error("the squeezed family is defined for exactly 3 data dimensions, got {0}")]
    SqueezedDims(usize),
    #[error("hyperparameters malformed: {0}")]
    BadHyperparams(String),
    #[error("series cap {0} exceeds the factorial-safe maximum {MAX_SERIES_CAP}")]
    SeriesCapTooLarge(usize),
    #[error("external-Gram kernels cannot be evaluated pointwise")]
    GramOnly,
    #[error("floor rate {0} outside [0, 1]")]
    InvalidFloorRate(f64),
    #[error("gram entry ({row},{col}) = {value} outside [0, s]; cannot shot-sample")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("emulation requires a simulated Gram, got {0:?} provenance")]
    NotSimulated(Provenance),
    #[error("gram file has ragged rows: row {row} has {got} cells, expected {want}")]
    RaggedRows { row: usize, want: usize, got: usize },
    #[error("gram file is not square: {rows} rows x {cols} columns")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-numeric cell at row {row}, column {col}: {text:?}")]
    BadCell {
        row: usize,
        col: usize,
        text: String,
    },
    #[error("empty gram file")]
    EmptyFile,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Pauli(#[from] PauliError),
}

/// How the squeezing argument is derived from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GammaMode {
    /// gamma_ij = x_i * x_j * d_ij with d_ij the optimized coupling.
    #[default]
    Coupling,
    /// gamma_ij = d_ij independent of the data (fixture-comparison mode).
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelFamily {
    AnalyticCoherent,
    FiniteCoherent {
        levels: usize,
    },
    QubitTrotter {
        levels: usize,
        steps: usize,
    },
    Squeezed {
        series_cap: usize,
        gamma_mode: GammaMode,
    },
    /// Prefactor-free ingested Gram over the training set; `s` rescales it.
    ExternalGram {
        gram: GramMatrix,
    },
}

impl KernelFamily {
    pub fn squeezed() -> Self {
        KernelFamily::Squeezed {
            series_cap: DEFAULT_SERIES_CAP,
            gamma_mode: GammaMode::Coupling,
        }
    }

    /// Label in the C-N / CQ-N-tm naming scheme.
    pub fn label(&self) -> String {
        match self {
            KernelFamily::AnalyticCoherent => "coherent".into(),
            KernelFamily::FiniteCoherent { levels } => format!("C-{levels}"),
            KernelFamily::QubitTrotter { levels, steps } => format!("CQ-{levels}-t{steps}"),
            KernelFamily::Squeezed { .. } => "squeezed".into(),
            KernelFamily::ExternalGram { .. } => "external".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dims: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dims: usize) -> Self {
        Self { family, dims }
    }

    /// Number of squeezing couplings: one per unordered dimension pair.
    pub fn coupling_count(&self) -> usize {
        match self.family {
            KernelFamily::Squeezed { .. } => self.dims * (self.dims - 1) / 2,
            _ => 0,
        }
    }
}

/// Kernel hyperparameters. `c` holds one length scale per data dimension;
/// `d` holds squeezing couplings for the pair order (1,0), (2,0), (2,1);
/// `sigma_d` is the model-discrepancy standard deviation (0 when disabled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub s: f64,
    pub c: Vec<f64>,
    #[serde(default)]
    pub d: Vec<f64>,
    #[serde(default)]
    pub sigma_d: f64,
}

impl Hyperparams {
    pub fn new(s: f64, c: Vec<f64>) -> Self {
        Self {
            s,
            c,
            d: Vec::new(),
            sigma_d: 0.0,
        }
    }

    pub fn with_couplings(mut self, d: Vec<f64>) -> Self {
        self.d = d;
        self
    }

    pub fn with_sigma_d(mut self, sigma_d: f64) -> Self {
        self.sigma_d = sigma_d;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Simulated,
    Ingested,
    ShotEmulated,
}

/// Metadata written to the JSON sidecar next to a saved Gram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMeta {
    pub family: String,
    pub hyperparams: Hyperparams,
}

/// Symmetric kernel matrix over a point set, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub n: usize,
    /// Row-major values, including the `s` prefactor.
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// The prefactor under which `values` were produced (diagonal scale).
    pub scale: f64,
    pub meta: Option<GramMeta>,
}

impl GramMatrix {
    pub fn from_values(n: usize, values: Vec<f64>, provenance: Provenance, scale: f64) -> Self {
        assert_eq!(values.len(), n * n);
        Self {
            n,
            values,
            provenance,
            scale,
            meta: None,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.n + c] = v;
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |r, c| self.get(r, c))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for c in 0..r {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }
}

impl fmt::Display for GramMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} {:?} gram", self.n, self.n, self.provenance)
    }
}

/// One-dimensional analytic coherent factor exp(-(x-x')^2 / (2 c^2)).
pub fn dim_kernel_analytic(x: f64, xp: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    let diff = x - xp;
    (-(diff * diff) / (2.0 * c * c)).exp()
}

/// One-dimensional finite-coherent factor |<0| D~_N((x-x')/(sqrt2 c)) |0>|^2.
pub fn dim_kernel_finite(x: f64, xp: f64, c: f64, levels: usize) -> Result<f64, KernelError> {
    let spec = displacement_spectrum(levels)?;
    Ok(finite_factor(&spec, x, xp, c))
}

#[inline]
fn finite_factor(spec: &DisplacementSpectrum, x: f64, xp: f64, c: f64) -> f64 {
    spec.vacuum_amplitude((x - xp) / (SQRT_2 * c)).norm_sqr()
}

/// One-dimensional qubit factor: Trotterized vacuum-echo probability.
pub fn dim_kernel_qubit(
    x: f64,
    xp: f64,
    c: f64,
    levels: usize,
    steps: usize,
) -> Result<f64, KernelError> {
    let sum = pauli_decompose(levels)?;
    Ok(qubit_factor(&sum, x, xp, c, steps))
}

#[inline]
fn qubit_factor(sum: &PauliSum, x: f64, xp: f64, c: f64, steps: usize) -> f64 {
    echo_probability_of(sum, (x - xp) / (SQRT_2 * c), steps).expect("dimensions fixed by sum")
}

/// Associated Laguerre polynomial L_m^k(x) for integer k >= 0, by the
/// three-term recurrence.
pub fn laguerre_assoc(m: usize, k: usize, x: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let kf = k as f64;
    let mut prev = 1.0;
    let mut cur = 1.0 + kf - x;
    for i in 1..m {
        let fi = i as f64;
        let next = ((2.0 * fi + kf + 1.0 - x) * cur - (fi + kf) * prev) / (fi + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Overlap of displaced number states <m, alpha' | n, alpha> for real
/// displacements:
///
///   <alpha'|alpha> sqrt(m!/n!) (alpha'-alpha)^(n-m) L_m^(n-m)((alpha'-alpha)^2)
///
/// for n >= m, and the role-exchanged counterpart with sign (alpha-alpha')^(m-n)
/// otherwise. <alpha'|alpha> = exp(-(alpha-alpha')^2 / 2) for real arguments.
pub fn displaced_number_overlap(
    m: usize,
    alpha_p: f64,
    n: usize,
    alpha: f64,
) -> Result<f64, KernelError> {
    if m > MAX_SERIES_CAP || n > MAX_SERIES_CAP {
        return Err(KernelError::SeriesCapTooLarge(m.max(n)));
    }
    let delta = alpha_p - alpha;
    let base = (-delta * delta / 2.0).exp();
    let (lo, hi, sign_delta) = if n >= m {
        (m, n, delta)
    } else {
        (n, m, -delta)
    };
    // sqrt(lo!/hi!) = 1 / sqrt(prod_{k=lo+1..hi} k)
    let mut fact = 1.0f64;
    for k in (lo + 1)..=hi {
        fact *= k as f64;
    }
    let ratio = 1.0 / fact.sqrt();
    let k = hi - lo;
    Ok(base * ratio * sign_delta.powi(k as i32) * laguerre_assoc(lo, k, delta * delta))
}

/// Table of displaced-number overlaps o[n][m] = <m, alpha'|n, alpha> for
/// n, m <= cap, filled diagonal-by-diagonal so each Laguerre recurrence runs
/// once.
fn overlap_table(alpha_p: f64, alpha: f64, cap: usize) -> Vec<f64> {
    let size = cap + 1;
    let delta = alpha_p - alpha;
    let x = delta * delta;
    let base = (-x / 2.0).exp();
    let mut table = vec![0.0f64; size * size];
    for k in 0..size {
        let sign_pos = delta.powi(k as i32); // for n >= m
        let sign_neg = (-delta).powi(k as i32); // for m > n
        let mut fact = 1.0f64;
        for j in 1..=k {
            fact *= j as f64;
        }
        // ratio_m = sqrt(m! / (m+k)!), advanced multiplicatively over m
        let mut ratio = 1.0 / fact.sqrt();
        let kf = k as f64;
        let mut l_prev = 1.0f64; // L_0^k
        let mut l_cur = 1.0 + kf - x; // L_1^k
        for m in 0..size - k {
            let l_m = if m == 0 { 1.0 } else { l_cur };
            let value = base * ratio * l_m;
            table[(m + k) * size + m] = value * sign_pos;
            table[m * size + (m + k)] = value * sign_neg;
            if m >= 1 {
                let fm = m as f64;
                let l_next = ((2.0 * fm + kf + 1.0 - x) * l_cur - (fm + kf) * l_prev) / (fm + 1.0);
                l_prev = l_cur;
                l_cur = l_next;
            }
            ratio *= ((m + 1) as f64 / (m + 1 + k) as f64).sqrt();
        }
    }
    table
}

/// Squeezed pair factor from explicit squeezing arguments; returns the
/// magnitude of the truncated double series
///
///   1/(cosh g cosh g') sum_{n,m<=cap} (-tanh g)^n (-tanh g')^m
///       <m,a_i'|n,a_i> <m,a_j'|n,a_j>.
pub fn squeezed_pair_from_gammas(
    alpha_i: f64,
    alpha_j: f64,
    alpha_pi: f64,
    alpha_pj: f64,
    gamma: f64,
    gamma_p: f64,
    cap: usize,
) -> Result<f64, KernelError> {
    if cap > MAX_SERIES_CAP {
        return Err(KernelError::SeriesCapTooLarge(cap));
    }
    let size = cap + 1;
    let ti = overlap_table(alpha_pi, alpha_i, cap);
    let tj = overlap_table(alpha_pj, alpha_j, cap);
    let t = -gamma.tanh();
    let tp = -gamma_p.tanh();
    let mut pow_t = vec![1.0f64; size];
    let mut pow_tp = vec![1.0f64; size];
    for k in 1..size {
        pow_t[k] = pow_t[k - 1] * t;
        pow_tp[k] = pow_tp[k - 1] * tp;
    }
    let mut sum = 0.0f64;
    for n in 0..size {
        let mut row = 0.0f64;
        for m in 0..size {
            row += pow_tp[m] * ti[n * size + m] * tj[n * size + m];
        }
        sum += pow_t[n] * row;
    }
    Ok((sum / (gamma.cosh() * gamma_p.cosh())).abs())
}

/// Squeezed pair factor with data-coupled squeezing gamma = x_i x_j d_ij and
/// gamma' = x_i' x_j' d_ij, displacements alpha = x / (sqrt2 c) per dimension.
///
/// Validated against the dense two-mode oracle for |gamma| < 2; beyond that
/// the truncated series degrades.
#[allow(clippy::too_many_arguments)]
pub fn squeezed_pair_kernel(
    xi: f64,
    xj: f64,
    xpi: f64,
    xpj: f64,
    ci: f64,
    cj: f64,
    dij: f64,
    cap: usize,
) -> Result<f64, KernelError> {
    let gamma = xi * xj * dij;
    let gamma_p = xpi * xpj * dij;
    squeezed_pair_from_gammas(
        xi / (SQRT_2 * ci),
        xj / (SQRT_2 * cj),
        xpi / (SQRT_2 * ci),
        xpj / (SQRT_2 * cj),
        gamma,
        gamma_p,
        cap,
    )
}

/// Prebuilt kernel evaluator: caches the displacement eigensystem or Pauli
/// decomposition so pointwise evaluation stays cheap inside Gram fills and
/// optimizer loops.
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    hp: Hyperparams,
    finite: Option<DisplacementSpectrum>,
    qubit: Option<(PauliSum, usize)>,
}

impl Kernel {
    pub fn new(spec: KernelSpec, hp: Hyperparams) -> Result<Self, KernelError> {
        if hp.s <= 0.0 || !hp.s.is_finite() {
            return Err(KernelError::BadHyperparams(format!("s = {}", hp.s)));
        }
        match &spec.family {
            KernelFamily::ExternalGram { .. } => {}
            _ => {
                if hp.c.len() != spec.dims {
                    return Err(KernelError::BadHyperparams(format!(
                        "{} length scales for {} dims",
                        hp.c.len(),
                        spec.dims
                    )));
                }
                if hp.c.iter().any(|&c| c <= 0.0 || !c.is_finite()) {
                    return Err(KernelError::BadHyperparams(
                        "non-positive length scale".into(),
                    ));
                }
            }
        }
        let mut finite = None;
        let mut qubit = None;
        match spec.family {
            KernelFamily::FiniteCoherent { levels } => {
                finite = Some(displacement_spectrum(levels)?);
            }
            KernelFamily::QubitTrotter { levels, steps } => {
                assert!(steps >= 1, "steps must be positive");
                qubit = Some((pauli_decompose(levels)?, steps));
            }
            KernelFamily::Squeezed { series_cap, .. } => {
                if spec.dims != 3 {
                    return Err(KernelError::SqueezedDims(spec.dims));
                }
                if series_cap < 1 || series_cap > MAX_SERIES_CAP {
                    return Err(KernelError::SeriesCapTooLarge(series_cap));
                }
                if hp.d.len() != spec.coupling_count() {
                    return Err(KernelError::BadHyperparams(format!(
                        "{} couplings for {} pairs",
                        hp.d.len(),
                        spec.coupling_count()
                    )));
                }
            }
            _ => {}
        }
        Ok(Self {
            spec,
            hp,
            finite,
            qubit,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn hp(&self) -> &Hyperparams {
        &self.hp
    }

    /// k(x, x'). Rejects pointwise evaluation for external-Gram kernels.
    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64, KernelError> {
        if x.len() != self.spec.dims || xp.len() != self.spec.dims {
            return Err(KernelError::DimsMismatch {
                want: self.spec.dims,
                got: x.len().min(xp.len()),
            });
        }
        let hp = &self.hp;
        let value = match &self.spec.family {
            KernelFamily::AnalyticCoherent => {
                let mut prod = 1.0;
                for i in 0..x.len() {
                    prod *= dim_kernel_analytic(x[i], xp[i], hp.c[i]);
                }
                prod
            }
            KernelFamily::FiniteCoherent { .. } => {
                let spec = self.finite.as_ref().expect("cached at construction");
                let mut prod = 1.0;
                for i in 0..x.len() {
                    prod *= finite_factor(spec, x[i], xp[i], hp.c[i]);
                }
                prod
            }
            KernelFamily::QubitTrotter { .. } => {
                let (sum, steps) = self.qubit.as_ref().expect("cached at construction");
                let mut prod = 1.0;
                for i in 0..x.len() {
                    prod *= qubit_factor(sum, x[i], xp[i], hp.c[i], *steps);
                }
                prod
            }
            KernelFamily::Squeezed {
                series_cap,
                gamma_mode,
            } => {
                // unordered pairs (i, j), i > j, in the order (1,0), (2,0), (2,1)
                let mut prod = 1.0;
                let mut pair = 0usize;
                for i in 1..self.spec.dims {
                    for j in 0..i {
                        let dij = hp.d[pair];
                        pair += 1;
                        let (gamma, gamma_p) = match gamma_mode {
                            GammaMode::Coupling => (x[i] * x[j] * dij, xp[i] * xp[j] * dij),
                            GammaMode::Fixed => (dij, dij),
                        };
                        prod *= squeezed_pair_from_gammas(
                            x[i] / (SQRT_2 * hp.c[i]),
                            x[j] / (SQRT_2 * hp.c[j]),
                            xp[i] / (SQRT_2 * hp.c[i]),
                            xp[j] / (SQRT_2 * hp.c[j]),
                            gamma,
                            gamma_p,
                            *series_cap,
                        )?;
                    }
                }
                prod
            }
            KernelFamily::ExternalGram { .. } => return Err(KernelError::GramOnly),
        };
        Ok(hp.s * value)
    }

    /// Symmetric Gram matrix over `points`: the upper triangle is evaluated
    /// and mirrored. For the external family this is the stored Gram rescaled
    /// by `s` (sizes must agree).
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<GramMatrix, KernelError> {
        assert!(!points.is_empty(), "gram of an empty point set");
        if let KernelFamily::ExternalGram { gram } = &self.spec.family {
            if gram.n != points.len() {
                return Err(KernelError::DimsMismatch {
                    want: gram.n,
                    got: points.len(),
                });
            }
            let values = gram.values.iter().map(|v| self.hp.s * v).collect();
            let mut out = GramMatrix::from_values(gram.n, values, gram.provenance, self.hp.s);
            out.meta = Some(GramMeta {
                family: "external".into(),
                hyperparams: self.hp.clone(),
            });
            return Ok(out);
        }
        let n = points.len();
        let mut values = vec![0.0f64; n * n];
        for r in 0..n {
            for c in r..n {
                let v = self.eval(&points[r], &points[c])?;
                values[r * n + c] = v;
                values[c * n + r] = v;
            }
        }
        let mut out = GramMatrix::from_values(n, values, Provenance::Simulated, self.hp.s);
        out.meta = Some(GramMeta {
            family: self.spec.family.label(),
            hyperparams: self.hp.clone(),
        });
        Ok(out)
    }

    /// Rectangular cross-kernel matrix K[r, c] = k(xstar[r], x[c]).
    pub fn cross_gram(
        &self,
        xstar: &[Vec<f64>],
        x: &[Vec<f64>],
    ) -> Result<DMatrix<f64>, KernelError> {
        let mut out = DMatrix::<f64>::zeros(xstar.len(), x.len());
        for r in 0..xstar.len() {
            for c in 0..x.len() {
                out[(r, c)] = self.eval(&xstar[r], &x[c])?;
            }
        }
        Ok(out)
    }
}

/// (G + G^T) / 2; idempotent, provenance preserved.
pub fn symmetrize(g: &GramMatrix) -> GramMatrix {
    let mut out = g.clone();
    for r in 0..g.n {
        for c in 0..g.n {
            out.set(r, c, 0.5 * (g.get(r, c) + g.get(c, r)));
        }
    }
    out
}

/// Emulate running a simulated Gram on shot-limited, noisy hardware.
///
/// Each entry is divided by the prefactor, resampled as k/shots with
/// k ~ Binomial(shots, p), mixed with a p = 1/2 background at `floor_rate`
/// (so the noise floor sits at floor_rate/2 and the diagonal at
/// 1 - floor_rate/2), rescaled, and the result symmetrized — entries (i,j)
/// and (j,i) are sampled independently, as two separate circuits would be.
pub fn emulate_hardware_gram(
    g: &GramMatrix,
    shots: u64,
    floor_rate: f64,
    seed: u64,
) -> Result<GramMatrix, KernelError> {
    if g.provenance != Provenance::Simulated {
        return Err(KernelError::NotSimulated(g.provenance));
    }
    if !(0.0..=1.0).contains(&floor_rate) {
        return Err(KernelError::InvalidFloorRate(floor_rate));
    }
    let mut out = g.clone();
    for r in 0..g.n {
        for c in 0..g.n {
            let p = g.get(r, c) / g.scale;
            if !(-1e-12..=1.0 + 1e-12).contains(&p) {
                return Err(KernelError::EntryOutOfRange {
                    row: r,
                    col: c,
                    value: g.get(r, c),
                });
            }
            let p = p.clamp(0.0, 1.0);
            let entry_seed = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((r * g.n + c) as u64);
            let sampled = crate::pauli::shot_estimate(p, shots, entry_seed)?;
            let noisy = (1.0 - floor_rate) * sampled + floor_rate * HW_BACKGROUND_SUCCESS;
            out.set(r, c, g.scale * noisy);
        }
    }
    let mut out = symmetrize(&out);
    out.provenance = Provenance::ShotEmulated;
    Ok(out)
}

/// Write a Gram as comma-separated decimal text (17 significant digits, so
/// values round-trip bit-exactly) plus a JSON sidecar with provenance and
/// kernel metadata.
pub fn save_gram(g: &GramMatrix, path: &Path) -> Result<(), KernelError> {
    let mut text = String::new();
    for r in 0..g.n {
        for c in 0..g.n {
            if c > 0 {
                text.push(',');
            }
            text.push_str(&format!("{:.16e}", g.get(r, c)));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    let sidecar = serde_json::json!({
        "n": g.n,
        "provenance": g.provenance,
        "s": g.scale,
        "family": g.meta.as_ref().map(|m| m.family.clone()),
        "hyperparams": g.meta.as_ref().map(|m| m.hyperparams.clone()),
    });
    let sidecar_path = path.with_extension("json");
    std::fs::write(
        sidecar_path,
        serde_json::to_string_pretty(&sidecar).expect("serializable"),
    )?;
    Ok(())
}

/// Load a Gram from CSV. If the JSON sidecar is present its scale is adopted;
/// otherwise the largest diagonal entry is used. Provenance becomes Ingested.
pub fn load_gram(path: &Path) -> Result<GramMatrix, KernelError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (c, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| KernelError::BadCell {
                row: r,
                col: c,
                text: cell.trim().to_string(),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(KernelError::EmptyFile);
    }
    let want = rows[0].len();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != want {
            return Err(KernelError::RaggedRows {
                row: r,
                want,
                got: row.len(),
            });
        }
    }
    if rows.len() != want {
        return Err(KernelError::NotSquare {
            rows: rows.len(),
            cols: want,
        });
    }
    let n = rows.len();
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    let mut scale = (0..n)
        .map(|k| values[k * n + k])
        .fold(f64::NEG_INFINITY, f64::max);
    if !scale.is_finite() || scale <= 0.0 {
        scale = 1.0;
    }
    let mut g = GramMatrix::from_values(n, values, Provenance::Ingested, scale);
    let sidecar_path = path.with_extension("json");
    if let Ok(sidecar) = std::fs::read_to_string(sidecar_path) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&sidecar) {
            if let Some(s) = v.get("s").and_then(|s| s.as_f64()) {
                g.scale = s;
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{overlap, pair_state_oracle, StateVector};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec1(family: KernelFamily) -> KernelSpec {
        KernelSpec::new(family, 1)
    }

    #[test]
    fn analytic_factor_closed_forms() {
        assert_eq!(dim_kernel_analytic(3.2, 3.2, 0.8), 1.0);
        assert_abs_diff_eq!(
            dim_kernel_analytic(0.0, 1.0, 1.0),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        // a reference length scale for x sin x, at maximal separation
        let c = 1.764;
        assert_abs_diff_eq!(
            dim_kernel_analytic(0.0, 19.9, c),
            (-(19.9f64 * 19.9) / (2.0 * c * c)).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn finite_factor_closed_forms() {
        assert_abs_diff_eq!(
            dim_kernel_finite(2.0, 2.0, 1.3, 7).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // N=2 reduces to cos^2
        let (x, xp, c) = (0.9, -0.4, 1.1);
        let theta = (x - xp) / (SQRT_2 * c);
        assert_abs_diff_eq!(
            dim_kernel_finite(x, xp, c, 2).unwrap(),
            theta.cos().powi(2),
            epsilon = 1e-13
        );
        // N=32 at moderate separation matches the analytic limit
        assert_abs_diff_eq!(
            dim_kernel_finite(3.0, 1.0, 1.0, 32).unwrap(),
            dim_kernel_analytic(3.0, 1.0, 1.0),
            epsilon = 1e-6
        );
    }

    #[test]
    fn qubit_factor_reductions() {
        assert_abs_diff_eq!(
            dim_kernel_qubit(1.5, 1.5, 2.0, 4, 3).unwrap(),
            1.0,
            epsilon = 1e-13
        );
        // N=2 with one step is exact: equals the finite factor
        let (x, xp, c) = (2.0, 0.5, 1.7);
        assert_abs_diff_eq!(
            dim_kernel_qubit(x, xp, c, 2, 1).unwrap(),
            dim_kernel_finite(x, xp, c, 2).unwrap(),
            epsilon = 1e-13
        );
        // three Trotter steps sit close to the dense N=4 value at the
        // operating point from the hardware experiment (c = 2.225)
        let q = dim_kernel_qubit(1.0, 0.0, 2.225, 4, 3).unwrap();
        let f = dim_kernel_finite(1.0, 0.0, 2.225, 4).unwrap();
        assert!((q - f).abs() < 0.05, "qubit {q} vs finite {f}");
    }

    #[test]
    fn monotone_truncation_error() {
        // |finite(N) - analytic| non-increasing over N in {4,8,16,32} for
        // separations up to |x-x'|/c = 2
        for step in 1..=10 {
            let dx = 0.2 * step as f64; // c = 1
            let reference = dim_kernel_analytic(dx, 0.0, 1.0);
            let mut prev = f64::INFINITY;
            for n in [4usize, 8, 16, 32] {
                let err = (dim_kernel_finite(dx, 0.0, 1.0, n).unwrap() - reference)
                    .abs()
                    .max(1e-14);
                assert!(err <= prev + 1e-14, "dx={dx} N={n}: {err} > {prev}");
                prev = err;
            }
        }
    }

    #[test]
    fn laguerre_small_orders() {
        // L_0^k = 1, L_1^k = 1 + k - x, L_2^0 = x^2/2 - 2x + 1
        for x in [0.0, 0.4, 2.7] {
            assert_eq!(laguerre_assoc(0, 3, x), 1.0);
            assert_abs_diff_eq!(laguerre_assoc(1, 2, x), 3.0 - x, epsilon = 1e-14);
            assert_abs_diff_eq!(
                laguerre_assoc(2, 0, x),
                x * x / 2.0 - 2.0 * x + 1.0,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn displaced_overlap_limits() {
        // m = n = 0 reduces to the coherent overlap
        for (a, ap) in [(0.0, 0.5), (1.2, -0.7)] {
            let want = (-(ap - a) * (ap - a) / 2.0f64).exp();
            assert_abs_diff_eq!(
                displaced_number_overlap(0, ap, 0, a).unwrap(),
                want,
                epsilon = 1e-14
            );
        }
        // equal displacements and m != n: orthogonal number states
        assert_eq!(displaced_number_overlap(1, 0.8, 2, 0.8).unwrap(), 0.0);
        assert!(matches!(
            displaced_number_overlap(25, 0.0, 0, 0.0),
            Err(KernelError::SeriesCapTooLarge(_))
        ));
    }

    #[test]
    fn displaced_overlap_against_dense_oracle() {
        // <m, a'|n, a> computed densely as <m|D(a')^dag D(a)|n> at N=40
        let n_dim = 40;
        for (m, n, a, ap) in [
            (1usize, 2usize, 0.0, 0.5),
            (0, 3, 0.7, -0.2),
            (4, 1, -0.9, 0.3),
            (2, 2, 1.1, 0.6),
        ] {
            let da = crate::fock::displacement_unitary(n_dim, a).unwrap();
            let dap = crate::fock::displacement_unitary(n_dim, ap).unwrap();
            let ket = da.apply(&StateVector::basis(n_dim, n)).unwrap();
            let bra = dap.apply(&StateVector::basis(n_dim, m)).unwrap();
            let dense = overlap(&bra, &ket).unwrap();
            let series = displaced_number_overlap(m, ap, n, a).unwrap();
            assert_abs_diff_eq!(dense.re, series, epsilon = 1e-10);
            assert!(dense.im.abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_table_matches_single_entries() {
        let (a, ap, cap) = (0.37, -0.81, 8);
        let table = overlap_table(ap, a, cap);
        for n in 0..=cap {
            for m in 0..=cap {
                let want = displaced_number_overlap(m, ap, n, a).unwrap();
                assert_abs_diff_eq!(table[n * (cap + 1) + m], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn squeezed_pair_identity_and_zero_coupling() {
        // identical inputs, modest gamma: within the cap-truncation residual
        let v = squeezed_pair_kernel(1.0, 0.6, 1.0, 0.6, 1.0, 1.0, 0.5, 8).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-8);
        // d = 0 collapses to the product of per-dimension coherent magnitudes
        let (xi, xj, xpi, xpj, ci, cj) = (1.3, -0.4, 0.2, 0.9, 1.1, 0.7);
        let got = squeezed_pair_kernel(xi, xj, xpi, xpj, ci, cj, 0.0, 8).unwrap();
        let ai = (xi - xpi) / (SQRT_2 * ci);
        let aj = (xj - xpj) / (SQRT_2 * cj);
        let want = (-ai * ai / 2.0f64).exp() * (-aj * aj / 2.0f64).exp();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn squeezed_pair_matches_pair_state_oracle() {
        // series vs dense two-mode overlap magnitude at N_per_mode = 40
        let n = 40;
        let cases = [
            (1.0, 0.5, 0.8, -0.2, 1.0, 1.0, 0.3),
            (0.6, -0.9, 0.1, 0.4, 0.8, 1.2, 0.2),
            (1.4, 0.2, -0.5, 0.7, 1.1, 0.9, 0.15),
        ];
        for (xi, xj, xpi, xpj, ci, cj, dij) in cases {
            let ai = xi / (SQRT_2 * ci);
            let aj = xj / (SQRT_2 * cj);
            let api = xpi / (SQRT_2 * ci);
            let apj = xpj / (SQRT_2 * cj);
            let ket = pair_state_oracle(n, ai, aj, xi * xj * dij).unwrap();
            let bra = pair_state_oracle(n, api, apj, xpi * xpj * dij).unwrap();
            let dense = overlap(&bra, &ket).unwrap().norm();
            let series = squeezed_pair_kernel(xi, xj, xpi, xpj, ci, cj, dij, 8).unwrap();
            assert_abs_diff_eq!(dense, series, epsilon = 1e-6);
        }
    }

    #[test]
    fn eval_kernel_families_agree_where_they_should() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hp3 = Hyperparams::new(1.7, vec![1.0, 0.8, 1.3]);
        let coherent = Kernel::new(
            spec1(KernelFamily::AnalyticCoherent),
            Hyperparams::new(1.7, vec![1.0]),
        )
        .unwrap();
        // x = x' gives s for every family
        let k3 = Kernel::new(
            KernelSpec::new(KernelFamily::AnalyticCoherent, 3),
            hp3.clone(),
        )
        .unwrap();
        let p = vec![0.3, -0.7, 1.1];
        assert_abs_diff_eq!(k3.eval(&p, &p).unwrap(), 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(coherent.eval(&[0.4], &[0.4]).unwrap(), 1.7, epsilon = 1e-12);
        // squeezed with all-zero couplings equals the coherent kernel
        let sq = Kernel::new(
            KernelSpec::new(KernelFamily::squeezed(), 3),
            hp3.clone().with_couplings(vec![0.0, 0.0, 0.0]),
        )
        .unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            assert_abs_diff_eq!(
                sq.eval(&a, &b).unwrap(),
                k3.eval(&a, &b).unwrap(),
                epsilon = 1e-8
            );
        }
        // reference operating point: 1-D coherent, s = 1e2, c = 1.764
        let k = Kernel::new(
            spec1(KernelFamily::AnalyticCoherent),
            Hyperparams::new(1.0e2, vec![1.764]),
        )
        .unwrap();
        let want = 100.0 * (-(4.0) / (2.0 * 1.764f64 * 1.764)).exp();
        assert_abs_diff_eq!(k.eval(&[5.0], &[7.0]).unwrap(), want, epsilon = 1e-10);
    }

    #[test]
    fn eval_kernel_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kernels: Vec<Kernel> = vec![
            Kernel::new(
                KernelSpec::new(KernelFamily::AnalyticCoherent, 2),
                Hyperparams::new(2.0, vec![0.9, 1.4]),
            )
            .unwrap(),
            Kernel::new(
                KernelSpec::new(KernelFamily::FiniteCoherent { levels: 8 }, 2),
                Hyperparams::new(0.7, vec![1.1, 0.6]),
            )
            .unwrap(),
            Kernel::new(
                KernelSpec::new(
                    KernelFamily::QubitTrotter {
                        levels: 4,
                        steps: 3,
                    },
                    2,
                ),
                Hyperparams::new(1.0, vec![1.0, 1.0]),
            )
            .unwrap(),
            Kernel::new(
                KernelSpec::new(KernelFamily::squeezed(), 3),
                Hyperparams::new(1.0, vec![1.0, 1.0, 1.0]).with_couplings(vec![0.1, 0.05, 0.2]),
            )
            .unwrap(),
        ];
        for k in &kernels {
            let dims = k.spec().dims;
            for _ in 0..10 {
                let a: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.2..1.2)).collect();
                let b: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.2..1.2)).collect();
                assert_abs_diff_eq!(
                    k.eval(&a, &b).unwrap(),
                    k.eval(&b, &a).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn eval_kernel_rejects_bad_inputs() {
        let k = Kernel::new(
            KernelSpec::new(KernelFamily::AnalyticCoherent, 2),
            Hyperparams::new(1.0, vec![1.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(
            k.eval(&[1.0], &[1.0, 2.0]),
            Err(KernelError::DimsMismatch { .. })
        ));
        assert!(matches!(
            Kernel::new(
                KernelSpec::new(KernelFamily::squeezed(), 2),
                Hyperparams::new(1.0, vec![1.0, 1.0]),
            ),
            Err(KernelError::SqueezedDims(2))
        ));
        let external = Kernel::new(
            spec1(KernelFamily::ExternalGram {
                gram: GramMatrix::from_values(1, vec![1.0], Provenance::Ingested, 1.0),
            }),
            Hyperparams::new(1.0, vec![]),
        )
        .unwrap();
        assert!(matches!(
            external.eval(&[0.0], &[0.0]),
            Err(KernelError::GramOnly)
        ));
    }

    #[test]
    fn gram_structure() {
        let k = Kernel::new(
            spec1(KernelFamily::AnalyticCoherent),
            Hyperparams::new(3.0, vec![1.0]),
        )
        .unwrap();
        // n = 1
        let g = k.gram(&[vec![0.5]]).unwrap();
        assert_eq!(g.n, 1);
        assert_abs_diff_eq!(g.get(0, 0), 3.0, epsilon = 1e-12);
        // 40 uniformly spaced points: banded, off-diagonal maximal at neighbors
        let points: Vec<Vec<f64>> = (0..40).map(|k| vec![k as f64 * 0.5]).collect();
        let g = k.gram(&points).unwrap();
        assert_eq!(g.provenance, Provenance::Simulated);
        for r in 0..40 {
            assert_abs_diff_eq!(g.get(r, r), 3.0, epsilon = 1e-10);
            for c in 0..40 {
                if c != r && (c as i64 - r as i64).abs() > 1 {
                    assert!(g.get(r, c) < g.get(r, if c > r { r + 1 } else { r - 1 }));
                }
            }
        }
        assert_eq!(g.max_asymmetry(), 0.0);
    }

    #[test]
    fn gram_psd_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Kernel::new(
            KernelSpec::new(KernelFamily::AnalyticCoherent, 2),
            Hyperparams::new(1.0, vec![0.7, 1.3]),
        )
        .unwrap();
        let points: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let g = k.gram(&points).unwrap().to_dmatrix();
        let eig = nalgebra::linalg::SymmetricEigen::new(g);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min > -1e-10, "min eigenvalue {min}");
    }

    #[test]
    fn squeezed_gram_at_zero_coupling_equals_coherent_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let hp = Hyperparams::new(1.4, vec![0.9, 1.2, 0.8]);
        let coh = Kernel::new(
            KernelSpec::new(KernelFamily::AnalyticCoherent, 3),
            hp.clone(),
        )
        .unwrap()
        .gram(&points)
        .unwrap();
        let sq = Kernel::new(
            KernelSpec::new(KernelFamily::squeezed(), 3),
            hp.with_couplings(vec![0.0; 3]),
        )
        .unwrap()
        .gram(&points)
        .unwrap();
        for r in 0..12 {
            for c in 0..12 {
                assert_abs_diff_eq!(coh.get(r, c), sq.get(r, c), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn symmetrize_examples() {
        let g = GramMatrix::from_values(2, vec![1.0, 0.2, 0.4, 1.0], Provenance::Simulated, 1.0);
        let s = symmetrize(&g);
        assert_abs_diff_eq!(s.get(0, 1), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.get(1, 0), 0.3, epsilon = 1e-15);
        let ss = symmetrize(&s);
        assert_eq!(s.values, ss.values);
        assert!(s.max_asymmetry() <= 1e-14);
    }

    #[test]
    fn hardware_emulation_moments() {
        // a 2x2 gram with one tiny far-pair entry
        let g = GramMatrix::from_values(
            2,
            vec![1.0, 1.7e-4, 1.7e-4, 1.0],
            Provenance::Simulated,
            1.0,
        );
        // floor_rate = 0 and exact endpoint probabilities: diagonal recovered
        let clean = emulate_hardware_gram(&g, 8192, 0.0, 1).unwrap();
        assert_eq!(clean.get(0, 0), 1.0);
        assert_eq!(clean.provenance, Provenance::ShotEmulated);
        // default floor: diagonal ~0.98, far pair lifted to ~0.02
        let noisy = emulate_hardware_gram(&g, 8192, DEFAULT_HW_FLOOR_RATE, 1).unwrap();
        assert_abs_diff_eq!(noisy.get(0, 0), 0.98, epsilon = 1e-12);
        assert!(
            (noisy.get(0, 1) - 0.02).abs() < 5e-3,
            "far pair {}",
            noisy.get(0, 1)
        );
        assert!(noisy.max_asymmetry() <= 1e-15);
        // determinism
        let again = emulate_hardware_gram(&g, 8192, DEFAULT_HW_FLOOR_RATE, 1).unwrap();
        assert_eq!(noisy.values, again.values);
        // invalid floor
        assert!(matches!(
            emulate_hardware_gram(&g, 10, 1.5, 0),
            Err(KernelError::InvalidFloorRate(_))
        ));
    }

    #[test]
    fn gram_roundtrip_and_errors() {
        let dir = std::env::temp_dir().join("coherent-gp-kernels-test");
        std::fs::create_dir_all(&dir).unwrap();
        let k = Kernel::new(
            spec1(KernelFamily::FiniteCoherent { levels: 4 }),
            Hyperparams::new(2.5, vec![1.3]),
        )
        .unwrap();
        let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.7]).collect();
        let g = k.gram(&points).unwrap();
        let path = dir.join("g.csv");
        save_gram(&g, &path).unwrap();
        let back = load_gram(&path).unwrap();
        assert_eq!(back.values, g.values);
        assert_eq!(back.provenance, Provenance::Ingested);
        assert_eq!(back.scale, 2.5);

        let small = dir.join("small.csv");
        std::fs::write(&small, "1.0,0.5\n0.5,1.0\n").unwrap();
        let loaded = load_gram(&small).unwrap();
        assert_eq!(loaded.values, vec![1.0, 0.5, 0.5, 1.0]);

        let ragged = dir.join("ragged.csv");
        std::fs::write(&ragged, "1.0,0.5\n0.5\n").unwrap();
        assert!(matches!(
            load_gram(&ragged),
            Err(KernelError::RaggedRows { .. })
        ));

        let rect = dir.join("rect.csv");
        std::fs::write(&rect, "1.0,0.5\n").unwrap();
        assert!(matches!(
            load_gram(&rect),
            Err(KernelError::NotSquare { .. })
        ));

        let bad = dir.join("bad.csv");
        std::fs::write(&bad, "1.0,x\n0.5,1.0\n").unwrap();
        assert!(matches!(load_gram(&bad), Err(KernelError::BadCell { .. })));
    }
}
