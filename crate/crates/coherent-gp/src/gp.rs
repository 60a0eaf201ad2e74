//! Gaussian-process regression with heteroscedastic known noise, an optional
//! homoscedastic model-discrepancy term, and log-marginal-likelihood
//! hyperparameter optimization under box bounds.
//!
//! The noise model is y = f + eps (+ d), f ~ N(0, K), eps_i ~ N(0, sigma_i^2)
//! with the variances known, and d_i ~ N(0, sigma_d^2) when a discrepancy
//! term is carried. The solve matrix is always assembled as
//! Q = K + diag(sigma_i^2 + sigma_d^2), so a zero sigma_d degenerates to the
//! plain model bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernels::{Hyperparams, Kernel, KernelError, KernelFamily, KernelSpec};

/// Base jitter is 1e-10 * mean diagonal of Q; each retry multiplies by 10.
pub const JITTER_BASE_REL: f64 = 1e-10;
/// Number of jitter escalations before giving up.
pub const JITTER_RETRIES: usize = 6;
/// Posterior variances within this of zero are clamped to zero.
pub const VARIANCE_CLAMP: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dataset is empty")]
    EmptyData,
    #[error("dataset lengths inconsistent: {0} inputs, {1} targets, {2} variances")]
    LengthMismatch(usize, usize, usize),
    #[error("negative noise variance sigma2[{index}] = {value}")]
    NegativeVariance { index: usize, value: f64 },
    #[error("inputs have inconsistent dimensionality")]
    RaggedInputs,
    #[error(
        "covariance factorization failed after {JITTER_RETRIES} jitter escalations \
         (min eigenvalue {min_eigenvalue:.3e})"
    )]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("posterior variance {0} below the clamping tolerance")]
    NegativePosteriorVariance(f64),
    #[error("bounds malformed: {0}")]
    BadBounds(String),
    #[error("no optimizer start produced a finite marginal likelihood")]
    OptimizationFailed,
    #[error("r2 undefined: targets are constant")]
    ConstantTruth,
    #[error("prediction/truth lengths differ or are shorter than 2")]
    ScoreLength,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Training data: n points of dimension D, targets, and known per-point noise
/// variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, sigma2: Vec<f64>) -> Result<Self, GpError> {
        if x.is_empty() {
            return Err(GpError::EmptyData);
        }
        if x.len() != y.len() || y.len() != sigma2.len() {
            return Err(GpError::LengthMismatch(x.len(), y.len(), sigma2.len()));
        }
        let dims = x[0].len();
        if x.iter().any(|p| p.len() != dims) {
            return Err(GpError::RaggedInputs);
        }
        for (i, &v) in sigma2.iter().enumerate() {
            if v < 0.0 || !v.is_finite() {
                return Err(GpError::NegativeVariance { index: i, value: v });
            }
        }
        Ok(Self { x, y, sigma2 })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x[0].len()
    }
}

/// Posterior over test points: mean vector and full covariance.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl Posterior {
    /// Diagonal variances, clamped to zero within `VARIANCE_CLAMP`.
    pub fn variance(&self) -> Result<Vec<f64>, GpError> {
        let mut out = Vec::with_capacity(self.mean.len());
        for k in 0..self.mean.len() {
            let v = self.cov[(k, k)];
            if v < -VARIANCE_CLAMP {
                return Err(GpError::NegativePosteriorVariance(v));
            }
            out.push(v.max(0.0));
        }
        Ok(out)
    }

    /// Like [`Posterior::variance`], but floors any negative diagonal at
    /// zero instead of erroring. Ingested or shot-emulated Grams are not
    /// positive semidefinite, so their predictive variances can dip genuinely
    /// negative; flooring is the convention for hardware-derived kernels.
    pub fn variance_clamped(&self) -> Vec<f64> {
        (0..self.mean.len())
            .map(|k| self.cov[(k, k)].max(0.0))
            .collect()
    }

    /// 95% band: mean +/- 1.96 sqrt(var).
    pub fn band95(&self) -> Result<(Vec<f64>, Vec<f64>), GpError> {
        let var = self.variance()?;
        Ok(Self::band_from(&self.mean, &var))
    }

    /// 95% band with negative variances floored at zero.
    pub fn band95_clamped(&self) -> (Vec<f64>, Vec<f64>) {
        Self::band_from(&self.mean, &self.variance_clamped())
    }

    fn band_from(mean: &[f64], var: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lo = mean
            .iter()
            .zip(var)
            .map(|(m, v)| m - 1.96 * v.sqrt())
            .collect();
        let hi = mean
            .iter()
            .zip(var)
            .map(|(m, v)| m + 1.96 * v.sqrt())
            .collect();
        (lo, hi)
    }
}

/// A kernel bound to a training set.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: Kernel,
    data: Dataset,
}

pub(crate) struct Factor {
    pub(crate) chol: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    pub(crate) log_det: f64,
}

impl GpModel {
    pub fn new(kernel: Kernel, data: Dataset) -> Result<Self, GpError> {
        if !matches!(kernel.spec().family, KernelFamily::ExternalGram { .. })
            && data.dims() != kernel.spec().dims
        {
            return Err(GpError::Kernel(KernelError::DimsMismatch {
                want: kernel.spec().dims,
                got: data.dims(),
            }));
        }
        Ok(Self { kernel, data })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    fn solve_matrix(&self) -> Result<DMatrix<f64>, GpError> {
        let gram = self.kernel.gram(&self.data.x)?;
        let n = self.data.len();
        let sd2 = self.kernel.hp().sigma_d * self.kernel.hp().sigma_d;
        let mut q = gram.to_dmatrix();
        for i in 0..n {
            q[(i, i)] += self.data.sigma2[i] + sd2;
        }
        Ok(q)
    }

    fn factorize(&self) -> Result<Factor, GpError> {
        let q = self.solve_matrix()?;
        factorize_spd(q)
    }

    /// Posterior mean and covariance at `xstar`:
    /// mean = K_*X Q^-1 y, cov = K_** - K_*X Q^-1 K_X*.
    pub fn posterior(&self, xstar: &[Vec<f64>]) -> Result<Posterior, GpError> {
        let cross = self.kernel.cross_gram(xstar, &self.data.x)?;
        let prior = self.kernel.gram(xstar)?.to_dmatrix();
        let posterior = self.posterior_from_parts(&cross, &prior)?;
        posterior.variance()?; // simulated kernels must stay within the clamp
        Ok(posterior)
    }

    /// Posterior for an external (Gram-only) kernel: the caller supplies the
    /// prefactor-free cross block K_*X / s and test block K_** / s, typically
    /// sliced out of a jointly emulated Gram. No positivity check is applied:
    /// hardware-style matrices are indefinite, and predictive variances are
    /// meant to be read through [`Posterior::variance_clamped`].
    pub fn posterior_external(
        &self,
        cross_raw: &DMatrix<f64>,
        test_block_raw: &DMatrix<f64>,
    ) -> Result<Posterior, GpError> {
        let s = self.kernel.hp().s;
        let cross = cross_raw * s;
        let prior = test_block_raw * s;
        self.posterior_from_parts(&cross, &prior)
    }

    fn posterior_from_parts(
        &self,
        cross: &DMatrix<f64>,
        prior: &DMatrix<f64>,
    ) -> Result<Posterior, GpError> {
        let factor = self.factorize()?;
        let y = DVector::from_column_slice(&self.data.y);
        let alpha = factor.chol.solve(&y);
        let mean = (cross * &alpha).iter().cloned().collect();
        let qinv_kxstar = factor.chol.solve(&cross.transpose());
        let cov = prior - cross * qinv_kxstar;
        Ok(Posterior { mean, cov })
    }

    /// Gaussian evidence -1/2 y^T Q^-1 y - 1/2 log det Q - n/2 log 2 pi.
    pub fn log_marginal_likelihood(&self) -> Result<f64, GpError> {
        let factor = self.factorize()?;
        let n = self.data.len() as f64;
        let y = DVector::from_column_slice(&self.data.y);
        let alpha = factor.chol.solve(&y);
        let quad = y.dot(&alpha);
        Ok(-0.5 * quad - 0.5 * factor.log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    /// Precompute the weight vector for repeated posterior-mean queries.
    pub fn fit_mean(&self) -> Result<FittedMean, GpError> {
        let factor = self.factorize()?;
        let y = DVector::from_column_slice(&self.data.y);
        let alpha = factor.chol.solve(&y);
        Ok(FittedMean {
            kernel: self.kernel.clone(),
            x: self.data.x.clone(),
            alpha,
        })
    }
}

/// Kernel-weights pair supporting cheap repeated mean evaluation.
#[derive(Debug, Clone)]
pub struct FittedMean {
    kernel: Kernel,
    x: Vec<Vec<f64>>,
    alpha: DVector<f64>,
}

impl FittedMean {
    pub fn mean_at(&self, point: &[f64]) -> Result<f64, GpError> {
        let mut acc = 0.0;
        for (xi, a) in self.x.iter().zip(self.alpha.iter()) {
            acc += self.kernel.eval(point, xi)? * a;
        }
        Ok(acc)
    }

    /// Cross-kernel row block against a fixed point set, as a matrix map for
    /// batch mean evaluation: means = K(points, X) alpha.
    pub fn mean_batch(&self, points: &[Vec<f64>]) -> Result<Vec<f64>, GpError> {
        let cross = self.kernel.cross_gram(points, &self.x)?;
        Ok((cross * &self.alpha).iter().cloned().collect())
    }
}

/// Cholesky with the escalating-jitter ladder; used wherever a kernel matrix
/// must be solved against.
pub(crate) fn factorize_spd(q: DMatrix<f64>) -> Result<Factor, GpError> {
    let n = q.nrows();
    let base = JITTER_BASE_REL * q.trace() / n as f64;
    for attempt in 0..=JITTER_RETRIES {
        let candidate = if attempt == 0 {
            q.clone()
        } else {
            let jitter = base * 10f64.powi(attempt as i32 - 1);
            let mut c = q.clone();
            for i in 0..n {
                c[(i, i)] += jitter;
            }
            c
        };
        if let Some(chol) = nalgebra::linalg::Cholesky::new(candidate) {
            let log_det = 2.0
                * chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .map(|d| d.ln())
                    .sum::<f64>();
            return Ok(Factor { chol, log_det });
        }
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(q);
    let min_eigenvalue = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Err(GpError::NotPositiveDefinite { min_eigenvalue })
}

/// Coefficient of determination 1 - SS_res / SS_tot.
pub fn r2_score(pred: &[f64], truth: &[f64]) -> Result<f64, GpError> {
    if pred.len() != truth.len() || truth.len() < 2 {
        return Err(GpError::ScoreLength);
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(GpError::ConstantTruth);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Box bounds in natural (untransformed) parameter space, aligned with the
/// packing order: s, c_1..c_D, d couplings (squeezed only), sigma_d (when the
/// discrepancy term is optimized).
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GpError> {
        if lo.len() != hi.len() {
            return Err(GpError::BadBounds("length mismatch".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() || l >= h {
                return Err(GpError::BadBounds(format!("[{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    fn len(&self) -> usize {
        self.lo.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    Scale,
    LengthScale(usize),
    Coupling(usize),
    SigmaD,
}

fn param_layout(spec: &KernelSpec, discrepancy: bool) -> Vec<ParamKind> {
    let mut layout = vec![ParamKind::Scale];
    match spec.family {
        KernelFamily::ExternalGram { .. } => {}
        _ => {
            for i in 0..spec.dims {
                layout.push(ParamKind::LengthScale(i));
            }
            if matches!(spec.family, KernelFamily::Squeezed { .. }) {
                for p in 0..spec.coupling_count() {
                    layout.push(ParamKind::Coupling(p));
                }
            }
        }
    }
    if discrepancy {
        layout.push(ParamKind::SigmaD);
    }
    layout
}

/// Positive parameters (s, c_i) are searched in log space; couplings and
/// sigma_d stay linear.
fn transform(kind: ParamKind, natural: f64) -> f64 {
    match kind {
        ParamKind::Scale | ParamKind::LengthScale(_) => natural.ln(),
        _ => natural,
    }
}

fn untransform(kind: ParamKind, z: f64) -> f64 {
    match kind {
        ParamKind::Scale | ParamKind::LengthScale(_) => z.exp(),
        _ => z,
    }
}

fn unpack(spec: &KernelSpec, layout: &[ParamKind], z: &[f64]) -> Hyperparams {
    let mut s = 1.0;
    let mut c = vec![1.0; spec.dims];
    let mut d = vec![0.0; spec.coupling_count()];
    let mut sigma_d = 0.0;
    if matches!(spec.family, KernelFamily::ExternalGram { .. }) {
        c = Vec::new();
    }
    for (kind, &value) in layout.iter().zip(z) {
        match kind {
            ParamKind::Scale => s = untransform(*kind, value),
            ParamKind::LengthScale(i) => c[*i] = untransform(*kind, value),
            ParamKind::Coupling(p) => d[*p] = untransform(*kind, value),
            ParamKind::SigmaD => sigma_d = untransform(*kind, value),
        }
    }
    Hyperparams { s, c, d, sigma_d }
}

fn pack(layout: &[ParamKind], hp: &Hyperparams) -> Vec<f64> {
    layout
        .iter()
        .map(|kind| match kind {
            ParamKind::Scale => transform(*kind, hp.s),
            ParamKind::LengthScale(i) => transform(*kind, hp.c[*i]),
            ParamKind::Coupling(p) => transform(*kind, hp.d[*p]),
            ParamKind::SigmaD => transform(*kind, hp.sigma_d),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    /// Random starts beyond the box-center start.
    pub restarts: usize,
    pub seed: u64,
    /// Optimize sigma_d as an extra linear parameter (the bounds vector must
    /// then carry one more entry).
    pub discrepancy: bool,
    /// Additional warm starts evaluated after the seeded ones; the returned
    /// optimum can never fall below the best of these.
    pub extra_starts: Vec<Hyperparams>,
    /// Simplex evaluation budget per start.
    pub max_evals: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            restarts: 6,
            seed: 0,
            discrepancy: false,
            extra_starts: Vec::new(),
            max_evals: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub hp: Hyperparams,
    pub lml: f64,
    pub evaluations: usize,
}

/// Maximize the log marginal likelihood over box-bounded hyperparameters by
/// seeded multi-start Nelder-Mead simplex. Deterministic for a fixed seed;
/// the best point ever evaluated is returned, with ties broken in favor of
/// the earliest start.
pub fn optimize(
    spec: &KernelSpec,
    data: &Dataset,
    bounds: &Bounds,
    opts: &OptimizeOptions,
) -> Result<OptimizeOutcome, GpError> {
    let layout = param_layout(spec, opts.discrepancy);
    if bounds.len() != layout.len() {
        return Err(GpError::BadBounds(format!(
            "{} bounds for {} parameters",
            bounds.len(),
            layout.len()
        )));
    }
    let lo_z: Vec<f64> = layout
        .iter()
        .zip(&bounds.lo)
        .map(|(k, &v)| transform(*k, v))
        .collect();
    let hi_z: Vec<f64> = layout
        .iter()
        .zip(&bounds.hi)
        .map(|(k, &v)| transform(*k, v))
        .collect();
    let mut evaluations = 0usize;
    let mut best: Option<(Vec<f64>, f64)> = None;

    let clamp = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &v)| v.clamp(lo_z[i], hi_z[i]))
            .collect()
    };

    let mut objective = |z: &[f64], best: &mut Option<(Vec<f64>, f64)>| -> f64 {
        let zc = clamp(z);
        let hp = unpack(spec, &layout, &zc);
        evaluations += 1;
        let lml = Kernel::new(spec.clone(), hp)
            .map_err(GpError::from)
            .and_then(|k| GpModel::new(k, data.clone()))
            .and_then(|m| m.log_marginal_likelihood());
        match lml {
            Ok(v) if v.is_finite() => {
                if best.as_ref().map_or(true, |(_, b)| v > *b) {
                    *best = Some((zc, v));
                }
                -v
            }
            _ => 1e18,
        }
    };

    // Start list: box center, `restarts` uniform draws from one seeded
    // stream (so a longer run extends a shorter one), then warm starts.
    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push(lo_z.iter().zip(&hi_z).map(|(l, h)| 0.5 * (l + h)).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        starts.push(
            lo_z.iter()
                .zip(&hi_z)
                .map(|(&l, &h)| rng.random_range(l..=h))
                .collect(),
        );
    }
    for hp in &opts.extra_starts {
        starts.push(clamp(&pack(&layout, hp)));
    }

    for start in &starts {
        // moderate initial simplex: wide enough to traverse a basin, local
        // enough not to hop between basins (the truncated-coherent families
        // have spurious sub-data-spacing likelihood spikes)
        let steps: Vec<f64> = lo_z
            .iter()
            .zip(&hi_z)
            .map(|(l, h)| 0.08 * (h - l))
            .collect();
        nelder_mead(
            &mut |z| objective(z, &mut best),
            start,
            &steps,
            opts.max_evals,
        );
    }

    let (z, lml) = best.ok_or(GpError::OptimizationFailed)?;
    let mut hp = unpack(spec, &layout, &z);
    // exp(ln(bound)) can overshoot by an ulp; clip in natural space
    for (kind, (lo, hi)) in layout.iter().zip(bounds.lo.iter().zip(&bounds.hi)) {
        let slot = match kind {
            ParamKind::Scale => &mut hp.s,
            ParamKind::LengthScale(i) => &mut hp.c[*i],
            ParamKind::Coupling(p) => &mut hp.d[*p],
            ParamKind::SigmaD => &mut hp.sigma_d,
        };
        *slot = slot.clamp(*lo, *hi);
    }
    Ok(OptimizeOutcome {
        hp,
        lml,
        evaluations,
    })
}

/// Standard Nelder-Mead minimization (reflection 1, expansion 2, contraction
/// 0.5, shrink 0.5). Runs until the value spread collapses or the evaluation
/// budget is spent. The caller's closure sees every probe, so best-ever
/// tracking happens outside.
pub(crate) fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut evals = 0usize;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(x)
    };
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("no NaN objective"));
        let spread = simplex[dim].1 - simplex[0].1;
        if spread.abs() <= 1e-10 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|i| simplex[..dim].iter().map(|(v, _)| v[i]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let reflect: Vec<f64> = (0..dim)
            .map(|i| centroid[i] + (centroid[i] - worst.0[i]))
            .collect();
        let f_reflect = eval(&reflect, &mut evals);
        if f_reflect < simplex[0].1 {
            let expand: Vec<f64> = (0..dim)
                .map(|i| centroid[i] + 2.0 * (centroid[i] - worst.0[i]))
                .collect();
            let f_expand = eval(&expand, &mut evals);
            simplex[dim] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[dim - 1].1 {
            simplex[dim] = (reflect, f_reflect);
        } else {
            let contract: Vec<f64> = if f_reflect < worst.1 {
                (0..dim)
                    .map(|i| centroid[i] + 0.5 * (reflect[i] - centroid[i]))
                    .collect()
            } else {
                (0..dim)
                    .map(|i| centroid[i] + 0.5 * (worst.0[i] - centroid[i]))
                    .collect()
            };
            let f_contract = eval(&contract, &mut evals);
            if f_contract < worst.1.min(f_reflect) {
                simplex[dim] = (contract, f_contract);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = (0..dim)
                        .map(|i| best[i] + 0.5 * (entry.0[i] - best[i]))
                        .collect();
                    let fv = eval(&v, &mut evals);
                    *entry = (v, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("no NaN objective"));
    (simplex[0].0.clone(), simplex[0].1)
}
