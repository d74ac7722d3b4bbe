//! Eigenspectrum of hidden-layer activations and the power-law regularizer.
//!
//! For an activation matrix `A` (N samples × f features) the pipeline is
//!
//! 1. center each feature column: `Â = A − mean(A)`,
//! 2. form `Σ = ÂᵀÂ` (no 1/N factor),
//! 3. take its eigenvalues `λ_1 ≥ λ_2 ≥ …`,
//! 4. least-squares fit of `log λ_i` against `log i` over a window; the
//!    exponent `α` is the negated slope,
//! 5. penalize `β·|α − α_target|`.
//!
//! The gradient of step 5 with respect to `A` is assembled in closed form from
//! the fit weights, the eigenvalue derivatives `∂λ_k/∂Â = 2·Â·v_k·v_kᵀ` and the
//! centering Jacobian. When there are fewer samples than features the
//! eigenproblem is solved on the N×N Gram matrix `ÂÂᵀ` instead, which shares
//! the nonzero eigenvalues.

use thiserror::Error;

use crate::linalg::{EigenSolver, LinalgError, Matrix};
use crate::Real;

/// N samples × f features of hidden-layer activations.
pub type ActivationMatrix<T> = Matrix<T>;

/// Default relative eigenvalue floor (`λ_i < floor · λ_1` is excluded).
pub const DEFAULT_LAMBDA_FLOOR_REL: f64 = 1e-10;

/// In-window eigenvalue gaps below this (relative to `λ_1`) mark a fit as near-degenerate.
pub const DEGENERACY_GAP_REL: f64 = 1e-8;

const MIN_FIT_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("centering needs at least 2 samples, got {samples}")]
    DegenerateBatch { samples: usize },
    #[error("spectrum needs at least 2 samples and 2 features, got {samples}x{features}")]
    DegenerateShape { samples: usize, features: usize },
    #[error("fit window [{first}, {last}] is invalid for {count} eigenvalues")]
    InvalidWindow { first: usize, last: usize, count: usize },
    #[error("power-law fit needs at least 3 eigenvalues above the floor, window [{first}, {last}] has {usable}")]
    InsufficientSpectrum { first: usize, last: usize, usable: usize },
    #[error("invalid spectral config: {0}")]
    Config(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Space the stored eigenvectors live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    /// `v_k` of `ÂᵀÂ`, length f.
    Feature,
    /// `u_k` of `ÂÂᵀ`, length N.
    Gram,
}

/// Which eigenproblem [`spectrum`] solves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SpectrumPath {
    /// Gram matrix when N < f, feature covariance otherwise.
    #[default]
    Auto,
    Feature,
    Gram,
}

impl SpectrumPath {
    pub fn name(self) -> &'static str {
        match self {
            SpectrumPath::Auto => "auto",
            SpectrumPath::Feature => "feature",
            SpectrumPath::Gram => "gram",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "auto" => Some(SpectrumPath::Auto),
            "feature" => Some(SpectrumPath::Feature),
            "gram" => Some(SpectrumPath::Gram),
            _ => None,
        }
    }
}

/// Rank-ordered eigenvalues of `ÂᵀÂ` plus the eigenvectors needed for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Eigenspectrum<T> {
    /// Descending, non-negative, `min(N, f)` entries. `lambdas[i - 1]` has rank index `i`.
    pub lambdas: Vec<T>,
    pub basis: Basis,
    /// Column `k` pairs with `lambdas[k]`; empty for spectra built from bare eigenvalues.
    pub vectors: Matrix<T>,
    pub samples: usize,
    pub features: usize,
}

impl<T: Real> Eigenspectrum<T> {
    /// A spectrum with no eigenvectors, for analysing given eigenvalues.
    ///
    /// `lambdas` must be sorted descending and hold `min(samples, features)` values.
    pub fn from_eigenvalues(lambdas: Vec<T>, samples: usize, features: usize) -> Result<Self, SpectralError> {
        if lambdas.len() != samples.min(features) || lambdas.is_empty() {
            return Err(SpectralError::DegenerateShape { samples, features });
        }
        if lambdas.windows(2).any(|w| w[0] < w[1]) || lambdas.iter().any(|l| !l.is_finite()) {
            return Err(SpectralError::Config("eigenvalues must be finite and sorted descending".into()));
        }
        Ok(Self { lambdas, basis: Basis::Feature, vectors: Matrix::zeros(0, 0), samples, features })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Rank indices `I_i = 1..=n`.
    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.lambdas.len()
    }
}

/// Inclusive, 1-based rank window `[first, last]` for the log-log fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FitWindow {
    pub first: usize,
    pub last: usize,
}

impl FitWindow {
    pub fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    pub fn len(&self) -> usize {
        (self.last + 1).saturating_sub(self.first)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the fit window is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WindowSpec {
    /// `[first, i_max]` with `i_max` from the eigenvalue floor, capped at `min(N, f) − 1`.
    Auto {
        first: usize,
    },
    Fixed(FitWindow),
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::Auto { first: 1 }
    }
}

/// Log-log least-squares fit `log λ_i ≈ intercept + alpha_hat · log i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawFit<T> {
    pub alpha_hat: T,
    /// Always `-alpha_hat`.
    pub alpha: T,
    pub intercept: T,
    /// The window actually fitted, after excluding floored eigenvalues.
    pub window: FitWindow,
    /// Some adjacent in-window eigenvalues are closer than `1e-8·λ_1`.
    pub near_degenerate: bool,
}

/// Knobs of the regularizer `β·|α − α_target|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralLossConfig<T> {
    pub alpha_target: T,
    pub beta: T,
    pub window: WindowSpec,
    pub lambda_floor_rel: T,
    pub path: SpectrumPath,
    pub solver: EigenSolver,
}

impl<T: Real> Default for SpectralLossConfig<T> {
    fn default() -> Self {
        Self {
            alpha_target: T::one(),
            beta: T::zero(),
            window: WindowSpec::default(),
            lambda_floor_rel: T::lit(DEFAULT_LAMBDA_FLOOR_REL),
            path: SpectrumPath::Auto,
            solver: EigenSolver::Tridiagonal,
        }
    }
}

impl<T: Real> SpectralLossConfig<T> {
    pub fn new(alpha_target: T, beta: T) -> Self {
        Self { alpha_target, beta, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        if !(self.beta >= T::zero()) || !self.beta.is_finite() {
            return Err(SpectralError::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !self.alpha_target.is_finite() {
            return Err(SpectralError::Config("alpha_target must be finite".into()));
        }
        if !(self.lambda_floor_rel >= T::zero()) || self.lambda_floor_rel >= T::one() {
            return Err(SpectralError::Config(format!(
                "lambda_floor_rel must lie in [0, 1), got {}",
                self.lambda_floor_rel
            )));
        }
        let first = match self.window {
            WindowSpec::Auto { first } => first,
            WindowSpec::Fixed(w) => {
                if w.last < w.first + MIN_FIT_POINTS - 1 {
                    return Err(SpectralError::Config(format!(
                        "fit window [{}, {}] has fewer than 3 points",
                        w.first, w.last
                    )));
                }
                w.first
            }
        };
        if first == 0 {
            return Err(SpectralError::Config("fit window is 1-based".into()));
        }
        Ok(())
    }
}

/// Subtracts each column's mean.
pub fn center<T: Real>(a: &ActivationMatrix<T>) -> Result<ActivationMatrix<T>, SpectralError> {
    if a.rows() < 2 {
        return Err(SpectralError::DegenerateBatch { samples: a.rows() });
    }
    let means = a.column_means();
    let mut out = a.clone();
    out.subtract_row_vector(&means);
    Ok(out)
}

/// `Σ = ÂᵀÂ` for an already-centered `Â`.
pub fn covariance<T: Real>(a_hat: &ActivationMatrix<T>) -> Matrix<T> {
    let s = a_hat.matmul_tn(a_hat).expect("AᵀA is always conformable");
    // gemm round-off can leave Σ a few ulps from symmetric
    s.symmetrized().expect("AᵀA is square")
}

fn gram<T: Real>(a_hat: &ActivationMatrix<T>) -> Matrix<T> {
    let g = a_hat.matmul_nt(a_hat).expect("AAᵀ is always conformable");
    g.symmetrized().expect("AAᵀ is square")
}

/// Eigenspectrum of the centered activations.
pub fn spectrum<T: Real>(
    a: &ActivationMatrix<T>,
    path: SpectrumPath,
    solver: EigenSolver,
) -> Result<Eigenspectrum<T>, SpectralError> {
    let (n, f) = a.shape();
    if n < 2 || f < 2 {
        return Err(SpectralError::DegenerateShape { samples: n, features: f });
    }
    let a_hat = center(a)?;
    spectrum_of_centered(&a_hat, path, solver)
}

fn spectrum_of_centered<T: Real>(
    a_hat: &ActivationMatrix<T>,
    path: SpectrumPath,
    solver: EigenSolver,
) -> Result<Eigenspectrum<T>, SpectralError> {
    let (n, f) = a_hat.shape();
    let basis = match path {
        SpectrumPath::Auto if n < f => Basis::Gram,
        SpectrumPath::Auto | SpectrumPath::Feature => Basis::Feature,
        SpectrumPath::Gram => Basis::Gram,
    };
    let product = match basis {
        Basis::Feature => covariance(a_hat),
        Basis::Gram => gram(a_hat),
    };
    let eig = solver.solve(&product)?;
    let keep = n.min(f);
    let lambdas = eig.eigenvalues[..keep].iter().map(|&l| l.max(T::zero())).collect();
    let vectors = eig.eigenvectors.select_columns(0..keep);
    Ok(Eigenspectrum { lambdas, basis, vectors, samples: n, features: f })
}

/// Default window: `[first, i_max]` where `i_max` is the largest rank with
/// `λ_i ≥ floor · λ_1`, capped at `min(N, f) − 1`.
pub fn auto_window<T: Real>(
    spec: &Eigenspectrum<T>,
    first: usize,
    lambda_floor_rel: T,
) -> Result<FitWindow, SpectralError> {
    let n = spec.len();
    if n == 0 || first == 0 {
        return Err(SpectralError::InvalidWindow { first, last: 0, count: n });
    }
    let usable = usable_count(&spec.lambdas, lambda_floor_rel);
    let cap = spec.samples.min(spec.features).saturating_sub(1);
    let last = usable.min(cap);
    if last < first || last - first + 1 < MIN_FIT_POINTS {
        return Err(SpectralError::InsufficientSpectrum { first, last, usable: (last + 1).saturating_sub(first) });
    }
    Ok(FitWindow { first, last })
}

/// Number of leading eigenvalues that are positive and at or above the floor.
fn usable_count<T: Real>(lambdas: &[T], lambda_floor_rel: T) -> usize {
    let Some(&top) = lambdas.first() else { return 0 };
    if !(top > T::zero()) {
        return 0;
    }
    let floor = lambda_floor_rel * top;
    lambdas.iter().take_while(|&&l| l > T::zero() && l >= floor).count()
}

/// Least-squares slope weights over a window: `α̂ = Σ_k w_k · log λ_k`.
pub fn slope_weights<T: Real>(window: FitWindow) -> Vec<T> {
    let xs: Vec<T> = (window.first..=window.last).map(|i| T::from_usize(i).unwrap().ln()).collect();
    let m = T::from_usize(xs.len()).unwrap();
    let mean = xs.iter().copied().sum::<T>() / m;
    let sxx: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    xs.into_iter().map(|x| (x - mean) / sxx).collect()
}

/// Closed-form log-log least-squares fit over `window`.
///
/// Eigenvalues below `lambda_floor_rel · λ_1` are dropped from the end of the
/// window; at least three must remain.
pub fn fit_power_law<T: Real>(
    spec: &Eigenspectrum<T>,
    window: FitWindow,
    lambda_floor_rel: T,
) -> Result<PowerLawFit<T>, SpectralError> {
    let n = spec.len();
    if window.first == 0 || window.last > n || window.last < window.first {
        return Err(SpectralError::InvalidWindow { first: window.first, last: window.last, count: n });
    }
    let usable = usable_count(&spec.lambdas, lambda_floor_rel);
    let last = window.last.min(usable);
    if last < window.first || last - window.first + 1 < MIN_FIT_POINTS {
        return Err(SpectralError::InsufficientSpectrum {
            first: window.first,
            last: window.last,
            usable: (last + 1).saturating_sub(window.first),
        });
    }
    let window = FitWindow { first: window.first, last };
    let lambdas = &spec.lambdas[window.first - 1..window.last];

    let xs: Vec<T> = (window.first..=window.last).map(|i| T::from_usize(i).unwrap().ln()).collect();
    let ys: Vec<T> = lambdas.iter().map(|l| l.ln()).collect();
    let m = T::from_usize(xs.len()).unwrap();
    let x_mean = xs.iter().copied().sum::<T>() / m;
    let y_mean = ys.iter().copied().sum::<T>() / m;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        sxy += (x - x_mean) * (y - y_mean);
        sxx += (x - x_mean) * (x - x_mean);
    }
    let alpha_hat = sxy / sxx;
    let gap_tol = T::lit(DEGENERACY_GAP_REL) * spec.lambdas[0];
    let near_degenerate = lambdas.windows(2).any(|w| w[0] - w[1] < gap_tol);
    Ok(PowerLawFit { alpha_hat, alpha: -alpha_hat, intercept: y_mean - alpha_hat * x_mean, window, near_degenerate })
}

/// Resolves the configured window and fits.
pub fn fit_with_config<T: Real>(
    spec: &Eigenspectrum<T>,
    cfg: &SpectralLossConfig<T>,
) -> Result<PowerLawFit<T>, SpectralError> {
    let window = match cfg.window {
        WindowSpec::Auto { first } => auto_window(spec, first, cfg.lambda_floor_rel)?,
        WindowSpec::Fixed(w) => w,
    };
    fit_power_law(spec, window, cfg.lambda_floor_rel)
}

/// Measures the power-law exponent of a batch of activations.
pub fn measure_alpha<T: Real>(
    a: &ActivationMatrix<T>,
    cfg: &SpectralLossConfig<T>,
) -> Result<PowerLawFit<T>, SpectralError> {
    let spec = spectrum(a, cfg.path, cfg.solver)?;
    fit_with_config(&spec, cfg)
}

/// `β·|α − α_target|` and the fit it came from.
pub fn spectral_loss<T: Real>(
    a: &ActivationMatrix<T>,
    cfg: &SpectralLossConfig<T>,
) -> Result<(T, PowerLawFit<T>), SpectralError> {
    cfg.validate()?;
    let fit = measure_alpha(a, cfg)?;
    Ok((loss_value(&fit, cfg), fit))
}

fn loss_value<T: Real>(fit: &PowerLawFit<T>, cfg: &SpectralLossConfig<T>) -> T {
    cfg.beta * (fit.alpha - cfg.alpha_target).abs()
}

/// Loss, fit and `∂loss/∂A` from a single eigendecomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEvaluation<T> {
    pub loss: T,
    pub fit: PowerLawFit<T>,
    pub grad: ActivationMatrix<T>,
}

/// Gradient of [`spectral_loss`] with respect to the uncentered activations.
///
/// Zero when `β = 0` or when the fit hits the target exactly (subgradient 0).
pub fn spectral_loss_grad<T: Real>(
    a: &ActivationMatrix<T>,
    cfg: &SpectralLossConfig<T>,
) -> Result<ActivationMatrix<T>, SpectralError> {
    cfg.validate()?;
    if cfg.beta == T::zero() {
        if a.rows() < 2 {
            return Err(SpectralError::DegenerateBatch { samples: a.rows() });
        }
        return Ok(Matrix::zeros(a.rows(), a.cols()));
    }
    Ok(spectral_loss_and_grad(a, cfg)?.grad)
}

pub fn spectral_loss_and_grad<T: Real>(
    a: &ActivationMatrix<T>,
    cfg: &SpectralLossConfig<T>,
) -> Result<SpectralEvaluation<T>, SpectralError> {
    cfg.validate()?;
    let (n, f) = a.shape();
    if n < 2 || f < 2 {
        return Err(SpectralError::DegenerateShape { samples: n, features: f });
    }
    let a_hat = center(a)?;
    let spec = spectrum_of_centered(&a_hat, cfg.path, cfg.solver)?;
    let fit = fit_with_config(&spec, cfg)?;
    let loss = loss_value(&fit, cfg);

    let diff = fit.alpha - cfg.alpha_target;
    if cfg.beta == T::zero() || diff == T::zero() {
        return Ok(SpectralEvaluation { loss, fit, grad: Matrix::zeros(n, f) });
    }
    let sign = if diff > T::zero() { T::one() } else { -T::one() };

    // ∂loss/∂λ_k = β·sgn(α − α_target)·(−w_k / λ_k) inside the window
    let weights = slope_weights::<T>(fit.window);
    let range = fit.window.first - 1..fit.window.last;
    let coeffs: Vec<T> =
        weights.iter().zip(&spec.lambdas[range.clone()]).map(|(&w, &l)| -cfg.beta * sign * w / l).collect();
    let vecs = spec.vectors.select_columns(range);
    let two = T::lit(2.0);

    let mut grad = match spec.basis {
        Basis::Feature => {
            // 2·Â·V·diag(c)·Vᵀ
            let mut proj = a_hat.matmul(&vecs)?;
            for r in 0..proj.rows() {
                for (v, &c) in proj.row_mut(r).iter_mut().zip(&coeffs) {
                    *v *= c * two;
                }
            }
            proj.matmul_nt(&vecs)?
        }
        Basis::Gram => {
            // 2·U·diag(c)·Uᵀ·Â
            let mut m = vecs.matmul_tn(&a_hat)?;
            for (k, &c) in coeffs.iter().enumerate() {
                for v in m.row_mut(k) {
                    *v *= c * two;
                }
            }
            vecs.matmul(&m)?
        }
    };
    // back through the centering: subtract the column means of the incoming gradient
    let means = grad.column_means();
    grad.subtract_row_vector(&means);
    Ok(SpectralEvaluation { loss, fit, grad })
}
