//! Averaging of fast-variable observables against the frozen invariant law
//! `ν^x = N(0, J(x))`.
//!
//! For `f(x,y) = c(x) y_k y_l` with `c(x) = x_i g(x)` or `g(x)`, the averaged
//! observable is `f̄(x) = c(x) J_{kl}(x)` and the Poisson equation
//! `−𝓛^x φ = f − f̄` is solved by `φ = c(x) (yᵀA y − Tr[A J])` where
//! `Mᵀ A + A M = ½ (e_k e_lᵀ + e_l e_kᵀ)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{covariance_j, solve_lyapunov, LyapunovSide};
use crate::models::{ModelSpec, ScalarObservableSpec};
use crate::sde::SamplePath;

/// Step for finite-difference `y`-gradients.
pub const GRAD_FD_STEP: f64 = 1e-5;
/// Step for finite-difference `y`-Hessians built from function values.
pub const HESS_FD_STEP: f64 = 1e-4;
/// Default share of a frozen path discarded before estimating its law.
pub const DEFAULT_BURN_IN: f64 = 0.2;
/// Fewest post-burn-in points accepted by the covariance estimators.
pub const MIN_STATIONARY_POINTS: usize = 1000;

/// `f̄(x) = c(x) J_{kl}(x)`.
pub fn fbar(obs: &ScalarObservableSpec, model: &ModelSpec, x: &DVector<f64>) -> Result<f64> {
    obs.validate(model.dim())?;
    let j = covariance_j(&model.friction(x))?;
    Ok(obs.prefactor(x) * j[(obs.k, obs.l)])
}

/// A scalar function of `(x, y)` that is twice differentiable in `y`.
///
/// The default derivatives are central differences of [`YSmooth::value`].
pub trait YSmooth: Sync {
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64>;

    fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let h = GRAD_FD_STEP;
        let mut out = DVector::zeros(y.len());
        let mut p = y.clone();
        for c in 0..y.len() {
            p[c] = y[c] + h;
            let up = self.value(x, &p)?;
            p[c] = y[c] - h;
            let down = self.value(x, &p)?;
            p[c] = y[c];
            out[c] = (up - down) / (2.0 * h);
        }
        Ok(out)
    }

    fn hess_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h = HESS_FD_STEP;
        let d = y.len();
        let mut out = DMatrix::zeros(d, d);
        let mut p = y.clone();
        let centre = self.value(x, y)?;
        for a in 0..d {
            p[a] = y[a] + h;
            let up = self.value(x, &p)?;
            p[a] = y[a] - h;
            let down = self.value(x, &p)?;
            p[a] = y[a];
            out[(a, a)] = (up - 2.0 * centre + down) / (h * h);
            for b in 0..a {
                let mut corner = |sa: f64, sb: f64| {
                    p[a] = y[a] + sa * h;
                    p[b] = y[b] + sb * h;
                    let v = self.value(x, &p);
                    p[a] = y[a];
                    p[b] = y[b];
                    v
                };
                let mixed = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                    + corner(-1.0, -1.0)?)
                    / (4.0 * h * h);
                out[(a, b)] = mixed;
                out[(b, a)] = mixed;
            }
        }
        Ok(out)
    }
}

/// Adapts a closure `(x, y) ↦ φ(x, y)` with finite-difference derivatives.
pub struct FnOfXY<F>(pub F);

impl<F> YSmooth for FnOfXY<F>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Sync,
{
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok((self.0)(x, y))
    }
}

/// `𝓛^x φ(x,y) = (D_y φ, −M(x) y) + ½ Tr D_yy φ`.
pub fn generator_apply(
    phi: &dyn YSmooth,
    m_at_x: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    let grad = phi.grad_y(x, y)?;
    let hess = phi.hess_y(x, y)?;
    let value = -grad.dot(&(m_at_x * y)) + 0.5 * hess.trace();
    if !value.is_finite() {
        return Err(Error::NonFiniteField {
            field: "generator",
            location: format!("x = {:?}, y = {:?}", x.as_slice(), y.as_slice()),
        });
    }
    Ok(value)
}

/// The explicit solution of `−𝓛^x φ = f − f̄` for a quadratic observable.
#[derive(Clone, Debug)]
pub struct PoissonSolution {
    observable: ScalarObservableSpec,
    model: ModelSpec,
}

impl PoissonSolution {
    pub fn new(observable: ScalarObservableSpec, model: ModelSpec) -> Result<Self> {
        observable.validate(model.dim())?;
        Ok(Self { observable, model })
    }

    pub fn observable(&self) -> &ScalarObservableSpec {
        &self.observable
    }

    /// `A(x)` with `Mᵀ A + A M = ½ (e_k e_lᵀ + e_l e_kᵀ)`.
    pub fn a_field(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.model.dim();
        let (k, l) = (self.observable.k, self.observable.l);
        let mut rhs = DMatrix::zeros(d, d);
        rhs[(k, l)] += 0.5;
        rhs[(l, k)] += 0.5;
        Ok(solve_lyapunov(&self.model.friction(x), &rhs, LyapunovSide::MtaAm)?.matrix)
    }

    pub fn evaluate(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let a = self.a_field(x)?;
        let j = covariance_j(&self.model.friction(x))?;
        let quad = y.dot(&(&a * y)) - (&a * j).trace();
        Ok(self.observable.prefactor(x) * quad)
    }
}

impl YSmooth for PoissonSolution {
    fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.evaluate(x, y)
    }

    fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.a_field(x)? * y * (2.0 * self.observable.prefactor(x)))
    }

    fn hess_y(&self, x: &DVector<f64>, _y: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a_field(x)? * (2.0 * self.observable.prefactor(x)))
    }
}

/// `max |𝓛^x φ + f − f̄|` over the probe pairs `(x, y)`.
pub fn poisson_residual(
    obs: &ScalarObservableSpec,
    model: &ModelSpec,
    probes: &[(DVector<f64>, DVector<f64>)],
) -> Result<f64> {
    let phi = PoissonSolution::new(obs.clone(), model.clone())?;
    let mut worst = 0.0_f64;
    for (x, y) in probes {
        if x.len() != model.dim() || y.len() != model.dim() {
            return Err(Error::GridMismatch("probe of wrong dimension".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField {
                field: "probe",
                location: format!("x = {:?}, y = {:?}", x.as_slice(), y.as_slice()),
            });
        }
        let lphi = generator_apply(&phi, &model.friction(x), x, y)?;
        let r = lphi + obs.evaluate(x, y.as_slice()) - fbar(obs, model, x)?;
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// `|∫₀^T f(X_s, Y_s) − f̄(X_s) ds|` by left-point quadrature.
pub fn averaging_error(
    x: &SamplePath,
    y: &SamplePath,
    obs: &ScalarObservableSpec,
    model: &ModelSpec,
) -> Result<f64> {
    x.check_same_grid(y)?;
    if x.dim() != model.dim() {
        return Err(Error::GridMismatch(format!(
            "path of dimension {} for a {}-dimensional model",
            x.dim(),
            model.dim()
        )));
    }
    obs.validate(model.dim())?;
    let constant_j = if model.is_constant_friction() {
        Some(covariance_j(&model.friction(&x.point_vec(0)))?)
    } else {
        None
    };
    let mut integral = 0.0;
    for i in 0..x.steps() {
        let xi = x.point_vec(i);
        let jkl = match &constant_j {
            Some(j) => j[(obs.k, obs.l)],
            None => covariance_j(&model.friction(&xi))?[(obs.k, obs.l)],
        };
        let yi = y.point(i);
        integral += obs.prefactor(&xi) * (yi[obs.k] * yi[obs.l] - jkl);
    }
    Ok((integral * x.dt()).abs())
}

fn stationary_window(path: &SamplePath, burn_in_fraction: f64) -> Result<std::ops::Range<usize>> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::InvalidConfig(format!(
            "burn-in fraction {burn_in_fraction} outside [0, 1)"
        )));
    }
    let n = path.steps() + 1;
    let start = (burn_in_fraction * n as f64).floor() as usize;
    if n - start < MIN_STATIONARY_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points after burn-in, need {MIN_STATIONARY_POINTS}",
            n - start
        )));
    }
    Ok(start..n)
}

fn second_moments(
    path: &SamplePath,
    range: std::ops::Range<usize>,
) -> (DMatrix<f64>, DVector<f64>) {
    let d = path.dim();
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    let count = range.len() as f64;
    for i in range {
        let p = DVector::from_column_slice(path.point(i));
        outer += &p * p.transpose();
        sum += p;
    }
    (outer / count, sum / count)
}

/// Sample covariance of the states after discarding the burn-in prefix.
pub fn empirical_invariant_covariance(
    path: &SamplePath,
    burn_in_fraction: f64,
) -> Result<DMatrix<f64>> {
    let range = stationary_window(path, burn_in_fraction)?;
    let (m2, mean) = second_moments(path, range);
    Ok(m2 - &mean * mean.transpose())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub covariance: DMatrix<f64>,
    /// Componentwise batch-means standard error.
    pub stderr: DMatrix<f64>,
    pub batches: usize,
}

/// Covariance with batch-means standard errors, which account for the
/// autocorrelation of the path. Each batch must hold at least two points.
pub fn invariant_covariance_estimate(
    path: &SamplePath,
    burn_in_fraction: f64,
    batches: usize,
) -> Result<CovarianceEstimate> {
    let range = stationary_window(path, burn_in_fraction)?;
    if batches < 2 || range.len() / batches < 2 {
        return Err(Error::InsufficientData(format!(
            "{} points cannot form {batches} batches",
            range.len()
        )));
    }
    let (m2, mean) = second_moments(path, range.clone());
    let covariance = m2 - &mean * mean.transpose();
    let d = path.dim();
    let width = range.len() / batches;
    let mut estimates = Vec::with_capacity(batches);
    // Every batch is centred on the window mean; centring on its own mean
    // correlates the two terms and understates the spread.
    for b in 0..batches {
        let lo = range.start + b * width;
        let (m2_b, mean_b) = second_moments(path, lo..lo + width);
        let shift = &mean_b - &mean;
        estimates.push(m2_b - &mean_b * mean_b.transpose() + &shift * shift.transpose());
    }
    let grand = estimates
        .iter()
        .fold(DMatrix::zeros(d, d), |acc, e| acc + e)
        / batches as f64;
    let var = estimates.iter().fold(DMatrix::zeros(d, d), |acc, e| {
        acc + (e - &grand).map(|v| v * v)
    }) / (batches - 1) as f64;
    Ok(CovarianceEstimate {
        covariance,
        stderr: var.map(|v| (v / batches as f64).sqrt()),
        batches,
    })
}
