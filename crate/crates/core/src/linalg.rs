//! Dense small-matrix kernel.
//!
//! Lyapunov equations are solved by vectorizing to a `d² × d²` Kronecker
//! system and factoring it with partial-pivoting LU. `d` stays in single
//! digits here, so the `O(d⁶)` cost is irrelevant next to the Monte Carlo
//! loops that call it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::ModelSpec;

/// Pivot ratio `min |u_ii| / max |u_ii|` below which the Kronecker system is
/// reported singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

/// Which Lyapunov equation to solve for the unknown `A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LyapunovSide {
    /// `M A + A Mᵀ = B`
    MjJmt,
    /// `Mᵀ A + A M = B`
    MtaAm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovSolution {
    pub matrix: DMatrix<f64>,
    /// Frobenius norm of the equation residual.
    pub residual_norm: f64,
}

fn is_symmetric(b: &DMatrix<f64>) -> bool {
    b.is_square() && (b - b.transpose()).amax() == 0.0
}

/// Residual of the chosen Lyapunov equation, Frobenius norm.
pub fn lyapunov_residual(
    m: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    side: LyapunovSide,
) -> f64 {
    let lhs = match side {
        LyapunovSide::MjJmt => m * a + a * m.transpose(),
        LyapunovSide::MtaAm => m.transpose() * a + a * m,
    };
    (lhs - b).norm()
}

pub fn solve_lyapunov(
    m: &DMatrix<f64>,
    b: &DMatrix<f64>,
    side: LyapunovSide,
) -> Result<LyapunovSolution> {
    let d = m.nrows();
    if !m.is_square() || b.shape() != (d, d) {
        return Err(Error::GridMismatch(format!(
            "Lyapunov operands of shapes {:?} and {:?}",
            m.shape(),
            b.shape()
        )));
    }
    if m.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteField {
            field: "Lyapunov operand",
            location: format!("{m}"),
        });
    }
    // Left multiplier L such that the equation reads L A + A Lᵀ = B.
    let left = match side {
        LyapunovSide::MjJmt => m.clone(),
        LyapunovSide::MtaAm => m.transpose(),
    };
    // Column-major vec: vec(L A) = (I ⊗ L) vec(A), vec(A Lᵀ) = (L ⊗ I) vec(A).
    let n = d * d;
    let mut kron = DMatrix::<f64>::zeros(n, n);
    for j in 0..d {
        for i in 0..d {
            let row = i + d * j;
            for p in 0..d {
                kron[(row, p + d * j)] += left[(i, p)];
                kron[(row, i + d * p)] += left[(j, p)];
            }
        }
    }
    let lu = kron.lu();
    let diag = lu.u().diagonal().map(f64::abs);
    let (lo, hi) = (diag.min(), diag.max());
    let pivot_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(pivot_ratio >= SINGULAR_PIVOT_RATIO) {
        return Err(Error::SingularSystem { pivot_ratio });
    }
    let rhs = DVector::from_column_slice(b.as_slice());
    let sol = lu
        .solve(&rhs)
        .ok_or(Error::SingularSystem { pivot_ratio })?;
    let mut a = DMatrix::from_column_slice(d, d, sol.as_slice());
    if is_symmetric(b) {
        a = (&a + a.transpose()) * 0.5;
    }
    let residual_norm = lyapunov_residual(m, &a, b, side);
    Ok(LyapunovSolution {
        matrix: a,
        residual_norm,
    })
}

/// Solution `J` of `M J + J Mᵀ = id`, the stationary covariance of the
/// frozen Ornstein–Uhlenbeck process.
pub fn covariance_j(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    solve_lyapunov(m, &DMatrix::identity(d, d), LyapunovSide::MjJmt).map(|s| s.matrix)
}

/// `S_j(x) = Σ_{k,l} (∂_{x_l} M⁻¹)_{jk}(x) J_{kl}(x)`.
pub fn noise_induced_drift(model: &ModelSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    let d = model.dim();
    if model.is_constant_friction() {
        return Ok(DVector::zeros(d));
    }
    let j = covariance_j(&model.friction(x))?;
    let dinv = model.inverse_friction_grad(x)?;
    // Σ_l (∂_l M⁻¹) J e_l: column l of (∂_l M⁻¹) J.
    let mut s = DVector::zeros(d);
    for (l, g) in dinv.iter().enumerate() {
        s += g * j.column(l);
    }
    Ok(s)
}

/// `½ (J M⁻ᵀ − M⁻¹ J)` evaluated at `x`.
pub fn area_correction_integrand(model: &ModelSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = model.friction(x);
    area_correction_from_friction(&m)
}

pub fn area_correction_from_friction(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let j = covariance_j(m)?;
    let inv = crate::models::invert(m.clone())?;
    Ok((&j * inv.transpose() - &inv * &j) * 0.5)
}

/// Matrix exponential (Padé with scaling and squaring).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.exp()
}

/// One step of `dY = −M Y dt + dW` over time `tau`, exactly:
/// `Y ← decay · Y + cov_factor · ξ` with `ξ ~ N(0, id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OuTransition {
    /// `e^{−M τ}`
    pub decay: DMatrix<f64>,
    /// `∫₀^τ e^{−M s} e^{−Mᵀ s} ds`
    pub cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov`.
    pub cov_factor: DMatrix<f64>,
}

/// Builds the exact OU transition. The step covariance `Σ` solves
/// `M Σ + Σ Mᵀ = id − e^{−Mτ} e^{−Mᵀτ}`.
pub fn ou_transition(m: &DMatrix<f64>, tau: f64) -> Result<OuTransition> {
    let d = m.nrows();
    let decay = expm(&(m * -tau));
    let rhs = DMatrix::identity(d, d) - &decay * decay.transpose();
    let cov = solve_lyapunov(m, &rhs, LyapunovSide::MjJmt)?.matrix;
    let cov_factor = cholesky_factor(&cov);
    Ok(OuTransition {
        decay,
        cov,
        cov_factor,
    })
}

/// The exact OU step split against its own driving increment. With
/// `ξ = ΔB/√τ` for the increment `ΔB` of the driving Brownian motion over the
/// step and an independent `η ~ N(0, id)`,
/// `Y ← decay · Y + gain · ξ + residual_factor · η`
/// reproduces the joint law of `(ΔB, Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledOuTransition {
    /// `e^{−M τ}`
    pub decay: DMatrix<f64>,
    /// `M⁻¹ (id − e^{−M τ}) / √τ`, the covariance of the innovation with `ξ`.
    pub gain: DMatrix<f64>,
    /// Factor of the conditional covariance `Σ − gain gainᵀ`.
    pub residual_factor: DMatrix<f64>,
}

pub fn coupled_ou_transition(m: &DMatrix<f64>, tau: f64) -> Result<CoupledOuTransition> {
    let d = m.nrows();
    let tr = ou_transition(m, tau)?;
    let inv = crate::models::invert(m.clone())?;
    let gain = inv * (DMatrix::identity(d, d) - &tr.decay) / tau.sqrt();
    let schur = &tr.cov - &gain * gain.transpose();
    let schur = (&schur + schur.transpose()) * 0.5;
    Ok(CoupledOuTransition {
        residual_factor: cholesky_factor(&schur),
        decay: tr.decay,
        gain,
    })
}

/// Lower factor `L` with `L Lᵀ = a` for symmetric positive semidefinite `a`.
/// Falls back to the symmetric square root when Cholesky fails.
pub fn cholesky_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.l();
    }
    let eig = a.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose()
}
