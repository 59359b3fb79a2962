//! Problem instances: friction field `M(x)`, force `F(x)` and the standing
//! bounds the limit theory relies on.
//!
//! Global Lipschitz and boundedness properties cannot be certified from
//! finitely many evaluations. [`check_assumptions`] only tests necessary
//! conditions on a probe cloud.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type TensorField = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Central-difference step for synthesized derivatives.
pub const FD_STEP: f64 = 1e-5;

/// Names accepted by [`builtin_model`].
pub const BUILTIN_MODELS: [&str; 4] = ["const_iso", "const_rot2", "scalar_sin", "diag_tanh"];

#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    friction: MatrixField,
    friction_grad: Option<TensorField>,
    force: VectorField,
    lambda: f64,
    force_bound: f64,
    lipschitz_bound: Option<f64>,
    horizon: f64,
    constant_friction: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("lambda", &self.lambda)
            .field("force_bound", &self.force_bound)
            .field("horizon", &self.horizon)
            .field("constant_friction", &self.constant_friction)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// A model with ellipticity bound 1, force bound 1 and horizon 1. Adjust
    /// with the `with_*` methods.
    pub fn new<M, F>(name: impl Into<String>, dim: usize, friction: M, force: F) -> Self
    where
        M: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        assert!(dim > 0, "model dimension must be positive");
        Self {
            name: name.into(),
            dim,
            friction: Arc::new(friction),
            friction_grad: None,
            force: Arc::new(force),
            lambda: 1.0,
            force_bound: 1.0,
            lipschitz_bound: None,
            horizon: 1.0,
            constant_friction: false,
        }
    }

    /// Supplies `x ↦ [∂_{x_1} M(x), …, ∂_{x_d} M(x)]`.
    pub fn with_friction_grad<G>(mut self, grad: G) -> Self
    where
        G: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.friction_grad = Some(Arc::new(grad));
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_force_bound(mut self, bound: f64) -> Self {
        self.force_bound = bound;
        self
    }

    pub fn with_lipschitz_bound(mut self, bound: f64) -> Self {
        self.lipschitz_bound = Some(bound);
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    /// Marks `M` as position independent, which lets steppers cache
    /// per-step operators.
    pub fn with_constant_friction(mut self) -> Self {
        self.constant_friction = true;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn force_bound(&self) -> f64 {
        self.force_bound
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz_bound
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_constant_friction(&self) -> bool {
        self.constant_friction
    }

    pub fn has_analytic_grad(&self) -> bool {
        self.friction_grad.is_some()
    }

    pub fn friction(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.friction)(x)
    }

    pub fn force(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.force)(x)
    }

    /// `∂_{x_j} M(x)` for each `j`, analytic when supplied and central
    /// differences otherwise.
    pub fn friction_grad(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        match &self.friction_grad {
            Some(g) => g(x),
            None => self.friction_grad_fd(x),
        }
    }

    pub fn friction_grad_fd(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        central_difference(x, |p| self.friction(p))
    }

    pub fn inverse_friction(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        invert(self.friction(x))
    }

    /// `∂_{x_j} M⁻¹(x)`. Uses `−M⁻¹ (∂M) M⁻¹` when `∂M` is analytic, else
    /// central differences of `M⁻¹`.
    pub fn inverse_friction_grad(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        if self.constant_friction {
            return Ok(vec![DMatrix::zeros(self.dim, self.dim); self.dim]);
        }
        match &self.friction_grad {
            Some(g) => {
                let inv = self.inverse_friction(x)?;
                Ok(g(x).iter().map(|dm| -(&inv * dm * &inv)).collect())
            }
            None => {
                let mut out = Vec::with_capacity(self.dim);
                for j in 0..self.dim {
                    let mut plus = x.clone();
                    let mut minus = x.clone();
                    plus[j] += FD_STEP;
                    minus[j] -= FD_STEP;
                    let diff = self.inverse_friction(&plus)? - self.inverse_friction(&minus)?;
                    out.push(diff / (2.0 * FD_STEP));
                }
                Ok(out)
            }
        }
    }
}

pub(crate) fn central_difference<T, F>(x: &DVector<f64>, f: F) -> Vec<T>
where
    F: Fn(&DVector<f64>) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    (0..x.len())
        .map(|j| {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[j] += FD_STEP;
            minus[j] -= FD_STEP;
            (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

pub(crate) fn invert(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularSystem { pivot_ratio: 0.0 })
}

fn diag2(a: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
}

/// Looks up one of the registry models listed in [`BUILTIN_MODELS`].
pub fn builtin_model(name: &str) -> Result<ModelSpec> {
    let model = match name {
        "const_iso" => ModelSpec::new(
            "const_iso",
            2,
            |_| DMatrix::identity(2, 2),
            |_| DVector::zeros(2),
        )
        .with_friction_grad(|_| vec![DMatrix::zeros(2, 2); 2])
        .with_constant_friction()
        .with_force_bound(0.0),
        "const_rot2" => ModelSpec::new(
            "const_rot2",
            2,
            |_| DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]),
            |_| DVector::zeros(2),
        )
        .with_friction_grad(|_| vec![DMatrix::zeros(2, 2); 2])
        .with_constant_friction()
        .with_force_bound(0.0),
        "scalar_sin" => ModelSpec::new(
            "scalar_sin",
            1,
            |x| DMatrix::from_element(1, 1, 2.0 + x[0].sin()),
            |x| DVector::from_element(1, x[0].sin()),
        )
        .with_friction_grad(|x| vec![DMatrix::from_element(1, 1, x[0].cos())]),
        "diag_tanh" => ModelSpec::new(
            "diag_tanh",
            2,
            |x| diag2(2.0 + x[0].tanh(), 2.0 + x[1].tanh()),
            // |F| ≤ 1 everywhere.
            |x| DVector::from_column_slice(&[0.5 * x[1].sin(), -0.5 * x[0].cos()]),
        )
        .with_friction_grad(|x| {
            let s0 = 1.0 - x[0].tanh().powi(2);
            let s1 = 1.0 - x[1].tanh().powi(2);
            vec![diag2(s0, 0.0), diag2(0.0, s1)]
        }),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(model.with_lambda(1.0).with_lipschitz_bound(10.0))
}

/// Which form the observable `f(x, y)` takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObservableKind {
    /// `f(x, y) = x_i y_k y_l g(x)`
    Xyy,
    /// `f(x, y) = y_k y_l g(x)`
    Yy,
}

/// A scalar field together with its gradient (finite differences when no
/// analytic gradient is supplied).
#[derive(Clone)]
pub struct ScalarField {
    value: ScalarFn,
    gradient: Option<VectorField>,
}

impl ScalarField {
    pub fn new<G>(value: G) -> Self
    where
        G: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient<D>(mut self, gradient: D) -> Self
    where
        D: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c).with_gradient(|x| DVector::zeros(x.len()))
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => DVector::from_vec(central_difference(x, |p| self.value(p))),
        }
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

/// The observable `f(x,y)` used by the averaging principle. Indices are
/// zero-based.
#[derive(Clone, Debug)]
pub struct ScalarObservableSpec {
    pub kind: ObservableKind,
    pub i: usize,
    pub k: usize,
    pub l: usize,
    pub g: ScalarField,
}

impl ScalarObservableSpec {
    pub fn xyy(i: usize, k: usize, l: usize, g: ScalarField) -> Self {
        Self {
            kind: ObservableKind::Xyy,
            i,
            k,
            l,
            g,
        }
    }

    pub fn yy(k: usize, l: usize, g: ScalarField) -> Self {
        Self {
            kind: ObservableKind::Yy,
            i: 0,
            k,
            l,
            g,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let mut idx = vec![self.k, self.l];
        if self.kind == ObservableKind::Xyy {
            idx.push(self.i);
        }
        if let Some(bad) = idx.iter().find(|&&v| v >= dim) {
            return Err(Error::InvalidConfig(format!(
                "observable index {} out of range for dimension {dim}",
                bad + 1
            )));
        }
        Ok(())
    }

    /// The `x`-dependent prefactor: `x_i g(x)` or `g(x)`.
    pub fn prefactor(&self, x: &DVector<f64>) -> f64 {
        match self.kind {
            ObservableKind::Xyy => x[self.i] * self.g.value(x),
            ObservableKind::Yy => self.g.value(x),
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>, y: &[f64]) -> f64 {
        self.prefactor(x) * y[self.k] * y[self.l]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    /// The bound it was compared against (`NaN` when only reported).
    pub bound: f64,
    /// Probe point(s) where the worst value occurred.
    pub witness: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.get("ellipticity").map_or(f64::NAN, |c| c.value)
    }
}

const MAX_PAIRS: usize = 4096;

fn ensure_finite<'a>(
    field: &'static str,
    x: &DVector<f64>,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteField {
            field,
            location: format!("{:?}", x.as_slice()),
        })
    }
}

fn symmetric_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

struct Sample {
    x: DVector<f64>,
    m: DMatrix<f64>,
    inv: Option<DMatrix<f64>>,
    dinv: Option<Vec<DMatrix<f64>>>,
    f: DVector<f64>,
}

/// Probes the standing assumptions on `probes`.
///
/// Ellipticity, boundedness of `M⁻¹` (by `1/λ`), the force bound and (when
/// `∂M` is analytic) agreement of `∂M` with central differences are hard
/// checks. Lipschitz quotients of `M`, `M⁻¹`, `∂M⁻¹` and `F` are taken over
/// probe pairs, subsampled with `rng_seed` when there are too many, and fail
/// only against a declared Lipschitz bound.
pub fn check_assumptions(
    model: &ModelSpec,
    probes: &[DVector<f64>],
    rng_seed: u64,
) -> Result<AssumptionReport> {
    if probes.is_empty() {
        return Err(Error::InsufficientData("no probe points".into()));
    }
    let d = model.dim();
    let mut samples = Vec::with_capacity(probes.len());
    for x in probes {
        if x.len() != d {
            return Err(Error::GridMismatch(format!(
                "probe of length {} for a {d}-dimensional model",
                x.len()
            )));
        }
        let m = model.friction(x);
        ensure_finite("friction", x, m.iter())?;
        let f = model.force(x);
        ensure_finite("force", x, f.iter())?;
        let inv = model.inverse_friction(x).ok();
        let dinv = model.inverse_friction_grad(x).ok();
        if let Some(dinv) = &dinv {
            ensure_finite(
                "inverse friction gradient",
                x,
                dinv.iter().flat_map(|g| g.iter()),
            )?;
        }
        samples.push(Sample {
            x: x.clone(),
            m,
            inv,
            dinv,
            f,
        });
    }

    let mut checks = Vec::new();

    let (mut min_eig, mut at) = (f64::INFINITY, 0);
    for (idx, s) in samples.iter().enumerate() {
        let e = symmetric_min_eigenvalue(&s.m);
        if e < min_eig {
            min_eig = e;
            at = idx;
        }
    }
    checks.push(AssumptionCheck {
        name: "ellipticity",
        passed: min_eig >= model.lambda(),
        value: min_eig,
        bound: model.lambda(),
        witness: samples[at].x.as_slice().to_vec(),
    });

    let (mut max_inv, mut at) = (0.0_f64, 0);
    for (idx, s) in samples.iter().enumerate() {
        let n = s.inv.as_ref().map_or(f64::INFINITY, |inv| inv.norm());
        if n > max_inv || idx == 0 {
            max_inv = n;
            at = idx;
        }
    }
    // Frobenius norm bounds the operator norm from above; allow √d slack.
    let inv_bound = (d as f64).sqrt() / model.lambda();
    checks.push(AssumptionCheck {
        name: "inverse_bounded",
        passed: max_inv <= inv_bound * (1.0 + 1e-12),
        value: max_inv,
        bound: inv_bound,
        witness: samples[at].x.as_slice().to_vec(),
    });

    let (mut max_f, mut at) = (0.0_f64, 0);
    for (idx, s) in samples.iter().enumerate() {
        let n = s.f.norm();
        if n > max_f {
            max_f = n;
            at = idx;
        }
    }
    checks.push(AssumptionCheck {
        name: "force_bounded",
        passed: max_f <= model.force_bound() * (1.0 + 1e-12),
        value: max_f,
        bound: model.force_bound(),
        witness: samples[at].x.as_slice().to_vec(),
    });

    if model.has_analytic_grad() {
        let (mut worst, mut at) = (0.0_f64, 0);
        for (idx, s) in samples.iter().enumerate() {
            let analytic = model.friction_grad(&s.x);
            let fd = model.friction_grad_fd(&s.x);
            for (a, b) in analytic.iter().zip(&fd) {
                let rel = (a - b).norm() / (1.0 + a.norm());
                if rel > worst {
                    worst = rel;
                    at = idx;
                }
            }
        }
        checks.push(AssumptionCheck {
            name: "gradient_consistent",
            passed: worst <= 1e-5,
            value: worst,
            bound: 1e-5,
            witness: samples[at].x.as_slice().to_vec(),
        });
    }

    let pairs = probe_pairs(samples.len(), rng_seed);
    let lip = model.lipschitz_bound();
    let quotient = |name: &'static str, diff: &dyn Fn(&Sample, &Sample) -> f64| {
        let (mut worst, mut at) = (0.0_f64, (0, 0));
        for &(a, b) in &pairs {
            let dist = (&samples[a].x - &samples[b].x).norm();
            if dist == 0.0 {
                continue;
            }
            let q = diff(&samples[a], &samples[b]) / dist;
            if q > worst || q.is_nan() {
                worst = if q.is_nan() { f64::INFINITY } else { q };
                at = (a, b);
            }
        }
        let mut witness = samples[at.0].x.as_slice().to_vec();
        witness.extend_from_slice(samples[at.1].x.as_slice());
        AssumptionCheck {
            name,
            passed: lip.map_or(worst.is_finite(), |l| worst <= l),
            value: worst,
            bound: lip.unwrap_or(f64::NAN),
            witness,
        }
    };
    checks.push(quotient("lipschitz_friction", &|a, b| (&a.m - &b.m).norm()));
    checks.push(quotient(
        "lipschitz_inverse",
        &|a, b| match (&a.inv, &b.inv) {
            (Some(p), Some(q)) => (p - q).norm(),
            _ => f64::INFINITY,
        },
    ));
    checks.push(quotient(
        "lipschitz_inverse_grad",
        &|a, b| match (&a.dinv, &b.dinv) {
            (Some(p), Some(q)) => p
                .iter()
                .zip(q)
                .map(|(u, v)| (u - v).norm_squared())
                .sum::<f64>()
                .sqrt(),
            _ => f64::INFINITY,
        },
    ));
    checks.push(quotient("lipschitz_force", &|a, b| (&a.f - &b.f).norm()));

    Ok(AssumptionReport { checks })
}

fn probe_pairs(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    if total <= MAX_PAIRS {
        return (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(MAX_PAIRS);
    while out.len() < MAX_PAIRS {
        let a = (rng.next_u64() % n as u64) as usize;
        let b = (rng.next_u64() % n as u64) as usize;
        if a != b {
            out.push((a.min(b), a.max(b)));
        }
    }
    out
}

/// `count` points uniform in `[-half_width, half_width]^d`, deterministic in
/// `seed`.
pub fn probe_cloud(dim: usize, count: usize, half_width: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            DVector::from_iterator(
                dim,
                (0..dim).map(|_| {
                    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                    half_width * (2.0 * u - 1.0)
                }),
            )
        })
        .collect()
}

/// The point `x = π` used as the canonical ellipticity witness for `sin`.
pub fn pi_probe() -> DVector<f64> {
    DVector::from_element(1, PI)
}
