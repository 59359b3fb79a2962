//! Time stepping for the fast–slow system, its small-mass limit and the
//! frozen Ornstein–Uhlenbeck process.
//!
//! All steppers consume a [`NoiseBundle`] row by row: row `n` is the
//! Brownian increment `ΔW_n = W_{t_{n+1}} − W_{t_n}`. Feeding the same bundle
//! to [`simulate_fast_slow`] and [`simulate_limit`] couples the two paths
//! through a common driving noise.
//!
//! Discrete schemes, with `ξ_n = ΔW_n / √dt`:
//!
//! Euler–Maruyama (fast–slow)
//! ```text
//! X_{n+1} = X_n + (dt/ε) Y_n
//! Y_{n+1} = Y_n − (dt/ε²) M(X_n) Y_n + (dt/ε) F(X_n) + ΔW_n / ε
//! ```
//!
//! Exponential Euler (fast–slow), freezing `M = M(X_n)`, `F = F(X_n)`, with
//! `τ = dt/ε²` and an auxiliary normal `η_n` independent of `ΔW`:
//! ```text
//! E       = exp(−M τ)
//! Σ       solves M Σ + Σ Mᵀ = id − E Eᵀ
//! G       = M⁻¹ (id − E) / √τ,  R = chol(Σ − G Gᵀ)
//! Y_{n+1} = E Y_n + ε M⁻¹ (id − E) F + G ξ_n + R η_n
//! X_{n+1} = X_n + M⁻¹ (ΔW_n + F dt − ε (Y_{n+1} − Y_n))
//! ```
//! `G ξ_n` is the part of the fast innovation carried by `ΔW_n`, so the pair
//! `(ΔW_n, Y_{n+1})` has its exact joint law under frozen coefficients. The
//! `X` update is the integrated identity `M dX = dW + F dt − ε dY`. For
//! constant `M` and `F = 0` it gives `X^ε_n = M⁻¹ (W_n − ε Y_n)` on the grid.
//!
//! Limit SDE (Itô Euler–Maruyama):
//! ```text
//! X_{n+1} = X_n + [S(X_n) + M⁻¹F(X_n)] dt + M⁻¹(X_n) ΔW_n
//! ```
//!
//! Frozen process `dY = −M Y dt + dW`, exact in law:
//! `Y_{n+1} = e^{−M dt} Y_n + chol(Σ) ξ_n`, `M Σ + Σ Mᵀ = id − e^{−M dt} e^{−Mᵀ dt}`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    coupled_ou_transition, noise_induced_drift, ou_transition, CoupledOuTransition,
};
use crate::models::{invert, ModelSpec};
use crate::rng::{stream_id, NormalStream};

/// Formats `v` with 17 significant digits, `null`-free (`NaN`/`inf` are
/// spelled out).
pub fn format_sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Stream tag of the auxiliary normals paired with a noise stream.
const AUX_STREAM_TAG: u64 = 0x0061_7578;

/// Brownian increments on a uniform grid, row-major `n × d`, with one row of
/// auxiliary standard normals per step that the fast–slow stepper uses for
/// the part of the fast innovation independent of `ΔW`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBundle {
    dt: f64,
    d: usize,
    n: usize,
    seed: u64,
    stream: u64,
    increments: Vec<f64>,
    auxiliary: Vec<f64>,
}

impl NoiseBundle {
    /// Wraps explicit increments (row-major, `n × d`). The auxiliary normals
    /// are zero until set with [`NoiseBundle::with_auxiliary`].
    pub fn from_increments(dt: f64, d: usize, increments: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || d == 0 || increments.is_empty() || increments.len() % d != 0 {
            return Err(Error::GridMismatch(format!(
                "{} increments do not form rows of width {d} (dt = {dt})",
                increments.len()
            )));
        }
        Ok(Self {
            dt,
            d,
            n: increments.len() / d,
            seed: 0,
            stream: 0,
            auxiliary: vec![0.0; increments.len()],
            increments,
        })
    }

    pub fn with_auxiliary(mut self, auxiliary: Vec<f64>) -> Result<Self> {
        if auxiliary.len() != self.increments.len() {
            return Err(Error::GridMismatch(format!(
                "{} auxiliary normals for {} increments",
                auxiliary.len(),
                self.increments.len()
            )));
        }
        self.auxiliary = auxiliary;
        Ok(self)
    }

    /// A bundle of identically zero increments.
    pub fn zeros(n: usize, d: usize, dt: f64) -> Self {
        Self {
            dt,
            d,
            n,
            seed: 0,
            stream: 0,
            increments: vec![0.0; n * d],
            auxiliary: vec![0.0; n * d],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.increments[i * self.d..(i + 1) * self.d]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn auxiliary_row(&self, i: usize) -> &[f64] {
        &self.auxiliary[i * self.d..(i + 1) * self.d]
    }

    /// The Brownian path `W_{t_i} = Σ_{j<i} ΔW_j`, starting at 0.
    pub fn brownian_path(&self) -> SamplePath {
        let mut values = vec![0.0; (self.n + 1) * self.d];
        for i in 0..self.n {
            for c in 0..self.d {
                values[(i + 1) * self.d + c] = values[i * self.d + c] + self.row(i)[c];
            }
        }
        SamplePath {
            t0: 0.0,
            dt: self.dt,
            d: self.d,
            values,
        }
    }
}

/// Samples `n` increments `ΔW ~ N(0, dt·id)` from the stream derived from
/// `seed` alone.
pub fn sample_noise(n: usize, d: usize, dt: f64, seed: u64) -> NoiseBundle {
    sample_noise_stream(n, d, dt, seed, stream_id(seed, &[]))
}

/// Noise for Monte Carlo path `path` of a batch seeded with `seed`.
pub fn sample_path_noise(n: usize, d: usize, dt: f64, seed: u64, path: u64) -> NoiseBundle {
    sample_noise_stream(n, d, dt, seed, stream_id(seed, &[path]))
}

pub fn sample_noise_stream(n: usize, d: usize, dt: f64, seed: u64, stream: u64) -> NoiseBundle {
    assert!(n >= 1 && d >= 1 && dt > 0.0, "invalid noise shape");
    let mut gen = NormalStream::new(seed, stream);
    let mut increments = vec![0.0; n * d];
    let scale = dt.sqrt();
    for row in increments.chunks_mut(d) {
        gen.fill_row(row);
        row.iter_mut().for_each(|v| *v *= scale);
    }
    let mut aux_gen = NormalStream::new(seed, stream_id(stream, &[AUX_STREAM_TAG]));
    let mut auxiliary = vec![0.0; n * d];
    for row in auxiliary.chunks_mut(d) {
        aux_gen.fill_row(row);
    }
    NoiseBundle {
        dt,
        d,
        n,
        seed,
        stream,
        increments,
        auxiliary,
    }
}

/// A trajectory on the uniform grid `t0 + i·dt`, `i = 0..=n`, stored
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    t0: f64,
    dt: f64,
    d: usize,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(t0: f64, dt: f64, d: usize, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || d == 0 || values.len() < d || values.len() % d != 0 {
            return Err(Error::GridMismatch(format!(
                "{} values do not form rows of width {d} (dt = {dt})",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField {
                field: "sample path",
                location: format!("row {}", pos / d),
            });
        }
        Ok(Self { t0, dt, d, values })
    }

    /// `X_{t_i} = f(t_i)` on `n` steps of size `dt` from `t0`.
    pub fn from_fn<F>(t0: f64, dt: f64, n: usize, d: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity((n + 1) * d);
        for i in 0..=n {
            let v = f(t0 + i as f64 * dt);
            assert_eq!(v.len(), d);
            values.extend(v);
        }
        Self::new(t0, dt, d, values)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of steps `n`; the path has `n + 1` points.
    pub fn steps(&self) -> usize {
        self.values.len() / self.d - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn point_vec(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.point(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `X_{s,t} = X_t − X_s` between grid indices.
    pub fn increment(&self, s: usize, t: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.d,
            self.point(t).iter().zip(self.point(s)).map(|(b, a)| b - a),
        )
    }

    pub fn same_grid(&self, other: &SamplePath) -> bool {
        self.d == other.d
            && self.values.len() == other.values.len()
            && self.dt == other.dt
            && self.t0 == other.t0
    }

    pub(crate) fn check_same_grid(&self, other: &SamplePath) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "paths on grids ({}, {}, {} pts, d={}) and ({}, {}, {} pts, d={})",
                self.t0,
                self.dt,
                self.steps() + 1,
                self.d,
                other.t0,
                other.dt,
                other.steps() + 1,
                other.d
            )))
        }
    }

    /// Every `factor`-th point; `steps()` must be divisible by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<SamplePath> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::GridMismatch(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let values = (0..=self.steps() / factor)
            .flat_map(|i| self.point(i * factor).iter().copied())
            .collect();
        Ok(SamplePath {
            t0: self.t0,
            dt: self.dt * factor as f64,
            d: self.d,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SamplePath {
        SamplePath {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Pointwise `self − other` on a shared grid.
    pub fn difference(&self, other: &SamplePath) -> Result<SamplePath> {
        self.check_same_grid(other)?;
        Ok(SamplePath {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            ..self.clone()
        })
    }

    /// `max_i |X_{t_i}|`.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks(self.d)
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Writes `t,x1..xd[,y1..yd]`, one row per grid point.
pub fn write_path_csv<W: Write>(mut out: W, x: &SamplePath, y: Option<&SamplePath>) -> Result<()> {
    if let Some(y) = y {
        x.check_same_grid(y)?;
    }
    let mut header = vec!["t".to_string()];
    header.extend((1..=x.dim()).map(|c| format!("x{c}")));
    if let Some(y) = y {
        header.extend((1..=y.dim()).map(|c| format!("y{c}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..=x.steps() {
        let mut row = vec![format_sig17(x.time(i))];
        row.extend(x.point(i).iter().map(|&v| format_sig17(v)));
        if let Some(y) = y {
            row.extend(y.point(i).iter().map(|&v| format_sig17(v)));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    #[default]
    ExponentialEuler,
}

impl Scheme {
    fn label(self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "euler_maruyama",
            Scheme::ExponentialEuler => "exponential_euler",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationOptions {
    /// Euler–Maruyama needs `dt ≤ stability_factor · ε² / |M(0)|₂`.
    pub stability_factor: f64,
    /// Any state with norm above this aborts the run.
    pub blowup_threshold: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            stability_factor: 0.1,
            blowup_threshold: 1e8,
        }
    }
}

fn check_noise_dim(model: &ModelSpec, noise: &NoiseBundle) -> Result<()> {
    if noise.dim() != model.dim() {
        return Err(Error::GridMismatch(format!(
            "noise of width {} for a {}-dimensional model",
            noise.dim(),
            model.dim()
        )));
    }
    Ok(())
}

fn guard(step: usize, state: &[&DVector<f64>], threshold: f64) -> Result<()> {
    for v in state {
        let norm = v.norm();
        if !(norm <= threshold) {
            return Err(Error::BlowUp { step, norm });
        }
    }
    Ok(())
}

/// Simulates `(X^ε, Y^ε)` from `X^ε_0 = Y^ε_0 = 0` with default options.
pub fn simulate_fast_slow(
    model: &ModelSpec,
    epsilon: f64,
    noise: &NoiseBundle,
    scheme: Scheme,
) -> Result<(SamplePath, SamplePath)> {
    simulate_fast_slow_with(model, epsilon, noise, scheme, &SimulationOptions::default())
}

pub fn simulate_fast_slow_with(
    model: &ModelSpec,
    epsilon: f64,
    noise: &NoiseBundle,
    scheme: Scheme,
    opts: &SimulationOptions,
) -> Result<(SamplePath, SamplePath)> {
    check_noise_dim(model, noise)?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "epsilon {epsilon} outside (0, 1]"
        )));
    }
    let d = model.dim();
    let dt = noise.dt();
    let n = noise.steps();
    let eps2 = epsilon * epsilon;

    let limit = match scheme {
        Scheme::EulerMaruyama => {
            let m0 = model.friction(&DVector::zeros(d));
            let spread = m0.singular_values().max();
            opts.stability_factor * eps2 / spread
        }
        Scheme::ExponentialEuler => epsilon,
    };
    if dt > limit {
        return Err(Error::StabilityViolation {
            scheme: scheme.label(),
            dt,
            limit,
        });
    }

    let mut xs = Vec::with_capacity((n + 1) * d);
    let mut ys = Vec::with_capacity((n + 1) * d);
    let mut x = DVector::<f64>::zeros(d);
    let mut y = DVector::<f64>::zeros(d);
    xs.extend(x.iter());
    ys.extend(y.iter());

    let sqrt_dt = dt.sqrt();
    let tau = dt / eps2;
    let id = DMatrix::<f64>::identity(d, d);
    // Constant-friction models reuse one set of step operators.
    let cached: Option<(DMatrix<f64>, CoupledOuTransition)> =
        if model.is_constant_friction() && scheme == Scheme::ExponentialEuler {
            let m = model.friction(&x);
            Some((invert(m.clone())?, coupled_ou_transition(&m, tau)?))
        } else {
            None
        };

    for step in 0..n {
        let dw = DVector::from_column_slice(noise.row(step));
        let f = model.force(&x);
        match scheme {
            Scheme::EulerMaruyama => {
                let m = model.friction(&x);
                let x_next = &x + &y * (dt / epsilon);
                let y_next = &y - (&m * &y) * (dt / eps2) + &f * (dt / epsilon) + &dw / epsilon;
                x = x_next;
                y = y_next;
            }
            Scheme::ExponentialEuler => {
                let owned;
                let (inv, tr) = match &cached {
                    Some((inv, tr)) => (inv, tr),
                    None => {
                        let m = model.friction(&x);
                        owned = (invert(m.clone())?, coupled_ou_transition(&m, tau)?);
                        (&owned.0, &owned.1)
                    }
                };
                let xi = &dw / sqrt_dt;
                let eta = DVector::from_column_slice(noise.auxiliary_row(step));
                let y_next = &tr.decay * &y
                    + inv * ((&id - &tr.decay) * &f) * epsilon
                    + &tr.gain * xi
                    + &tr.residual_factor * eta;
                let x_next = &x + inv * (&dw + &f * dt - (&y_next - &y) * epsilon);
                x = x_next;
                y = y_next;
            }
        }
        guard(step + 1, &[&x, &y], opts.blowup_threshold)?;
        xs.extend(x.iter());
        ys.extend(y.iter());
    }
    Ok((
        SamplePath::new(0.0, dt, d, xs)?,
        SamplePath::new(0.0, dt, d, ys)?,
    ))
}

/// Euler–Maruyama for the limit SDE from `X_0 = 0`.
pub fn simulate_limit(model: &ModelSpec, noise: &NoiseBundle) -> Result<SamplePath> {
    simulate_limit_with(model, noise, &SimulationOptions::default())
}

pub fn simulate_limit_with(
    model: &ModelSpec,
    noise: &NoiseBundle,
    opts: &SimulationOptions,
) -> Result<SamplePath> {
    check_noise_dim(model, noise)?;
    let d = model.dim();
    let dt = noise.dt();
    let mut xs = Vec::with_capacity((noise.steps() + 1) * d);
    let mut x = DVector::<f64>::zeros(d);
    xs.extend(x.iter());
    let const_inv = if model.is_constant_friction() {
        Some(model.inverse_friction(&x)?)
    } else {
        None
    };
    for step in 0..noise.steps() {
        let dw = DVector::from_column_slice(noise.row(step));
        let inv = match &const_inv {
            Some(inv) => inv.clone(),
            None => model.inverse_friction(&x)?,
        };
        let drift = noise_induced_drift(model, &x)? + &inv * model.force(&x);
        x += drift * dt + inv * dw;
        guard(step + 1, &[&x], opts.blowup_threshold)?;
        xs.extend(x.iter());
    }
    SamplePath::new(0.0, dt, d, xs)
}

/// Exact stepping of `dY = −M Y dt + dW` from `Y_0 = 0`.
pub fn simulate_frozen(m_at_x: &DMatrix<f64>, noise: &NoiseBundle) -> Result<SamplePath> {
    simulate_frozen_from(m_at_x, &DVector::zeros(m_at_x.nrows()), noise)
}

pub fn simulate_frozen_from(
    m_at_x: &DMatrix<f64>,
    y0: &DVector<f64>,
    noise: &NoiseBundle,
) -> Result<SamplePath> {
    let d = m_at_x.nrows();
    if noise.dim() != d || y0.len() != d {
        return Err(Error::GridMismatch(format!(
            "frozen process of dimension {d} with noise width {} and start of length {}",
            noise.dim(),
            y0.len()
        )));
    }
    let dt = noise.dt();
    let tr = ou_transition(m_at_x, dt)?;
    let sqrt_dt = dt.sqrt();
    let mut ys = Vec::with_capacity((noise.steps() + 1) * d);
    let mut y = y0.clone();
    ys.extend(y.iter());
    for step in 0..noise.steps() {
        let xi = DVector::from_column_slice(noise.row(step)) / sqrt_dt;
        y = &tr.decay * &y + &tr.cov_factor * xi;
        ys.extend(y.iter());
    }
    SamplePath::new(0.0, dt, d, ys)
}

/// Velocity `V^ε = Y^ε/ε` and momentum `P^ε = ε Y^ε`.
pub fn change_of_variables(
    x: &SamplePath,
    y: &SamplePath,
    epsilon: f64,
) -> Result<(SamplePath, SamplePath)> {
    x.check_same_grid(y)?;
    Ok((y.map(|v| v / epsilon), y.map(|v| v * epsilon)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin_model;
    use approx::assert_relative_eq;

    fn scalar_const(m: f64) -> ModelSpec {
        ModelSpec::new(
            "const_scalar",
            1,
            move |_| DMatrix::from_element(1, 1, m),
            |_| DVector::zeros(1),
        )
        .with_constant_friction()
    }

    #[test]
    fn noise_is_deterministic() {
        let a = sample_noise(4, 1, 0.25, 7);
        let b = sample_noise(4, 1, 0.25, 7);
        assert_eq!(a, b);
        assert_ne!(a, sample_noise(4, 1, 0.25, 8));
    }

    #[test]
    fn noise_variance_matches_dt() {
        let dt = 1e-3;
        let n = 100_000;
        let noise = sample_noise(n, 2, dt, 1);
        for c in 0..2 {
            let col: Vec<f64> = (0..n).map(|i| noise.row(i)[c]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var / dt - 1.0).abs() < 0.03, "variance {var}");
            assert!(mean.abs() < 5.0 * (dt / n as f64).sqrt());
        }
    }

    #[test]
    fn single_row_noise() {
        let noise = sample_noise(1, 3, 1.0, 0);
        assert_eq!(noise.row(0).len(), 3);
        assert!(noise.row(0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_noise_keeps_equilibrium() {
        let model = builtin_model("const_rot2").unwrap();
        let noise = NoiseBundle::zeros(50, 2, 1e-3);
        for scheme in [Scheme::EulerMaruyama, Scheme::ExponentialEuler] {
            let (x, y) = simulate_fast_slow(&model, 0.5, &noise, scheme).unwrap();
            assert!(x.values().iter().all(|&v| v == 0.0));
            assert!(y.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn exponential_euler_matches_exact_ou_recursion() {
        let m = 1.5;
        let eps = 0.3;
        let dt = 2e-3;
        let model = scalar_const(m);
        let noise = sample_noise(400, 1, dt, 3);
        let (_, y) = simulate_fast_slow(&model, eps, &noise, Scheme::ExponentialEuler).unwrap();
        let tau = dt / (eps * eps);
        let decay = (-m * tau).exp();
        let sigma2 = (1.0 - (-2.0 * m * tau).exp()) / (2.0 * m);
        let gain = (1.0 - decay) / (m * tau.sqrt());
        let residual = (sigma2 - gain * gain).sqrt();
        let mut oracle = 0.0;
        for i in 0..noise.steps() {
            let xi = noise.row(i)[0] / dt.sqrt();
            let eta = noise.auxiliary_row(i)[0];
            let next = decay * oracle + gain * xi + residual * eta;
            // Compare one step from the simulated state.
            let one_step = decay * y.point(i)[0] + gain * xi + residual * eta;
            assert!((one_step - y.point(i + 1)[0]).abs() < 1e-12);
            oracle = next;
            assert!((oracle - y.point(i + 1)[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_friction_position_identity() {
        // M X^ε = W − ε Y^ε on the grid when F = 0.
        let model = builtin_model("const_rot2").unwrap();
        let noise = sample_noise(300, 2, 1e-3, 9);
        let eps = 0.25;
        let (x, y) = simulate_fast_slow(&model, eps, &noise, Scheme::ExponentialEuler).unwrap();
        let w = noise.brownian_path();
        let m = model.friction(&DVector::zeros(2));
        for i in 0..=x.steps() {
            let lhs = &m * x.point_vec(i);
            let rhs = w.point_vec(i) - y.point_vec(i) * eps;
            assert!((lhs - rhs).norm() < 1e-11);
        }
    }

    #[test]
    fn fast_slow_is_deterministic() {
        let model = builtin_model("scalar_sin").unwrap();
        let noise = sample_noise(200, 1, 1e-3, 5);
        let a = simulate_fast_slow(&model, 0.25, &noise, Scheme::ExponentialEuler).unwrap();
        let b = simulate_fast_slow(&model, 0.25, &noise, Scheme::ExponentialEuler).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn euler_maruyama_guard() {
        let model = builtin_model("scalar_sin").unwrap();
        let noise = sample_noise(10, 1, 1e-2, 5);
        let err = simulate_fast_slow(&model, 0.1, &noise, Scheme::EulerMaruyama).unwrap_err();
        assert!(matches!(err, Error::StabilityViolation { .. }));
        let err = simulate_fast_slow(&model, 0.001, &noise, Scheme::ExponentialEuler).unwrap_err();
        assert!(matches!(err, Error::StabilityViolation { .. }));
    }

    #[test]
    fn blow_up_detected() {
        let opts = SimulationOptions {
            blowup_threshold: 1.0,
            ..Default::default()
        };
        let model = builtin_model("const_iso").unwrap();
        let noise = sample_noise(20_000, 2, 1e-2, 1);
        let err = simulate_limit_with(&model, &noise, &opts).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn limit_of_identity_is_brownian() {
        let model = builtin_model("const_iso").unwrap();
        let noise = sample_noise(100, 2, 1e-2, 2);
        let x = simulate_limit(&model, &noise).unwrap();
        let w = noise.brownian_path();
        for (a, b) in x.values().iter().zip(w.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        let still = simulate_limit(&model, &NoiseBundle::zeros(100, 2, 1e-2)).unwrap();
        assert!(still.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_process_decays_without_noise() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]);
        let y0 = DVector::from_column_slice(&[1.0, -0.5]);
        let dt = 0.01;
        let path = simulate_frozen_from(&m, &y0, &NoiseBundle::zeros(100, 2, dt)).unwrap();
        for i in [0, 1, 37, 100] {
            let expect = (&m * (-(i as f64) * dt)).exp() * &y0;
            assert_relative_eq!(path.point_vec(i), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn change_of_variables_arithmetic() {
        let x = SamplePath::new(0.0, 0.1, 1, vec![0.0, 1.0]).unwrap();
        let y = SamplePath::new(0.0, 0.1, 1, vec![0.0, 2.0]).unwrap();
        let (v, p) = change_of_variables(&x, &y, 0.5).unwrap();
        assert_eq!(v.point(1), &[4.0]);
        assert_eq!(p.point(1), &[1.0]);
        let (_, p1) = change_of_variables(&x, &y, 1.0).unwrap();
        assert_eq!(p1, y);
        let zero = y.map(|_| 0.0);
        let (v0, p0) = change_of_variables(&x, &zero, 0.3).unwrap();
        assert!(v0.values().iter().chain(p0.values()).all(|&v| v == 0.0));
    }

    #[test]
    fn coarsen_and_csv() {
        let p = SamplePath::from_fn(0.0, 0.25, 4, 1, |t| vec![t]).unwrap();
        let c = p.coarsen(2).unwrap();
        assert_eq!(c.values(), &[0.0, 0.5, 1.0]);
        assert!(p.coarsen(3).is_err());
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &c, Some(&c)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,y1"));
        assert_eq!(
            lines.next(),
            Some("0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0")
        );
        assert_eq!(text.lines().count(), 4);
    }
}
