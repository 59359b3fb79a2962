//! Level-2 rough paths on a uniform grid.
//!
//! A simulated path lives on a fine grid; its lift lives on a coarse grid
//! obtained by keeping every `coarsen`-th point. Each coarse step stores the
//! iterated integral `𝕏_{t_k, t_{k+1}} = ∫ X_{t_k, u} ⊗ dX_u` accumulated
//! over the fine sub-increments, with `(a ⊗ b)_{ij} = a_i b_j`. Areas for
//! arbitrary coarse pairs follow from the Chen relation
//! `𝕏_{s,u} = 𝕏_{s,t} + 𝕏_{t,u} + X_{s,t} ⊗ X_{t,u}`.
//!
//! Norms are grid suprema over pairs of coarse nodes. Up to
//! [`EXHAUSTIVE_PAIR_LIMIT`] coarse steps every pair is visited; above it
//! only dyadic gaps `(i, i + 2^k)` plus the anchored pairs `(0, j)` are, which
//! bounds the exhaustive value from below.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::area_correction_integrand;
use crate::models::ModelSpec;
use crate::sde::SamplePath;

/// Coarse-to-fine factor used when none is configured.
pub const DEFAULT_COARSEN: usize = 16;

/// Largest coarse grid (in steps) scanned exhaustively.
pub const EXHAUSTIVE_PAIR_LIMIT: usize = 2048;

const PARALLEL_SCAN_MIN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiftConvention {
    Ito,
    Stratonovich,
    LimitLift,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRoughPath {
    base: SamplePath,
    step_areas: Vec<DMatrix<f64>>,
    convention: LiftConvention,
}

impl GridRoughPath {
    pub fn new(
        base: SamplePath,
        step_areas: Vec<DMatrix<f64>>,
        convention: LiftConvention,
    ) -> Result<Self> {
        let d = base.dim();
        if step_areas.len() != base.steps() {
            return Err(Error::GridMismatch(format!(
                "{} step areas for {} steps",
                step_areas.len(),
                base.steps()
            )));
        }
        if step_areas.iter().any(|a| a.shape() != (d, d)) {
            return Err(Error::GridMismatch("step area of wrong shape".into()));
        }
        if step_areas
            .iter()
            .flat_map(|a| a.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFiniteField {
                field: "step area",
                location: "rough path".into(),
            });
        }
        Ok(Self {
            base,
            step_areas,
            convention,
        })
    }

    /// Level 1 on the coarse grid.
    pub fn base(&self) -> &SamplePath {
        &self.base
    }

    pub fn step_areas(&self) -> &[DMatrix<f64>] {
        &self.step_areas
    }

    pub fn convention(&self) -> LiftConvention {
        self.convention
    }

    pub fn steps(&self) -> usize {
        self.base.steps()
    }

    /// `𝕏_{0, t_j}` for every coarse node `j`.
    pub fn prefix_areas(&self) -> Vec<DMatrix<f64>> {
        let d = self.base.dim();
        let mut out = Vec::with_capacity(self.steps() + 1);
        let mut acc = DMatrix::<f64>::zeros(d, d);
        out.push(acc.clone());
        for k in 0..self.steps() {
            acc += &self.step_areas[k]
                + self.base.increment(0, k) * self.base.increment(k, k + 1).transpose();
            out.push(acc.clone());
        }
        out
    }
}

/// Area for the coarse pair `(i, j)` by folding step areas left to right.
pub fn chen_area(rp: &GridRoughPath, i: usize, j: usize) -> Result<DMatrix<f64>> {
    if i >= j || j > rp.steps() {
        return Err(Error::IndexError(format!(
            "pair ({i}, {j}) on a grid with {} steps",
            rp.steps()
        )));
    }
    let mut acc = rp.step_areas[i].clone();
    for k in i + 1..j {
        acc +=
            &rp.step_areas[k] + rp.base.increment(i, k) * rp.base.increment(k, k + 1).transpose();
    }
    Ok(acc)
}

fn check_refinement(path: &SamplePath, coarsen: usize) -> Result<()> {
    if path.steps() < 1 {
        return Err(Error::GridMismatch("path needs at least two points".into()));
    }
    if coarsen == 0 || path.steps() % coarsen != 0 {
        return Err(Error::GridMismatch(format!(
            "{} fine steps are not a multiple of the coarsening factor {coarsen}",
            path.steps()
        )));
    }
    Ok(())
}

/// Per-coarse-step areas `Σ_i (w·X_{u_i} + (1−w)·X_{u_{i+1}} − X_s) ⊗ δX_i`;
/// `w = 1` is left-point (Itô), `w = ½` midpoint (Stratonovich).
fn riemann_areas(path: &SamplePath, coarsen: usize, left_weight: f64) -> Vec<DMatrix<f64>> {
    let d = path.dim();
    let coarse_steps = path.steps() / coarsen;
    (0..coarse_steps)
        .map(|k| {
            let s = k * coarsen;
            let start = path.point(s);
            let mut area = DMatrix::<f64>::zeros(d, d);
            for i in s..s + coarsen {
                let (a, b) = (path.point(i), path.point(i + 1));
                for r in 0..d {
                    let lead = left_weight * a[r] + (1.0 - left_weight) * b[r] - start[r];
                    if lead == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        area[(r, c)] += lead * (b[c] - a[c]);
                    }
                }
            }
            area
        })
        .collect()
}

/// Itô lift: left-point sums over the `coarsen` fine increments of each
/// coarse step. With `coarsen = 1` all step areas vanish.
pub fn ito_lift(path: &SamplePath, coarsen: usize) -> Result<GridRoughPath> {
    check_refinement(path, coarsen)?;
    GridRoughPath::new(
        path.coarsen(coarsen)?,
        riemann_areas(path, coarsen, 1.0),
        LiftConvention::Ito,
    )
}

/// Stratonovich lift: midpoint-value sums.
pub fn stratonovich_lift(path: &SamplePath, coarsen: usize) -> Result<GridRoughPath> {
    check_refinement(path, coarsen)?;
    GridRoughPath::new(
        path.coarsen(coarsen)?,
        riemann_areas(path, coarsen, 0.5),
        LiftConvention::Stratonovich,
    )
}

/// Stratonovich lift plus the left-point quadrature of
/// `½ (J M⁻ᵀ − M⁻¹ J)` along the fine path.
pub fn limit_lift(path: &SamplePath, model: &ModelSpec, coarsen: usize) -> Result<GridRoughPath> {
    check_refinement(path, coarsen)?;
    if path.dim() != model.dim() {
        return Err(Error::GridMismatch(format!(
            "path of dimension {} for a {}-dimensional model",
            path.dim(),
            model.dim()
        )));
    }
    let mut areas = riemann_areas(path, coarsen, 0.5);
    let dt = path.dt();
    if model.is_constant_friction() {
        let corr = area_correction_integrand(model, &path.point_vec(0))? * (dt * coarsen as f64);
        areas.iter_mut().for_each(|a| *a += &corr);
    } else if model.dim() > 1 {
        for (k, area) in areas.iter_mut().enumerate() {
            for i in k * coarsen..(k + 1) * coarsen {
                *area += area_correction_integrand(model, &path.point_vec(i))? * dt;
            }
        }
    }
    GridRoughPath::new(path.coarsen(coarsen)?, areas, LiftConvention::LimitLift)
}

/// Visits the pairs a norm scan covers and returns the largest `f(i, j)`.
fn scan_pairs<F>(n: usize, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let exhaustive = n <= EXHAUSTIVE_PAIR_LIMIT;
    let row = |i: usize| -> f64 {
        let mut best = 0.0_f64;
        if exhaustive {
            for j in i + 1..=n {
                best = best.max(f(i, j));
            }
        } else {
            let mut gap = 1;
            while i + gap <= n {
                best = best.max(f(i, i + gap));
                gap *= 2;
            }
            if i == 0 {
                for j in 1..=n {
                    best = best.max(f(0, j));
                }
            }
        }
        best
    };
    if n >= PARALLEL_SCAN_MIN {
        (0..n).into_par_iter().map(row).reduce(|| 0.0, f64::max)
    } else {
        (0..n).map(row).fold(0.0, f64::max)
    }
}

fn gap_weight(path: &SamplePath, i: usize, j: usize, exponent: f64) -> f64 {
    ((j - i) as f64 * path.dt()).powf(exponent)
}

/// `‖X‖_α = max |X_{s,t}| / |t − s|^α` over grid pairs.
pub fn holder_norm(path: &SamplePath, alpha: f64) -> f64 {
    let d = path.dim();
    scan_pairs(path.steps(), |i, j| {
        let (a, b) = (path.point(i), path.point(j));
        let sq: f64 = (0..d).map(|c| (b[c] - a[c]).powi(2)).sum();
        sq.sqrt() / gap_weight(path, i, j, alpha)
    })
}

/// `‖X − Y‖_α` on a shared grid.
pub fn holder_distance(a: &SamplePath, b: &SamplePath, alpha: f64) -> Result<f64> {
    Ok(holder_norm(&a.difference(b)?, alpha))
}

/// O(1) area lookups for arbitrary coarse pairs from the prefix areas
/// `𝕏_{0,t_j}`.
pub struct PairAreas<'a> {
    rp: &'a GridRoughPath,
    prefix: Vec<DMatrix<f64>>,
}

impl<'a> PairAreas<'a> {
    pub fn new(rp: &'a GridRoughPath) -> Self {
        Self {
            prefix: rp.prefix_areas(),
            rp,
        }
    }

    /// `𝕏_{i,j}`; requires `i ≤ j ≤ steps`.
    pub fn area(&self, i: usize, j: usize) -> DMatrix<f64> {
        let d = self.rp.base.dim();
        let mut buf = vec![0.0; d * d];
        self.area_into(i, j, &mut buf);
        DMatrix::from_row_slice(d, d, &buf)
    }

    /// `𝕏_{i,j} = 𝕏_{0,j} − 𝕏_{0,i} − X_{0,i} ⊗ X_{i,j}`, row-major into `out`.
    fn area_into(&self, i: usize, j: usize, out: &mut [f64]) {
        let base = &self.rp.base;
        let d = base.dim();
        let (x0, xi, xj) = (base.point(0), base.point(i), base.point(j));
        let (pi, pj) = (&self.prefix[i], &self.prefix[j]);
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = pj[(r, c)] - pi[(r, c)] - (xi[r] - x0[r]) * (xj[c] - xi[c]);
            }
        }
    }
}

/// `‖𝕏‖_{2α} = max |𝕏_{s,t}| / |t − s|^{2α}` (Frobenius norm).
pub fn level2_norm(rp: &GridRoughPath, alpha: f64) -> f64 {
    let d = rp.base.dim();
    let table = PairAreas::new(rp);
    scan_pairs(rp.steps(), |i, j| {
        let mut buf = vec![0.0; d * d];
        table.area_into(i, j, &mut buf);
        buf.iter().map(|v| v * v).sum::<f64>().sqrt() / gap_weight(&rp.base, i, j, 2.0 * alpha)
    })
}

/// `‖𝕏 − 𝕐‖_{2α}` on a shared grid.
pub fn level2_distance(a: &GridRoughPath, b: &GridRoughPath, alpha: f64) -> Result<f64> {
    a.base.check_same_grid(&b.base)?;
    let d = a.base.dim();
    let (ta, tb) = (PairAreas::new(a), PairAreas::new(b));
    Ok(scan_pairs(a.steps(), |i, j| {
        let mut u = vec![0.0; d * d];
        let mut v = vec![0.0; d * d];
        ta.area_into(i, j, &mut u);
        tb.area_into(i, j, &mut v);
        u.iter()
            .zip(&v)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt()
            / gap_weight(&a.base, i, j, 2.0 * alpha)
    }))
}

/// `ρ_α(𝐗, 𝐘) = ‖X − Y‖_α + ‖𝕏 − 𝕐‖_{2α}`.
pub fn rho_alpha(a: &GridRoughPath, b: &GridRoughPath, alpha: f64) -> Result<f64> {
    Ok(holder_distance(&a.base, &b.base, alpha)? + level2_distance(a, b, alpha)?)
}

/// `X_{s,t} ⊗ X_{s,t}`, handy for identities between lifts.
pub fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin_model;
    use crate::sde::sample_noise;
    use approx::assert_relative_eq;

    fn linear(v: &[f64], n: usize, horizon: f64) -> SamplePath {
        let d = v.len();
        let v = v.to_vec();
        SamplePath::from_fn(0.0, horizon / n as f64, n, d, move |t| {
            v.iter().map(|c| c * t).collect()
        })
        .unwrap()
    }

    #[test]
    fn single_increment_steps_have_zero_ito_area() {
        let path = sample_noise(32, 2, 0.01, 1).brownian_path();
        let rp = ito_lift(&path, 1).unwrap();
        assert!(rp.step_areas().iter().all(|a| a.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn ito_area_of_linear_path() {
        // Two sub-steps per unit coarse step: Σ t_i Δt v⊗v = ¼ v⊗v.
        let v = [1.0, -2.0];
        let path = linear(&v, 2, 1.0);
        let rp = ito_lift(&path, 2).unwrap();
        let vv = outer(&DVector::from_column_slice(&v));
        assert_relative_eq!(rp.step_areas()[0], vv * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn stratonovich_area_of_linear_path_is_exact() {
        let v = [0.3, 1.1];
        let vv = outer(&DVector::from_column_slice(&v));
        for c in [1, 3, 8] {
            let path = linear(&v, c, 1.0);
            let rp = stratonovich_lift(&path, c).unwrap();
            assert_relative_eq!(rp.step_areas()[0], &vv * 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn stratonovich_is_chain_rule_in_one_dimension() {
        let path = sample_noise(64, 1, 0.01, 4).brownian_path();
        let rp = stratonovich_lift(&path, 8).unwrap();
        let n = rp.steps();
        for (i, j) in [(0, n), (1, 5), (3, 4)] {
            let x = rp.base().increment(i, j)[0];
            assert_relative_eq!(
                chen_area(&rp, i, j).unwrap()[(0, 0)],
                0.5 * x * x,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn chen_identity_on_consecutive_nodes() {
        let path = sample_noise(160, 2, 0.01, 6).brownian_path();
        let rp = ito_lift(&path, 16).unwrap();
        for s in 0..rp.steps() - 1 {
            let (t, u) = (s + 1, s + 2);
            let lhs = chen_area(&rp, s, u).unwrap();
            let rhs = chen_area(&rp, s, t).unwrap()
                + chen_area(&rp, t, u).unwrap()
                + rp.base().increment(s, t) * rp.base().increment(t, u).transpose();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn pair_areas_match_left_fold() {
        let path = sample_noise(96, 2, 0.01, 3).brownian_path();
        let rp = stratonovich_lift(&path, 8).unwrap();
        let table = PairAreas::new(&rp);
        for i in 0..rp.steps() {
            assert_eq!(table.area(i, i), DMatrix::zeros(2, 2));
            for j in i + 1..=rp.steps() {
                assert_relative_eq!(
                    table.area(i, j),
                    chen_area(&rp, i, j).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn chen_area_index_errors() {
        let path = sample_noise(8, 1, 0.1, 0).brownian_path();
        let rp = ito_lift(&path, 2).unwrap();
        assert!(matches!(chen_area(&rp, 2, 2), Err(Error::IndexError(_))));
        assert!(matches!(chen_area(&rp, 0, 5), Err(Error::IndexError(_))));
        assert_eq!(chen_area(&rp, 1, 2).unwrap(), rp.step_areas()[1]);
    }

    #[test]
    fn zero_path_has_zero_areas() {
        let path = SamplePath::new(0.0, 0.1, 2, vec![0.0; 2 * 9]).unwrap();
        let rp = ito_lift(&path, 2).unwrap();
        for i in 0..4 {
            for j in i + 1..=4 {
                assert_eq!(chen_area(&rp, i, j).unwrap(), DMatrix::zeros(2, 2));
            }
        }
        assert_eq!(level2_norm(&rp, 0.4), 0.0);
        assert_eq!(holder_norm(rp.base(), 0.4), 0.0);
    }

    #[test]
    fn refinement_mismatch() {
        let path = sample_noise(10, 1, 0.1, 0).brownian_path();
        assert!(matches!(ito_lift(&path, 3), Err(Error::GridMismatch(_))));
        let point = SamplePath::new(0.0, 0.1, 1, vec![0.0]).unwrap();
        assert!(matches!(
            stratonovich_lift(&point, 1),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn limit_lift_special_cases() {
        let scalar = builtin_model("scalar_sin").unwrap();
        let p1 = sample_noise(64, 1, 0.01, 2).brownian_path();
        assert_eq!(
            limit_lift(&p1, &scalar, 8).unwrap().step_areas(),
            stratonovich_lift(&p1, 8).unwrap().step_areas()
        );

        let iso = builtin_model("const_iso").unwrap();
        let p2 = sample_noise(64, 2, 0.01, 2).brownian_path();
        assert_eq!(
            limit_lift(&p2, &iso, 8).unwrap().step_areas(),
            stratonovich_lift(&p2, 8).unwrap().step_areas()
        );

        let rot = builtin_model("const_rot2").unwrap();
        let zero = SamplePath::new(0.0, 1.0 / 64.0, 2, vec![0.0; 2 * 65]).unwrap();
        let rp = limit_lift(&zero, &rot, 16).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.25, -0.25, 0.0]);
        assert_relative_eq!(chen_area(&rp, 0, 4).unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn holder_norm_of_linear_path() {
        let v = [3.0, 4.0];
        let path = linear(&v, 64, 1.0);
        assert_relative_eq!(holder_norm(&path, 0.5), 5.0, epsilon = 1e-13);
        let constant = SamplePath::new(0.0, 0.1, 1, vec![2.0; 11]).unwrap();
        assert_eq!(holder_norm(&constant, 0.4), 0.0);
    }

    #[test]
    fn rho_of_identical_paths_is_zero() {
        let path = sample_noise(128, 2, 0.01, 8).brownian_path();
        let rp = ito_lift(&path, 4).unwrap();
        assert_eq!(rho_alpha(&rp, &rp.clone(), 0.4).unwrap(), 0.0);
    }

    #[test]
    fn dyadic_scan_lower_bounds_exhaustive() {
        let path = sample_noise(4096, 1, 1.0 / 4096.0, 12).brownian_path();
        let dyadic = holder_norm(&path, 0.4);
        let coarse = path.coarsen(2).unwrap();
        let brute = {
            let n = path.steps();
            let mut best = 0.0_f64;
            for i in 0..n {
                for j in i + 1..=n {
                    let q = path.increment(i, j).norm() / ((j - i) as f64 * path.dt()).powf(0.4);
                    best = best.max(q);
                }
            }
            best
        };
        assert!(dyadic <= brute + 1e-12);
        assert!(holder_norm(&coarse, 0.4) <= brute + 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn path_strategy() -> impl Strategy<Value = (SamplePath, usize)> {
            (1usize..3, 1usize..5, 1usize..6).prop_flat_map(|(d, coarse, c)| {
                let n = coarse * c;
                proptest::collection::vec(-1.0f64..1.0, d * (n + 1))
                    .prop_map(move |v| (SamplePath::new(0.0, 1.0 / n as f64, d, v).unwrap(), c))
            })
        }

        proptest! {
            #[test]
            fn chen_relation((path, c) in path_strategy()) {
                let rp = ito_lift(&path, c).unwrap();
                let n = rp.steps();
                for s in 0..n {
                    for t in s + 1..n {
                        for u in t + 1..=n {
                            let lhs = chen_area(&rp, s, u).unwrap();
                            let rhs = chen_area(&rp, s, t).unwrap()
                                + chen_area(&rp, t, u).unwrap()
                                + rp.base().increment(s, t) * rp.base().increment(t, u).transpose();
                            prop_assert!((lhs - rhs).norm() < 1e-12);
                        }
                    }
                }
            }

            #[test]
            fn strat_minus_ito_is_half_quadratic_variation((path, c) in path_strategy()) {
                let ito = ito_lift(&path, c).unwrap();
                let strat = stratonovich_lift(&path, c).unwrap();
                for k in 0..ito.steps() {
                    let mut qv = DMatrix::zeros(path.dim(), path.dim());
                    for i in k * c..(k + 1) * c {
                        qv += outer(&path.increment(i, i + 1));
                    }
                    let diff = &strat.step_areas()[k] - &ito.step_areas()[k];
                    prop_assert!((diff - qv * 0.5).norm() < 1e-12);
                }
            }

            #[test]
            fn rho_is_a_pseudometric(
                (a, c) in path_strategy(),
                seed in 0u64..1000,
                alpha in 0.34f64..0.5,
            ) {
                let noise = sample_noise(a.steps(), a.dim(), a.dt(), seed);
                let b = noise.brownian_path();
                let z = SamplePath::new(0.0, a.dt(), a.dim(), vec![0.0; a.values().len()]).unwrap();
                let (ra, rb, rz) = (
                    ito_lift(&a, c).unwrap(),
                    ito_lift(&b, c).unwrap(),
                    ito_lift(&z, c).unwrap(),
                );
                let ab = rho_alpha(&ra, &rb, alpha).unwrap();
                let ba = rho_alpha(&rb, &ra, alpha).unwrap();
                prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
                let az = holder_distance(ra.base(), rz.base(), alpha).unwrap();
                let zb = holder_distance(rz.base(), rb.base(), alpha).unwrap();
                let direct = holder_distance(ra.base(), rb.base(), alpha).unwrap();
                prop_assert!(direct <= az + zb + 1e-12);
            }

            #[test]
            fn holder_norm_grows_with_alpha_on_unit_horizon(
                (path, _c) in path_strategy(),
                a in 0.3f64..0.45,
                da in 0.0f64..0.05,
            ) {
                prop_assert!(holder_norm(&path, a) <= holder_norm(&path, a + da) + 1e-12);
            }
        }
    }
}
