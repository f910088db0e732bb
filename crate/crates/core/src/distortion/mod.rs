//! Mappings of finite distortion: Jacobians, adjugates, inner and outer
//! distortion, the distortion tensor `G = Df^T Df / J^{2/n}` and the weak
//! equation satisfied by the coordinate functions.

mod residual;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::weights::SingularSet;

pub use residual::{
    coordinate_weak_residual, flux_residuals, FluxPaths, MONOTONE_ALLOWANCE, ResidualRow, ResidualTable, TubeResidual,
};

/// Relative slack for the ellipticity and distortion-sandwich checks.
pub const DISTORTION_SLACK: f64 = 1e-9;
/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

type MapEvaluator = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type JacobianEvaluator = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A map `f : Ω ⊂ R^n -> R^n`, optionally with a closed-form Jacobian.
#[derive(Clone)]
pub struct MappingSpec {
    name: String,
    n: usize,
    eval: MapEvaluator,
    jacobian: Option<JacobianEvaluator>,
    params: BTreeMap<String, f64>,
    singular: Option<SingularSet>,
}

impl fmt::Debug for MappingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MappingSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("params", &self.params)
            .field("singular", &self.singular)
            .finish()
    }
}

impl MappingSpec {
    pub fn new(name: impl Into<String>, n: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        MappingSpec {
            name: name.into(),
            n,
            eval: Arc::new(f),
            jacobian: None,
            params: BTreeMap::new(),
            singular: None,
        }
    }

    pub fn with_jacobian(mut self, df: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(df));
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_singular_set(mut self, set: SingularSet) -> Self {
        self.singular = Some(set);
        self
    }

    pub fn identity(n: usize) -> Self {
        MappingSpec::new("identity", n, |x, out| out.copy_from_slice(x))
            .with_jacobian(move |_| DMatrix::identity(n, n))
    }

    /// `x ↦ M x`, with no closed-form Jacobian so that the difference
    /// quotient path is exercised.
    pub fn linear(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("linear map needs a square matrix"));
        }
        let n = m.nrows();
        Ok(MappingSpec::new("linear", n, move |x, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..n).map(|j| m[(i, j)] * x[j]).sum();
            }
        }))
    }

    /// `f(x) = (x / |x|) exp(|x|^ε)`, undefined at the origin.
    pub fn radial_exponential(n: usize, eps: f64) -> Result<Self> {
        if n < 2 || !(eps > 0.0) {
            return Err(Error::invalid(format!("radial map needs n >= 2 and eps > 0, got n={n}, eps={eps}")));
        }
        Ok(MappingSpec::new("radial-exponential", n, move |x, out| {
            let r = norm(x);
            let g = r.powf(eps).exp() / r;
            for (o, v) in out.iter_mut().zip(x) {
                *o = g * v;
            }
        })
        .with_jacobian(move |x| {
            // Df = (g/r)(I - x̂x̂ᵀ) + g'(r) x̂x̂ᵀ with g = exp(r^ε).
            let r = norm(x);
            let g = r.powf(eps).exp();
            let tangential = g / r;
            let radial = eps * r.powf(eps - 1.0) * g;
            DMatrix::from_fn(n, n, |i, j| {
                let pp = x[i] * x[j] / (r * r);
                let id = if i == j { 1.0 } else { 0.0 };
                tangential * (id - pp) + radial * pp
            })
        })
        .with_param("epsilon", eps)
        .with_singular_set(SingularSet::Point { at: vec![0.0; n] }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn singular_set(&self) -> Option<&SingularSet> {
        self.singular.as_ref()
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: x.len() });
        }
        if let Some(SingularSet::Point { at }) = &self.singular {
            let d = x.iter().zip(at).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d < 10.0 * f64::EPSILON {
                return Err(Error::SingularPoint { point: x.to_vec() });
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = vec![0.0; self.n];
        (self.eval)(x, &mut out);
        Ok(out)
    }

    /// Closed-form Jacobian, when supplied.
    pub fn jacobian_analytic(&self, x: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let df = self.jacobian.as_ref()?;
        Some(self.check(x).map(|_| df(x)))
    }

    /// Central differences with step `h`.
    pub fn jacobian_fd(&self, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let n = self.n;
        let mut df = DMatrix::zeros(n, n);
        let mut y = x.to_vec();
        let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            y[j] = x[j] + h;
            (self.eval)(&y, &mut fp);
            y[j] = x[j] - h;
            (self.eval)(&y, &mut fm);
            y[j] = x[j];
            for i in 0..n {
                df[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(df)
    }
}

/// `Df(x)`: closed form when available, central differences otherwise.
pub fn jacobian(map: &MappingSpec, x: &[f64], h_fd: f64) -> Result<DMatrix<f64>> {
    match map.jacobian_analytic(x) {
        Some(df) => df,
        None => map.jacobian_fd(x, h_fd),
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cofactor adjugate, so that `A adj(A) = det(A) I` also for singular `A`.
pub fn adjugate(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(n, n, |i, j| {
        let minor = a.clone().remove_row(j).remove_column(i);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * minor.determinant()
    })
}

/// Largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().max()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionScalars {
    pub det: f64,
    pub norm: f64,
    pub adj_norm: f64,
    /// `|Df|^n / J`, `+inf` when `J = 0`.
    pub k_o: f64,
    /// `|adj Df|^n / J^{n-1}`, `+inf` when `J = 0`.
    pub k_i: f64,
}

/// `(J_f, |Df|, |adj Df|, K_O, K_I)` of a Jacobian matrix.
pub fn distortion_scalars(df: &DMatrix<f64>) -> Result<DistortionScalars> {
    if !df.is_square() {
        return Err(Error::invalid("Jacobian must be square"));
    }
    let n = df.nrows() as i32;
    let det = df.determinant();
    if det < 0.0 {
        return Err(Error::OrientationReversed { det });
    }
    let norm = operator_norm(df);
    let adj_norm = operator_norm(&adjugate(df));
    let (k_o, k_i) = if det > 0.0 {
        (norm.powi(n) / det, adj_norm.powi(n) / det.powi(n - 1))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(DistortionScalars { det, norm, adj_norm, k_o, k_i })
}

/// `G = Df^T Df / J^{2/n}`.
pub fn distortion_tensor(df: &DMatrix<f64>, det: f64) -> Result<DMatrix<f64>> {
    if !(det > 0.0) {
        return Err(Error::invalid(format!("distortion tensor needs J > 0, got {det}")));
    }
    let n = df.nrows() as f64;
    Ok(df.transpose() * df / det.powf(2.0 / n))
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_range(s: &DMatrix<f64>) -> (f64, f64) {
    let ev = s.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EllipticityViolations {
    /// `K_O^{-2/n} |ξ|² <= <G^{-1}ξ, ξ> <= K_I^{2/n} |ξ|²`.
    pub outer: u64,
    /// `K_I^{-2/n'} |ξ|² <= <G^{-1}ξ, ξ> <= K_I^{2/n} |ξ|²`.
    pub inner: u64,
}

impl EllipticityViolations {
    pub fn total(&self) -> u64 {
        self.outer + self.inner
    }
}

/// Test both ellipticity sandwiches on `directions` random unit vectors.
pub fn ellipticity_check(
    g_inv: &DMatrix<f64>,
    k_o: f64,
    k_i: f64,
    n: usize,
    directions: usize,
    seed: u64,
) -> EllipticityViolations {
    let nf = n as f64;
    let upper = k_i.powf(2.0 / nf);
    let lower_outer = k_o.powf(-2.0 / nf);
    let lower_inner = k_i.powf(-2.0 * (nf - 1.0) / nf);
    let mut r = rng::stream(seed, 0);
    let mut out = EllipticityViolations::default();
    for _ in 0..directions {
        let xi = rng::unit_vector(&mut r, n);
        let q: f64 = (0..n).map(|i| xi[i] * (0..n).map(|j| g_inv[(i, j)] * xi[j]).sum::<f64>()).sum();
        let over = q > upper * (1.0 + DISTORTION_SLACK);
        if over || q < lower_outer * (1.0 - DISTORTION_SLACK) {
            out.outer += 1;
        }
        if over || q < lower_inner * (1.0 - DISTORTION_SLACK) {
            out.inner += 1;
        }
    }
    out
}

/// Whether `K_I^{1/(n-1)} <= K_O <= K_I^{n-1}` up to [`DISTORTION_SLACK`].
pub fn k_sandwich_holds(k_o: f64, k_i: f64, n: usize) -> bool {
    let e = (n - 1) as f64;
    k_i.powf(1.0 / e) <= k_o * (1.0 + DISTORTION_SLACK) && k_o <= k_i.powf(e) * (1.0 + DISTORTION_SLACK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub point: Vec<f64>,
    pub norm: f64,
    pub det: f64,
    pub adj_norm: f64,
    pub k_o: f64,
    pub k_i: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub det_g: f64,
    /// Largest entrywise gap between the closed-form and difference Jacobians.
    pub fd_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub schema: String,
    pub map: String,
    pub n: usize,
    pub params: BTreeMap<String, f64>,
    /// `ε >= 1/(n-1)`: outside the range where `K_I ∈ A_{n'} ∩ RH_n`.
    pub epsilon_outside_class_range: bool,
    pub directions: usize,
    pub points: Vec<PointRecord>,
    pub ellipticity: EllipticityViolations,
    pub sandwich_violations: u64,
    pub max_det_g_error: f64,
    pub residuals: Option<ResidualTable>,
}

/// Evaluate the distortion quantities at each point, in parallel.
pub fn distortion_report(
    map: &MappingSpec,
    points: &[Vec<f64>],
    directions: usize,
    h_fd: f64,
    seed: u64,
) -> Result<DistortionReport> {
    let n = map.dim();
    let per_point: Vec<(PointRecord, EllipticityViolations)> = points
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let df = jacobian(map, x, h_fd)?;
            let fd_gap = if map.has_analytic_jacobian() {
                let fd = map.jacobian_fd(x, h_fd)?;
                Some((&df - fd).amax())
            } else {
                None
            };
            let s = distortion_scalars(&df)?;
            let (g_min, g_max, det_g, viol) = if s.det > 0.0 {
                let g = distortion_tensor(&df, s.det)?;
                let (lo, hi) = eigen_range(&g);
                let g_inv = g.clone().try_inverse().ok_or_else(|| Error::invalid("singular distortion tensor"))?;
                let v = ellipticity_check(&g_inv, s.k_o, s.k_i, n, directions, rng::substream(seed, j as u64));
                (lo, hi, g.determinant(), v)
            } else {
                (f64::NAN, f64::NAN, f64::NAN, EllipticityViolations::default())
            };
            let rec = PointRecord {
                point: x.clone(),
                norm: s.norm,
                det: s.det,
                adj_norm: s.adj_norm,
                k_o: s.k_o,
                k_i: s.k_i,
                g_min,
                g_max,
                det_g,
                fd_gap,
            };
            Ok((rec, viol))
        })
        .collect::<Result<_>>()?;
    let mut ellipticity = EllipticityViolations::default();
    let mut sandwich_violations = 0;
    let mut max_det_g_error = 0.0f64;
    for (rec, v) in &per_point {
        ellipticity.outer += v.outer;
        ellipticity.inner += v.inner;
        if rec.det > 0.0 {
            if !k_sandwich_holds(rec.k_o, rec.k_i, n) || rec.k_o < 1.0 - DISTORTION_SLACK || rec.k_i < 1.0 - DISTORTION_SLACK {
                sandwich_violations += 1;
            }
            max_det_g_error = max_det_g_error.max((rec.det_g - 1.0).abs());
        }
    }
    let epsilon_outside_class_range = map.params().get("epsilon").is_some_and(|e| *e >= 1.0 / (n as f64 - 1.0));
    Ok(DistortionReport {
        schema: crate::SCHEMA.to_string(),
        map: map.name().to_string(),
        n,
        params: map.params().clone(),
        epsilon_outside_class_range,
        directions,
        points: per_point.into_iter().map(|(r, _)| r).collect(),
        ellipticity,
        sandwich_violations,
        max_det_g_error,
        residuals: None,
    })
}

/// `count` seeded points uniform in the shell `r_min <= |x| <= r_max`.
pub fn shell_points(n: usize, r_min: f64, r_max: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut r = rng::stream(seed, 0);
    (0..count)
        .map(|_| {
            let u: f64 = r.gen();
            let (a, b) = (r_min.powi(n as i32), r_max.powi(n as i32));
            let rad = (a + u * (b - a)).powf(1.0 / n as f64);
            rng::unit_vector(&mut r, n).into_iter().map(|v| v * rad).collect()
        })
        .collect()
}
