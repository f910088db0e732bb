use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adjugate, jacobian, MappingSpec};
use crate::energy::{CellOperator, GridDomain, GridFunction};
use crate::error::{Error, Result};
use crate::geometry::MetricSpace;
use crate::weights::SingularSet;

const CHUNK: usize = 1024;
/// Rounding allowance, relative to the scale, in the monotonicity test.
pub const MONOTONE_ALLOWANCE: f64 = 1e-12;

/// Residual of one (component, test function) pair with the tube
/// `{dist(x, S) < η}` removed from the integration domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeResidual {
    pub eta: f64,
    pub residual: f64,
    /// Same integral computed through the alternate flux, when given.
    pub alternate: Option<f64>,
    /// `Σ h^n |<F, ∇φ>|` over the same cells.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub component: usize,
    pub test: usize,
    /// Largest `η` first.
    pub levels: Vec<TubeResidual>,
    /// Linear extrapolation `η -> 0` through the two smallest tubes.
    pub extrapolated: f64,
    pub scale: f64,
    /// `|extrapolated| / scale`.
    pub relative: f64,
    /// `|residual|` does not increase as `η` shrinks, up to
    /// [`MONOTONE_ALLOWANCE`] times the scale.
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTable {
    pub h: f64,
    pub rows: Vec<ResidualRow>,
    /// Largest `|primary - alternate| / scale` over all rows and tubes.
    pub max_path_gap: Option<f64>,
}

impl ResidualTable {
    pub fn max_relative(&self) -> f64 {
        self.rows.iter().map(|r| r.relative).fold(0.0, f64::max)
    }

    pub fn all_monotone(&self) -> bool {
        self.rows.iter().all(|r| r.monotone)
    }
}

type FluxFn<'a> = &'a (dyn Fn(&[f64], &mut [f64]) + Sync);

/// Flux fields whose divergence should vanish: `primary(x, out)` writes
/// `components` consecutive vectors of length `n`.
pub struct FluxPaths<'a> {
    pub components: usize,
    pub primary: FluxFn<'a>,
    pub alternate: Option<FluxFn<'a>>,
}

fn distance_to(set: Option<&SingularSet>, x: &[f64]) -> f64 {
    match set {
        None => f64::INFINITY,
        Some(SingularSet::Point { at }) => x.iter().zip(at).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        Some(SingularSet::Hyperplane { axis, offset }) => (x[*axis] - offset).abs(),
    }
}

/// Midpoint quadrature of `∫ <F_i, ∇φ_j>` over the cells whose centers lie
/// outside each exclusion tube, `∇φ` the cell gradient of the multilinear
/// interpolant.
pub fn flux_residuals(
    domain: &Arc<GridDomain>,
    tests: &[GridFunction],
    singular: Option<&SingularSet>,
    tubes: &[f64],
    paths: &FluxPaths<'_>,
) -> Result<ResidualTable> {
    let n = domain.dim();
    if tubes.is_empty() || tubes.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("tube widths must be a non-empty list of non-negative numbers"));
    }
    let mut tubes = tubes.to_vec();
    tubes.sort_by(|a, b| b.total_cmp(a));
    for (j, phi) in tests.iter().enumerate() {
        if phi.domain().shape() != domain.shape() {
            return Err(Error::invalid(format!("test function {j} lives on a different grid")));
        }
        if domain.boundary_nodes().any(|i| phi.get(i) != 0.0) {
            return Err(Error::InvalidTestFunction(format!("test function {j} is non-zero on the boundary")));
        }
    }
    let op = CellOperator::new(&MetricSpace::euclidean(n)?, domain.clone())?;
    let (nc, nt, ne) = (paths.components, tests.len(), tubes.len());
    let slots = nc * nt * ne;
    let vol = domain.cell_volume();
    let touch = 0.5 * domain.h() * (n as f64).sqrt() * (1.0 + 1e-12);
    let cells = op.cell_count();

    let chunks: Vec<Result<Vec<f64>>> = (0..cells.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            // [primary, |primary|, alternate] per slot.
            let mut acc = vec![0.0; 3 * slots];
            let mut x = vec![0.0; n];
            let mut f = vec![0.0; nc * n];
            let mut fa = vec![0.0; nc * n];
            let mut g = vec![0.0; n];
            for c in k * CHUNK..((k + 1) * CHUNK).min(cells) {
                domain.cell_center(domain.cells()[c], &mut x);
                let d = distance_to(singular, &x);
                let included = tubes.iter().filter(|&&eta| d >= eta).count();
                if included == 0 {
                    continue;
                }
                let mut evaluated = false;
                for (j, phi) in tests.iter().enumerate() {
                    op.cell_gradient(c, phi.values(), &mut g);
                    if g.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    if d < touch {
                        return Err(Error::InvalidTestFunction(format!(
                            "test function {j} is supported on a cell touching the singular set"
                        )));
                    }
                    if !evaluated {
                        (paths.primary)(&x, &mut f);
                        if let Some(alt) = paths.alternate {
                            alt(&x, &mut fa);
                        }
                        if f.iter().any(|v| !v.is_finite()) {
                            return Err(Error::SingularPoint { point: x.clone() });
                        }
                        evaluated = true;
                    }
                    for i in 0..nc {
                        let dot: f64 = f[i * n..(i + 1) * n].iter().zip(&g).map(|(a, b)| a * b).sum();
                        let dot_alt: f64 = fa[i * n..(i + 1) * n].iter().zip(&g).map(|(a, b)| a * b).sum();
                        // Tubes are sorted by decreasing width: the cell lies
                        // outside the `included` smallest ones.
                        for e in ne - included..ne {
                            let s = 3 * ((i * nt + j) * ne + e);
                            acc[s] += vol * dot;
                            acc[s + 1] += vol * dot.abs();
                            acc[s + 2] += vol * dot_alt;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut acc = vec![0.0; 3 * slots];
    for part in chunks {
        for (a, b) in acc.iter_mut().zip(part?) {
            *a += b;
        }
    }

    let mut rows = Vec::with_capacity(nc * nt);
    let mut gap: Option<f64> = None;
    for i in 0..nc {
        for j in 0..nt {
            let levels: Vec<TubeResidual> = (0..ne)
                .map(|e| {
                    let s = 3 * ((i * nt + j) * ne + e);
                    TubeResidual {
                        eta: tubes[e],
                        residual: acc[s],
                        alternate: paths.alternate.map(|_| acc[s + 2]),
                        scale: acc[s + 1],
                    }
                })
                .collect();
            let last = &levels[ne - 1];
            let extrapolated = if ne >= 2 && tubes[ne - 2] > tubes[ne - 1] {
                let prev = &levels[ne - 2];
                (prev.eta * last.residual - last.eta * prev.residual) / (prev.eta - last.eta)
            } else {
                last.residual
            };
            let scale = last.scale;
            let noise = MONOTONE_ALLOWANCE * scale;
            let monotone = levels.windows(2).all(|w| w[1].residual.abs() <= w[0].residual.abs() + noise);
            for l in &levels {
                if let Some(a) = l.alternate {
                    let rel = if l.scale > 0.0 { (l.residual - a).abs() / l.scale } else { 0.0 };
                    gap = Some(gap.unwrap_or(0.0).max(rel));
                }
            }
            let relative = if scale > 0.0 { extrapolated.abs() / scale } else { 0.0 };
            rows.push(ResidualRow { component: i, test: j, levels, extrapolated, scale, relative, monotone });
        }
    }
    Ok(ResidualTable { h: domain.h(), rows, max_path_gap: gap })
}

/// Weak residuals of the coordinate functions `f^i` of `map`.
///
/// The primary flux is the column `[adj Df]_i`; the alternate flux is the
/// `p = n` flux `<A ∇f^i, ∇f^i>^{(n-2)/2} A ∇f^i` with `A = G^{-1}`,
/// evaluated on the closed-form (or difference) gradient. The two agree
/// pointwise, so their residuals differ only by rounding.
pub fn coordinate_weak_residual(
    map: &MappingSpec,
    domain: &Arc<GridDomain>,
    tests: &[GridFunction],
    tubes: &[f64],
    h_fd: f64,
) -> Result<ResidualTable> {
    let n = map.dim();
    if domain.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: domain.dim() });
    }
    let adj_flux = |x: &[f64], out: &mut [f64]| match jacobian(map, x, h_fd) {
        Ok(df) => {
            let adj = adjugate(&df);
            for i in 0..n {
                for a in 0..n {
                    out[i * n + a] = adj[(a, i)];
                }
            }
        }
        Err(_) => out.fill(f64::NAN),
    };
    let tensor_flux = |x: &[f64], out: &mut [f64]| {
        let Ok(df) = jacobian(map, x, h_fd) else {
            out.fill(f64::NAN);
            return;
        };
        let det = df.determinant();
        let a: Option<DMatrix<f64>> =
            (df.transpose() * &df).try_inverse().map(|m| m * det.powf(2.0 / n as f64));
        let Some(a) = a else {
            out.fill(f64::NAN);
            return;
        };
        for i in 0..n {
            let grad = df.row(i).transpose();
            let ag = &a * &grad;
            let s = ag.dot(&grad);
            let f = s.powf(0.5 * (n as f64 - 2.0));
            for c in 0..n {
                out[i * n + c] = f * ag[c];
            }
        }
    };
    let paths = FluxPaths { components: n, primary: &adj_flux, alternate: Some(&tensor_flux) };
    flux_residuals(domain, tests, map.singular_set(), tubes, &paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Mask;

    fn bump(d: &Arc<GridDomain>, center: &[f64], r: f64) -> GridFunction {
        let c = center.to_vec();
        GridFunction::from_fn(d.clone(), move |x| {
            let s: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (r * r);
            if s < 1.0 { (1.0 - s).powi(3) } else { 0.0 }
        })
    }

    #[test]
    fn identity_map_residual_is_small() {
        let d = Arc::new(GridDomain::cube(2, -1.0, 1.0, 64, Mask::Box).unwrap());
        let tests = vec![bump(&d, &[0.1, -0.2], 0.6)];
        let t = coordinate_weak_residual(&MappingSpec::identity(2), &d, &tests, &[0.0], 1e-5).unwrap();
        assert!(t.max_relative() < 1e-12, "{t:?}");
    }

    #[test]
    fn boundary_support_is_rejected() {
        let d = Arc::new(GridDomain::cube(2, -1.0, 1.0, 16, Mask::Box).unwrap());
        let tests = vec![GridFunction::from_fn(d.clone(), |_| 1.0)];
        let r = coordinate_weak_residual(&MappingSpec::identity(2), &d, &tests, &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::InvalidTestFunction(_))));
    }

    #[test]
    fn singular_support_needs_a_tube() {
        let d = Arc::new(GridDomain::cube(2, -1.0, 1.0, 32, Mask::Box).unwrap());
        let f = MappingSpec::radial_exponential(2, 0.1).unwrap();
        let tests = vec![bump(&d, &[0.0, 0.0], 0.5)];
        assert!(coordinate_weak_residual(&f, &d, &tests, &[0.0], 1e-5).is_err());
        let t = coordinate_weak_residual(&f, &d, &tests, &[0.25, 0.125], 1e-5).unwrap();
        assert!(t.max_path_gap.unwrap() < 1e-10);
    }
}
