use std::sync::Arc;

use rayon::prelude::*;

use super::field::MatrixField;
use super::grid::{GridDomain, GridFunction};
use crate::error::{Error, Result};
use crate::geometry::{MetricSpace, SpaceKind};

const CHUNK: usize = 1024;

/// Cell-centered horizontal gradient operator.
///
/// The Euclidean gradient at a cell center is the average of the centered
/// differences on the cell edges (the gradient of the bilinear interpolant
/// at the center). In the Heisenberg backend the frame
/// `X1 = ∂x - (y/2) ∂t`, `X2 = ∂y + (x/2) ∂t` is applied at the center.
#[derive(Clone, Debug)]
pub struct CellOperator {
    domain: Arc<GridDomain>,
    kind: SpaceKind,
    n: usize,
    m: usize,
    /// `m x 2^n` per cell, row-major.
    stencils: Vec<f64>,
}

impl CellOperator {
    pub fn new(space: &MetricSpace, domain: Arc<GridDomain>) -> Result<Self> {
        let n = domain.dim();
        if n != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), got: n });
        }
        let m = space.horizontal_dim();
        let corners = 1usize << n;
        let scale = 1.0 / ((1usize << (n - 1)) as f64 * domain.h());
        // Euclidean stencil: d/dx_a = sum_k sign_a(k) u_k / (2^{n-1} h).
        let base: Vec<f64> = (0..n)
            .flat_map(|a| (0..corners).map(move |k| if k >> a & 1 == 1 { scale } else { -scale }))
            .collect();
        let cells = domain.cells();
        let stencils = match space.kind() {
            SpaceKind::Euclidean => {
                let mut s = Vec::with_capacity(cells.len() * m * corners);
                for _ in cells {
                    s.extend_from_slice(&base);
                }
                s
            }
            SpaceKind::Heisenberg1 => {
                let mut s = Vec::with_capacity(cells.len() * 2 * corners);
                let mut c = [0.0; 3];
                for &cell in cells {
                    domain.cell_center(cell, &mut c);
                    let (x, y) = (c[0], c[1]);
                    for k in 0..corners {
                        s.push(base[k] - 0.5 * y * base[2 * corners + k]);
                    }
                    for k in 0..corners {
                        s.push(base[corners + k] + 0.5 * x * base[2 * corners + k]);
                    }
                }
                s
            }
        };
        Ok(CellOperator { domain, kind: space.kind(), n, m, stencils })
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn space_kind(&self) -> SpaceKind {
        self.kind
    }

    /// Gradient components per cell.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn corners(&self) -> usize {
        1 << self.n
    }

    pub fn cell_count(&self) -> usize {
        self.domain.cells().len()
    }

    #[inline]
    pub(crate) fn stencil(&self, c: usize) -> &[f64] {
        let len = self.m * self.corners();
        &self.stencils[c * len..(c + 1) * len]
    }

    /// Gradient of `u` on cell number `c` (index into `domain.cells()`).
    #[inline]
    pub fn cell_gradient(&self, c: usize, u: &[f64], out: &mut [f64]) {
        let corners = self.corners();
        let origin = self.domain.cells()[c];
        let offs = self.domain.corner_offsets();
        let st = self.stencil(c);
        for (j, o) in out.iter_mut().enumerate() {
            let row = &st[j * corners..(j + 1) * corners];
            *o = row.iter().zip(offs).map(|(s, off)| s * u[origin + off]).sum();
        }
    }

    /// Horizontal gradient on every active cell, `m` values per cell.
    pub fn apply(&self, u: &GridFunction) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; self.cell_count() * m];
        out.par_chunks_mut(m).enumerate().for_each(|(c, g)| self.cell_gradient(c, u.values(), g));
        out
    }
}

/// Per-cell horizontal gradient field.
#[derive(Clone, Debug)]
pub struct CellField {
    pub m: usize,
    /// Lowest-corner node of each cell.
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
}

impl CellField {
    pub fn at(&self, c: usize) -> &[f64] {
        &self.values[c * self.m..(c + 1) * self.m]
    }
}

/// Horizontal gradient of `u` at the centers of all active cells.
pub fn horizontal_gradient(space: &MetricSpace, u: &GridFunction) -> Result<CellField> {
    let op = CellOperator::new(space, u.domain().clone())?;
    Ok(CellField { m: op.m(), cells: u.domain().cells().to_vec(), values: op.apply(u) })
}

/// The discrete δ-regularized p-energy `Σ h^n (δ² + <A Xu, Xu>)^{p/2}` and
/// its first variation.
#[derive(Clone, Debug)]
pub struct EnergyForm {
    op: CellOperator,
    p: f64,
    /// `m x m` per cell.
    coeffs: Vec<f64>,
    volume: f64,
}

/// Flux factor `(δ² + s)^{(p-2)/2}`, zero where the regularized norm vanishes.
#[inline]
pub(crate) fn flux_factor(s: f64, p: f64) -> f64 {
    if s > 0.0 {
        s.powf(0.5 * (p - 2.0))
    } else {
        0.0
    }
}

impl EnergyForm {
    /// Evaluate `a` at every cell center and check symmetry and envelope.
    pub fn new(space: &MetricSpace, domain: Arc<GridDomain>, a: &MatrixField, p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::invalid(format!("exponent must satisfy 1 < p < inf, got {p}")));
        }
        let op = CellOperator::new(space, domain)?;
        let m = op.m();
        if a.dim() != m {
            return Err(Error::DimensionMismatch { expected: m, got: a.dim() });
        }
        let dom = op.domain().clone();
        let n = dom.dim();
        let mut coeffs = vec![0.0; op.cell_count() * m * m];
        coeffs
            .par_chunks_mut(m * m)
            .enumerate()
            .try_for_each(|(c, out)| {
                let mut x = vec![0.0; n];
                dom.cell_center(dom.cells()[c], &mut x);
                a.check_at(&x, 2, c as u64)?;
                a.eval_into(&x, out);
                Ok::<(), Error>(())
            })?;
        Ok(EnergyForm { volume: dom.cell_volume(), op, p, coeffs })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn operator(&self) -> &CellOperator {
        &self.op
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        self.op.domain()
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume
    }

    #[inline]
    pub(crate) fn coeff(&self, c: usize) -> &[f64] {
        let m = self.op.m();
        &self.coeffs[c * m * m..(c + 1) * m * m]
    }

    /// `<A g, g>` and `A g` on cell `c`.
    #[inline]
    pub(crate) fn a_apply(&self, c: usize, g: &[f64], ag: &mut [f64]) -> f64 {
        let m = g.len();
        let a = self.coeff(c);
        let mut s = 0.0;
        for i in 0..m {
            ag[i] = (0..m).map(|j| a[i * m + j] * g[j]).sum();
            s += ag[i] * g[i];
        }
        s
    }

    fn check_function(&self, u: &GridFunction) -> Result<()> {
        if u.domain().len() != self.domain().len() {
            return Err(Error::DimensionMismatch { expected: self.domain().len(), got: u.domain().len() });
        }
        Ok(())
    }

    /// Sum of `f(c)` over cells, chunked so the summation order is fixed.
    fn cell_sum(&self, f: impl Fn(usize, &mut [f64], &mut [f64]) -> f64 + Sync) -> f64 {
        let m = self.op.m();
        let cells = self.op.cell_count();
        let partial: Vec<f64> = (0..cells.div_ceil(CHUNK))
            .into_par_iter()
            .map(|k| {
                let mut g = vec![0.0; m];
                let mut ag = vec![0.0; m];
                (k * CHUNK..((k + 1) * CHUNK).min(cells)).map(|c| f(c, &mut g, &mut ag)).sum()
            })
            .collect();
        partial.iter().sum()
    }

    /// `Σ h^n (δ² + <A Xu, Xu>)^{p/2}`; equals `‖Xu‖_A^p` for `δ = 0`.
    pub fn energy(&self, u: &GridFunction, delta: f64) -> Result<f64> {
        self.check_function(u)?;
        Ok(self.energy_values(u.values(), delta))
    }

    pub(crate) fn energy_values(&self, u: &[f64], delta: f64) -> f64 {
        let d2 = delta * delta;
        let half_p = 0.5 * self.p;
        self.volume
            * self.cell_sum(|c, g, ag| {
                self.op.cell_gradient(c, u, g);
                (d2 + self.a_apply(c, g, ag)).powf(half_p)
            })
    }

    /// `‖Xu‖_A = (∫ <A Xu, Xu>^{p/2})^{1/p}`.
    pub fn a_norm(&self, u: &GridFunction) -> Result<f64> {
        Ok(self.energy(u, 0.0)?.powf(1.0 / self.p))
    }

    /// Discrete `a_0^p(u, φ)`; `φ` must vanish on boundary nodes.
    pub fn weak_form(&self, u: &GridFunction, phi: &GridFunction, delta: f64) -> Result<f64> {
        self.check_function(u)?;
        self.check_function(phi)?;
        let dom = self.domain();
        if let Some(i) = dom.boundary_nodes().find(|&i| phi.get(i) != 0.0) {
            return Err(Error::InvalidTestFunction(format!(
                "test function is {} at boundary node {:?}",
                phi.get(i),
                dom.coords(i)
            )));
        }
        Ok(self.pairing(u.values(), phi.values(), delta))
    }

    /// `a_0^p(u, φ)` without the boundary restriction on `φ`.
    pub(crate) fn pairing(&self, u: &[f64], phi: &[f64], delta: f64) -> f64 {
        let d2 = delta * delta;
        let p = self.p;
        let m = self.op.m();
        self.volume
            * self.cell_sum(|c, g, ag| {
                self.op.cell_gradient(c, u, g);
                let s = d2 + self.a_apply(c, g, ag);
                let f = flux_factor(s, p);
                if f == 0.0 {
                    return 0.0;
                }
                self.op.cell_gradient(c, phi, g);
                f * (0..m).map(|i| ag[i] * g[i]).sum::<f64>()
            })
    }

    /// Per-node `dE/du_i` and the node sums of absolute contributions.
    pub(crate) fn gradient(&self, u: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.op.m();
        let corners = self.op.corners();
        let cells = self.op.cell_count();
        let d2 = delta * delta;
        let p = self.p;
        let scale = self.volume * p;
        let contrib: Vec<f64> = (0..cells)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut g = vec![0.0; m];
                let mut ag = vec![0.0; m];
                self.op.cell_gradient(c, u, &mut g);
                let s = d2 + self.a_apply(c, &g, &mut ag);
                let f = scale * flux_factor(s, p);
                let st = self.op.stencil(c);
                (0..corners).map(move |k| f * (0..m).map(|j| ag[j] * st[j * corners + k]).sum::<f64>())
            })
            .collect();
        let mut grad = vec![0.0; u.len()];
        let mut abs = vec![0.0; u.len()];
        let offs = self.domain().corner_offsets();
        for (c, &origin) in self.domain().cells().iter().enumerate() {
            for k in 0..corners {
                let v = contrib[c * corners + k];
                grad[origin + offs[k]] += v;
                abs[origin + offs[k]] += v.abs();
            }
        }
        (grad, abs)
    }

    /// Weak-form flux `(δ² + <A g, g>)^{(p-2)/2} A g` on cell `c`.
    pub fn cell_flux(&self, u: &GridFunction, c: usize, delta: f64) -> Vec<f64> {
        let m = self.op.m();
        let mut g = vec![0.0; m];
        let mut ag = vec![0.0; m];
        self.op.cell_gradient(c, u.values(), &mut g);
        let f = flux_factor(delta * delta + self.a_apply(c, &g, &mut ag), self.p);
        ag.iter().map(|v| f * v).collect()
    }
}

/// `a(u1, u1 - u2) - a(u2, u1 - u2)`; non-negative by monotonicity.
pub fn monotonicity_gap(form: &EnergyForm, u1: &GridFunction, u2: &GridFunction, delta: f64) -> Result<f64> {
    form.check_function(u1)?;
    form.check_function(u2)?;
    let d = u1 - u2;
    Ok(form.pairing(u1.values(), d.values(), delta) - form.pairing(u2.values(), d.values(), delta))
}

/// `Σ h^n (|flux(u1)| + |flux(u2)|) |A^{1/2} X(u1 - u2)|`, the size of the
/// terms that cancel in [`monotonicity_gap`].
pub fn gap_scale(form: &EnergyForm, u1: &GridFunction, u2: &GridFunction, delta: f64) -> Result<f64> {
    form.check_function(u1)?;
    form.check_function(u2)?;
    let d = u1 - u2;
    let d2 = delta * delta;
    let p = form.p;
    Ok(form.volume
        * form.cell_sum(|c, g, ag| {
            let mut total = 0.0;
            for u in [u1, u2] {
                form.op.cell_gradient(c, u.values(), g);
                let s = d2 + form.a_apply(c, g, ag);
                total += flux_factor(s, p) * s.sqrt();
            }
            form.op.cell_gradient(c, d.values(), g);
            total * form.a_apply(c, g, ag).max(0.0).sqrt()
        }))
}

/// Interior nodes, in the order of the solver's unknown vector.
pub(crate) fn unknown_map(domain: &GridDomain) -> Vec<usize> {
    domain.interior_nodes().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::grid::Mask;

    fn square(cells: usize) -> Arc<GridDomain> {
        Arc::new(GridDomain::cube(2, 0.0, 1.0, cells, Mask::Box).unwrap())
    }

    #[test]
    fn affine_gradient_is_exact() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let u = GridFunction::from_fn(square(8), |x| 3.0 * x[0] - 2.0 * x[1] + 1.0);
        let g = horizontal_gradient(&e2, &u).unwrap();
        for c in 0..g.cells.len() {
            assert!((g.at(c)[0] - 3.0).abs() < 1e-12 && (g.at(c)[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_gradient_at_half() {
        let e1 = MetricSpace::euclidean(1).unwrap();
        let d = Arc::new(GridDomain::new(vec![0.0], vec![1.0], 0.2, Mask::Box).unwrap());
        let u = GridFunction::from_fn(d.clone(), |x| x[0] * x[0]);
        let g = horizontal_gradient(&e1, &u).unwrap();
        let c = d.cells().iter().position(|&o| (d.coords(o)[0] - 0.4).abs() < 1e-12).unwrap();
        assert!((g.at(c)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_interval_energy() {
        let e1 = MetricSpace::euclidean(1).unwrap();
        let d = Arc::new(GridDomain::new(vec![0.0], vec![1.0], 0.1, Mask::Box).unwrap());
        let u = GridFunction::from_fn(d.clone(), |x| x[0]);
        for p in [1.5, 2.0, 3.7] {
            let form = EnergyForm::new(&e1, d.clone(), &MatrixField::identity(1), p).unwrap();
            assert!((form.energy(&u, 0.0).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn heisenberg_frame_on_group_coordinates() {
        let h = MetricSpace::heisenberg();
        let d = Arc::new(GridDomain::cube(3, -1.0, 1.0, 4, Mask::Box).unwrap());
        // X1 x = 1, X2 x = 0; X1 t = -y/2, X2 t = x/2.
        let ux = GridFunction::from_fn(d.clone(), |x| x[0]);
        let ut = GridFunction::from_fn(d.clone(), |x| x[2]);
        let op = CellOperator::new(&h, d.clone()).unwrap();
        let gx = op.apply(&ux);
        let gt = op.apply(&ut);
        let mut c = [0.0; 3];
        for (k, &cell) in d.cells().iter().enumerate() {
            d.cell_center(cell, &mut c);
            assert!((gx[2 * k] - 1.0).abs() < 1e-12 && gx[2 * k + 1].abs() < 1e-12);
            assert!((gt[2 * k] + 0.5 * c[1]).abs() < 1e-12);
            assert!((gt[2 * k + 1] - 0.5 * c[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_test_function_rejected() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let d = square(4);
        let form = EnergyForm::new(&e2, d.clone(), &MatrixField::identity(2), 2.0).unwrap();
        let u = GridFunction::from_fn(d.clone(), |x| x[0]);
        let phi = GridFunction::from_fn(d.clone(), |x| x[1]);
        assert!(matches!(form.weak_form(&u, &phi, 0.0), Err(Error::InvalidTestFunction(_))));
        assert_eq!(form.weak_form(&u, &(&u - &u), 0.0).unwrap(), 0.0);
    }
}
