use serde::{Deserialize, Serialize};

use super::field::MatrixField;
use super::form::{flux_factor, unknown_map, EnergyForm};
use super::grid::{GridFunction, NodeKind};
use crate::error::{Error, Result};
use crate::geometry::MetricSpace;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const STAGE_TOLERANCE: f64 = 1e-6;
const CG_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    /// `ψ` evaluated at every node.
    BoundaryExtension,
    /// `ψ` on the boundary, zero inside.
    ZeroInterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub p: f64,
    /// Final regularization; `None` picks `1e-8` for `p >= 2`, `1e-6` below.
    pub delta: Option<f64>,
    /// First δ of the continuation; δ is halved from here down to the final
    /// value.
    pub delta_start: f64,
    pub continuation: bool,
    /// Stop when `max |dE/du_i| / max_i Σ_cells |contribution|` falls below
    /// this.
    pub tolerance: f64,
    /// Total Newton steps over all continuation stages.
    pub max_iterations: usize,
    pub initial: InitialGuess,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(p: f64) -> Self {
        SolverConfig {
            p,
            delta: None,
            delta_start: 1e-2,
            continuation: true,
            tolerance: 1e-10,
            max_iterations: 500,
            initial: InitialGuess::BoundaryExtension,
            seed: 0,
        }
    }

    pub fn delta_final(&self) -> f64 {
        self.delta.unwrap_or(if self.p >= 2.0 { 1e-8 } else { 1e-6 })
    }

    /// δ values visited, ending at [`Self::delta_final`]. A single stage for
    /// `p = 2`, where δ does not enter the Euler-Lagrange equation.
    pub fn schedule(&self) -> Vec<f64> {
        let last = self.delta_final();
        if self.p == 2.0 || !self.continuation || self.delta_start <= last {
            return vec![last];
        }
        let mut out = Vec::new();
        let mut d = self.delta_start;
        while d > last {
            out.push(d);
            d *= 0.5;
        }
        out.push(last);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::invalid(format!("exponent must satisfy 1 < p < inf, got {}", self.p)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("solver tolerance must be positive"));
        }
        let d = self.delta_final();
        if !(d >= 0.0 && d.is_finite()) || (d == 0.0 && self.p != 2.0) {
            return Err(Error::invalid(format!("regularization must be positive for p != 2, got {d}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub delta: f64,
    pub iterations: usize,
    pub relative_gradient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub p: f64,
    pub iterations: usize,
    pub final_energy: f64,
    /// `max |dE/du_i|` over unknowns, divided by the gradient scale.
    pub final_gradient: f64,
    /// `max_i |a(u, e_i)|` over the nodal test basis of interior nodes.
    pub weak_residual: f64,
    /// Size of the fluxes cancelling in the residual, `max_i Σ |terms| / p`.
    pub residual_scale: f64,
    pub converged: bool,
    pub delta_schedule: Vec<f64>,
    /// Energy after each accepted step (the first entry is the initial iterate).
    pub energies: Vec<f64>,
    pub stages: Vec<StageReport>,
    pub unknowns: usize,
}

struct Newton<'a> {
    form: &'a EnergyForm,
    nodes: Vec<usize>,
    /// `m x m` per cell.
    mats: Vec<f64>,
}

impl<'a> Newton<'a> {
    fn relative_gradient(&self, u: &[f64], delta: f64) -> (Vec<f64>, f64, f64) {
        let (grad, abs) = self.form.gradient(u, delta);
        let g: Vec<f64> = self.nodes.iter().map(|&i| grad[i]).collect();
        let scale = self.nodes.iter().map(|&i| abs[i]).fold(0.0, f64::max);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rel = if scale > 0.0 { gmax / scale } else { 0.0 };
        (g, rel, scale)
    }

    /// Per-cell Hessian blocks `h^n p [f A + (p-2) s^{(p-4)/2} (Ag)(Ag)^T]`.
    fn assemble(&mut self, u: &[f64], delta: f64) {
        let op = self.form.operator();
        let m = op.m();
        let p = self.form.p();
        let vol = self.form.cell_volume();
        let d2 = delta * delta;
        self.mats.resize(op.cell_count() * m * m, 0.0);
        let mut g = vec![0.0; m];
        let mut ag = vec![0.0; m];
        for c in 0..op.cell_count() {
            op.cell_gradient(c, u, &mut g);
            let s = d2 + self.form.a_apply(c, &g, &mut ag);
            let (f, f2) = if s > 0.0 {
                (s.powf(0.5 * (p - 2.0)), (p - 2.0) * s.powf(0.5 * (p - 4.0)))
            } else {
                (if p == 2.0 { 1.0 } else { flux_factor(s, p) }, 0.0)
            };
            let a = self.form.coeff(c);
            let out = &mut self.mats[c * m * m..(c + 1) * m * m];
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] = vol * p * (f * a[i * m + j] + f2 * ag[i] * ag[j]);
                }
            }
        }
    }

    fn hess_apply(&self, v: &[f64], work: &mut [f64], out: &mut [f64]) {
        let op = self.form.operator();
        let m = op.m();
        let corners = op.corners();
        let dom = self.form.domain();
        let offs = dom.corner_offsets();
        work.fill(0.0);
        for (k, &i) in self.nodes.iter().enumerate() {
            work[i] = v[k];
        }
        let mut acc = vec![0.0; dom.len()];
        let mut dv = vec![0.0; m];
        let mut mdv = vec![0.0; m];
        for (c, &origin) in dom.cells().iter().enumerate() {
            let st = op.stencil(c);
            for j in 0..m {
                dv[j] = (0..corners).map(|k| st[j * corners + k] * work[origin + offs[k]]).sum();
            }
            let mat = &self.mats[c * m * m..(c + 1) * m * m];
            for i in 0..m {
                mdv[i] = (0..m).map(|j| mat[i * m + j] * dv[j]).sum();
            }
            for k in 0..corners {
                acc[origin + offs[k]] += (0..m).map(|j| st[j * corners + k] * mdv[j]).sum::<f64>();
            }
        }
        for (k, &i) in self.nodes.iter().enumerate() {
            out[k] = acc[i];
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let op = self.form.operator();
        let m = op.m();
        let corners = op.corners();
        let dom = self.form.domain();
        let offs = dom.corner_offsets();
        let mut diag = vec![0.0; dom.len()];
        for (c, &origin) in dom.cells().iter().enumerate() {
            let st = op.stencil(c);
            let mat = &self.mats[c * m * m..(c + 1) * m * m];
            for k in 0..corners {
                let mut q = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        q += st[i * corners + k] * mat[i * m + j] * st[j * corners + k];
                    }
                }
                diag[origin + offs[k]] += q;
            }
        }
        self.nodes.iter().map(|&i| if diag[i] > 0.0 { diag[i] } else { 1.0 }).collect()
    }

    /// Preconditioned conjugate gradients for `H d = b`.
    fn pcg(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let diag = self.diagonal();
        let mut work = vec![0.0; self.form.domain().len()];
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        let mut dir = z.clone();
        let mut hd = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return x;
        }
        for _ in 0..10 * n.max(1) {
            self.hess_apply(&dir, &mut work, &mut hd);
            let dhd: f64 = dir.iter().zip(&hd).map(|(a, b)| a * b).sum();
            if !(dhd > 0.0) {
                break;
            }
            let alpha = rz / dhd;
            for k in 0..n {
                x[k] += alpha * dir[k];
                r[k] -= alpha * hd[k];
            }
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= CG_TOLERANCE * bnorm {
                break;
            }
            for k in 0..n {
                z[k] = r[k] / diag[k];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                dir[k] = z[k] + beta * dir[k];
            }
        }
        x
    }
}

/// Minimize the δ-regularized p-energy over grid functions equal to `psi`
/// on boundary nodes.
///
/// Damped Newton with Armijo backtracking on each stage of the δ schedule;
/// the Newton systems are solved by diagonally preconditioned conjugate
/// gradients. A run that exhausts `max_iterations` returns the last iterate
/// with `converged = false`.
pub fn solve_dirichlet(
    space: &MetricSpace,
    a: &MatrixField,
    psi: &GridFunction,
    config: &SolverConfig,
) -> Result<(GridFunction, SolveReport)> {
    config.validate()?;
    let dom = psi.domain().clone();
    for i in dom.boundary_nodes() {
        if !psi.get(i).is_finite() {
            return Err(Error::invalid(format!("boundary datum is not finite at {:?}", dom.coords(i))));
        }
    }
    let form = EnergyForm::new(space, dom.clone(), a, config.p)?;
    let nodes = unknown_map(&dom);
    let mut u = psi.clone();
    if config.initial == InitialGuess::ZeroInterior {
        for &i in &nodes {
            u.values_mut()[i] = 0.0;
        }
    }
    let mut newton = Newton { form: &form, nodes, mats: Vec::new() };
    let schedule = config.schedule();
    let mut energies = vec![form.energy_values(u.values(), schedule[0])];
    let mut stages = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut last = (Vec::new(), f64::INFINITY, 0.0);
    'stages: for (si, &delta) in schedule.iter().enumerate() {
        let final_stage = si + 1 == schedule.len();
        let tol = if final_stage { config.tolerance } else { config.tolerance.max(STAGE_TOLERANCE) };
        let mut stage_iters = 0;
        let mut energy = form.energy_values(u.values(), delta);
        if si > 0 {
            energies.push(energy);
        }
        loop {
            last = newton.relative_gradient(u.values(), delta);
            let (ref g, rel, _) = last;
            if rel <= tol {
                converged = final_stage;
                break;
            }
            if iterations >= config.max_iterations {
                stages.push(StageReport { delta, iterations: stage_iters, relative_gradient: rel });
                break 'stages;
            }
            newton.assemble(u.values(), delta);
            let b: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut d = newton.pcg(&b);
            let mut slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                d = b.clone();
                slope = -g.iter().map(|v| v * v).sum::<f64>();
            }
            let mut t = 1.0;
            let mut accepted = None;
            let mut trial = u.clone();
            // Energy differences below this are rounding noise.
            let noise = 1e-14 * energy.abs();
            for _ in 0..MAX_BACKTRACKS {
                for (k, &i) in newton.nodes.iter().enumerate() {
                    trial.values_mut()[i] = u.get(i) + t * d[k];
                }
                let e = form.energy_values(trial.values(), delta);
                if e <= energy + ARMIJO * t * slope + noise {
                    accepted = Some(e);
                    break;
                }
                t *= 0.5;
            }
            iterations += 1;
            stage_iters += 1;
            match accepted {
                Some(e) => {
                    u = trial;
                    energy = e;
                    energies.push(e);
                }
                None => {
                    // No decrease is measurable: the stage is at its minimum
                    // to rounding accuracy.
                    converged = final_stage;
                    break;
                }
            }
        }
        stages.push(StageReport { delta, iterations: stage_iters, relative_gradient: last.1 });
    }
    let delta = *schedule.last().expect("non-empty schedule");
    if last.0.is_empty() {
        last = newton.relative_gradient(u.values(), delta);
    }
    let (g, rel, scale) = last;
    let p = config.p;
    let weak_residual = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / p;
    let report = SolveReport {
        p,
        iterations,
        final_energy: form.energy_values(u.values(), delta),
        final_gradient: rel,
        weak_residual,
        residual_scale: scale / p,
        converged,
        delta_schedule: schedule,
        energies,
        stages,
        unknowns: newton.nodes.len(),
    };
    Ok((u, report))
}

/// Number of interior, boundary and excluded nodes.
pub fn node_counts(u: &GridFunction) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for k in u.domain().kinds() {
        match k {
            NodeKind::Interior => c.0 += 1,
            NodeKind::Boundary => c.1 += 1,
            NodeKind::Excluded => c.2 += 1,
        }
    }
    c
}
