use super::form::CellOperator;
use super::grid::GridFunction;
use crate::error::{Error, Result};
use crate::geometry::{Ball, MetricSpace};
use crate::weights::Weight;

/// Ratio of the two sides of the two-weight Poincaré inequality on `ball`:
///
/// `(v(B)^{-1} ∫_B |f - f_{B,v}|^q v)^{1/q} / (r (w(B)^{-1} ∫_B |Xf|^p w)^{1/p})`,
///
/// with midpoint quadrature over the active cells whose centers lie in
/// `ball`. Returns 0 when the left side vanishes and `+inf` when only the
/// right side does.
#[allow(clippy::too_many_arguments)]
pub fn poincare_ratio(
    w: &Weight,
    v: &Weight,
    p: f64,
    q: f64,
    f: &GridFunction,
    ball: &Ball,
    space: &MetricSpace,
) -> Result<f64> {
    if !(p >= 1.0 && q >= 1.0) {
        return Err(Error::invalid("Poincaré exponents must be at least 1"));
    }
    let dom = f.domain();
    let op = CellOperator::new(space, dom.clone())?;
    let m = op.m();
    let corners = op.corners();
    let offs = dom.corner_offsets();
    let shift = dom.h() / 100.0;
    let mut x = vec![0.0; dom.dim()];
    let mut g = vec![0.0; m];
    // (f at center, v, w, |Xf|)
    let mut cells = Vec::new();
    for (c, &origin) in dom.cells().iter().enumerate() {
        dom.cell_center(origin, &mut x);
        if space.dist(&x, &ball.center) >= ball.radius {
            continue;
        }
        let fc = offs.iter().map(|o| f.get(origin + o)).sum::<f64>() / corners as f64;
        op.cell_gradient(c, f.values(), &mut g);
        let grad = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        cells.push((fc, v.eval_off_singular(&x, shift), w.eval_off_singular(&x, shift), grad));
    }
    if cells.is_empty() {
        return Err(Error::RadiusTooSmall { radius: ball.radius, nodes: 0 });
    }
    let v_mass: f64 = cells.iter().map(|c| c.1).sum();
    let w_mass: f64 = cells.iter().map(|c| c.2).sum();
    let mean = cells.iter().map(|c| c.0 * c.1).sum::<f64>() / v_mass;
    let lhs = (cells.iter().map(|c| (c.0 - mean).abs().powf(q) * c.1).sum::<f64>() / v_mass).powf(1.0 / q);
    let rhs = ball.radius * (cells.iter().map(|c| c.3.powf(p) * c.2).sum::<f64>() / w_mass).powf(1.0 / p);
    if lhs == 0.0 {
        return Ok(0.0);
    }
    if rhs == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(lhs / rhs)
}
