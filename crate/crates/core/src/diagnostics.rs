//! Regularity diagnostics for grid functions: oscillation decay, Hölder
//! exponents, Harnack quotients, the mean-value ratio, precise
//! representatives and the predicted continuity set `{Mk < ∞}`.
//!
//! Essential suprema and infima are nodal maxima and minima; balls are
//! node sets `{i : ρ(x_i, x) <= r}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{GridFunction, NodeKind};
use crate::error::{Error, Result};
use crate::geometry::{Ball, MetricSpace};
use crate::weights::{maximal_function, Weight};

/// Minimum number of nodes in a ball.
pub const MIN_BALL_NODES: usize = 4;
/// Fitted exponents below this count as no decay.
pub const DECAY_THRESHOLD: f64 = 0.05;
/// Two-cell jump over oscillation at which the oscillation is considered
/// non-vanishing.
pub const JUMP_RATIO_THRESHOLD: f64 = 0.8;

/// Non-excluded nodes of `u`'s grid within `ball` (closed).
pub fn nodes_in_ball(u: &GridFunction, space: &MetricSpace, ball: &Ball) -> Vec<usize> {
    let dom = u.domain();
    let n = dom.dim();
    let (lo, hi) = space.bounding_box(ball);
    let mut ranges = Vec::with_capacity(n);
    for a in 0..n {
        let last = dom.shape()[a] as f64 - 1.0;
        let k0 = ((lo[a] - dom.lo()[a]) / dom.h()).floor().clamp(0.0, last) as usize;
        let k1 = ((hi[a] - dom.lo()[a]) / dom.h()).ceil().clamp(0.0, last) as usize;
        ranges.push((k0, k1));
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    let mut x = vec![0.0; n];
    loop {
        let i = dom.index(&idx);
        if dom.kind(i) != NodeKind::Excluded {
            dom.coords_into(i, &mut x);
            if space.dist(&x, &ball.center) <= ball.radius {
                out.push(i);
            }
        }
        let mut a = 0;
        loop {
            if a == n {
                return out;
            }
            if idx[a] < ranges[a].1 {
                idx[a] += 1;
                break;
            }
            idx[a] = ranges[a].0;
            a += 1;
        }
    }
}

fn ball_nodes_checked(u: &GridFunction, space: &MetricSpace, ball: &Ball) -> Result<Vec<usize>> {
    let nodes = nodes_in_ball(u, space, ball);
    if nodes.len() < MIN_BALL_NODES {
        return Err(Error::RadiusTooSmall { radius: ball.radius, nodes: nodes.len() });
    }
    Ok(nodes)
}

fn range(u: &GridFunction, nodes: &[usize]) -> (f64, f64) {
    nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        let v = u.get(i);
        (lo.min(v), hi.max(v))
    })
}

/// `max - min` of `u` over the nodes of `B(x, r)` for each radius.
pub fn oscillation(u: &GridFunction, space: &MetricSpace, x: &[f64], radii: &[f64]) -> Result<Vec<f64>> {
    space.check_point(x)?;
    radii
        .iter()
        .map(|&r| {
            let nodes = ball_nodes_checked(u, space, &Ball::new(x.to_vec(), r)?)?;
            let (lo, hi) = range(u, &nodes);
            Ok(hi - lo)
        })
        .collect()
}

/// Dyadic radii `r0 2^{-j}` down to the smallest one that is `>= 4h`.
pub fn radius_ladder(r0: f64, h: f64) -> Vec<f64> {
    let mut out = vec![r0];
    let mut r = r0;
    while r * 0.5 >= 4.0 * h * (1.0 - 1e-12) {
        r *= 0.5;
        out.push(r);
    }
    out
}

/// Contraction factor `(e^{C Mk} - 1) / (e^{C Mk} + 1) = tanh(C Mk / 2)`;
/// 1 for `Mk = +inf`.
pub fn gamma_factor(c: f64, mk: f64) -> f64 {
    if mk.is_infinite() {
        return 1.0;
    }
    (0.5 * c * mk).tanh()
}

/// `max_B u / min_B u`; `u` must be positive on the nodes of `2B`.
pub fn harnack_quotient(u: &GridFunction, space: &MetricSpace, ball: &Ball) -> Result<f64> {
    let outer = ball_nodes_checked(u, space, &ball.scaled(2.0))?;
    let (lo2, _) = range(u, &outer);
    if !(lo2 > 0.0) {
        return Err(Error::NotPositive { min: lo2 });
    }
    let nodes = ball_nodes_checked(u, space, ball)?;
    let (lo, hi) = range(u, &nodes);
    Ok(hi / lo)
}

/// Largest `ln(quotient) / μ_p` over `(quotient, μ_p)` pairs: the smallest
/// `C` with `quotient <= e^{C μ_p}` on every pair.
pub fn fit_harnack_constant(samples: &[(f64, f64)]) -> f64 {
    samples.iter().map(|(q, mu)| q.ln() / mu).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanValueReport {
    /// `(max_{αB} u^+)^p`.
    pub lhs: f64,
    /// `μ_p^{pσ/(σ-1)} v(B)^{-1} ∫_B (u^+)^p v`.
    pub rhs_core: f64,
    pub ratio: f64,
    pub mu_p: f64,
    pub alpha: f64,
    pub sigma: f64,
}

/// Ratio of the two sides of the mean-value inequality on `ball`, with
/// nodal quadrature. The implied constant `c / (1 - α)^d` is what the ratio
/// measures.
#[allow(clippy::too_many_arguments)]
pub fn mean_value_check(
    u: &GridFunction,
    p: f64,
    w: &Weight,
    v: &Weight,
    space: &MetricSpace,
    ball: &Ball,
    alpha: f64,
    sigma: f64,
) -> Result<MeanValueReport> {
    if !(0.5..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [1/2, 1), got {alpha}")));
    }
    if !(sigma > 1.0) {
        return Err(Error::invalid(format!("sigma must exceed 1, got {sigma}")));
    }
    let dom = u.domain();
    let shift = dom.h() / 100.0;
    let nodes = ball_nodes_checked(u, space, ball)?;
    let inner = ball_nodes_checked(u, space, &ball.scaled(alpha))?;
    let mut x = vec![0.0; dom.dim()];
    let (mut vm, mut wm, mut int) = (0.0, 0.0, 0.0);
    for &i in &nodes {
        dom.coords_into(i, &mut x);
        let vi = v.eval_off_singular(&x, shift);
        vm += vi;
        wm += w.eval_off_singular(&x, shift);
        int += u.get(i).max(0.0).powf(p) * vi;
    }
    let mu = (vm / wm).powf(1.0 / p);
    let lhs = inner.iter().map(|&i| u.get(i).max(0.0)).fold(0.0, f64::max).powf(p);
    let rhs_core = mu.powf(p * sigma / (sigma - 1.0)) * int / vm;
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs_core };
    Ok(MeanValueReport { lhs, rhs_core, ratio, mu_p: mu, alpha, sigma })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HolderOutcome {
    /// Oscillation is zero on every radius.
    Constant,
    /// `osc(r) ≈ c (r / r0)^alpha`.
    Fit { alpha: f64, c: f64, radii_used: usize },
    /// Fewer than two radii have oscillation above the discretization
    /// floor and there is no jump: no evidence against decay.
    Unresolved { jump_ratio: f64 },
    NoDecay { alpha: Option<f64>, jump_ratio: f64 },
}

impl HolderOutcome {
    pub fn decays(&self) -> bool {
        !matches!(self, HolderOutcome::NoDecay { .. })
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            HolderOutcome::Fit { alpha, .. } => Some(*alpha),
            HolderOutcome::NoDecay { alpha, .. } => *alpha,
            HolderOutcome::Constant | HolderOutcome::Unresolved { .. } => None,
        }
    }
}

/// Largest `|u(i+1) - u(i-1)|` along any axis over nodes `i` of `nodes`.
fn two_cell_jump(u: &GridFunction, nodes: &[usize]) -> f64 {
    let dom = u.domain();
    let n = dom.dim();
    let mut idx = vec![0; n];
    let mut best = 0.0f64;
    for &i in nodes {
        dom.multi_into(i, &mut idx);
        for a in 0..n {
            if idx[a] == 0 || idx[a] + 1 >= dom.shape()[a] {
                continue;
            }
            let s = dom.strides()[a];
            let (l, r) = (u.get(i - s), u.get(i + s));
            if l.is_finite() && r.is_finite() {
                best = best.max((r - l).abs());
            }
        }
    }
    best
}

/// Median over `nodes` of the largest adjacent-node difference quotient.
fn gradient_scale(u: &GridFunction, nodes: &[usize]) -> f64 {
    let dom = u.domain();
    let n = dom.dim();
    let h = dom.h();
    let mut idx = vec![0; n];
    let mut g: Vec<f64> = nodes
        .iter()
        .map(|&i| {
            dom.multi_into(i, &mut idx);
            (0..n)
                .filter(|&a| idx[a] + 1 < dom.shape()[a])
                .map(|a| {
                    let j = i + dom.strides()[a];
                    let d = (u.get(j) - u.get(i)).abs() / h;
                    if d.is_finite() { d } else { 0.0 }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    if g.is_empty() {
        return 0.0;
    }
    g.sort_by(f64::total_cmp);
    g[g.len() / 2]
}

/// Fit `osc(r) ≈ c (r/r0)^α` over the radii whose oscillation exceeds
/// `10 h G`, `G` the median local difference quotient in the largest ball.
///
/// The oscillation counts as non-vanishing (no decay) when the fitted `α`
/// is below [`DECAY_THRESHOLD`] or when the largest two-cell jump inside
/// `B(x, r*)` is at least [`JUMP_RATIO_THRESHOLD`] times `osc(r*)`, where
/// `r*` is the smallest radius `>= 8h`. A jump discontinuity through `x`
/// gives a ratio near 1; a Hölder-`α` point gives about `4^{-α}`.
pub fn holder_exponent(
    u: &GridFunction,
    space: &MetricSpace,
    x: &[f64],
    radii: &[f64],
    r0: f64,
) -> Result<HolderOutcome> {
    let table = oscillation_table(u, space, x, radii)?;
    Ok(fit_table(u, space, x, &table, r0))
}

fn oscillation_table(u: &GridFunction, space: &MetricSpace, x: &[f64], radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    if radii.is_empty() {
        return Err(Error::invalid("radius list is empty"));
    }
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    let osc = oscillation(u, space, x, &radii)?;
    Ok(radii.into_iter().zip(osc).collect())
}

fn fit_table(u: &GridFunction, space: &MetricSpace, x: &[f64], table: &[(f64, f64)], r0: f64) -> HolderOutcome {
    if table.iter().all(|&(_, o)| o == 0.0) {
        return HolderOutcome::Constant;
    }
    let h = u.domain().h();
    let largest = Ball { center: x.to_vec(), radius: table[0].0 };
    let g = gradient_scale(u, &nodes_in_ball(u, space, &largest));
    let floor = 10.0 * h * g;
    let pts: Vec<(f64, f64)> =
        table.iter().filter(|&&(_, o)| o > floor && o > 0.0).map(|&(r, o)| ((r / r0).ln(), o.ln())).collect();

    let star = table.iter().rev().find(|&&(r, _)| r >= 8.0 * h * (1.0 - 1e-12)).unwrap_or(&table[0]);
    let star_nodes = nodes_in_ball(u, space, &Ball { center: x.to_vec(), radius: star.0 });
    let jump_ratio = if star.1 > 0.0 { two_cell_jump(u, &star_nodes) / star.1 } else { 0.0 };

    let fit = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let alpha = (sxy / sxx).max(0.0);
        Some((alpha, (my - alpha * mx).exp(), pts.len()))
    } else {
        None
    };
    match fit {
        Some((alpha, c, used)) if alpha >= DECAY_THRESHOLD && jump_ratio < JUMP_RATIO_THRESHOLD => {
            HolderOutcome::Fit { alpha, c, radii_used: used }
        }
        None if jump_ratio < JUMP_RATIO_THRESHOLD => HolderOutcome::Unresolved { jump_ratio },
        other => HolderOutcome::NoDecay { alpha: other.map(|f| f.0), jump_ratio },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreciseRepresentative {
    /// Last ball average.
    pub value: f64,
    pub converged: bool,
    /// `(r, u_{B(x,r)})`, largest radius first.
    pub averages: Vec<(f64, f64)>,
}

/// Nodal ball averages over shrinking radii. Converged when each of the
/// last three successive differences is at most `tolerance`; every
/// difference is also bounded by the oscillation on the larger ball.
pub fn precise_representative(
    u: &GridFunction,
    space: &MetricSpace,
    x: &[f64],
    radii: &[f64],
    tolerance: f64,
) -> Result<PreciseRepresentative> {
    space.check_point(x)?;
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    let mut averages = Vec::with_capacity(radii.len());
    for &r in &radii {
        let nodes = ball_nodes_checked(u, space, &Ball::new(x.to_vec(), r)?)?;
        let avg = nodes.iter().map(|&i| u.get(i)).sum::<f64>() / nodes.len() as f64;
        averages.push((r, avg));
    }
    let diffs: Vec<f64> = averages.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
    let tail = diffs.len().min(3);
    let converged = diffs[diffs.len() - tail..].iter().all(|d| *d <= tolerance);
    Ok(PreciseRepresentative { value: averages.last().map(|a| a.1).unwrap_or(f64::NAN), converged, averages })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContinuityClass {
    ContinuousPredicted,
    DiscontinuousSuspected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub point: Vec<f64>,
    pub mk: f64,
    pub mk_infinite: bool,
    pub gamma: f64,
    /// `(r, osc_u(x, r))`, largest radius first.
    pub oscillation: Vec<(f64, f64)>,
    pub holder: HolderOutcome,
    pub class: ContinuityClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema: String,
    pub weight: String,
    pub harnack_constant: f64,
    pub sigma: Option<f64>,
    pub r0: f64,
    pub probes: Vec<ProbeRecord>,
    /// Indices of continuous-predicted probes whose oscillation does not decay.
    pub discrepancies: Vec<usize>,
}

/// Parameters of [`continuity_map`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuitySettings {
    /// Largest oscillation radius; the ladder halves down to `>= 4h`.
    pub r0: f64,
    /// Radii for the maximal function; `r0 2^{-j}`, `j = 0..=8` by default.
    pub mk_radii: Vec<f64>,
    pub mk_budget: usize,
    pub harnack_constant: f64,
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl ContinuitySettings {
    pub fn new(r0: f64) -> Self {
        ContinuitySettings {
            r0,
            mk_radii: (0..=8).map(|j| r0 * 0.5f64.powi(j)).collect(),
            mk_budget: 2048,
            harnack_constant: 1.0,
            sigma: None,
            seed: 0,
        }
    }
}

/// Classify every probe by `Mk` and measure its oscillation decay.
pub fn continuity_map(
    u: &GridFunction,
    k: &Weight,
    space: &MetricSpace,
    probes: &[Vec<f64>],
    settings: &ContinuitySettings,
) -> Result<DiagnosticsReport> {
    let radii = radius_ladder(settings.r0, u.domain().h());
    let records: Vec<ProbeRecord> = probes
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            space.check_point(x)?;
            let m = maximal_function(
                k,
                space,
                x,
                &settings.mk_radii,
                settings.mk_budget,
                crate::rng::substream(settings.seed, j as u64),
            )?;
            let mk = if m.infinite { f64::INFINITY } else { m.value };
            let table = oscillation_table(u, space, x, &radii)?;
            let holder = fit_table(u, space, x, &table, settings.r0);
            Ok(ProbeRecord {
                point: x.clone(),
                mk,
                mk_infinite: m.infinite,
                gamma: gamma_factor(settings.harnack_constant, mk),
                oscillation: table,
                holder,
                class: if m.infinite {
                    ContinuityClass::DiscontinuousSuspected
                } else {
                    ContinuityClass::ContinuousPredicted
                },
            })
        })
        .collect::<Result<_>>()?;
    let discrepancies = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.class == ContinuityClass::ContinuousPredicted && !r.holder.decays())
        .map(|(i, _)| i)
        .collect();
    Ok(DiagnosticsReport {
        schema: crate::SCHEMA.to_string(),
        weight: k.name().to_string(),
        harnack_constant: settings.harnack_constant,
        sigma: settings.sigma,
        r0: settings.r0,
        probes: records,
        discrepancies,
    })
}
