use serde::{Deserialize, Serialize};

use super::classes::{evaluate_levels, sup, ConstantEstimate, SamplingPlan};
use super::quadrature::BallSample;
use super::Weight;
use crate::error::{Error, Result};
use crate::geometry::{Ball, MetricSpace};
use crate::rng::{self, substream};

const TAG_INNER: u64 = 10;
const TAG_OUTER_QUAD: u64 = 11;
const TAG_INNER_QUAD: u64 = 12;
const TAG_SUBSET: u64 = 13;

/// Smallest inner-to-outer radius ratio of a sampled nested pair.
const MIN_RADIUS_RATIO: f64 = 1.0 / 64.0;
/// Per-halving growth of a ball average that counts as divergence.
const DIVERGENCE_GROWTH: f64 = 1.10;

/// Reverse-Hölder exponent `1 + p(Q-1)/(n+p-Q)` needed for the balance
/// condition in a space of topological dimension `n` and homogeneous
/// dimension `q_dim`.
pub fn tau_exponent(p: f64, n: usize, q_dim: usize) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::invalid(format!("tau needs p > 1, got {p}")));
    }
    let (n, q) = (n as f64, q_dim as f64);
    let denom = (n - q) + p;
    if denom <= 0.0 {
        return Err(Error::OutOfRegime(format!("n + p - Q = {denom} <= 0")));
    }
    // Integer parts first, so that Q = n gives p / p = 1 exactly.
    Ok(1.0 + (q - 1.0) * (p / denom))
}

/// Exponents of the balance condition for the pair `(k^{1-p}, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceExponent {
    pub tau: f64,
    /// `(p^2 + np - p) / (n - Q + pQ)`: the class `A_s` of `k^{1-p}`.
    pub s: f64,
    /// Balance exponent `q > p`.
    pub q: f64,
}

/// Balance exponent `q = n / (t' ((s - eps) Q / p - 1))` with `t = tau`.
pub fn balance_exponent(p: f64, n: usize, q_dim: usize, eps: f64) -> Result<BalanceExponent> {
    let tau = tau_exponent(p, n, q_dim)?;
    let (nf, qf) = (n as f64, q_dim as f64);
    let s = (p * p + nf * p - p) / (nf - qf + p * qf);
    let t_conj = tau / (tau - 1.0);
    let base = (s - eps) * qf / p - 1.0;
    if !(eps >= 0.0) || base <= 0.0 {
        return Err(Error::OutOfRegime(format!("(s - eps) Q / p - 1 = {base} <= 0")));
    }
    let q = nf / (t_conj * base);
    if q <= p {
        return Err(Error::OutOfRegime(format!("balance exponent q = {q} <= p = {p}")));
    }
    Ok(BalanceExponent { tau, s, q })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstPair {
    pub inner: Ball,
    pub outer: Ball,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub p: f64,
    pub q: f64,
    pub pairs: usize,
    /// Empirical best constant `C`.
    pub constant: ConstantEstimate,
    /// Some outer-ball average kept growing with the budget.
    pub divergent_average: bool,
    pub unbounded_suspected: bool,
    pub worst: Option<WorstPair>,
}

struct PairValue {
    ratio: f64,
    v_outer: f64,
    w_outer: f64,
    inner: Ball,
}

fn inner_ball(space: &MetricSpace, outer: &Ball, seed: u64, i: usize) -> Ball {
    let mut rng = rng::stream(seed, substream(TAG_INNER, i as u64));
    let scale = rng::log_uniform(&mut rng, MIN_RADIUS_RATIO, 1.0);
    let r1 = outer.radius * scale;
    let slack = outer.radius - r1;
    let mut center = outer.center.clone();
    if slack > 0.0 {
        let room = Ball { center: outer.center.clone(), radius: slack };
        space.draw_in_ball(&room, &mut rng, &mut center);
    }
    Ball { center, radius: r1 }
}

fn masses(
    w: &Weight,
    v: &Weight,
    space: &MetricSpace,
    ball: &Ball,
    budget: usize,
    seed: u64,
    stream: u64,
) -> Result<(f64, f64)> {
    // Both weights share a sample, stratified for `v`'s singular set.
    let singular = v.singular_set().or(w.singular_set());
    let s = BallSample::draw(space, ball, singular, budget, seed, stream)?;
    let wv = s.evaluate(w)?;
    let vv = s.evaluate(v)?;
    if let Some(i) = wv.iter().zip(&vv).position(|(a, b)| *a > *b * (1.0 + 1e-12)) {
        return Err(Error::PreconditionViolation(format!(
            "w > v at {:?}: {} > {}",
            s.points().get(i),
            wv[i],
            vv[i]
        )));
    }
    let vol = space.ball_volume(ball);
    Ok((vol * s.average(&wv).mean, vol * s.average(&vv).mean))
}

/// Best constant in `(r1/r2) (v(B1)/v(B2))^{1/q} <= C (w(B1)/w(B2))^{1/p}`
/// over sampled nested pairs `B1 ⊆ B2`.
///
/// Outer balls are the ball family of `plan`; each inner ball has a
/// log-uniform radius ratio in `[1/64, 1]` and a center drawn so that it
/// stays inside the outer ball.
pub fn balance_check(
    w: &Weight,
    v: &Weight,
    p: f64,
    q: f64,
    space: &MetricSpace,
    plan: &SamplingPlan,
) -> Result<BalanceReport> {
    if !(p > 1.0 && q > p) {
        return Err(Error::invalid(format!("balance check needs q > p > 1, got p={p}, q={q}")));
    }
    if plan.domain.dim() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), got: plan.domain.dim() });
    }
    let levels = evaluate_levels(plan, |outer, i, budget| {
        let inner = inner_ball(space, outer, plan.seed, i);
        let (w2, v2) = masses(w, v, space, outer, budget, plan.seed, SamplingPlan::quad_stream(TAG_OUTER_QUAD, i, budget))?;
        let (w1, v1) = masses(w, v, space, &inner, budget, plan.seed, SamplingPlan::quad_stream(TAG_INNER_QUAD, i, budget))?;
        let ratio = (inner.radius / outer.radius) * (v1 / v2).powf(1.0 / q) / (w1 / w2).powf(1.0 / p);
        let vol = space.ball_volume(outer);
        Ok(PairValue { ratio, v_outer: v2 / vol, w_outer: w2 / vol, inner })
    })?;
    let sups: Vec<f64> = levels.iter().map(|l| sup(l.iter().map(|(pv, _)| pv.ratio))).collect();
    let constant = ConstantEstimate::from_levels(sups);

    // Balls of the coarsest level are evaluated at every budget.
    let divergent_average = (0..levels[0].len()).any(|i| {
        let grows = |get: fn(&PairValue) -> f64| {
            levels.windows(2).all(|l| get(&l[1][i].0) >= DIVERGENCE_GROWTH * get(&l[0][i].0))
        };
        grows(|pv| pv.v_outer) || grows(|pv| pv.w_outer)
    });
    let worst = levels.last().and_then(|l| {
        l.iter()
            .max_by(|a, b| a.0.ratio.total_cmp(&b.0.ratio))
            .map(|(pv, outer)| WorstPair { inner: pv.inner.clone(), outer: outer.clone(), ratio: pv.ratio })
    });
    Ok(BalanceReport {
        p,
        q,
        pairs: plan.balls,
        unbounded_suspected: constant.unbounded_suspected || divergent_average,
        constant,
        divergent_average,
        worst,
    })
}

/// `(v(B)/w(B))^{1/p}` from a shared ball sample.
pub fn mu_p(
    w: &Weight,
    v: &Weight,
    p: f64,
    space: &MetricSpace,
    ball: &Ball,
    budget: usize,
    seed: u64,
) -> Result<f64> {
    let singular = v.singular_set().or(w.singular_set());
    let s = BallSample::draw(space, ball, singular, budget, seed, 0)?;
    let aw = s.average(&s.evaluate(w)?).mean;
    let av = s.average(&s.evaluate(v)?).mean;
    Ok((av / aw).powf(1.0 / p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMassReport {
    pub subsets: usize,
    /// Violations of `w(E)/w(B) <= [w]_{RH_t} (|E|/|B|)^{1/t'}`.
    pub rh_violations: usize,
    /// Violations of `|E|/|B| <= ([w]_{A_p} w(E)/w(B))^{1/p}`.
    pub ap_violations: usize,
    /// Largest `lhs / rhs` seen for each inequality.
    pub rh_worst: f64,
    pub ap_worst: f64,
}

/// Check both subset-mass inequalities on random finite unions of sub-balls
/// of `ball`, using previously estimated constants `ap` and `rh`.
///
/// Subset `0` is the ball itself.
#[allow(clippy::too_many_arguments)]
pub fn subset_mass_check(
    weight: &Weight,
    p: f64,
    t: f64,
    ap: f64,
    rh: f64,
    space: &MetricSpace,
    ball: &Ball,
    subsets: usize,
    budget: usize,
    seed: u64,
) -> Result<SubsetMassReport> {
    if !(p > 1.0 && t > 1.0) {
        return Err(Error::invalid("subset mass check needs p > 1 and t > 1"));
    }
    let s = BallSample::draw(space, ball, weight.singular_set(), budget, seed, 0)?;
    let vals = s.evaluate(weight)?;
    let total = s.average(&vals).mean;
    let t_conj = t / (t - 1.0);
    let tol = 1e-12;
    let mut report =
        SubsetMassReport { subsets, rh_violations: 0, ap_violations: 0, rh_worst: 0.0, ap_worst: 0.0 };
    for j in 0..subsets {
        let pieces: Vec<Ball> = if j == 0 {
            vec![ball.clone()]
        } else {
            let mut rng = rng::stream(seed, substream(TAG_SUBSET, j as u64));
            let m = 1 + (rng::open_unit(&mut rng) * 4.0).floor().min(3.0) as usize;
            (0..m)
                .map(|_| {
                    let mut c = ball.center.clone();
                    space.draw_in_ball(ball, &mut rng, &mut c);
                    let r = ball.radius * (0.05 + 0.45 * rng::open_unit(&mut rng));
                    Ball { center: c, radius: r }
                })
                .collect()
        };
        let inside = |x: &[f64]| pieces.iter().any(|b| space.dist(x, &b.center) < b.radius);
        let frac = s.average_pointwise(&vals, |x, _| if inside(x) { 1.0 } else { 0.0 });
        let mass = s.average_pointwise(&vals, |x, v| if inside(x) { v } else { 0.0 }) / total;

        let rh_rhs = rh * frac.powf(1.0 / t_conj);
        let ap_rhs = (ap * mass).powf(1.0 / p);
        if mass > rh_rhs * (1.0 + tol) {
            report.rh_violations += 1;
        }
        if frac > ap_rhs * (1.0 + tol) {
            report.ap_violations += 1;
        }
        if rh_rhs > 0.0 {
            report.rh_worst = report.rh_worst.max(mass / rh_rhs);
        }
        if ap_rhs > 0.0 {
            report.ap_worst = report.ap_worst.max(frac / ap_rhs);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDomain;

    #[test]
    fn tau_values() {
        for p in [1.5, 2.0, 3.0, 7.0] {
            for n in 2..=4 {
                assert_eq!(tau_exponent(p, n, n).unwrap(), n as f64);
            }
        }
        assert_eq!(tau_exponent(2.0, 3, 4).unwrap(), 7.0);
        assert!(matches!(tau_exponent(1.0 + 1e-3, 3, 5), Err(Error::OutOfRegime(_))));
    }

    #[test]
    fn planar_balance_exponent() {
        let e = balance_exponent(2.0, 2, 2, 0.1).unwrap();
        assert_eq!(e.tau, 2.0);
        assert!((e.s - 1.5).abs() < 1e-15);
        assert!((e.q - 2.5).abs() < 1e-12);
    }

    #[test]
    fn lebesgue_pair_matches_scaling() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let one = Weight::constant(1.0);
        let plan = SamplingPlan::new(BoxDomain::cube(2, -1.0, 1.0).unwrap()).with_balls(64).with_budget(32);
        let r = balance_check(&one, &one, 2.0, 2.5, &e2, &plan).unwrap();
        // ratio = (r1/r2)^{1 + Q(1/q - 1/p)} <= 1
        assert!(r.constant.value <= 1.0 + 1e-12);
        assert!(!r.unbounded_suspected);
        let worst = r.worst.unwrap();
        let s = worst.inner.radius / worst.outer.radius;
        assert!((worst.ratio - s.powf(0.8)).abs() < 1e-12);
    }

    #[test]
    fn precondition_violation_reported() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let plan = SamplingPlan::new(BoxDomain::cube(2, -1.0, 1.0).unwrap()).with_balls(8).with_budget(16);
        let err = balance_check(&Weight::constant(2.0), &Weight::constant(1.0), 2.0, 3.0, &e2, &plan);
        assert!(matches!(err, Err(Error::PreconditionViolation(_))));
    }

    #[test]
    fn mu_p_of_constants() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let b = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let c = 3.0f64;
        let m = mu_p(&Weight::constant(c.powf(-1.0)), &Weight::constant(c), 2.0, &e2, &b, 64, 0).unwrap();
        assert!((m - c).abs() < 1e-12);
    }

    #[test]
    fn whole_ball_is_equality_case() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let b = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let r = subset_mass_check(&Weight::constant(1.0), 2.0, 2.0, 1.0, 1.0, &e2, &b, 1, 256, 0).unwrap();
        assert_eq!((r.rh_violations, r.ap_violations), (0, 0));
        assert!((r.rh_worst - 1.0).abs() < 1e-12 && (r.ap_worst - 1.0).abs() < 1e-12);
    }
}
