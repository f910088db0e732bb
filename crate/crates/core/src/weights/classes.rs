use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::BallSample;
use super::{conjugate, Weight};
use crate::error::{Error, Result};
use crate::geometry::{Ball, BoxDomain, MetricSpace, RadiusWindow, SpaceKind};
use crate::rng::{self, substream};

/// Relative growth below which successive suprema count as a plateau.
pub const PLATEAU_TOLERANCE: f64 = 0.01;

const PLATEAU_DOUBLINGS: usize = 3;
const WORST_CASES: usize = 5;

const TAG_BALL: u64 = 0;
const TAG_QUAD: u64 = 1;
const TAG_POINT: u64 = 2;
const TAG_RADIUS: u64 = 3;
const TAG_DOUBLE: u64 = 4;

/// Random ball family: centers uniform in `domain`, radii log-uniform in
/// `window`.
///
/// The family is evaluated at four refinement levels: the full
/// `(balls, budget)` and its successive halvings. Ball `i` is the same
/// geometric ball at every level, so the level families are nested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub domain: BoxDomain,
    pub window: RadiusWindow,
    pub balls: usize,
    pub budget: usize,
    pub seed: u64,
}

impl SamplingPlan {
    /// Defaults: window `[1e-3 diam, diam]`, 4096 balls, 4096 points per ball.
    pub fn new(domain: BoxDomain) -> Self {
        let window = RadiusWindow::for_diameter(domain.diameter());
        SamplingPlan { domain, window, balls: 4096, budget: 4096, seed: 0 }
    }

    pub fn with_balls(mut self, balls: usize) -> Self {
        self.balls = balls;
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_window(mut self, window: RadiusWindow) -> Self {
        self.window = window;
        self
    }

    fn validate(&self, space: &MetricSpace) -> Result<()> {
        if self.domain.dim() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), got: self.domain.dim() });
        }
        if self.balls == 0 {
            return Err(Error::invalid("ball count must be positive"));
        }
        if self.budget < 16 {
            return Err(Error::invalid("budget must be at least 16"));
        }
        Ok(())
    }

    /// `(balls, budget)` per refinement level, coarsest first.
    pub fn levels(&self) -> Vec<(usize, usize)> {
        (0..=PLATEAU_DOUBLINGS)
            .map(|l| {
                let shift = PLATEAU_DOUBLINGS - l;
                ((self.balls >> shift).max(1), (self.budget >> shift).max(16))
            })
            .collect()
    }

    pub fn ball(&self, i: usize) -> Ball {
        let mut rng = rng::stream(self.seed, substream(TAG_BALL, i as u64));
        let center = self.domain.sample(&mut rng);
        let radius = rng::log_uniform(&mut rng, self.window.min, self.window.max);
        Ball { center, radius }
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        let mut rng = rng::stream(self.seed, substream(TAG_POINT, i as u64));
        self.domain.sample(&mut rng)
    }

    pub(super) fn quad_stream(tag: u64, i: usize, budget: usize) -> u64 {
        substream(substream(tag, i as u64), budget as u64)
    }
}

/// Supremum estimate with its refinement history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    /// Supremum at the finest level.
    pub value: f64,
    pub unbounded_suspected: bool,
    /// Running suprema, coarsest level first.
    pub levels: Vec<f64>,
}

impl ConstantEstimate {
    pub fn from_levels(levels: Vec<f64>) -> Self {
        let value = *levels.last().unwrap_or(&f64::NAN);
        let diverging = levels.iter().any(|v| !v.is_finite());
        let growing = levels.len() > 1
            && levels.windows(2).all(|w| w[1] >= w[0] * (1.0 + PLATEAU_TOLERANCE));
        ConstantEstimate { value, unbounded_suspected: diverging || growing, levels }
    }

    pub fn is_finite(&self) -> bool {
        !self.unbounded_suspected && self.value.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub ap: Option<ConstantEstimate>,
    pub a1: Option<ConstantEstimate>,
    pub rh: Option<ConstantEstimate>,
    pub doubling: Option<ConstantEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub class: String,
    pub center: Vec<f64>,
    pub radius: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub schema: String,
    pub weight: String,
    pub space: SpaceKind,
    pub p: Option<f64>,
    pub t: Option<f64>,
    pub estimates: Estimates,
    pub window: RadiusWindow,
    pub balls: usize,
    pub budget: usize,
    pub seed: u64,
    pub worst_cases: Vec<WorstCase>,
}

impl WeightReport {
    fn empty(weight: &Weight, space: &MetricSpace, plan: &SamplingPlan) -> Self {
        WeightReport {
            schema: crate::SCHEMA.to_string(),
            weight: weight.name().to_string(),
            space: space.kind(),
            p: None,
            t: None,
            estimates: Estimates::default(),
            window: plan.window,
            balls: plan.balls,
            budget: plan.budget,
            seed: plan.seed,
            worst_cases: Vec::new(),
        }
    }

    /// Fold the estimates of `other` into `self`.
    pub fn merge(&mut self, other: WeightReport) {
        self.p = self.p.or(other.p);
        self.t = self.t.or(other.t);
        let e = other.estimates;
        self.estimates.ap = self.estimates.ap.take().or(e.ap);
        self.estimates.a1 = self.estimates.a1.take().or(e.a1);
        self.estimates.rh = self.estimates.rh.take().or(e.rh);
        self.estimates.doubling = self.estimates.doubling.take().or(e.doubling);
        self.worst_cases.extend(other.worst_cases);
    }
}

struct FamilyResult {
    levels: Vec<f64>,
    finest: Vec<(f64, Ball)>,
}

pub(super) fn sup(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) })
}

/// Evaluate `f` on every ball of every level, coarsest level first.
pub(super) fn evaluate_levels<T, F>(plan: &SamplingPlan, f: F) -> Result<Vec<Vec<(T, Ball)>>>
where
    T: Send,
    F: Fn(&Ball, usize, usize) -> Result<T> + Sync,
{
    plan.levels()
        .into_iter()
        .map(|(balls, budget)| {
            (0..balls)
                .into_par_iter()
                .map(|i| {
                    let ball = plan.ball(i);
                    f(&ball, i, budget).map(|r| (r, ball))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn evaluate_family<F>(plan: &SamplingPlan, ratio: F) -> Result<FamilyResult>
where
    F: Fn(&Ball, usize, usize) -> Result<f64> + Sync,
{
    let mut all = evaluate_levels(plan, ratio)?;
    let levels = all.iter().map(|l| sup(l.iter().map(|(r, _)| *r))).collect();
    let finest = all.pop().unwrap_or_default();
    Ok(FamilyResult { levels, finest })
}

pub(super) fn worst_cases(class: &str, mut finest: Vec<(f64, Ball)>) -> Vec<WorstCase> {
    finest.sort_by(|a, b| b.0.total_cmp(&a.0));
    finest
        .into_iter()
        .take(WORST_CASES)
        .map(|(ratio, ball)| WorstCase {
            class: class.to_string(),
            center: ball.center,
            radius: ball.radius,
            ratio,
        })
        .collect()
}

fn check_weight_space(plan: &SamplingPlan, space: &MetricSpace) -> Result<()> {
    plan.validate(space)
}

/// Estimate `[w]_{A_p}`: sup over balls of `avg(w) avg(w^{1-p'})^{p-1}`.
///
/// The doubling ratio `w(2B)/w(B)` is estimated on the same ball family.
pub fn ap_constant(
    weight: &Weight,
    p: f64,
    space: &MetricSpace,
    plan: &SamplingPlan,
) -> Result<WeightReport> {
    if !(p > 1.0) {
        return Err(Error::invalid(format!("A_p needs p > 1, got {p}")));
    }
    check_weight_space(plan, space)?;
    let dual = 1.0 - conjugate(p);
    let fam = evaluate_family(plan, |ball, i, budget| {
        let s = BallSample::draw(
            space,
            ball,
            weight.singular_set(),
            budget,
            plan.seed,
            SamplingPlan::quad_stream(TAG_QUAD, i, budget),
        )?;
        let v = s.evaluate(weight)?;
        let a = s.average(&v).mean;
        let b = s.average_with(&v, |w| w.powf(dual)).mean;
        Ok(a * b.powf(p - 1.0))
    })?;
    let two_q = 2f64.powi(space.homogeneous_dim() as i32);
    let dbl = evaluate_family(plan, |ball, i, budget| {
        let small = BallSample::draw(
            space,
            ball,
            weight.singular_set(),
            budget,
            plan.seed,
            SamplingPlan::quad_stream(TAG_QUAD, i, budget),
        )?;
        let big = BallSample::draw(
            space,
            &ball.scaled(2.0),
            weight.singular_set(),
            budget,
            plan.seed,
            SamplingPlan::quad_stream(TAG_DOUBLE, i, budget),
        )?;
        let a_small = small.average(&small.evaluate(weight)?).mean;
        let a_big = big.average(&big.evaluate(weight)?).mean;
        Ok(two_q * a_big / a_small)
    })?;
    let mut report = WeightReport::empty(weight, space, plan);
    report.p = Some(p);
    report.estimates.ap = Some(ConstantEstimate::from_levels(fam.levels));
    report.estimates.doubling = Some(ConstantEstimate::from_levels(dbl.levels));
    report.worst_cases = worst_cases("A_p", fam.finest);
    Ok(report)
}

/// Estimate `[w]_{RH_t}`: sup over balls of `avg(w^t)^{1/t} / avg(w)`.
pub fn rh_constant(
    weight: &Weight,
    t: f64,
    space: &MetricSpace,
    plan: &SamplingPlan,
) -> Result<WeightReport> {
    if !(t > 1.0) {
        return Err(Error::invalid(format!("RH_t needs t > 1, got {t}")));
    }
    check_weight_space(plan, space)?;
    let fam = evaluate_family(plan, |ball, i, budget| {
        let s = BallSample::draw(
            space,
            ball,
            weight.singular_set(),
            budget,
            plan.seed,
            SamplingPlan::quad_stream(TAG_QUAD, i, budget),
        )?;
        let v = s.evaluate(weight)?;
        let a = s.average(&v).mean;
        let b = s.average_with(&v, |w| w.powf(t)).mean;
        Ok(b.powf(1.0 / t) / a)
    })?;
    let mut report = WeightReport::empty(weight, space, plan);
    report.t = Some(t);
    report.estimates.rh = Some(ConstantEstimate::from_levels(fam.levels));
    report.worst_cases = worst_cases("RH_t", fam.finest);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusAverage {
    pub radius: f64,
    pub average: f64,
    pub std_err: f64,
}

/// Discretized maximal function at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalEstimate {
    /// Largest ball average over the radius set.
    pub value: f64,
    /// Averages grow by at least 10% per halving over the last four halvings.
    pub infinite: bool,
    pub averages: Vec<RadiusAverage>,
}

const DIVERGENCE_GROWTH: f64 = 1.10;
const DIVERGENCE_STEPS: usize = 4;

fn maximal_with_stream(
    weight: &Weight,
    space: &MetricSpace,
    x: &[f64],
    radii: &[f64],
    budget: usize,
    seed: u64,
    stream: u64,
) -> Result<MaximalEstimate> {
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    let mut averages = Vec::with_capacity(radii.len());
    for (k, &r) in radii.iter().enumerate() {
        let ball = Ball::new(x.to_vec(), r)?;
        let s = BallSample::draw(
            space,
            &ball,
            weight.singular_set(),
            budget,
            seed,
            substream(stream, k as u64),
        )?;
        let e = s.average(&s.evaluate(weight)?);
        averages.push(RadiusAverage { radius: r, average: e.mean, std_err: e.std_err });
    }
    let value = sup(averages.iter().map(|a| a.average));
    let infinite = !value.is_finite()
        || (averages.len() > DIVERGENCE_STEPS
            && averages[averages.len() - DIVERGENCE_STEPS - 1..]
                .windows(2)
                .all(|w| w[1].average >= DIVERGENCE_GROWTH * w[0].average));
    Ok(MaximalEstimate { value, infinite, averages })
}

/// `max_r avg_{B(x,r)} w` over `radii`, with a divergence flag.
pub fn maximal_function(
    weight: &Weight,
    space: &MetricSpace,
    x: &[f64],
    radii: &[f64],
    budget: usize,
    seed: u64,
) -> Result<MaximalEstimate> {
    space.check_point(x)?;
    if radii.is_empty() {
        return Err(Error::invalid("radius set is empty"));
    }
    maximal_with_stream(weight, space, x, radii, budget, seed, TAG_RADIUS)
}

/// Estimate `[w]_{A_1}`: sup over sampled points of `Mw(x) / w(x)`.
///
/// `plan.balls` is the number of points; radii are the dyadic ladder of
/// `plan.window`.
pub fn a1_constant(weight: &Weight, space: &MetricSpace, plan: &SamplingPlan) -> Result<WeightReport> {
    check_weight_space(plan, space)?;
    let radii = plan.window.dyadic_ladder();
    let mut levels = Vec::new();
    let mut finest = Vec::new();
    let all = plan.levels();
    for (l, &(points, budget)) in all.iter().enumerate() {
        let vals: Vec<(f64, Ball)> = (0..points)
            .into_par_iter()
            .map(|i| {
                let x = plan.point(i);
                let wx = weight.eval(&x);
                if !(wx.is_finite() && wx > 0.0) {
                    return Err(Error::SingularSample { point: x });
                }
                let m = maximal_with_stream(
                    weight,
                    space,
                    &x,
                    &radii,
                    budget,
                    plan.seed,
                    SamplingPlan::quad_stream(TAG_RADIUS, i, budget),
                )?;
                let arg = m
                    .averages
                    .iter()
                    .max_by(|a, b| a.average.total_cmp(&b.average))
                    .map(|a| a.radius)
                    .unwrap_or(radii[0]);
                Ok((m.value / wx, Ball { center: x, radius: arg }))
            })
            .collect::<Result<_>>()?;
        levels.push(sup(vals.iter().map(|(r, _)| *r)));
        if l + 1 == all.len() {
            finest = vals;
        }
    }
    let mut report = WeightReport::empty(weight, space, plan);
    report.estimates.a1 = Some(ConstantEstimate::from_levels(levels));
    report.worst_cases = worst_cases("A_1", finest);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerClassReport {
    pub p: f64,
    pub t: f64,
    /// `q = t (p - 1) + 1`.
    pub q: f64,
    pub ap: ConstantEstimate,
    pub rh: ConstantEstimate,
    /// `[w^t]_{A_q}`.
    pub power_ap: ConstantEstimate,
    /// False only if `w ∈ A_p ∩ RH_t` looks finite while `w^t ∈ A_q` does not.
    pub consistent: bool,
}

/// Check that `w ∈ A_p ∩ RH_t` comes with `w^t ∈ A_q`, `q = t(p-1)+1`.
pub fn power_class_check(
    weight: &Weight,
    p: f64,
    t: f64,
    space: &MetricSpace,
    plan: &SamplingPlan,
) -> Result<PowerClassReport> {
    let q = t * (p - 1.0) + 1.0;
    let ap = ap_constant(weight, p, space, plan)?.estimates.ap.expect("ap estimate");
    let rh = rh_constant(weight, t, space, plan)?.estimates.rh.expect("rh estimate");
    let power_ap = ap_constant(&weight.powf(t), q, space, plan)?.estimates.ap.expect("ap estimate");
    let consistent = !(ap.is_finite() && rh.is_finite()) || power_ap.is_finite();
    Ok(PowerClassReport { p, t, q, ap, rh, power_ap, consistent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan_2d(balls: usize, budget: usize) -> SamplingPlan {
        SamplingPlan::new(BoxDomain::cube(2, -1.0, 1.0).unwrap()).with_balls(balls).with_budget(budget)
    }

    #[test]
    fn levels_are_nested_halvings() {
        let p = plan_2d(64, 1024);
        assert_eq!(p.levels(), vec![(8, 128), (16, 256), (32, 512), (64, 1024)]);
        assert_eq!(plan_2d(2, 16).levels()[0], (1, 16));
    }

    #[test]
    fn constant_weight_constants_are_one() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let w = Weight::constant(3.0);
        let plan = plan_2d(32, 64);
        let ap = ap_constant(&w, 2.5, &e2, &plan).unwrap();
        let est = ap.estimates.ap.unwrap();
        assert!((est.value - 1.0).abs() < 1e-12, "{est:?}");
        assert!(!est.unbounded_suspected);
        let rh = rh_constant(&w, 2.0, &e2, &plan).unwrap().estimates.rh.unwrap();
        assert!((rh.value - 1.0).abs() < 1e-12);
        let a1 = a1_constant(&w, &e2, &plan.clone().with_balls(8)).unwrap().estimates.a1.unwrap();
        assert!((a1.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_classification() {
        assert!(!ConstantEstimate::from_levels(vec![1.2, 1.25, 1.251, 1.252]).unbounded_suspected);
        assert!(ConstantEstimate::from_levels(vec![2.0, 4.0, 8.0, 16.0]).unbounded_suspected);
        assert!(ConstantEstimate::from_levels(vec![2.0, f64::INFINITY, 8.0, 16.0]).unbounded_suspected);
    }

    #[test]
    fn maximal_function_of_constant_is_constant() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let m = maximal_function(&Weight::constant(1.0), &e2, &[0.2, 0.1], &[0.5, 0.25, 0.125], 64, 1)
            .unwrap();
        assert_eq!(m.value, 1.0);
        assert!(!m.infinite);
    }

    #[test]
    fn maximal_function_detects_axis_singularity() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let k = Weight::axis_power(-1.0 / 3.0);
        let radii: Vec<f64> = (0..8).map(|j| 0.5 * 0.5f64.powi(j)).collect();
        let on_axis = maximal_function(&k, &e2, &[0.0, 0.3], &radii, 2048, 4).unwrap();
        assert!(on_axis.infinite, "{on_axis:?}");
        let off_axis = maximal_function(&k, &e2, &[0.3, 0.3], &radii, 2048, 4).unwrap();
        assert!(!off_axis.infinite, "{off_axis:?}");
        assert!(off_axis.value.is_finite());
    }
}
