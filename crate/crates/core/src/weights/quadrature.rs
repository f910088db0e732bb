//! Ball quadrature with singular-set stratification.
//!
//! Away from the singular set a ball is sampled uniformly. When the ball
//! center lies within two radii of the singular set, the ball is covered by
//! dyadic shells `rho_{j+1} <= dist(x, S) < rho_j`, `rho_j = rho_0 2^-j`,
//! each shell receives its own fixed number of tries. The innermost
//! neighbourhood `dist(x, S) < rho_L` is left out of the average. `L` grows
//! with the budget, so refining the budget resolves the singularity
//! further: averages of integrable weights converge while averages of
//! non-integrable ones grow by a fixed factor per doubling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SingularSet, Weight};
use crate::error::{Error, Result};
use crate::geometry::{Ball, MetricSpace, PointCloud, SpaceKind};
use crate::rng::{self, StreamRng};

/// Mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug)]
struct Stratum {
    start: usize,
    end: usize,
    tries: usize,
    volume: f64,
}

/// Weighted sample of a ball: accepted points grouped into strata.
#[derive(Clone, Debug)]
pub struct BallSample {
    points: PointCloud,
    strata: Vec<Stratum>,
}

/// Number of dyadic shells used for a given budget.
fn shell_levels(budget: usize) -> usize {
    8 + (budget.max(2) as f64).log2().ceil() as usize
}

impl BallSample {
    /// Sample `ball`, stratifying around `singular` when it is close.
    pub fn draw(
        space: &MetricSpace,
        ball: &Ball,
        singular: Option<&SingularSet>,
        budget: usize,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if budget < 16 {
            return Err(Error::invalid(format!("quadrature budget must be >= 16, got {budget}")));
        }
        space.check_point(&ball.center)?;
        let mut rng = rng::stream(seed, stream);
        match singular {
            Some(SingularSet::Point { at }) if at.len() == space.dim() => {
                let d0 = space.dist(&ball.center, at);
                if d0 < 2.0 * ball.radius {
                    return Ok(Self::point_strata(space, ball, at, d0, budget, &mut rng));
                }
            }
            Some(SingularSet::Hyperplane { axis, offset })
                if space.kind() == SpaceKind::Euclidean && *axis < space.dim() =>
            {
                let d0 = (ball.center[*axis] - offset).abs();
                if d0 < 2.0 * ball.radius {
                    return Ok(Self::slab_strata(space, ball, *axis, *offset, d0, budget, &mut rng));
                }
            }
            _ => {}
        }
        Ok(Self::uniform(space, ball, budget, &mut rng))
    }

    fn uniform(space: &MetricSpace, ball: &Ball, budget: usize, rng: &mut StreamRng) -> Self {
        let mut points = PointCloud::with_capacity(space.dim(), budget);
        let mut p = vec![0.0; space.dim()];
        for _ in 0..budget {
            space.draw_in_ball(ball, rng, &mut p);
            points.push(&p);
        }
        let strata =
            vec![Stratum { start: 0, end: budget, tries: budget, volume: space.ball_volume(ball) }];
        BallSample { points, strata }
    }

    fn point_strata(
        space: &MetricSpace,
        ball: &Ball,
        at: &[f64],
        d0: f64,
        budget: usize,
        rng: &mut StreamRng,
    ) -> Self {
        let levels = shell_levels(budget);
        let tries = (budget / levels).max(4);
        let rho0 = d0 + ball.radius;
        let gap = d0 - ball.radius;
        let c0 = space.unit_ball_volume();
        let q = space.homogeneous_dim() as i32;
        let mut sampler = StrataSampler::new(space, ball, budget, levels);
        for j in 0..levels {
            let outer = rho0 * 0.5f64.powi(j as i32);
            if outer <= gap {
                // Shells closer to `at` than `d0 - r` cannot meet the ball.
                break;
            }
            let inner = outer * 0.5;
            let shell = Ball { center: at.to_vec(), radius: outer };
            let volume = c0 * (outer.powi(q) - inner.powi(q));
            sampler.stratum(
                rng,
                tries,
                volume,
                |p| {
                    let d = space.dist(p, at);
                    d >= inner && d < outer
                },
                |rng, p| loop {
                    space.draw_in_ball(&shell, rng, p);
                    if space.dist(p, at) >= inner {
                        break;
                    }
                },
            );
        }
        sampler.finish(rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn slab_strata(
        space: &MetricSpace,
        ball: &Ball,
        axis: usize,
        offset: f64,
        d0: f64,
        budget: usize,
        rng: &mut StreamRng,
    ) -> Self {
        let n = space.dim();
        let levels = shell_levels(budget);
        let tries = (budget / levels).max(4);
        let r = ball.radius;
        let rho0 = d0 + r;
        let gap = d0 - r;
        let cross = (2.0 * r).powi(n as i32 - 1);
        let mut sampler = StrataSampler::new(space, ball, budget, levels);
        for j in 0..levels {
            let outer = rho0 * 0.5f64.powi(j as i32);
            if outer <= gap {
                break;
            }
            let inner = outer * 0.5;
            let volume = 2.0 * (outer - inner) * cross;
            sampler.stratum(
                rng,
                tries,
                volume,
                |p| {
                    let d = (p[axis] - offset).abs();
                    d >= inner && d < outer
                },
                |rng, p| {
                    for (k, pk) in p.iter_mut().enumerate() {
                        if k == axis {
                            let mag = inner + (outer - inner) * rng.gen::<f64>();
                            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                            *pk = offset + sign * mag;
                        } else {
                            *pk = ball.center[k] + r * (2.0 * rng.gen::<f64>() - 1.0);
                        }
                    }
                },
            );
        }
        sampler.finish(rng)
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_stratified(&self) -> bool {
        self.strata.len() > 1
    }

    /// Evaluate `w` at every sample; non-finite or non-positive values are
    /// reported as singular samples.
    pub fn evaluate(&self, w: &Weight) -> Result<Vec<f64>> {
        if let Some(c) = w.constant_value() {
            return Ok(vec![c; self.len()]);
        }
        self.points
            .iter()
            .map(|x| {
                let v = w.eval(x);
                if v.is_finite() && v > 0.0 {
                    Ok(v)
                } else {
                    Err(Error::SingularSample { point: x.to_vec() })
                }
            })
            .collect()
    }

    /// Average of `g(values[i])` over the ball.
    pub fn average_with(&self, values: &[f64], g: impl Fn(f64) -> f64) -> Estimate {
        debug_assert_eq!(values.len(), self.len());
        if self.strata.len() == 1 {
            let n = values.len() as f64;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for &v in values {
                let y = g(v);
                sum += y;
                sum2 += y * y;
            }
            let mean = sum / n;
            let var = if n > 1.0 { ((sum2 / n - mean * mean) * n / (n - 1.0)).max(0.0) } else { 0.0 };
            return Estimate { mean, std_err: (var / n).sqrt() };
        }
        let mut num = 0.0;
        let mut den = 0.0;
        let mut var_num = 0.0;
        for s in &self.strata {
            let t = s.tries as f64;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for &v in &values[s.start..s.end] {
                let y = g(v);
                sum += y;
                sum2 += y * y;
            }
            let scale = s.volume / t;
            num += scale * sum;
            den += scale * (s.end - s.start) as f64;
            if t > 1.0 {
                let m = sum / t;
                let var = ((sum2 / t - m * m) * t / (t - 1.0)).max(0.0);
                var_num += s.volume * s.volume * var / t;
            }
        }
        if den <= 0.0 {
            return Estimate { mean: f64::NAN, std_err: f64::INFINITY };
        }
        Estimate { mean: num / den, std_err: var_num.sqrt() / den }
    }

    pub fn average(&self, values: &[f64]) -> Estimate {
        self.average_with(values, |v| v)
    }

    /// Average of `g(x, values[i])`, for indicator-type integrands.
    pub fn average_pointwise(&self, values: &[f64], g: impl Fn(&[f64], f64) -> f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for s in &self.strata {
            let scale = s.volume / s.tries as f64;
            for i in s.start..s.end {
                num += scale * g(self.points.get(i), values[i]);
                den += scale;
            }
        }
        num / den
    }
}

/// Builds a stratified sample. Each stratum is sampled by rejection from
/// whichever of the stratum and the ball has the smaller volume.
struct StrataSampler<'a> {
    space: &'a MetricSpace,
    ball: &'a Ball,
    ball_volume: f64,
    budget: usize,
    points: PointCloud,
    strata: Vec<Stratum>,
    p: Vec<f64>,
}

impl<'a> StrataSampler<'a> {
    fn new(space: &'a MetricSpace, ball: &'a Ball, budget: usize, levels: usize) -> Self {
        StrataSampler {
            space,
            ball,
            ball_volume: space.ball_volume(ball),
            budget,
            points: PointCloud::with_capacity(space.dim(), budget),
            strata: Vec::with_capacity(levels),
            p: vec![0.0; space.dim()],
        }
    }

    fn stratum(
        &mut self,
        rng: &mut StreamRng,
        tries: usize,
        volume: f64,
        contains: impl Fn(&[f64]) -> bool,
        mut draw: impl FnMut(&mut StreamRng, &mut [f64]),
    ) {
        let start = self.points.len();
        let from_stratum = volume <= self.ball_volume;
        for _ in 0..tries {
            let hit = if from_stratum {
                draw(rng, &mut self.p);
                self.space.dist(&self.p, &self.ball.center) < self.ball.radius
            } else {
                self.space.draw_in_ball(self.ball, rng, &mut self.p);
                contains(&self.p)
            };
            if hit {
                self.points.push(&self.p);
            }
        }
        let volume = if from_stratum { volume } else { self.ball_volume };
        self.strata.push(Stratum { start, end: self.points.len(), tries, volume });
    }

    fn finish(self, rng: &mut StreamRng) -> BallSample {
        if self.points.is_empty() {
            return BallSample::uniform(self.space, self.ball, self.budget, rng);
        }
        BallSample { points: self.points, strata: self.strata }
    }
}

/// Monte-Carlo average of `weight` over `ball`.
pub fn ball_average(
    weight: &Weight,
    space: &MetricSpace,
    ball: &Ball,
    budget: usize,
    seed: u64,
) -> Result<Estimate> {
    let sample = BallSample::draw(space, ball, weight.singular_set(), budget, seed, 0)?;
    let values = sample.evaluate(weight)?;
    Ok(sample.average(&values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_weight_average_is_exact() {
        let e3 = MetricSpace::euclidean(3).unwrap();
        for budget in [16, 100, 4096] {
            let b = Ball::new(vec![0.3, 0.1, -2.0], 0.7).unwrap();
            let est = ball_average(&Weight::constant(5.0), &e3, &b, budget, 9).unwrap();
            assert_eq!(est.mean, 5.0);
        }
    }

    #[test]
    fn budget_below_sixteen_is_rejected() {
        let e1 = MetricSpace::euclidean(1).unwrap();
        let b = Ball::new(vec![0.0], 1.0).unwrap();
        assert!(ball_average(&Weight::constant(1.0), &e1, &b, 15, 0).is_err());
    }

    #[test]
    fn sqrt_weight_on_interval() {
        // int_0^1 s^(1/2) ds = 2/3
        let e1 = MetricSpace::euclidean(1).unwrap();
        let b = Ball::new(vec![0.0], 1.0).unwrap();
        let est = ball_average(&Weight::radial_power(1, 0.5), &e1, &b, 20_000, 3).unwrap();
        assert!((est.mean - 2.0 / 3.0).abs() < 3.0 * est.std_err, "{est:?}");
    }

    #[test]
    fn inverse_cube_root_on_disc() {
        // (1/pi) int_0^1 r^(-1/3) 2 pi r dr = 6/5
        let e2 = MetricSpace::euclidean(2).unwrap();
        let b = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let est = ball_average(&Weight::radial_power(2, -1.0 / 3.0), &e2, &b, 20_000, 5).unwrap();
        assert!((est.mean - 1.2).abs() < 3.0 * est.std_err, "{est:?}");
    }

    #[test]
    fn stratified_sample_stays_in_ball() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let b = Ball::new(vec![0.05, 0.2], 0.3).unwrap();
        let k = Weight::axis_power(-1.0 / 3.0);
        let s = BallSample::draw(&e2, &b, k.singular_set(), 2000, 1, 0).unwrap();
        assert!(s.is_stratified());
        assert!(s.points().iter().all(|p| e2.dist(p, &b.center) < b.radius));
    }

    #[test]
    fn axis_weight_average_matches_closed_form() {
        // Ball centered on the axis: avg of |x1|^a over the unit disc
        // = (1/pi) int int |x|^a = 2 Gamma-free form computed by 1-D quadrature below.
        let e2 = MetricSpace::euclidean(2).unwrap();
        let a = -1.0 / 3.0;
        let b = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let est = ball_average(&Weight::axis_power(a), &e2, &b, 40_000, 8).unwrap();
        // oracle: (2/pi) int_{-1}^{1} |x|^a sqrt(1-x^2) dx via substitution x = s^3 (removes singularity)
        let m = 200_000;
        let mut acc = 0.0;
        for i in 0..m {
            let s = (i as f64 + 0.5) / m as f64;
            let x: f64 = s * s * s;
            acc += x.powf(a) * (1.0 - x * x).sqrt() * 3.0 * s * s / m as f64;
        }
        let exact = 2.0 * 2.0 * acc / std::f64::consts::PI;
        assert!((est.mean - exact).abs() < 3.0 * est.std_err + 1e-6, "{} vs {exact} ({})", est.mean, est.std_err);
    }

    #[test]
    fn non_integrable_average_grows_with_budget() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let b = Ball::new(vec![0.1, 0.0], 0.5).unwrap();
        let w = Weight::radial_power(2, -3.0);
        let mut last = 0.0;
        for budget in [256, 1024, 4096, 16384] {
            let m = ball_average(&w, &e2, &b, budget, 2).unwrap().mean;
            assert!(m > 1.5 * last, "{m} after {last}");
            last = m;
        }
    }
}
