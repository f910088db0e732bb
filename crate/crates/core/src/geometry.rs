//! Metric-space backends: Euclidean `R^n` and the first Heisenberg group
//! with the Korányi gauge distance.
//!
//! Both backends have exactly homogeneous balls, `|B(x, r)| = c0 r^Q`, so
//! ball volumes are closed form once the unit-ball constant `c0` is known.
//! For the Heisenberg group `c0` is integrated by Monte Carlo once per
//! process and cached.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Seed used for the cached Heisenberg unit-ball volume.
pub const HEISENBERG_VOLUME_SEED: u64 = 0x4845_4953;
/// Sample count used for the cached Heisenberg unit-ball volume.
pub const HEISENBERG_VOLUME_SAMPLES: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Euclidean,
    Heisenberg1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpace {
    kind: SpaceKind,
    dim: usize,
    homogeneous_dim: usize,
    unit_ball_volume: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Ball { center, radius })
    }

    /// Same center, radius scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Ball {
        Ball { center: self.center.clone(), radius: self.radius * factor }
    }
}

/// Flat storage for a list of points of a common dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize) -> Self {
        PointCloud { dim, coords: Vec::new() }
    }

    pub fn with_capacity(dim: usize, count: usize) -> Self {
        PointCloud { dim, coords: Vec::with_capacity(dim * count) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn push(&mut self, p: &[f64]) {
        debug_assert_eq!(p.len(), self.dim);
        self.coords.extend_from_slice(p);
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }
}

impl MetricSpace {
    /// Euclidean `R^dim`, `1 <= dim <= 8`.
    pub fn euclidean(dim: usize) -> Result<Self> {
        if dim == 0 || dim > 8 {
            return Err(Error::invalid(format!("euclidean dimension must be in 1..=8, got {dim}")));
        }
        Ok(MetricSpace {
            kind: SpaceKind::Euclidean,
            dim,
            homogeneous_dim: dim,
            unit_ball_volume: euclidean_unit_ball_volume(dim),
        })
    }

    /// First Heisenberg group `H^1 = R^3` with the gauge metric.
    pub fn heisenberg() -> Self {
        static C0: OnceLock<f64> = OnceLock::new();
        let c0 = *C0.get_or_init(|| {
            heisenberg_unit_volume_mc(HEISENBERG_VOLUME_SAMPLES, HEISENBERG_VOLUME_SEED)
        });
        MetricSpace { kind: SpaceKind::Heisenberg1, dim: 3, homogeneous_dim: 4, unit_ball_volume: c0 }
    }

    pub fn from_kind(kind: SpaceKind, dim: usize) -> Result<Self> {
        match kind {
            SpaceKind::Euclidean => Self::euclidean(dim),
            SpaceKind::Heisenberg1 => {
                if dim != 3 {
                    return Err(Error::DimensionMismatch { expected: 3, got: dim });
                }
                Ok(Self::heisenberg())
            }
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn homogeneous_dim(&self) -> usize {
        self.homogeneous_dim
    }

    pub fn unit_ball_volume(&self) -> f64 {
        self.unit_ball_volume
    }

    /// Dimension of the horizontal gradient.
    pub fn horizontal_dim(&self) -> usize {
        match self.kind {
            SpaceKind::Euclidean => self.dim,
            SpaceKind::Heisenberg1 => 2,
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.dist(x, y))
    }

    /// Distance without dimension checks.
    pub(crate) fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            SpaceKind::Euclidean => {
                x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            SpaceKind::Heisenberg1 => {
                // y^{-1} . x
                let a = x[0] - y[0];
                let b = x[1] - y[1];
                let t = x[2] - y[2] + 0.5 * (y[1] * x[0] - y[0] * x[1]);
                gauge(a, b, t)
            }
        }
    }

    /// Group product `x . y` (vector addition in the Euclidean case).
    pub fn product(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match self.kind {
            SpaceKind::Euclidean => x.iter().zip(y).map(|(a, b)| a + b).collect(),
            SpaceKind::Heisenberg1 => vec![
                x[0] + y[0],
                x[1] + y[1],
                x[2] + y[2] + 0.5 * (x[0] * y[1] - x[1] * y[0]),
            ],
        }
    }

    /// Anisotropic dilation `delta_r`.
    pub fn dilate(&self, x: &[f64], r: f64) -> Vec<f64> {
        match self.kind {
            SpaceKind::Euclidean => x.iter().map(|v| v * r).collect(),
            SpaceKind::Heisenberg1 => vec![r * x[0], r * x[1], r * r * x[2]],
        }
    }

    pub fn ball_volume(&self, ball: &Ball) -> f64 {
        self.unit_ball_volume * ball.radius.powi(self.homogeneous_dim as i32)
    }

    /// Half-widths of the bounding box of a ball centered at the identity.
    fn centered_half_widths(&self, r: f64, out: &mut [f64]) {
        out.fill(r);
        if self.kind == SpaceKind::Heisenberg1 {
            out[2] = 0.25 * r * r;
        }
    }

    /// Axis-aligned bounding box `(lo, hi)` of a ball.
    pub fn bounding_box(&self, ball: &Ball) -> (Vec<f64>, Vec<f64>) {
        let c = &ball.center;
        let r = ball.radius;
        match self.kind {
            SpaceKind::Euclidean => {
                (c.iter().map(|v| v - r).collect(), c.iter().map(|v| v + r).collect())
            }
            SpaceKind::Heisenberg1 => {
                let shear = 0.5 * r * (c[0] * c[0] + c[1] * c[1]).sqrt();
                let tw = 0.25 * r * r + shear;
                (vec![c[0] - r, c[1] - r, c[2] - tw], vec![c[0] + r, c[1] + r, c[2] + tw])
            }
        }
    }

    /// Draw one point uniformly from `ball` into `out`.
    ///
    /// Rejection from the bounding box of the ball centered at the identity,
    /// followed by left translation to the center; left translations preserve
    /// Lebesgue measure, so the result is uniform in `ball`.
    pub(crate) fn draw_in_ball(&self, ball: &Ball, rng: &mut impl Rng, out: &mut [f64]) {
        let mut hw = [0.0f64; 8];
        let hw = &mut hw[..self.dim];
        self.centered_half_widths(ball.radius, hw);
        let mut z = [0.0f64; 8];
        let z = &mut z[..self.dim];
        loop {
            for (zi, w) in z.iter_mut().zip(hw.iter()) {
                *zi = (2.0 * rng.gen::<f64>() - 1.0) * w;
            }
            let inside = match self.kind {
                SpaceKind::Euclidean => {
                    z.iter().map(|v| v * v).sum::<f64>() < ball.radius * ball.radius
                }
                SpaceKind::Heisenberg1 => gauge(z[0], z[1], z[2]) < ball.radius,
            };
            if inside {
                break;
            }
        }
        match self.kind {
            SpaceKind::Euclidean => {
                for ((o, c), zi) in out.iter_mut().zip(&ball.center).zip(z.iter()) {
                    *o = c + zi;
                }
            }
            SpaceKind::Heisenberg1 => {
                let c = &ball.center;
                out[0] = c[0] + z[0];
                out[1] = c[1] + z[1];
                out[2] = c[2] + z[2] + 0.5 * (c[0] * z[1] - c[1] * z[0]);
            }
        }
    }

    /// `count` points uniformly distributed in `ball`, deterministic in `seed`.
    pub fn sample_ball(&self, ball: &Ball, count: usize, seed: u64) -> Result<PointCloud> {
        self.check_point(&ball.center)?;
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let mut rng = rng::stream(seed, 0);
        let mut cloud = PointCloud::with_capacity(self.dim, count);
        let mut p = vec![0.0; self.dim];
        for _ in 0..count {
            self.draw_in_ball(ball, &mut rng, &mut p);
            cloud.push(&p);
        }
        Ok(cloud)
    }
}

/// Korányi gauge `((a^2 + b^2)^2 + 16 t^2)^(1/4)`.
pub fn gauge(a: f64, b: f64, t: f64) -> f64 {
    let s = a * a + b * b;
    (s * s + 16.0 * t * t).sqrt().sqrt()
}

/// Volume of the Euclidean unit ball in `R^n`.
pub fn euclidean_unit_ball_volume(n: usize) -> f64 {
    // V_n = V_{n-2} * 2 pi / n
    let mut v = if n % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if n % 2 == 0 { 2 } else { 3 };
    while k <= n {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

/// Monte-Carlo volume of the unit gauge ball of `H^1`.
///
/// Samples the box `[-1,1]^2 x [-1/4,1/4]` (volume 2) in fixed-size chunks,
/// one random stream per chunk; hit counts are integers so the parallel
/// reduction is exact.
pub fn heisenberg_unit_volume_mc(samples: u64, seed: u64) -> f64 {
    const CHUNK: u64 = 1 << 16;
    let chunks = samples.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, c);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut h = 0u64;
            for _ in 0..n {
                let a = 2.0 * rng.gen::<f64>() - 1.0;
                let b = 2.0 * rng.gen::<f64>() - 1.0;
                let t = 0.5 * rng.gen::<f64>() - 0.25;
                if gauge(a, b, t) < 1.0 {
                    h += 1;
                }
            }
            h
        })
        .sum();
    2.0 * hits as f64 / samples as f64
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("box bounds must have equal, positive length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid(format!("empty box {lo:?} .. {hi:?}")));
        }
        Ok(BoxDomain { lo, hi })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| a + (b - a) * rng.gen::<f64>()).collect()
    }
}

/// Radius interval for randomly drawn balls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusWindow {
    pub min: f64,
    pub max: f64,
}

impl RadiusWindow {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max >= min && max.is_finite()) {
            return Err(Error::invalid(format!("invalid radius window [{min}, {max}]")));
        }
        Ok(RadiusWindow { min, max })
    }

    /// `[1e-3 diam, diam]`.
    pub fn for_diameter(diam: f64) -> Self {
        RadiusWindow { min: 1e-3 * diam, max: diam }
    }

    /// Dyadic ladder `max, max/2, ...` down to (not below) `min`.
    pub fn dyadic_ladder(&self) -> Vec<f64> {
        let mut out = vec![self.max];
        let mut r = self.max;
        while r * 0.5 >= self.min * (1.0 - 1e-12) {
            r *= 0.5;
            out.push(r);
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NestedPair {
    pub inner: Ball,
    pub outer: Ball,
    pub volume_ratio: f64,
    pub radius_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthReport {
    pub space: SpaceKind,
    pub trials: usize,
    pub seed: u64,
    pub window: RadiusWindow,
    /// Least-squares slope of `log(|B1|/|B2|)` against `log(r1/r2)` over concentric pairs.
    pub concentric_exponent: f64,
    /// Smallest `d` with `d (r1/r2)^Q <= ratio` over the nested pairs.
    pub lower_constant: f64,
    /// Largest `D` needed for `ratio <= D (r1/r2)^n`.
    pub upper_constant: f64,
    /// Largest relative gap between the Monte-Carlo containment fraction and the exact ratio.
    pub max_mc_ratio_error: f64,
    pub all_within_bounds: bool,
    pub worst_pair: Option<NestedPair>,
}

/// Sample nested ball pairs and measure volume growth.
///
/// Outer balls have centers uniform in the unit box and log-uniform radii
/// in `window`; the inner ball is drawn inside the outer one so that
/// `B(x1, r1) ⊂ B(x2, r2)` follows from the triangle inequality.
pub fn volume_growth_report(
    space: &MetricSpace,
    trials: usize,
    seed: u64,
    window: RadiusWindow,
) -> Result<GrowthReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let q = space.homogeneous_dim() as f64;
    let n = space.dim() as f64;

    // concentric pairs
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut rng_c = rng::stream(seed, u64::MAX);
    for _ in 0..trials {
        let r2 = rng::log_uniform(&mut rng_c, window.min, window.max);
        let r1 = rng::log_uniform(&mut rng_c, window.min.min(r2), r2);
        if r1 == r2 {
            continue;
        }
        let center: Vec<f64> = (0..space.dim()).map(|_| rng_c.gen::<f64>()).collect();
        let v1 = space.ball_volume(&Ball { center: center.clone(), radius: r1 });
        let v2 = space.ball_volume(&Ball { center, radius: r2 });
        let x = (r1 / r2).ln();
        let y = (v1 / v2).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let m = trials as f64;
    let concentric_exponent = (m * sxy - sx * sy) / (m * sxx - sx * sx);

    let pairs: Vec<(NestedPair, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let r2 = rng::log_uniform(&mut rng, window.min, window.max);
            let r1 = rng::log_uniform(&mut rng, window.min.min(r2), r2);
            let c2: Vec<f64> = (0..space.dim()).map(|_| rng.gen::<f64>()).collect();
            let outer = Ball { center: c2, radius: r2 };
            let slack = r2 - r1;
            let c1 = if slack > 0.0 {
                let mut p = vec![0.0; space.dim()];
                space.draw_in_ball(&outer.scaled(slack / r2), &mut rng, &mut p);
                p
            } else {
                outer.center.clone()
            };
            let inner = Ball { center: c1, radius: r1 };
            let volume_ratio = space.ball_volume(&inner) / space.ball_volume(&outer);
            // Independent check of the ratio: fraction of outer samples in the inner ball.
            let mut p = vec![0.0; space.dim()];
            let draws = 4000;
            let mut hits = 0usize;
            for _ in 0..draws {
                space.draw_in_ball(&outer, &mut rng, &mut p);
                if space.dist(&p, &inner.center) < r1 {
                    hits += 1;
                }
            }
            let frac = hits as f64 / draws as f64;
            let se = (volume_ratio * (1.0 - volume_ratio) / draws as f64).sqrt().max(1.0 / draws as f64);
            let mc_err = (frac - volume_ratio).abs() / se;
            (NestedPair { inner, outer, volume_ratio, radius_ratio: r1 / r2 }, mc_err)
        })
        .collect();

    let mut lower = f64::INFINITY;
    let mut upper = 0.0f64;
    let mut max_mc = 0.0f64;
    let mut worst: Option<(f64, usize)> = None;
    for (i, (pair, mc)) in pairs.iter().enumerate() {
        let s = pair.radius_ratio;
        let lo = pair.volume_ratio / s.powf(q);
        let hi = pair.volume_ratio / s.powf(n);
        lower = lower.min(lo);
        upper = upper.max(hi);
        max_mc = max_mc.max(*mc);
        if worst.map_or(true, |(w, _)| hi > w) {
            worst = Some((hi, i));
        }
    }
    let tol = 1e-12;
    let all_within_bounds = pairs.iter().all(|(pair, _)| {
        let s = pair.radius_ratio;
        lower * s.powf(q) <= pair.volume_ratio * (1.0 + tol)
            && pair.volume_ratio <= upper * s.powf(n) * (1.0 + tol)
    });
    Ok(GrowthReport {
        space: space.kind(),
        trials,
        seed,
        window,
        concentric_exponent,
        lower_constant: lower,
        upper_constant: upper,
        max_mc_ratio_error: max_mc,
        all_within_bounds,
        worst_pair: worst.map(|(_, i)| pairs[i].0.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn euclidean_distance_is_pythagorean() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        assert_eq!(e2.distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn gauge_distance_examples() {
        let h = MetricSpace::heisenberg();
        assert_relative_eq!(h.distance(&[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap(), 2.0);
        let x = [0.3, -1.0, 2.0];
        assert_eq!(h.distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        assert!(matches!(
            e2.distance(&[0.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn unit_ball_volumes() {
        assert_relative_eq!(euclidean_unit_ball_volume(1), 2.0);
        assert_relative_eq!(euclidean_unit_ball_volume(2), PI);
        assert_relative_eq!(euclidean_unit_ball_volume(3), 4.0 * PI / 3.0);
        let e2 = MetricSpace::euclidean(2).unwrap();
        assert_relative_eq!(e2.ball_volume(&Ball::new(vec![0.0, 0.0], 1.0).unwrap()), PI);
    }

    #[test]
    fn heisenberg_volume_is_homogeneous_of_degree_four() {
        let h = MetricSpace::heisenberg();
        let b1 = Ball::new(vec![0.0; 3], 1.0).unwrap();
        let b2 = Ball::new(vec![0.0; 3], 2.0).unwrap();
        assert_relative_eq!(h.ball_volume(&b2) / h.ball_volume(&b1), 16.0, max_relative = 1e-14);
    }

    #[test]
    fn heisenberg_unit_volume_matches_polar_integral() {
        // In cylindrical coordinates the unit gauge ball has volume
        // pi * int_0^1 sqrt(1 - s^2) ds = pi^2 / 8.
        let c0 = MetricSpace::heisenberg().unit_ball_volume();
        assert_relative_eq!(c0, PI * PI / 8.0, max_relative = 2e-3);
    }

    #[test]
    fn heisenberg_left_translation_is_an_isometry() {
        let h = MetricSpace::heisenberg();
        let g = [0.7, -0.2, 1.3];
        let x = [0.1, 0.4, -0.5];
        let y = [-0.9, 0.3, 0.2];
        let d = h.dist(&x, &y);
        let dg = h.dist(&h.product(&g, &x), &h.product(&g, &y));
        assert_relative_eq!(d, dg, max_relative = 1e-13);
    }

    #[test]
    fn sample_ball_points_are_inside() {
        let e1 = MetricSpace::euclidean(1).unwrap();
        let b = Ball::new(vec![0.0], 1.0).unwrap();
        let pts = e1.sample_ball(&b, 4, 7).unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts.iter().all(|p| p[0] > -1.0 && p[0] < 1.0));

        let h = MetricSpace::heisenberg();
        let b = Ball::new(vec![0.5, -1.0, 2.0], 0.3).unwrap();
        let pts = h.sample_ball(&b, 2000, 3).unwrap();
        assert!(pts.iter().all(|p| h.dist(p, &b.center) < b.radius));
        let (lo, hi) = h.bounding_box(&b);
        assert!(pts.iter().all(|p| (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k])));
    }

    #[test]
    fn sample_mean_of_symmetric_ball_is_center() {
        let e2 = MetricSpace::euclidean(2).unwrap();
        let b = Ball::new(vec![0.25, -0.5], 0.8).unwrap();
        let pts = e2.sample_ball(&b, 20_000, 11).unwrap();
        for k in 0..2 {
            let vals: Vec<f64> = pts.iter().map(|p| p[k]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            let se = (var / vals.len() as f64).sqrt();
            assert!((mean - b.center[k]).abs() < 3.0 * se, "axis {k}: {mean} vs {}", b.center[k]);
        }
    }

    #[test]
    fn growth_report_exponents() {
        let w = RadiusWindow::new(1e-3, 1.0).unwrap();
        let e2 = MetricSpace::euclidean(2).unwrap();
        let r = volume_growth_report(&e2, 200, 1, w).unwrap();
        assert_relative_eq!(r.concentric_exponent, 2.0, max_relative = 1e-10);
        let h = MetricSpace::heisenberg();
        let r = volume_growth_report(&h, 1000, 2, w).unwrap();
        assert_relative_eq!(r.concentric_exponent, 4.0, max_relative = 1e-10);
        assert!(r.all_within_bounds);
        assert!(r.lower_constant > 0.0 && r.upper_constant.is_finite());
        assert!(r.max_mc_ratio_error < 6.0, "MC containment off by {} s.e.", r.max_mc_ratio_error);
    }

    #[test]
    fn dyadic_ladder_respects_window() {
        let w = RadiusWindow::new(0.1, 1.0).unwrap();
        assert_eq!(w.dyadic_ladder(), vec![1.0, 0.5, 0.25, 0.125]);
    }
}
