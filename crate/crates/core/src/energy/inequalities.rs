use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, substream};

/// Relative slack before a sample counts as a violation.
pub const INEQUALITY_SLACK: f64 = 1e-10;

/// Dimensions exercised by [`vector_inequalities_suite`].
pub const SUITE_DIMENSIONS: [usize; 4] = [1, 2, 3, 5];

const MAG_LO: f64 = 1e-6;
const MAG_HI: f64 = 1e6;
const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inequality {
    /// `|Φ(ξ) - Φ(η)| <= (p-1)(|ξ|^{p-2} + |η|^{p-2}) |ξ-η|`, `p >= 2`.
    LipschitzLarge,
    /// `|Φ(ξ) - Φ(η)| <= c_p |ξ-η|^{p-1}`, `1 < p <= 2`.
    HolderSmall,
    /// `<Φ(ξ) - Φ(η), ξ-η> >= 2^{2-p} |ξ-η|^p`, `p >= 2`.
    MonotoneLarge,
    /// `<Φ(ξ) - Φ(η), ξ-η> >= |ξ-η|^p - |η|^{p-1} |ξ-η|`, `1 < p <= 2`.
    MonotoneSmall,
}

impl Inequality {
    pub const ALL: [Inequality; 4] =
        [Inequality::LipschitzLarge, Inequality::HolderSmall, Inequality::MonotoneLarge, Inequality::MonotoneSmall];

    pub fn applies(self, p: f64) -> bool {
        match self {
            Inequality::LipschitzLarge | Inequality::MonotoneLarge => p >= 2.0,
            Inequality::HolderSmall | Inequality::MonotoneSmall => p > 1.0 && p <= 2.0,
        }
    }
}

/// Constant used for the Hölder-type bound with `1 < p <= 2`.
pub fn holder_constant(p: f64) -> f64 {
    2f64.powf(2.0 - p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityResult {
    pub inequality: Inequality,
    pub violations: u64,
    /// Largest `lhs / rhs` for upper bounds, `rhs / lhs` for lower bounds
    /// (restricted to positive `rhs`); at most 1 when the inequality holds.
    pub worst_ratio: f64,
    /// Smallest constant that would make the Hölder bound hold on the sample.
    pub fitted_constant: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub p: f64,
    pub m: usize,
    pub samples: u64,
    pub seed: u64,
    pub results: Vec<InequalityResult>,
}

impl InequalityReport {
    pub fn violations(&self) -> u64 {
        self.results.iter().map(|r| r.violations).sum()
    }
}

/// `|x|^{p-2} x`, zero at the origin.
fn phi(x: &[f64], p: f64, out: &mut [f64]) -> f64 {
    let n = norm(x);
    let f = if n > 0.0 { n.powf(p - 2.0) } else { 0.0 };
    for (o, v) in out.iter_mut().zip(x) {
        *o = f * v;
    }
    n
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn draw_vector(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let mag = rng::log_uniform(rng, MAG_LO, MAG_HI);
    rng::unit_vector(rng, m).into_iter().map(|v| v * mag).collect()
}

/// A sample pair; one pair in four is a relative perturbation `η = ξ + ζ`
/// with `|ζ| / |ξ|` log-uniform in `[1e-6, 1]`.
fn draw_pair(rng: &mut impl Rng, m: usize) -> (Vec<f64>, Vec<f64>) {
    let xi = draw_vector(rng, m);
    if rng.gen::<u8>() < 64 {
        let rel = rng::log_uniform(rng, 1e-6, 1.0) * norm(&xi);
        let dir = rng::unit_vector(rng, m);
        let eta = xi.iter().zip(&dir).map(|(a, d)| a + rel * d).collect();
        (xi, eta)
    } else {
        let eta = draw_vector(rng, m);
        (xi, eta)
    }
}

struct Tally {
    violations: [u64; 4],
    worst: [f64; 4],
    fitted: f64,
}

impl Tally {
    fn new() -> Self {
        Tally { violations: [0; 4], worst: [0.0; 4], fitted: 0.0 }
    }

    fn merge(mut self, o: Tally) -> Tally {
        for k in 0..4 {
            self.violations[k] += o.violations[k];
            self.worst[k] = self.worst[k].max(o.worst[k]);
        }
        self.fitted = self.fitted.max(o.fitted);
        self
    }
}

fn violates(lhs: f64, rhs: f64) -> bool {
    lhs - rhs > INEQUALITY_SLACK * (lhs.abs() + rhs.abs())
}

fn check_pair(xi: &[f64], eta: &[f64], p: f64, applies: [bool; 4], t: &mut Tally) {
    let m = xi.len();
    let mut fx = vec![0.0; m];
    let mut fe = vec![0.0; m];
    let nx = phi(xi, p, &mut fx);
    let ne = phi(eta, p, &mut fe);
    let diff: Vec<f64> = xi.iter().zip(eta).map(|(a, b)| a - b).collect();
    let d = norm(&diff);
    let fd: Vec<f64> = fx.iter().zip(&fe).map(|(a, b)| a - b).collect();
    let flux_diff = norm(&fd);
    let pairing: f64 = fd.iter().zip(&diff).map(|(a, b)| a * b).sum();

    let mut record = |k: usize, upper: f64, lower: f64| {
        // `upper <= lower` is the claimed inequality.
        if violates(upper, lower) {
            t.violations[k] += 1;
        }
        if lower > 0.0 {
            t.worst[k] = t.worst[k].max(upper / lower);
        }
    };
    if applies[0] {
        let rhs = (p - 1.0) * (nx.powf(p - 2.0) + ne.powf(p - 2.0)) * d;
        record(0, flux_diff, rhs);
    }
    if applies[1] {
        let base = d.powf(p - 1.0);
        record(1, flux_diff, holder_constant(p) * base);
        if base > 0.0 {
            t.fitted = t.fitted.max(flux_diff / base);
        }
    }
    if applies[2] {
        record(2, holder_constant(p) * d.powf(p), pairing);
    }
    if applies[3] {
        record(3, d.powf(p) - ne.powf(p - 1.0) * d, pairing);
    }
}

/// Check every inequality applicable at `p` on `samples` random pairs in
/// `R^m`, magnitudes log-uniform in `[1e-6, 1e6]`.
pub fn vector_inequalities_check(p: f64, m: usize, samples: u64, seed: u64) -> Result<InequalityReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("exponent must satisfy 1 < p < inf, got {p}")));
    }
    if m == 0 {
        return Err(Error::invalid("vector dimension must be positive"));
    }
    let applies = Inequality::ALL.map(|i| i.applies(p));
    let chunks = samples.div_ceil(CHUNK as u64);
    let tally = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, substream(m as u64, k));
            let mut t = Tally::new();
            let count = (samples - k * CHUNK as u64).min(CHUNK as u64);
            for j in 0..count {
                if k == 0 && j == 0 {
                    // Equality case ξ = η.
                    let xi = draw_vector(&mut r, m);
                    check_pair(&xi, &xi, p, applies, &mut t);
                    continue;
                }
                let (xi, eta) = draw_pair(&mut r, m);
                check_pair(&xi, &eta, p, applies, &mut t);
            }
            t
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::new(), Tally::merge);
    let results = Inequality::ALL
        .iter()
        .enumerate()
        .filter(|(k, _)| applies[*k])
        .map(|(k, &inequality)| InequalityResult {
            inequality,
            violations: tally.violations[k],
            worst_ratio: tally.worst[k],
            fitted_constant: (inequality == Inequality::HolderSmall).then_some(tally.fitted),
        })
        .collect();
    Ok(InequalityReport { p, m, samples, seed, results })
}

/// [`vector_inequalities_check`] for every dimension in [`SUITE_DIMENSIONS`].
pub fn vector_inequalities_suite(p: f64, samples: u64, seed: u64) -> Result<Vec<InequalityReport>> {
    SUITE_DIMENSIONS.iter().map(|&m| vector_inequalities_check(p, m, samples, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn applicability() {
        assert!(Inequality::LipschitzLarge.applies(2.0) && Inequality::MonotoneSmall.applies(2.0));
        assert!(!Inequality::MonotoneLarge.applies(1.5));
        assert!(!Inequality::HolderSmall.applies(3.0));
    }

    #[test]
    fn no_violations_small_run() {
        for p in [1.5, 2.0, 3.0, 4.0] {
            for r in vector_inequalities_suite(p, 20_000, 3).unwrap() {
                assert_eq!(r.violations(), 0, "{r:?}");
            }
        }
    }

    #[test]
    fn fitted_holder_constant_is_below_sharp_value() {
        let r = vector_inequalities_check(1.5, 2, 50_000, 9).unwrap();
        let c = r.results.iter().find_map(|x| x.fitted_constant).unwrap();
        assert!(c <= holder_constant(1.5) * (1.0 + 1e-10));
        assert!(c > 1.0);
    }
}
