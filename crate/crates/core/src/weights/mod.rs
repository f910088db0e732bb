//! Weights, Monte-Carlo ball averages and weight-class constants.
//!
//! A [`Weight`] is a positive closed-form function together with an
//! optional singular set. Ball averages near the singular set are computed
//! with dyadic shell stratification (see [`quadrature`]), so that averages of
//! non-integrable weights grow visibly with the budget instead of silently
//! undersampling the singularity.
//!
//! Class constants are suprema of the defining ratios over finite random
//! ball families: lower bounds of the true constants by construction. A
//! constant is reported finite when the running supremum does not keep
//! growing across three successive doublings of ball count and budget.

mod balance;
mod classes;
pub mod quadrature;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use balance::{
    balance_check, balance_exponent, mu_p, subset_mass_check, tau_exponent, BalanceExponent, BalanceReport,
    SubsetMassReport, WorstPair,
};
pub use classes::{
    a1_constant, ap_constant, maximal_function, power_class_check, rh_constant, ConstantEstimate,
    Estimates, MaximalEstimate, PowerClassReport, RadiusAverage, SamplingPlan, WeightReport,
    WorstCase, PLATEAU_TOLERANCE,
};
pub use quadrature::{ball_average, BallSample, Estimate};

/// Set on which a weight may vanish or blow up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SingularSet {
    Point { at: Vec<f64> },
    /// `{x : x[axis] = offset}`.
    Hyperplane { axis: usize, offset: f64 },
}

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A positive, locally integrable weight function.
#[derive(Clone)]
pub struct Weight {
    name: String,
    eval: Evaluator,
    singular: Option<SingularSet>,
    claims: Vec<String>,
    constant: Option<f64>,
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Weight")
            .field("name", &self.name)
            .field("singular", &self.singular)
            .field("claims", &self.claims)
            .finish()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Weight {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Weight { name: name.into(), eval: Arc::new(f), singular: None, claims: Vec::new(), constant: None }
    }

    pub fn with_singular_set(mut self, set: SingularSet) -> Self {
        self.singular = Some(set);
        self
    }

    pub fn with_claims<I, S>(mut self, claims: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.claims = claims.into_iter().map(Into::into).collect();
        self
    }

    pub fn constant(c: f64) -> Self {
        let mut w = Weight::new(format!("const:{c}"), move |_| c);
        w.constant = Some(c);
        w
    }

    /// `|x|^alpha` (Euclidean norm), singular at the origin.
    pub fn radial_power(dim: usize, alpha: f64) -> Self {
        Weight::new(format!("pow:{alpha}"), move |x| norm(x).powf(alpha))
            .with_singular_set(SingularSet::Point { at: vec![0.0; dim] })
    }

    /// `|x_1|^alpha`, singular on the hyperplane `{x_1 = 0}`.
    pub fn axis_power(alpha: f64) -> Self {
        Weight::new(format!("axis-pow:{alpha}"), move |x| x[0].abs().powf(alpha))
            .with_singular_set(SingularSet::Hyperplane { axis: 0, offset: 0.0 })
    }

    /// `h(x)^s` with `h = |log|x||` on `|x| < 1/e` and `h = 1` elsewhere.
    pub fn log_power(dim: usize, s: f64) -> Self {
        Weight::new(format!("log:{s}"), move |x| log_profile(norm(x)).powf(s))
            .with_singular_set(SingularSet::Point { at: vec![0.0; dim] })
    }

    /// Parse a weight specifier: `const:C`, `pow:A`, `axis-pow:A`, `log:S`.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let (kind, arg) = spec
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("weight spec `{spec}` lacks `kind:value`")))?;
        let v: f64 = arg
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("weight spec `{spec}`: bad number `{arg}`")))?;
        match kind.trim() {
            "const" if v > 0.0 => Ok(Weight::constant(v)),
            "pow" => Ok(Weight::radial_power(dim, v)),
            "axis-pow" => Ok(Weight::axis_power(v)),
            "log" => Ok(Weight::log_power(dim, v)),
            _ => Err(Error::invalid(format!("unknown weight spec `{spec}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn singular_set(&self) -> Option<&SingularSet> {
        self.singular.as_ref()
    }

    pub fn claims(&self) -> &[String] {
        &self.claims
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Evaluate, shifting by `shift` along the singular direction when `x`
    /// lies exactly on the singular set.
    pub fn eval_off_singular(&self, x: &[f64], shift: f64) -> f64 {
        let v = self.eval(x);
        if v.is_finite() && v > 0.0 {
            return v;
        }
        let mut y = x.to_vec();
        match &self.singular {
            Some(SingularSet::Hyperplane { axis, .. }) => y[*axis] += shift,
            _ => y[0] += shift,
        }
        self.eval(&y)
    }

    /// `w^s`, sharing the singular set.
    pub fn powf(&self, s: f64) -> Weight {
        let inner = self.eval.clone();
        Weight {
            name: format!("({})^{s}", self.name),
            eval: Arc::new(move |x| inner(x).powf(s)),
            singular: self.singular.clone(),
            claims: Vec::new(),
            constant: self.constant.map(|c| c.powf(s)),
        }
    }

    /// `c w`.
    pub fn scaled(&self, c: f64) -> Weight {
        let inner = self.eval.clone();
        Weight {
            name: format!("{c}*({})", self.name),
            eval: Arc::new(move |x| c * inner(x)),
            singular: self.singular.clone(),
            claims: self.claims.clone(),
            constant: self.constant.map(|k| c * k),
        }
    }
}

/// `|log r|` for `r < 1/e`, else 1.
pub fn log_profile(r: f64) -> f64 {
    if r < (-1.0f64).exp() {
        r.ln().abs()
    } else {
        1.0
    }
}

/// Hölder conjugate `p / (p - 1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_specs() {
        let w = Weight::parse("pow:-3", 2).unwrap();
        assert_eq!(w.eval(&[2.0, 0.0]), 0.125);
        assert!(matches!(w.singular_set(), Some(SingularSet::Point { .. })));
        assert_eq!(Weight::parse("const:5", 2).unwrap().constant_value(), Some(5.0));
        assert!(Weight::parse("banana:1", 2).is_err());
        assert!(Weight::parse("pow", 2).is_err());
    }

    #[test]
    fn log_profile_is_continuous_at_threshold() {
        let r = (-1.0f64).exp();
        assert!((log_profile(r * (1.0 - 1e-12)) - 1.0).abs() < 1e-9);
        assert_eq!(log_profile(r), 1.0);
        assert!(log_profile(1e-3) > 6.0);
    }

    #[test]
    fn off_singular_evaluation_shifts() {
        let k = Weight::axis_power(-1.0 / 3.0);
        assert!(k.eval(&[0.0, 0.3]).is_infinite());
        let v = k.eval_off_singular(&[0.0, 0.3], 1e-3);
        assert!((v - 10.0).abs() < 1e-9);
    }
}
