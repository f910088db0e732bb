use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng;
use crate::weights::Weight;

type MatrixEvaluator = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Ellipticity envelope `w^{2/p} |ξ|^2 <= <Aξ, ξ> <= v^{2/p} |ξ|^2`.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub w: Weight,
    pub v: Weight,
    pub p: f64,
}

/// Symmetric `m x m` coefficient matrix field, stored row-major.
#[derive(Clone)]
pub struct MatrixField {
    name: String,
    m: usize,
    eval: MatrixEvaluator,
    envelope: Option<Envelope>,
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixField").field("name", &self.name).field("m", &self.m).finish()
    }
}

impl MatrixField {
    /// `f(x, out)` writes `A(x)` row-major into `out` (length `m^2`).
    pub fn new(
        name: impl Into<String>,
        m: usize,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        MatrixField { name: name.into(), m, eval: Arc::new(f), envelope: None }
    }

    pub fn identity(m: usize) -> Self {
        MatrixField::new("identity", m, move |_, out| {
            out.fill(0.0);
            for i in 0..m {
                out[i * m + i] = 1.0;
            }
        })
    }

    /// `A(x) = s(x) I`.
    pub fn scalar(m: usize, s: Weight) -> Self {
        let name = format!("{} * I", s.name());
        MatrixField::new(name, m, move |x, out| {
            let v = s.eval(x);
            out.fill(0.0);
            for i in 0..m {
                out[i * m + i] = v;
            }
        })
    }

    /// `A(x) = diag(d_1(x), ..., d_m(x))`.
    pub fn diagonal(name: impl Into<String>, entries: Vec<Weight>) -> Self {
        let m = entries.len();
        MatrixField::new(name, m, move |x, out| {
            out.fill(0.0);
            for (i, d) in entries.iter().enumerate() {
                out[i * m + i] = d.eval(x);
            }
        })
    }

    pub fn with_envelope(mut self, w: Weight, v: Weight, p: f64) -> Self {
        self.envelope = Some(Envelope { w, v, p });
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn envelope(&self) -> Option<&Envelope> {
        self.envelope.as_ref()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.m];
        self.eval_into(x, &mut out);
        out
    }

    /// Check finiteness, exact symmetry and, if declared, the envelope
    /// along `directions` seeded random unit vectors.
    pub fn check_at(&self, x: &[f64], directions: usize, seed: u64) -> Result<()> {
        let m = self.m;
        let a = self.eval(x);
        let bad = || Error::InvalidCoefficients { point: x.to_vec() };
        if a.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        for i in 0..m {
            for j in 0..i {
                if a[i * m + j] != a[j * m + i] {
                    return Err(bad());
                }
            }
        }
        let Some(env) = &self.envelope else { return Ok(()) };
        let lo = env.w.eval(x).powf(2.0 / env.p);
        let hi = env.v.eval(x).powf(2.0 / env.p);
        let mut r = rng::stream(seed, 0);
        let slack = 1e-9;
        for _ in 0..directions {
            let xi = rng::unit_vector(&mut r, m);
            let q: f64 = (0..m).map(|i| xi[i] * (0..m).map(|j| a[i * m + j] * xi[j]).sum::<f64>()).sum();
            if q < lo * (1.0 - slack) || q > hi * (1.0 + slack) {
                return Err(bad());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_field_envelope() {
        let k = Weight::axis_power(-1.0 / 3.0);
        let p = 2.0;
        let a = MatrixField::scalar(2, k.clone()).with_envelope(k.powf(1.0 - p), k.clone(), p);
        assert!(a.check_at(&[0.3, 0.1], 8, 0).is_ok());
        // On |x| > 1 the lower bound k^{-1} exceeds k.
        assert!(matches!(a.check_at(&[2.0, 0.1], 8, 0), Err(Error::InvalidCoefficients { .. })));
    }

    #[test]
    fn asymmetry_is_rejected() {
        let a = MatrixField::new("skew", 2, |_, out| out.copy_from_slice(&[1.0, 0.5, 0.0, 1.0]));
        assert!(a.check_at(&[0.0, 0.0], 1, 0).is_err());
    }
}
