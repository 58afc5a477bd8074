use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// An evaluatable target `R^dim_x -> R^dim_y`.
///
/// Scalar targets may carry analytic first and second derivatives; the GLU
/// construction falls back to a centered second difference without them.
#[derive(Clone)]
pub struct TargetFunction {
    pub name: String,
    pub dim_x: usize,
    pub dim_y: usize,
    f: VectorFn,
    d1: Option<ScalarFn>,
    d2: Option<ScalarFn>,
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetFunction")
            .field("name", &self.name)
            .field("dim_x", &self.dim_x)
            .field("dim_y", &self.dim_y)
            .field("analytic_d1", &self.d1.is_some())
            .field("analytic_d2", &self.d2.is_some())
            .finish()
    }
}

impl TargetFunction {
    pub fn new(
        name: impl Into<String>,
        dim_x: usize,
        dim_y: usize,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        TargetFunction {
            name: name.into(),
            dim_x,
            dim_y,
            f: Arc::new(f),
            d1: None,
            d2: None,
        }
    }

    pub fn scalar(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(name, 1, 1, move |x, out| out[0] = f(x[0]))
    }

    pub fn with_derivatives(
        mut self,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.d1 = Some(Arc::new(d1));
        self.d2 = Some(Arc::new(d2));
        self
    }

    pub fn has_analytic_second_derivative(&self) -> bool {
        self.d2.is_some()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_y];
        (self.f)(x, &mut out);
        out
    }

    /// Value of a scalar-to-scalar target.
    pub fn value(&self, x: f64) -> f64 {
        let mut out = [0.0];
        (self.f)(&[x], &mut out);
        out[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.dim_x == 1 && self.dim_y == 1
    }

    pub(crate) fn require_scalar(&self) -> Result<()> {
        if self.is_scalar() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "target {} maps R^{} -> R^{}; a scalar target is required",
                self.name, self.dim_x, self.dim_y
            )))
        }
    }

    /// First derivative; centered difference with step `fd_step` when not analytic.
    pub fn first_derivative(&self, x: f64, fd_step: f64) -> f64 {
        match &self.d1 {
            Some(d1) => d1(x),
            None => (self.value(x + fd_step) - self.value(x - fd_step)) / (2.0 * fd_step),
        }
    }

    /// Second derivative; centered second difference with step `fd_step` when not analytic.
    pub fn second_derivative(&self, x: f64, fd_step: f64) -> f64 {
        match &self.d2 {
            Some(d2) => d2(x),
            None => {
                (self.value(x + fd_step) - 2.0 * self.value(x) + self.value(x - fd_step))
                    / (fd_step * fd_step)
            }
        }
    }

    /// Evaluates every row of `x` (`m x dim_x`), giving `m x dim_y`.
    pub fn sample(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim_x {
            return Err(Error::shape("target inputs", self.dim_x, x.ncols()));
        }
        let mut y = DMatrix::zeros(x.nrows(), self.dim_y);
        let mut row = vec![0.0; self.dim_x];
        let mut out = vec![0.0; self.dim_y];
        for r in 0..x.nrows() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[(r, j)];
            }
            (self.f)(&row, &mut out);
            for (k, v) in out.iter().enumerate() {
                y[(r, k)] = *v;
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target {}", self.name)));
        }
        Ok(y)
    }
}
