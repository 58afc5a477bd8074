//! Spline-style parameter constructions for scalar models.
//!
//! Gates are laid out as uniformly spaced knots. The analytical builders then
//! sweep the cells left to right: each cell introduces exactly one newly
//! active neuron, whose free coefficients are solved so the model
//! interpolates the target at the cell's right knot. For the GLU the
//! quadratic coefficient of every cell is also matched to `f''/2` at the left
//! knot, which removes the `O(h^2)` part of the local error.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::slope::{fit_points, FitPoint, SlopeFit};
use crate::models::{forward, ArchKind, Architecture, ModelParams};
use crate::target::TargetFunction;

/// Construction RMSE below this counts as exact representation.
pub const CONSTRUCTION_FLOOR: f64 = 1e-13;
/// Dense grid used to approximate the L2 error integral.
pub const DENSE_GRID_POINTS: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Every gate opens to the right (`G = +1`).
    Uniform,
    /// Odd neurons open to the left, so no edge of the domain is dead.
    #[default]
    Alternating,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub orientation: Orientation,
}

impl PartitionSpec {
    pub fn new(a: f64, b: f64, n: usize, orientation: Orientation) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::InvalidConfig(format!("empty domain [{a}, {b}]")));
        }
        if n == 0 {
            return Err(Error::InvalidConfig("partition needs n >= 1".into()));
        }
        Ok(PartitionSpec {
            a,
            b,
            n,
            orientation,
        })
    }

    /// Cell width `(b - a) / n` of the analytical constructions.
    pub fn h(&self) -> f64 {
        (self.b - self.a) / self.n as f64
    }

    /// Left knots `a + i h` of the `n` construction cells.
    pub fn cell_knots(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.n).map(|i| self.a + i as f64 * h).collect()
    }

    /// `linspace(a, b, n)`: the knots used to initialize trainable models.
    pub fn spread_knots(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.a];
        }
        let step = (self.b - self.a) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                if i + 1 == self.n {
                    self.b
                } else {
                    self.a + i as f64 * step
                }
            })
            .collect()
    }

    /// Gate `(G, g)` for neuron `i` with its knot at `knot`.
    fn gate(&self, i: usize, knot: f64) -> (f64, f64) {
        match self.orientation {
            Orientation::Alternating if i % 2 == 1 => (-1.0, knot),
            _ => (1.0, -knot),
        }
    }
}

/// Spline initialization: knots at `linspace(a, b, n)`; value branches and
/// head drawn i.i.d. standard normal from `seed`.
pub fn spline_init(arch: Architecture, spec: &PartitionSpec, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    if arch.dim_x != 1 {
        return Err(Error::Unsupported(format!(
            "spline initialization is one-dimensional, got dim_x = {}",
            arch.dim_x
        )));
    }
    if spec.n != arch.n {
        return Err(Error::shape("partition size", arch.n, spec.n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<f64> = (0..arch.param_count())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    for (i, knot) in spec.spread_knots().into_iter().enumerate() {
        let (w, b) = spec.gate(i, knot);
        flat[i] = w;
        flat[arch.n + i] = b;
    }
    ModelParams::from_flat(arch, &flat)
}

fn uniform_gates(params: &mut ModelParams, knots: &[f64]) {
    for (i, k) in knots.iter().enumerate() {
        params.gate.weight[(i, 0)] = 1.0;
        params.gate.bias[i] = -k;
    }
}

/// Piecewise-linear interpolant of `f` on `n` uniform cells of `[a, b]`.
pub fn construct_mlp(f: &TargetFunction, n: usize, domain: (f64, f64)) -> Result<ModelParams> {
    f.require_scalar()?;
    let spec = PartitionSpec::new(domain.0, domain.1, n, Orientation::Uniform)?;
    let arch = Architecture::scalar(ArchKind::Mlp, n)?;
    let (h, knots) = (spec.h(), spec.cell_knots());
    let d = f.value(spec.a);
    let mut slopes: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let right = knots[i] + h;
        let prev = d + slopes
            .iter()
            .zip(&knots)
            .map(|(dj, kj)| dj * (right - kj))
            .sum::<f64>();
        slopes.push((f.value(right) - prev) / h);
    }
    let mut params = ModelParams::zeros(arch);
    uniform_gates(&mut params, &knots);
    params.head_weight = DMatrix::from_row_slice(1, n, &slopes);
    params.head_bias = DVector::from_element(1, d);
    params.validate()?;
    Ok(params)
}

/// Piecewise-quadratic interpolant of `f` matching `f''` at each left knot.
pub fn construct_glu(f: &TargetFunction, n: usize, domain: (f64, f64)) -> Result<ModelParams> {
    construct_glu_scaled(f, n, domain, 1.0)
}

/// [`construct_glu`] with every head weight fixed to `head_scale` instead of 1.
///
/// The head weight is the construction's free degree of freedom: any nonzero
/// choice gives the same function.
pub fn construct_glu_scaled(
    f: &TargetFunction,
    n: usize,
    domain: (f64, f64),
    head_scale: f64,
) -> Result<ModelParams> {
    f.require_scalar()?;
    if head_scale == 0.0 || !head_scale.is_finite() {
        return Err(Error::InvalidConfig(
            "GLU construction needs a finite nonzero head weight".into(),
        ));
    }
    let spec = PartitionSpec::new(domain.0, domain.1, n, Orientation::Uniform)?;
    let arch = Architecture::scalar(ArchKind::Glu, n)?;
    let (h, knots) = (spec.h(), spec.cell_knots());
    let fd_step = h / 100.0;
    let d = f.value(spec.a);
    let mut value_w: Vec<f64> = Vec::with_capacity(n);
    let mut value_b: Vec<f64> = Vec::with_capacity(n);
    // running x^2 coefficient of the model inside the current cell
    let mut curvature = 0.0;
    for i in 0..n {
        let right = knots[i] + h;
        let prev = d
            + (0..i)
                .map(|j| head_scale * (right - knots[j]) * (value_w[j] * right + value_b[j]))
                .sum::<f64>();
        let target_curvature = 0.5 * f.second_derivative(knots[i], fd_step);
        let w = (target_curvature - curvature) / head_scale;
        curvature += head_scale * w;
        let b = (f.value(right) - prev) / (head_scale * h) - w * right;
        value_w.push(w);
        value_b.push(b);
    }
    let mut params = ModelParams::zeros(arch);
    uniform_gates(&mut params, &knots);
    params.value = Some(crate::models::Affine {
        weight: DMatrix::from_column_slice(n, 1, &value_w),
        bias: DVector::from_vec(value_b),
    });
    params.head_weight = DMatrix::from_element(1, n, head_scale);
    params.head_bias = DVector::from_element(1, d);
    params.validate()?;
    Ok(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Construction {
    Mlp,
    Glu,
}

impl Construction {
    pub fn build(self, f: &TargetFunction, n: usize, domain: (f64, f64)) -> Result<ModelParams> {
        match self {
            Construction::Mlp => construct_mlp(f, n, domain),
            Construction::Glu => construct_glu(f, n, domain),
        }
    }

    pub fn for_arch(kind: ArchKind) -> Result<Self> {
        match kind {
            ArchKind::Mlp => Ok(Construction::Mlp),
            ArchKind::Glu => Ok(Construction::Glu),
            ArchKind::Gqu => Err(Error::Unsupported(
                "no analytical construction for the GQU".into(),
            )),
        }
    }
}

/// Midpoint grid of `points` samples over `[a, b]`.
pub fn dense_grid(domain: (f64, f64), points: usize) -> DMatrix<f64> {
    let (a, b) = domain;
    let step = (b - a) / points as f64;
    DMatrix::from_fn(points, 1, |r, _| a + (r as f64 + 0.5) * step)
}

/// RMSE of a scalar model against `f` on a dense midpoint grid, approximating
/// the continuous L2 error over the domain.
pub fn dense_rmse(params: &ModelParams, f: &TargetFunction, domain: (f64, f64)) -> Result<f64> {
    f.require_scalar()?;
    let x = dense_grid(domain, DENSE_GRID_POINTS);
    let y = forward(params, &x)?;
    let target = f.sample(&x)?;
    Ok(((y - target).norm_squared() / x.nrows() as f64).sqrt())
}

/// Measures the convergence order of a construction over `n_list`.
pub fn truncation_order_check(
    builder: Construction,
    f: &TargetFunction,
    n_list: &[usize],
    domain: (f64, f64),
) -> Result<SlopeFit> {
    if n_list.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "need >= 4 widths, got {}",
            n_list.len()
        )));
    }
    let lo = *n_list.iter().min().unwrap_or(&1);
    let hi = *n_list.iter().max().unwrap_or(&1);
    if hi < 8 * lo {
        return Err(Error::InvalidConfig(format!(
            "widths must span at least 8x, got {lo}..{hi}"
        )));
    }
    let points = n_list
        .iter()
        .map(|&n| {
            let params = builder.build(f, n, domain)?;
            Ok(FitPoint {
                n,
                size: n as f64,
                error: dense_rmse(&params, f, domain)?,
                converged: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fit_points(&points, CONSTRUCTION_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{cell_boundaries, Domain};

    fn at(params: &ModelParams, x: f64) -> f64 {
        forward(params, &DMatrix::from_element(1, 1, x)).unwrap()[(0, 0)]
    }

    #[test]
    fn uniform_spread_knots() {
        let arch = Architecture::scalar(ArchKind::Mlp, 3).unwrap();
        let spec = PartitionSpec::new(-1.0, 1.0, 3, Orientation::Uniform).unwrap();
        let p = spline_init(arch, &spec, 0).unwrap();
        assert_eq!(p.gate.weight.as_slice(), &[1.0, 1.0, 1.0]);
        let knots = cell_boundaries(&p, &Domain::interval(-1.0, 1.0)).unwrap();
        assert_eq!(knots.knot_positions(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn alternating_flips_odd_gates() {
        let arch = Architecture::scalar(ArchKind::Glu, 2).unwrap();
        let spec = PartitionSpec::new(0.0, 1.0, 2, Orientation::Alternating).unwrap();
        let p = spline_init(arch, &spec, 4).unwrap();
        assert_eq!((p.gate.weight[(0, 0)], p.gate.bias[0]), (1.0, 0.0));
        assert_eq!((p.gate.weight[(1, 0)], p.gate.bias[1]), (-1.0, 1.0));
    }

    #[test]
    fn orientations_share_knots() {
        for n in [1, 2, 5, 8] {
            let arch = Architecture::scalar(ArchKind::Gqu, n).unwrap();
            let dom = Domain::interval(-1.0, 1.0);
            let knots = |o| {
                let spec = PartitionSpec::new(-1.0, 1.0, n, o).unwrap();
                let p = spline_init(arch, &spec, 1).unwrap();
                cell_boundaries(&p, &dom).unwrap().knot_positions()
            };
            assert_eq!(knots(Orientation::Uniform), knots(Orientation::Alternating));
        }
    }

    #[test]
    fn spline_init_is_deterministic_and_one_dimensional() {
        let arch = Architecture::scalar(ArchKind::Glu, 6).unwrap();
        let spec = PartitionSpec::new(-1.0, 1.0, 6, Orientation::Alternating).unwrap();
        let a = spline_init(arch, &spec, 17).unwrap();
        let b = spline_init(arch, &spec, 17).unwrap();
        let bits = |p: &ModelParams| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&spline_init(arch, &spec, 18).unwrap()));

        let arch2 = Architecture::new(ArchKind::Glu, 2, 1, 6).unwrap();
        assert!(matches!(
            spline_init(arch2, &spec, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mlp_reproduces_affine() {
        let f = TargetFunction::scalar("affine", |x| 2.0 * x - 0.5);
        for n in [1, 3, 10] {
            let p = construct_mlp(&f, n, (0.0, 1.0)).unwrap();
            assert!((p.head_weight[(0, 0)] - 2.0).abs() < 1e-12);
            assert!(p.head_weight.iter().skip(1).all(|d| d.abs() < 1e-12));
            assert!(dense_rmse(&p, &f, (0.0, 1.0)).unwrap() < 1e-12);
        }
        let line = TargetFunction::scalar("x", |x| x);
        let p = construct_mlp(&line, 7, (0.0, 1.0)).unwrap();
        assert!((p.head_weight[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mlp_constant_target_has_zero_slopes() {
        let f = TargetFunction::scalar("c", |_| 3.5);
        let p = construct_mlp(&f, 5, (-1.0, 1.0)).unwrap();
        assert!(p.head_weight.iter().all(|d| *d == 0.0));
        assert_eq!(p.head_bias[0], 3.5);
    }

    #[test]
    fn mlp_on_square_two_cells() {
        // y(0.5) = 0.25 and y(1) = 1 give D_0 = 0.5, D_1 = 1
        let f = TargetFunction::scalar("sq", |x| x * x);
        let p = construct_mlp(&f, 2, (0.0, 1.0)).unwrap();
        assert!((p.head_weight[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p.head_weight[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn glu_reproduces_square_with_fd_fallback() {
        let f = TargetFunction::scalar("sq", |x| x * x);
        assert!(!f.has_analytic_second_derivative());
        for n in [1, 2, 7] {
            let p = construct_glu(&f, n, (0.0, 1.0)).unwrap();
            let value = p.value.as_ref().unwrap();
            assert!((value.weight[(0, 0)] - 1.0).abs() < 1e-6);
            assert!(dense_rmse(&p, &f, (0.0, 1.0)).unwrap() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn glu_constant_target() {
        let f = TargetFunction::scalar("c", |_| -1.25);
        let p = construct_glu(&f, 4, (-1.0, 1.0)).unwrap();
        assert_eq!(dense_rmse(&p, &f, (-1.0, 1.0)).unwrap(), 0.0);
        let parts = crate::models::neuron_decomposition(&p, &dense_grid((-1.0, 1.0), 50)).unwrap();
        assert!(parts.iter().all(|a| a.values.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn glu_head_scale_does_not_change_function() {
        let f = TargetFunction::scalar("s", |x: f64| (3.0 * x).sin() + x * x * x);
        let a = construct_glu_scaled(&f, 9, (-1.0, 1.0), 1.0).unwrap();
        let b = construct_glu_scaled(&f, 9, (-1.0, 1.0), 2.0).unwrap();
        let x = dense_grid((-1.2, 1.2), 500);
        let (ya, yb) = (forward(&a, &x).unwrap(), forward(&b, &x).unwrap());
        assert!((ya - yb).amax() < 1e-12);
        assert!(construct_glu_scaled(&f, 9, (-1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn constructions_interpolate_at_knots() {
        let f = TargetFunction::scalar("s", |x: f64| (2.0 * x).cos() / (1.0 + x * x));
        for n in [3, 8, 21] {
            for builder in [Construction::Mlp, Construction::Glu] {
                let p = builder.build(&f, n, (-1.0, 1.0)).unwrap();
                let h = 2.0 / n as f64;
                for i in 0..=n {
                    let x = -1.0 + i as f64 * h;
                    assert!(
                        (at(&p, x) - f.value(x)).abs() < 1e-10,
                        "{builder:?} n={n} i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn gqu_has_no_construction() {
        assert!(Construction::for_arch(ArchKind::Gqu).is_err());
    }

    #[test]
    fn order_check_on_affine_reports_no_points() {
        let f = TargetFunction::scalar("x", |x| x);
        let err =
            truncation_order_check(Construction::Mlp, &f, &[4, 8, 16, 32], (0.0, 1.0)).unwrap_err();
        match err {
            Error::InsufficientPoints {
                usable, excluded, ..
            } => {
                assert_eq!(usable, 0);
                assert_eq!(excluded.len(), 4);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn order_check_validates_widths() {
        let f = TargetFunction::scalar("x", |x| x * x * x);
        assert!(truncation_order_check(Construction::Mlp, &f, &[4, 8, 16], (0.0, 1.0)).is_err());
        assert!(truncation_order_check(Construction::Mlp, &f, &[4, 5, 6, 7], (0.0, 1.0)).is_err());
    }
}
