//! Least-squares linear and quadratic splines on uniform knots.
//!
//! Both are fitted directly (normal equations) as baselines for the trained
//! networks at equal knot/neuron count. The quadratic spline is only
//! value-continuous: its basis is the hat functions plus one quadratic
//! bubble per segment, which imposes continuity by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::Dataset;
use crate::linalg::solve_spd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineModel {
    pub degree: usize,
    pub knots: Vec<f64>,
    /// Per segment `[c0, c1, c2]` of `c0 + c1 t + c2 t^2`, `t = x - knots[s]`.
    pub coefficients: Vec<[f64; 3]>,
    /// Basis functions without data support, filled in from their neighbours.
    pub dropped_basis: Vec<usize>,
}

impl SplineModel {
    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    fn segment_of(&self, x: f64) -> usize {
        let last = self.segments() - 1;
        let (a, b) = (self.knots[0], self.knots[last + 1]);
        let h = (b - a) / self.segments() as f64;
        let s = ((x - a) / h).floor();
        if s.is_nan() || s < 0.0 {
            0
        } else {
            (s as usize).min(last)
        }
    }

    /// Evaluates segment `s`'s polynomial at `x` (no range check).
    pub fn eval_segment(&self, s: usize, x: f64) -> f64 {
        let [c0, c1, c2] = self.coefficients[s];
        let t = x - self.knots[s];
        c0 + t * (c1 + t * c2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_segment(self.segment_of(x), x)
    }
}

/// Piecewise evaluation; points outside the knots use the end segments.
pub fn eval_spline(model: &SplineModel, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| model.eval(v)).collect()
}

pub fn spline_rmse(model: &SplineModel, data: &Dataset) -> f64 {
    let sum: f64 = data
        .x
        .column(0)
        .iter()
        .zip(data.y.column(0).iter())
        .map(|(x, y)| (model.eval(*x) - y).powi(2))
        .sum();
    (sum / data.len() as f64).sqrt()
}

pub fn fit_linear_spline(data: &Dataset, n_knots: usize) -> Result<SplineModel> {
    fit_spline(data, n_knots, 1)
}

pub fn fit_quadratic_spline(data: &Dataset, n_knots: usize) -> Result<SplineModel> {
    fit_spline(data, n_knots, 2)
}

pub fn fit_spline(data: &Dataset, n_knots: usize, degree: usize) -> Result<SplineModel> {
    if data.dim_x() != 1 || data.dim_y() != 1 {
        return Err(Error::Unsupported(format!(
            "splines need scalar data, got {} -> {}",
            data.dim_x(),
            data.dim_y()
        )));
    }
    if !(1..=2).contains(&degree) {
        return Err(Error::InvalidConfig(format!(
            "spline degree must be 1 or 2, got {degree}"
        )));
    }
    if n_knots < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 knots, got {n_knots}"
        )));
    }
    if data.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let xs = data.x.column(0);
    let (mut a, mut b) = (xs.min(), xs.max());
    if b <= a {
        a -= 0.5;
        b += 0.5;
    }
    let segs = n_knots - 1;
    let h = (b - a) / segs as f64;
    let knots: Vec<f64> = (0..n_knots)
        .map(|i| if i == segs { b } else { a + i as f64 * h })
        .collect();
    let nb = if degree == 1 { n_knots } else { n_knots + segs };

    let mut normal = DMatrix::zeros(nb, nb);
    let mut rhs = DVector::zeros(nb);
    let mut basis: Vec<(usize, f64)> = Vec::with_capacity(3);
    for (x, y) in xs.iter().zip(data.y.column(0).iter()) {
        let s = (((x - a) / h).floor().max(0.0) as usize).min(segs - 1);
        let u = (x - knots[s]) / h;
        basis.clear();
        basis.push((s, 1.0 - u));
        basis.push((s + 1, u));
        if degree == 2 {
            basis.push((n_knots + s, 4.0 * u * (1.0 - u)));
        }
        for &(i, bi) in &basis {
            rhs[i] += bi * y;
            for &(j, bj) in &basis {
                normal[(i, j)] += bi * bj;
            }
        }
    }

    let keep: Vec<usize> = (0..nb).filter(|&i| normal[(i, i)] > 0.0).collect();
    let dropped: Vec<usize> = (0..nb).filter(|&i| normal[(i, i)] <= 0.0).collect();
    let k = keep.len();
    let reduced = DMatrix::from_fn(k, k, |i, j| normal[(keep[i], keep[j])]);
    let reduced_rhs = DVector::from_fn(k, |i, _| rhs[keep[i]]);
    let solved = solve_spd(reduced, &reduced_rhs);
    let mut coef = vec![f64::NAN; nb];
    for (i, &j) in keep.iter().enumerate() {
        coef[j] = solved[i];
    }
    fill_dropped_knot_values(&mut coef[..n_knots]);
    for c in coef.iter_mut().skip(n_knots) {
        if c.is_nan() {
            *c = 0.0;
        }
    }

    let coefficients = (0..segs)
        .map(|s| {
            let (v0, v1) = (coef[s], coef[s + 1]);
            let bubble = if degree == 2 { coef[n_knots + s] } else { 0.0 };
            [v0, (v1 - v0 + 4.0 * bubble) / h, -4.0 * bubble / (h * h)]
        })
        .collect();
    Ok(SplineModel {
        degree,
        knots,
        coefficients,
        dropped_basis: dropped,
    })
}

/// Knot values without data are interpolated linearly between the nearest
/// fitted neighbours (or copied from the one neighbour at an end).
fn fill_dropped_knot_values(values: &mut [f64]) {
    let known: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    if known.is_empty() {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for i in 0..values.len() {
        if !values[i].is_nan() {
            continue;
        }
        let left = known.iter().rev().find(|&&j| j < i).copied();
        let right = known.iter().find(|&&j| j > i).copied();
        values[i] = match (left, right) {
            (Some(l), Some(r)) => {
                let w = (i - l) as f64 / (r - l) as f64;
                values[l] * (1.0 - w) + values[r] * w
            }
            (Some(l), None) => values[l],
            (None, Some(r)) => values[r],
            (None, None) => 0.0,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Provenance;

    fn midpoint_data(m: usize, f: impl Fn(f64) -> f64) -> Dataset {
        let xs: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| f(*x)).collect();
        Dataset {
            name: "test".into(),
            x: DMatrix::from_column_slice(m, 1, &xs),
            y: DMatrix::from_column_slice(m, 1, &ys),
            provenance: Provenance::Synthetic {
                generator: "grid".into(),
                seed: 0,
            },
            normalization: None,
        }
    }

    #[test]
    fn linear_reproduces_affine() {
        let d = midpoint_data(500, |x| 3.0 * x - 1.0);
        for k in [2, 3, 9, 40] {
            let s = fit_linear_spline(&d, k).unwrap();
            assert!(spline_rmse(&s, &d) < 1e-12, "knots={k}");
        }
    }

    #[test]
    fn quadratic_reproduces_square() {
        let d = midpoint_data(500, |x| x * x);
        for k in [2, 5, 17] {
            let s = fit_quadratic_spline(&d, k).unwrap();
            assert!(spline_rmse(&s, &d) < 1e-12, "knots={k}");
        }
    }

    #[test]
    fn two_knot_linear_fit_matches_l2_projection() {
        // || x^2 - (x - 1/6) ||_{L2[0,1]} = 1/sqrt(180)
        let d = midpoint_data(100_000, |x| x * x);
        let s = fit_linear_spline(&d, 2).unwrap();
        let exact = 1.0 / 180f64.sqrt();
        assert!((spline_rmse(&s, &d) - exact).abs() < 1e-8);
    }

    #[test]
    fn single_segment_quadratic_fit_matches_l2_projection() {
        // residual of x^3 against quadratics is P3/20 (shifted Legendre), norm^2 = 1/2800
        let d = midpoint_data(100_000, |x| x * x * x);
        let s = fit_quadratic_spline(&d, 2).unwrap();
        let exact = 1.0 / 2800f64.sqrt();
        assert!((spline_rmse(&s, &d) - exact).abs() < 1e-8);
    }

    #[test]
    fn continuity_at_knots() {
        let d = midpoint_data(2000, |x: f64| (7.0 * x).sin());
        for degree in [1, 2] {
            let s = fit_spline(&d, 8, degree).unwrap();
            for i in 1..s.knots.len() - 1 {
                let k = s.knots[i];
                assert!((s.eval_segment(i - 1, k) - s.eval_segment(i, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_knot_values_and_midpoints() {
        let d = midpoint_data(1000, |x: f64| x.exp());
        let lin = fit_linear_spline(&d, 5).unwrap();
        for (s, c) in lin.coefficients.iter().enumerate() {
            assert_eq!(lin.eval(lin.knots[s]), c[0]);
        }
        let quad = fit_quadratic_spline(&d, 5).unwrap();
        let mid = 0.5 * (quad.knots[1] + quad.knots[2]);
        let [c0, c1, c2] = quad.coefficients[1];
        let t = mid - quad.knots[1];
        assert!((eval_spline(&quad, &[mid])[0] - (c0 + c1 * t + c2 * t * t)).abs() < 1e-15);
    }

    #[test]
    fn extrapolates_with_end_segments() {
        let d = midpoint_data(300, |x| 2.0 * x + 1.0);
        let s = fit_linear_spline(&d, 4).unwrap();
        assert!((s.eval(2.0) - 5.0).abs() < 1e-10);
        assert!((s.eval(-1.0) + 1.0).abs() < 1e-10);
    }

    #[test]
    fn empty_cell_is_dropped_and_bridged() {
        // data only near the ends of [0, 1]: knots 0, 1/4, .., 1; knot 2 (x=0.5) gets no data
        let xs: Vec<f64> = (0..200)
            .map(|i| i as f64 / 199.0)
            .filter(|x| *x < 0.2 || *x > 0.8)
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - x).collect();
        let m = xs.len();
        let d = Dataset {
            name: "gap".into(),
            x: DMatrix::from_column_slice(m, 1, &xs),
            y: DMatrix::from_column_slice(m, 1, &ys),
            provenance: Provenance::Synthetic {
                generator: "gap".into(),
                seed: 0,
            },
            normalization: None,
        };
        let s = fit_linear_spline(&d, 5).unwrap();
        assert_eq!(s.dropped_basis, vec![2]);
        assert!((s.eval(0.5) - 0.5).abs() < 1e-10);
        assert!(spline_rmse(&s, &d) < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let d = midpoint_data(10, |x| x);
        assert!(fit_linear_spline(&d, 1).is_err());
        assert!(fit_spline(&d, 4, 3).is_err());
    }
}
