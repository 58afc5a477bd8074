//! Fast paths for scalar models (`dim_x = dim_y = 1`) on inputs sorted ascending.
//!
//! Floating-point rounding is monotone, so each gate's open/closed status
//! switches at most once along sorted inputs and can be located by bisection.
//! Between consecutive switches every Jacobian column is a polynomial of degree
//! at most `cell_degree` in `x`. Writing a run's rows as `V C` (Vandermonde
//! times coefficients) and `V = Q R` gives `J^T J = sum (R C)^T (R C)` and
//! `J^T r = sum C^T (V^T r)` without ever forming `J`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::models::{Block, ModelParams};

/// Per-neuron `(weight, bias)` pairs and head weights of a scalar model.
pub(crate) struct ScalarView {
    gate: Vec<(f64, f64)>,
    value: Option<Vec<(f64, f64)>>,
    quad: Option<Vec<(f64, f64)>>,
    head: Vec<f64>,
    bias: f64,
    degree: usize,
}

type Poly = [f64; 4];

fn mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 - i {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

impl ScalarView {
    pub(crate) fn new(params: &ModelParams) -> Option<Self> {
        let arch = params.arch;
        if arch.dim_x != 1 || arch.dim_y != 1 {
            return None;
        }
        let pairs = |a: &crate::models::Affine| -> Vec<(f64, f64)> {
            (0..arch.n).map(|i| (a.weight[(i, 0)], a.bias[i])).collect()
        };
        Some(ScalarView {
            gate: pairs(&params.gate),
            value: params.value.as_ref().map(pairs),
            quad: params.quad.as_ref().map(pairs),
            head: params.head_weight.row(0).iter().copied().collect(),
            bias: params.head_bias[0],
            degree: arch.kind.cell_degree(),
        })
    }

    fn n(&self) -> usize {
        self.gate.len()
    }

    /// Run coordinate `(centre, spread)` mapping a run onto roughly `[-1, 1]`.
    fn frame(seg: &[f64]) -> (f64, f64) {
        let (lo, hi) = (seg[0], seg[seg.len() - 1]);
        let spread = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
        (0.5 * (lo + hi), spread)
    }

    fn open_at(&self, x: f64) -> Vec<bool> {
        self.gate.iter().map(|&(g, c)| g * x + c > 0.0).collect()
    }

    /// The model on one run as a polynomial in the run coordinate.
    fn output_poly(&self, centre: f64, spread: f64, open: &[bool]) -> Poly {
        let mut out = [self.bias, 0.0, 0.0, 0.0];
        for (i, _) in open.iter().enumerate().filter(|(_, o)| **o) {
            let mut h = Self::affine(self.gate[i], centre, spread);
            if let Some(v) = &self.value {
                h = mul(&h, &Self::affine(v[i], centre, spread));
            }
            if let Some(q) = &self.quad {
                h = mul(&h, &Self::affine(q[i], centre, spread));
            }
            for (o, c) in out.iter_mut().zip(h) {
                *o += self.head[i] * c;
            }
        }
        out
    }

    /// `model - y` at every point, evaluated run by run.
    pub(crate) fn residuals(&self, runs: &[Range<usize>], xs: &[f64], ys: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(xs.len());
        for run in runs {
            let seg = &xs[run.clone()];
            let (centre, spread) = Self::frame(seg);
            let poly = self.output_poly(centre, spread, &self.open_at(seg[0]));
            for (&x, &y) in seg.iter().zip(&ys[run.clone()]) {
                let t = (x - centre) / spread;
                out.push(poly[0] + t * (poly[1] + t * (poly[2] + t * poly[3])) - y);
            }
        }
        out
    }

    /// Mean squared residual; every loss value inside the trainer comes from here.
    pub(crate) fn mse(&self, xs: &[f64], ys: &[f64]) -> f64 {
        mean_square(&self.residuals(&self.runs(xs), xs, ys))
    }

    /// Gradient of the MSE with respect to the flattened parameters.
    pub(crate) fn gradient(&self, xs: &[f64], ys: &[f64]) -> DVector<f64> {
        let runs = self.runs(xs);
        let residual = self.residuals(&runs, xs, ys);
        let n = self.n();
        let values = 2 * n * (self.value.is_some() as usize + self.quad.is_some() as usize);
        let layout = [
            (Block::Gates, 2 * n),
            (Block::Values, values),
            (Block::Head, n + 1),
        ];
        let mut grad = Vec::with_capacity(4 * n + values + 1);
        for (block, len) in layout {
            let (_, rhs) = self.normal_equations_on(block, &(0..len), &runs, xs, &residual, false);
            grad.extend(rhs.iter());
        }
        DVector::from_vec(grad) * (2.0 / xs.len().max(1) as f64)
    }

    /// Index ranges of `xs` on which no gate changes state.
    pub(crate) fn runs(&self, xs: &[f64]) -> Vec<Range<usize>> {
        let m = xs.len();
        let mut cuts = vec![0, m];
        if m > 0 {
            for &(g, c) in &self.gate {
                let open = |x: f64| g * x + c > 0.0;
                let first = open(xs[0]);
                cuts.push(xs.partition_point(|&x| open(x) == first));
            }
        }
        cuts.sort_unstable();
        cuts.dedup();
        cuts.windows(2).map(|w| w[0]..w[1]).collect()
    }

    /// Polynomial in the run coordinate `t = (x - centre) / spread`.
    fn affine(pair: (f64, f64), centre: f64, spread: f64) -> Poly {
        [pair.0 * centre + pair.1, pair.0 * spread, 0.0, 0.0]
    }

    /// Column `j` of `block` on a run where the gates in `open` are open.
    fn column_poly(&self, block: Block, j: usize, centre: f64, spread: f64, open: &[bool]) -> Poly {
        let n = self.n();
        let one: Poly = [1.0, 0.0, 0.0, 0.0];
        let x: Poly = [centre, spread, 0.0, 0.0];
        let factor = |branch: &Option<Vec<(f64, f64)>>, i: usize| -> Poly {
            branch
                .as_ref()
                .map_or(one, |b| Self::affine(b[i], centre, spread))
        };
        let gate = |i: usize| Self::affine(self.gate[i], centre, spread);
        let zero = [0.0; 4];
        match block {
            Block::Head => {
                if j == n {
                    return one;
                }
                if !open[j] {
                    return zero;
                }
                mul(
                    &mul(&gate(j), &factor(&self.value, j)),
                    &factor(&self.quad, j),
                )
            }
            Block::Gates => {
                let i = j % n;
                if !open[i] {
                    return zero;
                }
                let vw = mul(&factor(&self.value, i), &factor(&self.quad, i));
                let base = if j < n { mul(&x, &vw) } else { vw };
                base.map(|c| c * self.head[i])
            }
            Block::Values => {
                let i = j % n;
                if !open[i] {
                    return zero;
                }
                // the other branch's factor
                let other = if j < 2 * n {
                    factor(&self.quad, i)
                } else {
                    factor(&self.value, i)
                };
                let zo = mul(&gate(i), &other);
                let base = if (j / n) % 2 == 0 { mul(&x, &zo) } else { zo };
                base.map(|c| c * self.head[i])
            }
        }
    }

    /// `(J^T J, J^T r)` for columns `part` of `block`.
    pub(crate) fn normal_equations(
        &self,
        block: Block,
        part: &Range<usize>,
        runs: &[Range<usize>],
        xs: &[f64],
        residual: &[f64],
    ) -> (DMatrix<f64>, DVector<f64>) {
        self.normal_equations_on(block, part, runs, xs, residual, true)
    }

    fn normal_equations_on(
        &self,
        block: Block,
        part: &Range<usize>,
        runs: &[Range<usize>],
        xs: &[f64],
        residual: &[f64],
        with_normal: bool,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let p = part.len();
        let b = self.degree + 1;
        let rows: usize = if with_normal {
            runs.iter().map(|r| r.len().min(b)).sum()
        } else {
            0
        };
        let mut reduced = DMatrix::zeros(rows, p);
        let mut rhs = DVector::zeros(p);
        let mut at = 0;
        for run in runs {
            let seg = &xs[run.clone()];
            let (centre, spread) = Self::frame(seg);
            let open = self.open_at(seg[0]);
            let vander = DMatrix::from_fn(seg.len(), b, |r, k| {
                ((seg[r] - centre) / spread).powi(k as i32)
            });
            let moments = vander.tr_mul(&DVector::from_column_slice(&residual[run.clone()]));
            let mut coef = DMatrix::zeros(b, p);
            for c in 0..p {
                let poly = self.column_poly(block, part.start + c, centre, spread, &open);
                for k in 0..b {
                    coef[(k, c)] = poly[k];
                }
            }
            rhs += coef.tr_mul(&moments);
            if with_normal {
                let factor = if seg.len() > b {
                    vander.qr().r()
                } else {
                    vander
                };
                let rows_here = factor.nrows();
                reduced
                    .view_mut((at, 0), (rows_here, p))
                    .copy_from(&(&factor * &coef));
                at += rows_here;
            }
        }
        (reduced.tr_mul(&reduced), rhs)
    }
}

pub(crate) fn mean_square(residual: &[f64]) -> f64 {
    residual.iter().map(|r| r * r).sum::<f64>() / residual.len().max(1) as f64
}

/// Ascending sort of paired scalar data.
pub(crate) fn sorted_pairs(x: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| x[(a, 0)].total_cmp(&x[(b, 0)]).then(a.cmp(&b)));
    let m = order.len();
    (
        DMatrix::from_fn(m, 1, |r, _| x[(order[r], 0)]),
        DMatrix::from_fn(m, 1, |r, _| y[(order[r], 0)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        block_jacobian, grad_params, value_branch_jacobian, Activations, ArchKind, Architecture,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(
        kind: ArchKind,
        n: usize,
        m: usize,
        seed: u64,
    ) -> (ModelParams, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::scalar(kind, n).unwrap();
        let flat: Vec<f64> = (0..arch.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let p = ModelParams::from_flat(arch, &flat).unwrap();
        let x = DMatrix::from_fn(m, 1, |_, _| rng.random_range(-1.0..1.0));
        let y = x.map(|v: f64| (3.0 * v).sin());
        let (x, y) = sorted_pairs(&x, &y);
        (p, x, y)
    }

    #[test]
    fn matches_dense_normal_equations() {
        for (s, kind) in ArchKind::ALL.iter().enumerate() {
            let (p, x, y) = random_case(*kind, 9, 1500, s as u64);
            let view = ScalarView::new(&p).unwrap();
            let acts = Activations::new(&p, &x).unwrap();
            let runs = view.runs(x.as_slice());
            let r = view.residuals(&runs, x.as_slice(), y.as_slice());
            let rv = DVector::from_column_slice(&r);
            let direct = &crate::models::forward(&p, &x).unwrap() - &y;
            assert!((&rv - DVector::from_column_slice(direct.as_slice())).amax() < 1e-12);
            let mut cases: Vec<(Block, Range<usize>, DMatrix<f64>)> = Vec::new();
            for block in [Block::Head, Block::Gates] {
                let len = p.arch.block_len(block);
                cases.push((block, 0..len, block_jacobian(&p, &acts, &x, block)));
            }
            let len = p.arch.block_len(Block::Values);
            if *kind == ArchKind::Gqu {
                cases.push((
                    Block::Values,
                    0..len / 2,
                    value_branch_jacobian(&p, &acts, &x, 0),
                ));
                cases.push((
                    Block::Values,
                    len / 2..len,
                    value_branch_jacobian(&p, &acts, &x, 1),
                ));
            } else if len > 0 {
                cases.push((
                    Block::Values,
                    0..len,
                    block_jacobian(&p, &acts, &x, Block::Values),
                ));
            }
            for (block, part, jac) in cases {
                let (normal, rhs) = view.normal_equations(block, &part, &runs, x.as_slice(), &r);
                let dense = jac.tr_mul(&jac);
                let dense_rhs = jac.tr_mul(&rv);
                assert!(
                    (&normal - &dense).amax() <= 1e-11 * dense.amax(),
                    "{kind} {block} {part:?}"
                );
                assert!(
                    (&rhs - &dense_rhs).amax() <= 1e-11 * dense_rhs.amax().max(1e-300),
                    "{kind} {block}"
                );
            }
        }
    }

    #[test]
    fn gradient_matches_backprop() {
        for (s, kind) in ArchKind::ALL.iter().enumerate() {
            let (p, x, y) = random_case(*kind, 6, 700, 40 + s as u64);
            let view = ScalarView::new(&p).unwrap();
            let fast = view.gradient(x.as_slice(), y.as_slice());
            let slow = grad_params(&p, &x, &y).unwrap();
            assert!((&fast - &slow).amax() <= 1e-13 * slow.amax(), "{kind}");
        }
    }

    #[test]
    fn runs_split_at_gate_switches() {
        let (p, x, _) = random_case(ArchKind::Mlp, 5, 400, 3);
        let view = ScalarView::new(&p).unwrap();
        let runs = view.runs(x.as_slice());
        assert_eq!(runs.first().unwrap().start, 0);
        assert_eq!(runs.last().unwrap().end, 400);
        for run in runs {
            let xs = &x.as_slice()[run];
            let pattern = |t: f64| {
                view.gate
                    .iter()
                    .map(|&(g, c)| g * t + c > 0.0)
                    .collect::<Vec<_>>()
            };
            assert!(xs.iter().all(|&t| pattern(t) == pattern(xs[0])));
        }
    }

    #[test]
    fn only_scalar_models() {
        let arch = Architecture::new(ArchKind::Glu, 2, 1, 3).unwrap();
        assert!(ScalarView::new(&ModelParams::zeros(arch)).is_none());
    }
}
