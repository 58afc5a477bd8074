use nalgebra::{DMatrix, DVector};

use super::{Block, ModelParams};
use crate::error::{Error, Result};

/// Hidden-layer quantities for a batch, each `m x n` with one column per neuron.
#[derive(Clone, Debug)]
pub struct Activations {
    /// Gate pre-activation `Gx + g`.
    pub pre: DMatrix<f64>,
    /// `relu(pre)`
    pub gate: DMatrix<f64>,
    /// `Ux + u`
    pub value: Option<DMatrix<f64>>,
    /// `Qx + q`
    pub quad: Option<DMatrix<f64>>,
    /// Neuron outputs before the head: gate times every value branch.
    pub hidden: DMatrix<f64>,
}

impl Activations {
    pub fn new(params: &ModelParams, x: &DMatrix<f64>) -> Result<Self> {
        check_inputs(params, x)?;
        let pre = params.gate.apply(x);
        let gate = pre.map(relu);
        let value = params.value.as_ref().map(|v| v.apply(x));
        let quad = params.quad.as_ref().map(|q| q.apply(x));
        let mut hidden = gate.clone();
        if let Some(v) = &value {
            hidden.component_mul_assign(v);
        }
        if let Some(w) = &quad {
            hidden.component_mul_assign(w);
        }
        Ok(Activations {
            pre,
            gate,
            value,
            quad,
            hidden,
        })
    }

    /// Model output `H D^T + d`, `m x dim_y`.
    pub fn output(&self, params: &ModelParams) -> DMatrix<f64> {
        let mut out = &self.hidden * params.head_weight.transpose();
        for (mut col, b) in out.column_iter_mut().zip(params.head_bias.iter()) {
            col.add_scalar_mut(*b);
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.pre.nrows()
    }

    /// `d hidden / d pre`: the ReLU mask times every value branch.
    pub(crate) fn dhidden_dpre(&self) -> DMatrix<f64> {
        let mut out = self.pre.map(relu_derivative);
        if let Some(v) = &self.value {
            out.component_mul_assign(v);
        }
        if let Some(w) = &self.quad {
            out.component_mul_assign(w);
        }
        out
    }

    /// `d hidden / d value`: gate times the other branch (if any).
    pub(crate) fn dhidden_dvalue(&self) -> Option<DMatrix<f64>> {
        self.value.as_ref()?;
        let mut out = self.gate.clone();
        if let Some(w) = &self.quad {
            out.component_mul_assign(w);
        }
        Some(out)
    }

    pub(crate) fn dhidden_dquad(&self) -> Option<DMatrix<f64>> {
        let w = self.quad.as_ref();
        w?;
        let mut out = self.gate.clone();
        if let Some(v) = &self.value {
            out.component_mul_assign(v);
        }
        Some(out)
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Subgradient at 0 is taken as 0.
#[inline]
fn relu_derivative(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn check_inputs(params: &ModelParams, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != params.arch.dim_x {
        return Err(Error::shape("input columns", params.arch.dim_x, x.ncols()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model inputs".into()));
    }
    Ok(())
}

fn check_targets(params: &ModelParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if y.shape() != (x.nrows(), params.arch.dim_y) {
        return Err(Error::shape(
            "targets",
            format!("{}x{}", x.nrows(), params.arch.dim_y),
            format!("{}x{}", y.nrows(), y.ncols()),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets".into()));
    }
    Ok(())
}

/// Evaluates the model row-wise: `x` is `m x dim_x`, the result `m x dim_y`.
pub fn forward(params: &ModelParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(Activations::new(params, x)?.output(params))
}

/// Mean squared error over all `m * dim_y` output entries.
///
/// Evaluated point by point without materializing the hidden layer, which
/// keeps the many loss evaluations of a line search cheap.
pub fn mse(params: &ModelParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_targets(params, x, y)?;
    Ok(fused_mse(params, x, y))
}

/// Scalar-in, scalar-out specialization of [`fused_mse`]; records are `(w, b)` pairs.
fn scalar_mse(
    gate: &[f64],
    value: Option<&[f64]>,
    quad: Option<&[f64]>,
    head: &[f64],
    bias: f64,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> f64 {
    let m = x.nrows();
    let mut total = 0.0;
    for (&t, &target) in x.as_slice().iter().zip(y.as_slice()) {
        let mut out = bias;
        match (value, quad) {
            (None, _) => {
                for (g, d) in gate.chunks_exact(2).zip(head) {
                    let z = g[0] * t + g[1];
                    if z > 0.0 {
                        out += d * z;
                    }
                }
            }
            (Some(v), None) => {
                for ((g, u), d) in gate.chunks_exact(2).zip(v.chunks_exact(2)).zip(head) {
                    let z = g[0] * t + g[1];
                    if z > 0.0 {
                        out += d * z * (u[0] * t + u[1]);
                    }
                }
            }
            (Some(v), Some(q)) => {
                for (((g, u), w), d) in gate
                    .chunks_exact(2)
                    .zip(v.chunks_exact(2))
                    .zip(q.chunks_exact(2))
                    .zip(head)
                {
                    let z = g[0] * t + g[1];
                    if z > 0.0 {
                        out += d * z * (u[0] * t + u[1]) * (w[0] * t + w[1]);
                    }
                }
            }
        }
        total += (out - target).powi(2);
    }
    total / m.max(1) as f64
}

/// [`mse`] without shape checks.
pub(crate) fn fused_mse(params: &ModelParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let arch = params.arch;
    let (m, n, dx, dy) = (x.nrows(), arch.n, arch.dim_x, arch.dim_y);
    // row-major copies: one contiguous (weights..., bias) record per neuron
    let pack = |a: &super::Affine| -> Vec<f64> {
        (0..n)
            .flat_map(|i| {
                (0..dx)
                    .map(move |j| (i, j))
                    .map(|(i, j)| a.weight[(i, j)])
                    .chain([a.bias[i]])
            })
            .collect()
    };
    let gate = pack(&params.gate);
    let value = params.value.as_ref().map(pack);
    let quad = params.quad.as_ref().map(pack);
    let head: Vec<f64> = (0..n)
        .flat_map(|i| (0..dy).map(move |k| (i, k)))
        .map(|(i, k)| params.head_weight[(k, i)])
        .collect();
    if dx == 1 && dy == 1 {
        return scalar_mse(
            &gate,
            value.as_deref(),
            quad.as_deref(),
            &head,
            params.head_bias[0],
            x,
            y,
        );
    }
    // blocks of rows, one neuron at a time: the inner loops run over
    // contiguous column slices and vectorize
    const CHUNK: usize = 256;
    let xs = x.as_slice();
    let ys = y.as_slice();
    let mut z = [0.0; CHUNK];
    let mut h = [0.0; CHUNK];
    let mut out = vec![0.0; dy * CHUNK];
    let mut total = 0.0;
    let fill = |rec: &[f64], lo: usize, len: usize, buf: &mut [f64]| {
        buf[..len].fill(rec[dx]);
        for j in 0..dx {
            let w = rec[j];
            for (b, v) in buf[..len].iter_mut().zip(&xs[j * m + lo..j * m + lo + len]) {
                *b += w * v;
            }
        }
    };
    for lo in (0..m).step_by(CHUNK) {
        let len = CHUNK.min(m - lo);
        for k in 0..dy {
            out[k * CHUNK..k * CHUNK + len].fill(params.head_bias[k]);
        }
        for i in 0..n {
            let rec = i * (dx + 1)..(i + 1) * (dx + 1);
            fill(&gate[rec.clone()], lo, len, &mut z);
            for v in z[..len].iter_mut() {
                *v = v.max(0.0);
            }
            if let Some(v) = &value {
                fill(&v[rec.clone()], lo, len, &mut h);
                for (a, b) in z[..len].iter_mut().zip(&h[..len]) {
                    *a *= b;
                }
            }
            if let Some(q) = &quad {
                fill(&q[rec], lo, len, &mut h);
                for (a, b) in z[..len].iter_mut().zip(&h[..len]) {
                    *a *= b;
                }
            }
            for k in 0..dy {
                let d = head[i * dy + k];
                for (o, a) in out[k * CHUNK..k * CHUNK + len].iter_mut().zip(&z[..len]) {
                    *o += d * a;
                }
            }
        }
        for k in 0..dy {
            for (o, t) in out[k * CHUNK..k * CHUNK + len]
                .iter()
                .zip(&ys[k * m + lo..k * m + lo + len])
            {
                total += (o - t) * (o - t);
            }
        }
    }
    total / (m * dy).max(1) as f64
}

/// Exact gradient of [`mse`] with respect to the flattened parameters.
pub fn grad_params(
    params: &ModelParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_targets(params, x, y)?;
    let acts = Activations::new(params, x)?;
    let scale = 2.0 / y.len().max(1) as f64;
    let err = (acts.output(params) - y) * scale;

    let d_head_w = err.transpose() * &acts.hidden;
    let d_head_b: Vec<f64> = err.column_iter().map(|c| c.sum()).collect();
    let d_hidden = &err * &params.head_weight;

    let mut d_pre = acts.dhidden_dpre();
    d_pre.component_mul_assign(&d_hidden);
    let mut d_value = acts.dhidden_dvalue();
    if let Some(dv) = d_value.as_mut() {
        dv.component_mul_assign(&d_hidden);
    }
    let mut d_quad = acts.dhidden_dquad();
    if let Some(dq) = d_quad.as_mut() {
        dq.component_mul_assign(&d_hidden);
    }

    let mut grad = Vec::with_capacity(params.arch.param_count());
    push_affine_grad(&mut grad, &d_pre, x);
    if let Some(dv) = &d_value {
        push_affine_grad(&mut grad, dv, x);
    }
    if let Some(dq) = &d_quad {
        push_affine_grad(&mut grad, dq, x);
    }
    for k in 0..d_head_w.nrows() {
        grad.extend(d_head_w.row(k).iter());
    }
    grad.extend(d_head_b);
    Ok(DVector::from_vec(grad))
}

/// Appends `dW = dZ^T X` (row-major) and `db = colsum(dZ)`.
fn push_affine_grad(out: &mut Vec<f64>, dz: &DMatrix<f64>, x: &DMatrix<f64>) {
    let dw = dz.transpose() * x;
    for i in 0..dw.nrows() {
        out.extend(dw.row(i).iter());
    }
    out.extend(dz.column_iter().map(|c| c.sum()));
}

/// Jacobian of the model outputs with respect to one parameter block.
///
/// Rows are ordered output-major (`k * m + row`), columns follow the flattened
/// parameter order within the block.
pub fn block_jacobian(
    params: &ModelParams,
    acts: &Activations,
    x: &DMatrix<f64>,
    block: Block,
) -> DMatrix<f64> {
    let arch = params.arch;
    let (m, n, dx, dy) = (acts.rows(), arch.n, arch.dim_x, arch.dim_y);
    let mut jac = DMatrix::zeros(m * dy, arch.block_len(block));
    match block {
        Block::Head => {
            for k in 0..dy {
                for i in 0..n {
                    jac.view_mut((k * m, k * n + i), (m, 1))
                        .copy_from(&acts.hidden.column(i));
                }
                jac.view_mut((k * m, dy * n + k), (m, 1)).fill(1.0);
            }
        }
        Block::Gates => {
            fill_affine_columns(&mut jac, 0, &acts.dhidden_dpre(), params, x);
        }
        Block::Values => {
            if let Some(dv) = acts.dhidden_dvalue() {
                fill_affine_columns(&mut jac, 0, &dv, params, x);
            }
            if let Some(dq) = acts.dhidden_dquad() {
                fill_affine_columns(&mut jac, n * (dx + 1), &dq, params, x);
            }
        }
    }
    jac
}

/// Columns of one value branch (`0`: `U, u`; `1`: `Q, q`) of the values block.
pub(crate) fn value_branch_jacobian(
    params: &ModelParams,
    acts: &Activations,
    x: &DMatrix<f64>,
    branch: usize,
) -> DMatrix<f64> {
    let arch = params.arch;
    let mut jac = DMatrix::zeros(acts.rows() * arch.dim_y, arch.n * (arch.dim_x + 1));
    let dh = if branch == 0 {
        acts.dhidden_dvalue()
    } else {
        acts.dhidden_dquad()
    };
    if let Some(dh) = dh {
        fill_affine_columns(&mut jac, 0, &dh, params, x);
    }
    jac
}

/// Columns for an affine branch `W x + b` whose per-neuron sensitivity is `dh`.
fn fill_affine_columns(
    jac: &mut DMatrix<f64>,
    offset: usize,
    dh: &DMatrix<f64>,
    params: &ModelParams,
    x: &DMatrix<f64>,
) {
    let (m, n, dx) = (x.nrows(), params.arch.n, params.arch.dim_x);
    for k in 0..params.arch.dim_y {
        let rows = k * m;
        for i in 0..n {
            let coef = params.head_weight[(k, i)];
            let base = dh.column(i);
            let base = base.as_slice();
            for j in 0..dx {
                let mut col = jac.column_mut(offset + i * dx + j);
                let col = &mut col.as_mut_slice()[rows..rows + m];
                for ((c, b), v) in col.iter_mut().zip(base).zip(x.column(j).iter()) {
                    *c = coef * b * v;
                }
            }
            let mut col = jac.column_mut(offset + n * dx + i);
            for (c, b) in col.as_mut_slice()[rows..rows + m].iter_mut().zip(base) {
                *c = coef * b;
            }
        }
    }
}

/// Contribution `D_i * hidden_i(x)` of a single neuron over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronActivation {
    pub neuron_index: usize,
    pub values: Vec<f64>,
    /// Gate open (`Gx + g > 0`) at each point.
    pub active_mask: Vec<bool>,
}

/// Splits a scalar-output model into per-neuron contributions.
///
/// The contributions plus the output bias sum to [`forward`].
pub fn neuron_decomposition(
    params: &ModelParams,
    x: &DMatrix<f64>,
) -> Result<Vec<NeuronActivation>> {
    if params.arch.dim_y != 1 {
        return Err(Error::Unsupported(format!(
            "neuron decomposition needs dim_y = 1, got {}",
            params.arch.dim_y
        )));
    }
    let acts = Activations::new(params, x)?;
    Ok((0..params.arch.n)
        .map(|i| {
            let coef = params.head_weight[(0, i)];
            NeuronActivation {
                neuron_index: i,
                values: acts.hidden.column(i).iter().map(|h| coef * h).collect(),
                active_mask: acts.pre.column(i).iter().map(|z| *z > 0.0).collect(),
            }
        })
        .collect())
}
