//! Shallow gated approximators: the ReLU MLP, the GLU and the GQU.
//!
//! All three share a ReLU gate `relu(Gx + g)` per neuron. The GLU multiplies
//! the gate by one affine value branch `(Ux + u)`, the GQU by two
//! (`(Ux + u) * (Qx + q)`), and every variant ends in an affine output head
//! `d + D h`. On a region where the set of open gates is fixed the model is a
//! polynomial of degree 1 (MLP), 2 (GLU) or 3 (GQU).

mod eval;
pub(crate) use eval::{fused_mse, value_branch_jacobian};
mod hinge;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eval::{
    block_jacobian, forward, grad_params, mse, neuron_decomposition, Activations, NeuronActivation,
};
pub use hinge::{cell_boundaries, CellBoundaries, Domain, HingeSegment, Knot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Mlp,
    Glu,
    Gqu,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Mlp, ArchKind::Glu, ArchKind::Gqu];

    /// Number of affine value branches multiplied onto the gate.
    pub fn value_branches(self) -> usize {
        match self {
            ArchKind::Mlp => 0,
            ArchKind::Glu => 1,
            ArchKind::Gqu => 2,
        }
    }

    /// Polynomial degree of the model inside a single cell.
    pub fn cell_degree(self) -> usize {
        self.value_branches() + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Mlp => "mlp",
            ArchKind::Glu => "glu",
            ArchKind::Gqu => "gqu",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ArchKind::Mlp),
            "glu" => Ok(ArchKind::Glu),
            "gqu" => Ok(ArchKind::Gqu),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture {other:?} (expected mlp, glu or gqu)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    pub dim_x: usize,
    pub dim_y: usize,
    /// Neuron count (width of the hidden layer).
    pub n: usize,
}

impl Architecture {
    pub fn new(kind: ArchKind, dim_x: usize, dim_y: usize, n: usize) -> Result<Self> {
        let arch = Architecture {
            kind,
            dim_x,
            dim_y,
            n,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Scalar-to-scalar architecture.
    pub fn scalar(kind: ArchKind, n: usize) -> Result<Self> {
        Self::new(kind, 1, 1, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.dim_x == 0 || self.dim_y == 0 {
            return Err(Error::InvalidConfig(format!(
                "architecture dimensions must be positive, got dim_x={} dim_y={} n={}",
                self.dim_x, self.dim_y, self.n
            )));
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    ///
    /// MLP: `(dim_x + dim_y + 1) n + dim_y`, GLU: `(2 dim_x + dim_y + 2) n + dim_y`,
    /// GQU: `(3 dim_x + dim_y + 3) n + dim_y`.
    pub fn param_count(&self) -> usize {
        let branches = self.kind.value_branches();
        (branches + 1) * (self.dim_x + 1) * self.n + self.dim_y * self.n + self.dim_y
    }

    /// Index range of a parameter block inside the flattened vector.
    pub fn block_range(&self, block: Block) -> Range<usize> {
        let affine = (self.dim_x + 1) * self.n;
        let values = self.kind.value_branches() * affine;
        match block {
            Block::Gates => 0..affine,
            Block::Values => affine..affine + values,
            Block::Head => affine + values..self.param_count(),
        }
    }

    pub fn block_len(&self, block: Block) -> usize {
        self.block_range(block).len()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(dim_x={}, dim_y={}, n={})",
            self.kind, self.dim_x, self.dim_y, self.n
        )
    }
}

/// Parameter groups updated together by the trainer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    /// `G, g`
    Gates,
    /// `U, u` and, for the GQU, `Q, q`
    Values,
    /// `D, d`
    Head,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Gates => "gates",
            Block::Values => "values",
            Block::Head => "head",
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gates" | "gate" => Ok(Block::Gates),
            "values" | "value" => Ok(Block::Values),
            "head" => Ok(Block::Head),
            other => Err(Error::InvalidConfig(format!(
                "unknown parameter block {other:?} (expected gates, values or head)"
            ))),
        }
    }
}

/// One affine map `x -> W x + b` per neuron; `weight` is `n x dim_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Affine {
    pub fn zeros(n: usize, dim_x: usize) -> Self {
        Affine {
            weight: DMatrix::zeros(n, dim_x),
            bias: DVector::zeros(n),
        }
    }

    /// `X W^T + 1 b^T`, an `m x n` matrix.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        // column by column: the inner dimension is tiny, so a streaming loop
        // beats a general matrix product
        let (m, n) = (x.nrows(), self.weight.nrows());
        let xs = x.as_slice();
        let mut z = DMatrix::from_element(m, n, 0.0);
        for (i, mut col) in z.column_iter_mut().enumerate() {
            let col = col.as_mut_slice();
            col.fill(self.bias[i]);
            for (j, xc) in xs.chunks_exact(m.max(1)).enumerate() {
                let w = self.weight[(i, j)];
                for (c, v) in col.iter_mut().zip(xc) {
                    *c += w * v;
                }
            }
        }
        z
    }

    fn check(&self, what: &'static str, n: usize, dim_x: usize) -> Result<()> {
        if self.weight.shape() != (n, dim_x) {
            return Err(Error::shape(
                what,
                format!("{n}x{dim_x}"),
                format!("{}x{}", self.weight.nrows(), self.weight.ncols()),
            ));
        }
        if self.bias.len() != n {
            return Err(Error::shape(what, n, self.bias.len()));
        }
        Ok(())
    }

    fn push_flat(&self, out: &mut Vec<f64>) {
        for i in 0..self.weight.nrows() {
            out.extend(self.weight.row(i).iter());
        }
        out.extend(self.bias.iter());
    }

    fn from_flat(flat: &[f64], n: usize, dim_x: usize) -> Self {
        let weight = DMatrix::from_row_slice(n, dim_x, &flat[..n * dim_x]);
        let bias = DVector::from_column_slice(&flat[n * dim_x..n * (dim_x + 1)]);
        Affine { weight, bias }
    }
}

/// Parameters of one architecture instance.
///
/// Flattened order is `G, g, U, u, Q, q, D, d`, matrices row-major; absent
/// branches contribute nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub gate: Affine,
    /// Present for GLU and GQU.
    pub value: Option<Affine>,
    /// Present for GQU only.
    pub quad: Option<Affine>,
    /// `dim_y x n`
    pub head_weight: DMatrix<f64>,
    pub head_bias: DVector<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        let branch = |on: bool| on.then(|| Affine::zeros(arch.n, arch.dim_x));
        ModelParams {
            arch,
            gate: Affine::zeros(arch.n, arch.dim_x),
            value: branch(arch.kind.value_branches() >= 1),
            quad: branch(arch.kind.value_branches() >= 2),
            head_weight: DMatrix::zeros(arch.dim_y, arch.n),
            head_bias: DVector::zeros(arch.dim_y),
        }
    }

    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.param_count() {
            return Err(Error::shape(
                "flattened parameters",
                arch.param_count(),
                flat.len(),
            ));
        }
        let (n, dx, dy) = (arch.n, arch.dim_x, arch.dim_y);
        let stride = n * (dx + 1);
        let mut offset = 0;
        let mut next_affine = || {
            let a = Affine::from_flat(&flat[offset..offset + stride], n, dx);
            offset += stride;
            a
        };
        let gate = next_affine();
        let value = (arch.kind.value_branches() >= 1).then(&mut next_affine);
        let quad = (arch.kind.value_branches() >= 2).then(&mut next_affine);
        let head_start = arch.block_range(Block::Head).start;
        let head_weight = DMatrix::from_row_slice(dy, n, &flat[head_start..head_start + dy * n]);
        let head_bias = DVector::from_column_slice(&flat[head_start + dy * n..]);
        let params = ModelParams {
            arch,
            gate,
            value,
            quad,
            head_weight,
            head_bias,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        self.gate.push_flat(&mut out);
        if let Some(v) = &self.value {
            v.push_flat(&mut out);
        }
        if let Some(q) = &self.quad {
            q.push_flat(&mut out);
        }
        for k in 0..self.head_weight.nrows() {
            out.extend(self.head_weight.row(k).iter());
        }
        out.extend(self.head_bias.iter());
        out
    }

    pub fn block_values(&self, block: Block) -> Vec<f64> {
        self.to_flat()[self.arch.block_range(block)].to_vec()
    }

    /// Copy with one block replaced.
    pub fn with_block(&self, block: Block, values: &[f64]) -> Result<Self> {
        let range = self.arch.block_range(block);
        if values.len() != range.len() {
            return Err(Error::shape(block.name(), range.len(), values.len()));
        }
        let mut flat = self.to_flat();
        flat[range].copy_from_slice(values);
        Self::from_flat(self.arch, &flat)
    }

    /// Checks shapes against the architecture and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let a = self.arch;
        a.validate()?;
        self.gate.check("gate", a.n, a.dim_x)?;
        let branches = a.kind.value_branches();
        match (&self.value, branches >= 1) {
            (Some(v), true) => v.check("value", a.n, a.dim_x)?,
            (None, false) => {}
            (got, _) => {
                return Err(Error::shape(
                    "value branch",
                    if branches >= 1 { "present" } else { "absent" },
                    if got.is_some() { "present" } else { "absent" },
                ))
            }
        }
        match (&self.quad, branches >= 2) {
            (Some(q), true) => q.check("quad", a.n, a.dim_x)?,
            (None, false) => {}
            (got, _) => {
                return Err(Error::shape(
                    "quad branch",
                    if branches >= 2 { "present" } else { "absent" },
                    if got.is_some() { "present" } else { "absent" },
                ))
            }
        }
        if self.head_weight.shape() != (a.dim_y, a.n) {
            return Err(Error::shape(
                "head weight",
                format!("{}x{}", a.dim_y, a.n),
                format!("{}x{}", self.head_weight.nrows(), self.head_weight.ncols()),
            ));
        }
        if self.head_bias.len() != a.dim_y {
            return Err(Error::shape("head bias", a.dim_y, self.head_bias.len()));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}
