//! Deterministic block Gauss-Newton trainer.
//!
//! Each outer iteration cycles the trainable parameter blocks in the order
//! head, values, gates. For one block the step solves the damped normal
//! equations `(J^T J + lambda diag(J^T J)) s = -J^T r` on the full batch after
//! symmetric Jacobi scaling. Columns whose diagonal is negligible relative to
//! the largest one are dropped from the solve and keep their current values.
//! A backtracking Armijo line search on the MSE decides how much of the step
//! is taken, so accepted steps never increase the loss.
//!
//! The GQU values block is stepped as two parts, `(U, u)` then `(Q, q)`, each
//! of which is linear least squares with the other branch held fixed. Damping
//! is tracked per part.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{affine_branch_normal, normal_matrix};
use crate::linalg::solve_spd;
use crate::models::{
    block_jacobian, fused_mse, grad_params, value_branch_jacobian, Activations, Block, ModelParams,
};
use crate::scalar::{mean_square, sorted_pairs, ScalarView};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    /// Step shrink factor, in (0, 1).
    pub backtrack: f64,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
        }
    }
}

/// Levenberg-style diagonal damping schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Damping {
    pub initial: f64,
    /// Applied after a step that needed backtracking or was rejected.
    pub increase: f64,
    /// Applied after a full step was accepted.
    pub decrease: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Damping {
            initial: 1e-10,
            increase: 10.0,
            decrease: 10.0,
            min: 1e-15,
            max: 1e8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_outer_iters: usize,
    /// Stop when the gradient infinity-norm over trainable blocks drops below.
    pub grad_tol: f64,
    /// Stop when the MSE drops below.
    pub loss_floor: f64,
    /// Relative to the largest diagonal entry of `J^T J`.
    pub singular_diag_threshold: f64,
    pub line_search: LineSearch,
    pub damping: Damping,
    pub trainable_blocks: BTreeSet<Block>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_outer_iters: 2000,
            grad_tol: 1e-13,
            loss_floor: 1e-26,
            singular_diag_threshold: 1e-12,
            line_search: LineSearch::default(),
            damping: Damping::default(),
            trainable_blocks: [Block::Head, Block::Values, Block::Gates].into(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Same config training only `blocks`.
    pub fn with_blocks(mut self, blocks: &[Block]) -> Self {
        self.trainable_blocks = blocks.iter().copied().collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(ls.backtrack > 0.0 && ls.backtrack < 1.0) {
            return bad("line search backtrack factor must lie in (0, 1)");
        }
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return bad("sufficient decrease constant must lie in (0, 1)");
        }
        if !(self.grad_tol > 0.0 && self.loss_floor > 0.0 && self.singular_diag_threshold > 0.0) {
            return bad("tolerances must be positive");
        }
        let d = &self.damping;
        if !(d.initial >= 0.0
            && d.increase >= 1.0
            && d.decrease >= 1.0
            && d.min >= 0.0
            && d.max >= d.min)
        {
            return bad("invalid damping schedule");
        }
        if self.trainable_blocks.is_empty() {
            return bad("at least one trainable block is required");
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be positive");
        }
        Ok(())
    }

    /// Trainable blocks in cycle order.
    pub fn cycle(&self) -> Vec<Block> {
        [Block::Head, Block::Values, Block::Gates]
            .into_iter()
            .filter(|b| self.trainable_blocks.contains(b))
            .collect()
    }
}

/// Why training stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    LossFloor,
    MaxIters,
    LineSearchStall,
    /// Non-finite loss; only appears on sweep records.
    Aborted,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::GradTol => "grad_tol",
            StopReason::LossFloor => "loss_floor",
            StopReason::MaxIters => "max_iters",
            StopReason::LineSearchStall => "line_search_stall",
            StopReason::Aborted => "aborted",
        }
    }

    /// Whether a result with this stop reason may enter a slope fit.
    pub fn is_usable(self) -> bool {
        self != StopReason::Aborted
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            StopReason::GradTol,
            StopReason::LossFloor,
            StopReason::MaxIters,
            StopReason::LineSearchStall,
            StopReason::Aborted,
        ]
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown stop reason {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepFlag {
    /// Every column fell under the singular threshold.
    AllEliminated,
    ZeroGradient,
    /// The solved direction was not a descent direction.
    NotDescent,
    LineSearchExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub block: Block,
    pub mse_before: f64,
    pub mse_after: f64,
    pub eliminated: usize,
    pub lambda: f64,
    pub backtracks: usize,
    /// Fraction of the Gauss-Newton step taken (0 when rejected).
    pub step_scale: f64,
    pub flag: Option<StepFlag>,
}

impl StepReport {
    pub fn accepted(&self) -> bool {
        self.flag.is_none()
    }
}

/// One entry of the loss trace: the state after a block step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub block: Block,
    pub mse: f64,
    pub backtracks: usize,
    pub eliminated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub final_rmse: f64,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub converged_reason: StopReason,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Loss trace as CSV with header `iter,mse,block,backtracks,eliminated`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,mse,block,backtracks,eliminated\n");
        for t in &self.trace {
            out.push_str(&format!(
                "{},{:e},{},{},{}\n",
                t.iter, t.mse, t.block, t.backtracks, t.eliminated
            ));
        }
        out
    }
}

/// Residual `model - y`, stacked output-major to match [`block_jacobian`] rows.
fn stacked_residual(out: &DMatrix<f64>, y: &DMatrix<f64>) -> DVector<f64> {
    let diff = out - y;
    DVector::from_column_slice(diff.as_slice())
}

/// Training loss. Scalar models expect inputs sorted ascending.
fn loss(params: &ModelParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    match ScalarView::new(params) {
        Some(view) => view.mse(x.as_slice(), y.as_slice()),
        None => fused_mse(params, x, y),
    }
}

fn check_data(params: &ModelParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != params.arch.dim_x {
        return Err(Error::shape("input columns", params.arch.dim_x, x.ncols()));
    }
    if y.shape() != (x.nrows(), params.arch.dim_y) {
        return Err(Error::shape(
            "targets",
            format!("{}x{}", x.nrows(), params.arch.dim_y),
            format!("{}x{}", y.nrows(), y.ncols()),
        ));
    }
    if x.nrows() == 0 {
        return Err(Error::Dataset("empty training set".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }
    Ok(())
}

/// Column ranges of `block` that are stepped one after another.
///
/// The GQU values block is bilinear in its two affine branches; stepping
/// `(U, u)` and `(Q, q)` separately keeps each subproblem linear least squares,
/// which converges far faster than one joint step. Other blocks are one part.
fn block_parts(params: &ModelParams, block: Block) -> Vec<Range<usize>> {
    let len = params.arch.block_len(block);
    if block == Block::Values && params.quad.is_some() {
        let half = len / 2;
        vec![0..half, half..len]
    } else {
        vec![0..len]
    }
}

/// One damped Gauss-Newton step on `block` using the initial damping of `config`.
///
/// For the GQU values block this is one step per value branch, in order; the
/// report then sums eliminations and backtracks and counts as accepted when
/// either branch moved.
pub fn newton_step_block(
    params: &ModelParams,
    block: Block,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TrainConfig,
) -> Result<(ModelParams, StepReport)> {
    config.validate()?;
    check_data(params, x, y)?;
    let sorted = scalar_sorted(params, x, y);
    let (x, y) = match &sorted {
        Some((a, b)) => (a, b),
        None => (x, y),
    };
    let mut current = params.clone();
    let mut merged: Option<StepReport> = None;
    for part in block_parts(params, block) {
        let (next, step) = step_part(&current, block, part, x, y, config, config.damping.initial)?;
        current = next;
        merged = Some(match merged {
            None => step,
            Some(prev) => StepReport {
                mse_after: step.mse_after,
                eliminated: prev.eliminated + step.eliminated,
                backtracks: prev.backtracks + step.backtracks,
                step_scale: step.step_scale,
                flag: if prev.accepted() || step.accepted() {
                    None
                } else {
                    step.flag
                },
                ..prev
            },
        });
    }
    Ok((current, merged.expect("every block has a part")))
}

fn part_jacobian(
    params: &ModelParams,
    acts: &Activations,
    x: &DMatrix<f64>,
    block: Block,
    part: &Range<usize>,
) -> DMatrix<f64> {
    let len = params.arch.block_len(block);
    if part.len() == len {
        block_jacobian(params, acts, x, block)
    } else {
        value_branch_jacobian(params, acts, x, (part.start > 0) as usize)
    }
}

/// Scalar models train on inputs sorted ascending, which enables the
/// polynomial-run fast path for the normal equations.
fn scalar_sorted(
    params: &ModelParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    (params.arch.dim_x == 1 && params.arch.dim_y == 1).then(|| sorted_pairs(x, y))
}

/// `(mse, J^T J, J^T r)` for one part, with `r = model - y`.
///
/// The MSE is the same evaluation [`loss`] performs, so the line search
/// compares like with like.
fn normal_equations(
    params: &ModelParams,
    block: Block,
    part: &Range<usize>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>, DVector<f64>)> {
    if let Some(view) = ScalarView::new(params) {
        debug_assert!(x.as_slice().windows(2).all(|w| w[0] <= w[1]));
        let runs = view.runs(x.as_slice());
        let residual = view.residuals(&runs, x.as_slice(), y.as_slice());
        let (normal, rhs) = view.normal_equations(block, part, &runs, x.as_slice(), &residual);
        return Ok((mean_square(&residual), normal, rhs));
    }
    let acts = Activations::new(params, x)?;
    if params.arch.dim_x > 1 && block != Block::Head {
        let dh = match (block, part.start > 0) {
            (Block::Gates, _) => Some(acts.dhidden_dpre()),
            (_, false) => acts.dhidden_dvalue(),
            (_, true) => acts.dhidden_dquad(),
        }
        .expect("value parts exist only with value branches");
        let residual = acts.output(params) - y;
        let (normal, rhs) = affine_branch_normal(params, &dh, x, &residual);
        return Ok((loss(params, x, y), normal, rhs));
    }
    let residual = stacked_residual(&acts.output(params), y);
    let jac = part_jacobian(params, &acts, x, block, part);
    let normal = normal_matrix(params, &acts, x, &jac);
    Ok((loss(params, x, y), normal, jac.tr_mul(&residual)))
}

fn step_part(
    params: &ModelParams,
    block: Block,
    part: Range<usize>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TrainConfig,
    lambda: f64,
) -> Result<(ModelParams, StepReport)> {
    let count = y.len() as f64;
    let p = part.len();
    if p == 0 {
        let mse0 = loss(params, x, y);
        let report = StepReport {
            block,
            mse_before: mse0,
            mse_after: mse0,
            eliminated: 0,
            lambda,
            backtracks: 0,
            step_scale: 0.0,
            flag: Some(StepFlag::AllEliminated),
        };
        return Ok((params.clone(), report));
    }
    let (mse0, normal, rhs) = normal_equations(params, block, &part, x, y)?;
    let mut report = StepReport {
        block,
        mse_before: mse0,
        mse_after: mse0,
        eliminated: 0,
        lambda,
        backtracks: 0,
        step_scale: 0.0,
        flag: None,
    };

    let diag = normal.diagonal();
    let max_diag = diag.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..p)
        .filter(|&j| diag[j] > 0.0 && diag[j] > config.singular_diag_threshold * max_diag)
        .collect();
    report.eliminated = p - keep.len();
    if keep.is_empty() {
        report.flag = Some(StepFlag::AllEliminated);
        return Ok((params.clone(), report));
    }
    if keep.iter().all(|&j| rhs[j] == 0.0) {
        report.flag = Some(StepFlag::ZeroGradient);
        return Ok((params.clone(), report));
    }

    // Jacobi-scaled reduced system: (S A S + lambda I) t = -S b, s = S t.
    let k = keep.len();
    let scale: Vec<f64> = keep.iter().map(|&j| 1.0 / diag[j].sqrt()).collect();
    let mut system = DMatrix::from_fn(k, k, |a, b| {
        normal[(keep[a], keep[b])] * scale[a] * scale[b]
    });
    let b = DVector::from_fn(k, |a, _| -rhs[keep[a]] * scale[a]);
    for a in 0..k {
        system[(a, a)] = 1.0 + lambda;
    }
    let t = solve_spd(system, &b);

    let mut direction = vec![0.0; p];
    for (a, &j) in keep.iter().enumerate() {
        direction[j] = t[a] * scale[a];
    }
    // directional derivative of the MSE along the step
    let slope: f64 = keep
        .iter()
        .map(|&j| 2.0 / count * rhs[j] * direction[j])
        .sum();
    if !(slope < 0.0) || direction.iter().any(|v| !v.is_finite()) {
        report.flag = Some(StepFlag::NotDescent);
        return Ok((params.clone(), report));
    }

    let current = params.block_values(block);
    let ls = &config.line_search;
    let mut trial_values = current.clone();
    let mut alpha = 1.0;
    for backtracks in 0..=ls.max_backtracks {
        for (j, s) in direction.iter().enumerate() {
            trial_values[part.start + j] = current[part.start + j] + alpha * s;
        }
        if let Ok(trial) = params.with_block(block, &trial_values) {
            let mse = loss(&trial, x, y);
            if mse.is_finite() && mse <= mse0 + ls.sufficient_decrease * alpha * slope {
                report.mse_after = mse;
                report.backtracks = backtracks;
                report.step_scale = alpha;
                return Ok((trial, report));
            }
        }
        alpha *= ls.backtrack;
    }
    report.backtracks = ls.max_backtracks;
    report.flag = Some(StepFlag::LineSearchExhausted);
    Ok((params.clone(), report))
}

/// Cycles block Gauss-Newton steps until a stop condition holds.
pub fn train(
    params: &ModelParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    params.validate()?;
    check_data(params, x, y)?;
    let start = Instant::now();
    let sorted = scalar_sorted(params, x, y);
    let (x, y) = match &sorted {
        Some((a, b)) => (a, b),
        None => (x, y),
    };
    let cycle = config.cycle();
    let parts: Vec<(Block, Range<usize>)> = cycle
        .iter()
        .flat_map(|&b| block_parts(params, b).into_iter().map(move |r| (b, r)))
        .collect();
    let mut lambdas: Vec<f64> = vec![config.damping.initial; parts.len()];
    let mut current = params.clone();
    let initial_mse = loss(&current, x, y);
    let mut report = TrainReport {
        initial_mse,
        final_mse: initial_mse,
        final_rmse: initial_mse.sqrt(),
        iterations: 0,
        trace: Vec::new(),
        converged_reason: StopReason::MaxIters,
        wall_time_secs: 0.0,
    };
    let finish = |mut report: TrainReport, reason: StopReason, mse: f64| {
        report.final_mse = mse;
        report.final_rmse = mse.sqrt();
        report.converged_reason = reason;
        report.wall_time_secs = start.elapsed().as_secs_f64();
        report
    };
    if !initial_mse.is_finite() {
        return Err(Error::TrainingAborted {
            iteration: 0,
            reason: "non-finite initial loss".into(),
            report: Box::new(report),
        });
    }
    if initial_mse < config.loss_floor {
        return Ok((current, finish(report, StopReason::LossFloor, initial_mse)));
    }

    let mut mse = initial_mse;
    for iter in 1..=config.max_outer_iters {
        let mut accepted = false;
        for (slot, (block, part)) in parts.iter().enumerate() {
            let block = *block;
            let (next, step) =
                step_part(&current, block, part.clone(), x, y, config, lambdas[slot])?;
            let d = &config.damping;
            lambdas[slot] = if step.accepted() && step.backtracks == 0 {
                (lambdas[slot] / d.decrease).max(d.min)
            } else if step.flag == Some(StepFlag::ZeroGradient)
                || step.flag == Some(StepFlag::AllEliminated)
            {
                lambdas[slot]
            } else {
                let grow = d.increase.powi(step.backtracks.max(1) as i32);
                (lambdas[slot] * grow).min(d.max)
            };
            if !step.mse_after.is_finite() {
                report.iterations = iter;
                return Err(Error::TrainingAborted {
                    iteration: iter,
                    reason: format!("non-finite loss after {} step", block),
                    report: Box::new(finish(report, StopReason::Aborted, mse)),
                });
            }
            accepted |= step.accepted();
            current = next;
            mse = step.mse_after;
            report.trace.push(TraceEntry {
                iter,
                block,
                mse,
                backtracks: step.backtracks,
                eliminated: step.eliminated,
            });
        }
        report.iterations = iter;
        if mse < config.loss_floor {
            return Ok((current, finish(report, StopReason::LossFloor, mse)));
        }
        let grad = match ScalarView::new(&current) {
            Some(view) => view.gradient(x.as_slice(), y.as_slice()),
            None => grad_params(&current, x, y)?,
        };
        let grad_norm = cycle
            .iter()
            .flat_map(|b| grad.as_slice()[current.arch.block_range(*b)].iter())
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if !grad_norm.is_finite() {
            return Err(Error::TrainingAborted {
                iteration: iter,
                reason: "non-finite gradient".into(),
                report: Box::new(finish(report, StopReason::Aborted, mse)),
            });
        }
        if grad_norm < config.grad_tol {
            return Ok((current, finish(report, StopReason::GradTol, mse)));
        }
        if !accepted {
            return Ok((current, finish(report, StopReason::LineSearchStall, mse)));
        }
    }
    Ok((current, finish(report, StopReason::MaxIters, mse)))
}

/// Largest deviation between the analytic gradient and centered differences,
/// relative to the analytic gradient's infinity-norm.
///
/// Gate parameters whose perturbation could flip a gate on any data point are
/// skipped, since the loss has a kink there.
pub fn finite_diff_check(
    params: &ModelParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(
            "finite-difference step must be positive".into(),
        ));
    }
    check_data(params, x, y)?;
    let analytic = grad_params(params, x, y)?;
    let acts = Activations::new(params, x)?;
    let arch = params.arch;
    let gates = arch.block_range(Block::Gates);
    let flat = params.to_flat();
    let crosses = |idx: usize| -> bool {
        if !gates.contains(&idx) {
            return false;
        }
        let (neuron, input) = if idx < arch.n * arch.dim_x {
            (idx / arch.dim_x, Some(idx % arch.dim_x))
        } else {
            (idx - arch.n * arch.dim_x, None)
        };
        (0..x.nrows()).any(|r| {
            let reach = match input {
                Some(j) => step * x[(r, j)].abs(),
                None => step,
            };
            let z = acts.pre[(r, neuron)].abs();
            (reach > 0.0 && z <= reach) || z == 0.0
        })
    };
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for idx in 0..flat.len() {
        if crosses(idx) {
            continue;
        }
        let eval = |delta: f64| -> Result<f64> {
            let mut v = flat.clone();
            v[idx] += delta;
            Ok(fused_mse(&ModelParams::from_flat(arch, &v)?, x, y))
        };
        let fd = (eval(step)? - eval(-step)?) / (2.0 * step);
        worst = worst.max((fd - analytic[idx]).abs());
        scale = scale.max(analytic[idx].abs());
    }
    if scale == 0.0 {
        return Ok(worst);
    }
    Ok(worst / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{mse, ArchKind, Architecture};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(
        kind: ArchKind,
        dx: usize,
        dy: usize,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> ModelParams {
        let arch = Architecture::new(kind, dx, dy, n).unwrap();
        let flat: Vec<f64> = (0..arch.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        ModelParams::from_flat(arch, &flat).unwrap()
    }

    fn random_data(
        m: usize,
        dx: usize,
        dy: usize,
        rng: &mut ChaCha8Rng,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let x: DMatrix<f64> = DMatrix::from_fn(m, dx, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(m, dy, |r, k| {
            (2.0 * x[(r, 0)]).sin() + 0.3 * k as f64 + x[(r, dx - 1)].powi(2)
        });
        (x, y)
    }

    /// Least-squares head for frozen hidden features, by column-pivoted QR.
    fn least_squares_head(params: &ModelParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> ModelParams {
        let acts = Activations::new(params, x).unwrap();
        let (m, n) = acts.hidden.shape();
        let features = DMatrix::from_fn(
            m,
            n + 1,
            |r, c| if c < n { acts.hidden[(r, c)] } else { 1.0 },
        );
        let coef = features.svd(true, true).solve(y, 1e-14).unwrap();
        let mut out = params.clone();
        for k in 0..y.ncols() {
            for i in 0..n {
                out.head_weight[(k, i)] = coef[(i, k)];
            }
            out.head_bias[k] = coef[(n, k)];
        }
        out
    }

    fn exact_config(blocks: &[Block]) -> TrainConfig {
        let mut cfg = TrainConfig::default().with_blocks(blocks);
        cfg.damping.initial = 0.0;
        cfg.damping.min = 0.0;
        cfg
    }

    #[test]
    fn head_step_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in ArchKind::ALL {
            for (dx, dy) in [(1, 1), (2, 1), (2, 2)] {
                let params = random_params(kind, dx, dy, 6, &mut rng);
                let (x, y) = random_data(400, dx, dy, &mut rng);
                let (stepped, report) =
                    newton_step_block(&params, Block::Head, &x, &y, &exact_config(&[Block::Head]))
                        .unwrap();
                assert!(report.accepted(), "{kind} {dx}->{dy}: {report:?}");
                assert_eq!(report.backtracks, 0);
                let oracle = least_squares_head(&params, &x, &y);
                let (a, b) = (
                    mse(&stepped, &x, &y).unwrap(),
                    mse(&oracle, &x, &y).unwrap(),
                );
                assert!((a - b).abs() <= 1e-10 * b, "{kind} {dx}->{dy}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn frozen_head_training_reaches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let params = random_params(ArchKind::Glu, 1, 1, 8, &mut rng);
            let (x, y) = random_data(500, 1, 1, &mut rng);
            let mut cfg = TrainConfig::default().with_blocks(&[Block::Head]);
            cfg.max_outer_iters = 20;
            let (trained, _) = train(&params, &x, &y, &cfg).unwrap();
            let oracle = least_squares_head(&params, &x, &y);
            let (a, b) = (
                mse(&trained, &x, &y).unwrap(),
                mse(&oracle, &x, &y).unwrap(),
            );
            assert!((a - b).abs() <= 1e-8 * b, "{a} vs {b}");
            assert_eq!(trained.gate, params.gate);
            assert_eq!(trained.value, params.value);
        }
    }

    #[test]
    fn zero_residual_start_stops_at_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(ArchKind::Glu, 2, 1, 4, &mut rng);
        let (x, _) = random_data(200, 2, 1, &mut rng);
        let y = crate::models::forward(&params, &x).unwrap();
        let (trained, report) = train(&params, &x, &y, &TrainConfig::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.converged_reason, StopReason::LossFloor);
        assert_eq!(trained, params);
    }

    #[test]
    fn dead_neuron_is_left_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (dx, kind) in [(1, ArchKind::Mlp), (2, ArchKind::Glu)] {
            let mut params = random_params(kind, dx, 1, 5, &mut rng);
            // neuron 2 never opens on [-1, 1]^dx
            params.gate.bias[2] = -10.0;
            let (x, y) = random_data(300, dx, 1, &mut rng);
            for block in [Block::Head, Block::Gates] {
                let (stepped, report) =
                    newton_step_block(&params, block, &x, &y, &TrainConfig::default()).unwrap();
                let expect = if block == Block::Head { 1 } else { dx + 1 };
                assert!(report.eliminated >= expect, "{kind} {block}: {report:?}");
                assert_eq!(stepped.gate.weight.row(2), params.gate.weight.row(2));
                assert_eq!(stepped.gate.bias[2], params.gate.bias[2]);
                assert_eq!(stepped.head_weight[(0, 2)], params.head_weight[(0, 2)]);
                assert!(report.mse_after <= report.mse_before);
            }
        }
    }

    #[test]
    fn trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (kind, dx) in [(ArchKind::Glu, 1), (ArchKind::Gqu, 1), (ArchKind::Mlp, 2)] {
            let params = random_params(kind, dx, 1, 6, &mut rng);
            let (x, y) = random_data(500, dx, 1, &mut rng);
            let mut cfg = TrainConfig::default();
            cfg.max_outer_iters = 40;
            let (_, report) = train(&params, &x, &y, &cfg).unwrap();
            let mut prev = report.initial_mse;
            for t in &report.trace {
                assert!(
                    t.mse <= prev,
                    "{kind}: {} > {prev} at iter {}",
                    t.mse,
                    t.iter
                );
                prev = t.mse;
            }
            assert!(report.final_mse < report.initial_mse);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = random_params(ArchKind::Gqu, 1, 1, 5, &mut rng);
        let (x, y) = random_data(300, 1, 1, &mut rng);
        let mut cfg = TrainConfig::default();
        cfg.max_outer_iters = 25;
        let (a, ra) = train(&params, &x, &y, &cfg).unwrap();
        let (b, rb) = train(&params, &x, &y, &cfg).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_eq!(ra.trace, rb.trace);
    }

    #[test]
    fn input_order_does_not_matter_for_scalar_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = random_params(ArchKind::Glu, 1, 1, 4, &mut rng);
        let (x, y) = random_data(200, 1, 1, &mut rng);
        let (xs, ys) = sorted_pairs(&x, &y);
        let mut cfg = TrainConfig::default();
        cfg.max_outer_iters = 10;
        let (a, _) = train(&params, &x, &y, &cfg).unwrap();
        let (b, _) = train(&params, &xs, &ys, &cfg).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
    }

    #[test]
    fn single_point_is_fitted_exactly() {
        let arch = Architecture::scalar(ArchKind::Mlp, 1).unwrap();
        let params = ModelParams::from_flat(arch, &[1.0, 0.0, 0.5, 0.0]).unwrap();
        let x = DMatrix::from_element(1, 1, 0.3);
        let y = DMatrix::from_element(1, 1, 0.7);
        let (_, report) = train(&params, &x, &y, &TrainConfig::default()).unwrap();
        assert_eq!(report.converged_reason, StopReason::LossFloor);
        assert!(report.final_mse < 1e-26);
    }

    #[test]
    fn gqu_value_step_moves_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = random_params(ArchKind::Gqu, 1, 1, 4, &mut rng);
        let (x, y) = random_data(300, 1, 1, &mut rng);
        let (stepped, report) =
            newton_step_block(&params, Block::Values, &x, &y, &TrainConfig::default()).unwrap();
        assert!(report.accepted());
        assert!(report.mse_after < report.mse_before);
        assert_ne!(stepped.value, params.value);
        assert_ne!(stepped.quad, params.quad);
        assert_eq!(stepped.gate, params.gate);
    }

    #[test]
    fn finite_differences_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in ArchKind::ALL {
            for dx in [1, 2] {
                let params = random_params(kind, dx, 1, 5, &mut rng);
                let (x, y) = random_data(100, dx, 1, &mut rng);
                let err = finite_diff_check(&params, &x, &y, 1e-6).unwrap();
                assert!(err < 1e-6, "{kind} dx={dx}: {err}");
            }
        }
    }

    #[test]
    fn finite_differences_are_tight_where_all_gates_are_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut params = random_params(ArchKind::Mlp, 1, 1, 3, &mut rng);
        params.gate.bias.fill(5.0);
        let (x, y) = random_data(100, 1, 1, &mut rng);
        let err = finite_diff_check(&params, &x, &y, 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = TrainConfig::default();
        cfg.line_search.backtrack = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = TrainConfig::default().with_blocks(&[]);
        assert!(cfg.validate().is_err());
    }
}
