use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::construct::{spline_init, Orientation, PartitionSpec};
use crate::error::{Error, Result};
use crate::models::{ArchKind, Architecture, ModelParams};
use crate::train::{train, StopReason, TrainConfig};

/// Widths used when none are given: log-spaced up to 50.
pub const DEFAULT_WIDTHS: &[usize] = &[2, 3, 4, 6, 8, 11, 16, 22, 32, 45, 50];
pub const DEFAULT_RESTARTS: usize = 4;
pub const RECORDS_HEADER: &str = "arch,n,params,rmse,seed,converged";

/// Best-of-restarts training result at one width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub arch: ArchKind,
    pub n: usize,
    pub param_count: usize,
    pub rmse: f64,
    pub seed_used: u64,
    pub converged_reason: StopReason,
}

/// Starting point for training `arch` on `data`.
///
/// Scalar inputs get the spline initialization over the data range. Wider
/// inputs get unit-norm random gate rows with each hinge placed uniformly
/// inside the data's projection onto that row, so no neuron starts dead.
pub fn initial_params(
    arch: Architecture,
    data: &Dataset,
    seed: u64,
    orientation: Orientation,
) -> Result<ModelParams> {
    if data.dim_x() != arch.dim_x || data.dim_y() != arch.dim_y {
        return Err(Error::shape(
            "dataset dimensions",
            format!("{}->{}", arch.dim_x, arch.dim_y),
            format!("{}->{}", data.dim_x(), data.dim_y()),
        ));
    }
    if arch.dim_x == 1 {
        let domain = data.input_domain();
        let (a, b) = (domain.lower[0], domain.upper[0]);
        let (a, b) = if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let spec = PartitionSpec::new(a, b, arch.n, orientation)?;
        return spline_init(arch, &spec, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<f64> = (0..arch.param_count())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let dx = arch.dim_x;
    for i in 0..arch.n {
        let mut row = DVector::from_fn(dx, |_, _| StandardNormal.sample(&mut rng));
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        } else {
            row[0] = 1.0;
        }
        let proj = &data.x * &row;
        let (lo, hi) = (proj.min(), proj.max());
        let knot = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        flat[i * dx..(i + 1) * dx].copy_from_slice(row.as_slice());
        flat[arch.n * dx + i] = -knot;
    }
    ModelParams::from_flat(arch, &flat)
}

struct Attempt {
    seed: u64,
    rmse: f64,
    reason: StopReason,
}

fn attempt(
    kind: ArchKind,
    data: &Dataset,
    n: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<Attempt> {
    let arch = Architecture::new(kind, data.dim_x(), data.dim_y(), n)?;
    let init = initial_params(arch, data, seed, Orientation::Alternating)?;
    let mut cfg = config.clone();
    cfg.seed = seed;
    match train(&init, &data.x, &data.y, &cfg) {
        Ok((_, report)) => Ok(Attempt {
            seed,
            rmse: report.final_rmse,
            reason: report.converged_reason,
        }),
        Err(Error::TrainingAborted { report, .. }) => Ok(Attempt {
            seed,
            rmse: report.final_rmse,
            reason: StopReason::Aborted,
        }),
        Err(e) => Err(e),
    }
}

/// Trains `kind` at every width in `n_list`, keeping the lowest-RMSE restart.
///
/// Restart `r` uses seed `config.seed + r`. Work is spread over the current
/// rayon pool; the result is sorted by width regardless of scheduling.
pub fn scaling_sweep(
    kind: ArchKind,
    data: &Dataset,
    n_list: &[usize],
    config: &TrainConfig,
    restarts: usize,
) -> Result<Vec<ScalingRecord>> {
    config.validate()?;
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::InvalidConfig(format!(
            "widths must be positive and strictly increasing, got {n_list:?}"
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidConfig("need at least one restart".into()));
    }
    let jobs: Vec<(usize, u64)> = n_list
        .iter()
        .flat_map(|&n| (0..restarts as u64).map(move |r| (n, r)))
        .collect();
    // largest widths first so the pool stays busy
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by_key(|&j| std::cmp::Reverse(jobs[j].0));
    let mut results: Vec<(usize, Attempt)> = order
        .par_iter()
        .map(|&j| {
            let (n, r) = jobs[j];
            attempt(kind, data, n, config, config.seed.wrapping_add(r)).map(|a| (n, a))
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|(na, a), (nb, b)| na.cmp(nb).then(a.seed.cmp(&b.seed)));

    let mut records = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let best = results
            .iter()
            .filter(|(m, _)| *m == n)
            .map(|(_, a)| a)
            .min_by(|a, b| {
                let rank = |x: &Attempt| (x.reason == StopReason::Aborted) as u8;
                rank(a)
                    .cmp(&rank(b))
                    .then(a.rmse.total_cmp(&b.rmse))
                    .then(a.seed.cmp(&b.seed))
            })
            .expect("at least one restart");
        let arch = Architecture::new(kind, data.dim_x(), data.dim_y(), n)?;
        records.push(ScalingRecord {
            arch: kind,
            n,
            param_count: arch.param_count(),
            rmse: best.rmse,
            seed_used: best.seed,
            converged_reason: best.reason,
        });
    }
    Ok(records)
}

/// Widths where the best RMSE went up relative to the previous width.
pub fn monotonicity_violations(records: &[ScalingRecord]) -> Vec<usize> {
    records
        .windows(2)
        .filter(|w| w[1].rmse > w[0].rmse)
        .map(|w| w[1].n)
        .collect()
}

/// Records as CSV with header `arch,n,params,rmse,seed,converged`.
///
/// Floats use the shortest representation that round-trips exactly.
pub fn records_to_csv(records: &[ScalingRecord]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:?},{},{}\n",
            r.arch, r.n, r.param_count, r.rmse, r.seed_used, r.converged_reason
        ));
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<ScalingRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RECORDS_HEADER => {}
        other => {
            return Err(Error::Dataset(format!(
                "records header should be {RECORDS_HEADER:?}, got {other:?}"
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Dataset(format!("records line {}: {line:?}", i + 2));
            if cells.len() != 6 {
                return Err(bad());
            }
            Ok(ScalingRecord {
                arch: cells[0].parse()?,
                n: cells[1].parse().map_err(|_| bad())?,
                param_count: cells[2].parse().map_err(|_| bad())?,
                rmse: cells[3].parse().map_err(|_| bad())?,
                seed_used: cells[4].parse().map_err(|_| bad())?,
                converged_reason: cells[5].parse()?,
            })
        })
        .collect()
}
