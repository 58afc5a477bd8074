use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use glu_scaling::checkpoint;
use glu_scaling::construct::Orientation;
use glu_scaling::construct::{dense_rmse, Construction};
use glu_scaling::experiments::{
    fit_slope, initial_params, monotonicity_violations, records_from_csv, records_to_csv,
    scaling_sweep, targets, Axis, ScalingRecord, SlopeFit,
};
use glu_scaling::models::{ArchKind, Architecture, Domain};
use glu_scaling::plot::{sweep_svg, viz_1d, viz_2d};
use glu_scaling::train::train as train_model;
use serde::Serialize;

use crate::config::RunOptions;
use crate::manifest::{write_file, RunManifest};
use crate::{CliError, CliResult};

const MIN_WIDTHS: usize = 4;

fn core<T>(r: glu_scaling::Result<T>) -> CliResult<T> {
    r.map_err(CliError::from_core)
}

fn target_by_name(name: &str) -> CliResult<glu_scaling::target::TargetFunction> {
    targets::by_name(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown target {name:?} (expected one of {})",
            targets::TARGET_NAMES.join(", ")
        ))
    })
}

pub fn construct(
    kind: ArchKind,
    target: &str,
    n: usize,
    domain: (f64, f64),
    out: Option<PathBuf>,
) -> CliResult<()> {
    let f = target_by_name(target)?;
    let builder = core(Construction::for_arch(kind))?;
    let params = core(builder.build(&f, n, domain))?;
    let rmse = core(dense_rmse(&params, &f, domain))?;
    let out = out.unwrap_or_else(|| {
        RunOptions::default()
            .resolve()
            .map(|o| o.out_dir())
            .unwrap_or_else(|_| "out".into())
            .join(format!("{kind}_n{n}.json"))
    });
    write_file(&out, &core(checkpoint::to_string(&params))?)?;
    println!("{kind} n={n} target={target} rmse={rmse:e}");
    println!("checkpoint {}", out.display());
    Ok(())
}

fn pool(options: &RunOptions) -> CliResult<rayon::ThreadPool> {
    let workers = options.workers.unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Config("--workers must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))
}

pub fn train(options: &RunOptions) -> CliResult<()> {
    let n = options
        .n
        .ok_or_else(|| CliError::Config("train needs --n".into()))?;
    let cfg = options.train_config()?;
    let data = options.load_data()?;
    let dir = options.out_dir();
    let archs = options.archs();
    let outputs: Vec<PathBuf> = archs
        .iter()
        .flat_map(|k| [format!("{k}_n{n}.json"), format!("trace_{k}_n{n}.csv")])
        .map(PathBuf::from)
        .collect();
    RunManifest::new("train", options, outputs)?.write(&dir)?;
    for kind in archs {
        let arch = core(Architecture::new(kind, data.dim_x(), data.dim_y(), n))?;
        let init = core(initial_params(
            arch,
            &data,
            cfg.seed,
            Orientation::Alternating,
        ))?;
        let (params, report) = core(train_model(&init, &data.x, &data.y, &cfg))?;
        write_file(
            &dir.join(format!("{kind}_n{n}.json")),
            &core(checkpoint::to_string(&params))?,
        )?;
        write_file(
            &dir.join(format!("trace_{kind}_n{n}.csv")),
            &report.trace_csv(),
        )?;
        println!(
            "{kind} n={n} rmse={:e} iterations={} stop={} time={:.1}s",
            report.final_rmse, report.iterations, report.converged_reason, report.wall_time_secs
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ArchSlopes {
    neurons: Result<SlopeFit, String>,
    params: Result<SlopeFit, String>,
    monotonicity_violations: Vec<usize>,
}

fn records_file(kind: ArchKind) -> String {
    format!("records_{kind}.csv")
}

pub fn sweep(options: &RunOptions) -> CliResult<()> {
    let grid = options.n_grid.clone().unwrap_or_default();
    if grid.len() < MIN_WIDTHS {
        return Err(CliError::Config(format!(
            "need >= {MIN_WIDTHS} widths for a slope fit, got {}",
            grid.len()
        )));
    }
    let cfg = options.train_config()?;
    let restarts = options.restarts.unwrap_or(1);
    let data = options.load_data()?;
    let dir = options.out_dir();
    let archs = options.archs();
    let mut outputs: Vec<PathBuf> = archs.iter().map(|k| records_file(*k).into()).collect();
    outputs.extend(["slopes.json", "sweep_neurons.svg", "sweep_params.svg"].map(PathBuf::from));
    RunManifest::new("sweep", options, outputs)?.write(&dir)?;

    let pool = pool(options)?;
    let mut sweeps: Vec<Vec<ScalingRecord>> = Vec::new();
    let mut slopes = BTreeMap::new();
    let axis = options.axis.unwrap_or(Axis::Neurons);
    let mut failed = Vec::new();
    for kind in &archs {
        let records = core(pool.install(|| scaling_sweep(*kind, &data, &grid, &cfg, restarts)))?;
        write_file(&dir.join(records_file(*kind)), &records_to_csv(&records))?;
        let fit = |a| fit_slope(&records, a).map_err(|e| e.to_string());
        let entry = ArchSlopes {
            neurons: fit(Axis::Neurons),
            params: fit(Axis::Params),
            monotonicity_violations: monotonicity_violations(&records),
        };
        match if axis == Axis::Neurons {
            &entry.neurons
        } else {
            &entry.params
        } {
            Ok(f) => println!(
                "{kind} slope ({axis}) {:.3} r2 {:.3} used {}",
                f.slope, f.r_squared, f.points_used
            ),
            Err(e) => {
                println!("{kind} slope ({axis}) unavailable: {e}");
                failed.push(format!("{kind}: {e}"));
            }
        }
        if !entry.monotonicity_violations.is_empty() {
            println!(
                "{kind} rmse increased at n = {:?}",
                entry.monotonicity_violations
            );
        }
        slopes.insert(kind.to_string(), entry);
        sweeps.push(records);
    }
    let json = serde_json::to_string_pretty(&slopes).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&dir.join("slopes.json"), &(json + "\n"))?;
    for (a, file) in [
        (Axis::Neurons, "sweep_neurons.svg"),
        (Axis::Params, "sweep_params.svg"),
    ] {
        write_file(
            &dir.join(file),
            &core(sweep_svg(&format!("{} scaling", data.name), &sweeps, a))?,
        )?;
    }
    if !failed.is_empty() {
        return Err(CliError::Numerical(failed.join("; ")));
    }
    Ok(())
}

pub fn fit(path: &Path, axis: Axis) -> CliResult<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let records = core(records_from_csv(&text))?;
    let mut by_arch: BTreeMap<ArchKind, Vec<ScalingRecord>> = BTreeMap::new();
    for r in records {
        by_arch.entry(r.arch).or_default().push(r);
    }
    for (kind, mut records) in by_arch {
        records.sort_by_key(|r| r.n);
        let fit = core(fit_slope(&records, axis))?;
        let json = serde_json::to_string(&fit).map_err(|e| CliError::Io(e.to_string()))?;
        println!("{kind} {json}");
    }
    Ok(())
}

pub fn viz(
    checkpoint_path: &Path,
    target: Option<&str>,
    domain: (f64, f64),
    out: &Path,
) -> CliResult<()> {
    let params = core(checkpoint::load(checkpoint_path))?;
    let svg = match params.arch.dim_x {
        1 => {
            let f = target.map(target_by_name).transpose()?;
            core(viz_1d(&params, f.as_ref(), domain, 400))?
        }
        2 => core(viz_2d(&params, &Domain::square(domain.0, domain.1), 60))?,
        d => {
            return Err(CliError::Config(format!(
                "visualization needs 1 or 2 inputs, checkpoint has {d}"
            )))
        }
    };
    write_file(out, &svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn rerun(path: &Path, out_dir: Option<PathBuf>) -> CliResult<()> {
    let manifest = RunManifest::read(path)?;
    manifest.verify_inputs()?;
    let mut options = manifest.config.clone();
    if out_dir.is_some() {
        options.out_dir = out_dir;
    }
    match manifest.command.as_str() {
        "train" => train(&options),
        "sweep" => sweep(&options),
        other => Err(CliError::Config(format!("cannot rerun command {other:?}"))),
    }
}
