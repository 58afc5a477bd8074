//! Run options shared by `train` and `sweep`: flags, an optional TOML file,
//! and the fully resolved snapshot stored in manifests.

use std::path::{Path, PathBuf};

use clap::Args;
use glu_scaling::experiments::{
    friedman, load_csv, sample_target, targets, Axis, Dataset, DEFAULT_RESTARTS, DEFAULT_WIDTHS,
};
use glu_scaling::models::{ArchKind, Block, Domain};
use glu_scaling::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GLU_SCALING_OUT";
pub const DEFAULT_SAMPLES: usize = 10_000;

/// Every flag is optional so that a config file can supply it instead.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunOptions {
    /// Architectures, comma separated (mlp, glu, gqu).
    #[arg(long, value_delimiter = ',')]
    pub arch: Option<Vec<ArchKind>>,
    /// Built-in target: paper1d, sin2d, linear, quadratic or cubic.
    #[arg(long)]
    pub target: Option<String>,
    /// Synthetic benchmark: friedman1, friedman2 or friedman3.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub dataset_csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub feature_cols: Option<Vec<String>>,
    #[arg(long)]
    pub target_col: Option<String>,
    /// Standardize features (default on for Friedman and CSV data).
    #[arg(long)]
    pub normalize: Option<bool>,
    /// Points drawn for synthetic data.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Gaussian label noise for Friedman data.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Widths to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Width for a single training run.
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed; restart r uses seed + r.
    #[arg(long = "seeds", alias = "seed")]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Axis reported on stdout (both plots are always written).
    #[arg(long)]
    pub axis: Option<Axis>,
    /// Blocks held fixed during training, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub freeze: Option<Vec<Block>>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol_grad: Option<f64>,
    #[arg(long)]
    pub tol_loss: Option<f64>,
    #[arg(long)]
    pub tol_singular: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        RunOptions { $($field: $top.$field.or($base.$field)),* }
    };
}

impl RunOptions {
    /// Values from `self` win over `base`.
    pub fn over(self, base: RunOptions) -> RunOptions {
        overlay!(
            base,
            self,
            arch,
            target,
            dataset,
            dataset_csv,
            feature_cols,
            target_col,
            normalize,
            samples,
            data_seed,
            noise,
            n_grid,
            n,
            seeds,
            restarts,
            axis,
            freeze,
            workers,
            max_iters,
            tol_grad,
            tol_loss,
            tol_singular,
            out_dir
        )
    }

    pub fn from_toml_file(path: &Path) -> CliResult<RunOptions> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fills every default so the result fully describes the run.
    pub fn resolve(mut self) -> CliResult<RunOptions> {
        let sources = [
            self.target.is_some(),
            self.dataset.is_some(),
            self.dataset_csv.is_some(),
        ];
        match sources.iter().filter(|s| **s).count() {
            0 => self.target = Some("paper1d".into()),
            1 => {}
            _ => {
                return Err(CliError::Config(
                    "give only one of --target, --dataset, --dataset-csv".into(),
                ))
            }
        }
        if self.dataset_csv.is_some() && (self.feature_cols.is_none() || self.target_col.is_none())
        {
            return Err(CliError::Config(
                "--dataset-csv needs --feature-cols and --target-col".into(),
            ));
        }
        let defaults = TrainConfig::default();
        let out_dir = std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| "out".into());
        let filled = RunOptions {
            arch: Some(vec![ArchKind::Mlp, ArchKind::Glu, ArchKind::Gqu]),
            normalize: Some(self.target.is_none()),
            samples: Some(DEFAULT_SAMPLES),
            data_seed: Some(0),
            noise: Some(0.0),
            n_grid: Some(DEFAULT_WIDTHS.to_vec()),
            seeds: Some(0),
            restarts: Some(DEFAULT_RESTARTS),
            axis: Some(Axis::Neurons),
            freeze: Some(Vec::new()),
            workers: Some(
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1),
            ),
            max_iters: Some(defaults.max_outer_iters),
            tol_grad: Some(defaults.grad_tol),
            tol_loss: Some(defaults.loss_floor),
            tol_singular: Some(defaults.singular_diag_threshold),
            out_dir: Some(out_dir),
            ..RunOptions::default()
        };
        self = self.over(filled);
        if self.arch.as_ref().is_some_and(|a| a.is_empty()) {
            return Err(CliError::Config(
                "--arch needs at least one architecture".into(),
            ));
        }
        Ok(self)
    }

    pub fn archs(&self) -> Vec<ArchKind> {
        self.arch.clone().unwrap_or_default()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| "out".into())
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let frozen = self.freeze.clone().unwrap_or_default();
        let blocks: Vec<Block> = [Block::Head, Block::Values, Block::Gates]
            .into_iter()
            .filter(|b| !frozen.contains(b))
            .collect();
        let mut cfg = TrainConfig::default().with_blocks(&blocks);
        let defaults = TrainConfig::default();
        cfg.max_outer_iters = self.max_iters.unwrap_or(defaults.max_outer_iters);
        cfg.grad_tol = self.tol_grad.unwrap_or(defaults.grad_tol);
        cfg.loss_floor = self.tol_loss.unwrap_or(defaults.loss_floor);
        cfg.singular_diag_threshold = self
            .tol_singular
            .unwrap_or(defaults.singular_diag_threshold);
        cfg.seed = self.seeds.unwrap_or(0);
        cfg.validate().map_err(CliError::from_core)?;
        Ok(cfg)
    }

    /// Input files whose contents the run depends on.
    pub fn input_files(&self) -> Vec<PathBuf> {
        self.dataset_csv.iter().cloned().collect()
    }

    pub fn load_data(&self) -> CliResult<Dataset> {
        let samples = self.samples.unwrap_or(DEFAULT_SAMPLES);
        let seed = self.data_seed.unwrap_or(0);
        let normalize = self.normalize.unwrap_or(false);
        let mut data = if let Some(name) = &self.target {
            let f = targets::by_name(name).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown target {name:?} (expected one of {})",
                    targets::TARGET_NAMES.join(", ")
                ))
            })?;
            let domain = Domain {
                lower: vec![-1.0; f.dim_x],
                upper: vec![1.0; f.dim_x],
            };
            sample_target(&f, &domain, samples, seed).map_err(CliError::from_core)?
        } else if let Some(name) = &self.dataset {
            let k = name
                .strip_prefix("friedman")
                .and_then(|k| k.parse::<u8>().ok())
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "unknown dataset {name:?} (expected friedman1, friedman2 or friedman3)"
                    ))
                })?;
            friedman(k, samples, self.noise.unwrap_or(0.0), seed).map_err(CliError::from_core)?
        } else {
            let path = self.dataset_csv.as_ref().expect("one data source is set");
            let features = self.feature_cols.clone().unwrap_or_default();
            let target = self.target_col.clone().unwrap_or_default();
            // load_csv normalizes itself; skip the second pass below
            return load_csv(path, &features, &target, normalize).map_err(CliError::from_core);
        };
        if normalize {
            data.normalize();
        }
        Ok(data)
    }
}
