use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Domain;
use crate::target::TargetFunction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic {
        generator: String,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        feature_columns: Vec<String>,
        target_column: String,
        dropped_rows: usize,
    },
}

/// Per-feature standardization `z = (x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let m = x.nrows() as f64;
        let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / m).collect();
        let std = x
            .column_iter()
            .zip(&mean)
            .map(|(c, mu)| {
                let var = c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
                // constant columns are only centered
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, std }
    }

    pub fn apply(&self, x: &mut DMatrix<f64>) {
        for (j, mut col) in x.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
    }

    pub fn invert(&self, x: &mut DMatrix<f64>) {
        for (j, mut col) in x.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `m x dim_x`
    pub x: DMatrix<f64>,
    /// `m x dim_y`
    pub y: DMatrix<f64>,
    pub provenance: Provenance,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn dim_y(&self) -> usize {
        self.y.ncols()
    }

    /// Bounding box of the inputs.
    pub fn input_domain(&self) -> Domain {
        let lower = self.x.column_iter().map(|c| c.min()).collect();
        let upper = self.x.column_iter().map(|c| c.max()).collect();
        Domain { lower, upper }
    }

    /// Standardizes the features in place and records the transform.
    pub fn normalize(&mut self) {
        let norm = Normalization::fit(&self.x);
        norm.apply(&mut self.x);
        self.normalization = Some(norm);
    }
}

/// `m` points drawn uniformly from `domain`, labelled by `target`.
pub fn sample_target(
    target: &TargetFunction,
    domain: &Domain,
    m: usize,
    seed: u64,
) -> Result<Dataset> {
    if domain.dim() != target.dim_x {
        return Err(Error::shape("sampling domain", target.dim_x, domain.dim()));
    }
    if m == 0 {
        return Err(Error::Dataset("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(m, target.dim_x);
    for r in 0..m {
        for j in 0..target.dim_x {
            x[(r, j)] = rng.random_range(domain.lower[j]..=domain.upper[j]);
        }
    }
    let y = target.sample(&x)?;
    Ok(Dataset {
        name: target.name.clone(),
        x,
        y,
        provenance: Provenance::Synthetic {
            generator: target.name.clone(),
            seed,
        },
        normalization: None,
    })
}

/// Friedman regression problems #1-#3 with optional Gaussian label noise.
///
/// #1 has 5 inputs uniform on `[0, 1]`; #2 and #3 have 4 inputs on
/// `[0,100] x [40 pi, 560 pi] x [0,1] x [1,11]`.
pub fn friedman(k: u8, m: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::Dataset("need at least one sample".into()));
    }
    let dim = match k {
        1 => 5,
        2 | 3 => 4,
        _ => {
            return Err(Error::InvalidConfig(format!(
                "Friedman problem must be 1, 2 or 3, got {k}"
            )))
        }
    };
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid noise level {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(m, dim);
    let mut y = DMatrix::zeros(m, 1);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut row = vec![0.0; dim];
    for r in 0..m {
        for (j, v) in row.iter_mut().enumerate() {
            let u: f64 = rng.random();
            *v = match (k, j) {
                (1, _) => u,
                (_, 0) => 100.0 * u,
                (_, 1) => 40.0 * PI + 520.0 * PI * u,
                (_, 2) => u,
                _ => 1.0 + 10.0 * u,
            };
            x[(r, j)] = *v;
        }
        let mut value = friedman_value(k, &row);
        if noise > 0.0 {
            value += noise * gauss.sample(&mut rng);
        }
        y[(r, 0)] = value;
    }
    Ok(Dataset {
        name: format!("friedman{k}"),
        x,
        y,
        provenance: Provenance::Synthetic {
            generator: format!("friedman{k}(noise={noise})"),
            seed,
        },
        normalization: None,
    })
}

/// Noise-free Friedman response at one input.
pub fn friedman_value(k: u8, x: &[f64]) -> f64 {
    match k {
        1 => {
            10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
        }
        2 => (x[0] * x[0] + (x[1] * x[2] - 1.0 / (x[1] * x[3])).powi(2)).sqrt(),
        _ => ((x[1] * x[2] - 1.0 / (x[1] * x[3])) / x[0]).atan(),
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "?"
    )
}

/// Reads a comma-separated file with a header row.
///
/// Rows with a missing value (empty, `NA`, `NaN`, `null` or `?`) in any used
/// column are dropped and counted in the provenance.
pub fn load_csv(
    path: impl AsRef<Path>,
    feature_columns: &[String],
    target_column: &str,
    normalize: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    if feature_columns.is_empty() {
        return Err(Error::InvalidConfig("no feature columns given".into()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Dataset(format!("{}: no column named {name:?}", path.display())))
    };
    let feature_idx = feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let target_idx = find(target_column)?;

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut dropped = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let cells: Vec<&str> = feature_idx
            .iter()
            .chain(std::iter::once(&target_idx))
            .map(|&i| record.get(i).unwrap_or(""))
            .collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        let parsed = cells
            .iter()
            .zip(
                feature_columns
                    .iter()
                    .chain(std::iter::once(&target_column.to_string())),
            )
            .map(|(cell, col)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::Dataset(format!(
                            "{}: row {} column {col:?}: non-numeric value {cell:?}",
                            path.display(),
                            line + 2
                        ))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        ys.push(parsed[parsed.len() - 1]);
        xs.extend(&parsed[..parsed.len() - 1]);
    }
    if ys.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no usable rows ({dropped} dropped)",
            path.display()
        )));
    }
    let m = ys.len();
    let x = DMatrix::from_row_slice(m, feature_columns.len(), &xs);
    let y = DMatrix::from_column_slice(m, 1, &ys);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    let mut data = Dataset {
        name,
        x,
        y,
        provenance: Provenance::Csv {
            path: path.to_path_buf(),
            feature_columns: feature_columns.to_vec(),
            target_column: target_column.to_string(),
            dropped_rows: dropped,
        },
        normalization: None,
    };
    if normalize {
        data.normalize();
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn cols(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn fixture_matrices_exact() {
        let f = write_csv("a,b,y\n1.5,2,3\n-1,0.25,4\n7,8,9e-1\n");
        let d = load_csv(f.path(), &cols(&["a", "b"]), "y", false).unwrap();
        assert_eq!(
            d.x,
            DMatrix::from_row_slice(3, 2, &[1.5, 2.0, -1.0, 0.25, 7.0, 8.0])
        );
        assert_eq!(d.y.as_slice(), &[3.0, 4.0, 0.9]);
        assert!(d.normalization.is_none());
    }

    #[test]
    fn column_order_follows_request() {
        let f = write_csv("y,a,b\n1,2,3\n");
        let d = load_csv(f.path(), &cols(&["b", "a"]), "y", false).unwrap();
        assert_eq!(d.x.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn na_row_dropped() {
        let f = write_csv("a,y\n1,2\nNA,3\n4,5\n");
        let d = load_csv(f.path(), &cols(&["a"]), "y", false).unwrap();
        assert_eq!(d.len(), 2);
        match d.provenance {
            Provenance::Csv { dropped_rows, .. } => assert_eq!(dropped_rows, 1),
            _ => panic!(),
        }
    }

    #[test]
    fn normalization_standardizes() {
        let f = write_csv("a,b,y\n1,10,0\n2,30,0\n4,20,0\n9,-5,1\n");
        let mut d = load_csv(f.path(), &cols(&["a", "b"]), "y", true).unwrap();
        for c in d.x.column_iter() {
            let mean = c.sum() / 4.0;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        let norm = d.normalization.clone().unwrap();
        norm.invert(&mut d.x);
        assert!((d.x[(3, 1)] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn descriptive_errors() {
        let f = write_csv("a,y\n1,2\nabc,3\n");
        let err = load_csv(f.path(), &cols(&["a"]), "y", false).unwrap_err();
        assert!(err.to_string().contains("non-numeric"), "{err}");
        let err = load_csv(f.path(), &cols(&["zz"]), "y", false).unwrap_err();
        assert!(err.to_string().contains("zz"), "{err}");
        let err = load_csv("/definitely/not/here.csv", &cols(&["a"]), "y", false).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        let empty = write_csv("a,y\n,1\n");
        assert!(matches!(
            load_csv(empty.path(), &cols(&["a"]), "y", false),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn friedman1_formula() {
        let v = friedman_value(1, &[0.5, 0.5, 0.5, 0.0, 0.0]);
        assert!((v - 7.0710678118654755).abs() < 1e-12);
    }

    #[test]
    fn friedman_generators() {
        for k in 1..=3u8 {
            let a = friedman(k, 50, 0.0, 3).unwrap();
            let b = friedman(k, 50, 0.0, 3).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.dim_x(), if k == 1 { 5 } else { 4 });
            for r in 0..50 {
                let row: Vec<f64> = a.x.row(r).iter().copied().collect();
                assert_eq!(a.y[(r, 0)], friedman_value(k, &row));
            }
        }
        let f2 = friedman(2, 200, 0.0, 1).unwrap();
        assert!(f2
            .x
            .column(1)
            .iter()
            .all(|v| *v >= 40.0 * PI && *v <= 560.0 * PI));
        assert!(friedman(4, 10, 0.0, 0).is_err());
        let noisy = friedman(1, 20, 1.0, 3).unwrap();
        assert_ne!(noisy.y, friedman(1, 20, 0.0, 3).unwrap().y);
    }

    #[test]
    fn uniform_target_samples() {
        let f = crate::experiments::targets::target_1d();
        let d = sample_target(&f, &Domain::interval(-1.0, 1.0), 1000, 7).unwrap();
        assert_eq!(d.len(), 1000);
        assert!(d.x.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(
            d,
            sample_target(&f, &Domain::interval(-1.0, 1.0), 1000, 7).unwrap()
        );
    }
}
