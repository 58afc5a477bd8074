//! Log-log least-squares slope fits.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ScalingRecord;
use crate::error::{Error, Result};

/// RMSE below this is treated as exact representation and left out of fits.
pub const RMSE_FLOOR: f64 = 1e-12;
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    FloorHit,
    NonConverged,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::FloorHit => "floor-hit",
            ExclusionReason::NonConverged => "non-converged",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub n: usize,
    pub reason: ExclusionReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Neurons,
    Params,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neurons" | "n" => Ok(Axis::Neurons),
            "params" | "p" => Ok(Axis::Params),
            other => Err(Error::InvalidConfig(format!(
                "unknown axis {other:?} (expected neurons or params)"
            ))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Neurons => "neurons",
            Axis::Params => "params",
        })
    }
}

/// Result of `log10(err) = slope * log10(size) + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    #[serde(rename = "r2")]
    pub r_squared: f64,
    #[serde(rename = "used")]
    pub points_used: usize,
    pub excluded: Vec<Exclusion>,
}

/// One candidate point for a fit.
#[derive(Clone, Copy, Debug)]
pub struct FitPoint {
    pub n: usize,
    pub size: f64,
    pub error: f64,
    pub converged: bool,
}

/// Fits a sweep's records against neuron or parameter count.
pub fn fit_slope(records: &[ScalingRecord], axis: Axis) -> Result<SlopeFit> {
    let points: Vec<FitPoint> = records
        .iter()
        .map(|r| FitPoint {
            n: r.n,
            size: match axis {
                Axis::Neurons => r.n as f64,
                Axis::Params => r.param_count as f64,
            },
            error: r.rmse,
            converged: r.converged_reason.is_usable(),
        })
        .collect();
    fit_points(&points, RMSE_FLOOR)
}

/// Ordinary least squares in log10-log10 space, skipping floor hits and
/// non-converged points.
pub fn fit_points(points: &[FitPoint], floor: f64) -> Result<SlopeFit> {
    let mut excluded = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in points {
        if !p.converged || !p.error.is_finite() {
            excluded.push(Exclusion {
                n: p.n,
                reason: ExclusionReason::NonConverged,
            });
        } else if p.error < floor {
            excluded.push(Exclusion {
                n: p.n,
                reason: ExclusionReason::FloorHit,
            });
        } else {
            xs.push(p.size.log10());
            ys.push(p.error.log10());
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_FIT_POINTS,
            usable: xs.len(),
            excluded,
        });
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig(
            "slope fit needs at least two distinct sizes".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        points_used: xs.len(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{ScalingRecord, StopReason};
    use crate::models::ArchKind;
    use proptest::prelude::*;

    fn record(n: usize, rmse: f64) -> ScalingRecord {
        ScalingRecord {
            arch: ArchKind::Mlp,
            n,
            param_count: 3 * n + 1,
            rmse,
            seed_used: 0,
            converged_reason: StopReason::GradTol,
        }
    }

    #[test]
    fn exact_power_law() {
        let recs: Vec<_> = [2, 4, 8, 16, 32]
            .iter()
            .map(|&n| record(n, 0.7 * (n as f64).powi(-3)))
            .collect();
        let fit = fit_slope(&recs, Axis::Neurons).unwrap();
        assert!((fit.slope + 3.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 0.7f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn params_axis_keeps_slope_close() {
        let recs: Vec<_> = [4, 8, 16, 32, 50]
            .iter()
            .map(|&n| record(n, (n as f64).powf(-2.1)))
            .collect();
        let a = fit_slope(&recs, Axis::Neurons).unwrap();
        let b = fit_slope(&recs, Axis::Params).unwrap();
        assert!((a.slope - b.slope).abs() < 0.1);
        assert!(a.intercept != b.intercept);
    }

    #[test]
    fn floor_hit_is_excluded() {
        let mut recs: Vec<_> = [2, 4, 8, 16, 32]
            .iter()
            .map(|&n| record(n, (n as f64).powi(-2)))
            .collect();
        recs[4].rmse = 1e-14;
        let fit = fit_slope(&recs, Axis::Neurons).unwrap();
        assert_eq!(fit.points_used, 4);
        assert_eq!(
            fit.excluded,
            vec![Exclusion {
                n: 32,
                reason: ExclusionReason::FloorHit
            }]
        );
        assert_eq!(fit.excluded[0].reason.to_string(), "floor-hit");
    }

    #[test]
    fn too_few_points_names_exclusions() {
        let mut recs: Vec<_> = [2, 4, 8, 16]
            .iter()
            .map(|&n| record(n, (n as f64).powi(-2)))
            .collect();
        recs[1].converged_reason = StopReason::Aborted;
        let err = fit_slope(&recs, Axis::Neurons).unwrap_err();
        assert!(err.to_string().contains("n=4 non-converged"), "{err}");
    }

    #[test]
    fn json_field_names() {
        let fit = SlopeFit {
            slope: -2.0,
            intercept: 0.5,
            r_squared: 1.0,
            points_used: 4,
            excluded: vec![],
        };
        let text = serde_json::to_string(&fit).unwrap();
        assert_eq!(
            text,
            r#"{"slope":-2.0,"intercept":0.5,"r2":1.0,"used":4,"excluded":[]}"#
        );
    }

    proptest! {
        #[test]
        fn scale_invariance(scale in 1e-6f64..1e6, slope in -4.0f64..-0.5, noise in prop::collection::vec(-0.2f64..0.2, 6)) {
            let ns = [2usize, 3, 5, 9, 17, 33];
            let recs: Vec<_> = ns.iter().zip(&noise)
                .map(|(&n, e)| record(n, (n as f64).powf(slope) * 10f64.powf(*e)))
                .collect();
            let scaled: Vec<_> = recs.iter().map(|r| ScalingRecord { rmse: r.rmse * scale, ..r.clone() }).collect();
            let a = fit_slope(&recs, Axis::Neurons).unwrap();
            let b = fit_slope(&scaled, Axis::Neurons).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-9);
            prop_assert!((b.intercept - a.intercept - scale.log10()).abs() < 1e-9);
        }
    }
}
