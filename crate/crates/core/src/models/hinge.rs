//! Gate hinges: the sets `G_i x + g_i = 0` that separate the model's cells.

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

/// Axis-aligned box `lower[j] <= x_j <= upper[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Self {
        Domain {
            lower: vec![a],
            upper: vec![b],
        }
    }

    pub fn square(a: f64, b: f64) -> Self {
        Domain {
            lower: vec![a, a],
            upper: vec![b, b],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub neuron: usize,
    pub x: f64,
}

/// A hinge line clipped to a 2D box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HingeSegment {
    pub neuron: usize,
    pub start: [f64; 2],
    pub end: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellBoundaries {
    /// Sorted by position.
    Knots(Vec<Knot>),
    Segments(Vec<HingeSegment>),
}

impl CellBoundaries {
    pub fn len(&self) -> usize {
        match self {
            CellBoundaries::Knots(k) => k.len(),
            CellBoundaries::Segments(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn knot_positions(&self) -> Vec<f64> {
        match self {
            CellBoundaries::Knots(k) => k.iter().map(|k| k.x).collect(),
            CellBoundaries::Segments(_) => Vec::new(),
        }
    }
}

/// Hinges of every neuron that crosses `domain`.
///
/// Neurons with an all-zero gate row are affine everywhere and emit nothing.
pub fn cell_boundaries(params: &ModelParams, domain: &Domain) -> Result<CellBoundaries> {
    let dim_x = params.arch.dim_x;
    if domain.dim() != dim_x || domain.upper.len() != dim_x {
        return Err(Error::shape("domain", dim_x, domain.dim()));
    }
    let gate = &params.gate;
    match dim_x {
        1 => {
            let (a, b) = (domain.lower[0], domain.upper[0]);
            let mut knots: Vec<Knot> = (0..params.arch.n)
                .filter(|&i| gate.weight[(i, 0)] != 0.0)
                .map(|i| Knot {
                    neuron: i,
                    x: -gate.bias[i] / gate.weight[(i, 0)],
                })
                .filter(|k| k.x >= a && k.x <= b)
                .collect();
            knots.sort_by(|l, r| l.x.total_cmp(&r.x).then(l.neuron.cmp(&r.neuron)));
            Ok(CellBoundaries::Knots(knots))
        }
        2 => {
            let segments = (0..params.arch.n)
                .filter_map(|i| {
                    let w = [gate.weight[(i, 0)], gate.weight[(i, 1)]];
                    clip_line(w, gate.bias[i], domain).map(|(start, end)| HingeSegment {
                        neuron: i,
                        start,
                        end,
                    })
                })
                .collect();
            Ok(CellBoundaries::Segments(segments))
        }
        d => Err(Error::Unsupported(format!(
            "cell boundaries need dim_x in {{1, 2}}, got {d}"
        ))),
    }
}

/// Clips `w . p + b = 0` to the box (Liang-Barsky). Endpoints ordered by x, then y.
fn clip_line(w: [f64; 2], b: f64, domain: &Domain) -> Option<([f64; 2], [f64; 2])> {
    let norm2 = w[0] * w[0] + w[1] * w[1];
    if norm2 == 0.0 {
        return None;
    }
    let origin = [-b * w[0] / norm2, -b * w[1] / norm2];
    let dir = [-w[1], w[0]];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for j in 0..2 {
        let (lo, hi) = (domain.lower[j], domain.upper[j]);
        if dir[j] == 0.0 {
            if origin[j] < lo || origin[j] > hi {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - origin[j]) / dir[j], (hi - origin[j]) / dir[j]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t0 >= t1 {
        return None;
    }
    let at = |t: f64| {
        let mut p = [origin[0] + t * dir[0], origin[1] + t * dir[1]];
        // snap onto the box to remove rounding noise at the clipped ends
        for j in 0..2 {
            p[j] = p[j].clamp(domain.lower[j], domain.upper[j]);
        }
        p
    };
    let (mut p, mut q) = (at(t0), at(t1));
    if (q[0], q[1]) < (p[0], p[1]) {
        std::mem::swap(&mut p, &mut q);
    }
    Some((p, q))
}
