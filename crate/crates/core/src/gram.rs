//! Gauss-Newton matrices `J^T J` that exploit the piecewise-polynomial model.
//!
//! Points sharing a gate pattern (which neurons are open) see the same
//! polynomial of degree at most `cell_degree` in every Jacobian column. Such a
//! group's rows therefore lie in the span of a small monomial basis, and an
//! orthonormal basis `Q` of that span gives `J_g^T J_g = (Q^T J_g)^T (Q^T J_g)`
//! exactly. In one dimension this shrinks thousands of rows to a few per cell.
//!
//! In more dimensions the cells are too many for that to pay off. There the
//! Khatri-Rao form of an affine branch's Jacobian is used instead: column
//! `(i, j)` is `D_i dh_i x_j`, so every block of `J^T J` between input
//! coordinates `j, j'` is one `n x n` product `dh^T diag(x_j x_j') dh`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::models::{Activations, ModelParams};

/// Total-degree monomial exponents for `dims` variables, constant first.
fn monomials(dims: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; dims]];
    let mut frontier = out.clone();
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            // only raise variables at or after the last raised one: no repeats
            let start = e.iter().rposition(|&p| p > 0).unwrap_or(0);
            for j in start..dims {
                let mut f = e.clone();
                f[j] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Row groups with identical gate patterns, in order of first appearance.
fn pattern_groups(acts: &Activations) -> Vec<Vec<usize>> {
    let (m, n) = acts.pre.shape();
    let words = n.div_ceil(64);
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut key = vec![0u64; words];
    for r in 0..m {
        key.iter_mut().for_each(|w| *w = 0);
        for i in 0..n {
            if acts.pre[(r, i)] > 0.0 {
                key[i / 64] |= 1 << (i % 64);
            }
        }
        match index.get(&key) {
            Some(&g) => groups[g].push(r),
            None => {
                index.insert(key.clone(), groups.len());
                groups.push(vec![r]);
            }
        }
    }
    groups
}

/// `jac^T jac` for a block Jacobian of `params` evaluated at `acts` on `x`.
///
/// Falls back to the dense product when compression would not pay off.
pub(crate) fn normal_matrix(
    params: &ModelParams,
    acts: &Activations,
    x: &DMatrix<f64>,
    jac: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (m, dx, dy) = (x.nrows(), params.arch.dim_x, params.arch.dim_y);
    let p = jac.ncols();
    let basis = monomials(dx, params.arch.kind.cell_degree());
    let b = basis.len();
    let groups = pattern_groups(acts);
    let compressed_rows: usize = groups.iter().map(|g| g.len().min(b)).sum();
    if 2 * compressed_rows > m {
        return jac.transpose() * jac;
    }

    let mut reduced = DMatrix::zeros(compressed_rows * dy, p);
    let mut at = 0;
    for rows in &groups {
        let mg = rows.len();
        if mg <= b {
            for k in 0..dy {
                for &r in rows {
                    reduced.row_mut(at).copy_from(&jac.row(k * m + r));
                    at += 1;
                }
            }
            continue;
        }
        // centred and scaled coordinates keep the Vandermonde well conditioned
        let mut centre = vec![0.0; dx];
        let mut spread = vec![0.0f64; dx];
        for j in 0..dx {
            centre[j] = rows.iter().map(|&r| x[(r, j)]).sum::<f64>() / mg as f64;
            spread[j] = rows
                .iter()
                .map(|&r| (x[(r, j)] - centre[j]).abs())
                .fold(0.0, f64::max);
            if spread[j] == 0.0 {
                spread[j] = 1.0;
            }
        }
        let vander: DMatrix<f64> = DMatrix::from_fn(mg, b, |a, c| {
            basis[c]
                .iter()
                .enumerate()
                .map(|(j, &e)| ((x[(rows[a], j)] - centre[j]) / spread[j]).powi(e as i32))
                .product::<f64>()
        });
        let q = vander.qr().q();
        for k in 0..dy {
            let mut sub: DMatrix<f64> = DMatrix::zeros(mg, p);
            for (mut dst, src) in sub.column_iter_mut().zip(jac.column_iter()) {
                let src = &src.as_slice()[k * m..(k + 1) * m];
                for (d, &r) in dst.iter_mut().zip(rows) {
                    *d = src[r];
                }
            }
            let proj: DMatrix<f64> = q.transpose() * sub;
            reduced.view_mut((at, 0), (b, p)).copy_from(&proj);
            at += b;
        }
    }
    debug_assert_eq!(at, reduced.nrows());
    reduced.transpose() * reduced
}

/// `(J^T J, J^T r)` for an affine branch `W x + b` of every neuron, whose
/// hidden-unit sensitivity is `dh` (`m x n`), without forming `J`.
///
/// Columns follow the flat layout: weights `i * dim_x + j`, then biases
/// `n * dim_x + i`. `residual` is `m x dim_y`.
pub(crate) fn affine_branch_normal(
    params: &ModelParams,
    dh: &DMatrix<f64>,
    x: &DMatrix<f64>,
    residual: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (m, n, dx) = (x.nrows(), params.arch.n, params.arch.dim_x);
    let p = n * (dx + 1);
    let col = |i: usize, j: usize| if j < dx { i * dx + j } else { n * dx + i };
    let coord =
        |j: usize| -> Option<&[f64]> { (j < dx).then(|| &x.as_slice()[j * m..(j + 1) * m]) };
    let head = &params.head_weight;
    let dtd = head.tr_mul(head);

    // J^T r: sum_r dh_ri (sum_k D_ki r_rk) x_rj
    let mut weighted = residual * head;
    weighted.component_mul_assign(dh);
    let mut rhs = DVector::zeros(p);
    for i in 0..n {
        let w = weighted.column(i);
        let w = w.as_slice();
        for j in 0..=dx {
            rhs[col(i, j)] = match coord(j) {
                Some(xj) => w.iter().zip(xj).map(|(a, b)| a * b).sum(),
                None => w.iter().sum(),
            };
        }
    }

    let mut normal = DMatrix::zeros(p, p);
    let mut scaled = DMatrix::zeros(m, n);
    let mut s = vec![0.0; m];
    for j in 0..=dx {
        for jj in j..=dx {
            match (coord(j), coord(jj)) {
                (Some(a), Some(b)) => s
                    .iter_mut()
                    .zip(a.iter().zip(b))
                    .for_each(|(v, (a, b))| *v = a * b),
                (Some(a), None) | (None, Some(a)) => s.copy_from_slice(a),
                (None, None) => s.fill(1.0),
            }
            for (mut dst, src) in scaled.column_iter_mut().zip(dh.column_iter()) {
                for ((d, v), w) in dst.as_mut_slice().iter_mut().zip(src.as_slice()).zip(&s) {
                    *d = v * w;
                }
            }
            let block = dh.transpose() * &scaled;
            for i in 0..n {
                for ii in 0..n {
                    let v = dtd[(i, ii)] * block[(i, ii)];
                    normal[(col(i, j), col(ii, jj))] = v;
                    normal[(col(i, jj), col(ii, j))] = v;
                }
            }
        }
    }
    (normal, rhs)
}
