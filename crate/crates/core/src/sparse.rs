//! Explicitly assembled operators for small grids.
//!
//! The production operators in [`crate::grid`] are matrix-free stencils.
//! The matrices here are built entry by entry from the same geometric
//! definitions and serve as independent references in tests: adjointness,
//! the differential-filter linear solve, quadratic-form checks of energy and
//! enstrophy. Velocity vectors are flattened as `[u; v]`.

use crate::grid::StaggeredGrid;

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.values[k] * x[self.col_idx[k]])
                    .sum()
            })
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push((self.col_idx[k], r, self.values[k]));
            }
        }
        CsrMatrix::from_triplets(self.cols, self.rows, t)
    }

    /// `x^T A x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

struct Index {
    n: usize,
}

impl Index {
    fn cell(&self, i: isize, j: isize) -> usize {
        wrap(j, self.n) * self.n + wrap(i, self.n)
    }
    fn u(&self, i: isize, j: isize) -> usize {
        self.cell(i, j)
    }
    fn v(&self, i: isize, j: isize) -> usize {
        self.n * self.n + self.cell(i, j)
    }
}

/// `M_h`: cell-centre divergence, `N^2 x 2N^2`.
pub fn divergence_matrix(grid: &StaggeredGrid) -> CsrMatrix {
    let n = grid.n();
    let ix = Index { n };
    let h = grid.spacing();
    let mut t = Vec::new();
    for j in 0..n as isize {
        for i in 0..n as isize {
            let row = ix.cell(i, j);
            // u on the right face of cell i is u[i], left face is u[i-1].
            t.push((row, ix.u(i, j), 1.0 / h));
            t.push((row, ix.u(i - 1, j), -1.0 / h));
            t.push((row, ix.v(i, j), 1.0 / h));
            t.push((row, ix.v(i, j - 1), -1.0 / h));
        }
    }
    CsrMatrix::from_triplets(n * n, 2 * n * n, t)
}

/// `G_h`: face gradient of a cell-centred field, `2N^2 x N^2`.
pub fn gradient_matrix(grid: &StaggeredGrid) -> CsrMatrix {
    let n = grid.n();
    let ix = Index { n };
    let h = grid.spacing();
    let mut t = Vec::new();
    for j in 0..n as isize {
        for i in 0..n as isize {
            // face u[i,j] sits between cells (i,j) and (i+1,j)
            t.push((ix.u(i, j), ix.cell(i + 1, j), 1.0 / h));
            t.push((ix.u(i, j), ix.cell(i, j), -1.0 / h));
            t.push((ix.v(i, j), ix.cell(i, j + 1), 1.0 / h));
            t.push((ix.v(i, j), ix.cell(i, j), -1.0 / h));
        }
    }
    CsrMatrix::from_triplets(2 * n * n, n * n, t)
}

/// `D_h`: five-point Laplacian on both velocity components, `2N^2 x 2N^2`.
pub fn laplacian_matrix(grid: &StaggeredGrid) -> CsrMatrix {
    let n = grid.n();
    let ix = Index { n };
    let c = 1.0 / (grid.spacing() * grid.spacing());
    let mut t = Vec::new();
    for j in 0..n as isize {
        for i in 0..n as isize {
            for comp in [Index::u as fn(&Index, isize, isize) -> usize, Index::v] {
                let row = comp(&ix, i, j);
                t.push((row, row, -4.0 * c));
                t.push((row, comp(&ix, i + 1, j), c));
                t.push((row, comp(&ix, i - 1, j), c));
                t.push((row, comp(&ix, i, j + 1), c));
                t.push((row, comp(&ix, i, j - 1), c));
            }
        }
    }
    CsrMatrix::from_triplets(2 * n * n, 2 * n * n, t)
}

/// `B_h`: corner curl, `N^2 x 2N^2`.
pub fn curl_matrix(grid: &StaggeredGrid) -> CsrMatrix {
    let n = grid.n();
    let ix = Index { n };
    let h = grid.spacing();
    let mut t = Vec::new();
    for j in 0..n as isize {
        for i in 0..n as isize {
            let row = ix.cell(i, j);
            t.push((row, ix.v(i + 1, j), 1.0 / h));
            t.push((row, ix.v(i, j), -1.0 / h));
            t.push((row, ix.u(i, j + 1), -1.0 / h));
            t.push((row, ix.u(i, j), 1.0 / h));
        }
    }
    CsrMatrix::from_triplets(n * n, 2 * n * n, t)
}

/// Divergence-form convection matrix `C(a)` for a fixed advecting field
/// `a` (flattened `[u; v]`): mass fluxes and transported values are both
/// two-point averages on the faces of each momentum control volume.
pub fn convection_matrix(grid: &StaggeredGrid, adv: &[f64]) -> CsrMatrix {
    let n = grid.n();
    let ix = Index { n };
    let h = grid.spacing();
    let mut t = Vec::new();
    let a = |k: usize| adv[k];
    for j in 0..n as isize {
        for i in 0..n as isize {
            // u control volume around face (i, j)
            let row = ix.u(i, j);
            let fe = 0.5 * (a(ix.u(i, j)) + a(ix.u(i + 1, j)));
            let fw = 0.5 * (a(ix.u(i - 1, j)) + a(ix.u(i, j)));
            let fnn = 0.5 * (a(ix.v(i, j)) + a(ix.v(i + 1, j)));
            let fs = 0.5 * (a(ix.v(i, j - 1)) + a(ix.v(i + 1, j - 1)));
            for (flux, nb) in [
                (fe, ix.u(i + 1, j)),
                (-fw, ix.u(i - 1, j)),
                (fnn, ix.u(i, j + 1)),
                (-fs, ix.u(i, j - 1)),
            ] {
                t.push((row, row, 0.5 * flux / h));
                t.push((row, nb, 0.5 * flux / h));
            }

            // v control volume around face (i, j)
            let row = ix.v(i, j);
            let fnn = 0.5 * (a(ix.v(i, j)) + a(ix.v(i, j + 1)));
            let fs = 0.5 * (a(ix.v(i, j - 1)) + a(ix.v(i, j)));
            let fe = 0.5 * (a(ix.u(i, j)) + a(ix.u(i, j + 1)));
            let fw = 0.5 * (a(ix.u(i - 1, j)) + a(ix.u(i - 1, j + 1)));
            for (flux, nb) in [
                (fe, ix.v(i + 1, j)),
                (-fw, ix.v(i - 1, j)),
                (fnn, ix.v(i, j + 1)),
                (-fs, ix.v(i, j - 1)),
            ] {
                t.push((row, row, 0.5 * flux / h));
                t.push((row, nb, 0.5 * flux / h));
            }
        }
    }
    CsrMatrix::from_triplets(2 * n * n, 2 * n * n, t)
}

/// Solve `(I - 2 delta^2 D_h) x = b` by conjugate gradients, with `b` the
/// stacked `[u, v]` vector of length `2 N^2`.
///
/// The operator is symmetric positive definite for every `delta`, so CG
/// converges; iteration stops at relative residual `tol`.
pub fn solve_differential_filter(
    grid: &StaggeredGrid,
    delta: f64,
    b: &[f64],
    tol: f64,
) -> Vec<f64> {
    let lap = laplacian_matrix(grid);
    let c = 2.0 * delta * delta;
    let apply = |x: &[f64]| -> Vec<f64> {
        let dx = lap.mul_vec(x);
        x.iter().zip(&dx).map(|(x, d)| x - c * d).collect()
    };
    conjugate_gradient(apply, b, tol, 10 * b.len())
}

pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let target = tol * tol * dot(b, b);
    for _ in 0..max_iter {
        if rs <= target {
            break;
        }
        let ap = apply(&p);
        let alpha = rs / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
        rs = rs_new;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{self, PressureField, VelocityField};

    #[test]
    fn gradient_is_negative_divergence_transpose() {
        let g = StaggeredGrid::new(6).unwrap();
        let gm = gradient_matrix(&g);
        let mt = divergence_matrix(&g).transpose();
        let x: Vec<f64> = (0..36).map(|k| (k as f64 * 0.37).sin()).collect();
        let a = gm.mul_vec(&x);
        let b = mt.mul_vec(&x);
        for (a, b) in a.iter().zip(&b) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn matrices_match_stencils() {
        let g = StaggeredGrid::new(6).unwrap();
        let flat: Vec<f64> = (0..72).map(|k| ((k * k) as f64 * 0.13).cos()).collect();
        let vel = VelocityField::from_vec(g, &flat).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-10);
        assert!(close(&divergence_matrix(&g).mul_vec(&flat), grid::divergence(&vel).values()));
        assert!(close(&curl_matrix(&g).mul_vec(&flat), grid::curl(&vel).values()));
        assert!(close(&laplacian_matrix(&g).mul_vec(&flat), &grid::diffusion(&vel).to_vec()));
        let p: Vec<f64> = (0..36).map(|k| (k as f64).sqrt()).collect();
        let pf = PressureField::from_values(g, p.clone()).unwrap();
        assert!(close(&gradient_matrix(&g).mul_vec(&p), &grid::gradient(&pf).to_vec()));
    }

    #[test]
    fn cg_solves_filter_system() {
        let g = StaggeredGrid::new(8).unwrap();
        let b: Vec<f64> = (0..128).map(|k| (k as f64 * 0.7).sin()).collect();
        let delta = g.spacing();
        let x = solve_differential_filter(&g, delta, &b, 1e-14);
        let lap = laplacian_matrix(&g);
        let dx = lap.mul_vec(&x);
        for k in 0..b.len() {
            let r = x[k] - 2.0 * delta * delta * dx[k] - b[k];
            assert!(r.abs() < 1e-11);
        }
    }
}
