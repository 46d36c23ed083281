//! Staggered (MAC) grid fields and the discrete operators acting on them.
//!
//! Layout on an `N x N` periodic grid of spacing `h`, all arrays row-major
//! with index `j * N + i` (`j` the y index):
//!
//! * `u[i, j]` lives on the vertical face at `((i + 1) h, (j + 1/2) h)`,
//!   i.e. the right face of cell `(i, j)`;
//! * `v[i, j]` lives on the horizontal face at `((i + 1/2) h, (j + 1) h)`,
//!   the top face of cell `(i, j)`;
//! * pressure and divergence live at cell centers `((i + 1/2) h, (j + 1/2) h)`;
//! * vorticity lives at the corner `((i + 1) h, (j + 1) h)`.
//!
//! With this layout the gradient is exactly the negative transpose of the
//! divergence, `G = -M^T`, with no metric weights.

use std::marker::PhantomData;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaggeredGrid {
    n: usize,
    length: f64,
}

impl StaggeredGrid {
    pub const MIN_CELLS: usize = 4;

    /// Unit-length periodic square with `n` cells per side.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_length(n, 1.0)
    }

    pub fn with_length(n: usize, length: f64) -> Result<Self> {
        if n < Self::MIN_CELLS {
            return Err(Error::Config(format!(
                "grid needs at least {} cells per side, got {n}",
                Self::MIN_CELLS
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Config(format!("invalid domain length {length}")));
        }
        Ok(Self { n, length })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Domain area `|Omega|`.
    #[inline]
    pub fn area(&self) -> f64 {
        self.length * self.length
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub(crate) fn next(&self, i: usize) -> usize {
        if i + 1 == self.n {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub(crate) fn prev(&self, i: usize) -> usize {
        if i == 0 {
            self.n - 1
        } else {
            i - 1
        }
    }

    pub fn u_position(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        ((i as f64 + 1.0) * h, (j as f64 + 0.5) * h)
    }

    pub fn v_position(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        ((i as f64 + 0.5) * h, (j as f64 + 1.0) * h)
    }

    pub fn center_position(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)
    }

    pub fn corner_position(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        ((i as f64 + 1.0) * h, (j as f64 + 1.0) * h)
    }

    pub fn check_same(&self, other: &StaggeredGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }
}

/// Face-normal velocities on a staggered grid; `N_u = 2 N^2` unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    grid: StaggeredGrid,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        Self {
            grid,
            u: vec![0.0; grid.cells()],
            v: vec![0.0; grid.cells()],
        }
    }

    pub fn from_components(grid: StaggeredGrid, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != grid.cells() || v.len() != grid.cells() {
            return Err(Error::ShapeMismatch(format!(
                "velocity components have {} and {} entries, grid needs {}",
                u.len(),
                v.len(),
                grid.cells()
            )));
        }
        Ok(Self { grid, u, v })
    }

    /// Sample continuous components at the face locations.
    pub fn from_fn(
        grid: StaggeredGrid,
        fu: impl Fn(f64, f64) -> f64,
        fv: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let n = grid.n();
        let mut field = Self::zeros(grid);
        for j in 0..n {
            for i in 0..n {
                let k = grid.idx(i, j);
                let (x, y) = grid.u_position(i, j);
                field.u[k] = fu(x, y);
                let (x, y) = grid.v_position(i, j);
                field.v[k] = fv(x, y);
            }
        }
        field
    }

    #[inline]
    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    #[inline]
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    #[inline]
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn u_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    #[inline]
    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn component(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.u,
            1 => &self.v,
            _ => panic!("velocity component index {c} out of range"),
        }
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        match c {
            0 => &mut self.u,
            1 => &mut self.v,
            _ => panic!("velocity component index {c} out of range"),
        }
    }

    pub fn into_components(self) -> (Vec<f64>, Vec<f64>) {
        (self.u, self.v)
    }

    /// All `2 N^2` unknowns, `u` block first.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.u.iter().chain(self.v.iter()).copied()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn from_vec(grid: StaggeredGrid, flat: &[f64]) -> Result<Self> {
        let m = grid.cells();
        if flat.len() != 2 * m {
            return Err(Error::ShapeMismatch(format!(
                "flat velocity vector has {} entries, expected {}",
                flat.len(),
                2 * m
            )));
        }
        Self::from_components(grid, flat[..m].to_vec(), flat[m..].to_vec())
    }

    pub fn dot(&self, other: &VelocityField) -> f64 {
        dot(&self.u, &other.u) + dot(&self.v, &other.v)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &VelocityField) {
        axpy(&mut self.u, alpha, &other.u);
        axpy(&mut self.v, alpha, &other.v);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.u.iter_mut().chain(self.v.iter_mut()).for_each(|x| *x *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> VelocityField {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    pub fn mean(&self) -> (f64, f64) {
        let m = self.grid.cells() as f64;
        (self.u.iter().sum::<f64>() / m, self.v.iter().sum::<f64>() / m)
    }

    /// Periodic translation by `(di, dj)` cells: `out[i + di, j + dj] = self[i, j]`.
    pub fn shifted(&self, di: usize, dj: usize) -> VelocityField {
        VelocityField {
            grid: self.grid,
            u: shift(&self.grid, &self.u, di, dj),
            v: shift(&self.grid, &self.v, di, dj),
        }
    }
}

impl Add<&VelocityField> for &VelocityField {
    type Output = VelocityField;

    fn add(self, rhs: &VelocityField) -> VelocityField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub<&VelocityField> for &VelocityField {
    type Output = VelocityField;

    fn sub(self, rhs: &VelocityField) -> VelocityField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &VelocityField {
    type Output = VelocityField;

    fn mul(self, rhs: f64) -> VelocityField {
        self.scaled(rhs)
    }
}

/// Marker for cell-center placement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Center;

/// Marker for cell-corner placement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner;

/// One scalar per cell, located according to `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<L> {
    grid: StaggeredGrid,
    values: Vec<f64>,
    _loc: PhantomData<L>,
}

pub type PressureField = ScalarField<Center>;
pub type VorticityField = ScalarField<Corner>;

impl<L> ScalarField<L> {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.cells()],
            _loc: PhantomData,
        }
    }

    pub fn from_values(grid: StaggeredGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::ShapeMismatch(format!(
                "scalar field has {} entries, grid needs {}",
                values.len(),
                grid.cells()
            )));
        }
        Ok(Self {
            grid,
            values,
            _loc: PhantomData,
        })
    }

    #[inline]
    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn shifted(&self, di: usize, dj: usize) -> Self {
        Self {
            grid: self.grid,
            values: shift(&self.grid, &self.values, di, dj),
            _loc: PhantomData,
        }
    }
}

impl PressureField {
    pub fn from_fn(grid: StaggeredGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = vec![0.0; grid.cells()];
        for j in 0..n {
            for i in 0..n {
                let (x, y) = grid.center_position(i, j);
                values[grid.idx(i, j)] = f(x, y);
            }
        }
        Self {
            grid,
            values,
            _loc: PhantomData,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn shift(grid: &StaggeredGrid, a: &[f64], di: usize, dj: usize) -> Vec<f64> {
    let n = grid.n();
    let mut out = vec![0.0; a.len()];
    for j in 0..n {
        for i in 0..n {
            out[grid.idx((i + di) % n, (j + dj) % n)] = a[grid.idx(i, j)];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Cell-centered divergence `M u`: `(u[i] - u[i-1]) / h + (v[j] - v[j-1]) / h`.
pub fn divergence(vel: &VelocityField) -> PressureField {
    let mut out = PressureField::zeros(vel.grid);
    divergence_into(vel, &mut out.values);
    out
}

pub(crate) fn divergence_into(vel: &VelocityField, out: &mut [f64]) {
    let g = &vel.grid;
    let n = g.n();
    let inv_h = 1.0 / g.spacing();
    for j in 0..n {
        let jm = g.prev(j);
        for i in 0..n {
            let im = g.prev(i);
            let k = g.idx(i, j);
            out[k] = (vel.u[k] - vel.u[g.idx(im, j)] + vel.v[k] - vel.v[g.idx(i, jm)]) * inv_h;
        }
    }
}

/// Face gradient `G p = -M^T p`: `(p[i+1] - p[i]) / h` on `u` faces.
pub fn gradient(p: &PressureField) -> VelocityField {
    let mut out = VelocityField::zeros(p.grid);
    gradient_into(&p.grid, &p.values, &mut out);
    out
}

pub(crate) fn gradient_into(g: &StaggeredGrid, p: &[f64], out: &mut VelocityField) {
    let n = g.n();
    let inv_h = 1.0 / g.spacing();
    for j in 0..n {
        let jp = g.next(j);
        for i in 0..n {
            let ip = g.next(i);
            let k = g.idx(i, j);
            out.u[k] = (p[g.idx(ip, j)] - p[k]) * inv_h;
            out.v[k] = (p[g.idx(i, jp)] - p[k]) * inv_h;
        }
    }
}

/// Five-point Laplacian applied to each velocity component (`D_h`).
pub fn diffusion(vel: &VelocityField) -> VelocityField {
    let mut out = VelocityField::zeros(vel.grid);
    laplacian_into(&vel.grid, &vel.u, &mut out.u);
    laplacian_into(&vel.grid, &vel.v, &mut out.v);
    out
}

/// Five-point periodic Laplacian of one scalar array.
pub fn laplacian_into(g: &StaggeredGrid, a: &[f64], out: &mut [f64]) {
    let n = g.n();
    let inv_h2 = 1.0 / (g.spacing() * g.spacing());
    for j in 0..n {
        let jm = g.prev(j);
        let jp = g.next(j);
        for i in 0..n {
            let im = g.prev(i);
            let ip = g.next(i);
            let k = g.idx(i, j);
            out[k] = (a[g.idx(ip, j)] + a[g.idx(im, j)] + a[g.idx(i, jp)] + a[g.idx(i, jm)]
                - 4.0 * a[k])
                * inv_h2;
        }
    }
}

/// Nonlinear convection `C(u) u`.
pub fn convection(vel: &VelocityField) -> VelocityField {
    convection_of(vel, vel)
}

/// Convection operator `C(a) phi` for advecting field `a`.
///
/// Harlow-Welch fluxes: mass fluxes through the faces of each momentum
/// control volume are two-point averages of the advecting field, transported
/// values are two-point averages of `phi`. The result is written in the
/// neighbour-only form
///
/// ```text
/// (C(a) phi)_f = sum_s F_s phi_nb(s) / (2 h),
/// ```
///
/// which equals the divergence form minus `phi_f / 2` times the mass-flux
/// divergence of the control volume. That divergence is the average of the
/// two adjacent cell divergences, so for `M a = 0` this *is* the divergence
/// form, and for any `a` the matrix `C(a)` is skew-symmetric.
pub fn convection_of(adv: &VelocityField, phi: &VelocityField) -> VelocityField {
    let mut out = VelocityField::zeros(adv.grid);
    convection_into(adv, phi, &mut out);
    out
}

pub(crate) fn convection_into(adv: &VelocityField, phi: &VelocityField, out: &mut VelocityField) {
    let g = &adv.grid;
    let n = g.n();
    let c = 0.25 / g.spacing();
    let (au, av) = (&adv.u, &adv.v);
    let (pu, pv) = (&phi.u, &phi.v);
    for j in 0..n {
        let jm = g.prev(j);
        let jp = g.next(j);
        for i in 0..n {
            let im = g.prev(i);
            let ip = g.next(i);
            let k = g.idx(i, j);
            let k_ip = g.idx(ip, j);
            let k_im = g.idx(im, j);
            let k_jp = g.idx(i, jp);
            let k_jm = g.idx(i, jm);

            // u control volume centred on the face between cells i and i+1.
            // The 1/2 of the flux averages is folded into `c`.
            let fe = au[k] + au[k_ip];
            let fw = au[k_im] + au[k];
            let fn_ = av[k] + av[k_ip];
            let fs = av[k_jm] + av[g.idx(ip, jm)];
            out.u[k] = c * (fe * pu[k_ip] - fw * pu[k_im] + fn_ * pu[k_jp] - fs * pu[k_jm]);

            // v control volume centred on the face between cells j and j+1.
            let fn_ = av[k] + av[k_jp];
            let fs = av[k_jm] + av[k];
            let fe = au[k] + au[k_jp];
            let fw = au[k_im] + au[g.idx(im, jp)];
            out.v[k] = c * (fe * pv[k_ip] - fw * pv[k_im] + fn_ * pv[k_jp] - fs * pv[k_jm]);
        }
    }
}

/// Corner vorticity `B u = delta_x v - delta_y u`.
pub fn curl(vel: &VelocityField) -> VorticityField {
    let mut out = VorticityField::zeros(vel.grid);
    curl_into(vel, &mut out.values);
    out
}

pub(crate) fn curl_into(vel: &VelocityField, out: &mut [f64]) {
    let g = &vel.grid;
    let n = g.n();
    let inv_h = 1.0 / g.spacing();
    for j in 0..n {
        let jp = g.next(j);
        for i in 0..n {
            let ip = g.next(i);
            let k = g.idx(i, j);
            out[k] = (vel.v[g.idx(ip, j)] - vel.v[k] - vel.u[g.idx(i, jp)] + vel.u[k]) * inv_h;
        }
    }
}

/// Largest discrete divergence magnitude, scaled by `h / max|u|` so that the
/// result is dimensionless (0 for a zero field).
pub fn relative_divergence(vel: &VelocityField) -> f64 {
    let scale = vel.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    divergence(vel).max_abs() * vel.grid.spacing() / scale
}
