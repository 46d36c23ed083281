//! Explicit RK4 integration of the semi-discrete momentum equation.
//!
//! Pressure is eliminated by projection: every stage tendency and the final
//! state are projected onto discretely divergence-free fields with the FFT
//! Poisson solver, `P = I - G L^{-1} M`.

use std::f64::consts::PI;
use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{
    convection_into, divergence_into, gradient_into, laplacian_into, PressureField, StaggeredGrid,
    VelocityField,
};
use crate::spectral::SpectralOps;

#[derive(Clone, Debug, PartialEq)]
pub enum Forcing {
    None,
    /// `f_x = amplitude * sin(2 pi k_f y / L)`, `f_y = 0`.
    Kolmogorov { amplitude: f64, wavenumber: u32 },
    Custom(VelocityField),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Closure {
    None,
    /// Eddy viscosity `theta^2 width^2 sqrt(2 S:S)`; `width` defaults to `h`.
    Smagorinsky { coefficient: f64, width: Option<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverParams {
    pub viscosity: f64,
    pub dt: f64,
    pub forcing: Forcing,
    pub closure: Closure,
}

impl SolverParams {
    pub fn new(viscosity: f64, dt: f64) -> Self {
        Self {
            viscosity,
            dt,
            forcing: Forcing::None,
            closure: Closure::None,
        }
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn with_closure(mut self, closure: Closure) -> Self {
        self.closure = closure;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity >= 0.0 && self.viscosity.is_finite()) {
            return Err(Error::Config(format!("viscosity must be >= 0, got {}", self.viscosity)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be > 0, got {}", self.dt)));
        }
        if let Forcing::Kolmogorov { wavenumber, amplitude } = self.forcing {
            if wavenumber < 1 || !amplitude.is_finite() {
                return Err(Error::Config("Kolmogorov forcing needs k_f >= 1 and finite amplitude".into()));
            }
        }
        if let Closure::Smagorinsky { coefficient, width } = self.closure {
            if !(0.0..=1.0).contains(&coefficient) {
                return Err(Error::Config(format!("Smagorinsky coefficient {coefficient} outside [0, 1]")));
            }
            if width.is_some_and(|w| !(w > 0.0)) {
                return Err(Error::Config("Smagorinsky width must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Kolmogorov body force sampled on the `u` faces.
pub fn kolmogorov_forcing(grid: StaggeredGrid, amplitude: f64, wavenumber: u32) -> VelocityField {
    let l = grid.length();
    VelocityField::from_fn(
        grid,
        |_, y| amplitude * (2.0 * PI * wavenumber as f64 * y / l).sin(),
        |_, _| 0.0,
    )
}

/// Strain-rate components: `S11`, `S22` at cell centers, `S12` at corners.
struct Strain {
    s11: Vec<f64>,
    s22: Vec<f64>,
    s12: Vec<f64>,
}

fn strain(u: &VelocityField) -> Strain {
    let g = u.grid();
    let n = g.n();
    let inv_h = 1.0 / g.spacing();
    let m = g.cells();
    let (mut s11, mut s22, mut s12) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let (uu, vv) = (u.u(), u.v());
    for j in 0..n {
        let (jm, jp) = (g.prev(j), g.next(j));
        for i in 0..n {
            let (im, ip) = (g.prev(i), g.next(i));
            let k = g.idx(i, j);
            s11[k] = (uu[k] - uu[g.idx(im, j)]) * inv_h;
            s22[k] = (vv[k] - vv[g.idx(i, jm)]) * inv_h;
            s12[k] = 0.5 * ((uu[g.idx(i, jp)] - uu[k]) + (vv[g.idx(ip, j)] - vv[k])) * inv_h;
        }
    }
    Strain { s11, s22, s12 }
}

fn eddy_viscosity(g: &StaggeredGrid, s: &Strain, coefficient: f64, width: f64) -> PressureField {
    let n = g.n();
    let c = coefficient * coefficient * width * width;
    let mut out = PressureField::zeros(*g);
    let vals = out.values_mut();
    for j in 0..n {
        let jm = g.prev(j);
        for i in 0..n {
            let im = g.prev(i);
            let k = g.idx(i, j);
            let s12 = 0.25 * (s.s12[k] + s.s12[g.idx(im, j)] + s.s12[g.idx(i, jm)] + s.s12[g.idx(im, jm)]);
            let tr = s.s11[k] * s.s11[k] + s.s22[k] * s.s22[k] + 2.0 * s12 * s12;
            vals[k] = c * (2.0 * tr).sqrt();
        }
    }
    out
}

/// Smagorinsky eddy viscosity at cell centers.
///
/// Normal strains are the compact face differences at the center, the shear
/// strain is averaged from the four surrounding corners.
pub fn smagorinsky_viscosity(u: &VelocityField, coefficient: f64, width: f64) -> PressureField {
    eddy_viscosity(u.grid(), &strain(u), coefficient, width)
}

/// Divergence of `2 nu_t S` in the form `-1/2 dD/du` of the frozen-viscosity
/// dissipation `D = sum 2 nu (S11^2 + S22^2) + sum 4 nu_c S12^2`, so that
/// `u . closure(u) = -D <= 0`. Corner viscosity is the mean of the four
/// adjacent centers.
fn smagorinsky_into(u: &VelocityField, coefficient: f64, width: f64, out: &mut VelocityField) {
    let g = *u.grid();
    let n = g.n();
    let inv_h = 1.0 / g.spacing();
    let s = strain(u);
    let nu = eddy_viscosity(&g, &s, coefficient, width);
    let nu = nu.values();
    let m = g.cells();
    // Stresses 2 nu S at their native locations.
    let mut t11 = vec![0.0; m];
    let mut t22 = vec![0.0; m];
    let mut t12 = vec![0.0; m];
    for j in 0..n {
        let jp = g.next(j);
        for i in 0..n {
            let ip = g.next(i);
            let k = g.idx(i, j);
            t11[k] = 2.0 * nu[k] * s.s11[k];
            t22[k] = 2.0 * nu[k] * s.s22[k];
            let nu_c = 0.25 * (nu[k] + nu[g.idx(ip, j)] + nu[g.idx(i, jp)] + nu[g.idx(ip, jp)]);
            t12[k] = 2.0 * nu_c * s.s12[k];
        }
    }
    for j in 0..n {
        let (jm, jp) = (g.prev(j), g.next(j));
        for i in 0..n {
            let (im, ip) = (g.prev(i), g.next(i));
            let k = g.idx(i, j);
            out.u_mut()[k] += ((t11[g.idx(ip, j)] - t11[k]) + (t12[k] - t12[g.idx(i, jm)])) * inv_h;
            out.v_mut()[k] += ((t22[g.idx(i, jp)] - t22[k]) + (t12[k] - t12[g.idx(im, j)])) * inv_h;
        }
    }
}

/// Smagorinsky closure tendency `div(2 nu_t S)` on the faces.
pub fn smagorinsky_tendency(u: &VelocityField, coefficient: f64, width: f64) -> VelocityField {
    let mut out = VelocityField::zeros(*u.grid());
    smagorinsky_into(u, coefficient, width, &mut out);
    out
}

/// Time integrator for one grid and parameter set.
///
/// Owns scratch buffers, so one instance serves one trajectory at a time.
#[derive(Clone, Debug)]
pub struct Stepper {
    grid: StaggeredGrid,
    params: SolverParams,
    ops: Arc<SpectralOps>,
    forcing: Option<VelocityField>,
    div: Vec<f64>,
    pressure: Vec<f64>,
    grad: VelocityField,
    last_cfl: f64,
    cfl_warned: bool,
}

impl Stepper {
    pub fn new(grid: StaggeredGrid, params: SolverParams) -> Result<Self> {
        Self::with_ops(Arc::new(SpectralOps::new(grid)), params)
    }

    /// Share a precomputed transform plan between several steppers.
    pub fn with_ops(ops: Arc<SpectralOps>, params: SolverParams) -> Result<Self> {
        params.validate()?;
        let grid = *ops.grid();
        let forcing = match &params.forcing {
            Forcing::None => None,
            Forcing::Kolmogorov { amplitude, wavenumber } => {
                Some(kolmogorov_forcing(grid, *amplitude, *wavenumber))
            }
            Forcing::Custom(f) => {
                grid.check_same(f.grid())?;
                Some(f.clone())
            }
        };
        Ok(Self {
            grid,
            params,
            ops,
            forcing,
            div: vec![0.0; grid.cells()],
            pressure: vec![0.0; grid.cells()],
            grad: VelocityField::zeros(grid),
            last_cfl: 0.0,
            cfl_warned: false,
        })
    }

    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn ops(&self) -> &Arc<SpectralOps> {
        &self.ops
    }

    /// CFL number `max|u| dt / h` of the last state passed to `rk4_step`.
    pub fn last_cfl(&self) -> f64 {
        self.last_cfl
    }

    /// Pressure-free tendency `-C(u)u + nu D u + f (+ closure)`.
    pub fn rhs(&self, u: &VelocityField) -> VelocityField {
        let mut out = VelocityField::zeros(self.grid);
        self.rhs_into(u, &mut out);
        out
    }

    fn rhs_into(&self, u: &VelocityField, out: &mut VelocityField) {
        convection_into(u, u, out);
        out.scale(-1.0);
        let nu = self.params.viscosity;
        if nu != 0.0 {
            let mut lap = vec![0.0; self.grid.cells()];
            for c in 0..2 {
                laplacian_into(&self.grid, u.component(c), &mut lap);
                crate::grid::axpy(out.component_mut(c), nu, &lap);
            }
        }
        if let Some(f) = &self.forcing {
            out.axpy(1.0, f);
        }
        if let Closure::Smagorinsky { coefficient, width } = self.params.closure {
            if coefficient > 0.0 {
                let width = width.unwrap_or(self.grid.spacing());
                smagorinsky_into(u, coefficient, width, out);
            }
        }
    }

    /// In-place projection onto discretely divergence-free fields.
    pub fn project_inplace(&mut self, u: &mut VelocityField) {
        divergence_into(u, &mut self.div);
        self.ops.poisson_into(&self.div, &mut self.pressure);
        gradient_into(&self.grid, &self.pressure, &mut self.grad);
        u.axpy(-1.0, &self.grad);
    }

    pub fn project(&mut self, u: &VelocityField) -> VelocityField {
        let mut out = u.clone();
        self.project_inplace(&mut out);
        out
    }

    /// One classical RK4 step with projected stages.
    pub fn rk4_step(&mut self, u: &VelocityField) -> VelocityField {
        let dt = self.params.dt;
        self.last_cfl = u.max_abs() * dt / self.grid.spacing();
        if self.last_cfl > 1.0 && !self.cfl_warned {
            warn!("CFL number {:.3} exceeds 1 (warning shown once per stepper)", self.last_cfl);
            self.cfl_warned = true;
        }

        let mut k = VelocityField::zeros(self.grid);
        let mut stage = u.clone();
        let mut acc = u.clone();
        let weights = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
        let offsets = [0.5, 0.5, 1.0];
        for s in 0..4 {
            self.rhs_into(&stage, &mut k);
            self.project_inplace(&mut k);
            acc.axpy(dt * weights[s], &k);
            if s < 3 {
                stage.clone_from(u);
                stage.axpy(dt * offsets[s], &k);
            }
        }
        self.project_inplace(&mut acc);
        acc
    }
}

/// Project `u` with a temporary plan; prefer [`Stepper::project`] in loops.
pub fn project(u: &VelocityField) -> VelocityField {
    let ops = SpectralOps::new(*u.grid());
    let g = *u.grid();
    let mut div = PressureField::zeros(g);
    divergence_into(u, div.values_mut());
    let mut p = vec![0.0; g.cells()];
    ops.poisson_into(div.values(), &mut p);
    let mut grad = VelocityField::zeros(g);
    gradient_into(&g, &p, &mut grad);
    u - &grad
}
