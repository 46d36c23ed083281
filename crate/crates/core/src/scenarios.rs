//! Initial conditions, coarse-graining and the two standard test cases.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rustfft::num_complex::Complex64;

use crate::config::{ForcingConfig, RunConfig};
use crate::error::{Error, Result};
use crate::grid::{StaggeredGrid, VelocityField};
use crate::spectral::{signed_wavenumber, SpectralField, SpectralOps, WavenumberShells};
use crate::timestepper::project;

/// Target shell energy profile `kappa -> E(kappa)`, normalized later.
#[derive(Clone)]
pub enum SpectrumProfile {
    /// `kappa^4 exp(-(kappa / peak)^2)`.
    PeakedQuartic { peak: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl SpectrumProfile {
    pub fn eval(&self, kappa: f64) -> f64 {
        match self {
            SpectrumProfile::PeakedQuartic { peak } => kappa.powi(4) * (-(kappa / peak).powi(2)).exp(),
            SpectrumProfile::Custom(f) => f(kappa),
        }
    }
}

impl fmt::Debug for SpectrumProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumProfile::PeakedQuartic { peak } => write!(f, "PeakedQuartic {{ peak: {peak} }}"),
            SpectrumProfile::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InitSpec {
    pub profile: SpectrumProfile,
    pub seed: u64,
    /// Total kinetic energy `E_h` of the generated field.
    pub energy: f64,
}

impl InitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            profile: SpectrumProfile::PeakedQuartic { peak: 10.0 },
            seed,
            energy: 0.5,
        }
    }
}

fn is_canonical(sx: i64, sy: i64) -> bool {
    sy > 0 || (sy == 0 && sx > 0)
}

/// Target energy per shell for the realizable modes of `grid`.
///
/// Nyquist lines are excluded, so shells are normalized over the modes that
/// actually receive energy.
pub fn shell_targets(grid: &StaggeredGrid, spec: &InitSpec) -> Vec<f64> {
    let n = grid.n();
    let shells = WavenumberShells::new(n);
    let mut populated = vec![false; shells.len()];
    for ky in 0..n {
        for kx in 0..n {
            if kx != n / 2 && ky != n / 2 && (kx, ky) != (0, 0) {
                populated[shells.shell_of(ky * n + kx)] = true;
            }
        }
    }
    let mut target: Vec<f64> = (0..shells.len())
        .map(|k| if populated[k] { spec.profile.eval(k as f64).max(0.0) } else { 0.0 })
        .collect();
    let total: f64 = target.iter().sum();
    if total > 0.0 {
        target.iter_mut().for_each(|e| *e *= spec.energy / total);
    }
    target
}

/// Random solenoidal field whose shell spectrum matches the profile.
///
/// Each mode pair `(k, -k)` gets magnitude `sqrt(2 N^4 E_kappa / |B_kappa|)`
/// (so shell energies are met exactly under the spectrum normalization), a
/// uniform random phase, and a direction obtained by projecting a random unit
/// vector orthogonally to the modified wavenumber `2 sin(theta / 2) / h`.
/// The half-cell phase of each face lattice is included, which makes the
/// field discretely solenoidal before the final projection. Randomness comes
/// from ChaCha20 seeded with `spec.seed`, drawn in FFT order over canonical
/// modes (`ky > 0`, or `ky = 0` and `kx > 0`): phase, then angle.
pub fn random_initial_condition(grid: StaggeredGrid, spec: &InitSpec) -> VelocityField {
    let n = grid.n();
    let h = grid.spacing();
    let ops = SpectralOps::new(grid);
    let shells = ops.shells();
    let target = shell_targets(&grid, spec);

    let mut members = vec![0usize; shells.len()];
    for ky in 0..n {
        for kx in 0..n {
            if kx != n / 2 && ky != n / 2 && (kx, ky) != (0, 0) {
                members[shells.shell_of(ky * n + kx)] += 1;
            }
        }
    }

    let n4 = (n as f64).powi(4);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut s = SpectralField::zeros(grid);
    for ky in 0..n {
        for kx in 0..n {
            if kx == n / 2 || ky == n / 2 {
                continue;
            }
            let (sx, sy) = (signed_wavenumber(kx, n), signed_wavenumber(ky, n));
            if !is_canonical(sx, sy) {
                continue;
            }
            let tau: f64 = rng.random();
            let angle: f64 = rng.random_range(0.0..2.0 * PI);
            let k = ky * n + kx;
            let shell = shells.shell_of(k);
            if target[shell] == 0.0 {
                continue;
            }
            let mag = (2.0 * n4 * target[shell] / members[shell] as f64).sqrt();

            let tx = 2.0 * PI * kx as f64 / n as f64;
            let ty = 2.0 * PI * ky as f64 / n as f64;
            let mx = 2.0 * (0.5 * tx).sin() / h;
            let my = 2.0 * (0.5 * ty).sin() / h;
            let (ex, ey) = (angle.cos(), angle.sin());
            let m2 = mx * mx + my * my;
            let dot = (mx * ex + my * ey) / m2;
            let (mut px, mut py) = (ex - dot * mx, ey - dot * my);
            let pn = (px * px + py * py).sqrt();
            if pn < 1e-12 {
                (px, py) = (-my / m2.sqrt(), mx / m2.sqrt());
            } else {
                px /= pn;
                py /= pn;
            }
            let a = Complex64::from_polar(mag, 2.0 * PI * tau);
            let uh = a * px * Complex64::from_polar(1.0, 0.5 * tx);
            let vh = a * py * Complex64::from_polar(1.0, 0.5 * ty);
            let kc = crate::spectral::conjugate_index(n, kx, ky);
            s.component_mut(0)[k] = uh;
            s.component_mut(1)[k] = vh;
            s.component_mut(0)[kc] = uh.conj();
            s.component_mut(1)[kc] = vh.conj();
        }
    }
    let w = ops.inverse(&s).expect("spectrum built conjugate-symmetric");
    project(&w)
}

/// Integer fine-to-coarse ratio, checked.
pub fn coarsening_ratio(fine: &StaggeredGrid, coarse: &StaggeredGrid) -> Result<usize> {
    let (nf, nc) = (fine.n(), coarse.n());
    if nc == 0 || nf % nc != 0 || (fine.length() - coarse.length()).abs() > 1e-12 * fine.length() {
        return Err(Error::RatioMismatch { fine: nf, coarse: nc });
    }
    Ok(nf / nc)
}

/// Average the `r` fine faces lying on each coarse face.
///
/// Coarse `u[I, J]` (right face of coarse cell `I`) collects fine
/// `u[(I + 1) r - 1, J r + m]` for `m < r`; `v` likewise with axes swapped.
/// Fluxes telescope across coarse cells, so solenoidal fields stay solenoidal.
pub fn face_average(fine: &VelocityField, ratio: usize) -> Result<VelocityField> {
    let fg = *fine.grid();
    let nf = fg.n();
    if ratio == 0 || nf % ratio != 0 || nf / ratio < StaggeredGrid::MIN_CELLS {
        return Err(Error::RatioMismatch {
            fine: nf,
            coarse: if ratio == 0 { 0 } else { nf / ratio },
        });
    }
    if ratio == 1 {
        return Ok(fine.clone());
    }
    let nc = nf / ratio;
    let cg = StaggeredGrid::with_length(nc, fg.length())?;
    let mut out = VelocityField::zeros(cg);
    let inv = 1.0 / ratio as f64;
    for jc in 0..nc {
        for ic in 0..nc {
            let (mut su, mut sv) = (0.0, 0.0);
            for m in 0..ratio {
                su += fine.u()[fg.idx((ic + 1) * ratio - 1, jc * ratio + m)];
                sv += fine.v()[fg.idx(ic * ratio + m, (jc + 1) * ratio - 1)];
            }
            let k = cg.idx(ic, jc);
            out.u_mut()[k] = su * inv;
            out.v_mut()[k] = sv * inv;
        }
    }
    Ok(out)
}

/// Decaying turbulence at `Re = 4e4`: no forcing, `dt = 5e-4`, `T = 10`,
/// grids 512 / 128.
pub fn decaying_setup(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seeds = vec![seed];
    cfg.solver.forcing = ForcingConfig::None;
    cfg
}

/// Kolmogorov flow: the decaying setup plus `f_x = 0.65 sin(8 pi y)`.
pub fn kolmogorov_setup(seed: u64) -> RunConfig {
    let mut cfg = decaying_setup(seed);
    cfg.solver.forcing = ForcingConfig::Kolmogorov {
        amplitude: 0.65,
        wavenumber: 4,
    };
    cfg
}
