//! Filter and relax steps: spectral filters, relaxation and the online
//! choice of the relaxation parameter.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{curl, relative_divergence, StaggeredGrid, VelocityField};
use crate::spectral::{conjugate_index, laplacian_symbol};
use crate::timestepper::Stepper;

/// Origin of a filter's gains, stored as a one-byte tag in filter files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Custom = 0,
    Differential = 1,
    Learned = 2,
}

impl Provenance {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Provenance::Custom),
            1 => Some(Provenance::Differential),
            2 => Some(Provenance::Learned),
            _ => None,
        }
    }
}

/// Per-component diagonal gains over all Fourier modes (FFT ordering).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFilter {
    grid: StaggeredGrid,
    gains: [Vec<Complex64>; 2],
    provenance: Provenance,
}

impl SpectralFilter {
    pub fn identity(grid: StaggeredGrid) -> Self {
        let one = vec![Complex64::new(1.0, 0.0); grid.cells()];
        Self {
            grid,
            gains: [one.clone(), one],
            provenance: Provenance::Custom,
        }
    }

    /// Build from explicit gains; rejects gains that would not map real
    /// fields to real fields.
    pub fn from_gains(
        grid: StaggeredGrid,
        gain_u: Vec<Complex64>,
        gain_v: Vec<Complex64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if gain_u.len() != grid.cells() || gain_v.len() != grid.cells() {
            return Err(Error::ShapeMismatch(format!(
                "filter gains have {} and {} entries, grid needs {}",
                gain_u.len(),
                gain_v.len(),
                grid.cells()
            )));
        }
        let f = Self {
            grid,
            gains: [gain_u, gain_v],
            provenance,
        };
        let defect = f.hermitian_defect();
        if defect > 1e-9 {
            return Err(Error::NonHermitianInput(defect));
        }
        Ok(f)
    }

    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn gains(&self, component: usize) -> &[Complex64] {
        &self.gains[component]
    }

    #[cfg(test)]
    pub(crate) fn gains_mut(&mut self, component: usize) -> &mut [Complex64] {
        &mut self.gains[component]
    }

    /// Largest `|gain(-k) - conj(gain(k))|` over both components.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n();
        let mut worst: f64 = 0.0;
        for g in &self.gains {
            for ky in 0..n {
                for kx in 0..n {
                    let a = g[ky * n + kx];
                    let b = g[conjugate_index(n, kx, ky)];
                    worst = worst.max((a - b.conj()).norm());
                }
            }
        }
        worst
    }

    /// Largest gain magnitude; above 1 the filter amplifies some mode.
    pub fn max_magnitude(&self) -> f64 {
        self.gains
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, z| m.max(z.norm()))
    }
}

/// Spectral form of the differential filter `(I - 2 delta^2 D) w_bar = w`:
/// real gains `1 / (1 - 2 delta^2 lambda_k)` with the 5-point eigenvalues.
pub fn differential_filter(grid: StaggeredGrid, delta: f64) -> SpectralFilter {
    assert!(delta >= 0.0, "filter radius must be nonnegative");
    let d2 = 2.0 * delta * delta;
    let gains: Vec<Complex64> = laplacian_symbol(&grid)
        .into_iter()
        .map(|lam| Complex64::new(1.0 / (1.0 - d2 * lam), 0.0))
        .collect();
    SpectralFilter {
        grid,
        gains: [gains.clone(), gains],
        provenance: Provenance::Differential,
    }
}

/// `(1 - chi) w + chi w_bar`; the extremes return the inputs exactly.
pub fn relax(w: &VelocityField, w_bar: &VelocityField, chi: f64) -> Result<VelocityField> {
    if !(0.0..=1.0).contains(&chi) {
        return Err(Error::ChiOutOfRange(chi));
    }
    w.grid().check_same(w_bar.grid())?;
    if chi == 0.0 {
        return Ok(w.clone());
    }
    if chi == 1.0 {
        return Ok(w_bar.clone());
    }
    let mut out = w.scaled(1.0 - chi);
    out.axpy(chi, w_bar);
    Ok(out)
}

/// Quadratic coefficients of `||w + chi (w_bar - w)||^2 - ||w||^2
/// = 2 chi b + chi^2 a` together with the admissible `chi`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChiBound {
    pub chi: f64,
    pub a: f64,
    pub b: f64,
}

/// Largest `chi` in `[0, 1]` with `||(1 - chi) w + chi w_bar|| <= ||w||`.
pub fn chi_bound(w: &[f64], w_bar: &[f64]) -> ChiBound {
    assert_eq!(w.len(), w_bar.len());
    let (mut a, mut b, mut ww, mut bb) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in w.iter().zip(w_bar) {
        let d = x - y;
        a += d * d;
        b += x * y - x * x;
        ww += x * x;
        bb += y * y;
    }
    let chi = if a == 0.0 || bb <= ww {
        1.0
    } else if b <= 0.0 {
        -2.0 * b / a
    } else {
        0.0
    };
    ChiBound { chi, a, b }
}

fn flat(w: &VelocityField) -> Vec<f64> {
    w.to_vec()
}

pub fn chi_energy(w: &VelocityField, w_bar: &VelocityField) -> Result<ChiBound> {
    w.grid().check_same(w_bar.grid())?;
    Ok(chi_bound(&flat(w), &flat(w_bar)))
}

/// Same rule applied to the corner vorticities `B w` and `B w_bar`.
pub fn chi_enstrophy(w: &VelocityField, w_bar: &VelocityField) -> Result<ChiBound> {
    w.grid().check_same(w_bar.grid())?;
    Ok(chi_bound(curl(w).values(), curl(w_bar).values()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RelaxPolicy {
    Fixed(f64),
    Energy,
    EnergyEnstrophy,
}

impl RelaxPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RelaxPolicy::Fixed(chi) if !(0.0..=1.0).contains(&chi) => Err(Error::ChiOutOfRange(chi)),
            _ => Ok(()),
        }
    }

    pub fn is_constrained(&self) -> bool {
        !matches!(self, RelaxPolicy::Fixed(_))
    }
}

/// What happened in one filter/relax step. Energies and enstrophies use the
/// global normalization `h^2 / (2 |Omega|)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub chi: f64,
    pub energy_terms: ChiBound,
    pub enstrophy_terms: Option<ChiBound>,
    pub energy_evolved: f64,
    pub energy_relaxed: f64,
    pub enstrophy_evolved: f64,
    pub enstrophy_relaxed: f64,
    /// Relative divergence of the relaxed state before any re-projection.
    pub divergence_drift: f64,
    pub reprojected: bool,
}

/// Pick `chi` under `policy`. Diagnostics carry the quadratic terms only.
pub fn chi_select(
    policy: RelaxPolicy,
    w: &VelocityField,
    w_bar: &VelocityField,
) -> Result<(f64, StepDiagnostics)> {
    policy.validate()?;
    let mut diag = StepDiagnostics::default();
    let chi = match policy {
        RelaxPolicy::Fixed(chi) => chi,
        RelaxPolicy::Energy => {
            diag.energy_terms = chi_energy(w, w_bar)?;
            diag.energy_terms.chi
        }
        RelaxPolicy::EnergyEnstrophy => {
            diag.energy_terms = chi_energy(w, w_bar)?;
            let z = chi_enstrophy(w, w_bar)?;
            diag.enstrophy_terms = Some(z);
            diag.energy_terms.chi.min(z.chi)
        }
    };
    diag.chi = chi;
    Ok((chi, diag))
}

/// Divergence drift above which a relaxed state is projected again.
pub const REPROJECT_THRESHOLD: f64 = 1e-10;

/// One evolve-filter-relax step. Without a filter this is a plain RK4 step.
pub fn efr_step(
    stepper: &mut Stepper,
    u: &VelocityField,
    filter: Option<&SpectralFilter>,
    policy: RelaxPolicy,
) -> Result<(VelocityField, StepDiagnostics)> {
    let w = stepper.rk4_step(u);
    let (mut next, mut diag) = match filter {
        None => (w.clone(), StepDiagnostics::default()),
        Some(f) => {
            let w_bar = stepper.ops().apply_diagonal(f, &w)?;
            let (chi, diag) = chi_select(policy, &w, &w_bar)?;
            (relax(&w, &w_bar, chi)?, diag)
        }
    };
    diag.divergence_drift = relative_divergence(&next);
    if diag.divergence_drift > REPROJECT_THRESHOLD {
        stepper.project_inplace(&mut next);
        diag.reprojected = true;
    }
    let g = *w.grid();
    let norm = g.spacing() * g.spacing() / (2.0 * g.area());
    diag.energy_evolved = norm * w.norm_sq();
    diag.energy_relaxed = norm * next.norm_sq();
    diag.enstrophy_evolved = norm * curl(&w).norm_sq();
    diag.enstrophy_relaxed = norm * curl(&next).norm_sq();
    Ok((next, diag))
}

/// Stepper bundled with an optional filter and a relax policy.
#[derive(Clone, Debug)]
pub struct EfrIntegrator {
    stepper: Stepper,
    filter: Option<Arc<SpectralFilter>>,
    policy: RelaxPolicy,
}

impl EfrIntegrator {
    pub fn new(stepper: Stepper, filter: Option<Arc<SpectralFilter>>, policy: RelaxPolicy) -> Result<Self> {
        policy.validate()?;
        if let Some(f) = &filter {
            stepper.grid().check_same(f.grid())?;
        }
        Ok(Self {
            stepper,
            filter,
            policy,
        })
    }

    pub fn stepper(&self) -> &Stepper {
        &self.stepper
    }

    pub fn stepper_mut(&mut self) -> &mut Stepper {
        &mut self.stepper
    }

    pub fn policy(&self) -> RelaxPolicy {
        self.policy
    }

    pub fn step(&mut self, u: &VelocityField) -> Result<(VelocityField, StepDiagnostics)> {
        efr_step(&mut self.stepper, u, self.filter.as_deref(), self.policy)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::divergence;
    use crate::sparse::solve_differential_filter;
    use crate::spectral::SpectralOps;
    use crate::timestepper::SolverParams;

    fn random_velocity(grid: StaggeredGrid, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = grid.cells();
        let u = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        VelocityField::from_components(grid, u, v).unwrap()
    }

    /// Largest chi on a 1e-4 grid keeping the squared norm from growing.
    fn scan_chi(w: &[f64], wb: &[f64]) -> f64 {
        let base: f64 = w.iter().map(|x| x * x).sum();
        let mut best = 0.0;
        for s in 0..=10_000 {
            let chi = s as f64 * 1e-4;
            let norm: f64 = w
                .iter()
                .zip(wb)
                .map(|(x, y)| {
                    let u = (1.0 - chi) * x + chi * y;
                    u * u
                })
                .sum();
            if norm <= base * (1.0 + 1e-14) {
                best = chi;
            }
        }
        best
    }

    #[test]
    fn differential_identity_at_zero_radius() {
        let g = StaggeredGrid::new(16).unwrap();
        let f = differential_filter(g, 0.0);
        assert!(f.gains(0).iter().all(|z| *z == Complex64::new(1.0, 0.0)));
        assert_eq!(f.provenance(), Provenance::Differential);
    }

    #[test]
    fn differential_matches_sparse_solve() {
        let g = StaggeredGrid::new(32).unwrap();
        let ops = SpectralOps::new(g);
        let w = random_velocity(g, 1);
        let h = g.spacing();
        let f = differential_filter(g, h);
        let spectral = ops.apply_diagonal(&f, &w).unwrap();
        let direct = solve_differential_filter(&g, h, &w.to_vec(), 1e-14);
        let diff = direct
            .iter()
            .zip(spectral.to_vec())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-10, "max difference {diff}");
    }

    #[test]
    fn differential_gains_bounded() {
        let g = StaggeredGrid::new(16).unwrap();
        for delta in [1e-4, 0.01, 0.3, 5.0] {
            let f = differential_filter(g, delta);
            assert_eq!(f.gains(0)[0].re, 1.0);
            assert!(f.gains(0).iter().all(|z| z.re > 0.0 && z.re <= 1.0 && z.im == 0.0));
        }
    }

    #[test]
    fn relax_extremes_and_midpoint() {
        let g = StaggeredGrid::new(4).unwrap();
        let w = random_velocity(g, 2);
        let wb = random_velocity(g, 3);
        assert_eq!(relax(&w, &wb, 0.0).unwrap(), w);
        assert_eq!(relax(&w, &wb, 1.0).unwrap(), wb);
        let two = VelocityField::from_fn(g, |_, _| 2.0, |_, _| 2.0);
        let mid = relax(&two, &VelocityField::zeros(g), 0.5).unwrap();
        assert!(mid.values().all(|x| x == 1.0));
        assert!(matches!(relax(&w, &wb, 1.5), Err(Error::ChiOutOfRange(_))));
        assert!(matches!(relax(&w, &wb, -0.1), Err(Error::ChiOutOfRange(_))));
    }

    #[test]
    fn chi_energy_cases() {
        let g = StaggeredGrid::new(8).unwrap();
        let w = random_velocity(g, 4);
        assert_eq!(chi_energy(&w, &w.scaled(0.5)).unwrap().chi, 1.0);
        assert_eq!(chi_energy(&w, &w.scaled(2.0)).unwrap().chi, 0.0);
        assert_eq!(chi_energy(&w, &w).unwrap().chi, 1.0);

        let toy = chi_bound(&[1.0, 0.0], &[0.0, 2.0]);
        assert_eq!(toy.a, 5.0);
        assert_eq!(toy.b, -1.0);
        assert!((toy.chi - 0.4).abs() < 1e-15);
        assert!((scan_chi(&[1.0, 0.0], &[0.0, 2.0]) - 0.4).abs() < 1.5e-4);
    }

    #[test]
    fn chi_bound_is_maximal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wb: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
            let b = chi_bound(&w, &wb);
            let scanned = scan_chi(&w, &wb);
            assert!((b.chi - scanned).abs() <= 1.5e-4, "{} vs {}", b.chi, scanned);
        }
    }

    #[test]
    fn chi_enstrophy_cases() {
        let g = StaggeredGrid::new(8).unwrap();
        let w = random_velocity(g, 5);
        assert_eq!(chi_enstrophy(&w, &w).unwrap().chi, 1.0);
        let smooth = SpectralOps::new(g)
            .apply_diagonal(&differential_filter(g, g.spacing()), &w)
            .unwrap();
        assert_eq!(chi_enstrophy(&w, &smooth).unwrap().chi, 1.0);

        // A filter that doubles the vorticity of a mixed field.
        let wb = &w.scaled(-0.2) + &w.shifted(1, 0).scaled(1.0);
        let z = chi_enstrophy(&w, &wb).unwrap();
        let scanned = scan_chi(curl(&w).values(), curl(&wb).values());
        assert!((z.chi - scanned).abs() <= 1.5e-4);
    }

    #[test]
    fn chi_select_policies() {
        let g = StaggeredGrid::new(8).unwrap();
        let w = random_velocity(g, 6);
        let wb = w.shifted(0, 1).scaled(1.05);
        assert_eq!(chi_select(RelaxPolicy::Fixed(0.3), &w, &wb).unwrap().0, 0.3);
        let (chi, d) = chi_select(RelaxPolicy::EnergyEnstrophy, &w, &wb).unwrap();
        let e = chi_energy(&w, &wb).unwrap().chi;
        let z = chi_enstrophy(&w, &wb).unwrap().chi;
        assert_eq!(chi, e.min(z));
        assert_eq!(d.enstrophy_terms.unwrap().chi, z);
        assert!(chi_select(RelaxPolicy::Fixed(2.0), &w, &wb).is_err());
    }

    #[test]
    fn efr_step_extremes() {
        let g = StaggeredGrid::new(16).unwrap();
        let params = SolverParams::new(1e-3, 1e-3);
        let mut s = Stepper::new(g, params.clone()).unwrap();
        let u = s.project(&random_velocity(g, 9));
        let plain = s.rk4_step(&u);

        let (none, _) = efr_step(&mut s, &u, None, RelaxPolicy::Fixed(0.0)).unwrap();
        assert_eq!(none, plain);

        let f = differential_filter(g, g.spacing());
        let (zero, _) = efr_step(&mut s, &u, Some(&f), RelaxPolicy::Fixed(0.0)).unwrap();
        assert_eq!(zero, plain);

        let (ef, d) = efr_step(&mut s, &u, Some(&f), RelaxPolicy::Fixed(1.0)).unwrap();
        let direct = s.ops().apply_diagonal(&f, &plain).unwrap();
        assert!((&ef - &direct).max_abs() < 1e-12);
        assert!(d.energy_relaxed <= d.energy_evolved);
    }

    #[test]
    fn constrained_steps_respect_bounds() {
        let g = StaggeredGrid::new(16).unwrap();
        let mut s = Stepper::new(g, SolverParams::new(1e-4, 1e-3)).unwrap();
        let mut u = s.project(&random_velocity(g, 10));
        // Amplifying, anisotropic filter: forces the constraints to bite.
        let mut f = SpectralFilter::identity(g);
        for z in f.gains_mut(0) {
            *z = Complex64::new(1.3, 0.0);
        }
        for z in f.gains_mut(1) {
            *z = Complex64::new(0.6, 0.0);
        }
        for _ in 0..10 {
            let (next, d) = efr_step(&mut s, &u, Some(&f), RelaxPolicy::EnergyEnstrophy).unwrap();
            let scale = d.energy_evolved.max(1.0);
            assert!(d.energy_relaxed <= d.energy_evolved + 1e-12 * scale);
            assert!(d.enstrophy_relaxed <= d.enstrophy_evolved + 1e-12 * d.enstrophy_evolved.max(1.0));
            assert!(divergence(&next).max_abs() <= 1e-10 * next.max_abs().max(1.0));
            u = next;
        }
    }
}
