//! Fourier-space machinery on the periodic staggered grid.
//!
//! Convention: the forward transform is unnormalized,
//! `X[k] = sum_x x[x] exp(-2 pi i k.x / N)`, and the inverse divides by `N^2`.
//! Coefficients are stored in standard FFT ordering, row index `ky`, column
//! index `kx`, so mode `(0, 0)` sits at index 0 and negative wavenumbers
//! occupy the upper half of each axis. With unit domain length the index
//! wavenumbers are the physical ones. Each velocity component is transformed
//! on its own face lattice; the half-cell staggering only contributes a phase
//! and leaves the 5-point Laplacian eigenvectors (plain Fourier modes) intact.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::filters::SpectralFilter;
use crate::grid::{PressureField, StaggeredGrid, VelocityField};

/// Signed integer wavenumber for FFT index `idx` on an axis of length `n`.
#[inline]
pub fn signed_wavenumber(idx: usize, n: usize) -> i64 {
    if idx < n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Index of the mode `-k` for the mode stored at `(kx_idx, ky_idx)`.
#[inline]
pub fn conjugate_index(n: usize, kx_idx: usize, ky_idx: usize) -> usize {
    ((n - ky_idx) % n) * n + (n - kx_idx) % n
}

/// Eigenvalue of the periodic 5-point Laplacian for every mode, FFT ordering.
pub fn laplacian_symbol(grid: &StaggeredGrid) -> Vec<f64> {
    let n = grid.n();
    let h2 = grid.spacing() * grid.spacing();
    let axis: Vec<f64> = (0..n)
        .map(|k| 2.0 * (2.0 * PI * k as f64 / n as f64).cos() - 2.0)
        .collect();
    let mut out = vec![0.0; n * n];
    for ky in 0..n {
        for kx in 0..n {
            out[ky * n + kx] = (axis[kx] + axis[ky]) / h2;
        }
    }
    out
}

/// Immutable 2D FFT plan; shareable across threads.
#[derive(Clone)]
pub struct FftPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("n", &self.n).finish()
    }
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// In-place unnormalized forward transform of an `n x n` row-major array.
    pub fn forward_inplace(&self, data: &mut [Complex64]) {
        self.transform(&self.forward, data);
    }

    /// In-place inverse transform, normalized by `1 / n^2`.
    pub fn inverse_inplace(&self, data: &mut [Complex64]) {
        self.transform(&self.inverse, data);
        let s = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }

    fn transform(&self, fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n * self.n, "FFT buffer has wrong length");
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        transpose_square(data, self.n);
        fft.process_with_scratch(data, &mut scratch);
        transpose_square(data, self.n);
    }

    pub fn forward_real(&self, real: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = real.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward_inplace(&mut buf);
        buf
    }
}

fn transpose_square(data: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// Fourier coefficients of both velocity components.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: StaggeredGrid,
    components: [Vec<Complex64>; 2],
}

impl SpectralField {
    pub fn zeros(grid: StaggeredGrid) -> Self {
        let m = grid.cells();
        Self {
            grid,
            components: [vec![Complex64::default(); m], vec![Complex64::default(); m]],
        }
    }

    pub fn from_components(grid: StaggeredGrid, u: Vec<Complex64>, v: Vec<Complex64>) -> Result<Self> {
        if u.len() != grid.cells() || v.len() != grid.cells() {
            return Err(Error::ShapeMismatch(format!(
                "spectral components have {} and {} entries, grid needs {}",
                u.len(),
                v.len(),
                grid.cells()
            )));
        }
        Ok(Self {
            grid,
            components: [u, v],
        })
    }

    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.components[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.components[c]
    }

    /// Largest violation of `X(-k) = conj(X(k))` over both components.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.n();
        let mut worst: f64 = 0.0;
        for comp in &self.components {
            for ky in 0..n {
                for kx in 0..n {
                    let a = comp[ky * n + kx];
                    let b = comp[conjugate_index(n, kx, ky)];
                    worst = worst.max((a - b.conj()).norm());
                }
            }
        }
        worst
    }

    fn max_norm(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, z| m.max(z.norm()))
    }
}

/// Modes grouped into integer shells `kappa - 1/2 < |k| < kappa + 1/2`.
#[derive(Clone, Debug)]
pub struct WavenumberShells {
    n: usize,
    shell_of: Vec<usize>,
    populations: Vec<usize>,
}

impl WavenumberShells {
    pub fn new(n: usize) -> Self {
        let mut shell_of = vec![0; n * n];
        for ky in 0..n {
            for kx in 0..n {
                let (sx, sy) = (signed_wavenumber(kx, n), signed_wavenumber(ky, n));
                let mag = ((sx * sx + sy * sy) as f64).sqrt();
                // |k|^2 is an integer, so |k| never lands on a half-integer.
                shell_of[ky * n + kx] = (mag + 0.5).floor() as usize;
            }
        }
        let count = shell_of.iter().max().map_or(1, |m| m + 1);
        let mut populations = vec![0; count];
        for &s in &shell_of {
            populations[s] += 1;
        }
        Self {
            n,
            shell_of,
            populations,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of shells, `K + 1` (shell 0 holds only the mean mode).
    pub fn len(&self) -> usize {
        self.populations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.populations.is_empty()
    }

    #[inline]
    pub fn shell_of(&self, mode: usize) -> usize {
        self.shell_of[mode]
    }

    /// `|B_kappa|` per shell.
    pub fn populations(&self) -> &[usize] {
        &self.populations
    }
}

/// Transforms, Poisson solver and diagonal operators for one grid.
///
/// Construct once and reuse; all methods take `&self`.
#[derive(Clone, Debug)]
pub struct SpectralOps {
    grid: StaggeredGrid,
    plan: FftPlan,
    lap_symbol: Vec<f64>,
    shells: WavenumberShells,
}

impl SpectralOps {
    pub fn new(grid: StaggeredGrid) -> Self {
        Self {
            grid,
            plan: FftPlan::new(grid.n()),
            lap_symbol: laplacian_symbol(&grid),
            shells: WavenumberShells::new(grid.n()),
        }
    }

    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    pub fn plan(&self) -> &FftPlan {
        &self.plan
    }

    pub fn shells(&self) -> &WavenumberShells {
        &self.shells
    }

    pub fn laplacian_symbol(&self) -> &[f64] {
        &self.lap_symbol
    }

    /// Forward transform of both velocity components.
    pub fn forward(&self, field: &VelocityField) -> Result<SpectralField> {
        self.grid.check_same(field.grid())?;
        let mut z = self.pack(field);
        self.plan.forward_inplace(&mut z);
        let (u, v) = self.unpack(&z);
        SpectralField::from_components(self.grid, u, v)
    }

    /// Inverse transform; rejects spectra that are not conjugate-symmetric.
    pub fn inverse(&self, s: &SpectralField) -> Result<VelocityField> {
        self.grid.check_same(s.grid())?;
        let defect = s.hermitian_defect();
        if defect > 1e-9 * s.max_norm().max(1.0) {
            return Err(Error::NonHermitianInput(defect));
        }
        let mut z: Vec<Complex64> = s.components[0]
            .iter()
            .zip(&s.components[1])
            .map(|(&a, &b)| a + Complex64::i() * b)
            .collect();
        self.plan.inverse_inplace(&mut z);
        Ok(self.unpack_real(&z))
    }

    /// Solve the 5-point Poisson problem `L p = rhs` for zero-mean `p`.
    pub fn poisson_solve(&self, rhs: &PressureField) -> Result<PressureField> {
        self.grid.check_same(rhs.grid())?;
        let scale = rhs.max_abs();
        let mean = rhs.mean();
        if mean.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
            return Err(Error::NonZeroMeanRhs(mean));
        }
        let mut p = PressureField::zeros(self.grid);
        self.poisson_into(rhs.values(), p.values_mut());
        Ok(p)
    }

    /// Unchecked Poisson solve used on the projection hot path.
    pub(crate) fn poisson_into(&self, rhs: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex64> = rhs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.plan.forward_inplace(&mut buf);
        buf[0] = Complex64::default();
        for (z, &lam) in buf.iter_mut().zip(&self.lap_symbol).skip(1) {
            *z /= lam;
        }
        self.plan.inverse_inplace(&mut buf);
        out.iter_mut().zip(&buf).for_each(|(o, z)| *o = z.re);
    }

    /// `inverse(gain .* forward(w))`, per component.
    pub fn apply_diagonal(&self, filter: &SpectralFilter, w: &VelocityField) -> Result<VelocityField> {
        self.grid.check_same(filter.grid())?;
        self.grid.check_same(w.grid())?;
        Ok(self.apply_gains(filter.gains(0), filter.gains(1), w))
    }

    /// Hermitian-symmetric gains are assumed; both components share a
    /// single complex transform (`u + i v`).
    pub(crate) fn apply_gains(
        &self,
        gain_u: &[Complex64],
        gain_v: &[Complex64],
        w: &VelocityField,
    ) -> VelocityField {
        let n = self.grid.n();
        let mut z = self.pack(w);
        self.plan.forward_inplace(&mut z);
        let mut out = vec![Complex64::default(); z.len()];
        let i = Complex64::i();
        for ky in 0..n {
            for kx in 0..n {
                let k = ky * n + kx;
                let zc = z[conjugate_index(n, kx, ky)].conj();
                let uh = 0.5 * (z[k] + zc);
                let vh = -0.5 * i * (z[k] - zc);
                out[k] = gain_u[k] * uh + i * gain_v[k] * vh;
            }
        }
        self.plan.inverse_inplace(&mut out);
        self.unpack_real(&out)
    }

    /// Shell-binned kinetic energy spectrum normalized so that the shells sum
    /// to the discrete energy `h^2 / (2 |Omega|) ||u||^2`.
    pub fn energy_spectrum(&self, field: &VelocityField) -> Result<Vec<f64>> {
        let s = self.forward(field)?;
        let m = self.grid.cells() as f64;
        let h = self.grid.spacing();
        let norm = h * h / (2.0 * self.grid.area() * m);
        let mut out = vec![0.0; self.shells.len()];
        for k in 0..self.grid.cells() {
            out[self.shells.shell_of(k)] += norm * (s.components[0][k].norm_sqr() + s.components[1][k].norm_sqr());
        }
        Ok(out)
    }

    fn pack(&self, field: &VelocityField) -> Vec<Complex64> {
        field
            .u()
            .iter()
            .zip(field.v())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect()
    }

    fn unpack(&self, z: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.grid.n();
        let mut u = vec![Complex64::default(); z.len()];
        let mut v = vec![Complex64::default(); z.len()];
        for ky in 0..n {
            for kx in 0..n {
                let k = ky * n + kx;
                let zc = z[conjugate_index(n, kx, ky)].conj();
                u[k] = 0.5 * (z[k] + zc);
                v[k] = -0.5 * Complex64::i() * (z[k] - zc);
            }
        }
        (u, v)
    }

    fn unpack_real(&self, z: &[Complex64]) -> VelocityField {
        let u = z.iter().map(|c| c.re).collect();
        let v = z.iter().map(|c| c.im).collect();
        VelocityField::from_components(self.grid, u, v).expect("buffer sized from grid")
    }
}

/// Whether component `c` of a solenoidal field can be nonzero at `mode`.
/// Discrete incompressibility forces `u_hat = 0` on `ky = 0, kx != 0` and
/// `v_hat = 0` on `kx = 0, ky != 0`.
pub fn carries_component(n: usize, mode: usize, c: usize) -> bool {
    let (kx, ky) = (mode % n, mode / n);
    match c {
        0 => !(ky == 0 && kx != 0),
        _ => !(kx == 0 && ky != 0),
    }
}

/// Mean `|gain|` over the modes of each shell, per component:
/// `out[kappa] = [mean_u, mean_v]`. Modes where the component is forced to
/// zero by incompressibility are left out; their gain never acts on data.
pub fn shell_averaged_gain(filter: &SpectralFilter) -> Vec<[f64; 2]> {
    let n = filter.grid().n();
    let shells = WavenumberShells::new(n);
    let mut sums = vec![[0.0; 2]; shells.len()];
    let mut counts = vec![[0usize; 2]; shells.len()];
    for c in 0..2 {
        for (k, g) in filter.gains(c).iter().enumerate() {
            if carries_component(n, k, c) {
                let s = shells.shell_of(k);
                sums[s][c] += g.norm();
                counts[s][c] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, m)| [s[0] / m[0].max(1) as f64, s[1] / m[1].max(1) as f64])
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::filters::{differential_filter, SpectralFilter};
    use crate::grid::laplacian_into;

    fn random_velocity(grid: StaggeredGrid, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = grid.cells();
        let u = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        VelocityField::from_components(grid, u, v).unwrap()
    }

    #[test]
    fn forward_of_zero_and_constant() {
        let g = StaggeredGrid::new(8).unwrap();
        let ops = SpectralOps::new(g);
        let s = ops.forward(&VelocityField::zeros(g)).unwrap();
        assert!(s.component(0).iter().all(|z| z.norm() == 0.0));
        let c = VelocityField::from_fn(g, |_, _| 2.5, |_, _| -1.0);
        let s = ops.forward(&c).unwrap();
        assert!((s.component(0)[0].re - 2.5 * 64.0).abs() < 1e-12);
        assert!((s.component(1)[0].re + 64.0).abs() < 1e-12);
        for k in 1..64 {
            assert!(s.component(0)[k].norm() < 1e-12);
            assert!(s.component(1)[k].norm() < 1e-12);
        }
    }

    #[test]
    fn packed_transform_matches_separate_transforms() {
        let g = StaggeredGrid::new(8).unwrap();
        let ops = SpectralOps::new(g);
        let w = random_velocity(g, 5);
        let s = ops.forward(&w).unwrap();
        let u_hat = ops.plan().forward_real(w.u());
        let v_hat = ops.plan().forward_real(w.v());
        for k in 0..64 {
            assert!((s.component(0)[k] - u_hat[k]).norm() < 1e-12);
            assert!((s.component(1)[k] - v_hat[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip() {
        let g = StaggeredGrid::new(16).unwrap();
        let ops = SpectralOps::new(g);
        let w = random_velocity(g, 9);
        let back = ops.inverse(&ops.forward(&w).unwrap()).unwrap();
        let err = (&back - &w).max_abs();
        assert!(err <= 1e-12 * w.max_abs());
    }

    #[test]
    fn inverse_of_cosine_pair_and_rejects_asymmetric() {
        let n = 8;
        let g = StaggeredGrid::new(n).unwrap();
        let ops = SpectralOps::new(g);
        let mut s = SpectralField::zeros(g);
        let k = 3; // mode (kx = 3, ky = 0)
        s.component_mut(0)[k] = Complex64::new(32.0, 0.0);
        s.component_mut(0)[n - k] = Complex64::new(32.0, 0.0);
        let w = ops.inverse(&s).unwrap();
        for j in 0..n {
            for i in 0..n {
                let expected = (2.0 * PI * (k * i) as f64 / n as f64).cos();
                assert!((w.u()[g.idx(i, j)] - expected).abs() < 1e-12);
            }
        }
        s.component_mut(0)[n - k] = Complex64::new(0.0, 5.0);
        assert!(matches!(ops.inverse(&s), Err(Error::NonHermitianInput(_))));
        let z = ops.inverse(&SpectralField::zeros(g)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn poisson_eigenmode_and_residual() {
        let g = StaggeredGrid::new(32).unwrap();
        let ops = SpectralOps::new(g);
        let h = g.spacing();
        let lam = (2.0 * (2.0 * PI * h).cos() - 2.0) / (h * h);
        let p = PressureField::from_fn(g, |x, _| (2.0 * PI * x).sin());
        let rhs = PressureField::from_values(g, p.values().iter().map(|x| lam * x).collect()).unwrap();
        let sol = ops.poisson_solve(&rhs).unwrap();
        for (a, b) in sol.values().iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero = ops.poisson_solve(&PressureField::zeros(g)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vals: Vec<f64> = (0..g.cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter_mut().for_each(|x| *x -= mean);
        let rhs = PressureField::from_values(g, vals).unwrap();
        let sol = ops.poisson_solve(&rhs).unwrap();
        let mut lap = vec![0.0; g.cells()];
        laplacian_into(&g, sol.values(), &mut lap);
        let resid = lap.iter().zip(rhs.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(resid <= 1e-10, "residual {resid}");
        assert!(sol.mean().abs() < 1e-14);
    }

    #[test]
    fn poisson_rejects_nonzero_mean() {
        let g = StaggeredGrid::new(8).unwrap();
        let ops = SpectralOps::new(g);
        let rhs = PressureField::from_fn(g, |_, _| 1.0);
        assert!(matches!(ops.poisson_solve(&rhs), Err(Error::NonZeroMeanRhs(_))));
    }

    #[test]
    fn diagonal_identity_and_dc_only() {
        let g = StaggeredGrid::new(16).unwrap();
        let ops = SpectralOps::new(g);
        let w = random_velocity(g, 3);
        let id = SpectralFilter::identity(g);
        let out = ops.apply_diagonal(&id, &w).unwrap();
        assert!((&out - &w).max_abs() < 1e-12);

        let mut dc = SpectralFilter::identity(g);
        for c in 0..2 {
            dc.gains_mut(c).iter_mut().skip(1).for_each(|z| *z = Complex64::default());
        }
        let out = ops.apply_diagonal(&dc, &w).unwrap();
        let (mu, mv) = w.mean();
        assert!(out.u().iter().all(|x| (x - mu).abs() < 1e-12));
        assert!(out.v().iter().all(|x| (x - mv).abs() < 1e-12));
    }

    #[test]
    fn diagonal_rejects_grid_mismatch() {
        let ops = SpectralOps::new(StaggeredGrid::new(8).unwrap());
        let f = SpectralFilter::identity(StaggeredGrid::new(16).unwrap());
        let w = VelocityField::zeros(StaggeredGrid::new(8).unwrap());
        assert!(matches!(ops.apply_diagonal(&f, &w), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn spectrum_parseval_and_single_mode() {
        let g = StaggeredGrid::new(32).unwrap();
        let ops = SpectralOps::new(g);
        let w = random_velocity(g, 4);
        let spec = ops.energy_spectrum(&w).unwrap();
        let energy = g.spacing().powi(2) / (2.0 * g.area()) * w.norm_sq();
        let total: f64 = spec.iter().sum();
        assert!((total - energy).abs() <= 1e-10 * energy);

        let single = VelocityField::from_fn(g, |_, y| (2.0 * PI * 5.0 * y).sin(), |_, _| 0.0);
        let spec = ops.energy_spectrum(&single).unwrap();
        let e = g.spacing().powi(2) / (2.0 * g.area()) * single.norm_sq();
        assert!((spec[5] - e).abs() < 1e-12);
        assert!(spec.iter().enumerate().all(|(k, s)| k == 5 || s.abs() < 1e-20));

        let zero = ops.energy_spectrum(&VelocityField::zeros(g)).unwrap();
        assert!(zero.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn shells_partition_modes() {
        for n in [8, 16, 17, 32] {
            let shells = WavenumberShells::new(n);
            assert_eq!(shells.populations().iter().sum::<usize>(), n * n);
            assert_eq!(shells.populations()[0], 1);
            // |k| = 1 and |k| = sqrt(2) both fall in shell 1.
            assert_eq!(shells.populations()[1], 8);
        }
    }

    #[test]
    fn shell_gain_of_identity_and_differential() {
        let g = StaggeredGrid::new(32).unwrap();
        let ones = shell_averaged_gain(&SpectralFilter::identity(g));
        assert!(ones.iter().all(|s| (s[0] - 1.0).abs() < 1e-15 && (s[1] - 1.0).abs() < 1e-15));

        let f = differential_filter(g, g.spacing());
        let gain = shell_averaged_gain(&f);
        assert!((gain[0][0] - 1.0).abs() < 1e-15);
        for k in 1..gain.len() {
            assert!(gain[k][0] < gain[k - 1][0], "shell {k} not decreasing");
            assert!((gain[k][0] - gain[k][1]).abs() < 1e-15);
        }
    }

    #[test]
    fn null_modes_do_not_dilute_shell_gain() {
        let g = StaggeredGrid::new(16).unwrap();
        let mut f = SpectralFilter::identity(g);
        for c in 0..2 {
            for (k, z) in f.gains_mut(c).iter_mut().enumerate() {
                if !carries_component(16, k, c) {
                    *z = Complex64::default();
                }
            }
        }
        assert!(shell_averaged_gain(&f).iter().all(|s| s[0] == 1.0 && s[1] == 1.0));
        // A solenoidal field is exactly zero on those modes.
        let w = crate::timestepper::project(&random_velocity(g, 4));
        let s = SpectralOps::new(g).forward(&w).unwrap();
        for c in 0..2 {
            for (k, z) in s.component(c).iter().enumerate() {
                if !carries_component(16, k, c) {
                    assert!(z.norm() < 1e-10, "component {c} mode {k}: {z}");
                }
            }
        }
    }
}
