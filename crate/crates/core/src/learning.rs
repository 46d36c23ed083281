//! Offline fit of a diagonal spectral filter from filtered fine-grid data.
//!
//! For each component and Fourier mode `i` the gain minimizing
//! `sum_n |f_i W_i^n - U_i^n|^2` is `sum conj(W) U / sum |W|^2`, where the
//! `U` columns are face-averaged fine states and the `W` columns one-step
//! coarse evolutions of the matching earlier states.

use serde::{Deserialize, Serialize};

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filters::{Provenance, SpectralFilter};
use crate::grid::{StaggeredGrid, VelocityField};
use crate::scenarios::{coarsening_ratio, face_average};
use crate::spectral::{SpectralField, SpectralOps};
use crate::timestepper::Stepper;

/// How `W` columns are produced from the fine trajectory.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// `W^n` is one coarse step from the filtered fine state at `t_n - dt`.
    #[default]
    SingleStep,
    /// `W^n` is `stride` coarse steps from the previous retained snapshot.
    Stride,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Length of the training window `[0, t_train]`.
    pub t_train: f64,
    /// Number of training initializations.
    pub i_train: usize,
    /// Retain one snapshot every `stride` steps.
    pub stride: usize,
    /// Training seeds are `seed_base, seed_base + 1, ...`.
    pub seed_base: u64,
    pub pairing: PairingMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            t_train: 3.0,
            i_train: 10,
            stride: 10,
            seed_base: 1000,
            pairing: PairingMode::SingleStep,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_train > 0.0) || self.i_train == 0 || self.stride == 0 {
            return Err(Error::Config(
                "training needs t_train > 0, i_train >= 1 and stride >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.i_train as u64).map(|j| self.seed_base + j).collect()
    }

    /// Step indices of the retained snapshots in `[0, t_train]`.
    pub fn retained_steps(&self, dt: f64) -> Vec<usize> {
        let last = (self.t_train / dt + 1e-9).floor() as usize;
        (0..=last).step_by(self.stride).collect()
    }
}

/// One retained fine-grid snapshot.
#[derive(Clone, Debug)]
pub struct DnsFrame {
    pub step: usize,
    pub time: f64,
    pub state: VelocityField,
    /// Fine state one step earlier, used by [`PairingMode::SingleStep`].
    pub predecessor: Option<VelocityField>,
}

#[derive(Clone, Debug)]
pub struct DnsTrajectory {
    pub seed: u64,
    pub frames: Vec<DnsFrame>,
}

/// Paired snapshot columns, kept in Fourier space.
#[derive(Clone, Debug)]
pub struct SnapshotMatrices {
    grid: StaggeredGrid,
    u_hat: Vec<SpectralField>,
    w_hat: Vec<SpectralField>,
    trajectory: Vec<usize>,
}

impl SnapshotMatrices {
    pub fn new(grid: StaggeredGrid) -> Self {
        Self {
            grid,
            u_hat: Vec::new(),
            w_hat: Vec::new(),
            trajectory: Vec::new(),
        }
    }

    /// Build from physical `(U, W)` column pairs.
    pub fn from_pairs(grid: StaggeredGrid, pairs: &[(VelocityField, VelocityField)]) -> Result<Self> {
        let ops = SpectralOps::new(grid);
        let mut s = Self::new(grid);
        for (u, w) in pairs {
            s.push(&ops, u, w, 0)?;
        }
        Ok(s)
    }

    fn push(&mut self, ops: &SpectralOps, u: &VelocityField, w: &VelocityField, trajectory: usize) -> Result<()> {
        if !u.is_finite() || !w.is_finite() {
            return Err(Error::ShapeMismatch("snapshot column contains non-finite values".into()));
        }
        self.u_hat.push(ops.forward(u)?);
        self.w_hat.push(ops.forward(w)?);
        self.trajectory.push(trajectory);
        Ok(())
    }

    pub fn grid(&self) -> &StaggeredGrid {
        &self.grid
    }

    pub fn columns(&self) -> usize {
        self.u_hat.len()
    }

    pub fn u_columns(&self) -> &[SpectralField] {
        &self.u_hat
    }

    pub fn w_columns(&self) -> &[SpectralField] {
        &self.w_hat
    }

    /// Source trajectory index of every column.
    pub fn trajectory_of(&self) -> &[usize] {
        &self.trajectory
    }
}

/// Face-average the fine trajectories and pair each retained state with a
/// coarse evolution of the matching earlier state. Pairs never cross
/// trajectories; every trajectory needs at least two retained frames.
pub fn assemble_snapshots(
    trajectories: &[DnsTrajectory],
    coarse: &mut Stepper,
    cfg: &TrainingConfig,
) -> Result<SnapshotMatrices> {
    cfg.validate()?;
    let cgrid = *coarse.grid();
    let ops = coarse.ops().clone();
    let mut out = SnapshotMatrices::new(cgrid);
    for (t, traj) in trajectories.iter().enumerate() {
        let frames = &traj.frames;
        if frames.len() < 2 {
            return Err(Error::InsufficientSnapshots {
                trajectory: t,
                found: frames.len(),
            });
        }
        let ratio = coarsening_ratio(frames[0].state.grid(), &cgrid)?;
        let mut prev_avg = face_average(&frames[0].state, ratio)?;
        for n in 1..frames.len() {
            let frame = &frames[n];
            let target = face_average(&frame.state, ratio)?;
            let evolved = match cfg.pairing {
                PairingMode::SingleStep => {
                    let start = match &frame.predecessor {
                        Some(p) => face_average(p, ratio)?,
                        None if frame.step == frames[n - 1].step + 1 => prev_avg.clone(),
                        None => {
                            return Err(Error::Config(format!(
                                "snapshot at t = {} has no predecessor state for single-step pairing",
                                frame.time
                            )))
                        }
                    };
                    coarse.rk4_step(&start)
                }
                PairingMode::Stride => {
                    let steps = frame.step.saturating_sub(frames[n - 1].step).max(1);
                    let mut w = prev_avg.clone();
                    for _ in 0..steps {
                        w = coarse.rk4_step(&w);
                    }
                    w
                }
            };
            out.push(&ops, &target, &evolved, t)?;
            prev_avg = target;
        }
    }
    Ok(out)
}

/// Denominators below this fraction of the largest one count as empty rows.
const EMPTY_ROW: f64 = 1e-24;

/// Closed-form per-mode least squares; modes without data get gain 0.
pub fn fit_filter(s: &SnapshotMatrices) -> Result<SpectralFilter> {
    if s.columns() == 0 {
        return Err(Error::EmptySnapshots);
    }
    let m = s.grid.cells();
    let mut gains: [Vec<Complex64>; 2] = [Vec::new(), Vec::new()];
    for (c, out) in gains.iter_mut().enumerate() {
        let mut num = vec![Complex64::default(); m];
        let mut den = vec![0.0; m];
        for (u, w) in s.u_hat.iter().zip(&s.w_hat) {
            let (uc, wc) = (u.component(c), w.component(c));
            for k in 0..m {
                num[k] += wc[k].conj() * uc[k];
                den[k] += wc[k].norm_sqr();
            }
        }
        let cut = EMPTY_ROW * den.iter().cloned().fold(0.0, f64::max);
        *out = num
            .iter()
            .zip(&den)
            .map(|(&a, &d)| if d > cut && d > 0.0 { a / d } else { Complex64::default() })
            .collect();
    }
    let [gu, gv] = gains;
    SpectralFilter::from_gains(s.grid, gu, gv, Provenance::Learned)
}

/// Frobenius loss `||F W - U||^2` summed over columns, in Fourier space.
///
/// With the unnormalized forward transform this is `N^2` times the same
/// loss evaluated in physical space.
pub fn training_residual(f: &SpectralFilter, s: &SnapshotMatrices) -> Result<f64> {
    if f.grid() != s.grid() {
        return Err(Error::ShapeMismatch(format!(
            "filter is for N={}, snapshots for N={}",
            f.grid().n(),
            s.grid().n()
        )));
    }
    let mut total = 0.0;
    for (u, w) in s.u_hat.iter().zip(&s.w_hat) {
        for c in 0..2 {
            let g = f.gains(c);
            total += u
                .component(c)
                .iter()
                .zip(w.component(c))
                .zip(g)
                .map(|((&uk, &wk), &gk)| (gk * wk - uk).norm_sqr())
                .sum::<f64>();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scenarios::{random_initial_condition, InitSpec};
    use crate::timestepper::SolverParams;

    fn random_velocity(grid: StaggeredGrid, rng: &mut ChaCha8Rng) -> VelocityField {
        let m = grid.cells();
        let u = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        VelocityField::from_components(grid, u, v).unwrap()
    }

    fn trajectory(stepper: &mut Stepper, seed: u64, frames: usize, stride: usize) -> DnsTrajectory {
        let g = *stepper.grid();
        let mut u = random_initial_condition(g, &InitSpec::new(seed));
        let dt = stepper.params().dt;
        let mut out = Vec::new();
        let mut step = 0;
        let mut prev = None;
        loop {
            if step % stride == 0 {
                out.push(DnsFrame {
                    step,
                    time: step as f64 * dt,
                    state: u.clone(),
                    predecessor: prev.clone(),
                });
                if out.len() == frames {
                    break;
                }
            }
            prev = Some(u.clone());
            u = stepper.rk4_step(&u);
            step += 1;
        }
        DnsTrajectory { seed, frames: out }
    }

    #[test]
    fn counts_pairs_per_trajectory() {
        let g = StaggeredGrid::new(16).unwrap();
        let mut s = Stepper::new(g, SolverParams::new(1e-3, 1e-3)).unwrap();
        let t = trajectory(&mut s, 1, 3, 2);
        let cfg = TrainingConfig {
            stride: 2,
            ..Default::default()
        };
        let m = assemble_snapshots(&[t.clone(), t], &mut s, &cfg).unwrap();
        assert_eq!(m.columns(), 4);
        assert_eq!(m.trajectory_of(), &[0, 0, 1, 1]);
    }

    #[test]
    fn rejects_short_trajectories_and_bad_ratio() {
        let g = StaggeredGrid::new(16).unwrap();
        let mut s = Stepper::new(g, SolverParams::new(1e-3, 1e-3)).unwrap();
        let t = trajectory(&mut s, 1, 1, 1);
        assert!(matches!(
            assemble_snapshots(&[t], &mut s, &TrainingConfig::default()),
            Err(Error::InsufficientSnapshots { trajectory: 0, found: 1 })
        ));
        let g12 = StaggeredGrid::new(12).unwrap();
        let mut s12 = Stepper::new(g12, SolverParams::new(1e-3, 1e-3)).unwrap();
        let t = trajectory(&mut s, 1, 2, 1);
        assert!(matches!(
            assemble_snapshots(&[t], &mut s12, &TrainingConfig::default()),
            Err(Error::RatioMismatch { .. })
        ));
    }

    #[test]
    fn self_consistent_data_gives_identity() {
        let g = StaggeredGrid::new(16).unwrap();
        let mut s = Stepper::new(g, SolverParams::new(1e-3, 1e-3)).unwrap();
        for (pairing, stride) in [(PairingMode::SingleStep, 3), (PairingMode::Stride, 3), (PairingMode::SingleStep, 1)] {
            let t = trajectory(&mut s, 4, 6, stride);
            let cfg = TrainingConfig {
                stride,
                pairing,
                ..Default::default()
            };
            let m = assemble_snapshots(&[t], &mut s, &cfg).unwrap();
            let f = fit_filter(&m).unwrap();
            for c in 0..2 {
                for (k, gk) in f.gains(c).iter().enumerate() {
                    // Modes with data are reproduced exactly; others are 0.
                    if gk.norm() > 0.0 {
                        assert!((gk - Complex64::new(1.0, 0.0)).norm() < 1e-8, "mode {k}: {gk}");
                    }
                }
            }
            // (kx, ky) = (0, 1) carries u, (1, 0) carries v.
            assert!(f.gains(0)[g.n()].norm() > 0.0 && f.gains(1)[1].norm() > 0.0);
        }
    }

    #[test]
    fn identity_and_scaled_fits() {
        let g = StaggeredGrid::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ws: Vec<VelocityField> = (0..4).map(|_| random_velocity(g, &mut rng)).collect();
        let same: Vec<_> = ws.iter().map(|w| (w.clone(), w.clone())).collect();
        let m = SnapshotMatrices::from_pairs(g, &same).unwrap();
        let f = fit_filter(&m).unwrap();
        assert!(f.gains(0).iter().chain(f.gains(1)).all(|z| (z - 1.0).norm() < 1e-12));
        assert!(training_residual(&SpectralFilter::identity(g), &m).unwrap() < 1e-20);

        let half: Vec<_> = ws.iter().map(|w| (w.scaled(0.5), w.clone())).collect();
        let f = fit_filter(&SnapshotMatrices::from_pairs(g, &half).unwrap()).unwrap();
        assert!(f.gains(0).iter().chain(f.gains(1)).all(|z| (z - 0.5).norm() < 1e-12));
        assert!(matches!(fit_filter(&SnapshotMatrices::new(g)), Err(Error::EmptySnapshots)));
    }

    #[test]
    fn fit_beats_identity_and_is_hermitian() {
        let g = StaggeredGrid::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<_> = (0..5)
            .map(|_| (random_velocity(g, &mut rng), random_velocity(g, &mut rng)))
            .collect();
        let m = SnapshotMatrices::from_pairs(g, &pairs).unwrap();
        let f = fit_filter(&m).unwrap();
        assert!(f.hermitian_defect() < 1e-12);
        let fitted = training_residual(&f, &m).unwrap();
        let ident = training_residual(&SpectralFilter::identity(g), &m).unwrap();
        assert!(fitted <= ident);

        // Fourier-space loss is N^2 times the physical one.
        let ops = SpectralOps::new(g);
        let phys: f64 = pairs
            .iter()
            .map(|(u, w)| (&ops.apply_diagonal(&f, w).unwrap() - u).norm_sq())
            .sum();
        let n2 = g.cells() as f64;
        assert!((fitted / n2 - phys).abs() <= 1e-10 * phys);
    }

    #[test]
    fn fit_invariant_to_order_and_scale() {
        let g = StaggeredGrid::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs: Vec<_> = (0..4)
            .map(|_| (random_velocity(g, &mut rng), random_velocity(g, &mut rng)))
            .collect();
        let f = fit_filter(&SnapshotMatrices::from_pairs(g, &pairs).unwrap()).unwrap();
        let mut rev = pairs.clone();
        rev.reverse();
        let fr = fit_filter(&SnapshotMatrices::from_pairs(g, &rev).unwrap()).unwrap();
        let scaled: Vec<_> = pairs.iter().map(|(u, w)| (u.scaled(3.0), w.scaled(3.0))).collect();
        let fs = fit_filter(&SnapshotMatrices::from_pairs(g, &scaled).unwrap()).unwrap();
        for c in 0..2 {
            for k in 0..g.cells() {
                assert!((f.gains(c)[k] - fr.gains(c)[k]).norm() < 1e-12);
                assert!((f.gains(c)[k] - fs.gains(c)[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_rejects_mismatched_grid() {
        let g = StaggeredGrid::new(8).unwrap();
        let m = SnapshotMatrices::new(g);
        let f = SpectralFilter::identity(StaggeredGrid::new(16).unwrap());
        assert!(matches!(training_residual(&f, &m), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn retained_steps_cover_window() {
        let cfg = TrainingConfig {
            t_train: 0.1,
            stride: 10,
            ..Default::default()
        };
        let steps = cfg.retained_steps(5e-4);
        assert_eq!(steps.first(), Some(&0));
        assert_eq!(steps.last(), Some(&200));
        assert_eq!(steps.len(), 21);
        assert_eq!(cfg.seeds().len(), 10);
    }
}
