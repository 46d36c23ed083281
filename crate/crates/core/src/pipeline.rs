//! End-to-end stages: reference DNS, filter learning, coarse simulation,
//! comparison and baseline tuning. Each stage works in memory and can
//! optionally persist its products under a directory.
//!
//! Directory layout per seed: `seed_<s>/series.csv`, `seed_<s>/spectra.json`,
//! optional `seed_<s>/snap_<step>.efrs` (and `pre_<step>.efrs` holding the
//! state one step earlier), and `seed_<s>/diagnostics.csv` for constrained
//! relax policies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};

use crate::config::{FilterSource, Method, RunConfig};
use crate::error::{Error, Result};
use crate::filters::{differential_filter, EfrIntegrator, SpectralFilter, StepDiagnostics};
use crate::grid::{StaggeredGrid, VelocityField};
use crate::io;
use crate::learning::{assemble_snapshots, fit_filter, training_residual, DnsFrame, DnsTrajectory, PairingMode};
use crate::metrics::{error_series, spectrum_error, ErrorReport, SpectrumSeries, TimeSeries};
use crate::scenarios::{face_average, random_initial_condition};
use crate::spectral::{shell_averaged_gain, SpectralOps};
use crate::timestepper::Stepper;
use crate::tuning::{enstrophy_loss, finite_diff_gd, TuneOutcome};

pub const SERIES_FILE: &str = "series.csv";
pub const SPECTRA_FILE: &str = "spectra.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

pub fn snapshot_name(step: usize) -> String {
    format!("snap_{step:08}.efrs")
}

pub fn predecessor_name(step: usize) -> String {
    format!("pre_{step:08}.efrs")
}

/// Run `f` for each seed on a pool of scoped worker threads. Results keep
/// seed order; the first error (in seed order) is returned.
pub fn for_each_seed<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(seeds.len());
    if workers <= 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = f(seeds[i]);
                *slots[i].lock().expect("worker panicked") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("worker panicked").expect("every slot is filled"))
        .collect()
}

/// Fine initial field for `seed` and its face average on the coarse grid.
pub fn initial_states(cfg: &RunConfig, seed: u64) -> Result<(VelocityField, VelocityField)> {
    let fine = random_initial_condition(cfg.fine_grid()?, &cfg.initial.spec(seed));
    let coarse = face_average(&fine, cfg.ratio())?;
    Ok((fine, coarse))
}

fn check_finite(u: &VelocityField, step: usize, dt: f64) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericalBlowup {
            step,
            last_valid_time: (step - 1) as f64 * dt,
        })
    }
}

/// What a DNS run keeps.
#[derive(Clone, Debug)]
pub struct DnsPlan {
    pub seed: u64,
    pub steps: usize,
    /// Keep (and write) a frame every this many steps.
    pub frame_every: Option<usize>,
    /// Keep the state one step before each frame.
    pub predecessors: bool,
    pub write_to: Option<PathBuf>,
}

/// Products of one DNS run. Frames and reference statistics are on the
/// coarse grid (face-averaged).
#[derive(Clone, Debug)]
pub struct DnsRun {
    pub seed: u64,
    pub reference: TimeSeries,
    pub spectra: SpectrumSeries,
    pub frames: Vec<DnsFrame>,
}

impl DnsRun {
    pub fn trajectory(&self) -> DnsTrajectory {
        DnsTrajectory {
            seed: self.seed,
            frames: self.frames.clone(),
        }
    }
}

/// Fine-grid run without regularization, sampled through the face average.
pub fn run_dns(cfg: &RunConfig, plan: &DnsPlan) -> Result<DnsRun> {
    let ratio = cfg.ratio();
    let dt = cfg.solver.dt;
    let coarse_ops = SpectralOps::new(cfg.coarse_grid()?);
    let mut stepper = Stepper::new(cfg.fine_grid()?, cfg.solver_params(false))?;
    let (mut u, _) = initial_states(cfg, plan.seed)?;
    let dir = plan.write_to.as_ref().map(|d| seed_dir(d, plan.seed));

    let mut run = DnsRun {
        seed: plan.seed,
        reference: TimeSeries::default(),
        spectra: SpectrumSeries::default(),
        frames: Vec::new(),
    };
    let mut prev: Option<VelocityField> = None;
    for step in 0..=plan.steps {
        if step > 0 {
            let next = stepper.rk4_step(&u);
            check_finite(&next, step, dt)?;
            prev = Some(std::mem::replace(&mut u, next));
        }
        let t = step as f64 * dt;
        let sample = step % cfg.output.sample_every == 0;
        let spectrum = step % cfg.output.spectrum_every == 0;
        let frame = plan.frame_every.is_some_and(|k| step % k == 0);
        if !(sample || spectrum || frame) {
            continue;
        }
        let avg = face_average(&u, ratio)?;
        if sample {
            run.reference.push(t, &avg, f64::NAN);
        }
        if spectrum {
            run.spectra.push(t, coarse_ops.energy_spectrum(&avg)?);
        }
        if frame {
            let pre = match (&prev, plan.predecessors) {
                (Some(p), true) => Some(p),
                _ => None,
            };
            if let Some(d) = &dir {
                io::write_snapshot(&d.join(snapshot_name(step)), &u, t, plan.seed)?;
                if let Some(p) = pre {
                    io::write_snapshot(&d.join(predecessor_name(step)), p, t - dt, plan.seed)?;
                }
            }
            run.frames.push(DnsFrame {
                step,
                time: t,
                state: avg,
                predecessor: pre.map(|p| face_average(p, ratio)).transpose()?,
            });
        }
    }
    if let Some(d) = &dir {
        io::write_timeseries(&d.join(SERIES_FILE), &run.reference)?;
        io::write_spectra(&d.join(SPECTRA_FILE), &run.spectra)?;
    }
    Ok(run)
}

/// DNS over the training window for every training seed, keeping frames.
pub fn training_dns(cfg: &RunConfig, write_to: Option<&Path>) -> Result<Vec<DnsRun>> {
    let tc = &cfg.training;
    let steps = *tc.retained_steps(cfg.solver.dt).last().expect("step 0 is always retained");
    for_each_seed(&tc.seeds(), |seed| {
        info!("training DNS seed {seed}: {steps} steps");
        run_dns(
            cfg,
            &DnsPlan {
                seed,
                steps,
                frame_every: Some(tc.stride),
                predecessors: tc.pairing == PairingMode::SingleStep,
                write_to: write_to.map(Path::to_path_buf),
            },
        )
    })
}

/// DNS over `[0, t_end]` for every test seed.
pub fn reference_dns(cfg: &RunConfig, write_to: Option<&Path>) -> Result<Vec<DnsRun>> {
    for_each_seed(&cfg.seeds, |seed| {
        info!("reference DNS seed {seed}: {} steps", cfg.steps());
        run_dns(
            cfg,
            &DnsPlan {
                seed,
                steps: cfg.steps(),
                frame_every: cfg.output.snapshots.then_some(cfg.training.stride),
                predecessors: false,
                write_to: write_to.map(Path::to_path_buf),
            },
        )
    })
}

fn parse_step(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.strip_suffix(".efrs")?.parse().ok()
}

/// Read `seed_*` directories of snapshot files, face-averaging each state to
/// the coarse grid as it is loaded.
pub fn load_trajectories(dir: &Path, cfg: &RunConfig) -> Result<Vec<DnsTrajectory>> {
    let cgrid = cfg.coarse_grid()?;
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut seeds: Vec<(u64, PathBuf)> = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name();
        if let Some(seed) = name.to_str().and_then(|s| s.strip_prefix("seed_")).and_then(|s| s.parse().ok()) {
            seeds.push((seed, e.path()));
        }
    }
    seeds.sort();
    if seeds.is_empty() {
        return Err(Error::format(dir, "no seed_* directories"));
    }
    let mut out = Vec::with_capacity(seeds.len());
    for (seed, path) in seeds {
        let mut steps: Vec<usize> = std::fs::read_dir(&path)
            .map_err(|e| Error::io(&path, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| parse_step(e.file_name().to_str()?, "snap_"))
            .collect();
        steps.sort_unstable();
        let mut frames = Vec::with_capacity(steps.len());
        for step in steps {
            let coarse = |p: &Path| -> Result<VelocityField> {
                let s = io::read_snapshot(p)?;
                let ratio = crate::scenarios::coarsening_ratio(s.field.grid(), &cgrid)?;
                face_average(&s.field, ratio)
            };
            let snap = io::read_snapshot(&path.join(snapshot_name(step)))?;
            let pre_path = path.join(predecessor_name(step));
            let predecessor = if pre_path.exists() { Some(coarse(&pre_path)?) } else { None };
            let ratio = crate::scenarios::coarsening_ratio(snap.field.grid(), &cgrid)?;
            frames.push(DnsFrame {
                step,
                time: snap.time,
                state: face_average(&snap.field, ratio)?,
                predecessor,
            });
        }
        out.push(DnsTrajectory { seed, frames });
    }
    Ok(out)
}

/// A fitted filter with its shell-averaged gain table.
#[derive(Clone, Debug)]
pub struct LearnedFilter {
    pub filter: SpectralFilter,
    /// Per shell, `[u, v]` mean gain magnitude.
    pub gains: Vec<[f64; 2]>,
    pub residual: f64,
    pub columns: usize,
    /// Shells where either component's mean gain exceeds 1.
    pub unstable_shells: Vec<usize>,
}

impl LearnedFilter {
    pub fn instability_warning(&self) -> Option<String> {
        if self.unstable_shells.is_empty() {
            return None;
        }
        Some(format!(
            "learned filter amplifies shells {:?} (gain > 1); unconstrained DD-EF may blow up, \
             consider an energy-constrained relax policy",
            self.unstable_shells
        ))
    }
}

pub fn learn_filter(cfg: &RunConfig, trajectories: &[DnsTrajectory]) -> Result<LearnedFilter> {
    let mut coarse = Stepper::new(cfg.coarse_grid()?, cfg.solver_params(false))?;
    let snaps = assemble_snapshots(trajectories, &mut coarse, &cfg.training)?;
    let filter = fit_filter(&snaps)?;
    let residual = training_residual(&filter, &snaps)?;
    let gains = shell_averaged_gain(&filter);
    let unstable_shells = gains
        .iter()
        .enumerate()
        .filter(|(_, g)| g[0] > 1.0 || g[1] > 1.0)
        .map(|(k, _)| k)
        .collect();
    let learned = LearnedFilter {
        filter,
        gains,
        residual,
        columns: snaps.columns(),
        unstable_shells,
    };
    if let Some(msg) = learned.instability_warning() {
        warn!("{msg}");
    }
    Ok(learned)
}

/// Filter required by `method` on the coarse grid, if any.
pub fn method_filter(method: &Method, coarse: &StaggeredGrid) -> Result<Option<Arc<SpectralFilter>>> {
    Ok(match method.filter_source(coarse) {
        FilterSource::None => None,
        FilterSource::Differential { delta } => Some(Arc::new(differential_filter(*coarse, delta))),
        FilterSource::File(path) => {
            if !path.is_file() {
                return Err(Error::FilterMissing(path));
            }
            let f = io::read_filter(&path)?;
            coarse.check_same(f.grid())?;
            Some(Arc::new(f))
        }
    })
}

/// One coarse simulation.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub seed: u64,
    pub series: TimeSeries,
    pub spectra: SpectrumSeries,
    /// Per-step diagnostics; `diagnostics[k]` produced step `k + 1`.
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Run `method` on the coarse grid from the face-averaged initial state.
pub fn simulate(
    cfg: &RunConfig,
    method: &Method,
    filter: Option<Arc<SpectralFilter>>,
    seed: u64,
    steps: usize,
    write_to: Option<&Path>,
) -> Result<SimRun> {
    method.validate()?;
    let dt = cfg.solver.dt;
    let params = cfg.solver_params(false).with_closure(method.closure());
    let has_filter = filter.is_some();
    let mut integ = EfrIntegrator::new(Stepper::new(cfg.coarse_grid()?, params)?, filter, method.policy())?;
    let ops = integ.stepper().ops().clone();
    let (_, mut u) = initial_states(cfg, seed)?;
    let dir = write_to.map(|d| seed_dir(d, seed));

    let mut run = SimRun {
        seed,
        series: TimeSeries::default(),
        spectra: SpectrumSeries::default(),
        diagnostics: Vec::with_capacity(steps),
    };
    let mut chi = f64::NAN;
    for step in 0..=steps {
        if step > 0 {
            let (next, diag) = integ.step(&u)?;
            check_finite(&next, step, dt)?;
            if has_filter {
                chi = diag.chi;
            }
            run.diagnostics.push(diag);
            u = next;
        }
        let t = step as f64 * dt;
        if step % cfg.output.sample_every == 0 {
            run.series.push(t, &u, chi);
        }
        if step % cfg.output.spectrum_every == 0 {
            run.spectra.push(t, ops.energy_spectrum(&u)?);
            if let (Some(d), true) = (&dir, cfg.output.snapshots) {
                io::write_snapshot(&d.join(snapshot_name(step)), &u, t, seed)?;
            }
        }
    }
    if let Some(d) = &dir {
        io::write_timeseries(&d.join(SERIES_FILE), &run.series)?;
        io::write_spectra(&d.join(SPECTRA_FILE), &run.spectra)?;
        if method.policy().is_constrained() {
            let times: Vec<f64> = (1..=steps).map(|k| k as f64 * dt).collect();
            io::write_diagnostics(&d.join(DIAGNOSTICS_FILE), &times, &run.diagnostics)?;
        }
    }
    Ok(run)
}

/// Simulate every test seed with the configured method.
pub fn simulate_all(cfg: &RunConfig, method: &Method, write_to: Option<&Path>) -> Result<Vec<SimRun>> {
    let filter = method_filter(method, &cfg.coarse_grid()?)?;
    for_each_seed(&cfg.seeds, |seed| {
        info!("{} seed {seed}: {} steps", method.name(), cfg.steps());
        simulate(cfg, method, filter.clone(), seed, cfg.steps(), write_to)
    })
}

/// Series and spectra of one seed, as compared by [`compare`].
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutput {
    pub series: TimeSeries,
    pub spectra: SpectrumSeries,
}

impl From<&SimRun> for SeedOutput {
    fn from(r: &SimRun) -> Self {
        Self {
            series: r.series.clone(),
            spectra: r.spectra.clone(),
        }
    }
}

impl From<&DnsRun> for SeedOutput {
    fn from(r: &DnsRun) -> Self {
        Self {
            series: r.reference.clone(),
            spectra: r.spectra.clone(),
        }
    }
}

/// Read every `seed_*` directory holding a series and spectra file.
pub fn load_outputs(dir: &Path) -> Result<BTreeMap<u64, SeedOutput>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let Some(seed) = e
            .file_name()
            .to_str()
            .and_then(|s| s.strip_prefix("seed_"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        let p = e.path();
        out.insert(
            seed,
            SeedOutput {
                series: io::read_timeseries(&p.join(SERIES_FILE))?,
                spectra: io::read_spectra(&p.join(SPECTRA_FILE))?,
            },
        );
    }
    if out.is_empty() {
        return Err(Error::format(dir, "no seed_* outputs"));
    }
    Ok(out)
}

/// Error report of one method against the reference over `[0, horizon]`,
/// with spectrum errors over shells `1..=k_max`.
pub fn compare(
    method: &str,
    runs: &BTreeMap<u64, SeedOutput>,
    refs: &BTreeMap<u64, SeedOutput>,
    horizon: f64,
    k_max: usize,
) -> Result<ErrorReport> {
    let mut report = ErrorReport {
        method: method.to_string(),
        ..Default::default()
    };
    for (&seed, run) in runs {
        let r = refs.get(&seed).ok_or(Error::MissingReference(seed))?;
        let (ee, ez) = error_series(&run.series, &r.series, horizon)?;
        let es = spectrum_error(&run.spectra, &r.spectra, horizon, k_max, true)?;
        report.seeds.push(seed);
        report.err_energy.push(ee);
        report.err_enstrophy.push(ez);
        report.err_spectrum.push(es.value);
        report.skipped_shells += es.skipped;
    }
    report.finalize();
    Ok(report)
}

/// Tune the configured baseline parameter against training references: the
/// loss is the enstrophy error over `(0, t_train]` on the training seeds.
pub fn tune(cfg: &RunConfig, refs: &BTreeMap<u64, TimeSeries>) -> Result<TuneOutcome> {
    let tc = cfg.tune.resolve(&cfg.solver);
    let horizon = cfg.training.t_train;
    let steps = (horizon / cfg.solver.dt + 1e-9).floor() as usize;
    let coarse = cfg.coarse_grid()?;
    let seeds: Vec<u64> = refs.keys().copied().collect();
    finite_diff_gd(&tc, |alpha| {
        let method = cfg.tune.target.method(alpha);
        let filter = method_filter(&method, &coarse)?;
        let runs = for_each_seed(&seeds, |seed| {
            simulate(cfg, &method, filter.clone(), seed, steps, None).map(|r| (seed, r.series))
        })?;
        let loss = enstrophy_loss(&runs, refs, horizon)?;
        info!("tune {:?}: alpha = {alpha:.6e}, loss = {loss:.6e}", cfg.tune.target);
        Ok(loss)
    })
}
