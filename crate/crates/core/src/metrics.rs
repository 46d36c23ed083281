//! Global energy and enstrophy, time series, and the error functionals used
//! to compare runs against filtered reference data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{curl, VelocityField};

/// `E_h = h^2 / (2 |Omega|) ||u||^2`.
pub fn energy(u: &VelocityField) -> f64 {
    let g = u.grid();
    g.spacing() * g.spacing() / (2.0 * g.area()) * u.norm_sq()
}

/// `Z_h = h^2 / (2 |Omega|) ||B u||^2` with the corner curl.
pub fn enstrophy(u: &VelocityField) -> f64 {
    let g = u.grid();
    g.spacing() * g.spacing() / (2.0 * g.area()) * curl(u).norm_sq()
}

/// Sampled global quantities of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub enstrophy: Vec<f64>,
    /// Relaxation parameter of the step that produced each sample (NaN when
    /// no filter step happened yet).
    pub chi: Vec<f64>,
}

impl TimeSeries {
    pub fn push(&mut self, time: f64, u: &VelocityField, chi: f64) {
        self.push_values(time, energy(u), enstrophy(u), chi);
    }

    pub fn push_values(&mut self, time: f64, e: f64, z: f64, chi: f64) {
        self.times.push(time);
        self.energy.push(e);
        self.enstrophy.push(z);
        self.chi.push(chi);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.energy.len() != n || self.enstrophy.len() != n || self.chi.len() != n {
            return Err(Error::ShapeMismatch("time series columns differ in length".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridMisaligned("sample times are not strictly increasing".into()));
        }
        Ok(())
    }

    /// Number of leading samples with `t <= horizon`.
    pub fn count_within(&self, horizon: f64) -> usize {
        let tol = 1e-9 * horizon.abs().max(1.0);
        self.times.iter().take_while(|&&t| t <= horizon + tol).count()
    }
}

fn times_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Aligned sample count of two series on `[0, horizon]`.
fn aligned(run: &[f64], reference: &[f64], horizon: f64) -> Result<usize> {
    let tol = 1e-9 * horizon.abs().max(1.0);
    let nr = reference.iter().take_while(|&&t| t <= horizon + tol).count();
    let nn = run.iter().take_while(|&&t| t <= horizon + tol).count();
    if nr == 0 {
        return Err(Error::GridMisaligned(format!("reference has no samples in [0, {horizon}]")));
    }
    if nn != nr {
        return Err(Error::GridMisaligned(format!(
            "{nn} run samples vs {nr} reference samples in [0, {horizon}]"
        )));
    }
    if let Some(k) = (0..nr).find(|&k| !times_match(run[k], reference[k])) {
        return Err(Error::GridMisaligned(format!(
            "sample {k}: run t = {}, reference t = {}",
            run[k], reference[k]
        )));
    }
    Ok(nr)
}

/// Time-averaged relative errors `(err_E, err_Z)` over samples in
/// `[0, horizon]`: mean of `|X - X_ref| / |X_ref|`.
pub fn error_series(run: &TimeSeries, reference: &TimeSeries, horizon: f64) -> Result<(f64, f64)> {
    run.validate()?;
    reference.validate()?;
    let n = aligned(&run.times, &reference.times, horizon)?;
    let rel = |a: &[f64], b: &[f64]| -> f64 {
        a[..n].iter().zip(&b[..n]).map(|(x, r)| (x - r).abs() / r.abs()).sum::<f64>() / n as f64
    };
    Ok((rel(&run.energy, &reference.energy), rel(&run.enstrophy, &reference.enstrophy)))
}

/// Shell spectra dumped at a set of times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSeries {
    pub times: Vec<f64>,
    /// `spectra[t][kappa]`.
    pub spectra: Vec<Vec<f64>>,
}

impl SpectrumSeries {
    pub fn push(&mut self, time: f64, spectrum: Vec<f64>) {
        self.times.push(time);
        self.spectra.push(spectrum);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumError {
    pub value: f64,
    /// `(time, shell)` terms skipped for a zero shell value.
    pub skipped: usize,
    pub counted: usize,
}

/// Mean over dump times in `[0, horizon]` and shells `1..=k_max` of
/// `log10(E / E_ref)`, with the absolute value applied per term when
/// `absolute` is set. Terms where either spectrum is zero have no finite
/// logarithm; they are skipped and counted.
pub fn spectrum_error(
    run: &SpectrumSeries,
    reference: &SpectrumSeries,
    horizon: f64,
    k_max: usize,
    absolute: bool,
) -> Result<SpectrumError> {
    let n = aligned(&run.times, &reference.times, horizon)?;
    let (mut sum, mut counted, mut skipped) = (0.0, 0usize, 0usize);
    for t in 0..n {
        let (a, r) = (&run.spectra[t], &reference.spectra[t]);
        if a.len() <= k_max || r.len() <= k_max {
            return Err(Error::ShapeMismatch(format!(
                "spectra have {} and {} shells, need {}",
                a.len(),
                r.len(),
                k_max + 1
            )));
        }
        for k in 1..=k_max {
            if r[k] <= 0.0 || a[k] <= 0.0 {
                skipped += 1;
                continue;
            }
            let term = (a[k] / r[k]).log10();
            sum += if absolute { term.abs() } else { term };
            counted += 1;
        }
    }
    let value = if counted == 0 { 0.0 } else { sum / counted as f64 };
    Ok(SpectrumError {
        value,
        skipped,
        counted,
    })
}

/// Sample mean and 95% half-width `1.96 sd / sqrt(n)` using the population
/// standard deviation.
pub fn ensemble_stats(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    Ok((mean, 1.96 * var.sqrt() / (n as f64).sqrt()))
}

/// Errors of one method against the reference, per test seed and pooled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub method: String,
    pub seeds: Vec<u64>,
    pub err_energy: Vec<f64>,
    pub err_enstrophy: Vec<f64>,
    pub err_spectrum: Vec<f64>,
    pub skipped_shells: usize,
    /// `(mean, ci95)`; absent with fewer than two seeds.
    pub energy_stats: Option<(f64, f64)>,
    pub enstrophy_stats: Option<(f64, f64)>,
    pub spectrum_stats: Option<(f64, f64)>,
}

impl ErrorReport {
    pub fn finalize(&mut self) {
        self.energy_stats = ensemble_stats(&self.err_energy).ok();
        self.enstrophy_stats = ensemble_stats(&self.err_enstrophy).ok();
        self.spectrum_stats = ensemble_stats(&self.err_spectrum).ok();
    }

    pub fn mean_energy(&self) -> f64 {
        mean(&self.err_energy)
    }

    pub fn mean_enstrophy(&self) -> f64 {
        mean(&self.err_enstrophy)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
