//! One-parameter finite-difference gradient descent for baseline models,
//! with a relative enstrophy mismatch loss over an ensemble of runs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TimeSeries;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub alpha0: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub min: f64,
    pub max: f64,
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.beta > 0.0 && self.min < self.max && self.tol >= 0.0) {
            return Err(Error::Config(
                "tuning needs epsilon > 0, beta > 0, tol >= 0 and min < max".into(),
            ));
        }
        if !(self.min..=self.max).contains(&self.alpha0) {
            return Err(Error::Config(format!(
                "initial value {} outside [{}, {}]",
                self.alpha0, self.min, self.max
            )));
        }
        Ok(())
    }

    fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min, self.max)
    }
}

/// Ensemble mean of the per-run `mean_n (Z^n - Z_ref^n)^2 / (Z_ref^n)^2`
/// over samples with `0 < t <= horizon`.
pub fn enstrophy_loss(runs: &[(u64, TimeSeries)], refs: &BTreeMap<u64, TimeSeries>, horizon: f64) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let mut total = 0.0;
    for (seed, run) in runs {
        let reference = refs.get(seed).ok_or(Error::MissingReference(*seed))?;
        let tol = 1e-9 * horizon.max(1.0);
        let mut acc = 0.0;
        let mut count = 0usize;
        for (k, &t) in reference.times.iter().enumerate() {
            if t <= 0.0 || t > horizon + tol {
                continue;
            }
            let rt = run.times.get(k).copied();
            if rt.is_none_or(|rt| (rt - t).abs() > 1e-9 * t.max(1.0)) {
                return Err(Error::GridMisaligned(format!(
                    "seed {seed}: run and reference disagree at sample {k}"
                )));
            }
            let zr = reference.enstrophy[k];
            acc += (run.enstrophy[k] - zr).powi(2) / (zr * zr);
            count += 1;
        }
        if count == 0 {
            return Err(Error::GridMisaligned(format!("seed {seed}: no samples in (0, {horizon}]")));
        }
        total += acc / count as f64;
    }
    Ok(total / runs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub alpha: f64,
    pub loss: f64,
    pub alpha_perturbed: f64,
    pub loss_perturbed: f64,
    pub gradient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOutcome {
    pub alpha: f64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

/// Forward-difference descent: `g = (L(clamp(a + eps)) - L(a)) / eps`,
/// `a <- clamp(a - beta g)`, stopping once the update is below `tol`.
/// Losses are cached by parameter value, so repeated points are not rerun.
pub fn finite_diff_gd(cfg: &TuneConfig, mut loss: impl FnMut(f64) -> Result<f64>) -> Result<TuneOutcome> {
    cfg.validate()?;
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut eval = |a: f64| -> Result<f64> {
        if let Some(&l) = cache.get(&a.to_bits()) {
            return Ok(l);
        }
        let l = loss(a)?;
        cache.insert(a.to_bits(), l);
        Ok(l)
    };
    let mut alpha = cfg.alpha0;
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=cfg.max_iter {
        let l = eval(alpha)?;
        let alpha_perturbed = cfg.clamp(alpha + cfg.epsilon);
        let loss_perturbed = eval(alpha_perturbed)?;
        let gradient = (loss_perturbed - l) / cfg.epsilon;
        trace.push(TraceEntry {
            iteration,
            alpha,
            loss: l,
            alpha_perturbed,
            loss_perturbed,
            gradient,
        });
        let next = cfg.clamp(alpha - cfg.beta * gradient);
        if (next - alpha).abs() < cfg.tol {
            converged = true;
            break;
        }
        alpha = next;
    }
    Ok(TuneOutcome {
        alpha,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_cfg() -> TuneConfig {
        TuneConfig {
            alpha0: 0.9,
            beta: 0.4,
            epsilon: 1e-4,
            max_iter: 50,
            tol: 1e-6,
            min: 0.0,
            max: 1.0,
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let out = finite_diff_gd(&quad_cfg(), |a| Ok((a - 0.3) * (a - 0.3))).unwrap();
        assert!(out.converged);
        assert!((out.alpha - 0.3).abs() < 1e-3);
        // Fixed point of the forward-difference iteration: 0.3 - eps / 2.
        assert!((out.alpha - 0.29995).abs() < 1e-5);
        assert!(out.trace.len() <= 50);
        assert!(out.trace.iter().all(|e| (0.0..=1.0).contains(&e.alpha)));
        assert!(out.trace.last().unwrap().loss <= out.trace[0].loss);
    }

    #[test]
    fn stays_clamped_at_bound() {
        let cfg = TuneConfig {
            alpha0: 1.0,
            ..quad_cfg()
        };
        // Decreasing loss pushes upward, past the bound.
        let out = finite_diff_gd(&cfg, |a| Ok(-a)).unwrap();
        assert_eq!(out.alpha, 1.0);
        assert!(out.trace.iter().all(|e| e.alpha == 1.0 && e.alpha_perturbed == 1.0));
    }

    #[test]
    fn caches_repeated_points() {
        let mut calls = 0;
        let cfg = TuneConfig {
            alpha0: 1.0,
            ..quad_cfg()
        };
        finite_diff_gd(&cfg, |a| {
            calls += 1;
            Ok(-a)
        })
        .unwrap();
        assert_eq!(calls, 1);
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = TuneConfig {
            alpha0: 2.0,
            ..quad_cfg()
        };
        assert!(finite_diff_gd(&bad, |_| Ok(0.0)).is_err());
        let bad = TuneConfig {
            epsilon: 0.0,
            ..quad_cfg()
        };
        assert!(finite_diff_gd(&bad, |_| Ok(0.0)).is_err());
    }

    fn series(z: &[f64]) -> TimeSeries {
        let mut s = TimeSeries::default();
        for (k, &zk) in z.iter().enumerate() {
            s.push_values(k as f64 * 0.5, 1.0, zk, f64::NAN);
        }
        s
    }

    #[test]
    fn loss_cases() {
        let mut refs = BTreeMap::new();
        refs.insert(1, series(&[9.0, 2.0, 4.0]));
        refs.insert(2, series(&[9.0, 1.0, 1.0]));
        let same = vec![(1, series(&[1.0, 2.0, 4.0]))];
        assert_eq!(enstrophy_loss(&same, &refs, 1.0).unwrap(), 0.0);

        let up = vec![(1, series(&[0.0, 2.2, 4.4]))];
        assert!((enstrophy_loss(&up, &refs, 1.0).unwrap() - 0.01).abs() < 1e-12);

        // seed 1: ((3-2)/2)^2, ((4-4)/4)^2 -> 0.125; seed 2: 1, 4 -> 2.5.
        let two = vec![(1, series(&[0.0, 3.0, 4.0])), (2, series(&[0.0, 2.0, 3.0]))];
        assert!((enstrophy_loss(&two, &refs, 1.0).unwrap() - 1.3125).abs() < 1e-15);

        let missing = vec![(7, series(&[1.0, 1.0]))];
        assert!(matches!(enstrophy_loss(&missing, &refs, 1.0), Err(Error::MissingReference(7))));
    }
}
