mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use efr_core::config::Method;
use efr_core::filters::{Provenance, SpectralFilter};
use efr_core::metrics::{SpectrumSeries, TimeSeries};
use efr_core::pipeline::{self, DnsRun, SeedOutput, SimRun};
use efr_core::Error;
use rustfft::num_complex::Complex64;

use common::tiny_config;

fn run(method: Method) -> SimRun {
    let cfg = tiny_config();
    let filter = pipeline::method_filter(&method, &cfg.coarse_grid().unwrap()).unwrap();
    pipeline::simulate(&cfg, &method, filter, 1, cfg.steps(), None).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn noefr_is_efr_with_zero_chi() {
    let a = run(Method::NoEfr);
    let b = run(Method::Efr { delta: None, chi: 0.0 });
    assert_eq!(bits(&a.series.energy), bits(&b.series.energy));
    assert_eq!(bits(&a.series.enstrophy), bits(&b.series.enstrophy));
    assert_eq!(a.spectra, b.spectra);
}

#[test]
fn ef_is_efr_with_unit_chi() {
    let a = run(Method::Ef { delta: None });
    let b = run(Method::Efr { delta: None, chi: 1.0 });
    assert_eq!(bits(&a.series.energy), bits(&b.series.energy));
    assert_eq!(bits(&a.series.enstrophy), bits(&b.series.enstrophy));
    assert_eq!(a.spectra, b.spectra);
}

#[test]
fn regularized_runs_dissipate_more_than_noefr() {
    let base = run(Method::NoEfr);
    let efr = run(Method::Efr { delta: None, chi: 0.1 });
    let last = base.series.len() - 1;
    assert_eq!(base.series.times[last], 0.1);
    assert!(efr.series.energy[last] < base.series.energy[last]);
    assert!(efr.series.chi[1..].iter().all(|&c| c == 0.1));
    assert!(base.series.chi.iter().all(|c| c.is_nan()));
}

#[test]
fn disk_and_memory_training_learn_the_same_filter() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let runs = pipeline::training_dns(&cfg, Some(dir.path())).unwrap();
    let memory: Vec<_> = runs.iter().map(DnsRun::trajectory).collect();
    let disk = pipeline::load_trajectories(dir.path(), &cfg).unwrap();
    assert_eq!(memory.len(), disk.len());
    let a = pipeline::learn_filter(&cfg, &memory).unwrap();
    let b = pipeline::learn_filter(&cfg, &disk).unwrap();
    assert_eq!(a.columns, 2 * 4);
    for c in 0..2 {
        assert_eq!(a.filter.gains(c), b.filter.gains(c));
    }
    assert_eq!(a.residual, b.residual);
}

#[test]
fn reference_dns_starts_at_the_coarse_initial_state() {
    let cfg = tiny_config();
    let refs = pipeline::reference_dns(&cfg, None).unwrap();
    let sim = run(Method::NoEfr);
    assert_eq!(refs[0].seed, 1);
    assert_eq!(refs[0].reference.times, sim.series.times);
    assert_eq!(refs[0].reference.energy[0], sim.series.energy[0]);
    assert_eq!(refs[0].spectra.spectra[0], sim.spectra.spectra[0]);
}

fn amplifying_filter() -> Arc<SpectralFilter> {
    let g = tiny_config().coarse_grid().unwrap();
    let gains = vec![Complex64::new(1e10, 0.0); g.cells()];
    Arc::new(SpectralFilter::from_gains(g, gains.clone(), gains, Provenance::Custom).unwrap())
}

#[test]
fn unconstrained_amplification_reports_blowup() {
    let cfg = tiny_config();
    let method = Method::DdEf { filter: PathBuf::new() };
    match pipeline::simulate(&cfg, &method, Some(amplifying_filter()), 1, cfg.steps(), None) {
        Err(Error::NumericalBlowup { step, last_valid_time }) => {
            assert!(step >= 1);
            assert!(last_valid_time < cfg.solver.t_end);
        }
        other => panic!("expected blow-up, got {other:?}"),
    }
}

#[test]
fn energy_constrained_relax_tames_an_amplifying_filter() {
    let cfg = tiny_config();
    let method = Method::EDdEfr { filter: PathBuf::new() };
    let r = pipeline::simulate(&cfg, &method, Some(amplifying_filter()), 1, cfg.steps(), None).unwrap();
    assert!(r.series.energy.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    for d in &r.diagnostics {
        assert!(d.energy_relaxed <= d.energy_evolved * (1.0 + 1e-12));
    }
}

#[test]
fn missing_filter_file_is_reported() {
    let cfg = tiny_config();
    let method = Method::DdEf {
        filter: PathBuf::from("/nonexistent/filter.efrf"),
    };
    let err = pipeline::simulate_all(&cfg, &method, None).unwrap_err();
    assert!(matches!(err, Error::FilterMissing(_)));
    assert_eq!(err.exit_code(), 4);
}

fn output(times: &[f64], energy: &[f64], enstrophy: &[f64], spectra: &[Vec<f64>]) -> SeedOutput {
    let mut series = TimeSeries::default();
    for k in 0..times.len() {
        series.push_values(times[k], energy[k], enstrophy[k], f64::NAN);
    }
    let mut s = SpectrumSeries::default();
    for (k, sp) in spectra.iter().enumerate() {
        s.push(times[k], sp.clone());
    }
    SeedOutput { series, spectra: s }
}

#[test]
fn compare_matches_hand_computed_errors() {
    let t = [0.0, 1.0, 2.0];
    let ref_spec = vec![vec![0.0, 1.0, 1.0]; 3];
    let refs: BTreeMap<u64, SeedOutput> = [
        (1, output(&t, &[1.0, 2.0, 4.0], &[2.0, 2.0, 2.0], &ref_spec)),
        (2, output(&t, &[1.0, 2.0, 4.0], &[2.0, 2.0, 2.0], &ref_spec)),
    ]
    .into();
    let run_spec = vec![vec![0.0, 10.0, 1.0], vec![0.0, 0.1, 0.0], vec![0.0, 1.0, 1.0]];
    let runs: BTreeMap<u64, SeedOutput> = [
        (1, output(&t, &[1.5, 2.0, 2.0], &[2.0, 3.0, 1.0], &run_spec)),
        (2, output(&t, &[1.0, 2.0, 4.0], &[2.0, 2.0, 2.0], &ref_spec)),
    ]
    .into();
    let r = pipeline::compare("hand", &runs, &refs, 2.0, 2).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-14;
    // |1.5-1|/1, 0, |2-4|/4 averaged over three samples.
    assert!(close(r.err_energy[0], 1.0 / 3.0));
    // 0, 1/2, 1/2.
    assert!(close(r.err_enstrophy[0], 1.0 / 3.0));
    // |log10 10|, 0, |log10 0.1|, one skipped zero, 0, 0 over five terms.
    assert!(close(r.err_spectrum[0], 2.0 / 5.0));
    assert_eq!(r.skipped_shells, 1);
    assert_eq!(r.err_energy[1], 0.0);
    let (mean, ci) = r.energy_stats.unwrap();
    assert!(close(mean, 1.0 / 6.0));
    assert!(close(ci, 1.96 * (1.0 / 6.0) / 2f64.sqrt()));

    // A shorter horizon drops the last sample.
    let r = pipeline::compare("hand", &runs, &refs, 1.0, 2).unwrap();
    assert!(close(r.err_energy[0], 0.25));
}

#[test]
fn compare_rejects_misaligned_or_missing_references() {
    let spec = vec![vec![0.0, 1.0]; 2];
    let refs: BTreeMap<u64, SeedOutput> = [(1, output(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &spec))].into();
    let shifted: BTreeMap<u64, SeedOutput> = [(1, output(&[0.0, 1.5], &[1.0, 1.0], &[1.0, 1.0], &spec))].into();
    assert!(matches!(
        pipeline::compare("x", &shifted, &refs, 2.0, 1),
        Err(Error::GridMisaligned(_))
    ));
    let other_seed: BTreeMap<u64, SeedOutput> = [(7, output(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &spec))].into();
    assert!(matches!(
        pipeline::compare("x", &other_seed, &refs, 2.0, 1),
        Err(Error::MissingReference(7))
    ));
}
