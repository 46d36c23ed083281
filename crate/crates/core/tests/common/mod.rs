#![allow(dead_code)]

use efr_core::config::{ForcingConfig, RunConfig};

/// A configuration small enough to run end to end in about a second.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid.fine = 32;
    cfg.grid.coarse = 16;
    cfg.solver.viscosity = 1e-3;
    cfg.solver.dt = 2e-3;
    cfg.solver.t_end = 0.1;
    cfg.solver.forcing = ForcingConfig::None;
    cfg.seeds = vec![1, 2];
    cfg.horizon = 0.1;
    cfg.training.t_train = 0.04;
    cfg.training.i_train = 2;
    cfg.training.stride = 5;
    cfg.output.sample_every = 5;
    cfg.output.spectrum_every = 10;
    cfg.validate().unwrap();
    cfg
}
