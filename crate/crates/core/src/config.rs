//! Run configuration: a TOML document whose defaults reproduce the
//! reference setup (Re = 4e4, dt = 5e-4, grids 512 / 128, T = 10).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::RelaxPolicy;
use crate::grid::StaggeredGrid;
use crate::learning::TrainingConfig;
use crate::scenarios::InitSpec;
use crate::timestepper::{Closure, Forcing, SolverParams};
use crate::tuning::TuneConfig;

/// Environment variable overriding the output directory.
pub const OUTPUT_ROOT_ENV: &str = "EFR_OUTPUT_ROOT";

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub fine: usize,
    pub coarse: usize,
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            fine: 512,
            coarse: 128,
            length: 1.0,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    #[default]
    None,
    Kolmogorov { amplitude: f64, wavenumber: u32 },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub viscosity: f64,
    pub dt: f64,
    pub t_end: f64,
    pub forcing: ForcingConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            viscosity: 2.5e-5,
            dt: 5e-4,
            t_end: 10.0,
            forcing: ForcingConfig::None,
        }
    }
}

/// Simulation method. Filter radii default to the coarse spacing.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    #[default]
    #[serde(rename = "noefr")]
    NoEfr,
    Ef {
        #[serde(default)]
        delta: Option<f64>,
    },
    Efr {
        #[serde(default)]
        delta: Option<f64>,
        chi: f64,
    },
    Smagorinsky {
        theta: f64,
        #[serde(default)]
        width: Option<f64>,
    },
    DdEf {
        filter: PathBuf,
    },
    EDdEfr {
        filter: PathBuf,
    },
    EzDdEfr {
        filter: PathBuf,
    },
}

/// Where a method's filter comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterSource {
    None,
    Differential { delta: f64 },
    File(PathBuf),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::NoEfr => "noefr",
            Method::Ef { .. } => "ef",
            Method::Efr { .. } => "efr",
            Method::Smagorinsky { .. } => "smagorinsky",
            Method::DdEf { .. } => "dd_ef",
            Method::EDdEfr { .. } => "e_dd_efr",
            Method::EzDdEfr { .. } => "ez_dd_efr",
        }
    }

    /// Build a method from its name and the optional parameters used by the
    /// command line.
    pub fn from_parts(
        name: &str,
        delta: Option<f64>,
        chi: Option<f64>,
        theta: Option<f64>,
        filter: Option<PathBuf>,
    ) -> Result<Self> {
        let need_filter = || {
            filter
                .clone()
                .ok_or_else(|| Error::Config(format!("method {name} needs a filter path")))
        };
        Ok(match name {
            "noefr" => Method::NoEfr,
            "ef" => Method::Ef { delta },
            "efr" => Method::Efr {
                delta,
                chi: chi.ok_or_else(|| Error::Config("method efr needs chi".into()))?,
            },
            "smagorinsky" => Method::Smagorinsky {
                theta: theta.ok_or_else(|| Error::Config("method smagorinsky needs theta".into()))?,
                width: None,
            },
            "dd_ef" => Method::DdEf { filter: need_filter()? },
            "e_dd_efr" => Method::EDdEfr { filter: need_filter()? },
            "ez_dd_efr" => Method::EzDdEfr { filter: need_filter()? },
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            Method::Ef { delta: Some(d) } | Method::Efr { delta: Some(d), .. } if !(d >= 0.0) => {
                bad(format!("filter radius must be >= 0, got {d}"))
            }
            Method::Efr { chi, .. } if !(0.0..=1.0).contains(&chi) => bad(format!("chi {chi} outside [0, 1]")),
            Method::Smagorinsky { theta, .. } if !(0.0..=1.0).contains(&theta) => {
                bad(format!("theta {theta} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn closure(&self) -> Closure {
        match *self {
            Method::Smagorinsky { theta, width } => Closure::Smagorinsky {
                coefficient: theta,
                width,
            },
            _ => Closure::None,
        }
    }

    pub fn policy(&self) -> RelaxPolicy {
        match *self {
            Method::Efr { chi, .. } => RelaxPolicy::Fixed(chi),
            Method::EDdEfr { .. } => RelaxPolicy::Energy,
            Method::EzDdEfr { .. } => RelaxPolicy::EnergyEnstrophy,
            _ => RelaxPolicy::Fixed(1.0),
        }
    }

    pub fn filter_source(&self, coarse: &StaggeredGrid) -> FilterSource {
        match self {
            Method::NoEfr | Method::Smagorinsky { .. } => FilterSource::None,
            Method::Ef { delta } | Method::Efr { delta, .. } => FilterSource::Differential {
                delta: delta.unwrap_or(coarse.spacing()),
            },
            Method::DdEf { filter } | Method::EDdEfr { filter } | Method::EzDdEfr { filter } => {
                FilterSource::File(filter.clone())
            }
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    /// Peak wavenumber of the `kappa^4 exp(-(kappa / peak)^2)` profile.
    pub peak: f64,
    pub energy: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            peak: 10.0,
            energy: 0.5,
        }
    }
}

impl InitialConfig {
    pub fn spec(&self, seed: u64) -> InitSpec {
        InitSpec {
            profile: crate::scenarios::SpectrumProfile::PeakedQuartic { peak: self.peak },
            seed,
            energy: self.energy,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Steps between time-series samples (and DNS snapshots).
    pub sample_every: usize,
    /// Steps between spectrum dumps.
    pub spectrum_every: usize,
    /// Write coarse state snapshots at the sample cadence.
    pub snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            sample_every: 10,
            spectrum_every: 200,
            snapshots: false,
        }
    }
}

/// Which baseline parameter `tune` adjusts.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum TuneTarget {
    #[default]
    SmagorinskyTheta,
    EfDelta,
    EfrChi,
}

impl TuneTarget {
    pub fn method(self, alpha: f64) -> Method {
        match self {
            TuneTarget::SmagorinskyTheta => Method::Smagorinsky {
                theta: alpha,
                width: None,
            },
            TuneTarget::EfDelta => Method::Ef { delta: Some(alpha) },
            TuneTarget::EfrChi => Method::Efr {
                delta: None,
                chi: alpha,
            },
        }
    }
}

/// Tuning settings; unset values take scale-aware defaults from
/// [`TuneSection::resolve`].
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub target: TuneTarget,
    pub alpha0: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl TuneSection {
    /// Defaults scale with the parameter: theta is O(0.1), delta scales with
    /// the Kolmogorov length `eta = nu^(3/4)` (unit length and velocity), chi
    /// with `dt`.
    pub fn resolve(&self, solver: &SolverConfig) -> TuneConfig {
        let (scale, min, max) = match self.target {
            TuneTarget::SmagorinskyTheta => (0.1, 0.0, 1.0),
            TuneTarget::EfDelta => {
                let eta = solver.viscosity.powf(0.75);
                (eta, 0.1 * eta, 10.0 * eta)
            }
            TuneTarget::EfrChi => (solver.dt, 0.1 * solver.dt, 10.0 * solver.dt),
        };
        TuneConfig {
            alpha0: self.alpha0.unwrap_or(scale),
            beta: self.beta.unwrap_or(0.5 * scale * scale),
            epsilon: self.epsilon.unwrap_or(0.01 * scale),
            max_iter: self.max_iter.unwrap_or(20),
            tol: self.tol.unwrap_or(1e-3 * scale),
            min: self.min.unwrap_or(min),
            max: self.max.unwrap_or(max),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Test seeds used by `simulate`, `run-dns` and `compare`.
    pub seeds: Vec<u64>,
    /// Error-averaging window for `compare`.
    pub horizon: f64,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub method: Method,
    pub initial: InitialConfig,
    pub training: TrainingConfig,
    pub output: OutputConfig,
    pub tune: TuneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            horizon: 3.0,
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            method: Method::default(),
            initial: InitialConfig::default(),
            training: TrainingConfig::default(),
            output: OutputConfig::default(),
            tune: TuneSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.coarse < StaggeredGrid::MIN_CELLS || g.fine < g.coarse || g.fine % g.coarse != 0 {
            return Err(Error::RatioMismatch {
                fine: g.fine,
                coarse: g.coarse,
            });
        }
        if !(g.length > 0.0) {
            return Err(Error::Config("domain length must be positive".into()));
        }
        if !(self.solver.t_end > 0.0) {
            return Err(Error::Config("t_end must be positive".into()));
        }
        if self.output.sample_every == 0 || self.output.spectrum_every == 0 {
            return Err(Error::Config("output cadences must be >= 1".into()));
        }
        self.method.validate()?;
        self.training.validate()?;
        self.solver_params(false).validate()
    }

    pub fn fine_grid(&self) -> Result<StaggeredGrid> {
        StaggeredGrid::with_length(self.grid.fine, self.grid.length)
    }

    pub fn coarse_grid(&self) -> Result<StaggeredGrid> {
        StaggeredGrid::with_length(self.grid.coarse, self.grid.length)
    }

    pub fn ratio(&self) -> usize {
        self.grid.fine / self.grid.coarse
    }

    /// Number of time steps to reach `t_end` (rounded to nearest).
    pub fn steps(&self) -> usize {
        (self.solver.t_end / self.solver.dt).round() as usize
    }

    pub fn forcing(&self) -> Forcing {
        match self.solver.forcing {
            ForcingConfig::None => Forcing::None,
            ForcingConfig::Kolmogorov { amplitude, wavenumber } => Forcing::Kolmogorov { amplitude, wavenumber },
        }
    }

    /// Solver parameters; `with_closure` adds the method's closure model.
    pub fn solver_params(&self, with_closure: bool) -> SolverParams {
        let p = SolverParams::new(self.solver.viscosity, self.solver.dt).with_forcing(self.forcing());
        if with_closure {
            p.with_closure(self.method.closure())
        } else {
            p
        }
    }

    /// Output directory after applying the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => self.output.dir.clone(),
        }
    }
}
