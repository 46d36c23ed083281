use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use efr_core::config::{Method, RunConfig, TuneTarget};
use efr_core::io::{self, ReportFile};
use efr_core::pipeline::{self, SeedOutput};
use efr_core::spectral::{shell_averaged_gain, SpectralOps};
use efr_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "efr", version, about = "Evolve-filter-relax simulations with learned spectral filters")]
struct Cli {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set solver.dt=1e-3` or
    /// `--set seeds=[1,2]`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DnsSet {
    Train,
    Test,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the fine-grid reference simulations.
    RunDns {
        #[arg(long, value_enum, default_value = "both")]
        which: DnsSet,
    },
    /// Fit a spectral filter to training DNS snapshots.
    LearnFilter {
        /// Directory of training trajectories [default: <root>/dns/train].
        #[arg(long)]
        dns: Option<PathBuf>,
        /// Output filter file [default: <root>/filter.efrf].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a coarse simulation for every test seed.
    Simulate {
        /// noefr, ef, efr, smagorinsky, dd_ef, e_dd_efr or ez_dd_efr; the
        /// configured method when omitted.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        chi: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        filter: Option<PathBuf>,
        /// Output directory [default: <root>/runs/<method>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error report of simulation runs against the reference DNS.
    Compare {
        /// Reference directory [default: <root>/dns/test].
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Report file [default: <root>/report.json].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directories; each directory name labels the method.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Tune a baseline parameter by finite-difference gradient descent.
    Tune {
        #[arg(long, value_enum)]
        target: Option<Target>,
        /// Training reference directory [default: <root>/dns/train].
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Trace file [default: <root>/tune/<target>.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shell energy spectrum of a snapshot file.
    Spectrum {
        snapshot: PathBuf,
        /// Write JSON here instead of printing a table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shell-averaged gain of a filter file.
    Gain { filter: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Target {
    SmagorinskyTheta,
    EfDelta,
    EfrChi,
}

impl From<Target> for TuneTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::SmagorinskyTheta => TuneTarget::SmagorinskyTheta,
            Target::EfDelta => TuneTarget::EfDelta,
            Target::EfrChi => TuneTarget::EfrChi,
        }
    }
}

fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not KEY=VALUE")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    // Bare words are taken as strings so `--set method.kind=efr` works.
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    Ok((path, value))
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?,
        None => String::new(),
    };
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        let (last, parents) = path.split_last().expect("path is non-empty");
        let mut node = &mut table;
        for p in parents {
            node = node
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{p} is not a section")))?;
        }
        node.insert(last.clone(), value);
    }
    RunConfig::from_toml_str(&toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?)
}

fn gain_table(gains: &[[f64; 2]]) -> String {
    let mut s = String::from("kappa  gain_u        gain_v\n");
    for (k, g) in gains.iter().enumerate() {
        s.push_str(&format!("{k:5}  {:<12.6}  {:<12.6}\n", g[0], g[1]));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    let root = cfg.output_dir();
    let cfg_text = cfg.to_toml_string();
    match cli.command {
        Command::RunDns { which } => {
            if which != DnsSet::Test {
                let dir = root.join("dns/train");
                pipeline::training_dns(&cfg, Some(&dir))?;
                io::write_meta(&dir, "run-dns", &cfg_text)?;
                println!("training DNS written to {}", dir.display());
            }
            if which != DnsSet::Train {
                let dir = root.join("dns/test");
                pipeline::reference_dns(&cfg, Some(&dir))?;
                io::write_meta(&dir, "run-dns", &cfg_text)?;
                println!("reference DNS written to {}", dir.display());
            }
        }
        Command::LearnFilter { dns, out } => {
            let dns = dns.unwrap_or_else(|| root.join("dns/train"));
            let out = out.unwrap_or_else(|| root.join("filter.efrf"));
            let trajectories = pipeline::load_trajectories(&dns, &cfg)?;
            let learned = pipeline::learn_filter(&cfg, &trajectories)?;
            io::write_filter(&out, &learned.filter)?;
            print!("{}", gain_table(&learned.gains));
            println!(
                "{} snapshot pairs, training residual {:.6e}; filter written to {}",
                learned.columns,
                learned.residual,
                out.display()
            );
        }
        Command::Simulate {
            method,
            delta,
            chi,
            theta,
            filter,
            out,
        } => {
            if let Some(name) = method {
                cfg.method = Method::from_parts(&name, delta, chi, theta, filter)?;
            }
            let dir = out.unwrap_or_else(|| root.join("runs").join(cfg.method.name()));
            let runs = pipeline::simulate_all(&cfg, &cfg.method, Some(&dir))?;
            io::write_meta(&dir, "simulate", &cfg.to_toml_string())?;
            for r in &runs {
                let last = r.series.len() - 1;
                println!(
                    "seed {}: t = {:.4}, E = {:.6e}, Z = {:.6e}",
                    r.seed, r.series.times[last], r.series.energy[last], r.series.enstrophy[last]
                );
            }
            println!("outputs written to {}", dir.display());
        }
        Command::Compare { reference, out, runs } => {
            let reference = reference.unwrap_or_else(|| root.join("dns/test"));
            let out = out.unwrap_or_else(|| root.join("report.json"));
            let refs = pipeline::load_outputs(&reference)?;
            let k_max = cfg.grid.coarse / 2;
            let mut methods = Vec::new();
            for dir in &runs {
                let label = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| dir.display().to_string());
                methods.push(pipeline::compare(&label, &pipeline::load_outputs(dir)?, &refs, cfg.horizon, k_max)?);
            }
            println!("{:<16} {:>12} {:>12} {:>12} {:>8}", "method", "err_E", "err_Z", "err_spec", "skipped");
            for m in &methods {
                println!(
                    "{:<16} {:>12.4e} {:>12.4e} {:>12.4e} {:>8}",
                    m.method,
                    m.mean_energy(),
                    m.mean_enstrophy(),
                    m.err_spectrum.iter().sum::<f64>() / m.err_spectrum.len().max(1) as f64,
                    m.skipped_shells
                );
            }
            io::write_report(
                &out,
                &ReportFile {
                    reference: reference.display().to_string(),
                    horizon: cfg.horizon,
                    methods,
                },
            )?;
            println!("report written to {}", out.display());
        }
        Command::Tune { target, reference, out } => {
            if let Some(t) = target {
                cfg.tune.target = t.into();
            }
            let reference = reference.unwrap_or_else(|| root.join("dns/train"));
            let refs: BTreeMap<u64, _> = pipeline::load_outputs(&reference)?
                .into_iter()
                .map(|(seed, SeedOutput { series, .. })| (seed, series))
                .collect();
            let outcome = pipeline::tune(&cfg, &refs)?;
            let name = serde_json::to_value(cfg.tune.target)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_else(|| "target".into());
            let out = out.unwrap_or_else(|| root.join("tune").join(format!("{name}.csv")));
            io::write_trace(&out, &outcome.trace)?;
            println!(
                "{name} = {:.6e} after {} iterations ({}); trace written to {}",
                outcome.alpha,
                outcome.trace.len(),
                if outcome.converged { "converged" } else { "iteration limit" },
                out.display()
            );
        }
        Command::Spectrum { snapshot, out } => {
            let snap = io::read_snapshot(&snapshot)?;
            let spectrum = SpectralOps::new(*snap.field.grid()).energy_spectrum(&snap.field)?;
            match out {
                Some(path) => {
                    let mut series = efr_core::metrics::SpectrumSeries::default();
                    series.push(snap.time, spectrum);
                    io::write_spectra(&path, &series)?;
                }
                None => {
                    println!("kappa  energy");
                    for (k, e) in spectrum.iter().enumerate() {
                        println!("{k:5}  {e:.6e}");
                    }
                }
            }
        }
        Command::Gain { filter } => {
            let f = io::read_filter(&filter)?;
            print!("{}", gain_table(&shell_averaged_gain(&f)));
        }
    }
    info!("done");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
