//! File formats.
//!
//! * Snapshots (`.efrs`): magic `EFRS`, version `u32`, `N` `u32`, component
//!   count `u32`, time `f64`, seed `u64`, then each component as `N*N`
//!   row-major `f64`. Everything little-endian. Domain length is 1.
//! * Filters (`.efrf`): magic `EFRF`, version `u32`, `N` `u32`, component
//!   count `u32`, provenance `u8`, then each component as `N*N` `(re, im)`
//!   `f64` pairs in FFT ordering.
//! * Time series and tuning traces: CSV preceded by a `#<schema>,<version>`
//!   line.
//! * Spectra and reports: JSON with a `version` field.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{Provenance, SpectralFilter, StepDiagnostics};
use crate::grid::{StaggeredGrid, VelocityField};
use crate::metrics::{ErrorReport, SpectrumSeries, TimeSeries};
use crate::tuning::TraceEntry;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"EFRS";
pub const FILTER_MAGIC: &[u8; 4] = b"EFRF";
pub const FORMAT_VERSION: u32 = 1;
pub const TIMESERIES_SCHEMA: &str = "efr-timeseries";
pub const DIAGNOSTICS_SCHEMA: &str = "efr-diagnostics";
pub const TRACE_SCHEMA: &str = "efr-tune-trace";
pub const CSV_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut buf = [0u8; K];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "file is truncated")
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::format(self.path, "trailing bytes after payload")),
            Err(e) => Err(Error::io(self.path, e)),
        }
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<usize> {
        if &self.bytes::<4>()? != magic {
            return Err(Error::format(
                self.path,
                format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
            ));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(self.path, format!("unsupported version {version}")));
        }
        let n = self.u32()? as usize;
        if n < StaggeredGrid::MIN_CELLS {
            return Err(Error::format(self.path, format!("grid size {n} too small")));
        }
        let comps = self.u32()?;
        if comps != 2 {
            return Err(Error::format(self.path, format!("expected 2 components, found {comps}")));
        }
        Ok(n)
    }
}

/// A velocity state with its time stamp and generating seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub field: VelocityField,
    pub time: f64,
    pub seed: u64,
}

pub fn write_snapshot(path: &Path, field: &VelocityField, time: f64, seed: u64) -> Result<()> {
    let mut w = create(path)?;
    let n = field.grid().n() as u32;
    let mut buf = Vec::with_capacity(32 + 16 * field.grid().cells());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&2u32.to_le_bytes());
    buf.extend_from_slice(&time.to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    for c in 0..2 {
        for x in field.component(c) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut r = Reader {
        inner: open(path)?,
        path,
    };
    let n = r.header(SNAPSHOT_MAGIC)?;
    let time = r.f64()?;
    let seed = r.u64()?;
    let m = n * n;
    let mut comps = [Vec::with_capacity(m), Vec::with_capacity(m)];
    for comp in comps.iter_mut() {
        for _ in 0..m {
            comp.push(r.f64()?);
        }
    }
    r.expect_end()?;
    let [u, v] = comps;
    let grid = StaggeredGrid::new(n)?;
    Ok(Snapshot {
        field: VelocityField::from_components(grid, u, v)?,
        time,
        seed,
    })
}

pub fn write_filter(path: &Path, filter: &SpectralFilter) -> Result<()> {
    let mut w = create(path)?;
    let n = filter.grid().n() as u32;
    let mut buf = Vec::with_capacity(17 + 32 * filter.grid().cells());
    buf.extend_from_slice(FILTER_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&2u32.to_le_bytes());
    buf.push(filter.provenance().tag());
    for c in 0..2 {
        for z in filter.gains(c) {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_filter(path: &Path) -> Result<SpectralFilter> {
    let mut r = Reader {
        inner: open(path)?,
        path,
    };
    let n = r.header(FILTER_MAGIC)?;
    let tag = r.u8()?;
    let provenance =
        Provenance::from_tag(tag).ok_or_else(|| Error::format(path, format!("unknown provenance tag {tag}")))?;
    let m = n * n;
    let mut gains = [Vec::with_capacity(m), Vec::with_capacity(m)];
    for g in gains.iter_mut() {
        for _ in 0..m {
            let re = r.f64()?;
            let im = r.f64()?;
            g.push(Complex64::new(re, im));
        }
    }
    r.expect_end()?;
    let [gu, gv] = gains;
    SpectralFilter::from_gains(StaggeredGrid::new(n)?, gu, gv, provenance)
}

fn write_versioned_csv<S: Serialize>(path: &Path, schema: &str, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "#{schema},{CSV_VERSION}").map_err(|e| Error::io(path, e))?;
    let mut csv = csv::Writer::from_writer(w);
    for row in rows {
        csv.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    csv.flush().map_err(|e| Error::io(path, e))
}

fn read_versioned_csv<T: for<'de> Deserialize<'de>>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let expected = format!("#{schema},{CSV_VERSION}");
    if first.trim_end() != expected {
        return Err(Error::format(
            path,
            format!("expected schema line {expected:?}, found {:?}", first.trim_end()),
        ));
    }
    csv::Reader::from_reader(rest.as_bytes())
        .deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    t: f64,
    energy: f64,
    enstrophy: f64,
    chi: f64,
}

pub fn write_timeseries(path: &Path, series: &TimeSeries) -> Result<()> {
    series.validate()?;
    let rows = (0..series.len()).map(|k| SeriesRow {
        t: series.times[k],
        energy: series.energy[k],
        enstrophy: series.enstrophy[k],
        chi: series.chi[k],
    });
    write_versioned_csv(path, TIMESERIES_SCHEMA, rows)
}

pub fn read_timeseries(path: &Path) -> Result<TimeSeries> {
    let rows: Vec<SeriesRow> = read_versioned_csv(path, TIMESERIES_SCHEMA)?;
    let mut s = TimeSeries::default();
    for r in rows {
        s.push_values(r.t, r.energy, r.enstrophy, r.chi);
    }
    s.validate()?;
    Ok(s)
}

#[derive(Serialize, Deserialize)]
struct DiagnosticsRow {
    step: usize,
    t: f64,
    chi: f64,
    a_energy: f64,
    b_energy: f64,
    a_enstrophy: f64,
    b_enstrophy: f64,
    energy_evolved: f64,
    energy_relaxed: f64,
    enstrophy_evolved: f64,
    enstrophy_relaxed: f64,
    divergence_drift: f64,
    reprojected: bool,
}

/// Per-step diagnostics; `steps[k]` produced the state at `times[k]`.
pub fn write_diagnostics(path: &Path, times: &[f64], steps: &[StepDiagnostics]) -> Result<()> {
    let rows = steps.iter().zip(times).enumerate().map(|(k, (d, &t))| {
        let z = d.enstrophy_terms.unwrap_or_default();
        DiagnosticsRow {
            step: k + 1,
            t,
            chi: d.chi,
            a_energy: d.energy_terms.a,
            b_energy: d.energy_terms.b,
            a_enstrophy: z.a,
            b_enstrophy: z.b,
            energy_evolved: d.energy_evolved,
            energy_relaxed: d.energy_relaxed,
            enstrophy_evolved: d.enstrophy_evolved,
            enstrophy_relaxed: d.enstrophy_relaxed,
            divergence_drift: d.divergence_drift,
            reprojected: d.reprojected,
        }
    });
    write_versioned_csv(path, DIAGNOSTICS_SCHEMA, rows)
}

pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    write_versioned_csv(path, TRACE_SCHEMA, trace.iter().copied())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEntry>> {
    read_versioned_csv(path, TRACE_SCHEMA)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: u32,
    #[serde(flatten)]
    body: T,
}

fn read_versioned_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let v: Versioned<T> = read_json(path)?;
    if v.version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", v.version)));
    }
    Ok(v.body)
}

pub fn write_spectra(path: &Path, spectra: &SpectrumSeries) -> Result<()> {
    write_json(
        path,
        &Versioned {
            version: FORMAT_VERSION,
            body: spectra,
        },
    )
}

pub fn read_spectra(path: &Path) -> Result<SpectrumSeries> {
    read_versioned_json(path)
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ReportFile {
    pub reference: String,
    pub horizon: f64,
    pub methods: Vec<ErrorReport>,
}

pub fn write_report(path: &Path, report: &ReportFile) -> Result<()> {
    write_json(
        path,
        &Versioned {
            version: FORMAT_VERSION,
            body: report,
        },
    )
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    read_versioned_json(path)
}

/// Run metadata kept apart from the data files so those stay reproducible
/// byte for byte.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub command: String,
    pub tool_version: String,
    pub created_unix_secs: u64,
    pub config: String,
}

pub fn write_meta(dir: &Path, command: &str, config_toml: &str) -> Result<()> {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &dir.join("meta.json"),
        &RunMeta {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_secs: created,
            config: config_toml.to_string(),
        },
    )
}
