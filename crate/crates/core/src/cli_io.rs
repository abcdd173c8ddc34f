//! Configuration, on-disk formats, and the drivers behind the command line.
//!
//! Dumps come in two layouts. CSV has a `x,y,re,im,prob` header and one row
//! per site. The binary layout is
//!
//! ```text
//! "CAMF" | version u32 = 1 | N u64 | time f64 | N x (x, y, re, im) f64
//! ```
//!
//! all little-endian, `24 + 32 N` bytes in total. Every file is written to a
//! temporary sibling and renamed into place.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};

use serde::{Deserialize, Serialize};

use crate::dispersion::BandParams;
use crate::error::{Error, Result};
use crate::experiments::{
    run_scenario_with, EvolveSpec, FieldDump, Geometry, LatticeSpec, RunSummary, Scenario, SourceSpec,
};
use crate::hamiltonian::PropagatorConfig;
use crate::lattice::{Bond, Lattice, SiteId};
use crate::permittivity::{case_study, permittivity_map, solve_baseline_spacing, CavityParams, PermittivityMap};
use crate::C64;

/// Environment variable that overrides `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "CAMCLOAK_OUTPUT_DIR";

const MAGIC: &[u8; 4] = b"CAMF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const RECORD_LEN: usize = 32;
const CSV_HEADER: &str = "x,y,re,im,prob";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub physics: Physics,
    pub lattice: LatticeSection,
    pub source: SourceSection,
    pub evolve: EvolveSection,
    pub permittivity: PermittivitySection,
    pub output: OutputSection,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub omega: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSection {
    pub nx: usize,
    pub ny: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cloak: Option<CloakSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hole: Option<HoleSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloakSection {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoleSection {
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Point,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSection {
    #[serde(rename = "type")]
    pub kind: SourceKind,
    /// Point-source energy; `omega - 3.5 kappa` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    /// Packet wavevector in units of `1/d`.
    pub k: [f64; 2],
    pub sigma: f64,
    pub n_modes: usize,
    /// Source center; `b + 3 sigma` to the left of the cloak (or hole) center
    /// when unset, the grid center on a uniform lattice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    /// Boundary limit when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    pub dump_interval: f64,
    pub override_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PermittivitySection {
    pub lambda_m: f64,
    pub eps_a: f64,
    /// Inter-site permittivity of the undeformed lattice; fixes the baseline
    /// spacing when `d_physical_m` is unset.
    pub eps_b_baseline: f64,
    pub kappa_target: f64,
    pub w_over_lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_physical_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    Csv,
    Binary,
}

impl DumpFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DumpFormat::Csv => "csv",
            DumpFormat::Binary => "camf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: DumpFormat,
}

impl Default for Physics {
    fn default() -> Self {
        Physics { omega: 0.0, kappa: 1.0 }
    }
}

impl Default for LatticeSection {
    fn default() -> Self {
        LatticeSection { nx: 60, ny: 60, cloak: None, hole: None, center: None }
    }
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            kind: SourceKind::Point,
            energy: None,
            k: [std::f64::consts::FRAC_PI_2, 0.0],
            sigma: 3.0,
            n_modes: 64,
            center: None,
        }
    }
}

impl Default for EvolveSection {
    fn default() -> Self {
        EvolveSection { t_final: None, dump_interval: 0.5, override_boundary: false }
    }
}

impl Default for PermittivitySection {
    fn default() -> Self {
        PermittivitySection {
            lambda_m: case_study::LAMBDA_M,
            eps_a: case_study::EPS_A,
            eps_b_baseline: case_study::EPS_B,
            kappa_target: case_study::KAPPA_TARGET,
            w_over_lambda: case_study::W_OVER_LAMBDA,
            d_physical_m: None,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), format: DumpFormat::Csv }
    }
}

/// Geometry selector for overriding a loaded config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    Uniform,
    Cloak,
    Hole,
}

fn bad(key: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {reason}"))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.physics;
        if !p.omega.is_finite() {
            return Err(bad("physics.omega", format!("must be finite, got {}", p.omega)));
        }
        positive("physics.kappa", p.kappa)?;

        let l = &self.lattice;
        if l.nx == 0 || l.ny == 0 {
            return Err(bad("lattice.nx/lattice.ny", format!("dimensions must be positive, got {} x {}", l.nx, l.ny)));
        }
        if l.cloak.is_some() && l.hole.is_some() {
            return Err(bad("lattice.cloak/lattice.hole", "a lattice carries a cloak or a hole, not both"));
        }
        if let Some(c) = l.cloak {
            positive("lattice.cloak.a", c.a)?;
            positive("lattice.cloak.b", c.b)?;
            if c.a >= c.b {
                return Err(bad(
                    "lattice.cloak.a/lattice.cloak.b",
                    format!("need a < b, got a = {} and b = {}", c.a, c.b),
                ));
            }
        }
        if let Some(h) = l.hole {
            positive("lattice.hole.radius", h.radius)?;
        }
        if let Some(c) = l.center {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(bad("lattice.center", "must be finite"));
            }
        }

        let s = &self.source;
        positive("source.sigma", s.sigma)?;
        if s.kind == SourceKind::Point {
            if s.n_modes == 0 {
                return Err(bad("source.n_modes", "need at least one mode"));
            }
            let e = self.source_energy();
            let (lo, hi) = (p.omega - 4.0 * p.kappa, p.omega + 4.0 * p.kappa);
            if !(e > lo && e < hi) {
                return Err(bad("source.energy", format!("{e} is outside the open band ({lo}, {hi})")));
            }
        }
        if !s.k.iter().all(|v| v.is_finite()) {
            return Err(bad("source.k", "must be finite"));
        }

        let ev = &self.evolve;
        positive("evolve.dump_interval", ev.dump_interval)?;
        if let Some(t) = ev.t_final {
            positive("evolve.t_final", t)?;
        }

        let pm = &self.permittivity;
        positive("permittivity.lambda_m", pm.lambda_m)?;
        positive("permittivity.kappa_target", pm.kappa_target)?;
        positive("permittivity.w_over_lambda", pm.w_over_lambda)?;
        if !(pm.eps_a > 1.0 && pm.eps_a.is_finite()) {
            return Err(bad("permittivity.eps_a", format!("must exceed 1, got {}", pm.eps_a)));
        }
        if !(pm.eps_b_baseline >= 1.0 && pm.eps_b_baseline < pm.eps_a) {
            return Err(bad(
                "permittivity.eps_b_baseline",
                format!("need 1 <= eps_b < eps_a = {}, got {}", pm.eps_a, pm.eps_b_baseline),
            ));
        }
        if let Some(d) = pm.d_physical_m {
            positive("permittivity.d_physical_m", d)?;
        }
        Ok(())
    }

    pub fn source_energy(&self) -> f64 {
        self.source.energy.unwrap_or(self.physics.omega - 3.5 * self.physics.kappa)
    }

    pub fn band(&self) -> Result<BandParams> {
        BandParams::new(self.physics.omega, self.physics.kappa, 1.0)
    }

    /// Switch geometry. A hole made from a cloak takes radius `a`; a cloak
    /// made from a hole takes `a = radius, b = 2 radius`. The source stays
    /// where the current geometry put it, so variants remain comparable.
    pub fn set_geometry(&mut self, kind: GeometryKind) {
        if self.source.center.is_none() {
            self.source.center = Some(self.default_source_center());
        }
        let l = &mut self.lattice;
        match kind {
            GeometryKind::Uniform => {
                l.cloak = None;
                l.hole = None;
            }
            GeometryKind::Cloak => {
                if l.cloak.is_none() {
                    let r = l.hole.map(|h| h.radius).unwrap_or(5.0);
                    l.cloak = Some(CloakSection { a: r, b: 2.0 * r });
                }
                l.hole = None;
            }
            GeometryKind::Hole => {
                if l.hole.is_none() {
                    let r = l.cloak.map(|c| c.a).unwrap_or(5.0);
                    l.hole = Some(HoleSection { radius: r });
                }
                l.cloak = None;
            }
        }
    }

    /// Switch to the paper-scale lattice: 240 x 240 with `a = 50, b = 100`,
    /// `sigma = 3`, run to `t = 120` with dumps every 1.2. Explicit source
    /// centers are dropped so the default placement follows the new cloak.
    pub fn apply_paper_scale(&mut self) {
        let l = &mut self.lattice;
        l.nx = 240;
        l.ny = 240;
        l.center = None;
        if l.cloak.is_some() || l.hole.is_none() {
            l.cloak = Some(CloakSection { a: 50.0, b: 100.0 });
        }
        if l.hole.is_some() {
            l.hole = Some(HoleSection { radius: 50.0 });
        }
        self.source.sigma = 3.0;
        self.source.center = None;
        self.evolve.t_final = Some(120.0);
        self.evolve.dump_interval = 1.2;
    }

    pub fn lattice_spec(&self) -> LatticeSpec {
        let l = &self.lattice;
        let geometry = match (l.cloak, l.hole) {
            (Some(c), _) => Geometry::Cloak { inner: c.a, outer: c.b },
            (None, Some(h)) => Geometry::Hole { radius: h.radius },
            (None, None) => Geometry::Uniform,
        };
        LatticeSpec { nx: l.nx, ny: l.ny, center: l.center, geometry }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.validate()?;
        let lattice = self.lattice_spec();
        let s = &self.source;
        let center = s.center.unwrap_or_else(|| self.default_source_center());
        let source = match s.kind {
            SourceKind::Point => {
                SourceSpec::PointSource { energy: self.source_energy(), sigma: s.sigma, n_modes: s.n_modes, center }
            }
            SourceKind::Gaussian => SourceSpec::GaussianPacket { k: s.k, sigma: s.sigma, center },
        };
        Ok(Scenario {
            band: self.band()?,
            lattice,
            source,
            evolve: EvolveSpec {
                t_final: self.evolve.t_final,
                dump_interval: self.evolve.dump_interval,
                override_boundary: self.evolve.override_boundary,
            },
            propagator: PropagatorConfig::default(),
            seed: self.seed,
        })
    }

    fn default_source_center(&self) -> [f64; 2] {
        let lattice = self.lattice_spec();
        let c = lattice.center();
        match lattice.outer_radius() {
            Some(b) => [c[0] - b - 3.0 * self.source.sigma, c[1]],
            None => c,
        }
    }

    pub fn cavity_params(&self) -> Result<CavityParams> {
        let pm = &self.permittivity;
        CavityParams::from_wavelength(pm.lambda_m, pm.eps_a, pm.w_over_lambda)
    }

    /// Physical length of one lattice unit: `d_physical_m`, or the spacing at
    /// which the baseline stack couples at `kappa_target`.
    pub fn physical_spacing(&self) -> Result<f64> {
        match self.permittivity.d_physical_m {
            Some(d) => Ok(d),
            None => {
                let stack = self.cavity_params()?.with_eps_b(self.permittivity.eps_b_baseline)?;
                solve_baseline_spacing(stack, self.permittivity.kappa_target)
            }
        }
    }

    /// Output directory: the environment override first, then `output.dir`.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output.dir.clone())
    }
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Config::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Amplitudes to store. Intensity-only dumps are written as `(sqrt p, 0)`.
fn stored_amplitudes(dump: &FieldDump) -> Vec<C64> {
    match &dump.amplitudes {
        Some(a) => a.clone(),
        None => dump.prob.iter().map(|p| C64::new(p.sqrt(), 0.0)).collect(),
    }
}

pub fn encode_binary(dump: &FieldDump) -> Vec<u8> {
    let amps = stored_amplitudes(dump);
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * dump.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dump.len() as u64).to_le_bytes());
    out.extend_from_slice(&dump.time.to_le_bytes());
    for (p, a) in dump.positions.iter().zip(&amps) {
        for v in [p[0], p[1], a.re, a.im] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Sites get ids in file order; `prob` is recomputed as `|amplitude|^2`.
pub fn decode_binary(bytes: &[u8], path: &Path) -> Result<FieldDump> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(path, "bad magic, not a CAMF file"));
    }
    let word = |k: usize| -> [u8; 8] { bytes[k..k + 8].try_into().unwrap() };
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(word(8));
    let time = f64::from_le_bytes(word(16));
    let expected = (n as u128) * RECORD_LEN as u128 + HEADER_LEN as u128;
    if bytes.len() as u128 != expected {
        return Err(format_err(path, format!("length {} does not match {n} sites ({expected} bytes)", bytes.len())));
    }
    let n = n as usize;
    let mut positions = Vec::with_capacity(n);
    let mut amps = Vec::with_capacity(n);
    for k in 0..n {
        let base = HEADER_LEN + RECORD_LEN * k;
        let f = |o: usize| f64::from_le_bytes(word(base + 8 * o));
        positions.push([f(0), f(1)]);
        amps.push(C64::new(f(2), f(3)));
    }
    Ok(assemble_dump(time, positions, amps, None))
}

fn assemble_dump(time: f64, positions: Vec<[f64; 2]>, amps: Vec<C64>, prob: Option<Vec<f64>>) -> FieldDump {
    let ids: Arc<[SiteId]> = (0..positions.len() as u32).map(SiteId).collect();
    let prob = prob.unwrap_or_else(|| amps.iter().map(|a| a.norm_sqr()).collect());
    FieldDump { time, ids, positions: positions.into(), prob, amplitudes: Some(amps) }
}

/// CSV text; the dump time goes in a leading `# time = ...` comment line.
pub fn encode_csv(dump: &FieldDump) -> String {
    let amps = stored_amplitudes(dump);
    let mut out = String::with_capacity(32 + 120 * dump.len());
    let _ = writeln!(out, "# time = {:.16e}", dump.time);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for ((p, a), w) in dump.positions.iter().zip(&amps).zip(&dump.prob) {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", p[0], p[1], a.re, a.im, w);
    }
    out
}

pub fn decode_csv(text: &str, path: &Path) -> Result<FieldDump> {
    let mut lines = text.lines().enumerate();
    let mut time = None;
    let mut header = false;
    let (mut positions, mut amps, mut prob) = (Vec::new(), Vec::new(), Vec::new());
    for (no, line) in lines.by_ref() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("time =") {
                time = Some(v.trim().parse::<f64>().map_err(|e| format_err(path, format!("line {}: {e}", no + 1)))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if !header {
            if line != CSV_HEADER {
                return Err(format_err(path, format!("line {}: expected header `{CSV_HEADER}`", no + 1)));
            }
            header = true;
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, format!("line {}: {e}", no + 1)))?;
        if vals.len() != 5 {
            return Err(format_err(path, format!("line {}: expected 5 columns, got {}", no + 1, vals.len())));
        }
        positions.push([vals[0], vals[1]]);
        amps.push(C64::new(vals[2], vals[3]));
        prob.push(vals[4]);
    }
    if !header {
        return Err(format_err(path, "missing header"));
    }
    let time = time.ok_or_else(|| format_err(path, "missing `# time = ...` line"))?;
    Ok(assemble_dump(time, positions, amps, Some(prob)))
}

pub fn write_dump(dump: &FieldDump, format: DumpFormat, path: &Path) -> Result<()> {
    match format {
        DumpFormat::Csv => write_atomic(path, encode_csv(dump).as_bytes()),
        DumpFormat::Binary => write_atomic(path, &encode_binary(dump)),
    }
}

/// Read either format; binary files are recognized by their magic bytes.
pub fn read_dump(path: &Path) -> Result<FieldDump> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes, path)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| format_err(path, "neither CAMF nor UTF-8 CSV"))?;
        decode_csv(text, path)
    }
}

pub fn dump_file_name(index: usize, format: DumpFormat) -> String {
    format!("dump_{index:05}.{}", format.extension())
}

/// All `dump_*` files of a run directory, in index order.
pub fn read_dump_dir(dir: &Path) -> Result<Vec<FieldDump>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("dump_")))
        .collect();
    if files.is_empty() {
        return Err(format_err(dir, "no dump files"));
    }
    files.sort();
    files.iter().map(|p| read_dump(p)).collect()
}

/// Run metadata written next to the dumps as `run.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub t_final: f64,
    pub dump_interval: f64,
    pub dumps: usize,
    pub boundary_limit: f64,
    pub boundary_overridden: bool,
    pub format: DumpFormat,
}

/// Run a scenario and write its dumps into `dir`. Dumps are handed to a
/// writer thread through a queue of depth 4, so propagation blocks when
/// writing falls behind. Everything goes to a temporary sibling directory
/// that replaces `dir` only once the run has succeeded.
pub fn run_to_dir(s: &Scenario, dir: &Path, format: DumpFormat) -> Result<RunSummary> {
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = tempfile::Builder::new().prefix(".camcloak-run").tempdir_in(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging_path = staging.path().to_path_buf();

    let (tx, rx) = mpsc::sync_channel::<FieldDump>(4);
    let writer = {
        let staging_path = staging_path.clone();
        std::thread::spawn(move || -> Result<()> {
            for (k, dump) in rx.into_iter().enumerate() {
                let path = staging_path.join(dump_file_name(k, format));
                let bytes = match format {
                    DumpFormat::Csv => encode_csv(&dump).into_bytes(),
                    DumpFormat::Binary => encode_binary(&dump),
                };
                let mut f = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
                f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
                f.flush().map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        })
    };
    let run = run_scenario_with(s, |dump| {
        tx.send(dump).map_err(|_| Error::Config("dump writer stopped".into()))
    });
    drop(tx);
    let written = writer.join().expect("dump writer panicked");
    // A writer failure is the root cause of a send failure, so report it first.
    written?;
    let summary = run?;

    let meta = RunMetadata {
        seed: s.seed,
        t_final: summary.t_final,
        dump_interval: s.evolve.dump_interval,
        dumps: summary.dumps,
        boundary_limit: summary.boundary_limit,
        boundary_overridden: summary.boundary_overridden,
        format,
    };
    let meta_path = staging_path.join("run.toml");
    fs::write(&meta_path, toml::to_string(&meta).expect("metadata serializes")).map_err(|e| Error::io(&meta_path, e))?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let kept = staging.keep();
    fs::rename(&kept, dir).map_err(|e| Error::io(dir, e))?;
    Ok(summary)
}

/// Residual report between two dump directories. Sites are matched by
/// position within the region `r > radius`, which is where cloaked and
/// uniform geometries coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub dumps: usize,
    pub region_sites: usize,
    pub cloak_residual: f64,
    pub max_amplitude_difference: f64,
}

impl CompareReport {
    pub fn to_text(&self) -> String {
        format!(
            "dumps={}\nregion_sites={}\ncloak_residual={:.6e}\nmax_amplitude_difference={:.6e}\n",
            self.dumps, self.region_sites, self.cloak_residual, self.max_amplitude_difference
        )
    }
}

fn position_key(p: [f64; 2]) -> (i64, i64) {
    ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64)
}

pub fn compare_dumps(test: &[FieldDump], reference: &[FieldDump], center: [f64; 2], radius: f64) -> Result<CompareReport> {
    if test.len() != reference.len() || test.is_empty() {
        return Err(Error::DumpMismatch(format!("{} test dumps vs {} reference dumps", test.len(), reference.len())));
    }
    let outside = |p: [f64; 2]| (p[0] - center[0]).hypot(p[1] - center[1]) > radius;
    let index: HashMap<(i64, i64), usize> =
        test[0].positions.iter().enumerate().filter(|(_, p)| outside(**p)).map(|(k, p)| (position_key(*p), k)).collect();
    let pairs: Vec<(usize, usize)> = reference[0]
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| outside(**p))
        .filter_map(|(k, p)| index.get(&position_key(*p)).map(|&t| (t, k)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut residual = 0.0f64;
    let mut amp = 0.0f64;
    for (t, r) in test.iter().zip(reference) {
        if (t.time - r.time).abs() > 1e-12 * r.time.abs().max(1.0) {
            return Err(Error::DumpMismatch(format!("dump times {} and {} differ", t.time, r.time)));
        }
        let (mut diff, mut norm) = (0.0, 0.0);
        for &(it, ir) in &pairs {
            let d = t.prob[it] - r.prob[ir];
            diff += d * d;
            norm += r.prob[ir] * r.prob[ir];
            if let (Some(ta), Some(ra)) = (&t.amplitudes, &r.amplitudes) {
                amp = amp.max((ta[it] - ra[ir]).norm());
            }
        }
        let ratio = if diff == 0.0 {
            0.0
        } else if norm == 0.0 {
            f64::INFINITY
        } else {
            (diff / norm).sqrt()
        };
        residual = residual.max(ratio);
    }
    Ok(CompareReport { dumps: test.len(), region_sites: pairs.len(), cloak_residual: residual, max_amplitude_difference: amp })
}

pub fn compare_dirs(test: &Path, reference: &Path, center: [f64; 2], radius: f64) -> Result<CompareReport> {
    compare_dumps(&read_dump_dir(test)?, &read_dump_dir(reference)?, center, radius)
}

/// Plain-text lattice: `# extent nx ny`, then `id x y` rows after a
/// `# sites` line and `id id` rows after a `# bonds` line.
pub fn encode_lattice(lat: &Lattice) -> String {
    let (nx, ny) = lat.extent();
    let mut out = String::with_capacity(64 * lat.len());
    let _ = writeln!(out, "# camcloak lattice v1\n# extent {nx} {ny}\n# sites: id x y");
    for (id, p) in lat.ids().iter().zip(lat.positions()) {
        let _ = writeln!(out, "{} {:.16e} {:.16e}", id.0, p[0], p[1]);
    }
    out.push_str("# bonds: i j\n");
    for (a, b) in lat.bond_ids() {
        let _ = writeln!(out, "{} {}", a.0, b.0);
    }
    out
}

/// The loaded positions become the reference geometry, so a cloak drawn from
/// a file is not recognized as transformed.
pub fn decode_lattice(text: &str, path: &Path) -> Result<Lattice> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Sites,
        Bonds,
    }
    let mut section = Section::Preamble;
    let mut extent = (0, 0);
    let (mut ids, mut positions, mut raw_bonds) = (Vec::new(), Vec::new(), Vec::new());
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        let at = |reason: String| format_err(path, format!("line {}: {reason}", no + 1));
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(e) = rest.strip_prefix("extent") {
                let v: Vec<usize> = e.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| at(format!("{e}")))?;
                if v.len() != 2 {
                    return Err(at("extent needs two integers".into()));
                }
                extent = (v[0], v[1]);
            } else if rest.starts_with("sites") {
                section = Section::Sites;
            } else if rest.starts_with("bonds") {
                section = Section::Bonds;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Preamble => return Err(at("data before a `# sites` line".into())),
            Section::Sites => {
                if tokens.len() != 3 {
                    return Err(at(format!("site rows have 3 fields, got {}", tokens.len())));
                }
                let id: u32 = tokens[0].parse().map_err(|e| at(format!("{e}")))?;
                let x: f64 = tokens[1].parse().map_err(|e| at(format!("{e}")))?;
                let y: f64 = tokens[2].parse().map_err(|e| at(format!("{e}")))?;
                ids.push(SiteId(id));
                positions.push([x, y]);
            }
            Section::Bonds => {
                if tokens.len() != 2 {
                    return Err(at(format!("bond rows have 2 fields, got {}", tokens.len())));
                }
                let a: u32 = tokens[0].parse().map_err(|e| at(format!("{e}")))?;
                let b: u32 = tokens[1].parse().map_err(|e| at(format!("{e}")))?;
                raw_bonds.push((SiteId(a), SiteId(b), no + 1));
            }
        }
    }
    let index: HashMap<SiteId, usize> = ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
    let bonds = raw_bonds
        .into_iter()
        .map(|(a, b, no)| match (index.get(&a), index.get(&b)) {
            (Some(&i), Some(&j)) => Ok(Bond::new(i, j)),
            _ => Err(format_err(path, format!("line {no}: bond references an unknown site"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Lattice::from_parts(ids, positions, bonds, extent).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_lattice(lat: &Lattice, path: &Path) -> Result<()> {
    write_atomic(path, encode_lattice(lat).as_bytes())
}

pub fn read_lattice(path: &Path) -> Result<Lattice> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_lattice(&text, path)
}

/// Per-bond design for a lattice under the config's permittivity section.
/// Midpoint radii are measured from `lattice.center`, or the center of the
/// lattice's bounding box.
pub fn design_permittivity(lat: &Lattice, cfg: &Config) -> Result<PermittivityMap> {
    let params = cfg.cavity_params()?;
    let d = cfg.physical_spacing()?;
    permittivity_map(lat, &params, cfg.permittivity.kappa_target, d, cfg.lattice.center)
}

/// `i,j,midpoint_r,length_m,eps_b`; unreachable bonds get `nan`.
pub fn encode_permittivity_csv(map: &PermittivityMap) -> String {
    let mut out = String::from("i,j,midpoint_r,length_m,eps_b\n");
    for e in &map.entries {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e}",
            e.sites.0 .0,
            e.sites.1 .0,
            e.midpoint_radius,
            e.length_m,
            e.eps_b().unwrap_or(f64::NAN)
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::run_scenario;
    use crate::lattice::{apply_cloak_transform, build_square_lattice, CloakSpec};

    fn configs_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
    }

    fn sample_dump() -> FieldDump {
        let mut s = Scenario::small_beam_demo();
        s.evolve.t_final = Some(1.0);
        run_scenario(&s).unwrap().pop().unwrap()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = Config::from_toml_str("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.lattice.nx, 60);
        assert_eq!(cfg.output.format, DumpFormat::Csv);
        let s = cfg.scenario().unwrap();
        assert_eq!(s.lattice.geometry, Geometry::Uniform);
        assert_eq!(s.source, SourceSpec::PointSource { energy: -3.5, sigma: 3.0, n_modes: 64, center: [29.5, 29.5] });
    }

    #[test]
    fn unknown_keys_are_located() {
        let err = Config::from_toml_str("[lattice]\nnx = 10\nnz = 3\n").unwrap_err().to_string();
        assert!(err.contains("nz") && err.contains("line 3"), "{err}");
        let err = Config::from_toml_str("[lattice.cloak]\na = 1\nb = 2\nc = 3\n").unwrap_err().to_string();
        assert!(err.contains('c') && err.contains("line 4"), "{err}");
    }

    #[test]
    fn cloak_radii_rejection_names_both_keys() {
        let err = Config::from_toml_str("[lattice.cloak]\na = 10\nb = 5\n").unwrap_err().to_string();
        assert!(err.contains("lattice.cloak.a") && err.contains("lattice.cloak.b"), "{err}");
        let e = Config::from_toml_str("[lattice.cloak]\na = 10\nb = 5\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn validation_names_keys() {
        for (text, key) in [
            ("[physics]\nkappa = -1\n", "physics.kappa"),
            ("[source]\nenergy = 5.0\n", "source.energy"),
            ("[evolve]\ndump_interval = 0\n", "evolve.dump_interval"),
            ("[permittivity]\neps_b_baseline = 12\n", "permittivity.eps_b_baseline"),
            ("[lattice.cloak]\na = 1\nb = 2\n[lattice.hole]\nradius = 1\n", "lattice.cloak/lattice.hole"),
        ] {
            let err = Config::from_toml_str(text).unwrap_err().to_string();
            assert!(err.contains(key), "{text:?}: {err}");
        }
    }

    #[test]
    fn case_study_preset_matches_reference_numbers() {
        let cfg = load_config(&configs_dir().join("case_study.toml")).unwrap();
        let p = &cfg.permittivity;
        assert_eq!(p.lambda_m, 1.5e-6);
        assert_eq!(p.eps_a, 11.7);
        assert_eq!(p.eps_b_baseline, 2.3);
        assert_eq!(p.kappa_target, 1e14);
        assert_eq!(p.w_over_lambda, 0.5);
        let d = cfg.physical_spacing().unwrap();
        assert!((d / 6.805_452_748_645_472e-7 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shipped_configs_load_and_round_trip() {
        for entry in fs::read_dir(configs_dir()).unwrap() {
            let path = entry.unwrap().path();
            let cfg = load_config(&path).unwrap();
            cfg.scenario().unwrap();
            let again = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(again, cfg, "{}", path.display());
            assert_eq!(again.to_toml_string(), cfg.to_toml_string());
        }
    }

    #[test]
    fn geometry_switching() {
        let mut cfg = Config::from_toml_str("[lattice.cloak]\na = 5\nb = 10\n").unwrap();
        let src = cfg.scenario().unwrap().source.center();
        cfg.set_geometry(GeometryKind::Hole);
        assert_eq!(cfg.lattice_spec().geometry, Geometry::Hole { radius: 5.0 });
        assert_eq!(cfg.scenario().unwrap().source.center(), src);
        cfg.set_geometry(GeometryKind::Uniform);
        assert_eq!(cfg.lattice_spec().geometry, Geometry::Uniform);
        cfg.apply_paper_scale();
        assert_eq!(cfg.lattice_spec().geometry, Geometry::Cloak { inner: 50.0, outer: 100.0 });
        assert_eq!((cfg.lattice.nx, cfg.lattice.ny), (240, 240));
        assert_eq!(cfg.evolve.t_final, Some(120.0));
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dump = sample_dump();
        let bytes = encode_binary(&dump);
        assert_eq!(bytes.len(), 24 + 32 * dump.len());
        let back = decode_binary(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.time.to_bits(), dump.time.to_bits());
        assert_eq!(back.positions, dump.positions);
        assert_eq!(back.amplitudes, dump.amplitudes);
        assert_eq!(back.prob, dump.prob);
        assert_eq!(encode_binary(&back), bytes);
    }

    #[test]
    fn csv_round_trip() {
        let dump = sample_dump();
        let back = decode_csv(&encode_csv(&dump), Path::new("x")).unwrap();
        assert_eq!(back.time, dump.time);
        let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
        for k in 0..dump.len() {
            assert!(rel(back.prob[k], dump.prob[k]) <= 1e-15);
            let (a, b) = (back.amplitudes.as_ref().unwrap()[k], dump.amplitudes.as_ref().unwrap()[k]);
            assert!(rel(a.re, b.re) <= 1e-15 && rel(a.im, b.im) <= 1e-15);
            assert_eq!(back.positions[k], dump.positions[k]);
        }
    }

    #[test]
    fn empty_dump_is_24_bytes() {
        let dump = FieldDump { time: 2.5, ids: Arc::from(vec![]), positions: Arc::from(vec![]), prob: vec![], amplitudes: Some(vec![]) };
        let bytes = encode_binary(&dump);
        assert_eq!(bytes.len(), 24);
        let back = decode_binary(&bytes, Path::new("x")).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.time, 2.5);
    }

    #[test]
    fn corrupt_binaries_are_rejected() {
        let bytes = encode_binary(&sample_dump());
        let p = Path::new("x");
        assert!(decode_binary(&bytes[..bytes.len() - 1], p).is_err());
        assert!(decode_binary(&bytes[..10], p).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_binary(&wrong, p).is_err());
        let mut wrong = bytes;
        wrong[4] = 2;
        assert!(matches!(decode_binary(&wrong, p), Err(Error::Format { .. })));
    }

    #[test]
    fn intensity_only_dumps_store_root_probability() {
        let mut dump = sample_dump();
        dump.amplitudes = None;
        let back = decode_binary(&encode_binary(&dump), Path::new("x")).unwrap();
        for (a, b) in back.prob.iter().zip(&dump.prob) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b);
        }
    }

    #[test]
    fn lattice_file_round_trip() {
        let lat = build_square_lattice(7, 5).unwrap();
        let lat = apply_cloak_transform(&lat, &CloakSpec::new(1.0, 2.0, [3.0, 2.0]).unwrap()).unwrap();
        let back = decode_lattice(&encode_lattice(&lat), Path::new("x")).unwrap();
        assert_eq!(back.ids(), lat.ids());
        assert_eq!(back.positions(), lat.positions());
        assert_eq!(back.bonds(), lat.bonds());
        assert_eq!(back.extent(), (7, 5));
        assert!(decode_lattice("# sites\n0 1\n", Path::new("x")).is_err());
        assert!(decode_lattice("# sites\n0 0 0\n# bonds\n0 9\n", Path::new("x")).is_err());
    }

    #[test]
    fn run_dir_is_written_whole() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let mut s = Scenario::small_beam_demo();
        s.evolve.t_final = Some(2.0);
        let summary = run_to_dir(&s, &dir, DumpFormat::Binary).unwrap();
        assert_eq!(summary.dumps, 5);
        let dumps = read_dump_dir(&dir).unwrap();
        assert_eq!(dumps.len(), 5);
        assert_eq!(dumps, run_scenario(&s).unwrap().into_iter().map(|d| {
            assemble_dump(d.time, d.positions.to_vec(), d.amplitudes.clone().unwrap(), None)
        }).collect::<Vec<_>>());
        let meta: RunMetadata = toml::from_str(&fs::read_to_string(dir.join("run.toml")).unwrap()).unwrap();
        assert_eq!(meta.dumps, 5);
        // Only the final directory remains.
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);

        // A failing run leaves the previous output untouched.
        let mut bad = s.clone();
        bad.source = SourceSpec::GaussianPacket { k: [0.0, 0.0], sigma: 100.0, center: [0.0, 0.0] };
        assert!(run_to_dir(&bad, &dir, DumpFormat::Binary).is_err());
        assert_eq!(read_dump_dir(&dir).unwrap().len(), 5);
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
    }

    #[test]
    fn compare_matches_sites_by_position() {
        let s = Scenario::small_beam_demo();
        let mut s = s.clone();
        s.evolve.t_final = Some(3.0);
        let (u, c, h) = s.variants().unwrap();
        let (u, c, h) = (run_scenario(&u).unwrap(), run_scenario(&c).unwrap(), run_scenario(&h).unwrap());
        let center = s.lattice.center();
        let cloak = compare_dumps(&c, &u, center, 10.0).unwrap();
        assert_eq!(cloak.cloak_residual, 0.0);
        assert_eq!(cloak.max_amplitude_difference, 0.0);
        let hole = compare_dumps(&h, &u, center, 10.0).unwrap();
        assert_eq!(hole.region_sites, cloak.region_sites);
        assert!(compare_dumps(&c, &u, center, 1e9).is_err());
        let text = cloak.to_text();
        assert!(text.lines().all(|l| l.contains('=')));
    }

    #[test]
    fn permittivity_csv_layout() {
        let lat = build_square_lattice(6, 6).unwrap();
        let lat = apply_cloak_transform(&lat, &CloakSpec::new(1.0, 2.0, [2.5, 2.5]).unwrap()).unwrap();
        let cfg = Config::default();
        let map = design_permittivity(&lat, &cfg).unwrap();
        let csv = encode_permittivity_csv(&map);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("i,j,midpoint_r,length_m,eps_b"));
        assert_eq!(lines.count(), lat.bonds().len());
    }
}
