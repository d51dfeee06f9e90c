//! Run configuration: INI file plus `--section.key=value` overrides.
//!
//! ```ini
//! [model]
//! U0 = 10
//! eta = 1
//!
//! [solver]
//! dt = 1e-5
//! t_final = 0.1
//!
//! [initial]
//! density = step
//! energy = 1
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use optlattice::harness::{Axis, ErrorVariable};
use optlattice::initial::{InitialCondition, Profile};
use optlattice::kinetics::{ModelParams, MomentPair, QuadratureSpec};
use optlattice::solver::{step_index, PeriodicGrid1D, Scheme, SolverConfig};
use thiserror::Error;

use crate::output::fmt_float;

/// Where a configuration value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    File { origin: String, line: usize },
    Override(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::File { origin, line } => write!(f, "{origin}, line {line}"),
            Location::Override(arg) => write!(f, "override '{arg}'"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{location}: {message}")]
    Parse { location: Location, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ConfigError {
    /// Line number of a parse error raised while reading a file.
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Parse {
                location: Location::File { line, .. },
                ..
            } => Some(*line),
            _ => None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Convergence,
    Moments,
    Invert,
    VerifyIntegrals,
}

impl Command {
    fn runs_solver(self) -> bool {
        matches!(self, Command::Simulate | Command::Convergence)
    }
}

/// Initial profile given either as a preset or as a column of a snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    Preset(Profile),
    File(PathBuf),
}

impl fmt::Display for ProfileSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileSource::Preset(p) => write!(f, "{p}"),
            ProfileSource::File(path) => write!(f, "file:{}", path.display()),
        }
    }
}

impl FromStr for ProfileSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix("file:") {
            if path.trim().is_empty() {
                return Err("file: needs a path".into());
            }
            return Ok(ProfileSource::File(PathBuf::from(path.trim())));
        }
        s.parse::<Profile>()
            .map(ProfileSource::Preset)
            .map_err(|e| e.to_string())
    }
}

/// Reads column `column` (`n` or `W`) of a snapshot CSV.
pub fn read_snapshot_column(path: &Path, column: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = |m: String| invalid(format!("snapshot {}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => ConfigError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => bad(format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| bad(format!("no '{column}' column")))?;
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = record.get(idx).unwrap_or("");
        let v = field
            .trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("row {}: '{field}' is not a number", row + 2)))?;
        values.push(v);
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialSpec {
    pub density: ProfileSource,
    pub energy: ProfileSource,
}

impl InitialSpec {
    pub fn resolve(&self) -> Result<InitialCondition, ConfigError> {
        let load = |src: &ProfileSource, column: &str| -> Result<Profile, ConfigError> {
            Ok(match src {
                ProfileSource::Preset(p) => p.clone(),
                ProfileSource::File(path) => Profile::Values(read_snapshot_column(path, column)?),
            })
        };
        Ok(InitialCondition::new(
            load(&self.density, "n")?,
            load(&self.energy, "W")?,
        ))
    }

    fn uses_files(&self) -> bool {
        matches!(self.density, ProfileSource::File(_))
            || matches!(self.energy, ProfileSource::File(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Snapshot times in addition to the final time.
    pub times: Vec<f64>,
    /// Timeseries row stride in steps.
    pub every: usize,
    pub plot: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub axis: Axis,
    pub grids: Vec<usize>,
    pub ref_cells: usize,
    pub dts: Vec<f64>,
    pub ref_dt: f64,
    pub variable: ErrorVariable,
    /// Expected order for `--check`; defaults to 2 in space and 1 in time.
    pub expected_order: Option<f64>,
    pub tolerance: f64,
}

impl StudySpec {
    pub fn expected(&self) -> f64 {
        self.expected_order.unwrap_or(match self.axis {
            Axis::Space => 2.0,
            Axis::Time => 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticsSpec {
    pub lambda0: f64,
    pub lambda1: f64,
    pub n: f64,
    pub energy: f64,
    /// Quadrature points per direction; `None` picks the default rule.
    pub points: Option<usize>,
}

impl KineticsSpec {
    pub fn quadrature(&self, params: &ModelParams) -> Result<QuadratureSpec, ConfigError> {
        match self.points {
            Some(m) => QuadratureSpec::new(m, params.d())
                .map_err(|e| invalid(format!("kinetics.points: {e}"))),
            None => Ok(QuadratureSpec::for_params(params)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelParams,
    pub solver: SolverConfig,
    pub cells: usize,
    pub initial: InitialSpec,
    pub output: OutputSpec,
    pub study: StudySpec,
    pub kinetics: KineticsSpec,
}

/// Splits `--section.key=value` into its parts; other arguments give `None`.
pub fn split_override(arg: &str) -> Option<(String, String, String)> {
    let body = arg.strip_prefix("--")?;
    let (name, value) = body.split_once('=')?;
    let (section, key) = name.split_once('.')?;
    if section.is_empty() || key.is_empty() {
        return None;
    }
    Some((section.to_string(), key.to_string(), value.to_string()))
}

struct Entry {
    value: String,
    location: Location,
}

/// Raw key/value pairs, consumed as they are interpreted.
struct Entries {
    map: BTreeMap<(String, String), Entry>,
}

/// Line numbers of `key = value` lines, by section.
fn key_lines(text: &str) -> BTreeMap<(String, String), usize> {
    let mut section = String::new();
    let mut lines = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
        } else if !line.starts_with(';') && !line.starts_with('#') {
            if let Some(pos) = line.find(['=', ':']) {
                let key = line[..pos].trim().to_string();
                lines.entry((section.clone(), key)).or_insert(i + 1);
            }
        }
    }
    lines
}

impl Entries {
    fn from_sources(text: Option<(&str, &str)>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        if let Some((text, origin)) = text {
            let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Parse {
                location: Location::File {
                    origin: origin.to_string(),
                    line: e.line + 1,
                },
                message: e.msg.to_string(),
            })?;
            let lines = key_lines(text);
            for (section, props) in ini.iter() {
                for (key, value) in props.iter() {
                    let sec = section.unwrap_or("").to_string();
                    let line = lines
                        .get(&(sec.clone(), key.to_string()))
                        .copied()
                        .unwrap_or(0);
                    let location = Location::File {
                        origin: origin.to_string(),
                        line,
                    };
                    if section.is_none() {
                        return Err(ConfigError::Parse {
                            location,
                            message: format!("key '{key}' appears before any [section] header"),
                        });
                    }
                    let entry = Entry {
                        value: value.to_string(),
                        location: location.clone(),
                    };
                    if map.insert((sec.clone(), key.to_string()), entry).is_some() {
                        return Err(ConfigError::Parse {
                            location,
                            message: format!("duplicate key {sec}.{key}"),
                        });
                    }
                }
            }
        }
        for arg in overrides {
            let (section, key, value) = split_override(arg).ok_or_else(|| ConfigError::Parse {
                location: Location::Override(arg.clone()),
                message: "expected --section.key=value".into(),
            })?;
            map.insert(
                (section, key),
                Entry {
                    value,
                    location: Location::Override(arg.clone()),
                },
            );
        }
        Ok(Entries { map })
    }

    fn take_raw(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.map.remove(&(section.to_string(), key.to_string()))
    }

    fn take_with<T>(
        &mut self,
        section: &str,
        key: &str,
        parse: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        match self.take_raw(section, key) {
            None => Ok(None),
            Some(entry) => parse(entry.value.trim())
                .map(Some)
                .map_err(|m| ConfigError::Parse {
                    location: entry.location,
                    message: format!("{section}.{key}: {m}"),
                }),
        }
    }

    fn take<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.take_with(section, key, |v| {
            v.parse::<T>()
                .map_err(|e| format!("cannot parse '{v}': {e}"))
        })
    }

    fn take_list<T: FromStr>(
        &mut self,
        section: &str,
        key: &str,
    ) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.take_with(section, key, |v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|e| format!("cannot parse '{s}': {e}"))
                })
                .collect()
        })
    }

    fn take_auto<T: FromStr>(
        &mut self,
        section: &str,
        key: &str,
    ) -> Result<Option<Option<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.take_with(section, key, |v| {
            if v == "auto" {
                Ok(None)
            } else {
                v.parse::<T>()
                    .map(Some)
                    .map_err(|e| format!("cannot parse '{v}': {e}"))
            }
        })
    }

    fn reject_leftovers(self) -> Result<(), ConfigError> {
        match self.map.into_iter().next() {
            None => Ok(()),
            Some(((section, key), entry)) => Err(ConfigError::Parse {
                location: entry.location,
                message: format!("unknown key {section}.{key}"),
            }),
        }
    }
}

fn parse_axis(v: &str) -> Result<Axis, String> {
    match v {
        "space" => Ok(Axis::Space),
        "time" => Ok(Axis::Time),
        _ => Err(format!("expected 'space' or 'time', got '{v}'")),
    }
}

fn parse_variable(v: &str) -> Result<ErrorVariable, String> {
    match v {
        "n" => Ok(ErrorVariable::Density),
        "W" => Ok(ErrorVariable::Energy),
        _ => Err(format!("expected 'n' or 'W', got '{v}'")),
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn variable_name(v: ErrorVariable) -> &'static str {
    match v {
        ErrorVariable::Density => "n",
        ErrorVariable::Energy => "W",
    }
}

impl RunConfig {
    /// Parses and validates a configuration. `file` is `(text, origin)`,
    /// where `origin` names the source in error messages.
    pub fn parse(
        file: Option<(&str, &str)>,
        overrides: &[String],
        command: Command,
    ) -> Result<Self, ConfigError> {
        let mut e = Entries::from_sources(file, overrides)?;

        let dm = ModelParams::default();
        let d = e.take::<usize>("model", "d")?.unwrap_or(dm.d());
        let eps0 = e.take("model", "eps0")?.unwrap_or(dm.eps0());
        let u0 = e.take("model", "U0")?.unwrap_or(dm.u0());
        let eta = e.take("model", "eta")?.unwrap_or(dm.eta());
        let tau0 = e.take("model", "tau0")?.unwrap_or(dm.tau0());
        let delta = e.take("model", "delta")?.unwrap_or(dm.delta());
        let model = ModelParams::new(d, eps0, u0, eta, tau0, delta)
            .map_err(|err| invalid(format!("model: {err}")))?;

        let ds = SolverConfig::default();
        let scheme = e
            .take_with("solver", "scheme", |v| {
                v.parse::<Scheme>().map_err(|e| e.to_string())
            })?
            .unwrap_or(ds.scheme);
        let dt = e.take::<f64>("solver", "dt")?;
        let t_final = e.take::<f64>("solver", "t_final")?;
        let solver = SolverConfig {
            dt: dt.unwrap_or(ds.dt),
            t_final: t_final.unwrap_or(ds.t_final),
            scheme,
            alpha: e.take("solver", "alpha")?.unwrap_or(ds.alpha),
            gamma: e.take_auto("solver", "gamma")?.unwrap_or(ds.gamma),
            eps_reg: e.take("solver", "eps_reg")?.unwrap_or(ds.eps_reg),
            picard_tol: e.take("solver", "picard_tol")?.unwrap_or(ds.picard_tol),
            picard_max: e.take("solver", "picard_max")?.unwrap_or(ds.picard_max),
        };

        let cells = e.take("grid", "cells")?.unwrap_or(100);

        let profile = |v: &str| v.parse::<ProfileSource>();
        let initial = InitialSpec {
            density: e
                .take_with("initial", "density", profile)?
                .unwrap_or(ProfileSource::Preset(Profile::Step)),
            energy: e
                .take_with("initial", "energy", profile)?
                .unwrap_or(ProfileSource::Preset(Profile::Constant(1.0))),
        };

        let output = OutputSpec {
            dir: e
                .take_with("output", "dir", |v| Ok(PathBuf::from(v)))?
                .unwrap_or_else(|| PathBuf::from("output")),
            times: e.take_list("output", "times")?.unwrap_or_default(),
            every: e.take("output", "every")?.unwrap_or(1),
            plot: e.take_with("output", "plot", parse_bool)?.unwrap_or(false),
        };

        let study = StudySpec {
            axis: e
                .take_with("study", "axis", parse_axis)?
                .unwrap_or(Axis::Space),
            grids: e
                .take_list("study", "grids")?
                .unwrap_or_else(|| vec![105, 210, 420, 840]),
            ref_cells: e.take("study", "ref_cells")?.unwrap_or(1680),
            dts: e
                .take_list("study", "dts")?
                .unwrap_or_else(|| vec![1.0 / 315.0, 1.0 / 630.0, 1.0 / 1260.0, 1.0 / 2520.0]),
            ref_dt: e.take("study", "ref_dt")?.unwrap_or(1.0 / 40320.0),
            variable: e
                .take_with("study", "variable", parse_variable)?
                .unwrap_or_default(),
            expected_order: e.take_auto("study", "expected_order")?.unwrap_or(None),
            tolerance: e.take("study", "tolerance")?.unwrap_or(0.3),
        };

        let kinetics = KineticsSpec {
            lambda0: e.take("kinetics", "lambda0")?.unwrap_or(0.0),
            lambda1: e.take("kinetics", "lambda1")?.unwrap_or(0.0),
            n: e.take("kinetics", "n")?.unwrap_or(0.5),
            energy: e.take("kinetics", "E")?.unwrap_or(0.0),
            points: e.take_auto("kinetics", "points")?.unwrap_or(None),
        };
        e.reject_leftovers()?;

        let config = RunConfig {
            command,
            model,
            solver,
            cells,
            initial,
            output,
            study,
            kinetics,
        };
        let needs_dt = command == Command::Simulate
            || (command == Command::Convergence && config.study.axis == Axis::Space);
        if needs_dt && dt.is_none() {
            return Err(invalid("solver.dt is required"));
        }
        if command.runs_solver() && t_final.is_none() {
            return Err(invalid("solver.t_final is required"));
        }
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (if any) and applies the overrides on top.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        command: Command,
    ) -> Result<Self, ConfigError> {
        match path {
            None => Self::parse(None, overrides, command),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::parse(Some((&text, &p.display().to_string())), overrides, command)
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.solver
            .validate()
            .map_err(|e| invalid(format!("solver: {e}")))?;
        let grid =
            PeriodicGrid1D::new(self.cells).map_err(|e| invalid(format!("grid.cells: {e}")))?;
        if self.output.every == 0 {
            return Err(invalid("output.every must be >= 1"));
        }
        match self.command {
            Command::Simulate => {
                self.solver
                    .steps()
                    .map_err(|e| invalid(format!("solver.t_final: {e}")))?;
                for w in self.output.times.windows(2) {
                    if w[1] <= w[0] {
                        return Err(invalid("output.times must be strictly increasing"));
                    }
                }
                for &t in &self.output.times {
                    if !(0.0..=self.solver.t_final).contains(&t) {
                        return Err(invalid(format!("output time {t} outside [0, t_final]")));
                    }
                    step_index(t, self.solver.dt)
                        .map_err(|e| invalid(format!("output.times: {e}")))?;
                }
                self.check_initial_state(grid)?;
            }
            Command::Convergence => self.validate_study(grid)?,
            Command::Moments => {
                self.kinetics.quadrature(&self.model)?;
            }
            Command::Invert => {
                self.kinetics.quadrature(&self.model)?;
                MomentPair::new(self.kinetics.n, self.kinetics.energy)
                    .check_admissible(&self.model)
                    .map_err(|e| invalid(format!("kinetics: {e}")))?;
            }
            Command::VerifyIntegrals => {
                QuadratureSpec::new(self.kinetics.points.unwrap_or(64), self.model.d())
                    .map_err(|e| invalid(format!("kinetics.points: {e}")))?;
            }
        }
        Ok(())
    }

    fn check_initial_state(&self, grid: PeriodicGrid1D) -> Result<(), ConfigError> {
        let state = self
            .initial
            .resolve()?
            .state(grid)
            .map_err(|e| invalid(format!("initial: {e}")))?;
        state
            .check_invariants(&self.model, 0.0)
            .map_err(|e| invalid(format!("initial: {e}")))
    }

    fn validate_study(&self, grid: PeriodicGrid1D) -> Result<(), ConfigError> {
        let s = &self.study;
        if !(s.tolerance > 0.0) {
            return Err(invalid("study.tolerance must be > 0"));
        }
        match s.axis {
            Axis::Space => {
                if self.initial.uses_files() {
                    return Err(invalid(
                        "a spatial study needs preset initial profiles, not snapshot files",
                    ));
                }
                if s.grids.is_empty() {
                    return Err(invalid("study.grids must not be empty"));
                }
                if s.grids.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("study.grids must be strictly increasing"));
                }
                for &g in &s.grids {
                    if g < 4 || g >= s.ref_cells || !s.ref_cells.is_multiple_of(g) {
                        return Err(invalid(format!(
                            "grid {g} must have at least 4 cells and strictly divide study.ref_cells = {}",
                            s.ref_cells
                        )));
                    }
                }
                self.check_initial_state(
                    PeriodicGrid1D::new(s.ref_cells).map_err(|e| invalid(e.to_string()))?,
                )?;
            }
            Axis::Time => {
                if s.dts.is_empty() {
                    return Err(invalid("study.dts must not be empty"));
                }
                if s.dts.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(invalid("study.dts must be strictly decreasing"));
                }
                if !(s.ref_dt > 0.0 && s.ref_dt < *s.dts.last().unwrap()) {
                    return Err(invalid("study.ref_dt must be positive and below every dt"));
                }
                for &dt in &s.dts {
                    step_index(dt, s.ref_dt).map_err(|e| invalid(format!("study.dts: {e}")))?;
                    step_index(self.solver.t_final, dt)
                        .map_err(|e| invalid(format!("study.dts: {e}")))?;
                }
                self.check_initial_state(grid)?;
            }
        }
        Ok(())
    }

    /// Writes every field back as INI text that parses to the same config.
    pub fn serialize(&self) -> String {
        let f = |v: f64| fmt_float(v);
        let list = |v: &[f64]| {
            v.iter()
                .map(|&x| fmt_float(x))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut ini = Ini::new();
        ini.with_section(Some("model"))
            .set("d", self.model.d().to_string())
            .set("eps0", f(self.model.eps0()))
            .set("U0", f(self.model.u0()))
            .set("eta", f(self.model.eta()))
            .set("tau0", f(self.model.tau0()))
            .set("delta", f(self.model.delta()));
        let s = &self.solver;
        ini.with_section(Some("solver"))
            .set("scheme", s.scheme.name())
            .set("dt", f(s.dt))
            .set("t_final", f(s.t_final))
            .set("alpha", f(s.alpha))
            .set("gamma", s.gamma.map_or("auto".to_string(), f))
            .set("eps_reg", f(s.eps_reg))
            .set("picard_tol", f(s.picard_tol))
            .set("picard_max", s.picard_max.to_string());
        ini.with_section(Some("grid"))
            .set("cells", self.cells.to_string());
        ini.with_section(Some("initial"))
            .set("density", self.initial.density.to_string())
            .set("energy", self.initial.energy.to_string());
        ini.with_section(Some("output"))
            .set("dir", self.output.dir.display().to_string())
            .set("times", list(&self.output.times))
            .set("every", self.output.every.to_string())
            .set("plot", self.output.plot.to_string());
        let st = &self.study;
        ini.with_section(Some("study"))
            .set("axis", st.axis.to_string())
            .set(
                "grids",
                st.grids
                    .iter()
                    .map(|g| g.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
            )
            .set("ref_cells", st.ref_cells.to_string())
            .set("dts", list(&st.dts))
            .set("ref_dt", f(st.ref_dt))
            .set("variable", variable_name(st.variable))
            .set(
                "expected_order",
                st.expected_order.map_or("auto".to_string(), f),
            )
            .set("tolerance", f(st.tolerance));
        let k = &self.kinetics;
        ini.with_section(Some("kinetics"))
            .set("lambda0", f(k.lambda0))
            .set("lambda1", f(k.lambda1))
            .set("n", f(k.n))
            .set("E", f(k.energy))
            .set(
                "points",
                k.points.map_or("auto".to_string(), |m| m.to_string()),
            );
        let mut buf = Vec::new();
        ini.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("ini output is utf-8")
    }
}
