//! Experiment specifications in a flat `key = value` grammar.
//!
//! ```text
//! # comments run to the end of the line
//! preset      = load              # reference | load | sensitivity
//! scheduler   = aoi, voi          # lists are comma separated
//! n           = 20, 40, 60
//! r_ul        = 1, 3
//! pair_resources = true           # r_dl follows r_ul, r_dl must be absent
//! classes     = 0.75, 1, 1.25, 1.5
//! l           = deadbeat          # or one gain per class
//! ```
//!
//! Keys may appear in any order but at most once. `preset` is applied first
//! and every other key overrides it. Command-line flags are parsed with the
//! same grammar and applied after the file.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use ncsched::simulation::{LoopClass, REFERENCE_CLASSES, REFERENCE_PERIOD, REFERENCE_R_DL, REFERENCE_T_SIM};
use ncsched::{RunConfig, SchedulerKind};
use thiserror::Error;

/// Where a setting came from, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag(String),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Flag(name) => write!(f, "flag --{}", name.replace('_', "-")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    At { origin: Origin, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl ConfigError {
    fn at(origin: &Origin, message: impl Into<String>) -> Self {
        ConfigError::At {
            origin: origin.clone(),
            message: message.into(),
        }
    }
}

// ============================================================================
// Presets
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Full grid: N in 20..=120, R_UL in {1,2,3,6,9}, R_DL = 3.
    Reference,
    /// Load sweep with paired resources 1:1 and 3:3.
    Load,
    /// Uplink sensitivity at N in {20, 120} with R_DL = 3.
    Sensitivity,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Reference, Preset::Load, Preset::Sensitivity];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Reference => "reference",
            Preset::Load => "load",
            Preset::Sensitivity => "sensitivity",
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset '{s}' (expected reference, load or sensitivity)"))
    }
}

// ============================================================================
// Spec
// ============================================================================

/// A fully resolved experiment: the cartesian product of its axes, each
/// cell repeated `repetitions` times with consecutive seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub schedulers: Vec<SchedulerKind>,
    pub n: Vec<usize>,
    pub r_ul: Vec<usize>,
    pub r_dl: Vec<usize>,
    pub pair_resources: bool,
    pub t_s: u64,
    pub t_sim: u64,
    pub seed: u64,
    pub repetitions: u32,
    /// Scalar state matrix of each plant class.
    pub classes: Vec<f64>,
    /// Input gain, one value or one per class.
    pub b: Vec<f64>,
    /// Noise variance, one value or one per class.
    pub w: Vec<f64>,
    /// Feedback gain per class; `None` is deadbeat (`L = A / B`).
    pub l: Option<Vec<f64>>,
    pub warmup: u64,
    pub traces: bool,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn preset(preset: Preset) -> Self {
        let ns = vec![20, 40, 60, 80, 100, 120];
        let (n, r_ul, pair_resources) = match preset {
            Preset::Reference => (ns, vec![1, 2, 3, 6, 9], false),
            Preset::Load => (ns, vec![1, 3], true),
            Preset::Sensitivity => (vec![20, 120], vec![1, 2, 3, 6, 9], false),
        };
        Self {
            preset,
            schedulers: vec![SchedulerKind::Aoi, SchedulerKind::Voi],
            n,
            r_ul,
            r_dl: if pair_resources { Vec::new() } else { vec![REFERENCE_R_DL] },
            pair_resources,
            t_s: REFERENCE_PERIOD,
            t_sim: REFERENCE_T_SIM,
            seed: 1,
            repetitions: 1,
            classes: REFERENCE_CLASSES.to_vec(),
            b: vec![1.0],
            w: vec![1.0],
            l: None,
            warmup: 0,
            traces: false,
            output_dir: PathBuf::from("results"),
        }
    }

    /// `(scheduler, n, r_ul, r_dl)` for every cell, in axis order.
    pub fn cell_axes(&self) -> Vec<(SchedulerKind, usize, usize, usize)> {
        let mut out = Vec::new();
        for &kind in &self.schedulers {
            for &n in &self.n {
                for &r_ul in &self.r_ul {
                    if self.pair_resources {
                        out.push((kind, n, r_ul, r_ul));
                    } else {
                        for &r_dl in &self.r_dl {
                            out.push((kind, n, r_ul, r_dl));
                        }
                    }
                }
            }
        }
        out
    }

    fn per_class(values: &[f64], j: usize) -> f64 {
        if values.len() == 1 {
            values[0]
        } else {
            values[j]
        }
    }

    pub fn loop_classes(&self, n: usize) -> Vec<LoopClass> {
        let count = n / self.classes.len();
        self.classes
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let b = Self::per_class(&self.b, j);
                let w = Self::per_class(&self.w, j);
                let l = match &self.l {
                    Some(gains) => Self::per_class(gains, j),
                    None => a / b,
                };
                LoopClass::scalar(a, b, w, l, count)
            })
            .collect()
    }

    /// One run configuration per cell; repetitions are expanded by the sweep.
    pub fn run_configs(&self) -> Vec<RunConfig> {
        self.cell_axes()
            .into_iter()
            .map(|(scheduler, n, r_ul, r_dl)| RunConfig {
                classes: self.loop_classes(n),
                sampling_period: self.t_s,
                r_ul,
                r_dl,
                t_sim: self.t_sim,
                seed: self.seed,
                scheduler,
                warmup: self.warmup,
                keep_traces: self.traces,
            })
            .collect()
    }

    pub fn cell_count(&self) -> usize {
        self.cell_axes().len() * self.repetitions as usize
    }
}

// ============================================================================
// Parsing
// ============================================================================

const KEYS: [&str; 17] = [
    "preset",
    "scheduler",
    "n",
    "r_ul",
    "r_dl",
    "pair_resources",
    "t_s",
    "t_sim",
    "seed",
    "repetitions",
    "classes",
    "b",
    "w",
    "l",
    "warmup",
    "traces",
    "output_dir",
];

fn list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("'{s}' is not a valid {what}")))
        .collect()
}

fn positive_list(raw: &str) -> Result<Vec<usize>, String> {
    let values: Vec<usize> = list(raw, "positive integer")?;
    if values.contains(&0) {
        return Err("values must be positive".into());
    }
    Ok(values)
}

fn finite_list(raw: &str) -> Result<Vec<f64>, String> {
    let values: Vec<f64> = list(raw, "number")?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(values)
}

fn single<T: FromStr>(raw: &str, what: &str) -> Result<T, String> {
    raw.trim()
        .parse()
        .map_err(|_| format!("'{}' is not a valid {what}", raw.trim()))
}

fn boolean(raw: &str) -> Result<bool, String> {
    match raw.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("'{other}' is not a boolean (true or false)")),
    }
}

fn non_empty<T>(v: Vec<T>) -> Result<Vec<T>, String> {
    if v.is_empty() {
        Err("list must not be empty".into())
    } else {
        Ok(v)
    }
}

fn apply(spec: &mut ExperimentSpec, key: &str, raw: &str) -> Result<(), String> {
    match key {
        "preset" => {}
        "scheduler" => spec.schedulers = non_empty(list(raw, "scheduler (aoi, voi or random)")?)?,
        "n" => spec.n = non_empty(positive_list(raw)?)?,
        "r_ul" => spec.r_ul = non_empty(positive_list(raw)?)?,
        "r_dl" => spec.r_dl = positive_list(raw)?,
        "pair_resources" => spec.pair_resources = boolean(raw)?,
        "t_s" => spec.t_s = single(raw, "sampling period")?,
        "t_sim" => spec.t_sim = single(raw, "slot count")?,
        "seed" => spec.seed = single(raw, "seed")?,
        "repetitions" => spec.repetitions = single(raw, "repetition count")?,
        "classes" => spec.classes = non_empty(finite_list(raw)?)?,
        "b" => spec.b = non_empty(finite_list(raw)?)?,
        "w" => spec.w = non_empty(finite_list(raw)?)?,
        "l" => {
            spec.l = if raw.trim() == "deadbeat" {
                None
            } else {
                Some(non_empty(finite_list(raw)?)?)
            }
        }
        "warmup" => spec.warmup = single(raw, "slot count")?,
        "traces" => spec.traces = boolean(raw)?,
        "output_dir" => {
            let dir = raw.trim();
            if dir.is_empty() {
                return Err("output directory must not be empty".into());
            }
            spec.output_dir = PathBuf::from(dir);
        }
        _ => unreachable!("keys are checked before application"),
    }
    Ok(())
}

/// Splits config text into `(origin, key, value)` entries.
fn entries(text: &str) -> Result<Vec<(Origin, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let origin = Origin::Line(idx + 1);
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::at(&origin, format!("expected 'key = value', found '{line}'")));
        };
        out.push((origin, key.trim().to_ascii_lowercase(), value.trim().to_string()));
    }
    Ok(out)
}

/// Resolves a spec from config text and flag overrides, `(key, value)` with
/// keys in file spelling. Flags win over the file.
pub fn parse_spec(text: &str, flags: &[(String, String)]) -> Result<ExperimentSpec, ConfigError> {
    let mut all = entries(text)?;
    let mut seen_in_file: HashMap<String, Origin> = HashMap::new();
    for (origin, key, _) in &all {
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::at(origin, format!("unknown key '{key}'")));
        }
        if let Some(first) = seen_in_file.insert(key.clone(), origin.clone()) {
            return Err(ConfigError::at(origin, format!("duplicate key '{key}' (first set at {first})")));
        }
    }
    for (key, value) in flags {
        let origin = Origin::Flag(key.clone());
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::at(&origin, format!("unknown key '{key}'")));
        }
        all.push((origin, key.clone(), value.clone()));
    }

    // the last preset wins, and it is applied before everything else
    let mut preset = Preset::Reference;
    for (origin, key, value) in &all {
        if key == "preset" {
            preset = value.trim().parse().map_err(|m: String| ConfigError::at(origin, m))?;
        }
    }
    let mut spec = ExperimentSpec::preset(preset);
    let mut origins: HashMap<String, Origin> = HashMap::new();
    for (origin, key, value) in &all {
        apply(&mut spec, key, value).map_err(|m| ConfigError::at(origin, m))?;
        origins.insert(key.clone(), origin.clone());
    }
    validate(&spec, &origins)?;
    if spec.pair_resources {
        spec.r_dl.clear();
    }
    Ok(spec)
}

fn validate(spec: &ExperimentSpec, origins: &HashMap<String, Origin>) -> Result<(), ConfigError> {
    let fail = |key: &str, message: String| match origins.get(key) {
        Some(origin) => ConfigError::at(origin, message),
        None => ConfigError::Invalid(message),
    };
    if spec.pair_resources && !spec.r_dl.is_empty() && origins.contains_key("r_dl") {
        return Err(fail("r_dl", "r_dl cannot be set when pair_resources is true".into()));
    }
    if !spec.pair_resources && spec.r_dl.is_empty() {
        return Err(fail("pair_resources", "r_dl is required unless pair_resources is true".into()));
    }
    if spec.t_s == 0 {
        return Err(fail("t_s", "sampling period must be at least one slot".into()));
    }
    if spec.t_sim == 0 {
        return Err(fail("t_sim", "T_sim must be at least one slot".into()));
    }
    if spec.repetitions == 0 {
        return Err(fail("repetitions", "at least one repetition is required".into()));
    }
    if spec.warmup >= spec.t_sim {
        return Err(fail(
            "warmup",
            format!("warm-up {} leaves no measured slots out of {}", spec.warmup, spec.t_sim),
        ));
    }
    let classes = spec.classes.len();
    for (key, values) in [("b", Some(&spec.b)), ("w", Some(&spec.w)), ("l", spec.l.as_ref())] {
        if let Some(values) = values {
            if values.len() != 1 && values.len() != classes {
                return Err(fail(
                    key,
                    format!("{key} has {} values for {classes} classes", values.len()),
                ));
            }
        }
    }
    if spec.w.iter().any(|&w| w < 0.0) {
        return Err(fail("w", "noise variance must be non-negative".into()));
    }
    if spec.l.is_none() && spec.b.contains(&0.0) {
        return Err(fail("b", "deadbeat gains need a non-zero input gain".into()));
    }
    if let Some(&n) = spec.n.iter().find(|&&n| n % classes != 0) {
        return Err(fail(
            "n",
            format!("n = {n} cannot be split evenly over {classes} plant classes"),
        ));
    }
    Ok(())
}

// ============================================================================
// Rendering
// ============================================================================

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Renders every key explicitly, so the result parses back to `spec`.
pub fn render(spec: &ExperimentSpec) -> String {
    let mut out = String::new();
    let mut line = |key: &str, value: String| {
        let _ = writeln!(out, "{key:<15}= {value}");
    };
    line("preset", spec.preset.name().into());
    line("scheduler", join(&spec.schedulers));
    line("n", join(&spec.n));
    line("r_ul", join(&spec.r_ul));
    if !spec.pair_resources {
        line("r_dl", join(&spec.r_dl));
    }
    line("pair_resources", spec.pair_resources.to_string());
    line("t_s", spec.t_s.to_string());
    line("t_sim", spec.t_sim.to_string());
    line("seed", spec.seed.to_string());
    line("repetitions", spec.repetitions.to_string());
    line("classes", join(&spec.classes));
    line("b", join(&spec.b));
    line("w", join(&spec.w));
    line(
        "l",
        spec.l.as_ref().map_or_else(|| "deadbeat".into(), |l| join(l)),
    );
    line("warmup", spec.warmup.to_string());
    line("traces", spec.traces.to_string());
    line("output_dir", spec.output_dir.display().to_string());
    out
}
