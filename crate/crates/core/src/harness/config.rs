//! Flat `[section]` / `key = value` experiment configs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::densities::{ParentalDensity, PiecewiseConstant, TargetDensity};
use crate::error::{Error, Result};
use crate::quadrature::{BoxDomain, QuadratureSpec, Rule};

const SECTIONS: [&str; 6] = ["experiment", "target", "parent", "run", "quadrature", "output"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Norms,
    Rate,
    KlRate,
    Approximate,
    SynthesizeRbm,
    Counterexample,
    Eval,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Norms,
        Self::Rate,
        Self::KlRate,
        Self::Approximate,
        Self::SynthesizeRbm,
        Self::Counterexample,
        Self::Eval,
    ];

    /// Name used on the command line.
    pub fn command(self) -> &'static str {
        match self {
            Self::Norms => "norms",
            Self::Rate => "rate",
            Self::KlRate => "kl-rate",
            Self::Approximate => "approximate",
            Self::SynthesizeRbm => "synthesize-rbm",
            Self::Counterexample => "counterexample",
            Self::Eval => "eval",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.command())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.command() == norm)
            .ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed but untyped config.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)>,
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if let Some(rest) = t.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| parse_error(line, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(parse_error(line, format!("unknown section [{name}]")));
                }
                if cfg.sections.contains_key(name) {
                    return Err(parse_error(line, format!("section [{name}] repeated")));
                }
                cfg.sections.insert(name.to_string(), (line, BTreeMap::new()));
                current = Some(name.to_string());
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| parse_error(line, format!("expected 'key = value', found '{t}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(parse_error(line, "empty key"));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| parse_error(line, "key outside of any section"))?;
            let entries = &mut cfg.sections.get_mut(section).expect("section exists").1;
            if entries.contains_key(k) {
                return Err(parse_error(line, format!("key '{k}' repeated in [{section}]")));
            }
            entries.insert(
                k.to_string(),
                Entry {
                    value: v.to_string(),
                    line,
                },
            );
        }
        Ok(cfg)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|s| s.1.get(key))
    }

    fn missing(&self, section: &str, key: &str) -> Error {
        let line = self.sections.get(section).map_or(0, |s| s.0);
        parse_error(line, format!("missing key '{key}' in [{section}]"))
    }

    pub fn str(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn get<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<V>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| parse_error(e.line, format!("cannot parse '{}' for {key}", e.value))),
        }
    }

    pub fn require<V: FromStr>(&self, section: &str, key: &str) -> Result<V> {
        self.get(section, key)?.ok_or_else(|| self.missing(section, key))
    }

    /// Comma separated list.
    pub fn list<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<V>>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| parse_error(e.line, format!("cannot parse '{}' in {key}", t.trim())))
                })
                .collect::<Result<Vec<V>>>()
                .map(Some),
        }
    }

    /// Semicolon separated vectors of comma separated numbers.
    pub fn vectors(&self, section: &str, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(';')
                .map(|v| {
                    v.split(',')
                        .map(|t| {
                            t.trim()
                                .parse()
                                .map_err(|_| parse_error(e.line, format!("cannot parse '{}' in {key}", t.trim())))
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.entry(section, key)
            .map(|e| e.line)
            .or_else(|| self.sections.get(section).map(|s| s.0))
            .unwrap_or(0)
    }

    /// Error tied to the line of `key` (or its section).
    pub fn error_at(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        parse_error(self.line_of(section, key), message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormChoice {
    Lq,
    Sup,
}

/// Knobs in `[run]`; which ones are needed depends on the experiment.
#[derive(Debug, Clone, Default)]
pub struct RunSpec {
    pub q: Option<f64>,
    pub q_values: Vec<f64>,
    pub dims: Vec<usize>,
    pub m: Option<usize>,
    pub m_values: Vec<usize>,
    pub trials: Option<usize>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub tolerance: Option<f64>,
    pub norm: Option<NormChoice>,
    /// Explicit unit-vector weights for `synthesize-rbm`.
    pub weights: Option<Vec<f64>>,
    /// Model file for `eval`, relative to the config.
    pub model: Option<PathBuf>,
    pub points: Option<Vec<Vec<f64>>>,
    pub samples: Option<usize>,
    pub te_rate: f64,
    pub te_bound: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub target: Option<TargetDensity<f64>>,
    pub parent: Option<ParentalDensity<f64>>,
    pub run: RunSpec,
    pub quadrature: Option<QuadratureSpec<f64>>,
    pub output_name: String,
    pub plot: bool,
    /// First 16 hex digits of the SHA-256 of the config bytes and any
    /// seed override.
    pub hash: String,
}

fn build_target(raw: &RawConfig) -> Result<Option<TargetDensity<f64>>> {
    if !raw.has_section("target") {
        return Ok(None);
    }
    let s = "target";
    let kind: String = raw.require(s, "kind")?;
    let dim: usize = raw.get(s, "dim")?.unwrap_or(1);
    let at = |e: Error| raw.error_at(s, "kind", e.to_string());
    let t = match kind.as_str() {
        "standard_normal" => TargetDensity::standard_normal(dim).map_err(at)?,
        "gaussian_mixture" => {
            let weights = raw.list(s, "weights")?.ok_or_else(|| raw.missing(s, "weights"))?;
            let means = raw.vectors(s, "means")?.ok_or_else(|| raw.missing(s, "means"))?;
            let sds = raw.list(s, "std_devs")?.ok_or_else(|| raw.missing(s, "std_devs"))?;
            TargetDensity::gaussian_mixture(weights, means, sds).map_err(at)?
        }
        "uniform" => {
            let lo = raw.list(s, "lo")?.ok_or_else(|| raw.missing(s, "lo"))?;
            let hi = raw.list(s, "hi")?.ok_or_else(|| raw.missing(s, "hi"))?;
            TargetDensity::uniform(BoxDomain::new(lo, hi).map_err(at)?).map_err(at)?
        }
        "truncated_exponential" => {
            let rates = raw.list(s, "rates")?.ok_or_else(|| raw.missing(s, "rates"))?;
            let bounds = raw.list(s, "bounds")?.ok_or_else(|| raw.missing(s, "bounds"))?;
            TargetDensity::parental(ParentalDensity::truncated_exponential(rates, bounds).map_err(at)?).map_err(at)?
        }
        "piecewise_constant" => {
            let edges = raw.list(s, "edges")?.ok_or_else(|| raw.missing(s, "edges"))?;
            let heights = raw.list(s, "heights")?.ok_or_else(|| raw.missing(s, "heights"))?;
            TargetDensity::piecewise_constant(PiecewiseConstant::new(edges, heights).map_err(at)?).map_err(at)?
        }
        "counterexample" => TargetDensity::counterexample(raw.require(s, "m")?).map_err(at)?,
        other => return Err(raw.error_at(s, "kind", format!("unknown target kind '{other}'"))),
    };
    Ok(Some(t))
}

fn build_parent(raw: &RawConfig) -> Result<Option<ParentalDensity<f64>>> {
    if !raw.has_section("parent") {
        return Ok(None);
    }
    let s = "parent";
    let kind: String = raw.require(s, "kind")?;
    let at = |e: Error| raw.error_at(s, "kind", e.to_string());
    let p = match kind.as_str() {
        "gaussian" => ParentalDensity::gaussian(raw.get(s, "dim")?.unwrap_or(1)).map_err(at)?,
        "truncated_exponential" => {
            let rates = raw.list(s, "rates")?.ok_or_else(|| raw.missing(s, "rates"))?;
            let bounds = raw.list(s, "bounds")?.ok_or_else(|| raw.missing(s, "bounds"))?;
            ParentalDensity::truncated_exponential(rates, bounds).map_err(at)?
        }
        other => return Err(raw.error_at(s, "kind", format!("unknown parent kind '{other}'"))),
    };
    Ok(Some(p))
}

fn build_quadrature(raw: &RawConfig) -> Result<Option<QuadratureSpec<f64>>> {
    if !raw.has_section("quadrature") {
        return Ok(None);
    }
    let s = "quadrature";
    let lo: Vec<f64> = raw.list(s, "lo")?.ok_or_else(|| raw.missing(s, "lo"))?;
    let hi: Vec<f64> = raw.list(s, "hi")?.ok_or_else(|| raw.missing(s, "hi"))?;
    let rule = match raw.str(s, "rule").unwrap_or("gauss_legendre") {
        "gauss_legendre" => Rule::GaussLegendreComposite,
        "midpoint" => Rule::Midpoint,
        other => return Err(raw.error_at(s, "rule", format!("unknown rule '{other}'"))),
    };
    let points: usize = raw.get(s, "points")?.unwrap_or(128);
    let at = |k: &str| {
        let k = k.to_string();
        move |e: Error| raw.error_at(s, &k, e.to_string())
    };
    let domain = BoxDomain::new(lo, hi).map_err(at("lo"))?;
    let mut spec = QuadratureSpec::new(domain, rule, points).map_err(at("points"))?;
    if let Some(p) = raw.get::<f64>(s, "padding")? {
        spec = spec.with_padding(p).map_err(at("padding"))?;
    }
    if let Some(b) = raw.get::<usize>(s, "budget")? {
        spec = spec.with_budget(b).map_err(at("budget"))?;
    }
    Ok(Some(spec))
}

fn build_run(raw: &RawConfig, base: &Path) -> Result<RunSpec> {
    let s = "run";
    let norm = match raw.str(s, "norm") {
        None => None,
        Some("lq") => Some(NormChoice::Lq),
        Some("sup") => Some(NormChoice::Sup),
        Some(other) => return Err(raw.error_at(s, "norm", format!("norm must be 'lq' or 'sup', not '{other}'"))),
    };
    Ok(RunSpec {
        q: raw.get(s, "q")?,
        q_values: raw.list(s, "q_values")?.unwrap_or_default(),
        dims: raw.list(s, "dims")?.unwrap_or_default(),
        m: raw.get(s, "m")?,
        m_values: raw.list(s, "m_values")?.unwrap_or_default(),
        trials: raw.get(s, "trials")?,
        sigma: raw.get(s, "sigma")?,
        epsilon: raw.get(s, "epsilon")?,
        eta: raw.get(s, "eta")?,
        tolerance: raw.get(s, "tolerance")?,
        norm,
        weights: raw.list(s, "weights")?,
        model: raw.str(s, "model").map(|p| base.join(p)),
        points: raw.vectors(s, "points")?,
        samples: raw.get(s, "samples")?,
        te_rate: raw.get(s, "te_rate")?.unwrap_or(1.0),
        te_bound: raw.get(s, "te_bound")?.unwrap_or(1.0),
    })
}

fn config_hash(text: &str, seed_override: Option<u64>) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    if let Some(s) = seed_override {
        h.update(format!("\nseed override {s}").as_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    /// Parses `text`; `base` resolves relative paths and the subcommand
    /// must agree with any `kind` in `[experiment]`.
    pub fn parse(text: &str, command: ExperimentKind, seed_override: Option<u64>, base: &Path) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        if !raw.has_section("experiment") {
            return Err(parse_error(1, "missing [experiment] section"));
        }
        let e = "experiment";
        if let Some(k) = raw.str(e, "kind") {
            let kind: ExperimentKind = k.parse().map_err(|m: String| raw.error_at(e, "kind", m))?;
            if kind != command {
                return Err(raw.error_at(e, "kind", format!("config is for '{kind}', not '{command}'")));
            }
        }
        let name: String = raw.require(e, "name")?;
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(raw.error_at(e, "name", "name must be nonempty and use [A-Za-z0-9_-]"));
        }
        let seed: u64 = raw.require(e, "seed")?;
        let seed = seed_override.unwrap_or(seed);
        let output_name = raw.get("output", "name")?.unwrap_or_else(|| name.clone());
        let plot = raw.get("output", "plot")?.unwrap_or(true);
        let cfg = Self {
            kind: command,
            seed,
            target: build_target(&raw)?,
            parent: build_parent(&raw)?,
            run: build_run(&raw, base)?,
            quadrature: build_quadrature(&raw)?,
            output_name,
            plot,
            hash: config_hash(text, seed_override),
            name,
        };
        cfg.validate(&raw)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, command: ExperimentKind, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, command, seed_override, base)
    }

    fn validate(&self, raw: &RawConfig) -> Result<()> {
        let need_section = |name: &str, present: bool| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(parse_error(0, format!("'{}' needs a [{name}] section", self.kind)))
            }
        };
        let need = |key: &str, present: bool| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(raw.missing("run", key))
            }
        };
        let r = &self.run;
        match self.kind {
            ExperimentKind::Norms => {
                need("q_values", !r.q_values.is_empty())?;
                need("dims", !r.dims.is_empty())?;
            }
            ExperimentKind::Rate => {
                need_section("target", self.target.is_some())?;
                need_section("parent", self.parent.is_some())?;
                need_section("quadrature", self.quadrature.is_some())?;
                need("q", r.q.is_some())?;
                need("sigma", r.sigma.is_some())?;
                need("m_values", !r.m_values.is_empty())?;
                need("trials", r.trials.is_some())?;
            }
            ExperimentKind::KlRate => {
                need_section("target", self.target.is_some())?;
                need_section("parent", self.parent.is_some())?;
                need_section("quadrature", self.quadrature.is_some())?;
                need("eta", r.eta.is_some())?;
                need("m_values", !r.m_values.is_empty())?;
                need("trials", r.trials.is_some())?;
            }
            ExperimentKind::Approximate => {
                need_section("target", self.target.is_some())?;
                need_section("parent", self.parent.is_some())?;
                need_section("quadrature", self.quadrature.is_some())?;
                need("epsilon", r.epsilon.is_some())?;
                if r.norm != Some(NormChoice::Sup) {
                    need("q", r.q.is_some())?;
                    need("m", r.m.is_some())?;
                }
            }
            ExperimentKind::SynthesizeRbm => {
                need("tolerance", r.tolerance.is_some())?;
                if r.weights.is_none() {
                    need("m_values", !r.m_values.is_empty())?;
                    need("trials", r.trials.is_some())?;
                }
            }
            ExperimentKind::Counterexample => {
                need("m_values", !r.m_values.is_empty())?;
                if r.m_values.contains(&0) {
                    return Err(raw.error_at("run", "m_values", "m values must be positive"));
                }
            }
            ExperimentKind::Eval => {
                need("model", r.model.is_some())?;
            }
        }
        Ok(())
    }
}
