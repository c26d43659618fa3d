//! Run configuration: a TOML document with typed sections. Unknown keys are
//! errors.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use nlhom::kernels::{BuiltinParams, KernelSpec};
use nlhom::regimes::ScalingLaw;
use nlhom::Kernel;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyKernel,
    Fhom,
    Phi,
    PhiNl,
    Capterm,
    GnsSuite,
    RegimeSweep,
    Recovery,
    Negligibility,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// Worker count, or `"auto"` for one per core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threads {
    #[default]
    Auto,
    Count(usize),
}

impl Serialize for Threads {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Threads::Auto => s.serialize_str("auto"),
            Threads::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Threads {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("threads must be positive or \"auto\"")),
            Raw::Count(n) => Ok(Threads::Count(n as usize)),
            Raw::Word(w) if w == "auto" => Ok(Threads::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("threads must be a count or \"auto\", got `{w}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// `indicator-ball`, `smooth-decay`, `anisotropic` or
    /// `normalized-isotropic`
    pub family: String,
    pub d: usize,
    #[serde(default = "one")]
    pub m: usize,
    pub p: f64,
    pub c: Option<f64>,
    pub rho: Option<f64>,
    pub c_iso: Option<f64>,
    pub a: Option<Vec<f64>>,
    pub r0: Option<f64>,
}

fn one() -> usize {
    1
}

impl KernelConfig {
    pub fn build(&self) -> Result<Kernel, CliError> {
        let (d, p) = (self.d, self.p);
        if !(p > 1.0 && p < d as f64) {
            return Err(CliError::Config(format!("kernel.p = {p} must lie in the open interval (1, d) with d = {d}")));
        }
        let k = if self.family == "normalized-isotropic" {
            KernelSpec::normalized_isotropic(d, self.m, p, self.rho.unwrap_or(1.0))
        } else {
            let params = BuiltinParams {
                c: self.c,
                rho: self.rho,
                c_iso: self.c_iso,
                a: self.a.clone(),
                r0: self.r0,
            };
            KernelSpec::builtin(&self.family, d, self.m, p, &params)
        };
        k.map_err(|e| CliError::Config(format!("kernel: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerforationConfig {
    pub delta: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// grid step; when absent, `eps / resolution`
    pub h: Option<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    /// half-width of the box for `recovery` and `negligibility`
    pub half: Option<f64>,
    pub perforation: Option<PerforationConfig>,
    /// constant field value for `recovery`
    pub field: Option<Vec<f64>>,
    /// `h / r_δ` for `negligibility`
    #[serde(default = "default_h_over_r")]
    pub h_over_r: f64,
}

fn default_resolution() -> f64 {
    4.0
}

fn default_h_over_r() -> f64 {
    2.0
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            h: None,
            resolution: default_resolution(),
            half: None,
            perforation: None,
            field: None,
            h_over_r: default_h_over_r(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub r: Vec<f64>,
    #[serde(default)]
    pub t: Vec<f64>,
    #[serde(default)]
    pub z: Vec<Vec<f64>>,
    /// gradients `S` for `fhom`, row-major `m × d`
    #[serde(default)]
    pub s: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_memory")]
    pub memory: usize,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    5000
}

fn default_memory() -> usize {
    8
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: default_tol(), max_iter: default_max_iter(), memory: default_memory() }
    }
}

/// `δ = c_delta eps^a`, `r = c_r δ^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub c_delta: f64,
    pub a: f64,
    pub c_r: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalityConfig {
    /// short-range radius `r` of `G_eps^{r,p}`
    #[serde(default = "one_f")]
    pub r: f64,
    /// `eps / h` for the corpus grids
    #[serde(default = "default_ineq_resolution")]
    pub resolution: f64,
    #[serde(default = "default_corpus")]
    pub corpus_size: usize,
}

fn one_f() -> f64 {
    1.0
}

fn default_ineq_resolution() -> f64 {
    8.0
}

fn default_corpus() -> usize {
    32
}

impl Default for InequalityConfig {
    fn default() -> Self {
        InequalityConfig { r: 1.0, resolution: default_ineq_resolution(), corpus_size: default_corpus() }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("nlhom-out")
}

fn default_samples() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub schedules: Schedules,
    #[serde(default)]
    pub solver: SolverConfig,
    pub law: Option<LawConfig>,
    #[serde(default)]
    pub inequality: InequalityConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Threads,
    #[serde(default)]
    pub deterministic: bool,
    /// samples for `verify-kernel`
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn need(name: &str, ok: bool) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("schedule `{name}` must be nonempty for this command")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} = {v} must be positive")))
    }
}

impl RunConfig {
    /// Range and presence checks that depend on the command.
    pub fn validate(&self) -> Result<(), CliError> {
        let k = self.kernel.build()?;
        if let Some(h) = self.geometry.h {
            positive("geometry.h", h)?;
        }
        positive("geometry.resolution", self.geometry.resolution)?;
        positive("solver.tol", self.solver.tol)?;
        for (name, list) in [("eps", &self.schedules.eps), ("r", &self.schedules.r), ("t", &self.schedules.t)] {
            for &v in list.iter() {
                positive(&format!("schedules.{name} entry"), v)?;
            }
        }
        for z in &self.schedules.z {
            if z.len() != k.m {
                return Err(CliError::Config(format!("schedules.z entry {z:?} must have m = {} components", k.m)));
            }
        }
        let s = &self.schedules;
        match self.command {
            Command::VerifyKernel | Command::RegimeSweep => {}
            Command::Fhom => {
                need("s", !s.s.is_empty())?;
                need("r", !s.r.is_empty())?;
                self.require_h()?;
                for row in &s.s {
                    if row.len() != k.m * k.d {
                        return Err(CliError::Config(format!("schedules.s entry must have m*d = {} entries", k.m * k.d)));
                    }
                }
            }
            Command::Phi => {
                need("z", !s.z.is_empty())?;
                need("r", !s.r.is_empty())?;
                self.require_h()?;
            }
            Command::PhiNl => {
                need("eps", !s.eps.is_empty())?;
                need("t", !s.t.is_empty())?;
                need("r", !s.r.is_empty())?;
                need("z", !s.z.is_empty())?;
            }
            Command::Capterm => {
                need("eps", !s.eps.is_empty())?;
                need("t", !s.t.is_empty())?;
                need("z", !s.z.is_empty())?;
                if s.r.len() != s.eps.len() {
                    return Err(CliError::Config("capterm pairs schedules.eps with schedules.r; lengths differ".into()));
                }
            }
            Command::GnsSuite => {
                need("eps", !s.eps.is_empty())?;
                positive("inequality.r", self.inequality.r)?;
                positive("inequality.resolution", self.inequality.resolution)?;
            }
            Command::Recovery => {
                need("eps", !s.eps.is_empty())?;
                need("t", !s.t.is_empty())?;
                self.require_h()?;
                if self.geometry.half.is_none() {
                    return Err(CliError::Config("recovery needs geometry.half".into()));
                }
                if self.geometry.perforation.is_none() && self.law.is_none() {
                    return Err(CliError::Config("recovery needs geometry.perforation or [law]".into()));
                }
                if let Some(f) = &self.geometry.field {
                    if f.len() != k.m {
                        return Err(CliError::Config(format!("geometry.field must have m = {} components", k.m)));
                    }
                }
            }
            Command::Negligibility => {
                need("eps", !s.eps.is_empty())?;
                if self.law.is_none() {
                    return Err(CliError::Config("negligibility needs a [law] section".into()));
                }
                if self.geometry.half.is_none() {
                    return Err(CliError::Config("negligibility needs geometry.half".into()));
                }
                positive("geometry.h_over_r", self.geometry.h_over_r)?;
            }
        }
        if let Some(l) = &self.law {
            self.build_law(l)?;
        }
        Ok(())
    }

    fn require_h(&self) -> Result<(), CliError> {
        if self.geometry.h.is_none() {
            return Err(CliError::Config(format!("command `{}` needs geometry.h", self.command)));
        }
        Ok(())
    }

    pub fn build_law(&self, l: &LawConfig) -> Result<ScalingLaw, CliError> {
        ScalingLaw::power("config", self.kernel.d, self.kernel.p, l.c_delta, l.a, l.c_r, l.b)
            .map_err(|e| CliError::Config(format!("law: {e}")))
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
