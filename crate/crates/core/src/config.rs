//! Pipeline configuration: a flat `key = value` file plus `--key value`
//! overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::dynamics::{NoiseCoupling, SimulationConfig};
use crate::error::{Error, Result};
use crate::grid::{BoxDomain, GridPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RcMode {
    /// Ideal coordinate evaluated on a regular node lattice.
    Lattice,
    /// Ideal coordinate evaluated at the uniform starts, resampled to the
    /// lattice by nearest neighbour.
    Scattered,
}

impl FromStr for RcMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lattice" => Ok(Self::Lattice),
            "scattered" => Ok(Self::Scattered),
            _ => Err(format!("expected `lattice` or `scattered`, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub beta: f64,
    pub tau: f64,
    pub dt: f64,
    pub seed: u64,
    /// Lower and upper bound of the square domain.
    pub domain: [f64; 2],
    /// Ulam cells per axis.
    pub grid: usize,
    /// Integrator steps of the long trajectory (after burn-in).
    pub n_steps: u64,
    pub burn_in: u64,
    /// Keep every `record_stride`-th state.
    pub record_stride: usize,
    pub x0: [f64; 2],
    pub n_starts: usize,
    /// Endpoints per cloud for mean embeddings and the ideal coordinate.
    pub m: usize,
    /// Endpoints per cloud for densities in the reducibility scan.
    pub m_density: usize,
    pub n_anchors: usize,
    /// Kernel bandwidth for transition densities.
    pub bandwidth: f64,
    /// Bandwidth for the stationary density; 0 selects a cell histogram.
    pub rho_bandwidth: f64,
    /// Weight floor relative to `max ρ̂`.
    pub rho_floor: f64,
    pub rc_lattice: usize,
    pub rc_mode: RcMode,
    pub n_bins: usize,
    pub d: usize,
    pub n_eigen: usize,
    pub coupling: NoiseCoupling,
    pub x_star: [f64; 2],
    pub n_eq_starts: usize,
    pub oracle_trials: usize,
    pub oracle_max_n: usize,
    /// Row thinning of the trajectory CSV.
    pub csv_stride: usize,
    pub output: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            tau: 0.5,
            dt: 1e-3,
            seed: 20190601,
            domain: [-2.0, 2.0],
            grid: 50,
            n_steps: 40_000_000,
            burn_in: 10_000,
            record_stride: 10,
            x0: [-1.0, 0.0],
            n_starts: 8000,
            m: 1000,
            m_density: 4000,
            n_anchors: 100,
            bandwidth: 0.12,
            rho_bandwidth: 0.0,
            rho_floor: 1e-4,
            rc_lattice: 40,
            rc_mode: RcMode::Lattice,
            n_bins: 50,
            d: 1,
            n_eigen: 6,
            coupling: NoiseCoupling::Common,
            x_star: [0.0, -2.0],
            n_eq_starts: 2000,
            oracle_trials: 10_000,
            oracle_max_n: 8,
            csv_stride: 10,
            output: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{key}`: cannot parse `{v}`: {e}"))
}

/// Integers may be written in float notation (`4e7`) when exact.
fn parse_count<T: TryFrom<u64>>(key: &str, v: &str) -> std::result::Result<T, String> {
    let n = match v.replace('_', "").parse::<u64>() {
        Ok(n) => n,
        Err(_) => {
            let f: f64 = parse(key, v)?;
            if !(f >= 0.0 && f.fract() == 0.0 && f < 1.8e19) {
                return Err(format!("`{key}`: expected a non-negative integer, got `{v}`"));
            }
            f as u64
        }
    };
    T::try_from(n).map_err(|_| format!("`{key}`: {v} is out of range"))
}

fn parse_pair(key: &str, v: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("`{key}`: expected two comma-separated numbers, got `{v}`"));
    }
    Ok([parse(key, parts[0])?, parse(key, parts[1])?])
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "beta", "tau", "dt", "seed", "domain", "grid", "n_steps", "burn_in", "record_stride",
        "x0", "n_starts", "m", "m_density", "n_anchors", "bandwidth", "rho_bandwidth",
        "rho_floor", "rc_lattice", "rc_mode", "n_bins", "d", "n_eigen", "coupling", "x_star",
        "n_eq_starts", "oracle_trials", "oracle_max_n", "csv_stride", "output",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let v = v.trim();
        match key {
            "beta" => self.beta = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "dt" => self.dt = parse(key, v)?,
            "seed" => self.seed = parse_count(key, v)?,
            "domain" => self.domain = parse_pair(key, v)?,
            "grid" => self.grid = parse_count(key, v)?,
            "n_steps" => self.n_steps = parse_count(key, v)?,
            "burn_in" => self.burn_in = parse_count(key, v)?,
            "record_stride" => self.record_stride = parse_count(key, v)?,
            "x0" => self.x0 = parse_pair(key, v)?,
            "n_starts" => self.n_starts = parse_count(key, v)?,
            "m" => self.m = parse_count(key, v)?,
            "m_density" => self.m_density = parse_count(key, v)?,
            "n_anchors" => self.n_anchors = parse_count(key, v)?,
            "bandwidth" => self.bandwidth = parse(key, v)?,
            "rho_bandwidth" => self.rho_bandwidth = parse(key, v)?,
            "rho_floor" => self.rho_floor = parse(key, v)?,
            "rc_lattice" => self.rc_lattice = parse_count(key, v)?,
            "rc_mode" => self.rc_mode = parse(key, v)?,
            "n_bins" => self.n_bins = parse_count(key, v)?,
            "d" => self.d = parse_count(key, v)?,
            "n_eigen" => self.n_eigen = parse_count(key, v)?,
            "coupling" => self.coupling = parse(key, v)?,
            "x_star" => self.x_star = parse_pair(key, v)?,
            "n_eq_starts" => self.n_eq_starts = parse_count(key, v)?,
            "oracle_trials" => self.oracle_trials = parse_count(key, v)?,
            "oracle_max_n" => self.oracle_max_n = parse_count(key, v)?,
            "csv_stride" => self.csv_stride = parse_count(key, v)?,
            "output" => self.output = PathBuf::from(v),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. Does not validate.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k.trim(), v)
                .map_err(|reason| Error::ConfigSyntax { line: i + 1, reason })?;
        }
        Ok(())
    }

    /// Applies `--key value` (or `--key=value`) pairs.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<()> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(a) = it.next() {
            let body = a
                .strip_prefix("--")
                .ok_or_else(|| Error::config(a, "overrides must look like `--key value`"))?;
            let (k, v) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::config(body, "missing value"))?;
                    (body.to_string(), v.to_string())
                }
            };
            let k = k.replace('-', "_");
            self.set(&k, &v).map_err(|reason| Error::config(k, reason))?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then overrides; validated.
    pub fn load<S: AsRef<str>>(file: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let mut c = Self::default();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?;
            c.apply_text(&text)?;
        }
        c.apply_overrides(overrides)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive, got {v}")))
            }
        };
        let at_least = |name: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be at least {min}, got {v}")))
            }
        };
        positive("beta", self.beta)?;
        positive("dt", self.dt)?;
        positive("tau", self.tau)?;
        if self.tau < self.dt {
            return Err(Error::config("tau", "must be at least dt"));
        }
        positive("bandwidth", self.bandwidth)?;
        if !(self.rho_bandwidth >= 0.0 && self.rho_bandwidth.is_finite()) {
            return Err(Error::config("rho_bandwidth", "must be >= 0"));
        }
        positive("rho_floor", self.rho_floor)?;
        if !(self.domain[0] < self.domain[1]) {
            return Err(Error::config("domain", "need lo < hi"));
        }
        at_least("grid", self.grid, 2)?;
        at_least("record_stride", self.record_stride, 1)?;
        at_least("n_starts", self.n_starts, 1)?;
        at_least("m", self.m, 1)?;
        at_least("m_density", self.m_density, 1)?;
        at_least("n_anchors", self.n_anchors, 2)?;
        at_least("rc_lattice", self.rc_lattice, 2)?;
        at_least("n_bins", self.n_bins, 2)?;
        at_least("d", self.d, 1)?;
        at_least("n_eigen", self.n_eigen, self.d + 2)?;
        at_least("n_eq_starts", self.n_eq_starts, 1)?;
        at_least("oracle_max_n", self.oracle_max_n, 3)?;
        at_least("csv_stride", self.csv_stride, 1)?;
        let lag = self.lag_samples();
        let lag_steps = (self.tau / self.dt).round() as usize;
        if lag_steps % self.record_stride != 0 {
            return Err(Error::config(
                "record_stride",
                format!("must divide the lag of {lag_steps} steps"),
            ));
        }
        if lag == 0 {
            return Err(Error::config("record_stride", "lag is shorter than one recorded sample"));
        }
        if self.n_steps / (self.record_stride as u64) <= 2 * lag as u64 {
            return Err(Error::config("n_steps", "trajectory is shorter than two lag times"));
        }
        if (self.n_steps / self.record_stride as u64) > u32::MAX as u64 {
            return Err(Error::config("n_steps", "too many recorded states"));
        }
        self.simulation()?;
        Ok(())
    }

    pub fn box_domain(&self) -> BoxDomain {
        BoxDomain::square(self.domain[0], self.domain[1])
    }

    pub fn grid_partition(&self) -> Result<GridPartition> {
        GridPartition::uniform(self.box_domain(), self.grid)
    }

    pub fn simulation(&self) -> Result<SimulationConfig> {
        SimulationConfig::new(self.beta, self.dt, self.tau, self.seed, self.box_domain())
    }

    /// Lag in recorded samples.
    pub fn lag_samples(&self) -> usize {
        let steps = (self.tau / self.dt).round() as usize;
        steps / self.record_stride
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lag_samples(), 50);
    }

    #[test]
    fn file_and_overrides() {
        let mut c = PipelineConfig::default();
        c.apply_text("# comment\nbeta = 2\n\nx_star = 0, -3  # trailing\nn_steps = 4e6\n")
            .unwrap();
        c.apply_overrides(&["--beta", "3", "--coupling=independent", "--rc-mode", "scattered"])
            .unwrap();
        assert_eq!(c.beta, 3.0);
        assert_eq!(c.x_star, [0.0, -3.0]);
        assert_eq!(c.n_steps, 4_000_000);
        assert_eq!(c.coupling, NoiseCoupling::Independent);
        assert_eq!(c.rc_mode, RcMode::Scattered);
    }

    #[test]
    fn errors_name_line_or_field() {
        let mut c = PipelineConfig::default();
        let e = c.apply_text("beta = 1\nbogus = 3\n").unwrap_err();
        assert!(matches!(e, Error::ConfigSyntax { line: 2, .. }), "{e}");
        let e = c.apply_text("beta 1\n").unwrap_err();
        assert!(matches!(e, Error::ConfigSyntax { line: 1, .. }));
        let e = c.apply_text("n_starts = 2.5\n").unwrap_err();
        assert!(e.to_string().contains("n_starts"));
        assert!(c.apply_overrides(&["--beta"]).is_err());
        assert!(c.apply_overrides(&["beta", "1"]).is_err());
        let e = PipelineConfig::load(None, &["--dt", "0"]).unwrap_err();
        assert!(matches!(&e, Error::InvalidConfig { field, .. } if field == "dt"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn every_key_is_settable() {
        let c = PipelineConfig::default();
        let json = serde_json::to_value(&c).unwrap();
        let obj = json.as_object().unwrap();
        assert_eq!(obj.len(), PipelineConfig::KEYS.len());
        for k in PipelineConfig::KEYS {
            assert!(obj.contains_key(*k), "{k}");
        }
        let mut c = PipelineConfig::default();
        for (k, v) in [("grid", "20"), ("domain", "-1,1"), ("output", "x"), ("d", "2")] {
            c.set(k, v).unwrap();
        }
        assert_eq!(c.domain, [-1.0, 1.0]);
    }
}
