//! Job configuration files.
//!
//! ```ini
//! [job]
//! model = first-order
//! method = ia
//! data = runs/a.csv
//! k_min = 0.001
//! k_max = 0.1
//!
//! [first-order]
//! lambda0 = 0.1
//! ```
//!
//! Keys outside any section belong to `[job]`. Unknown sections and keys
//! are rejected. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, ParseOption};
use redopt::reduce_ia::CombinationPolicy;
use redopt::SolverConfig;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum JobMethod {
    Ia,
    Ib,
    Full,
    Scan,
}

impl FromStr for JobMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ia" => Ok(JobMethod::Ia),
            "ib" => Ok(JobMethod::Ib),
            "full" => Ok(JobMethod::Full),
            "scan" => Ok(JobMethod::Scan),
            _ => Err(format!("unknown method `{s}` (expected ia, ib, full or scan)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FirstOrderSection {
    pub lambda0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SecondOrderSection {
    pub y0: Option<f64>,
    pub a0: Option<f64>,
    pub b0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobConfig {
    pub model: String,
    pub method: Option<JobMethod>,
    /// As written in the file or on the command line.
    pub data: Option<String>,
    pub k_min: Option<f64>,
    pub k_max: Option<f64>,
    pub k_seed: Option<f64>,
    pub grid_size: Option<usize>,
    pub solver: SolverConfig,
    pub combos: CombinationPolicy,
    pub seed: u64,
    pub starts: Option<usize>,
    pub scan_coordinate: usize,
    pub out: Option<String>,
    pub curve: Option<String>,
    pub curve_grid: Option<usize>,
    /// Left out of reports, which must not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
    pub first_order: FirstOrderSection,
    pub second_order: SecondOrderSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const JOB_KEYS: [&str; 19] = [
    "model",
    "method",
    "data",
    "k_min",
    "k_max",
    "k_seed",
    "grid_size",
    "tol",
    "det_eps",
    "fd_step",
    "max_iter",
    "combos",
    "seed",
    "starts",
    "scan_coordinate",
    "out",
    "curve",
    "curve_grid",
    "threads",
];

fn parse_value<T: FromStr>(section: &str, key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Config(format!("[{section}] {key}: cannot parse `{raw}`")))
}

fn parse_combos(raw: &str, seed: u64) -> Result<CombinationPolicy, CliError> {
    if raw == "all" {
        return Ok(CombinationPolicy::All);
    }
    raw.strip_prefix("sample:")
        .and_then(|n| n.parse().ok())
        .map(|count| CombinationPolicy::Sample { count, seed })
        .ok_or_else(|| CliError::Config(format!("[job] combos: expected `all` or `sample:N`, got `{raw}`")))
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base_dir)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, CliError> {
        let options = ParseOption {
            enabled_escape: false,
            ..ParseOption::default()
        };
        let ini = Ini::load_from_str_opt(text, options)
            .map_err(|e| CliError::Config(format!("line {}: {}", e.line + 1, e.msg)))?;

        let mut job: Vec<(String, String)> = Vec::new();
        let mut first = FirstOrderSection::default();
        let mut second = SecondOrderSection::default();
        let mut seen: Vec<(String, String)> = Vec::new();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("job");
            for (key, value) in props.iter() {
                let id = (section.to_string(), key.to_string());
                if seen.contains(&id) {
                    return Err(CliError::Config(format!("[{section}] {key}: given twice")));
                }
                seen.push(id);
                let value = value.trim();
                match section {
                    "job" if JOB_KEYS.contains(&key) => job.push((key.to_string(), value.to_string())),
                    "first-order" if key == "lambda0" => first.lambda0 = Some(parse_value(section, key, value)?),
                    "second-order" => {
                        let v = Some(parse_value(section, key, value)?);
                        match key {
                            "y0" => second.y0 = v,
                            "a0" => second.a0 = v,
                            "b0" => second.b0 = v,
                            _ => return Err(CliError::Config(format!("unknown key `{key}` in [{section}]"))),
                        }
                    }
                    "job" | "first-order" => {
                        return Err(CliError::Config(format!("unknown key `{key}` in [{section}]")))
                    }
                    _ => return Err(CliError::Config(format!("unknown section [{section}]"))),
                }
            }
        }

        let get = |k: &str| job.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        fn opt<T: FromStr>(v: Option<&str>, key: &str) -> Result<Option<T>, CliError> {
            v.map(|raw| parse_value("job", key, raw)).transpose()
        }

        let model = get("model")
            .ok_or_else(|| CliError::Config("[job] model is required".into()))?
            .to_string();
        let defaults = SolverConfig::default();
        let solver = SolverConfig {
            tol: opt(get("tol"), "tol")?.unwrap_or(defaults.tol),
            max_iter: opt(get("max_iter"), "max_iter")?.unwrap_or(defaults.max_iter),
            fd_step: opt(get("fd_step"), "fd_step")?.unwrap_or(defaults.fd_step),
            det_eps: opt(get("det_eps"), "det_eps")?.unwrap_or(defaults.det_eps),
        };
        solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let seed = opt(get("seed"), "seed")?.unwrap_or(0);
        let combos = match get("combos") {
            Some(raw) => parse_combos(raw, seed)?,
            None => CombinationPolicy::All,
        };
        let method = get("method")
            .map(|m| m.parse::<JobMethod>().map_err(CliError::Config))
            .transpose()?;

        let cfg = JobConfig {
            model,
            method,
            data: get("data").map(str::to_string),
            k_min: opt(get("k_min"), "k_min")?,
            k_max: opt(get("k_max"), "k_max")?,
            k_seed: opt(get("k_seed"), "k_seed")?,
            grid_size: opt(get("grid_size"), "grid_size")?,
            solver,
            combos,
            seed,
            starts: opt(get("starts"), "starts")?,
            scan_coordinate: opt(get("scan_coordinate"), "scan_coordinate")?.unwrap_or(0),
            out: get("out").map(str::to_string),
            curve: get("curve").map(str::to_string),
            curve_grid: opt(get("curve_grid"), "curve_grid")?,
            threads: opt(get("threads"), "threads")?,
            first_order: first,
            second_order: second,
            base_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (key, v) in [("k_min", self.k_min), ("k_max", self.k_max), ("k_seed", self.k_seed)] {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(CliError::Config(format!("[job] {key} must be finite")));
            }
        }
        if let (Some(lo), Some(hi)) = (self.k_min, self.k_max) {
            if lo >= hi {
                return Err(CliError::Config(format!("[job] k_min = {lo} must be below k_max = {hi}")));
            }
        }
        if self.grid_size.is_some_and(|g| g < 2) {
            return Err(CliError::Config("[job] grid_size must be >= 2".into()));
        }
        if self.curve_grid.is_some_and(|g| g < 2) {
            return Err(CliError::Config("[job] curve_grid must be >= 2".into()));
        }
        if self.starts == Some(0) {
            return Err(CliError::Config("[job] starts must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("[job] threads must be >= 1".into()));
        }
        Ok(())
    }

    /// A path from the config file, resolved against its directory.
    pub fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<JobConfig, CliError> {
        JobConfig::parse(s, PathBuf::new())
    }

    #[test]
    fn minimal_config() {
        let c = parse("[job]\nmodel = first-order\n").unwrap();
        assert_eq!(c.model, "first-order");
        assert_eq!(c.combos, CombinationPolicy::All);
        assert_eq!(c.solver, SolverConfig::default());
    }

    #[test]
    fn top_level_keys_are_job_keys() {
        let c = parse("model = bowl\ngrid_size = 50\n").unwrap();
        assert_eq!(c.grid_size, Some(50));
    }

    #[test]
    fn sections_and_sampling() {
        let c = parse(
            "[job]\nmodel = second-order\ncombos = sample:5\nseed = 9\n[second-order]\ny0 = 0.043\na0 = 3.82e-5\nb0 = 4.47e-5\n",
        )
        .unwrap();
        assert_eq!(c.combos, CombinationPolicy::Sample { count: 5, seed: 9 });
        assert_eq!(c.second_order.b0, Some(4.47e-5));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse("[job]\nmodel = bowl\ngrid = 3\n").is_err());
        assert!(parse("[job]\nmodel = bowl\n[first-order]\nlambda = 1\n").is_err());
        assert!(parse("[job]\nmodel = bowl\n[extra]\nx = 1\n").is_err());
        assert!(parse("[job]\nmodel = bowl\nmodel = saddle\n").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(parse("[job]\n").is_err());
        assert!(parse("[job]\nmodel = bowl\nk_min = 2\nk_max = 1\n").is_err());
        assert!(parse("[job]\nmodel = bowl\ntol = abc\n").is_err());
        assert!(parse("[job]\nmodel = bowl\ntol = -1\n").is_err());
        assert!(parse("[job]\nmodel = bowl\ncombos = some\n").is_err());
        assert!(parse("[job]\nmodel = bowl\nmethod = lm\n").is_err());
    }
}
