//! `fit` and `scan` jobs.

use std::path::{Path, PathBuf};

use redopt::kinetics::{first_order_model, second_order_model, FirstOrderConfig, SecondOrderConfig};
use redopt::optimize_ii::{builtins, scan_stationary, CostFunction, ScanReport, DEFAULT_GRID};
use redopt::oracle::{fit_full, DEFAULT_STARTS};
use redopt::path::{KSearch, DEFAULT_SCAN_GRID};
use redopt::reduce_ia::fit_ia;
use redopt::reduce_ib::fit_ib;
use redopt::{Dataset, FitReport, Model};
use serde::Serialize;

use crate::config::{JobConfig, JobMethod};
use crate::dataset::load_dataset;
use crate::error::CliError;
use crate::output::{emit_curve, write_atomic};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const DEFAULT_CURVE_GRID: usize = 200;

#[derive(Debug, Clone, Default)]
pub struct FitArgs {
    pub config: PathBuf,
    pub data: Option<PathBuf>,
    pub method: Option<JobMethod>,
    pub out: Option<PathBuf>,
    pub curve: Option<PathBuf>,
    pub grid: Option<usize>,
    pub threads: Option<usize>,
    pub provenance: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ScanArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub provenance: bool,
}

#[derive(Serialize)]
struct ErrorEcho {
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct Provenance {
    unix_time: u64,
    host: String,
    threads: usize,
}

impl Provenance {
    fn collect() -> Self {
        let unix_time = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let host = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
            .map(|h| h.trim().to_string())
            .unwrap_or_default();
        Provenance {
            unix_time,
            host,
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Serialize)]
struct ModelEcho {
    name: String,
    constants: serde_json::Value,
    k_bounds: (f64, f64),
}

#[derive(Serialize)]
struct DatasetEcho {
    name: String,
    points: usize,
}

#[derive(Serialize)]
struct FitOutput<'a> {
    version: &'static str,
    command: &'static str,
    status: &'static str,
    config: &'a JobConfig,
    model: ModelEcho,
    dataset: DatasetEcho,
    #[serde(flatten)]
    report: Option<&'a FitReport>,
    error: Option<ErrorEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Serialize)]
struct CostEcho {
    name: String,
    coordinates: Vec<String>,
    bounds: Vec<(f64, f64)>,
    scan_coordinate: usize,
}

#[derive(Serialize)]
struct ScanOutput<'a> {
    version: &'static str,
    command: &'static str,
    status: &'static str,
    config: &'a JobConfig,
    cost: CostEcho,
    #[serde(flatten)]
    report: Option<&'a ScanReport>,
    error: Option<ErrorEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}"))),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Value at the first `t = 0` row, if any.
fn initial_value(data: &Dataset) -> Option<f64> {
    data.points().iter().find(|p| p.t == 0.0).map(|p| p.y)
}

fn k_bounds(cfg: &JobConfig, default: (f64, f64)) -> Result<(f64, f64), CliError> {
    let (lo, hi) = (cfg.k_min.unwrap_or(default.0), cfg.k_max.unwrap_or(default.1));
    if lo < hi {
        Ok((lo, hi))
    } else {
        Err(CliError::Config(format!("k range [{lo}, {hi}] is empty")))
    }
}

/// The kinetics model named by the config. `lambda0` / `y0` come from the
/// data's `t = 0` row when there is one, else from the config.
fn build_model(cfg: &JobConfig, data: &Dataset) -> Result<(Box<dyn Model>, serde_json::Value), CliError> {
    match cfg.model.as_str() {
        "first-order" => {
            let lambda0 = initial_value(data)
                .or(cfg.first_order.lambda0)
                .ok_or_else(|| CliError::Config("[first-order] lambda0 missing and the data has no t = 0 row".into()))?;
            let m = first_order_model(FirstOrderConfig { lambda0 });
            let (lo, hi) = k_bounds(cfg, m.k_bounds())?;
            let c = serde_json::to_value(m.config()).expect("config serializes");
            Ok((Box::new(m.with_k_bounds(lo, hi)), c))
        }
        "second-order" => {
            let s = &cfg.second_order;
            let missing = |key: &str| CliError::Config(format!("[second-order] {key} is required"));
            let y0 = initial_value(data)
                .or(s.y0)
                .ok_or_else(|| CliError::Config("[second-order] y0 missing and the data has no t = 0 row".into()))?;
            let m = second_order_model(SecondOrderConfig {
                y0,
                a0: s.a0.ok_or_else(|| missing("a0"))?,
                b0: s.b0.ok_or_else(|| missing("b0"))?,
            })
            .map_err(CliError::Setup)?;
            let (lo, hi) = k_bounds(cfg, m.k_bounds())?;
            let c = serde_json::to_value(m.config()).expect("config serializes");
            Ok((Box::new(m.with_k_bounds(lo, hi)), c))
        }
        other if builtins::by_name(other).is_some() => Err(CliError::Usage(format!(
            "`{other}` is a test cost; use the scan command"
        ))),
        other => Err(CliError::Config(format!("unknown model `{other}`"))),
    }
}

pub fn run_fit(args: &FitArgs) -> Result<(), CliError> {
    let mut cfg = JobConfig::load(&args.config)?;
    if let Some(m) = args.method {
        cfg.method = Some(m);
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if args.grid.is_some() {
        cfg.curve_grid = args.grid;
    }
    cfg.validate()?;
    let method = cfg.method.unwrap_or(JobMethod::Ia);
    if method == JobMethod::Scan {
        return Err(CliError::Usage("method scan needs the scan command".into()));
    }
    let data_path = match (&args.data, &cfg.data) {
        (Some(p), _) => {
            cfg.data = Some(p.display().to_string());
            p.clone()
        }
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => return Err(CliError::Usage("no dataset: set [job] data or pass --data".into())),
    };
    let out = args.out.clone().or_else(|| cfg.out.as_deref().map(|p| cfg.resolve(p)));
    let curve = args.curve.clone().or_else(|| cfg.curve.as_deref().map(|p| cfg.resolve(p)));

    let data = load_dataset(&data_path)?;
    let (model, constants) = build_model(&cfg, &data)?;
    let model = model.as_ref();
    let search = match cfg.k_seed {
        Some(s) => KSearch::Seed(s),
        None => {
            let (lo, hi) = model.k_bounds();
            KSearch::Scan {
                lo,
                hi,
                grid: cfg.grid_size.unwrap_or(DEFAULT_SCAN_GRID),
            }
        }
    };
    let result = in_pool(cfg.threads, || match method {
        JobMethod::Ia => fit_ia(&data, model, &search, &cfg.solver, &cfg.combos),
        JobMethod::Ib => fit_ib(&data, model, &search, &cfg.solver),
        _ => fit_full(&data, model, cfg.starts.unwrap_or(DEFAULT_STARTS), cfg.seed, &cfg.solver),
    })?;

    let output = FitOutput {
        version: VERSION,
        command: "fit",
        status: if result.is_ok() { "ok" } else { "error" },
        config: &cfg,
        model: ModelEcho {
            name: cfg.model.clone(),
            constants,
            k_bounds: model.k_bounds(),
        },
        dataset: DatasetEcho {
            name: data.name().to_string(),
            points: data.len(),
        },
        report: result.as_ref().ok(),
        error: result.as_ref().err().map(|e| ErrorEcho {
            kind: e.kind(),
            message: e.to_string(),
        }),
        provenance: args.provenance.then(Provenance::collect),
    };
    write_json(&output, out.as_deref())?;
    let report = result.map_err(CliError::Numerical)?;
    if let Some(path) = curve {
        emit_curve(&report, model, &data, cfg.curve_grid.unwrap_or(DEFAULT_CURVE_GRID), &path)?;
    }
    Ok(())
}

fn build_cost(cfg: &JobConfig) -> Result<CostFunction, CliError> {
    let cost = builtins::by_name(&cfg.model).ok_or_else(|| {
        CliError::Config(format!(
            "unknown test cost `{}` (known: {})",
            cfg.model,
            builtins::NAMES.join(", ")
        ))
    })?;
    let cost = cost.with_scan_coordinate(cfg.scan_coordinate).map_err(CliError::Setup)?;
    let (lo, hi) = k_bounds(cfg, cost.k_bounds())?;
    cost.with_coordinate_bounds(cfg.scan_coordinate, lo, hi)
        .map_err(CliError::Setup)
}

pub fn run_scan(args: &ScanArgs) -> Result<(), CliError> {
    let mut cfg = JobConfig::load(&args.config)?;
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.validate()?;
    if cfg.method.is_some_and(|m| m != JobMethod::Scan) {
        return Err(CliError::Usage("the scan command only runs method scan".into()));
    }
    let out = args.out.clone().or_else(|| cfg.out.as_deref().map(|p| cfg.resolve(p)));
    let cost = build_cost(&cfg)?;
    let grid = cfg.grid_size.unwrap_or(DEFAULT_GRID);
    let result = in_pool(cfg.threads, || scan_stationary(&cost, grid, &cfg.solver))?;

    let output = ScanOutput {
        version: VERSION,
        command: "scan",
        status: if result.is_ok() { "ok" } else { "error" },
        config: &cfg,
        cost: CostEcho {
            name: cfg.model.clone(),
            coordinates: cost.names().to_vec(),
            bounds: cost.bounds().to_vec(),
            scan_coordinate: cost.scan_coordinate(),
        },
        report: result.as_ref().ok(),
        error: result.as_ref().err().map(|e| ErrorEcho {
            kind: e.kind(),
            message: e.to_string(),
        }),
        provenance: args.provenance.then(Provenance::collect),
    };
    write_json(&output, out.as_deref())?;
    result.map(|_| ()).map_err(CliError::Numerical)
}
