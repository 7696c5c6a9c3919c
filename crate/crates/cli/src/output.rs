use std::io::Write;
use std::path::Path;

use redopt::model::evaluate;
use redopt::{Dataset, FitReport, Model};

use crate::error::CliError;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// Curve samples as CSV text: `grid` evenly spaced `t` over the data range
/// with an empty `y_exp`, merged with one row per data point, ordered by
/// `t` (grid rows first on ties).
pub fn curve_csv(report: &FitReport, model: &dyn Model, data: &Dataset, grid: usize) -> Result<String, CliError> {
    let (lo, hi) = data.t_range();
    let p = &report.params.values;
    let k = report.k_star;
    let mut rows: Vec<(f64, u8, f64, Option<f64>)> = Vec::with_capacity(grid + data.len());
    for i in 0..grid {
        let t = if i + 1 == grid {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (grid - 1) as f64
        };
        rows.push((t, 0, evaluate(model, p, k, t).map_err(CliError::Numerical)?, None));
    }
    for pt in data.points() {
        rows.push((pt.t, 1, evaluate(model, p, k, pt.t).map_err(CliError::Numerical)?, Some(pt.y)));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = String::from("t,y_fit,y_exp\n");
    for (t, _, y_fit, y_exp) in rows {
        out.push_str(&format!("{t:.16e},{y_fit:.16e},"));
        if let Some(y) = y_exp {
            out.push_str(&format!("{y:.16e}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_curve(report: &FitReport, model: &dyn Model, data: &Dataset, grid: usize, path: &Path) -> Result<(), CliError> {
    write_atomic(path, curve_csv(report, model, data, grid)?.as_bytes())
}
