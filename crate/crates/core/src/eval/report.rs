use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// `metric,value` CSV, values at 17 significant digits.
pub fn write_metrics_csv(path: &Path, metrics: &[(String, f64)]) -> Result<()> {
    let mut out = String::from("metric,value\n");
    for (k, v) in metrics {
        out.push_str(&format!("{k},{v:.16e}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Human-readable report, one `name: value` per line.
pub fn write_metrics_text(w: &mut impl Write, metrics: &[(String, f64)]) -> std::io::Result<()> {
    let width = metrics.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in metrics {
        writeln!(w, "{k:<width$}  {v:.6}")?;
    }
    Ok(())
}

pub fn write_det_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("p_fa,p_miss\n");
    for (fa, miss) in points {
        out.push_str(&format!("{fa:.16e},{miss:.16e}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
