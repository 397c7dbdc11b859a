//! CSV and JSON artifacts of a run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::run::{RunOutput, Sample};
use crate::error::Result;

pub const CSV_COLUMNS: [&str; 21] = [
    "t", "i_g_d", "i_g_q", "v_d", "v_q", "i_d", "i_q", "delta", "u1", "u2", "u3", "e_detector", "xhat_1", "xhat_2",
    "theta1", "theta2", "theta3", "normF", "Vg_hat", "omega_hat_hz", "pe_min_eig",
];

pub fn csv_row(s: &Sample) -> [f64; 21] {
    let y = s.y.to_array();
    [
        s.t, y[0], y[1], y[2], y[3], y[4], y[5], s.delta, s.u1, s.u23.x, s.u23.y, s.e_detector, s.x_hat.x, s.x_hat.y,
        s.theta.x, s.theta.y, s.theta.z, s.norm_f, s.vg_hat, s.omega_hat_hz, s.pe_min_eig,
    ]
}

/// 17 significant digits, so values round-trip exactly.
pub fn write_csv<W: Write>(mut w: W, samples: &[Sample]) -> Result<()> {
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    let mut line = String::with_capacity(21 * 25);
    for s in samples {
        line.clear();
        for (i, v) in csv_row(s).iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:.16e}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<name>.csv` and `<name>.metrics.json` under `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", out.name));
    write_csv(BufWriter::new(File::create(&csv_path)?), &out.samples)?;
    let json_path = dir.join(format!("{}.metrics.json", out.name));
    fs::write(&json_path, serde_json::to_string_pretty(&out.metrics.to_flat_json())?)?;
    Ok((csv_path, json_path))
}
