//! Metrics CSV emission. The schema is fixed: header below, LF line
//! endings, '.' decimal separator, empty fields for metrics that were not
//! recorded.

use std::io;
use std::path::Path;

use gdro_core::gdro::MetricsRow;

pub const HEADER: &str =
    "t,samples_used,max_risk,regret_q_prime,regret_ratio,eps_phi_est,wall_time_ms,clamp_count";

fn optional(value: Option<f64>) -> String {
    value.map_or_else(String::new, |v| v.to_string())
}

/// Renders the full CSV text for one run.
pub fn render(rows: &[MetricsRow]) -> String {
    let mut text = String::from(HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.round,
            row.samples_used,
            row.max_risk,
            optional(row.regret_q_prime),
            optional(row.regret_ratio),
            optional(row.eps_phi_est),
            row.wall_time_ms,
            row.clamp_count,
        ));
    }
    text
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> io::Result<()> {
    std::fs::write(path, render(rows))
}
