//! Training metrics and their CSV form.
//!
//! Rows are emitted at every evaluation point. All fields are deterministic
//! functions of the seed and config so two identical runs produce
//! byte-identical files; live wall-clock throughput is reported on stdout by
//! the CLI instead of in the CSV (the `fps` column is kept for schema
//! stability and written as 0).

use crate::error::Result;
use std::io::Write;

pub const CSV_HEADER: &str = "step,eval_return,critic_loss_1,critic_loss_2,actor_loss,sigma,fps";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_return: f64,
    pub critic_loss_1: f64,
    pub critic_loss_2: f64,
    pub actor_loss: f64,
    pub sigma: f64,
    pub fps: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.eval_return,
            self.critic_loss_1,
            self.critic_loss_2,
            self.actor_loss,
            self.sigma,
            self.fps
        )
    }
}

/// Render a full metrics file (header plus one line per row).
pub fn to_csv_string(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

pub fn write_csv<W: Write>(w: &mut W, rows: &[MetricsRow]) -> Result<()> {
    w.write_all(to_csv_string(rows).as_bytes())?;
    Ok(())
}
