//! Per-epoch training metrics and their CSV form.
//!
//! Wall-clock time is kept out of `metrics.csv` so that file depends only on
//! the configuration and seed; it goes to a separate timing table.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub irl_loss: Option<f64>,
    pub rl_loss: Option<f64>,
    pub bc_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub train_success: Option<f64>,
    /// Cumulative.
    pub robot_trials: usize,
    pub wall_clock_s: f64,
}

/// Append-only table, one row per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    rows: Vec<EpochMetrics>,
}

pub const METRICS_HEADER: &str = "epoch,irl_loss,rl_loss,bc_loss,alpha,train_success,robot_trials";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rows must arrive in epoch order starting at 1.
    pub fn push(&mut self, row: EpochMetrics) -> Result<()> {
        let expected = self.rows.len() + 1;
        if row.epoch != expected {
            return Err(Error::Contract(format!(
                "metrics row for epoch {} arrived, expected epoch {expected}",
                row.epoch
            )));
        }
        if self.rows.last().is_some_and(|last| row.robot_trials < last.robot_trials) {
            return Err(Error::Contract("robot-trial count went backwards".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[EpochMetrics] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch,
                opt(r.irl_loss),
                opt(r.rl_loss),
                opt(r.bc_loss),
                opt(r.alpha),
                opt(r.train_success),
                r.robot_trials
            )
            .expect("writing to a string");
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,wall_clock_s\n");
        for r in &self.rows {
            writeln!(s, "{},{}", r.epoch, r.wall_clock_s).expect("writing to a string");
        }
        s
    }
}
