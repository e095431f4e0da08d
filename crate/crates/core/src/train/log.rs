//! Per-epoch training log.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: u64,
    pub mean_loss: f64,
    pub test_iou: Option<f64>,
    pub test_dice: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

pub const LOG_HEADER: &str = "epoch,mean_loss,test_iou,test_dice,wall_seconds";

impl TrainLog {
    /// Appends a row; epochs must be strictly increasing.
    pub fn push(&mut self, row: EpochRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::config(format!(
                    "log epoch {} does not follow epoch {}",
                    row.epoch, last.epoch
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    /// Same epochs, losses and test metrics bit for bit; wall time is ignored.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.mean_loss.to_bits() == b.mean_loss.to_bits()
                    && a.test_iou.map(f64::to_bits) == b.test_iou.map(f64::to_bits)
                    && a.test_dice.map(f64::to_bits) == b.test_dice.map(f64::to_bits)
            })
    }

    /// CSV with full-precision losses (round-trippable) and empty cells for skipped evaluations.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:?},{},{},{:.3}",
                r.epoch,
                r.mean_loss,
                opt(r.test_iou),
                opt(r.test_dice),
                r.wall_seconds
            );
        }
        out
    }
}
