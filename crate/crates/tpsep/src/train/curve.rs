//! Per-epoch learning-curve records, persisted as CSV.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    pub beta: f64,
    pub train_loss: f64,
    pub val_si_snr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<EpochRecord>,
}

const HEADER: &str = "epoch,alpha,beta,train_loss,val_si_snr,wall_seconds";

impl LearningCurve {
    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.alpha, r.beta, r.train_loss, r.val_si_snr, r.wall_seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == HEADER => {}
            other => {
                return Err(Error::Train(format!(
                    "curve csv: bad header {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(Error::Train(format!("curve csv: line {} has {} fields", i + 2, parts.len())));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Train(format!("curve csv line {}: {}", i + 2, e)))
            };
            records.push(EpochRecord {
                epoch: parse(parts[0])? as usize,
                alpha: parse(parts[1])?,
                beta: parse(parts[2])?,
                train_loss: parse(parts[3])?,
                val_si_snr: parse(parts[4])?,
                wall_seconds: parse(parts[5])?,
            });
        }
        Ok(LearningCurve { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn csv_round_trip() {
        let mut curve = LearningCurve::default();
        curve.push(EpochRecord {
            epoch: 0,
            alpha: 1.0,
            beta: 1.0,
            train_loss: -3.25,
            val_si_snr: 1.5,
            wall_seconds: 0.75,
        });
        curve.push(EpochRecord {
            epoch: 1,
            alpha: 0.5,
            beta: 0.5,
            train_loss: -4.125,
            val_si_snr: 2.25,
            wall_seconds: 1.5,
        });
        let dir = tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        curve.write_csv(&p).unwrap();
        let read = LearningCurve::read_csv(&p).unwrap();
        assert_eq!(curve, read);
    }
}
