//! Metrics rows and CSV persistence for the experiment sweeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated grid point. Optional fields stay empty in scenarios where
/// the quantity is undefined (e.g. no eavesdropper accuracy in Scenario I).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub dataset: String,
    pub tx_plug: bool,
    pub rx_plug: bool,
    pub snr_bob_db: f64,
    pub snr_eve_db: f64,
    pub u: Option<f64>,
    pub psr_db: Option<f64>,
    pub comm_mse: f64,
    pub mi_upper_nats: Option<f64>,
    pub covertness_mse: f64,
    pub eve_accuracy: Option<f64>,
    pub seed: u64,
}

impl MetricsRow {
    pub fn is_finite(&self) -> bool {
        let opt = |v: Option<f64>| v.map_or(true, f64::is_finite);
        self.snr_bob_db.is_finite()
            && self.snr_eve_db.is_finite()
            && self.comm_mse.is_finite()
            && self.covertness_mse.is_finite()
            && opt(self.u)
            && opt(self.psr_db)
            && opt(self.mi_upper_nats)
            && opt(self.eve_accuracy)
    }
}

pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::format(format!("cannot open {}: {e}", path.display())))?;
    for row in rows {
        if !row.is_finite() {
            return Err(Error::Numeric(format!("non-finite metrics row: {row:?}")));
        }
        writer
            .serialize(row)
            .map_err(|e| Error::format(format!("csv write failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::format(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|_| Error::Missing(path.display().to_string()))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let row: MetricsRow =
            record.map_err(|e| Error::format(format!("csv parse failed: {e}")))?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(snr_eve: f64) -> MetricsRow {
        MetricsRow {
            scenario: "agn".into(),
            dataset: "synth".into(),
            tx_plug: true,
            rx_plug: true,
            snr_bob_db: 5.0,
            snr_eve_db: snr_eve,
            u: Some(0.4),
            psr_db: None,
            comm_mse: 0.03,
            mi_upper_nats: Some(1.7),
            covertness_mse: 0.8,
            eve_accuracy: None,
            seed: 17,
        }
    }

    #[test]
    fn round_trip_preserves_rows() {
        let rows: Vec<MetricsRow> = [-5.0, 0.0, 5.0].iter().map(|&s| row(s)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_rows(&path, &rows).unwrap();
        let loaded = read_rows(&path).unwrap();
        assert_eq!(rows, loaded);
    }

    #[test]
    fn writes_are_byte_identical_across_runs() {
        let rows: Vec<MetricsRow> = [1.0, 2.0].iter().map(|&s| row(s)).collect();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_rows(&p1, &rows).unwrap();
        write_rows(&p2, &rows).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn non_finite_rows_rejected() {
        let mut bad = row(0.0);
        bad.comm_mse = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        assert!(write_rows(&dir.path().join("bad.csv"), &[bad]).is_err());
    }
}
