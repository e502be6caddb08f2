use serde::{Deserialize, Serialize};
use std::path::Path;

use super::dataset::write_atomic;
use super::HarnessError;

/// Peak value of normalized pixels.
pub const MAX_PIXEL: f64 = 1.0;

/// `10·log₁₀(MAX²/mse)`; a perfect reconstruction gives `+∞`, written as
/// `inf` in CSV output.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_PIXEL * MAX_PIXEL / mse).log10()
    }
}

pub fn mse(x: &[f32], y: &[f32]) -> f64 {
    assert_eq!(x.len(), y.len(), "mse of unequal lengths");
    x.iter().zip(y).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum::<f64>() / x.len().max(1) as f64
}

pub fn psnr(x: &[f32], y: &[f32]) -> f64 {
    psnr_from_mse(mse(x, y))
}

/// One evaluated condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub environment: String,
    pub elevation_deg: f64,
    pub state_trained: String,
    pub state_actual: String,
    pub ratio: f64,
    pub channel_filters: usize,
    pub kind: String,
    pub seed: u64,
    pub snr_db: f64,
    pub realizations: usize,
    /// Mean per-pixel squared error over images and channel realizations.
    pub mse: f64,
    pub psnr_db: f64,
}

impl ResultRow {
    pub fn check(&self) -> Result<(), HarnessError> {
        let expect = psnr_from_mse(self.mse);
        let ok = if expect.is_infinite() { self.psnr_db == expect } else { (self.psnr_db - expect).abs() <= 1e-9 };
        if !ok || self.mse < 0.0 || self.mse.is_nan() {
            return Err(HarnessError::Invariant(format!(
                "row psnr {} inconsistent with mse {} (expected {expect})",
                self.psnr_db, self.mse
            )));
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Data(format!("csv: {e}"))
}

/// Serializes rows with a header; every row is checked first.
pub fn rows_to_csv<R: Serialize>(rows: &[R]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| HarnessError::Data(e.to_string()))
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    rows.iter().try_for_each(ResultRow::check)?;
    write_atomic(path, &rows_to_csv(rows)?)
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let rows: Vec<ResultRow> = read_csv(path)?;
    rows.iter().try_for_each(ResultRow::check)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(mse: f64) -> ResultRow {
        ResultRow {
            environment: "open".into(),
            elevation_deg: 40.0,
            state_trained: "los".into(),
            state_actual: "los".into(),
            ratio: 0.0417,
            channel_filters: 4,
            kind: "baseline".into(),
            seed: 1,
            snr_db: 37.9,
            realizations: 10,
            mse,
            psnr_db: psnr_from_mse(mse),
        }
    }

    #[test]
    fn psnr_reference_points() {
        assert_eq!(psnr_from_mse(0.0), f64::INFINITY);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        assert!((psnr_from_mse(1e-6) - 60.0).abs() < 1e-12);
        assert_eq!(psnr(&[0.5, 0.25], &[0.5, 0.25]), f64::INFINITY);
    }

    #[test]
    fn csv_round_trip_including_infinity() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row(1.234e-3), row(0.0)];
        let p = dir.path().join("r.csv");
        write_results(&p, &rows).unwrap();
        assert_eq!(read_results(&p).unwrap(), rows);
        assert!(std::fs::read_to_string(&p).unwrap().contains("inf"));
    }

    #[test]
    fn inconsistent_row_is_rejected() {
        let mut r = row(1e-3);
        r.psnr_db += 1e-6;
        assert!(r.check().is_err());
        assert!(write_results(Path::new("/nonexistent/x.csv"), &[r]).is_err());
    }

    proptest! {
        #[test]
        fn consistency_holds_for_any_mse(mse in 1e-12f64..10.0) {
            prop_assert!(row(mse).check().is_ok());
        }
    }
}
