//! Piecewise-linear tabulated functions loaded from two-column CSV files.

use std::path::Path;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq)]
pub struct TableFunction {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl TableFunction {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(SimError::ConfigInvalid(vec![
                "table function needs at least two rows".into(),
            ]));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(SimError::ConfigInvalid(vec![
                "table function contains non-finite values".into(),
            ]));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(SimError::ConfigInvalid(vec![
                "table function has duplicate abscissae".into(),
            ]));
        }
        let (xs, ys) = points.into_iter().unzip();
        Ok(Self { xs, ys })
    }

    /// Reads `abscissa,value` rows. A non-numeric first row is treated as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut points = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(SimError::ConfigInvalid(vec![format!(
                    "{}: row {} has fewer than two columns",
                    path.display(),
                    row + 1
                )]));
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(x), Ok(y)) => points.push((x, y)),
                _ if row == 0 => continue,
                _ => {
                    return Err(SimError::ConfigInvalid(vec![format!(
                        "{}: row {} is not numeric",
                        path.display(),
                        row + 1
                    )]))
                }
            }
        }
        Self::new(points)
    }

    /// Linear interpolation, constant extrapolation beyond the end points.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let hi = self.xs.partition_point(|&p| p <= x);
        let lo = hi - 1;
        let w = (x - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.ys[lo] + w * (self.ys[hi] - self.ys[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn interpolates_and_clamps() {
        let t = TableFunction::new(vec![(1.0, 3.0), (0.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(t.eval(-1.0), 1.0);
        assert_eq!(t.eval(0.5), 2.0);
        assert_eq!(t.eval(1.5), 3.0);
        assert_eq!(t.eval(9.0), 3.0);
    }

    #[test]
    fn reads_csv_with_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "r,D\n0,0\n1,2\n2,8").unwrap();
        let t = TableFunction::from_csv(f.path()).unwrap();
        assert_eq!(t.eval(1.5), 5.0);
    }

    #[test]
    fn rejects_duplicates() {
        assert!(TableFunction::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
    }
}
