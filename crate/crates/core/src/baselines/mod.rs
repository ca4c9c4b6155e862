//! Reference encoders: least squares, ridge with cross-validated penalty, and
//! a gradient-trained linear map. No intercept anywhere; standardize first.

mod reference;
mod ridge;

use std::fmt;
use std::str::FromStr;

pub use reference::{reference_fit, ReferenceConfig};
pub use ridge::{fold_assignment, ols_fit, ridge_cv, ridge_cv_multi, ridge_fit, RidgeCv, RidgeGrid};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ols,
    Ridge,
    Reference,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ols => "ols",
            Method::Ridge => "ridge",
            Method::Reference => "reference",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ols" => Ok(Method::Ols),
            "ridge" => Ok(Method::Ridge),
            "reference" => Ok(Method::Reference),
            other => Err(Error::Config(format!("unknown baseline {other:?} (expected ols, ridge or reference)"))),
        }
    }
}

/// One row of the baseline results table.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub voxel_id: usize,
    /// Method label; may carry a support-size suffix such as `ridge-300`.
    pub method: String,
    pub lambda_star: Option<f64>,
    pub ev_test: f64,
}

pub const BASELINE_HEADER: &str = "voxel_id,method,lambda_star,ev_test";

/// Comma-separated table with a header row; a missing penalty is written as `NA`.
pub fn format_baseline_table(rows: &[BaselineRow]) -> String {
    let mut out = String::from(BASELINE_HEADER);
    out.push('\n');
    for r in rows {
        let lambda = r.lambda_star.map_or_else(|| "NA".to_string(), |l| l.to_string());
        out.push_str(&format!("{},{},{},{}\n", r.voxel_id, r.method, lambda, r.ev_test));
    }
    out
}

pub fn parse_baseline_table(text: &str) -> Result<Vec<BaselineRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(BASELINE_HEADER) {
        return Err(Error::Format(format!("baseline table must start with `{BASELINE_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("baseline table row {}: {line:?}", i + 1));
            let cols: Vec<&str> = line.split(',').collect();
            let [voxel, method, lambda, ev] = cols.as_slice() else {
                return Err(bad());
            };
            Ok(BaselineRow {
                voxel_id: voxel.parse().map_err(|_| bad())?,
                method: method.to_string(),
                lambda_star: if *lambda == "NA" { None } else { Some(lambda.parse().map_err(|_| bad())?) },
                ev_test: ev.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let rows = vec![
            BaselineRow { voxel_id: 0, method: "ridge-100".into(), lambda_star: Some(1e3), ev_test: 0.25 },
            BaselineRow { voxel_id: 7, method: "ols".into(), lambda_star: None, ev_test: -0.125 },
        ];
        let text = format_baseline_table(&rows);
        assert!(text.starts_with("voxel_id,method,lambda_star,ev_test\n"));
        assert_eq!(parse_baseline_table(&text).unwrap(), rows);
    }

    #[test]
    fn method_names() {
        for m in [Method::Ols, Method::Ridge, Method::Reference] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("lasso".parse::<Method>().is_err());
    }
}
