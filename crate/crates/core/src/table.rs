//! Probability tables over a contiguous state range and a time grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::KahanSum;

/// Where a table's numbers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableSource {
    Analytic,
    Oracle,
    Empirical,
}

impl TableSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TableSource::Analytic => "analytic",
            TableSource::Oracle => "oracle",
            TableSource::Empirical => "empirical",
        }
    }
}

/// Conditions recorded on a table instead of failing the computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "kebab-case")]
pub enum TableFlag {
    /// The state budget ran out before the mass target was met.
    StateBudget { states: usize, deficit: f64 },
    /// Pattern enumeration for this state exceeded its budget.
    PatternBudget { state: u64, patterns: u128 },
}

/// `values[i][j] = p(n0 + i, times[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfTable {
    pub n0: u64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// `NaN` where no bound is known; written as `null` in JSON.
    #[serde(with = "nan_as_null")]
    pub error_bounds: Vec<Vec<f64>>,
    pub source: TableSource,
    #[serde(default)]
    pub flags: Vec<TableFlag>,
}

impl PmfTable {
    pub fn new(
        n0: u64,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        error_bounds: Vec<Vec<f64>>,
        source: TableSource,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Grid("a table needs at least one state".into()));
        }
        if values.len() != error_bounds.len()
            || values
                .iter()
                .chain(&error_bounds)
                .any(|row| row.len() != times.len())
        {
            return Err(Error::Grid("table rows must match the time grid".into()));
        }
        Ok(PmfTable {
            n0,
            times,
            values,
            error_bounds,
            source,
            flags: Vec::new(),
        })
    }

    pub fn states(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.values.len() as u64).map(move |i| self.n0 + i)
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    /// `p(n, times[ti])`, zero for states beyond the table.
    pub fn get(&self, n: u64, ti: usize) -> f64 {
        n.checked_sub(self.n0)
            .and_then(|i| self.values.get(i as usize))
            .map(|row| row[ti])
            .unwrap_or(0.0)
    }

    pub fn column(&self, ti: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[ti]).collect()
    }

    /// `1 - Σ_n p(n, t)` per time.
    pub fn deficit(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|ti| {
                let mut acc = KahanSum::default();
                for row in &self.values {
                    acc.add(row[ti]);
                }
                1.0 - acc.value()
            })
            .collect()
    }

    /// Rows `t,n,p,error_bound`, time-major, 17 significant digits, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,n,p,error_bound\n");
        for (ti, &t) in self.times.iter().enumerate() {
            for (i, row) in self.values.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    fmt_f64(t),
                    self.n0 + i as u64,
                    fmt_f64(row[ti]),
                    fmt_f64(self.error_bounds[i][ti])
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Vec<Option<f64>>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| (!x.is_nan()).then_some(x)).collect())
            .collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let opt = Vec::<Vec<Option<f64>>>::deserialize(d)?;
        Ok(opt
            .into_iter()
            .map(|r| r.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
            .collect())
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PmfTable {
        PmfTable::new(
            2,
            vec![0.0, 0.5],
            vec![vec![1.0, 0.6], vec![0.0, 0.3]],
            vec![vec![0.0, 1e-15], vec![0.0, 2e-15]],
            TableSource::Analytic,
        )
        .unwrap()
    }

    #[test]
    fn deficit_and_lookup() {
        let t = sample();
        let d = t.deficit();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.1).abs() < 1e-15);
        assert_eq!(t.get(3, 1), 0.3);
        assert_eq!(t.get(9, 1), 0.0);
        assert_eq!(t.get(1, 1), 0.0);
        assert_eq!(t.states().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn csv_layout() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,n,p,error_bound");
        assert_eq!(
            lines[1],
            "0.0000000000000000e0,2,1.0000000000000000e0,0.0000000000000000e0"
        );
        assert_eq!(lines.len(), 5);
        assert!(!csv.contains('\r'));
        let v: f64 = lines[3].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(v, 0.6);
    }

    #[test]
    fn json_round_trip() {
        let mut t = sample();
        t.flags.push(TableFlag::StateBudget {
            states: 2,
            deficit: 0.1,
        });
        let back = PmfTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);

        let mut unknown = sample();
        unknown.error_bounds[1][1] = f64::NAN;
        let back = PmfTable::from_json(&unknown.to_json().unwrap()).unwrap();
        assert!(back.error_bounds[1][1].is_nan());
        assert_eq!(back.error_bounds[0], unknown.error_bounds[0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(PmfTable::new(
            0,
            vec![0.0],
            vec![vec![1.0, 2.0]],
            vec![vec![0.0]],
            TableSource::Oracle
        )
        .is_err());
    }
}
