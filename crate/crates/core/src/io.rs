//! Plain-text output formats: trajectory, ensemble, event and path tables.
//!
//! Numbers are written with 17 significant digits and a `.` decimal point so
//! that files round-trip exactly and do not depend on the locale.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jump::{TssPath, TstPath};
use crate::stochastic::{EnsembleStats, EventRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("empty table")]
    Empty,
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: cannot parse {value:?} as a number")]
    Number { line: usize, value: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
}

/// `%.17g`: 17 significant digits, trailing zeros removed, scientific notation
/// outside `1e-5 <= |v| < 1e17`.
pub fn fmt_g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        strip_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", strip_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn strip_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn push_row(out: &mut String, time: f64, values: impl IntoIterator<Item = f64>) {
    out.push_str(&fmt_g17(time));
    for v in values {
        out.push(',');
        out.push_str(&fmt_g17(v));
    }
    out.push('\n');
}

/// `time,<id>...` with one row per sample.
pub fn trajectory_csv(ids: &[String], times: &[f64], states: &[Vec<f64>]) -> String {
    let mut out = String::from("time");
    for id in ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (t, s) in times.iter().zip(states) {
        push_row(&mut out, *t, s.iter().copied());
    }
    out
}

/// `time` followed by `<id>_mean,<id>_var,<id>_p05,<id>_p95` per trait.
pub fn ensemble_csv(ids: &[String], stats: &EnsembleStats) -> String {
    let mut out = String::from("time");
    for id in ids {
        let _ = write!(out, ",{id}_mean,{id}_var,{id}_p05,{id}_p95");
    }
    out.push('\n');
    for i in 0..stats.sample_times.len() {
        let row = (0..ids.len()).flat_map(|x| {
            [
                stats.mean[i][x],
                stats.variance[i][x],
                stats.p05[i][x],
                stats.p95[i][x],
            ]
        });
        push_row(&mut out, stats.sample_times[i], row);
    }
    out
}

/// `time,kind,from,to` with trait ids.
pub fn events_csv(ids: &[String], events: &[EventRecord]) -> String {
    let mut out = String::from("time,kind,from,to\n");
    for e in events {
        let (from, to) = e.endpoints();
        let _ = writeln!(out, "{},{},{},{}", fmt_g17(e.time), e.kind.label(), ids[from], ids[to]);
    }
    out
}

/// `time,trait,mass`, one row per segment.
pub fn tss_csv(ids: &[String], path: &TssPath) -> String {
    let mut out = String::from("time,trait,mass\n");
    for (t, (x, m)) in path.times.iter().zip(&path.states) {
        let _ = writeln!(out, "{},{},{}", fmt_g17(*t), ids[*x], fmt_g17(*m));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TstRecord {
    pub time: f64,
    /// Trait ids, least fit first.
    pub traits: Vec<String>,
    pub presence: Vec<bool>,
    pub masses: Vec<f64>,
}

pub fn tst_records(ids: &[String], path: &TstPath) -> Vec<TstRecord> {
    path.times
        .iter()
        .zip(&path.configurations)
        .map(|(&time, c)| TstRecord {
            time,
            traits: c.ordered_traits.iter().map(|&x| ids[x].clone()).collect(),
            presence: c.present.clone(),
            masses: c.masses.clone(),
        })
        .collect()
}

/// Header and numeric rows of a CSV written by this module.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(TableError::Empty)?;
        let header: Vec<String> = head.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(TableError::FieldCount {
                    line: i + 1,
                    expected: header.len(),
                    found: fields.len(),
                });
            }
            let row = fields
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| TableError::Number {
                        line: i + 1,
                        value: f.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TableError> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Time column plus per-trait values. Ensemble tables contribute their
    /// `_mean` columns, trajectory tables every column after `time`.
    pub fn densities(&self) -> Result<(Vec<String>, Vec<f64>, Vec<Vec<f64>>), TableError> {
        let times = self.column("time")?;
        let means: Vec<usize> = (0..self.header.len()).filter(|&j| self.header[j].ends_with("_mean")).collect();
        let cols: Vec<usize> = if means.is_empty() {
            (0..self.header.len()).filter(|&j| self.header[j] != "time").collect()
        } else {
            means
        };
        let ids = cols
            .iter()
            .map(|&j| self.header[j].trim_end_matches("_mean").to_string())
            .collect();
        let states = self.rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect();
        Ok((ids, times, states))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_format() {
        assert_eq!(fmt_g17(3.0), "3");
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(1e-7), "9.9999999999999995e-08");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(123456.0), "123456");
    }

    #[test]
    fn g17_round_trips() {
        for v in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 6.02e23, -7.25e-6, 12345.678901234567] {
            assert_eq!(fmt_g17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let csv = trajectory_csv(&ids, &[0.0, 0.5], &[vec![1.0, 0.1], vec![2.0, 1.0 / 3.0]]);
        assert!(csv.starts_with("time,a,b\n0,1,0.10000000000000001\n"));
        let t = NumericTable::parse(&csv).unwrap();
        let (got_ids, times, states) = t.densities().unwrap();
        assert_eq!(got_ids, ids);
        assert_eq!(times, vec![0.0, 0.5]);
        assert_eq!(states[1][1], 1.0 / 3.0);
    }

    #[test]
    fn malformed_tables() {
        assert_eq!(NumericTable::parse("").unwrap_err(), TableError::Empty);
        assert!(matches!(NumericTable::parse("time,a\n1\n"), Err(TableError::FieldCount { .. })));
        assert!(matches!(NumericTable::parse("time,a\n1,x\n"), Err(TableError::Number { .. })));
    }
}
