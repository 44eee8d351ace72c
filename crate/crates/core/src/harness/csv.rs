//! Per-round CSV log: `round,acc,loss,tau`, then `s_i,alpha_i,o_i,flagged_i`
//! for every client. Floats carry 9 significant digits; lines end with LF.

use std::io::Write;
use std::path::Path;

use super::run::RoundRecord;
use crate::error::{FedFgError, Result};

pub const FIXED_COLUMNS: [&str; 4] = ["round", "acc", "loss", "tau"];

fn float(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn header(clients: usize) -> String {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..clients {
        cols.extend([
            format!("s_{i}"),
            format!("alpha_{i}"),
            format!("o_{i}"),
            format!("flagged_{i}"),
        ]);
    }
    cols.join(",")
}

pub fn write_csv<W: Write>(records: &[RoundRecord], clients: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", header(clients))?;
    for r in records {
        let mut row = vec![r.round.to_string(), float(r.accuracy), float(r.loss), float(r.tau)];
        for i in 0..clients {
            row.push(float(r.s[i]));
            row.push(float(r.alpha[i]));
            row.push(float(r.o[i]));
            row.push(if r.flagged[i] { "1" } else { "0" }.to_string());
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn to_csv_string(records: &[RoundRecord], clients: usize) -> String {
    let mut buf = Vec::new();
    write_csv(records, clients, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn emit_csv(records: &[RoundRecord], clients: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv_string(records, clients)).map_err(|e| FedFgError::io(path, e))
}

/// A row parsed back from the log.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub tau: f64,
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub o: Vec<f64>,
    pub flagged: Vec<bool>,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| FedFgError::invalid("empty CSV"))?;
    let width = head.split(',').count();
    if width < FIXED_COLUMNS.len() || (width - FIXED_COLUMNS.len()) % 4 != 0 {
        return Err(FedFgError::invalid(format!("unexpected CSV header width {width}")));
    }
    let clients = (width - FIXED_COLUMNS.len()) / 4;
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| FedFgError::invalid(format!("bad number `{s}`")))
    };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != width {
                return Err(FedFgError::invalid(format!("row has {} fields, expected {width}", f.len())));
            }
            let mut row = CsvRow {
                round: f[0]
                    .parse()
                    .map_err(|_| FedFgError::invalid(format!("bad round `{}`", f[0])))?,
                accuracy: num(f[1])?,
                loss: num(f[2])?,
                tau: num(f[3])?,
                s: Vec::with_capacity(clients),
                alpha: Vec::with_capacity(clients),
                o: Vec::with_capacity(clients),
                flagged: Vec::with_capacity(clients),
            };
            for i in 0..clients {
                let base = 4 + 4 * i;
                row.s.push(num(f[base])?);
                row.alpha.push(num(f[base + 1])?);
                row.o.push(num(f[base + 2])?);
                row.flagged.push(f[base + 3] == "1");
            }
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn record(round: usize) -> RoundRecord {
        RoundRecord {
            round,
            accuracy: 0.912345678912,
            loss: 1.0 / 3.0,
            tau: 0.1595,
            s: vec![0.9, 0.125],
            alpha: vec![0.878, 0.122],
            o: vec![0.01, 0.7],
            flagged: vec![false, true],
            alpha_bar: vec![1.0, 0.0],
            degenerate: false,
            wall_time: Duration::from_millis(3),
        }
    }

    #[test]
    fn empty_records_give_header_only() {
        let text = to_csv_string(&[], 3);
        assert_eq!(text.lines().count(), 1);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn schema_counts() {
        let text = to_csv_string(&[record(0)], 2);
        let lines: Vec<&str> = text.split_terminator('\n').collect();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|l| l.split(',').count() == 4 + 4 * 2));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn parse_back_to_printed_precision() {
        let recs = [record(0), record(1)];
        let rows = parse_csv(&to_csv_string(&recs, 2)).unwrap();
        assert_eq!(rows.len(), 2);
        for (r, p) in recs.iter().zip(&rows) {
            assert_eq!(p.round, r.round);
            let close = |a: f64, b: f64| (a - b).abs() <= 5e-9 * b.abs().max(1e-300);
            assert!(close(p.accuracy, r.accuracy));
            assert!(close(p.loss, r.loss));
            assert!(close(p.tau, r.tau));
            for i in 0..2 {
                assert!(close(p.s[i], r.s[i]) && close(p.alpha[i], r.alpha[i]) && close(p.o[i], r.o[i]));
                assert_eq!(p.flagged[i], r.flagged[i]);
            }
        }
    }
}
