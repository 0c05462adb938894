//! Long-format metrics CSV: `round,framework,arch,cohort,metric,value`.
//!
//! Each round contributes, per architecture, the cohort means (`cohort =
//! mean`, metrics `accuracy`, `loss`, `train_loss`), the whole-test-split
//! accuracy when recorded (`cohort = global`), and each client's accuracy
//! (`cohort = client_<id>`). Values are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::federation::RoundMetrics;

pub const CSV_HEADER: &str = "round,framework,arch,cohort,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub round: usize,
    pub framework: String,
    pub arch: String,
    pub cohort: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn new(round: usize, framework: &str, arch: &str, cohort: &str, metric: &str, value: f64) -> Self {
        Self {
            round,
            framework: framework.into(),
            arch: arch.into(),
            cohort: cohort.into(),
            metric: metric.into(),
            value,
        }
    }

    /// Mean test accuracy of an architecture's clients.
    pub fn is_cohort_accuracy(&self) -> bool {
        self.cohort == "mean" && self.metric == "accuracy"
    }
}

/// Rows for one round, architectures in name order.
pub fn round_rows(m: &RoundMetrics, client_arch: &dyn Fn(usize) -> String) -> Vec<MetricRow> {
    let fw = m.framework.name();
    let mut rows = Vec::new();
    for (arch, &acc) in &m.cohort_mean {
        rows.push(MetricRow::new(m.round, fw, arch, "mean", "accuracy", acc));
        rows.push(MetricRow::new(m.round, fw, arch, "mean", "loss", m.cohort_loss[arch]));
        rows.push(MetricRow::new(m.round, fw, arch, "mean", "train_loss", m.cohort_train_loss[arch]));
        if let Some(&g) = m.global_accuracy.get(arch) {
            rows.push(MetricRow::new(m.round, fw, arch, "global", "accuracy", g));
        }
        for (&id, &acc) in &m.per_client_accuracy {
            if &client_arch(id) == arch {
                rows.push(MetricRow::new(m.round, fw, arch, &format!("client_{id}"), "accuracy", acc));
            }
        }
    }
    rows
}

pub fn format_rows(rows: &[MetricRow]) -> String {
    let mut out = String::new();
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.round, r.framework, r.arch, r.cohort, r.metric, r.value).unwrap();
    }
    out
}

pub fn format_csv(rows: &[MetricRow]) -> String {
    format!("{CSV_HEADER}\n{}", format_rows(rows))
}

/// Parses a metrics CSV. Errors carry the 1-based line number.
pub fn parse_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                detail: format!("expected header `{CSV_HEADER}`, found `{h}`"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                detail: "empty file".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let raw = raw.trim_end();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line,
                detail: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let round = fields[0].parse::<usize>().map_err(|_| Error::Parse {
            line,
            detail: format!("round `{}` is not a non-negative integer", fields[0]),
        })?;
        let value = fields[5].parse::<f64>().map_err(|_| Error::Parse {
            line,
            detail: format!("value `{}` is not a number", fields[5]),
        })?;
        if let Some(k) = (1..5).find(|&k| fields[k].is_empty()) {
            return Err(Error::Parse {
                line,
                detail: format!("field {} is empty", CSV_HEADER.split(',').nth(k).unwrap()),
            });
        }
        rows.push(MetricRow::new(round, fields[1], fields[2], fields[3], fields[4], value));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            detail: "no data rows after the header".into(),
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_csv(&text).map_err(|e| match e {
        Error::Parse { line, detail } => Error::Parse {
            line,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_name_the_line() {
        let text = format!("{CSV_HEADER}\n1,modfl,synth_lo,mean,accuracy,0.5\n2,modfl,synth_lo,mean,accuracy,abc\n");
        match parse_csv(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_csv(&format!("{CSV_HEADER}\n1,modfl,synth_lo\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_only_is_an_error() {
        assert!(matches!(parse_csv(&format!("{CSV_HEADER}\n")), Err(Error::Parse { .. })));
        assert!(matches!(parse_csv("a,b\n1,2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn shortest_form_values_parse_back_exactly() {
        let rows = vec![MetricRow::new(3, "fedper", "synth_hi", "client_4", "accuracy", 1.0 / 3.0)];
        assert_eq!(parse_csv(&format_csv(&rows)).unwrap(), rows);
    }
}
