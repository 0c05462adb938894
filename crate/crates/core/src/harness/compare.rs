//! Per-round and final deltas of cohort mean accuracy between two runs.

use std::collections::BTreeMap;

use serde::Serialize;

use super::metrics::MetricRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundDelta {
    pub round: usize,
    pub arch: String,
    pub a: f64,
    pub b: f64,
    /// `a - b`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub per_round: Vec<RoundDelta>,
    pub final_round: usize,
    /// `a - b` at the final round, per architecture.
    pub final_delta: BTreeMap<String, f64>,
}

fn series(rows: &[MetricRow], which: &str) -> Result<BTreeMap<String, BTreeMap<usize, f64>>> {
    let mut out: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut framework: BTreeMap<&str, &str> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_cohort_accuracy()) {
        if let Some(f) = framework.insert(&r.arch, &r.framework) {
            if f != r.framework {
                return Err(Error::Comparison(format!(
                    "{which} holds {} for both {f} and {}",
                    r.arch, r.framework
                )));
            }
        }
        if out.entry(r.arch.clone()).or_default().insert(r.round, r.value).is_some() {
            return Err(Error::Comparison(format!("{which} repeats round {} of {}", r.round, r.arch)));
        }
    }
    if out.is_empty() {
        return Err(Error::Comparison(format!("{which} has no cohort accuracy rows")));
    }
    Ok(out)
}

pub fn compare(a: &[MetricRow], b: &[MetricRow]) -> Result<Comparison> {
    let sa = series(a, "first input")?;
    let sb = series(b, "second input")?;
    if sa.keys().ne(sb.keys()) {
        return Err(Error::Comparison(format!(
            "architectures differ: {:?} vs {:?}",
            sa.keys().collect::<Vec<_>>(),
            sb.keys().collect::<Vec<_>>()
        )));
    }
    let mut per_round = Vec::new();
    let mut final_delta = BTreeMap::new();
    let mut final_round = None;
    for (arch, ra) in &sa {
        let rb = &sb[arch];
        if ra.keys().ne(rb.keys()) {
            return Err(Error::Comparison(format!("round grids differ for {arch}")));
        }
        for (&round, &va) in ra {
            per_round.push(RoundDelta {
                round,
                arch: arch.clone(),
                a: va,
                b: rb[&round],
                delta: va - rb[&round],
            });
        }
        let (&last, &va) = ra.iter().next_back().expect("non-empty series");
        if *final_round.get_or_insert(last) != last {
            return Err(Error::Comparison("architectures end at different rounds".into()));
        }
        final_delta.insert(arch.clone(), va - rb[&last]);
    }
    per_round.sort_by(|x, y| (x.round, &x.arch).cmp(&(y.round, &y.arch)));
    Ok(Comparison {
        per_round,
        final_round: final_round.expect("non-empty"),
        final_delta,
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = String::from("round,arch,a,b,delta\n");
        for d in &self.per_round {
            out += &format!("{},{},{},{},{}\n", d.round, d.arch, d.a, d.b, d.delta);
        }
        for (arch, d) in &self.final_delta {
            out += &format!("final round {}: {arch} delta {:+.2} points\n", self.final_round, d * 100.0);
        }
        out
    }
}
