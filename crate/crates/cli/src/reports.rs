//! Evaluation report CSVs and the run summary built from them.
//!
//! Rows follow `protocol,shots,condition,accuracy,stderr,n`. Where the
//! nearest-prototype reference is defined, each model row is followed by a
//! row whose condition is prefixed with `oracle/`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use lcl_core::eval::{stderr, EvalReport};

use crate::svg::{Chart, Series};

pub const ORACLE_PREFIX: &str = "oracle/";
pub const HEADER: &str = "protocol,shots,condition,accuracy,stderr,n";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub protocol: String,
    pub shots: usize,
    pub condition: String,
    pub accuracy: f64,
    pub stderr: f64,
    pub n: usize,
}

impl ReportRow {
    pub fn is_oracle(&self) -> bool {
        self.condition.starts_with(ORACLE_PREFIX)
    }
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = format!("{HEADER}\n");
    for e in &report.entries {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{}",
            e.protocol, e.shots, e.condition, e.accuracy, e.stderr, e.n
        );
        if let Some(o) = e.oracle_accuracy {
            let _ = writeln!(
                out,
                "{},{},{ORACLE_PREFIX}{},{:.6},{:.6},{}",
                e.protocol,
                e.shots,
                e.condition,
                o,
                stderr(o, e.n),
                e.n
            );
        }
    }
    out
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => bail!("expected header `{HEADER}`, found {other:?}"),
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let [protocol, shots, condition, accuracy, se, n] = f.as_slice() else {
                bail!("malformed report row `{l}`");
            };
            Ok(ReportRow {
                protocol: protocol.to_string(),
                shots: shots.parse().with_context(|| format!("shots in `{l}`"))?,
                condition: condition.to_string(),
                accuracy: accuracy.parse().with_context(|| format!("accuracy in `{l}`"))?,
                stderr: se.parse().with_context(|| format!("stderr in `{l}`"))?,
                n: n.parse().with_context(|| format!("n in `{l}`"))?,
            })
        })
        .collect()
}

/// Model rows only, in file order.
pub fn model_rows(rows: &[ReportRow]) -> impl Iterator<Item = &ReportRow> {
    rows.iter().filter(|r| !r.is_oracle())
}

/// Value of `key=<x>` conditions, e.g. the rate of `false_rate=0.25`.
pub fn condition_value(condition: &str, key: &str) -> Option<f64> {
    condition.strip_prefix(key)?.strip_prefix('=')?.parse().ok()
}

/// Inputs gathered for one stage (or named checkpoint).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageReports {
    pub name: String,
    /// `(protocol, rows)` per shot-sweep file.
    pub shots: Vec<(String, Vec<ReportRow>)>,
    pub zero_shot: Option<f64>,
    pub final_loss: Option<f64>,
    pub false_rate: Option<Vec<ReportRow>>,
    pub position: Option<Vec<ReportRow>>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn summary_csv(stages: &[StageReports]) -> String {
    let shot_counts: BTreeSet<usize> =
        stages.iter().flat_map(|s| s.shots.iter().flat_map(|(_, rows)| model_rows(rows).map(|r| r.shots))).collect();
    let mut out = String::from("stage,protocol,final_loss,zero_shot");
    for s in &shot_counts {
        let _ = write!(out, ",acc_{s}shot");
    }
    out.push('\n');
    for st in stages {
        let protocols: Vec<(&str, Option<&Vec<ReportRow>>)> = if st.shots.is_empty() {
            vec![("", None)]
        } else {
            st.shots.iter().map(|(p, rows)| (p.as_str(), Some(rows))).collect()
        };
        for (protocol, rows) in protocols {
            let _ = write!(out, "{},{protocol},{},{}", st.name, opt(st.final_loss), opt(st.zero_shot));
            for &s in &shot_counts {
                let acc = rows.and_then(|rows| model_rows(rows).find(|r| r.shots == s)).map(|r| r.accuracy);
                let _ = write!(out, ",{}", opt(acc));
            }
            out.push('\n');
        }
    }
    out
}

/// Shot sweep of the first protocol for every stage plus the reference.
pub fn shots_chart(stages: &[StageReports]) -> (Chart, Vec<Series>) {
    let mut series = Vec::new();
    let mut oracle: Option<Series> = None;
    let mut protocol = String::new();
    for st in stages {
        let Some((p, rows)) = st.shots.first() else { continue };
        if protocol.is_empty() {
            protocol = p.clone();
        }
        if p != &protocol {
            continue;
        }
        series.push(Series {
            name: st.name.clone(),
            points: model_rows(rows).map(|r| (r.shots as f64, r.accuracy)).collect(),
            dashed: false,
        });
        if oracle.is_none() {
            oracle = Some(Series {
                name: "oracle".into(),
                points: rows.iter().filter(|r| r.is_oracle()).map(|r| (r.shots as f64, r.accuracy)).collect(),
                dashed: true,
            });
        }
    }
    series.extend(oracle.filter(|o| !o.points.is_empty()));
    let ticks = ticks_of(&series, &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0]);
    let chart = Chart {
        title: if protocol.is_empty() { "Accuracy by shots".into() } else { format!("Accuracy by shots ({protocol})") },
        x_label: "shots per class".into(),
        y_label: "accuracy".into(),
        x_range: range_of(&ticks),
        x_ticks: ticks,
        y_range: (0.0, 1.0),
    };
    (chart, series)
}

pub fn false_rate_chart(stages: &[StageReports]) -> (Chart, Vec<Series>) {
    let series: Vec<Series> = stages
        .iter()
        .filter_map(|st| {
            let rows = st.false_rate.as_ref()?;
            Some(Series {
                name: st.name.clone(),
                points: model_rows(rows)
                    .filter_map(|r| Some((condition_value(&r.condition, "false_rate")?, r.accuracy)))
                    .collect(),
                dashed: false,
            })
        })
        .collect();
    let ticks = ticks_of(&series, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    let chart = Chart {
        title: "Accuracy by false-label rate".into(),
        x_label: "fraction of swapped support labels".into(),
        y_label: "accuracy".into(),
        x_range: range_of(&ticks),
        x_ticks: ticks,
        y_range: (0.0, 1.0),
    };
    (chart, series)
}

pub fn position_chart(stages: &[StageReports]) -> (Chart, Vec<Series>) {
    let mut series = Vec::new();
    for st in stages {
        let Some(rows) = st.position.as_ref() else { continue };
        let points: Vec<(f64, f64)> = model_rows(rows)
            .filter_map(|r| Some((condition_value(&r.condition, "position")?, r.accuracy)))
            .collect();
        let baseline = model_rows(rows).find(|r| r.condition == "baseline").map(|r| r.accuracy);
        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        series.push(Series { name: st.name.clone(), points, dashed: false });
        if let Some(b) = baseline.filter(|_| lo.is_finite()) {
            series.push(Series { name: format!("{} baseline", st.name), points: vec![(lo, b), (hi, b)], dashed: true });
        }
    }
    let positions: Vec<f64> = {
        let set: BTreeSet<i64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0 as i64)).collect();
        set.into_iter().map(|x| x as f64).collect()
    };
    let ticks: Vec<f64> = if positions.is_empty() {
        (0..32).step_by(4).map(|x| x as f64).chain([31.0]).collect()
    } else {
        positions.iter().copied().filter(|x| *x as i64 % 4 == 0 || *x == positions[positions.len() - 1]).collect()
    };
    let chart = Chart {
        title: "Accuracy with one flipped support label".into(),
        x_label: "flipped support position".into(),
        y_label: "accuracy".into(),
        x_range: range_of(&ticks),
        x_ticks: ticks,
        y_range: (0.0, 1.0),
    };
    (chart, series)
}

fn ticks_of(series: &[Series], fallback: &[f64]) -> Vec<f64> {
    let mut xs: Vec<f64> = series.iter().filter(|s| !s.dashed).flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.is_empty() {
        fallback.to_vec()
    } else {
        xs
    }
}

fn range_of(ticks: &[f64]) -> (f64, f64) {
    let lo = ticks.first().copied().unwrap_or(0.0);
    let hi = ticks.last().copied().unwrap_or(1.0);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}
