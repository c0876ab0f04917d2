use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::{HarnessError, OpRow, ScenarioOutput, Workload};

pub const CSV_HEADER: &str = "scenario,repetition,operation,start_s,end_s,latency_s,outcome";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Table,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "table" => Ok(Format::Table),
            other => Err(format!("unknown format `{other}` (expected csv, json or table)")),
        }
    }
}

/// Latency statistics of successful operations of one kind in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub workload: &'static str,
    pub n: usize,
    pub operation: &'static str,
    pub count: usize,
    pub successes: usize,
    pub mean_s: Option<f64>,
    pub p50_s: Option<f64>,
    pub p90_s: Option<f64>,
    pub p95_s: Option<f64>,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

fn summary_of(workload: &'static str, n: usize, operation: &'static str, rows: &[&OpRow]) -> Summary {
    let mut lat: Vec<f64> = rows.iter().filter(|r| r.outcome == "success").filter_map(|r| r.latency_s).collect();
    lat.sort_by(f64::total_cmp);
    let mean = (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64);
    Summary {
        workload,
        n,
        operation,
        count: rows.len(),
        successes: lat.len(),
        mean_s: mean,
        p50_s: percentile(&lat, 50.0),
        p90_s: percentile(&lat, 90.0),
        p95_s: percentile(&lat, 95.0),
    }
}

pub fn summarize(out: &ScenarioOutput) -> Vec<Summary> {
    let mut groups: BTreeMap<(Workload, usize, &'static str), Vec<&OpRow>> = BTreeMap::new();
    for run in &out.runs {
        for row in &run.rows {
            groups.entry((run.workload, run.n, row.operation)).or_default().push(row);
        }
    }
    groups.into_iter().map(|((w, n, op), rows)| summary_of(w.as_str(), n, op, &rows)).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_csv<W: Write>(rows: impl IntoIterator<Item = OpRow>, w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        out.write_record([
            r.scenario,
            r.repetition.to_string(),
            r.operation.to_string(),
            format!("{:.6}", r.start_s),
            fmt_opt(r.end_s),
            fmt_opt(r.latency_s),
            r.outcome.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunCounts {
    scenario: String,
    repetition: usize,
    seed: u64,
    submitted: u64,
    delivered: usize,
    dropped: usize,
    lost: usize,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    summaries: &'a [Summary],
    runs: Vec<RunCounts>,
}

pub fn write_json<W: Write>(out: &ScenarioOutput, mut w: W) -> Result<(), HarnessError> {
    let summaries = summarize(out);
    let runs = out
        .runs
        .iter()
        .map(|r| RunCounts {
            scenario: super::scenario::scenario_name(r.workload, r.n),
            repetition: r.repetition,
            seed: r.seed,
            submitted: r.report.submitted,
            delivered: r.report.deliveries.len(),
            dropped: r.report.drops.len(),
            lost: r.report.lost.len(),
        })
        .collect();
    serde_json::to_writer_pretty(&mut w, &JsonReport { summaries: &summaries, runs })?;
    writeln!(w)?;
    Ok(())
}

/// One section per measured operation, one row per discovery-node count.
pub fn write_table<W: Write>(out: &ScenarioOutput, mut w: W) -> Result<(), HarnessError> {
    let mut sections: Vec<(&str, BTreeMap<usize, Vec<&OpRow>>)> = vec![
        ("Registration", BTreeMap::new()),
        ("Lookup", BTreeMap::new()),
        ("ContactInit + AddFriend (anonymous)", BTreeMap::new()),
        ("ContactInit + AddFriend (with verify)", BTreeMap::new()),
    ];
    for run in &out.runs {
        for row in &run.rows {
            let idx = match (run.workload, row.operation) {
                (Workload::Register, "register") => 0,
                (_, "lookup") => 1,
                (Workload::DiscoverAnonymous, "contact_init_add_friend") => 2,
                (Workload::DiscoverNamed, "contact_init_add_friend") => 3,
                _ => continue,
            };
            sections[idx].1.entry(run.n).or_default().push(row);
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10} {:>10}", "nodes", "mean", "p50", "p90", "p95");
    for (title, by_n) in sections {
        if by_n.is_empty() {
            continue;
        }
        let _ = writeln!(s, "-- {title} --");
        for (n, rows) in by_n {
            let sm = summary_of("", n, "", &rows);
            let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<10} {:>10} {:>10} {:>10} {:>10}",
                n,
                cell(sm.mean_s),
                cell(sm.p50_s),
                cell(sm.p90_s),
                cell(sm.p95_s)
            );
        }
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Writes `latencies.csv`, `summary.json` or `table.txt` into `dir`.
pub fn emit_report(out: &ScenarioOutput, format: Format, dir: &Path) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(match format {
        Format::Csv => "latencies.csv",
        Format::Json => "summary.json",
        Format::Table => "table.txt",
    });
    let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    match format {
        Format::Csv => write_csv(out.rows().cloned(), file)?,
        Format::Json => write_json(out, file)?,
        Format::Table => write_table(out, file)?,
    }
    Ok(path)
}
