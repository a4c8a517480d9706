use std::fmt::Write as _;
use std::str::FromStr;

use crate::run::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (expected json, csv or md)")),
        }
    }
}

/// Renders a report. Equal reports give identical bytes.
pub fn emit_report(report: &RunReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("reports always serialize");
            out.push(b'\n');
            out
        }
        ReportFormat::Csv => csv_rows(report),
        ReportFormat::Markdown => markdown(report).into_bytes(),
    }
}

const CSV_HEADER: [&str; 12] = [
    "task_id",
    "modality",
    "attempt",
    "success",
    "key_steps_completed",
    "key_steps_total",
    "failure_reason",
    "wall_time_ms",
    "event_count",
    "difficulty_steps",
    "end_reason",
    "setup_error",
];

fn csv_rows(report: &RunReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory csv");
    for a in &report.attempts {
        let v = &a.verdict;
        let end = serde_json::to_value(a.end_reason).ok().and_then(|e| e.as_str().map(str::to_owned)).unwrap_or_default();
        w.write_record([
            a.task_id.clone(),
            a.modality.label(),
            a.attempt_index.to_string(),
            v.success.to_string(),
            v.key_steps_completed.to_string(),
            v.key_steps_total.to_string(),
            a.failure_reason().map(|r| r.name().to_owned()).unwrap_or_default(),
            v.wall_time_ms.to_string(),
            v.event_count.to_string(),
            a.difficulty_steps.to_string(),
            end,
            a.setup_error.clone().unwrap_or_default(),
        ])
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn markdown(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}\n", report.suite_name);
    let Some(m) = &report.metrics else {
        s.push_str("No attempts.\n");
        return s;
    };
    s.push_str("| Modality | Attempts | SR (%) | KSCR (%) |\n|---|---:|---:|---:|\n");
    for (label, mm) in &m.by_modality {
        let kscr = mm.kscr.map_or_else(|| "n/a".to_owned(), |k| k.to_string());
        let _ = writeln!(s, "| {label} | {} | {} | {kscr} |", mm.n_attempts, mm.sr);
    }
    s.push_str("\n| Difficulty | SR (%) |\n|---|---:|\n");
    for (level, sr) in &m.by_difficulty {
        let _ = writeln!(s, "| {} | {sr} |", level.name());
    }
    if !m.failure_distribution.is_empty() {
        s.push_str("\n| Failure reason | % of failures |\n|---|---:|\n");
        for (reason, p) in &m.failure_distribution {
            let _ = writeln!(s, "| {reason} | {p} |");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsSummary;
    use crate::run::{AttemptRecord, RunConfig};
    use crate::tools::{Modality, ModalityKind};
    use crate::verify::TaskVerdict;

    fn report() -> RunReport {
        let v = TaskVerdict {
            success: true,
            key_steps_completed: 2,
            key_steps_total: 2,
            failure_reason: None,
            wall_time_ms: 10,
            event_count: 3,
        };
        let m = Modality::new(ModalityKind::Hybrid, true);
        let attempts = (0..3).map(|i| AttemptRecord::from_verdict("notes, \"quoted\"", m, i, v.clone())).collect();
        RunReport::new(
            "demo",
            RunConfig {
                modality: ModalityKind::Hybrid,
                bash_enabled: true,
                attempts_per_task: 3,
            },
            attempts,
        )
    }

    #[test]
    fn markdown_one_row_per_modality() {
        let md = String::from_utf8(emit_report(&report(), ReportFormat::Markdown)).unwrap();
        let table: Vec<&str> = md.lines().skip_while(|l| !l.starts_with("| Modality")).take_while(|l| l.starts_with('|')).collect();
        assert_eq!(table.len(), 3);
        assert_eq!(table[2], "| hybrid | 3 | 100.00 | 100.00 |");
    }

    #[test]
    fn deterministic() {
        for f in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
            assert_eq!(emit_report(&report(), f), emit_report(&report(), f));
        }
    }

    #[test]
    fn json_round_trips_metrics() {
        let r = report();
        let bytes = emit_report(&r, ReportFormat::Json);
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        let m: MetricsSummary = serde_json::from_value(v["metrics"].clone()).unwrap();
        assert_eq!(Some(m), r.metrics);
        assert_eq!(v["metrics"]["sr"], "100.00");
        let back: RunReport = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_quotes_fields() {
        let text = String::from_utf8(emit_report(&report(), ReportFormat::Csv)).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(&rows[0][0], "notes, \"quoted\"");
        assert_eq!(&rows[0][3], "true");
    }
}
