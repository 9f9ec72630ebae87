//! Certification reports and their JSON and CSV encodings.
//!
//! Numbers are written with 17 significant digits through a single
//! formatter so both encodings carry identical values. Non-finite values
//! become `null` in JSON and an empty field in CSV.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use serde_json::value::RawValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// A value without an inequality attached.
    Info,
    /// The field did not meet the bound's preconditions.
    InvalidField,
    Error,
}

impl Status {
    pub fn key(&self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Info => "info",
            Self::InvalidField => "invalid_field",
            Self::Error => "error",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub name: String,
    pub value: Option<f64>,
    pub kind: String,
    pub status: Status,
    pub tolerance: Option<f64>,
    pub citation: String,
    pub detail: String,
}

impl TaskRecord {
    pub fn info(name: impl Into<String>, value: f64, kind: &str, citation: &str) -> Self {
        Self {
            name: name.into(),
            value: Some(value),
            kind: kind.into(),
            status: Status::Info,
            tolerance: None,
            citation: citation.into(),
            detail: String::new(),
        }
    }

    pub fn error(name: impl Into<String>, citation: &str, message: impl fmt::Display) -> Self {
        Self {
            name: name.into(),
            value: None,
            kind: "error".into(),
            status: Status::Error,
            tolerance: None,
            citation: citation.into(),
            detail: message.to_string(),
        }
    }

    pub fn with_status(mut self, status: Status, tolerance: Option<f64>) -> Self {
        self.status = status;
        self.tolerance = tolerance;
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

impl Verdict {
    pub fn key(&self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Error => "error",
        }
    }

    /// 0 on pass, 2 when an inequality failed, 1 on execution errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Pass => 0,
            Self::Fail => 2,
            Self::Error => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub scenario: BTreeMap<String, String>,
    pub results: Vec<TaskRecord>,
}

impl CertificationReport {
    /// Failed inequalities take precedence over execution errors.
    pub fn verdict(&self) -> Verdict {
        if self.results.iter().any(|r| r.status == Status::Fail) {
            Verdict::Fail
        } else if self.results.iter().any(|r| r.status == Status::Error) {
            Verdict::Error
        } else {
            Verdict::Pass
        }
    }

    pub fn record(&self, name: &str) -> Option<&TaskRecord> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            name: &'a str,
            value: Box<RawValue>,
            kind: &'a str,
            status: &'a str,
            tolerance: Box<RawValue>,
            citation: &'a str,
            detail: &'a str,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            scenario: &'a BTreeMap<String, String>,
            results: Vec<Row<'a>>,
            verdict: &'a str,
        }
        let raw = |v: Option<f64>| {
            RawValue::from_string(format_number(v).unwrap_or_else(|| "null".into())).expect("valid JSON number")
        };
        let doc = Doc {
            scenario: &self.scenario,
            results: self
                .results
                .iter()
                .map(|r| Row {
                    name: &r.name,
                    value: raw(r.value),
                    kind: &r.kind,
                    status: r.status.key(),
                    tolerance: raw(r.tolerance),
                    citation: &r.citation,
                    detail: &r.detail,
                })
                .collect(),
            verdict: self.verdict().key(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "value", "kind", "status", "tolerance", "citation", "detail"]).expect("in-memory write");
        for r in &self.results {
            w.write_record([
                r.name.as_str(),
                &format_number(r.value).unwrap_or_default(),
                &r.kind,
                r.status.key(),
                &format_number(r.tolerance).unwrap_or_default(),
                &r.citation,
                &r.detail,
            ])
            .expect("in-memory write");
        }
        w.write_record(["verdict", "", "", self.verdict().key(), "", "", ""]).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// One `PASS`/`FAIL`/... line per record followed by the verdict.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .results
            .iter()
            .map(|r| {
                let value = format_number(r.value).unwrap_or_else(|| "-".into());
                let mut line = format!("{:<13} {} = {}", r.status.key().to_uppercase(), r.name, value);
                if !r.detail.is_empty() {
                    line.push_str(&format!(" ({})", r.detail));
                }
                line
            })
            .collect();
        lines.push(format!("verdict: {}", self.verdict().key()));
        lines
    }
}

/// 17 significant digits, `None` for missing or non-finite values.
pub fn format_number(v: Option<f64>) -> Option<String> {
    v.filter(|x| x.is_finite()).map(|x| format!("{x:.16e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CertificationReport {
        CertificationReport {
            scenario: BTreeMap::from([("params.p".to_string(), "2".to_string())]),
            results: vec![
                TaskRecord::info("tone", 0.25000000000000006, "converged_eigenvalue", "numeric"),
                TaskRecord::info("bound:pointwise", f64::NEG_INFINITY, "lower_bound", "pointwise_bound")
                    .with_status(Status::InvalidField, Some(1e-6))
                    .with_detail("vacuous, \"quoted\""),
            ],
        }
    }

    #[test]
    fn json_and_csv_carry_identical_numbers() {
        let r = sample();
        let json = r.to_json();
        let csv = r.to_csv();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["verdict"], "pass");
        assert_eq!(v["results"][1]["value"], serde_json::Value::Null);
        assert!(json.contains("2.5000000000000006e-1"));
        assert!(csv.contains("2.5000000000000006e-1"));
        let mut rd = csv::Reader::from_reader(csv.as_bytes());
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows[1].get(6), Some("vacuous, \"quoted\""));
        assert_eq!(rows[1].get(1), Some(""));
    }

    #[test]
    fn verdict_precedence() {
        let mut r = sample();
        assert_eq!(r.verdict(), Verdict::Pass);
        r.results.push(TaskRecord::error("growth", "numeric", "boom"));
        assert_eq!(r.verdict().exit_code(), 1);
        r.results[0].status = Status::Fail;
        assert_eq!(r.verdict().exit_code(), 2);
        let empty = CertificationReport { scenario: BTreeMap::new(), results: vec![] };
        assert_eq!(empty.verdict(), Verdict::Pass);
    }
}
