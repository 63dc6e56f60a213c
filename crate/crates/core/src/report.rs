//! Run reports: per-class PQ rows plus class-mean aggregates, written as
//! canonical JSON (sorted keys, floats rounded to 6 significant digits) or
//! CSV, and the hard-class comparison between two runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::PqScores;
use crate::taxonomy::Taxonomy;

const CONSISTENCY_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_id: u32,
    pub name: String,
    /// Seen/unseen membership when the taxonomy carries a split.
    pub seen: Option<bool>,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_seg: u64,
    pub fn_cls: u64,
    pub recall: f64,
}

impl ClassRow {
    pub fn false_negatives(&self) -> u64 {
        self.fn_seg + self.fn_cls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub pq_all: f64,
    pub sq_all: f64,
    pub rq_all: f64,
    pub pq_seen: Option<f64>,
    pub pq_unseen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Resolved configuration of the run.
    pub config: Value,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
    /// Class names of the evaluation taxonomy, in index order.
    pub taxonomy: Vec<String>,
    pub rows: Vec<ClassRow>,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Picks the format from a file extension; anything but `.csv` is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Rounds to 6 significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig6(n.as_f64().expect("f64 number"));
            *v = serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

fn write_canonical(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Array(items) if !items.is_empty() => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_canonical(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push_str(": ");
                write_canonical(&map[*k], indent + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        other => out.push_str(&serde_json::to_string(other).expect("scalar serializes")),
    }
}

/// Serializes any value with sorted keys and 6-significant-digit floats.
pub fn canonical_json(value: &Value) -> String {
    let mut v = value.clone();
    round_value(&mut v);
    let mut out = String::new();
    write_canonical(&v, 0, &mut out);
    out.push('\n');
    out
}

impl RunReport {
    pub fn from_scores(
        scores: &PqScores,
        taxonomy: &Taxonomy,
        config: Value,
        metadata: BTreeMap<String, Value>,
    ) -> RunReport {
        let seen = taxonomy.seen();
        let rows = scores
            .per_class
            .iter()
            .map(|(&class_id, s)| ClassRow {
                class_id,
                name: taxonomy.class(class_id).map(|c| c.name.clone()).unwrap_or_default(),
                seen: seen.map(|f| f[class_id as usize]),
                pq: s.pq,
                sq: s.sq,
                rq: s.rq,
                tp: s.counts.tp,
                fp: s.counts.fp,
                fn_seg: s.counts.fn_seg,
                fn_cls: s.counts.fn_cls,
                recall: s.counts.recall(),
            })
            .collect();
        RunReport {
            config,
            metadata,
            taxonomy: taxonomy.names(),
            rows,
            aggregates: Aggregates {
                pq_all: scores.pq_all,
                sq_all: scores.sq_all,
                rq_all: scores.rq_all,
                pq_seen: scores.pq_seen,
                pq_unseen: scores.pq_unseen,
            },
        }
    }

    /// Aggregates recomputed from the rows.
    pub fn recompute_aggregates(&self) -> Option<Aggregates> {
        let has_split = self.rows.iter().any(|r| r.seen.is_some());
        let subset = |want: bool| {
            if has_split {
                mean(self.rows.iter().filter(|r| r.seen == Some(want)).map(|r| r.pq))
            } else {
                None
            }
        };
        Some(Aggregates {
            pq_all: mean(self.rows.iter().map(|r| r.pq))?,
            sq_all: mean(self.rows.iter().map(|r| r.sq))?,
            rq_all: mean(self.rows.iter().map(|r| r.rq))?,
            pq_seen: subset(true),
            pq_unseen: subset(false),
        })
    }

    /// Checks value ranges, recall definitions and that the aggregates
    /// follow from the rows.
    pub fn check_consistency(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation("report", m));
        for r in &self.rows {
            for (name, v) in [("pq", r.pq), ("sq", r.sq), ("rq", r.rq), ("recall", r.recall)] {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("class {}: {name} = {v} outside [0, 1]", r.class_id));
                }
            }
            let denom = r.tp + r.false_negatives();
            let recall = if denom == 0 { 0.0 } else { r.tp as f64 / denom as f64 };
            if (recall - r.recall).abs() > CONSISTENCY_TOLERANCE {
                return bad(format!("class {}: recall {} but counts give {recall}", r.class_id, r.recall));
            }
            if r.class_id as usize >= self.taxonomy.len() {
                return bad(format!("class {} outside taxonomy", r.class_id));
            }
        }
        let Some(expected) = self.recompute_aggregates() else {
            return bad("report has no class rows".into());
        };
        let close = |a: f64, b: f64| (a - b).abs() <= CONSISTENCY_TOLERANCE;
        let close_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => close(a, b),
            (None, None) => true,
            _ => false,
        };
        let a = &self.aggregates;
        if !(close(a.pq_all, expected.pq_all)
            && close(a.sq_all, expected.sq_all)
            && close(a.rq_all, expected.rq_all)
            && close_opt(a.pq_seen, expected.pq_seen)
            && close_opt(a.pq_unseen, expected.pq_unseen))
        {
            return bad(format!("aggregates {a:?} do not match rows ({expected:?})"));
        }
        Ok(())
    }

    /// The report as it reads back from disk: floats rounded to 6
    /// significant digits.
    pub fn canonicalized(&self) -> RunReport {
        serde_json::from_str(&self.to_json()).expect("canonical JSON parses")
    }

    pub fn to_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("report serializes"))
    }

    pub fn from_json(text: &str) -> Result<RunReport> {
        let r: RunReport =
            serde_json::from_str(text).map_err(|e| Error::validation("report", format!("malformed JSON: {e}")))?;
        r.check_consistency()?;
        Ok(r)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (key, value) in [
            ("config", self.config.clone()),
            ("metadata", serde_json::to_value(&self.metadata).expect("metadata serializes")),
            ("taxonomy", serde_json::to_value(&self.taxonomy).expect("names serialize")),
        ] {
            let mut v = value;
            round_value(&mut v);
            out.push_str(&format!("# {key}: {}\n", serde_json::to_string(&v).expect("serializes")));
        }
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let fmt = |x: f64| round_sig6(x).to_string();
        let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.class_id.to_string(),
                r.name.clone(),
                r.seen.map(|s| s.to_string()).unwrap_or_default(),
                fmt(r.pq),
                fmt(r.sq),
                fmt(r.rq),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_seg.to_string(),
                r.fn_cls.to_string(),
                fmt(r.recall),
            ])
            .expect("in-memory write");
        }
        let a = &self.aggregates;
        for (key, value) in [
            ("pq_all", Some(a.pq_all)),
            ("sq_all", Some(a.sq_all)),
            ("rq_all", Some(a.rq_all)),
            ("pq_seen", a.pq_seen),
            ("pq_unseen", a.pq_unseen),
        ] {
            let mut rec = vec![String::new(); CSV_HEADER.len()];
            rec[0] = key.to_string();
            rec[3] = opt(value);
            w.write_record(&rec).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    pub fn from_csv(text: &str) -> Result<RunReport> {
        let bad = |m: String| Error::validation("report", m);
        let mut header: BTreeMap<String, Value> = BTreeMap::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, json) = rest.split_once(": ").ok_or_else(|| bad(format!("bad header line {line:?}")))?;
                let v = serde_json::from_str(json).map_err(|e| bad(format!("header {key}: {e}")))?;
                header.insert(key.to_string(), v);
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut rd = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let cols = rd.headers().map_err(|e| bad(e.to_string()))?.clone();
        if cols.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(bad(format!("unexpected CSV header {cols:?}")));
        }
        let num = |s: &str, col: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("column {col}: {s:?}"))) };
        let int = |s: &str, col: &str| -> Result<u64> { s.parse().map_err(|_| bad(format!("column {col}: {s:?}"))) };
        let mut rows = Vec::new();
        let mut aggs: BTreeMap<String, Option<f64>> = BTreeMap::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            match f(0).parse::<u32>() {
                Ok(class_id) => rows.push(ClassRow {
                    class_id,
                    name: f(1).to_string(),
                    seen: match f(2) {
                        "" => None,
                        "true" => Some(true),
                        "false" => Some(false),
                        s => return Err(bad(format!("column seen: {s:?}"))),
                    },
                    pq: num(f(3), "pq")?,
                    sq: num(f(4), "sq")?,
                    rq: num(f(5), "rq")?,
                    tp: int(f(6), "tp")?,
                    fp: int(f(7), "fp")?,
                    fn_seg: int(f(8), "fn_seg")?,
                    fn_cls: int(f(9), "fn_cls")?,
                    recall: num(f(10), "recall")?,
                }),
                Err(_) => {
                    let v = if f(3).is_empty() { None } else { Some(num(f(3), f(0))?) };
                    aggs.insert(f(0).to_string(), v);
                }
            }
        }
        let required = |k: &str| aggs.get(k).copied().flatten().ok_or_else(|| bad(format!("missing aggregate {k}")));
        let report = RunReport {
            config: header.remove("config").unwrap_or(Value::Null),
            metadata: match header.remove("metadata") {
                Some(v) => serde_json::from_value(v).map_err(|e| bad(format!("metadata: {e}")))?,
                None => BTreeMap::new(),
            },
            taxonomy: match header.remove("taxonomy") {
                Some(v) => serde_json::from_value(v).map_err(|e| bad(format!("taxonomy: {e}")))?,
                None => return Err(bad("missing taxonomy header".into())),
            },
            aggregates: Aggregates {
                pq_all: required("pq_all")?,
                sq_all: required("sq_all")?,
                rq_all: required("rq_all")?,
                pq_seen: aggs.get("pq_seen").copied().flatten(),
                pq_unseen: aggs.get("pq_unseen").copied().flatten(),
            },
            rows,
        };
        report.check_consistency()?;
        Ok(report)
    }
}

const CSV_HEADER: [&str; 11] = [
    "class_id", "name", "seen", "pq", "sq", "rq", "tp", "fp", "fn_seg", "fn_cls", "recall",
];

pub fn write_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = match ReportFormat::from_path(path) {
        ReportFormat::Json => RunReport::from_json(&text),
        ReportFormat::Csv => RunReport::from_csv(&text),
    };
    parsed.map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardClassRow {
    pub class_id: u32,
    pub name: String,
    pub recall: f64,
    pub tp: u64,
    pub tp_reference: u64,
    pub tp_drop: i64,
    pub fn_seg: u64,
    pub fn_cls: u64,
}

/// Classes where the open-vocabulary run's recall is below
/// `recall_threshold` and that lost true positives relative to the
/// reference run, ranked by the loss (largest first).
pub fn hard_class_diff(open: &RunReport, reference: &RunReport, recall_threshold: f64) -> Result<Vec<HardClassRow>> {
    if open.taxonomy != reference.taxonomy {
        let n = open.taxonomy.len().max(reference.taxonomy.len());
        let unmatched: Vec<String> = (0..n)
            .filter(|&i| open.taxonomy.get(i) != reference.taxonomy.get(i))
            .map(|i| {
                format!(
                    "{i}: {:?} vs {:?}",
                    open.taxonomy.get(i).map(String::as_str).unwrap_or("<missing>"),
                    reference.taxonomy.get(i).map(String::as_str).unwrap_or("<missing>")
                )
            })
            .collect();
        return Err(Error::validation(
            "report",
            format!("taxonomy mismatch: {}", unmatched.join(", ")),
        ));
    }
    let reference_tp: BTreeMap<u32, u64> = reference.rows.iter().map(|r| (r.class_id, r.tp)).collect();
    let mut table: Vec<HardClassRow> = open
        .rows
        .iter()
        .filter(|r| r.recall < recall_threshold)
        .filter_map(|r| {
            let tp_reference = reference_tp.get(&r.class_id).copied().unwrap_or(0);
            let tp_drop = tp_reference as i64 - r.tp as i64;
            (tp_drop > 0).then(|| HardClassRow {
                class_id: r.class_id,
                name: r.name.clone(),
                recall: r.recall,
                tp: r.tp,
                tp_reference,
                tp_drop,
                fn_seg: r.fn_seg,
                fn_cls: r.fn_cls,
            })
        })
        .collect();
    table.sort_by(|a, b| b.tp_drop.cmp(&a.tp_drop).then(a.class_id.cmp(&b.class_id)));
    Ok(table)
}

const HARD_CLASS_HEADER: [&str; 8] = ["class_id", "name", "recall", "tp", "tp_reference", "tp_drop", "fn_seg", "fn_cls"];

/// Renders a hard-class table as canonical JSON or CSV.
pub fn hard_class_table(rows: &[HardClassRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => canonical_json(&serde_json::to_value(rows).expect("rows serialize")),
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
            w.write_record(HARD_CLASS_HEADER).expect("in-memory write");
            for r in rows {
                w.write_record([
                    r.class_id.to_string(),
                    r.name.clone(),
                    round_sig6(r.recall).to_string(),
                    r.tp.to_string(),
                    r.tp_reference.to_string(),
                    r.tp_drop.to_string(),
                    r.fn_seg.to_string(),
                    r.fn_cls.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
    }
}
