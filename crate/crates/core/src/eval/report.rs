use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{roc_auc, tpr_at_fpr, ArtifactRow, EvalError, Result, RobustnessGrid};
use crate::datagen::Label;
use crate::inference::{Calibration, DecisionTable, SourceRow};
use crate::training::SplitEvaluation;

pub const REPORT_FORMAT: &str = "aeforge-report/1";

/// Settings echoed into the report so every number can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub profile: String,
    pub seed: u64,
    pub crop_size: usize,
    pub tries: usize,
    pub one_try_threshold: f64,
    pub multi_threshold: f64,
    pub fpr_target: f64,
    pub transforms: Vec<String>,
    pub detector_hash: String,
    /// Autoencoder name to checkpoint hash.
    pub autoencoders: BTreeMap<String, String>,
}

/// Area under the ROC curve and TPR at a capped FPR for one generated source
/// against the original images, on multi-crop aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityRow {
    pub source: String,
    pub auc: f64,
    pub tpr_at_fpr: f64,
    pub fpr_cap: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn separability(table: &DecisionTable, fpr_cap: f64) -> Result<Vec<SeparabilityRow>> {
    let neg: Vec<f64> = table.items.iter().filter(|i| i.label == Label::Original).map(|i| i.multi).collect();
    let mut rows = Vec::new();
    for row in table.rows.iter().filter(|r| r.label == Label::Reconstructed) {
        let pos: Vec<f64> = table.items.iter().filter(|i| i.source == row.source).map(|i| i.multi).collect();
        let (_, auc) = roc_auc(&pos, &neg)?;
        rows.push(SeparabilityRow {
            source: row.source.clone(),
            auc,
            tpr_at_fpr: tpr_at_fpr(&pos, &neg, fpr_cap)?,
            fpr_cap,
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub config: ReportConfig,
    /// Crop-level precision/recall/F1 on the corpus test split.
    pub crop_test: Option<SplitEvaluation>,
    pub calibration: Option<Calibration>,
    /// Image-level 1-try and multi-crop rates per source.
    pub decisions: Vec<SourceRow>,
    pub separability: Vec<SeparabilityRow>,
    pub robustness: Option<RobustnessGrid>,
    pub artifacts: Option<Vec<ArtifactRow>>,
}

impl EvalReport {
    pub fn new(config: ReportConfig) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            config,
            crop_test: None,
            calibration: None,
            decisions: Vec::new(),
            separability: Vec::new(),
            robustness: None,
            artifacts: None,
        }
    }

    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut out = String::new();
        write_canonical(&value, 0, &mut out);
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
        match value.get("format").and_then(Value::as_str) {
            Some(REPORT_FORMAT) => {}
            Some(other) => {
                return Err(EvalError::Format(format!("report format {other} is not {REPORT_FORMAT}")));
            }
            None => return Err(EvalError::Format("report has no format field".into())),
        }
        serde_json::from_value(value).map_err(|e| EvalError::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_canonical_json()).map_err(|e| EvalError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?)
    }

    /// CSV mirrors of the report tables, one file per table in `dir`.
    pub fn write_csv_tables(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        let mut tables: Vec<(&str, Vec<Vec<String>>)> = Vec::new();

        let mut t = vec![vec!["class".into(), "precision".into(), "recall".into(), "f1".into()]];
        if let Some(split) = &self.crop_test {
            for r in &split.rows {
                t.push(vec![label_name(r.class).into(), opt(r.precision), opt(r.recall), opt(r.f1)]);
            }
        }
        tables.push(("crop_test.csv", t));

        let mut t = vec![["source", "label", "images", "errors", "one_try_rate", "multi_rate"].map(String::from).to_vec()];
        for r in &self.decisions {
            t.push(vec![
                r.source.clone(),
                label_name(r.label).into(),
                r.images.to_string(),
                r.errors.to_string(),
                opt(r.one_try.rate),
                opt(r.multi.rate),
            ]);
        }
        tables.push(("decisions.csv", t));

        let mut t = vec![["source", "transform", "rate", "images", "skipped"].map(String::from).to_vec()];
        for row in self.robustness.iter().flat_map(|g| &g.rows) {
            for c in &row.cells {
                t.push(vec![
                    row.source.clone(),
                    c.transform.clone(),
                    opt(c.rate),
                    c.images.to_string(),
                    c.skipped.clone().unwrap_or_default(),
                ]);
            }
        }
        tables.push(("robustness.csv", t));

        let mut t = vec![[
            "row",
            "unique_colors",
            "bw_fraction",
            "jpeg85_unique_colors",
            "jpeg85_bw_fraction",
            "resize50_unique_colors",
            "resize50_bw_fraction",
        ]
        .map(String::from)
        .to_vec()];
        for r in self.artifacts.iter().flatten() {
            let mut line = vec![r.name.clone(), r.default.unique_colors.to_string(), format!("{:.5}", r.default.bw_fraction)];
            for s in [r.jpeg85, r.resize50] {
                match s {
                    Some(s) => line.extend([s.unique_colors.to_string(), format!("{:.5}", s.bw_fraction)]),
                    None => line.extend(["-".to_string(), "-".to_string()]),
                }
            }
            t.push(line);
        }
        tables.push(("artifacts.csv", t));

        let mut t = vec![["source", "auc", "tpr_at_fpr", "fpr_cap"].map(String::from).to_vec()];
        for r in &self.separability {
            t.push(vec![r.source.clone(), fmt_float(r.auc), fmt_float(r.tpr_at_fpr), fmt_float(r.fpr_cap)]);
        }
        tables.push(("separability.csv", t));

        for (name, rows) in tables {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| EvalError::Format(e.to_string()))?;
            for r in rows {
                w.write_record(&r).map_err(|e| EvalError::Format(e.to_string()))?;
            }
            w.flush().map_err(|e| EvalError::io(&path, e))?;
        }
        Ok(())
    }
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Original => "original",
        Label::Reconstructed => "reconstructed",
    }
}

/// Six significant digits, shortest decimal form.
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { "null".into() };
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn write_canonical(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
        Value::Number(n) => {
            if n.is_u64() || n.is_i64() {
                out.push_str(&n.to_string());
            } else {
                out.push_str(&fmt_float(n.as_f64().expect("finite number")));
            }
        }
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_canonical(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{}]", pad(indent));
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                let _ = write!(out, "{}{}: ", pad(indent + 1), Value::String((*k).clone()));
                write_canonical(&map[*k], indent + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{}}}", pad(indent));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Absolute tolerance for any number not listed in `per_field`.
    pub default: f64,
    /// Overrides keyed by the last path segment, e.g. `"auc"`.
    #[serde(default)]
    pub per_field: BTreeMap<String, f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { default: 0.0, per_field: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    /// Dotted path to the differing value; array elements are `[i]`.
    pub path: String,
    pub left: String,
    pub right: String,
}

/// Every value that differs between two reports beyond tolerance.
pub fn compare_reports(a: &EvalReport, b: &EvalReport, tol: &Tolerances) -> Vec<DiffEntry> {
    let va = serde_json::to_value(a).expect("report serializes");
    let vb = serde_json::to_value(b).expect("report serializes");
    let mut out = Vec::new();
    diff(&va, &vb, "", "", tol, &mut out);
    out
}

fn diff(a: &Value, b: &Value, path: &str, field: &str, tol: &Tolerances, out: &mut Vec<DiffEntry>) {
    let entry = |out: &mut Vec<DiffEntry>, l: &Value, r: &Value| {
        out.push(DiffEntry { path: path.to_string(), left: l.to_string(), right: r.to_string() })
    };
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            let t = tol.per_field.get(field).copied().unwrap_or(tol.default);
            if !((x - y).abs() <= t) {
                entry(out, a, b);
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let (l, r) = (x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null));
                diff(l, r, &p, k, tol, out);
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (l, r)) in x.iter().zip(y).enumerate() {
                diff(l, r, &format!("{path}[{i}]"), field, tol, out);
            }
        }
        _ if a != b => entry(out, a, b),
        _ => {}
    }
}
