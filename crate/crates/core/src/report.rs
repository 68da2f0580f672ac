//! Structured outcome of a verification experiment.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

/// One itemized check inside an experiment, emitted as a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub item: String,
    pub case_id: usize,
    pub value: f64,
    pub pass: bool,
}

/// Every `Fail` carries a witness and every `Pass` carries its worst margin;
/// the constructors [`VerdictReport::pass`], [`VerdictReport::fail`] and
/// [`VerdictReport::inconclusive`] are the only way to set a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub experiment: String,
    pub verdict: Verdict,
    pub worst_margin: Option<NamedValue>,
    pub margins: BTreeMap<String, f64>,
    pub witness: Option<Value>,
    pub seeds: Vec<u64>,
    pub tolerances: BTreeMap<String, f64>,
    pub step: Option<f64>,
    pub rows: Vec<CaseRow>,
}

impl VerdictReport {
    /// A report under construction; the verdict starts as inconclusive.
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            verdict: Verdict::Inconclusive,
            worst_margin: None,
            margins: BTreeMap::new(),
            witness: None,
            seeds: Vec::new(),
            tolerances: BTreeMap::new(),
            step: None,
            rows: Vec::new(),
        }
    }

    pub fn margin(mut self, name: &str, value: f64) -> Self {
        self.margins.insert(name.to_owned(), value);
        self
    }

    pub fn tolerance(mut self, name: &str, value: f64) -> Self {
        self.tolerances.insert(name.to_owned(), value);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seeds.push(seed);
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn push_row(&mut self, item: impl Into<String>, case_id: usize, value: f64, pass: bool) {
        self.rows.push(CaseRow { item: item.into(), case_id, value, pass });
    }

    pub fn pass(mut self, worst: &str, value: f64) -> Self {
        self.verdict = Verdict::Pass;
        self.worst_margin = Some(NamedValue { name: worst.to_owned(), value });
        self
    }

    pub fn fail(mut self, worst: &str, value: f64, witness: Value) -> Self {
        self.verdict = Verdict::Fail;
        self.worst_margin = Some(NamedValue { name: worst.to_owned(), value });
        self.witness = Some(witness);
        self
    }

    pub fn inconclusive(mut self, worst: &str, value: f64, reason: Value) -> Self {
        self.verdict = Verdict::Inconclusive;
        self.worst_margin = Some(NamedValue { name: worst.to_owned(), value });
        self.witness = Some(reason);
        self
    }

    /// Pass when `ok`, otherwise fail with the witness produced by `witness`.
    pub fn conclude(self, ok: bool, worst: &str, value: f64, witness: impl FnOnce() -> Value) -> Self {
        if ok {
            self.pass(worst, value)
        } else {
            self.fail(worst, value, witness())
        }
    }

    pub fn is_pass(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// CSV body `item,case_id,value,verdict` for the itemized rows.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("item,case_id,value,verdict\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.item,
                r.case_id,
                r.value,
                if r.pass { "pass" } else { "fail" }
            ));
        }
        out
    }

    /// One human-readable line.
    pub fn summary_line(&self) -> String {
        let worst = self
            .worst_margin
            .as_ref()
            .map(|w| format!("{}={:.6e}", w.name, w.value))
            .unwrap_or_else(|| "-".into());
        format!("{:<28} {:<13} {}", self.experiment, self.verdict, worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn fail_carries_witness_and_pass_carries_margin() {
        let r = VerdictReport::new("x").conclude(false, "gap", -1.0, || json!({"t": 0.5}));
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.witness.is_some());
        let r = VerdictReport::new("x").conclude(true, "gap", 0.0, || unreachable!());
        assert_eq!(r.worst_margin.unwrap().name, "gap");
    }

    #[test]
    fn rows_render_as_csv() {
        let mut r = VerdictReport::new("x");
        r.push_row("tower", 3, 1.5e-9, true);
        assert_eq!(r.rows_csv(), "item,case_id,value,verdict\ntower,3,0.0000000015,pass\n");
    }
}
