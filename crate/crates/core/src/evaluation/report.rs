use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One named value; `None` renders as `skip`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: Option<f64>,
}

/// Metrics written as JSON plus a plain-text table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: String,
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn new(mode: impl Into<String>) -> Self {
        Self {
            mode: mode.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Option<f64>) -> &mut Self {
        self.metrics.push(Metric {
            name: name.into(),
            value,
        });
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<Option<f64>> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .metrics
            .iter()
            .map(|m| m.name.len())
            .max()
            .unwrap_or(6)
            .max("metric".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  value", "metric");
        let _ = writeln!(out, "{}  {}", "-".repeat(width), "-".repeat(8));
        for m in &self.metrics {
            let v = m.value.map_or_else(|| "skip".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{:<width$}  {v}", m.name);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.txt` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::media::write_file(
            &dir.join(format!("{stem}.json")),
            &serde_json::to_vec_pretty(self)?,
        )?;
        crate::media::write_file(&dir.join(format!("{stem}.txt")), self.to_table().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shows_skip() {
        let mut r = MetricsReport::new("correlation");
        r.push("pearson", Some(0.5)).push("kendall_tau_b", None);
        let t = r.to_table();
        assert!(t.contains("pearson        0.5000"), "{t}");
        assert!(t.contains("kendall_tau_b  skip"));
        assert_eq!(r.get("kendall_tau_b"), Some(None));
    }
}
