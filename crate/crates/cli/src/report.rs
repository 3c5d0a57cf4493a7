use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use zsu_core::corpus::write_atomic;

use crate::PipelineConfig;

/// Sorted `key=value` lines. Holds no timestamps or host details, so two
/// runs with the same configuration produce identical bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: BTreeMap<String, String>,
}

impl Report {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        let mut r = Self::default();
        r.set("command", command);
        r.set("version", env!("CARGO_PKG_VERSION"));
        r.set("seed", cfg.train.seed);
        for (k, v) in cfg.echo() {
            r.set(k, v);
        }
        r
    }

    /// Newlines in values are escaped so every entry stays on one line.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let v = value.to_string().replace('\\', "\\\\").replace('\n', "\\n");
        self.entries.insert(key.into(), v);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses report text back into entries.
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }

    pub fn write(&self, dir: &Path) -> zsu_core::corpus::Result<()> {
        write_atomic(&dir.join("report.txt"), self.to_text().as_bytes())
    }
}
