//! Tab-separated corpus manifests.
//!
//! ```text
//! utterance_id<TAB>audio_path<TAB>speaker_id<TAB>duration
//! s1_0001<TAB>wav/s1_0001.wav<TAB>s1<TAB>2.31
//! ```
//!
//! The header line is required. `duration` (seconds) may be left empty.
//! Relative audio paths are resolved against the manifest's directory.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use super::{write_atomic, CorpusError, Result};
use crate::dsp::TARGET_SAMPLE_RATE;

pub const MANIFEST_HEADER: &str = "utterance_id\taudio_path\tspeaker_id\tduration";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub audio_path: PathBuf,
    pub speaker_id: String,
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub sample_rate: u32,
}

/// One problem found while validating a manifest. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ManifestIssue {
    MissingHeader,
    Malformed {
        line: usize,
        detail: String,
    },
    DuplicateId {
        id: String,
        first_line: usize,
        line: usize,
    },
    MissingSpeaker {
        id: String,
        line: usize,
    },
    MissingFile {
        id: String,
        path: PathBuf,
    },
    BadDuration {
        id: String,
        value: String,
    },
}

impl ManifestIssue {
    /// The issue without line numbers, for comparing error sets across
    /// reordered manifests.
    pub fn key(&self) -> String {
        match self {
            ManifestIssue::MissingHeader => "missing header".into(),
            ManifestIssue::Malformed { detail, .. } => format!("malformed: {detail}"),
            ManifestIssue::DuplicateId { id, .. } => format!("duplicate id {id}"),
            ManifestIssue::MissingSpeaker { id, .. } => format!("missing speaker for {id}"),
            ManifestIssue::MissingFile { path, .. } => format!("missing file {}", path.display()),
            ManifestIssue::BadDuration { id, value } => format!("bad duration {value:?} for {id}"),
        }
    }
}

impl fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestIssue::MissingHeader => {
                write!(f, "first line must be the header {MANIFEST_HEADER:?}")
            }
            ManifestIssue::Malformed { line, detail } => write!(f, "line {line}: {detail}"),
            ManifestIssue::DuplicateId {
                id,
                first_line,
                line,
            } => {
                write!(
                    f,
                    "utterance id {id:?} on line {line} already used on line {first_line}"
                )
            }
            ManifestIssue::MissingSpeaker { id, line } => {
                write!(f, "line {line}: utterance {id:?} has no speaker id")
            }
            ManifestIssue::MissingFile { id, path } => {
                write!(
                    f,
                    "utterance {id:?}: audio file {} does not exist",
                    path.display()
                )
            }
            ManifestIssue::BadDuration { id, value } => {
                write!(
                    f,
                    "utterance {id:?}: duration {value:?} is not a positive number"
                )
            }
        }
    }
}

impl Manifest {
    /// Parses manifest text; relative paths are joined onto `base_dir`.
    /// With `check_files`, every audio path must exist. All problems are
    /// collected before returning.
    pub fn parse(text: &str, base_dir: &Path, check_files: bool) -> Result<Manifest> {
        let mut issues = Vec::new();
        let mut entries = Vec::new();
        let is_header = |h: &str| {
            let h = h.trim_end();
            h == MANIFEST_HEADER || Some(h) == MANIFEST_HEADER.rsplit_once('\t').map(|p| p.0)
        };
        let mut lines = text.lines().enumerate().peekable();
        match lines.peek() {
            Some((_, h)) if is_header(h) => {
                lines.next();
            }
            // without a header the first line is still checked as data
            _ => issues.push(ManifestIssue::MissingHeader),
        }
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in lines {
            let line = i + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() < 2 || fields.len() > 4 {
                issues.push(ManifestIssue::Malformed {
                    line,
                    detail: format!(
                        "expected 3 or 4 tab-separated fields, found {}",
                        fields.len()
                    ),
                });
                continue;
            }
            let id = fields[0].trim().to_string();
            if id.is_empty() {
                issues.push(ManifestIssue::Malformed {
                    line,
                    detail: "empty utterance id".into(),
                });
                continue;
            }
            if let Some(&first_line) = seen.get(&id) {
                issues.push(ManifestIssue::DuplicateId {
                    id: id.clone(),
                    first_line,
                    line,
                });
            } else {
                seen.insert(id.clone(), line);
            }
            let speaker = fields.get(2).map(|s| s.trim()).unwrap_or("");
            if speaker.is_empty() {
                issues.push(ManifestIssue::MissingSpeaker {
                    id: id.clone(),
                    line,
                });
            }
            let rel = PathBuf::from(fields[1].trim());
            let audio_path = if rel.is_absolute() {
                rel
            } else {
                base_dir.join(rel)
            };
            if check_files && !audio_path.is_file() {
                issues.push(ManifestIssue::MissingFile {
                    id: id.clone(),
                    path: audio_path.clone(),
                });
            }
            let duration = match fields.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
                None => None,
                Some(v) => match v.parse::<f64>() {
                    Ok(d) if d > 0.0 && d.is_finite() => Some(d),
                    _ => {
                        issues.push(ManifestIssue::BadDuration {
                            id: id.clone(),
                            value: v.to_string(),
                        });
                        None
                    }
                },
            };
            entries.push(ManifestEntry {
                utterance_id: id,
                audio_path,
                speaker_id: speaker.to_string(),
                duration,
            });
        }
        if issues.is_empty() {
            Ok(Manifest {
                entries,
                sample_rate: TARGET_SAMPLE_RATE,
            })
        } else {
            Err(CorpusError::Manifest(issues))
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct speaker ids in order of first appearance.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.speaker_id) {
                out.push(e.speaker_id.clone());
            }
        }
        out
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.utterance_id == utterance_id)
    }

    /// Serializes with paths relative to `base_dir` where possible.
    pub fn to_text(&self, base_dir: &Path) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            let path = e.audio_path.strip_prefix(base_dir).unwrap_or(&e.audio_path);
            let duration = e.duration.map(|d| format!("{d}")).unwrap_or_default();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.utterance_id,
                path.display(),
                e.speaker_id,
                duration
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        write_atomic(path, self.to_text(base).as_bytes())
    }
}

/// Reads and validates a manifest file, checking that audio files exist.
pub fn validate_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Manifest::parse(&text, base, true)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn issues(r: Result<Manifest>) -> Vec<ManifestIssue> {
        match r {
            Err(CorpusError::Manifest(v)) => v,
            other => panic!("expected manifest issues, got {other:?}"),
        }
    }

    #[test]
    fn well_formed_three_entries() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.wav", "b.wav", "c.wav"] {
            std::fs::write(dir.path().join(n), b"x").unwrap();
        }
        let text =
            format!("{MANIFEST_HEADER}\nu1\ta.wav\ts1\t1.5\nu2\tb.wav\ts1\t\nu3\tc.wav\ts2\n");
        std::fs::write(dir.path().join("m.tsv"), text).unwrap();
        let m = validate_manifest(&dir.path().join("m.tsv")).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries[0].duration, Some(1.5));
        assert_eq!(m.entries[1].audio_path, dir.path().join("b.wav"));
        assert_eq!(m.speakers(), vec!["s1", "s2"]);
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let text =
            format!("{MANIFEST_HEADER}\nu1\ta.wav\ts1\t\nu2\tb.wav\ts1\t\nu1\tc.wav\ts2\t\n");
        let v = issues(Manifest::parse(&text, Path::new("."), false));
        assert_eq!(
            v,
            vec![ManifestIssue::DuplicateId {
                id: "u1".into(),
                first_line: 2,
                line: 4
            }]
        );
        let msg = v[0].to_string();
        assert!(msg.contains("u1") && msg.contains("line 4") && msg.contains("line 2"));
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{MANIFEST_HEADER}\nu1\tnothere.wav\ts1\t\n");
        let v = issues(Manifest::parse(&text, dir.path(), true));
        assert!(v[0].to_string().contains("nothere.wav"));
    }

    #[test]
    fn every_problem_is_reported() {
        let text = "u1\ta.wav\ts1\nu1\tb.wav\t\t-3\nbroken\n";
        let v = issues(Manifest::parse(text, Path::new("."), false));
        assert_eq!(v.len(), 5, "{v:?}");
    }

    #[test]
    fn error_set_is_order_independent() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ok.wav"), b"x").unwrap();
        let rows = [
            "u1\tok.wav\ts1\t",
            "u2\tgone.wav\ts1\t",
            "u1\tok.wav\ts2\t",
            "u3\tok.wav\t\t",
            "u4\tok.wav\ts1\tzero",
        ];
        let keys = |order: &[usize]| -> BTreeSet<String> {
            let body: Vec<&str> = order.iter().map(|&i| rows[i]).collect();
            let text = format!("{MANIFEST_HEADER}\n{}\n", body.join("\n"));
            issues(Manifest::parse(&text, dir.path(), true))
                .iter()
                .map(|i| i.key())
                .collect()
        };
        let base = keys(&[0, 1, 2, 3, 4]);
        assert_eq!(base.len(), 4);
        for order in [[4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 4, 0, 3, 2]] {
            assert_eq!(keys(&order), base);
        }
    }

    #[test]
    fn text_round_trip() {
        let text = format!("{MANIFEST_HEADER}\nu1\ta.wav\ts1\t1.25\nu2\tsub/b.wav\ts2\t\n");
        let m = Manifest::parse(&text, Path::new("/data"), false).unwrap();
        assert_eq!(m.to_text(Path::new("/data")), text);
    }
}
