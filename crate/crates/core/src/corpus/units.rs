//! Plain-text unit sequences, one utterance per line:
//!
//! ```text
//! # reduction=4 codebook=256
//! s1_0001 17 17 203 5
//! ```
//!
//! Indices are 0-based.

use std::path::Path;

use super::{write_atomic, CorpusError, Result};
use crate::CodeSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct UnitFile {
    pub reduction: usize,
    pub codebook_size: usize,
    /// (utterance id, codes) in file order.
    pub utterances: Vec<(String, CodeSequence)>,
}

impl UnitFile {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# reduction={} codebook={}\n",
            self.reduction, self.codebook_size
        );
        for (id, codes) in &self.utterances {
            out.push_str(id);
            for i in &codes.indices {
                out.push(' ');
                out.push_str(&i.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<UnitFile> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let mut reduction = None;
        let mut codebook = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("reduction", v)) => reduction = v.parse::<usize>().ok(),
                Some(("codebook", v)) => codebook = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (Some(reduction), Some(codebook_size)) = (reduction, codebook) else {
            return Err(CorpusError::Format(
                "unit file must start with \"# reduction=R codebook=K\"".into(),
            ));
        };
        if reduction == 0 || codebook_size == 0 {
            return Err(CorpusError::Format(
                "reduction and codebook size must be positive".into(),
            ));
        }
        let mut utterances = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut parts = line.split_whitespace();
            let Some(id) = parts.next() else { continue };
            let indices = parts
                .map(|p| match p.parse::<usize>() {
                    Ok(i) if i < codebook_size => Ok(i),
                    _ => Err(CorpusError::Format(format!(
                        "line {}: {p:?} is not a unit index below {codebook_size}",
                        n + 2
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            utterances.push((
                id.to_string(),
                CodeSequence::new(indices, reduction, codebook_size),
            ));
        }
        Ok(UnitFile {
            reduction,
            codebook_size,
            utterances,
        })
    }

    pub fn get(&self, id: &str) -> Option<&CodeSequence> {
        self.utterances
            .iter()
            .find(|(u, _)| u == id)
            .map(|(_, c)| c)
    }
}

pub fn write_units(path: &Path, units: &UnitFile) -> Result<()> {
    write_atomic(path, units.to_text().as_bytes())
}

pub fn read_units(path: &Path) -> Result<UnitFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    UnitFile::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let u = UnitFile {
            reduction: 4,
            codebook_size: 8,
            utterances: vec![
                ("a".into(), CodeSequence::new(vec![0, 7, 7, 3], 4, 8)),
                ("b".into(), CodeSequence::new(vec![], 4, 8)),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.txt");
        write_units(&p, &u).unwrap();
        assert_eq!(read_units(&p).unwrap(), u);
    }

    #[test]
    fn rejects_out_of_range_and_missing_header() {
        assert!(UnitFile::parse("# reduction=1 codebook=4\na 1 4\n").is_err());
        assert!(UnitFile::parse("a 1 2\n").is_err());
    }
}
