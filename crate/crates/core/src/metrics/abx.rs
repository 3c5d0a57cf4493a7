use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;

use super::dtw::{dtw, FrameDistance};
use super::{MetricsError, Result};
use crate::Matrix;

/// One discrimination trial: `x` shares `category_a` with `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbxTriple {
    pub a: String,
    pub b: String,
    pub x: String,
    pub category_a: String,
    pub category_b: String,
}

/// Parses `A_id B_id X_id category_a category_b` lines. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_triples(text: &str) -> Result<Vec<AbxTriple>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            errors.push(format!(
                "line {}: expected 5 fields, found {}",
                n + 1,
                fields.len()
            ));
            continue;
        }
        if fields[3] == fields[4] {
            errors.push(format!(
                "line {}: A and B share category {:?}",
                n + 1,
                fields[3]
            ));
            continue;
        }
        out.push(AbxTriple {
            a: fields[0].into(),
            b: fields[1].into(),
            x: fields[2].into(),
            category_a: fields[3].into(),
            category_b: fields[4].into(),
        });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(MetricsError::Input(errors.join("; ")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryScore {
    pub error_rate: f64,
    pub triples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbxReport {
    /// Fraction of trials where X was closer to B, ties counting half.
    pub error_rate: f64,
    pub triples: usize,
    /// Trials skipped because a representation was missing.
    pub skipped: usize,
    /// Breakdown keyed by the A/X category.
    pub per_category: BTreeMap<String, CategoryScore>,
}

impl AbxReport {
    pub fn error_percent(&self) -> f64 {
        100.0 * self.error_rate
    }
}

impl fmt::Display for AbxReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "abx_error_percent={:.4}", self.error_percent())?;
        writeln!(f, "abx_triples={}", self.triples)?;
        write!(f, "abx_skipped={}", self.skipped)?;
        for (cat, s) in &self.per_category {
            write!(
                f,
                "\nabx_category.{cat}={:.4} ({} triples)",
                100.0 * s.error_rate,
                s.triples
            )?;
        }
        Ok(())
    }
}

/// Score of a single trial: 1 if `x` is closer to `b`, ½ on a tie, else 0.
pub fn abx_trial(a: &Matrix, b: &Matrix, x: &Matrix, distance: FrameDistance) -> Result<f64> {
    let dax = dtw(a, x, distance)?;
    let dbx = dtw(b, x, distance)?;
    Ok(if dax > dbx {
        1.0
    } else if dax == dbx {
        0.5
    } else {
        0.0
    })
}

/// Plain mean of trial errors over the supplied triples. Triples that
/// reference a missing representation are skipped and counted.
pub fn abx_score(
    triples: &[AbxTriple],
    representations: &HashMap<String, Matrix>,
    distance: FrameDistance,
) -> Result<AbxReport> {
    let scored: Vec<Option<Result<f64>>> = triples
        .par_iter()
        .map(|t| {
            let (a, b, x) = (
                representations.get(&t.a)?,
                representations.get(&t.b)?,
                representations.get(&t.x)?,
            );
            Some(abx_trial(a, b, x, distance))
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0;
    let mut skipped = 0;
    let mut per: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (t, s) in triples.iter().zip(scored) {
        match s {
            None => {
                skipped += 1;
                log::warn!(
                    "abx: skipping triple {} {} {}: missing representation",
                    t.a,
                    t.b,
                    t.x
                );
            }
            Some(r) => {
                let e = r?;
                total += e;
                count += 1;
                let slot = per.entry(t.category_a.clone()).or_default();
                slot.0 += e;
                slot.1 += 1;
            }
        }
    }
    if count == 0 {
        return Err(MetricsError::Input(format!(
            "no scorable triples ({skipped} skipped)"
        )));
    }
    Ok(AbxReport {
        error_rate: total / count as f64,
        triples: count,
        skipped,
        per_category: per
            .into_iter()
            .map(|(k, (s, n))| {
                (
                    k,
                    CategoryScore {
                        error_rate: s / n as f64,
                        triples: n,
                    },
                )
            })
            .collect(),
    })
}
