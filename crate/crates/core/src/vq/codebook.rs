use super::{Result, VqError};
use crate::{nearest_row, CodeSequence, Matrix};

/// `K × D_e` unit vectors plus how often each was selected.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub vectors: Matrix,
    pub usage: Vec<u64>,
}

impl Codebook {
    pub fn new(vectors: Matrix) -> Self {
        let k = vectors.rows();
        Self {
            vectors,
            usage: vec![0; k],
        }
    }

    pub fn size(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn record(&mut self, codes: &[usize]) {
        for &c in codes {
            self.usage[c] += 1;
        }
    }

    /// `exp(H)` of the recorded usage distribution; 0 when nothing is recorded.
    pub fn perplexity(&self) -> f64 {
        perplexity(&self.usage)
    }
}

/// `exp` of the entropy (nats) of a count histogram; 0 for an empty one.
pub fn perplexity(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

/// Per-row nearest codebook vector under L2, ties to the lowest index.
/// Returns the codes and the selected vectors.
pub fn quantize(
    latents: &Matrix,
    codebook: &Matrix,
    reduction: usize,
) -> Result<(CodeSequence, Matrix)> {
    if codebook.rows() == 0 {
        return Err(VqError::State("quantize with an empty codebook".into()));
    }
    if latents.cols() != codebook.cols() {
        return Err(VqError::Input(format!(
            "latents have {} dimensions, codebook {}",
            latents.cols(),
            codebook.cols()
        )));
    }
    let indices: Vec<usize> = latents
        .iter_rows()
        .map(|z| nearest_row(z, codebook).0)
        .collect();
    let codes = CodeSequence::new(indices, reduction, codebook.rows());
    let vectors = codes.to_vectors(codebook).expect("codebook size matches");
    Ok((codes, vectors))
}
