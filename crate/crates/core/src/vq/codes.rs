use crate::Matrix;

/// Per-frame discrete unit indices. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSequence {
    pub indices: Vec<usize>,
    /// Input frames per emitted code.
    pub reduction: usize,
    /// Size of the codebook the indices refer to.
    pub codebook_size: usize,
}

impl CodeSequence {
    /// Panics if an index is out of range or `reduction` is zero.
    pub fn new(indices: Vec<usize>, reduction: usize, codebook_size: usize) -> Self {
        assert!(reduction >= 1, "reduction factor must be at least 1");
        if let Some(&bad) = indices.iter().find(|&&i| i >= codebook_size) {
            panic!("code index {bad} out of range for a codebook of {codebook_size}");
        }
        Self {
            indices,
            reduction,
            codebook_size,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Replaces each index by its codebook row. `None` if the codebook has
    /// a different number of rows.
    pub fn to_vectors(&self, codebook: &Matrix) -> Option<Matrix> {
        if codebook.rows() != self.codebook_size {
            return None;
        }
        let mut out = Matrix::zeros(self.indices.len(), codebook.cols());
        for (t, &i) in self.indices.iter().enumerate() {
            out.row_mut(t).copy_from_slice(codebook.row(i));
        }
        Some(out)
    }
}
