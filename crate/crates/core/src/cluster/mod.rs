//! Baseline unit discovery: minibatch K-Means, diagonal-covariance GMM and
//! frame-level time reduction.

mod gmm;
mod kmeans;
mod persist;

pub use gmm::{gmm_fit, GmmConfig, GmmFit, GmmModel};
pub use kmeans::{kmeans_fit, KMeansConfig, KMeansFit, KMeansModel};
pub use persist::{GMM_KIND, KMEANS_KIND};

use thiserror::Error;

use crate::{FeatureSequence, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("model bundle: {0}")]
    Bundle(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// How [`time_reduce`] collapses a group of frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReduceMode {
    /// Mean of the group.
    #[default]
    Average,
    /// First frame of the group.
    Stride,
}

impl ReduceMode {
    pub fn name(&self) -> &'static str {
        match self {
            ReduceMode::Average => "average",
            ReduceMode::Stride => "stride",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "average" => Some(ReduceMode::Average),
            "stride" => Some(ReduceMode::Stride),
            _ => None,
        }
    }
}

/// Collapses consecutive non-overlapping groups of `factor` frames. The
/// last group may be shorter and is averaged over its actual length.
pub fn time_reduce(
    features: &FeatureSequence,
    factor: usize,
    mode: ReduceMode,
) -> Result<FeatureSequence> {
    if factor == 0 {
        return Err(ClusterError::Config(
            "time reduction factor must be at least 1".into(),
        ));
    }
    let frames = reduce_rows(&features.frames, factor, mode);
    Ok(FeatureSequence::new(
        frames,
        features.kind,
        features.frame_rate / factor as f64,
    ))
}

pub(crate) fn reduce_rows(m: &Matrix, factor: usize, mode: ReduceMode) -> Matrix {
    let groups = m.rows().div_ceil(factor);
    let mut out = Matrix::zeros(groups, m.cols());
    for gi in 0..groups {
        let start = gi * factor;
        let end = (start + factor).min(m.rows());
        let dst = out.row_mut(gi);
        match mode {
            ReduceMode::Stride => dst.copy_from_slice(m.row(start)),
            ReduceMode::Average => {
                for r in start..end {
                    for (d, s) in dst.iter_mut().zip(m.row(r)) {
                        *d += s;
                    }
                }
                let n = (end - start) as f64;
                dst.iter_mut().for_each(|d| *d /= n);
            }
        }
    }
    out
}

/// Per-dimension affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Dimensions with (near) zero spread keep unit scale.
    pub fn fit(data: &Matrix) -> Self {
        let n = data.rows().max(1) as f64;
        let mut mean = vec![0.0; data.cols()];
        for row in data.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; data.cols()];
        for row in data.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        for r in 0..out.rows() {
            self.apply_row(out.row_mut(r));
        }
        out
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn invert(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        out
    }
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&c| pairs(c)).sum();
    let rows: f64 = (0..ka)
        .map(|i| pairs(table[i * kb..][..kb].iter().sum()))
        .sum();
    let cols: f64 = (0..kb)
        .map(|j| pairs((0..ka).map(|i| table[i * kb + j]).sum()))
        .sum();
    let total = pairs(n as u64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

pub(crate) fn check_data(data: &Matrix, what: &str) -> Result<()> {
    if data.rows() == 0 || data.cols() == 0 {
        return Err(ClusterError::Input(format!("{what}: empty feature matrix")));
    }
    if !data.is_finite() {
        return Err(ClusterError::Input(format!(
            "{what}: non-finite feature values"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::FeatureKind;

    fn seq(values: &[f64]) -> FeatureSequence {
        FeatureSequence::new(
            Matrix::from_vec(values.len(), 1, values.to_vec()),
            FeatureKind::Custom(1),
            100.0,
        )
    }

    #[test]
    fn factor_one_is_identity() {
        let s = seq(&[1.0, 2.0, 3.5]);
        assert_eq!(time_reduce(&s, 1, ReduceMode::Average).unwrap(), s);
    }

    #[test]
    fn pairs_are_averaged() {
        let r = time_reduce(&seq(&[0.0, 2.0, 4.0, 6.0]), 2, ReduceMode::Average).unwrap();
        assert_eq!(r.frames.as_slice(), &[1.0, 5.0]);
        assert_eq!(r.frame_rate, 50.0);
    }

    #[test]
    fn partial_group_uses_its_own_length() {
        let r = time_reduce(
            &seq(&[1.0, 1.0, 1.0, 1.0, 4.0, 8.0]),
            4,
            ReduceMode::Average,
        )
        .unwrap();
        assert_eq!(r.frames.as_slice(), &[1.0, 6.0]);
    }

    #[test]
    fn ninety_eight_frames_by_four() {
        let values: Vec<f64> = (0..98).map(f64::from).collect();
        assert_eq!(
            time_reduce(&seq(&values), 4, ReduceMode::Average)
                .unwrap()
                .len(),
            25
        );
    }

    #[test]
    fn stride_mode_takes_group_heads() {
        let r = time_reduce(&seq(&[0.0, 2.0, 4.0, 6.0, 8.0]), 2, ReduceMode::Stride).unwrap();
        assert_eq!(r.frames.as_slice(), &[0.0, 4.0, 8.0]);
    }

    #[test]
    fn zero_factor_rejected() {
        assert!(matches!(
            time_reduce(&seq(&[1.0]), 0, ReduceMode::Average),
            Err(ClusterError::Config(_))
        ));
    }

    #[test]
    fn averaging_preserves_global_mean() {
        let values: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let mean = values.iter().sum::<f64>() / 24.0;
        for r in [2, 3, 4, 6] {
            let red = time_reduce(&seq(&values), r, ReduceMode::Average).unwrap();
            let m = red.frames.as_slice().iter().sum::<f64>() / red.len() as f64;
            assert!((m - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn standardizer_round_trip() {
        let m = Matrix::from_rows(&[[1.0, 10.0, 5.0], [3.0, 30.0, 5.0], [5.0, 20.0, 5.0]]);
        let s = Standardizer::fit(&m);
        let z = s.apply(&m);
        for j in 0..3 {
            let col = z.column(j);
            assert!(col.iter().sum::<f64>().abs() < 1e-12);
        }
        assert_eq!(s.std[2], 1.0);
        let back = s.invert(&z);
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ari_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1]), 1.0);
        // every cell holds one item: index 0, row and column pair sums 2, total 6
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!((ari - (0.0 - 4.0 / 6.0) / (2.0 - 4.0 / 6.0)).abs() < 1e-12);
    }
}
