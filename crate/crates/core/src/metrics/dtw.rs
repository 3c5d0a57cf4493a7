use super::{MetricsError, Result};
use crate::Matrix;

/// Distance between two frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrameDistance {
    /// `1 − cos`; a zero vector is at distance 1 from everything.
    #[default]
    Cosine,
    /// Symmetrized KL divergence between probability vectors.
    SymmetricKl,
}

/// Probability floor applied before KL.
pub const KL_FLOOR: f64 = 1e-10;
/// Allowed deviation of a probability row sum from 1.
const ROW_SUM_TOLERANCE: f64 = 1e-6;

impl FrameDistance {
    pub fn name(&self) -> &'static str {
        match self {
            FrameDistance::Cosine => "cosine",
            FrameDistance::SymmetricKl => "kl",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cosine" => Some(FrameDistance::Cosine),
            "kl" | "symmetric_kl" => Some(FrameDistance::SymmetricKl),
            _ => None,
        }
    }
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    // sqrt(n·n) == n exactly, so identical frames give exactly 0
    (1.0 - dot / (na * nb).sqrt()).clamp(0.0, 2.0)
}

/// Floors at [`KL_FLOOR`] and renormalizes.
fn smooth(p: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|v| v.max(KL_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

fn symmetric_kl_smoothed(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in p.iter().zip(q) {
        let lr = (a / b).ln();
        acc += (a - b) * lr;
    }
    (0.5 * acc).max(0.0)
}

/// `½ (KL(p‖q) + KL(q‖p))` after flooring both vectors.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    symmetric_kl_smoothed(&smooth(p), &smooth(q))
}

fn check_probabilities(m: &Matrix, which: &str) -> Result<()> {
    for (t, row) in m.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(MetricsError::Input(format!(
                "{which} frame {t} is not a probability vector (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Pairwise frame cost matrix, `T_a × T_b`.
pub fn cost_matrix(a: &Matrix, b: &Matrix, distance: FrameDistance) -> Result<Matrix> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(MetricsError::Input("DTW on an empty sequence".into()));
    }
    if a.cols() != b.cols() {
        return Err(MetricsError::Input(format!(
            "frame dimensions differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut cost = Matrix::zeros(a.rows(), b.rows());
    match distance {
        FrameDistance::Cosine => {
            for i in 0..a.rows() {
                for j in 0..b.rows() {
                    cost.row_mut(i)[j] = cosine_distance(a.row(i), b.row(j));
                }
            }
        }
        FrameDistance::SymmetricKl => {
            check_probabilities(a, "first sequence")?;
            check_probabilities(b, "second sequence")?;
            let sa: Vec<Vec<f64>> = a.iter_rows().map(smooth).collect();
            let sb: Vec<Vec<f64>> = b.iter_rows().map(smooth).collect();
            for (i, p) in sa.iter().enumerate() {
                for (j, q) in sb.iter().enumerate() {
                    cost.row_mut(i)[j] = symmetric_kl_smoothed(p, q);
                }
            }
        }
    }
    Ok(cost)
}

/// Minimal accumulated cost of a monotone alignment with steps (1,0),
/// (0,1), (1,1), divided by the number of aligned pairs. Among equal-cost
/// alignments the shortest is used.
pub fn dtw(a: &Matrix, b: &Matrix, distance: FrameDistance) -> Result<f64> {
    let cost = cost_matrix(a, b, distance)?;
    Ok(dtw_on_costs(&cost))
}

pub(crate) fn dtw_on_costs(cost: &Matrix) -> f64 {
    let (n, m) = (cost.rows(), cost.cols());
    // (accumulated cost, path length)
    let mut prev = vec![(f64::INFINITY, 0usize); m];
    let mut cur = vec![(f64::INFINITY, 0usize); m];
    let better = |x: (f64, usize), y: (f64, usize)| x.0 < y.0 || (x.0 == y.0 && x.1 < y.1);
    for i in 0..n {
        for j in 0..m {
            let c = cost.row(i)[j];
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                if i > 0 && j > 0 && better(prev[j - 1], best) {
                    best = prev[j - 1];
                }
                if i > 0 && better(prev[j], best) {
                    best = prev[j];
                }
                if j > 0 && better(cur[j - 1], best) {
                    best = cur[j - 1];
                }
                best
            };
            cur[j] = (best.0 + c, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (total, len) = prev[m - 1];
    total / len as f64
}
