use crate::grad::{Graph, Var};

use super::Result;

/// `z + sg(e − z)`: the value of `e`, with the gradient passed to `z`
/// unchanged and none to `e`.
pub fn straight_through(g: &mut Graph, z: Var, e: Var) -> Result<Var> {
    let diff = g.sub(e, z)?;
    let held = g.stop_gradient(diff);
    Ok(g.add(z, held)?)
}

/// Graph nodes of the three loss terms and their sum.
#[derive(Debug, Clone, Copy)]
pub struct VqLoss {
    pub total: Var,
    pub reconstruction: Var,
    /// `‖sg(z) − e‖²`, moves only the codebook.
    pub codebook: Var,
    /// `γ ‖z − sg(e)‖²`, moves only the encoder.
    pub commitment: Var,
}

/// Builds the three-term objective. Squared norms are elementwise means, so
/// they stay comparable with the reconstruction MSE. `frame_mask` selects
/// elements of `x`; `code_mask` selects elements of `z`.
#[allow(clippy::too_many_arguments)]
pub fn vq_loss(
    g: &mut Graph,
    x: Var,
    x_hat: Var,
    z: Var,
    e: Var,
    gamma: f64,
    frame_mask: Option<&[f64]>,
    code_mask: Option<&[f64]>,
) -> Result<VqLoss> {
    let reconstruction = g.mse(x_hat, x, frame_mask)?;
    let z_held = g.stop_gradient(z);
    let codebook = g.mse(z_held, e, code_mask)?;
    let e_held = g.stop_gradient(e);
    let raw_commit = g.mse(z, e_held, code_mask)?;
    let commitment = g.affine(raw_commit, gamma, 0.0);
    let partial = g.add(reconstruction, codebook)?;
    let total = g.add(partial, commitment)?;
    Ok(VqLoss {
        total,
        reconstruction,
        codebook,
        commitment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::Tensor;

    #[test]
    fn straight_through_value_and_gradient() {
        let mut g = Graph::new();
        let z = g.variable(Tensor::new(vec![2], vec![0.3, -1.0]));
        let e = g.variable(Tensor::new(vec![2], vec![1.0, 2.0]));
        let q = straight_through(&mut g, z, e).unwrap();
        assert_eq!(g.value(q).data(), &[1.0, 2.0]);
        let w = g.constant(Tensor::new(vec![2], vec![3.0, 5.0]));
        let y = g.mul(q, w).unwrap();
        let out = g.sum(y);
        let grads = g.backward(out).unwrap();
        assert_eq!(grads.get(z).unwrap().data(), &[3.0, 5.0]);
        assert!(grads
            .get(e)
            .is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_when_on_code_and_perfect() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let z = g.variable(Tensor::new(vec![1, 2], vec![0.5, 0.5]));
        let e = g.variable(Tensor::new(vec![1, 2], vec![0.5, 0.5]));
        let l = vq_loss(&mut g, x, x, z, e, 0.25, None, None).unwrap();
        for v in [l.total, l.reconstruction, l.codebook, l.commitment] {
            assert_eq!(g.value(v).item(), 0.0);
        }
    }

    #[test]
    fn codebook_and_commitment_differ_by_gamma() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2], vec![1.0, 2.0]));
        let xh = g.constant(Tensor::new(vec![2], vec![1.5, 2.0]));
        let z = g.variable(Tensor::new(vec![2, 2], vec![0.1, -0.4, 2.0, 0.7]));
        let e = g.variable(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]));
        let l = vq_loss(&mut g, x, xh, z, e, 0.25, None, None).unwrap();
        let (cb, cm) = (g.value(l.codebook).item(), g.value(l.commitment).item());
        assert!((cm - 0.25 * cb).abs() < 1e-15);
        // (0.01 + 0.16 + 1 + 0.09) / 4
        assert!((cb - 0.315).abs() < 1e-15);
        assert_eq!(g.value(l.reconstruction).item(), 0.125);
    }
}
