//! Code-to-spectrogram inversion: duplicate code vectors to the frame rate,
//! predict a target-voice magnitude spectrogram with multi-scale 1D
//! convolutions, train against MSE plus an adversarial critic, and recover
//! a waveform with Griffin-Lim.

mod model;
mod synth;
mod train;

pub(crate) use train::generator_objective;

use thiserror::Error;

pub use model::{Discriminator, Inverter, InverterConfig, TargetScale, INVERTER_KIND};
pub use synth::{log_spectral_distance, spectrogram_matrix, Synthesis};
pub use train::{
    train_inverter, InverterStepMetrics, InverterTrainConfig, InverterTrainer, InverterTraining,
    InverterUtterance,
};

use crate::corpus::CorpusError;
use crate::dsp::DspError;
use crate::grad::{GradError, Graph, Var};
use crate::Matrix;

#[derive(Debug, Error)]
pub enum InverterError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure at step {step}: {detail}")]
    Numerical { step: usize, detail: String },
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, InverterError>;

/// Adversarial objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GanKind {
    #[default]
    Lsgan,
    Wgan,
}

impl GanKind {
    pub fn name(&self) -> &'static str {
        match self {
            GanKind::Lsgan => "lsgan",
            GanKind::Wgan => "wgan",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "lsgan" => Ok(GanKind::Lsgan),
            "wgan" => Ok(GanKind::Wgan),
            other => Err(InverterError::Config(format!(
                "unknown GAN kind {other:?} (expected lsgan or wgan)"
            ))),
        }
    }
}

/// Repeats every row `r` times: `T_z × D -> r·T_z × D`.
pub fn upsample_codes(codes: &Matrix, r: usize) -> Result<Matrix> {
    if r == 0 {
        return Err(InverterError::Config(
            "upsampling factor must be at least 1".into(),
        ));
    }
    let mut out = Matrix::zeros(codes.rows() * r, codes.cols());
    for (t, row) in codes.iter_rows().enumerate() {
        for k in 0..r {
            out.row_mut(t * r + k).copy_from_slice(row);
        }
    }
    Ok(out)
}

/// Generator and critic losses from critic scores on real and generated
/// batches, each averaged over the batch.
///
/// LSGAN: `G = (D(M̂) − 1)²`, `D = D(M̂)² + (D(M) − 1)²`.
/// WGAN: `G = −D(M̂)`, `D = D(M̂) − D(M)`.
pub fn gan_losses(g: &mut Graph, real: Var, fake: Var, kind: GanKind) -> Result<(Var, Var)> {
    if g.shape(real) != g.shape(fake) {
        return Err(InverterError::Input(format!(
            "critic scores differ in shape: {:?} vs {:?}",
            g.shape(real),
            g.shape(fake)
        )));
    }
    Ok(match kind {
        GanKind::Lsgan => {
            let fake_off = g.affine(fake, 1.0, -1.0);
            let fake_sq = g.square(fake_off);
            let gen = g.mean(fake_sq);
            let fake_zero = g.square(fake);
            let real_off = g.affine(real, 1.0, -1.0);
            let real_sq = g.square(real_off);
            let a = g.mean(fake_zero);
            let b = g.mean(real_sq);
            (gen, g.add(a, b)?)
        }
        GanKind::Wgan => {
            let fake_mean = g.mean(fake);
            let real_mean = g.mean(real);
            let gen = g.affine(fake_mean, -1.0, 0.0);
            (gen, g.sub(fake_mean, real_mean)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::grad::Tensor;

    fn losses(real: &[f64], fake: &[f64], kind: GanKind) -> (f64, f64) {
        let mut g = Graph::new();
        let r = g.constant(Tensor::new(vec![real.len(), 1], real.to_vec()));
        let f = g.constant(Tensor::new(vec![fake.len(), 1], fake.to_vec()));
        let (gl, dl) = gan_losses(&mut g, r, f, kind).unwrap();
        (g.value(gl).item(), g.value(dl).item())
    }

    #[test]
    fn upsampling_duplicates_rows() {
        let c = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(
            upsample_codes(&c, 2).unwrap(),
            Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [3.0, 4.0], [3.0, 4.0]])
        );
        assert_eq!(upsample_codes(&c, 1).unwrap(), c);
        assert_eq!(upsample_codes(&c, 4).unwrap().rows(), 8);
        assert!(upsample_codes(&c, 0).is_err());
    }

    #[test]
    fn lsgan_values() {
        assert_eq!(losses(&[1.0], &[1.0], GanKind::Lsgan), (0.0, 1.0));
        assert_eq!(losses(&[1.0, 1.0], &[0.0, 0.0], GanKind::Lsgan).1, 0.0);
    }

    #[test]
    fn wgan_values() {
        assert_eq!(losses(&[0.3, -2.0], &[0.3, -2.0], GanKind::Wgan).1, 0.0);
        assert_eq!(losses(&[0.0], &[2.0], GanKind::Wgan), (-2.0, 2.0));
    }

    #[test]
    fn gan_kind_names() {
        assert_eq!(GanKind::from_name("wgan").unwrap(), GanKind::Wgan);
        assert!(matches!(
            GanKind::from_name("vanilla"),
            Err(InverterError::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn upsampled_frame_equals_source(rows in 1usize..6, r in 1usize..5, seed in 0u64..100) {
            let data: Vec<f64> = (0..rows * 3).map(|i| ((i as u64 * 31 + seed) % 17) as f64).collect();
            let c = Matrix::from_vec(rows, 3, data);
            let up = upsample_codes(&c, r).unwrap();
            prop_assert_eq!(up.rows(), r * rows);
            for t in 0..up.rows() {
                prop_assert_eq!(up.row(t), c.row(t / r));
            }
        }

        #[test]
        fn lsgan_nonnegative_wgan_antisymmetric(
            real in proptest::collection::vec(-3.0f64..3.0, 4),
            fake in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let (gl, dl) = losses(&real, &fake, GanKind::Lsgan);
            prop_assert!(gl >= 0.0 && dl >= 0.0);
            let (_, d1) = losses(&real, &fake, GanKind::Wgan);
            let (_, d2) = losses(&fake, &real, GanKind::Wgan);
            prop_assert!((d1 + d2).abs() < 1e-12);
        }
    }
}
