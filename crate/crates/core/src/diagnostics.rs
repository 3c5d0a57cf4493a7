//! Finite-difference gradient checks over every layer kind, the primitive
//! ops the models are built from, and the two composed training
//! objectives. Used by the `gradcheck` command and the acceptance tests.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::Standardizer;
use crate::grad::{
    compare_gradients, grad_check, GradCheckOptions, GradCheckReport, GradError, Graph, LayerSpec,
    Mode, Padding, ParamId, ParamStore, Sequential, Tensor, Var,
};
use crate::inverter::{
    generator_objective, Discriminator, GanKind, Inverter, InverterConfig, TargetScale,
};
use crate::vq::{straight_through, vq_loss, SpeakerTable, VqVae, VqVaeConfig};
use crate::{Result, StftConfig};

/// Relative-error tolerance every check is held to.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone)]
pub struct GradientSuite {
    pub checks: Vec<GradientCheck>,
}

impl GradientSuite {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.report.passed())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks
            .iter()
            .fold(0.0, |m, c| m.max(c.report.max_rel_error()))
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.report.passed())
            .map(|c| c.name.as_str())
            .collect()
    }
}

impl fmt::Display for GradientSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<28} max_rel_err={:.3e}  {}",
                c.name,
                c.report.max_rel_error(),
                if c.report.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Runs every check with inputs and weights drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Result<GradientSuite> {
    let mut checks = layer_checks(seed)?;
    checks.extend(op_checks(seed)?);
    checks.push(GradientCheck {
        name: "vq_objective".into(),
        report: vq_objective_check(seed)?,
    });
    for (gan, target) in [
        (GanKind::Lsgan, TargetScale::Log),
        (GanKind::Wgan, TargetScale::Linear),
    ] {
        checks.push(GradientCheck {
            name: format!("inverter_objective_{}", gan.name()),
            report: inverter_objective_check(seed, gan, target)?,
        });
    }
    Ok(GradientSuite { checks })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Sum of the output weighted by fixed random values, so every output
/// element receives a distinct upstream gradient.
fn project(g: &mut Graph, y: Var, weights: &Tensor) -> crate::grad::Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn options() -> GradCheckOptions {
    GradCheckOptions::with_tolerance(GRADIENT_TOLERANCE)
}

fn layer_cases() -> Vec<(&'static str, Vec<usize>, LayerSpec, Mode)> {
    let conv1d = |kernel, stride, padding| LayerSpec::Conv1d {
        in_ch: 3,
        out_ch: 4,
        kernel,
        stride,
        padding,
    };
    let seq = vec![2, 3, 7];
    vec![
        (
            "conv1d_same",
            seq.clone(),
            conv1d(3, 1, Padding::Same),
            Mode::Train,
        ),
        (
            "conv1d_strided",
            seq.clone(),
            conv1d(4, 2, Padding::Same),
            Mode::Train,
        ),
        (
            "conv1d_valid",
            seq.clone(),
            conv1d(4, 2, Padding::Valid),
            Mode::Train,
        ),
        (
            "conv_transpose1d",
            seq.clone(),
            LayerSpec::ConvTranspose1d {
                in_ch: 3,
                out_ch: 2,
                kernel: 4,
                stride: 2,
                padding: 1,
            },
            Mode::Train,
        ),
        (
            "conv2d",
            vec![2, 2, 5, 4],
            LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 3,
                kernel: (3, 3),
                stride: (1, 1),
            },
            Mode::Train,
        ),
        (
            "conv2d_strided",
            vec![1, 2, 6, 5],
            LayerSpec::Conv2d {
                in_ch: 2,
                out_ch: 2,
                kernel: (3, 3),
                stride: (2, 2),
            },
            Mode::Train,
        ),
        (
            "linear",
            vec![4, 3],
            LayerSpec::Linear {
                in_features: 3,
                out_features: 2,
            },
            Mode::Train,
        ),
        (
            "batchnorm_train",
            vec![3, 3, 4],
            LayerSpec::BatchNorm { channels: 3 },
            Mode::Train,
        ),
        (
            "batchnorm_eval",
            vec![3, 3, 4],
            LayerSpec::BatchNorm { channels: 3 },
            Mode::Eval,
        ),
        ("leaky_relu", seq.clone(), LayerSpec::leaky(), Mode::Train),
        ("softplus", seq.clone(), LayerSpec::Softplus, Mode::Train),
        (
            "scalar_affine",
            seq.clone(),
            LayerSpec::ScalarAffine {
                scale: -1.5,
                shift: 0.3,
            },
            Mode::Train,
        ),
        ("mean_last", seq, LayerSpec::MeanLast, Mode::Train),
        (
            "merge_channels",
            vec![2, 2, 3, 4],
            LayerSpec::MergeChannels,
            Mode::Train,
        ),
    ]
}

/// One layer at a time through [`Sequential`], checking the gradient with
/// respect to both the input and the layer's own parameters.
fn layer_checks(seed: u64) -> Result<Vec<GradientCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, shape, spec, mode) in layer_cases() {
        let mut store = ParamStore::new();
        let net = Sequential::new("layer", vec![spec], &mut store, &mut rng)?;
        let input = store.add("input", random(&mut rng, &shape), true)?;
        let out_shape = {
            let mut g = Graph::new();
            let x = g.param(&store, input);
            let y = net.forward(&mut g, &mut store.clone(), x, mode)?;
            g.shape(y).to_vec()
        };
        let weights = random(&mut rng, &out_shape);
        let report = grad_check(
            &mut store,
            |g, s| {
                let x = g.param(s, input);
                let y = net.forward(g, s, x, mode)?;
                project(g, y, &weights)
            },
            options(),
        )?;
        out.push(GradientCheck {
            name: name.into(),
            report,
        });
    }
    Ok(out)
}

type OpFn = fn(&mut Graph, &[Var]) -> crate::grad::Result<Var>;

fn op_checks(seed: u64) -> Result<Vec<GradientCheck>> {
    let cases: Vec<(&str, Vec<Vec<usize>>, OpFn)> = vec![
        ("op_mul", vec![vec![2, 3, 5], vec![2, 3, 5]], |g, v| {
            g.mul(v[0], v[1])
        }),
        ("op_exp", vec![vec![2, 3, 5]], |g, v| Ok(g.exp(v[0]))),
        ("op_square", vec![vec![2, 3, 5]], |g, v| Ok(g.square(v[0]))),
        ("op_mse", vec![vec![2, 3, 5], vec![2, 3, 5]], |g, v| {
            g.mse(v[0], v[1], None)
        }),
        ("op_row_sq_dist", vec![vec![4, 3], vec![4, 3]], |g, v| {
            g.row_sq_dist(v[0], v[1])
        }),
        ("op_gather", vec![vec![5, 3]], |g, v| {
            g.gather(v[0], &[4, 0, 4, 2])
        }),
        ("op_concat", vec![vec![2, 3, 5], vec![2, 2, 5]], |g, v| {
            g.concat(&[v[0], v[1]], 1)
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f70);
    let mut out = Vec::new();
    for (name, shapes, op) in cases {
        let mut store = ParamStore::new();
        let ids = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.add(format!("in{i}"), random(&mut rng, s), true))
            .collect::<crate::grad::Result<Vec<ParamId>>>()?;
        let out_shape = {
            let mut g = Graph::new();
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(&store, id)).collect();
            let y = op(&mut g, &vars)?;
            g.shape(y).to_vec()
        };
        let weights = random(&mut rng, &out_shape);
        let report = grad_check(
            &mut store,
            |g, s| {
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
                let y = op(g, &vars)?;
                project(g, y, &weights)
            },
            options(),
        )?;
        out.push(GradientCheck {
            name: name.into(),
            report,
        });
    }
    Ok(out)
}

/// The VQ-VAE objective through a small model. The analytic side is the
/// real straight-through graph. The numeric side is a smooth surrogate
/// with the same value and the intended gradients: with codes frozen at
/// the base point, `q = z(θ) + c` for the constant `c = e₀ − z₀`, the
/// codebook term is `‖z₀ − e(E)‖²` and the commitment term is
/// `γ‖z(θ) − e₀‖²`.
fn vq_objective_check(seed: u64) -> Result<GradCheckReport> {
    let config = VqVaeConfig {
        feature_dim: 5,
        codebook_size: 4,
        time_reduction: 4,
        code_dim: 3,
        speaker_dim: 2,
        stem_channels: 2,
        widths: [4, 4, 4],
        ..VqVaeConfig::default()
    };
    let (batch, frames, dim) = (2, 8, config.feature_dim);
    let standardizer = Standardizer {
        mean: vec![0.0; dim],
        std: vec![1.0; dim],
    };
    let speakers_table = SpeakerTable::new(vec!["a".into(), "b".into()]);
    let mut model = VqVae::new(config, speakers_table, standardizer, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7671);
    let input = random(&mut rng, &[batch, 1, dim, frames]);
    let flat = [batch, dim, frames];
    let speakers = [0, 1];
    let gamma = model.config.gamma;

    let mut g0 = Graph::new();
    let x0 = g0.constant(input.clone());
    let base = model.forward(&mut g0, x0, &speakers, Mode::Train)?;
    let codes = base.codes.clone();
    let per = base.codes_per_item;
    let z0 = g0.value(base.z).clone();
    let e0 = g0.value(base.e).clone();
    let mut c0 = Tensor::zeros(z0.shape());
    for ((c, e), z) in c0.data_mut().iter_mut().zip(e0.data()).zip(z0.data()) {
        *c = e - z;
    }

    let codebook_id = model.codebook_id();
    let mut analytic = model.clone();
    let mut numeric = model.clone();
    let report = compare_gradients(
        &mut model.store,
        |g, store| {
            analytic.store = store.clone();
            let mut build = || -> crate::vq::Result<Var> {
                let x = g.constant(input.clone());
                let (z, _) = analytic.encode_graph(g, x, Mode::Train)?;
                let table = g.param(&analytic.store, codebook_id);
                let e = g.gather(table, &codes)?;
                let q = straight_through(g, z, e)?;
                let x_hat = analytic.decode_graph(g, q, &speakers, per, Mode::Train)?;
                let target = g.constant(input.clone().reshaped(&flat));
                Ok(vq_loss(g, target, x_hat, z, e, gamma, None, None)?.total)
            };
            build().map_err(|e| GradError::State(e.to_string()))
        },
        |store| {
            numeric.store = store.clone();
            let mut eval = || -> crate::vq::Result<f64> {
                let mut g = Graph::new();
                let x = g.constant(input.clone());
                let (z, _) = numeric.encode_graph(&mut g, x, Mode::Train)?;
                let c = g.constant(c0.clone());
                let q = g.add(z, c)?;
                let x_hat = numeric.decode_graph(&mut g, q, &speakers, per, Mode::Train)?;
                let target = g.constant(input.clone().reshaped(&flat));
                let recon = g.mse(x_hat, target, None)?;
                let table = g.param(&numeric.store, codebook_id);
                let e = g.gather(table, &codes)?;
                let z_base = g.constant(z0.clone());
                let codebook = g.mse(z_base, e, None)?;
                let e_base = g.constant(e0.clone());
                let commit = g.mse(z, e_base, None)?;
                Ok(g.value(recon).item()
                    + g.value(codebook).item()
                    + gamma * g.value(commit).item())
            };
            eval().map_err(|e| GradError::State(e.to_string()))
        },
        options(),
    )?;
    Ok(report)
}

/// `α·MSE + β·G` through a small inverter and critic, with respect to both
/// networks' parameters.
fn inverter_objective_check(
    seed: u64,
    gan: GanKind,
    target: TargetScale,
) -> Result<GradCheckReport> {
    let config = InverterConfig {
        code_dim: 3,
        time_reduction: 2,
        kernels: vec![1, 3],
        scale_channels: 2,
        multiscale_layers: 2,
        hidden: 4,
        disc_channels: [3, 3, 2],
        stft: StftConfig {
            fft_size: 16,
            window_length: 16,
            hop_length: 4,
            ..StftConfig::speech(1000)
        },
        sample_rate: 1000,
        alpha: 0.7,
        beta: 1.3,
        gan,
        target,
        ..InverterConfig::default()
    };
    let mut inverter = Inverter::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x696e);
    let disc = Discriminator::new(&config, &mut inverter.store, &mut rng)?;
    let frames = 16;
    let x = random(&mut rng, &[2, config.code_dim, frames]);
    let y = random(&mut rng, &[2, config.out_dim(), frames]);
    let mut store = inverter.store.clone();
    let report = grad_check(
        &mut store,
        |g, store| {
            let mut build = || -> crate::inverter::Result<Var> {
                let input = g.constant(x.clone());
                let real = g.constant(y.clone());
                let fake = inverter.forward_graph(g, store, input, Mode::Train)?;
                let [total, ..] = generator_objective(g, store, &config, &disc, real, fake)?;
                Ok(total)
            };
            build().map_err(|e| GradError::State(e.to_string()))
        },
        options(),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let suite = gradient_suite(7).unwrap();
        assert!(suite.passed(), "{suite}");
        let names: Vec<&str> = suite.checks.iter().map(|c| c.name.as_str()).collect();
        for kind in [
            "conv1d_same",
            "batchnorm_eval",
            "merge_channels",
            "vq_objective",
        ] {
            assert!(names.contains(&kind), "{names:?}");
        }
        assert_eq!(suite.checks.len(), layer_cases().len() + 7 + 3);
    }

    #[test]
    fn every_layer_kind_except_stop_gradient_is_covered() {
        let mut kinds: Vec<&str> = layer_cases().iter().map(|c| c.2.kind()).collect();
        kinds.sort();
        kinds.dedup();
        assert_eq!(kinds.len(), 10);
        assert!(!kinds.contains(&"stop_gradient"));
    }
}
