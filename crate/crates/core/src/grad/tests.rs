use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

/// Reduces any output to a scalar through fixed random weights so that
/// every output element gets a distinct upstream gradient.
fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(random(&shape, 999));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check_op(
    inputs: &[(&str, Tensor)],
    op: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> GradCheckReport {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .map(|(n, t)| store.add(*n, t.clone(), true).unwrap())
        .collect();
    grad_check(
        &mut store,
        |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            let y = op(g, &vars)?;
            project(g, y)
        },
        GradCheckOptions::default(),
    )
    .unwrap()
}

fn assert_passes(report: &GradCheckReport) {
    assert!(report.passed(), "{report}");
}

#[test]
fn leaky_relu_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2], vec![-1.0, 2.0]));
    let y = g.leaky_relu(x, LEAKY_SLOPE);
    assert_eq!(g.value(y).data(), &[-0.01, 2.0]);
}

#[test]
fn centre_tap_conv_is_identity() {
    let mut g = Graph::new();
    let data = random(&[1, 1, 7], 1);
    let x = g.constant(data.clone());
    let w = g.constant(Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0]));
    let y = g.conv1d(x, w, None, 1, Padding::Same).unwrap();
    assert_eq!(g.value(y), &data);
}

#[test]
fn first_tap_conv_is_a_one_sample_delay() {
    // cross-correlation with one zero of left padding: y[t] = x[t - 1]
    let mut g = Graph::new();
    let data = random(&[1, 1, 7], 2);
    let x = g.constant(data.clone());
    let w = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, 0.0]));
    let y = g.conv1d(x, w, None, 1, Padding::Same).unwrap();
    let out = g.value(y).data();
    assert_eq!(out[0], 0.0);
    assert_eq!(&out[1..], &data.data()[..6]);
}

#[test]
fn conv1d_matches_direct_loops() {
    let (b, cin, cout, k, len, stride) = (2, 3, 4, 5, 11, 2);
    let xt = random(&[b, cin, len], 3);
    let wt = random(&[cout, cin, k], 4);
    let bt = random(&[cout], 5);
    let mut g = Graph::new();
    let (x, w, bias) = (
        g.constant(xt.clone()),
        g.constant(wt.clone()),
        g.constant(bt.clone()),
    );
    let y = g.conv1d(x, w, Some(bias), stride, Padding::Same).unwrap();
    let out_len = len.div_ceil(stride);
    let pad_total = (out_len - 1) * stride + k - len;
    let pad_left = pad_total / 2;
    assert_eq!(g.shape(y), &[b, cout, out_len]);
    let (xd, wd, bd) = (xt.data(), wt.data(), bt.data());
    for bi in 0..b {
        for o in 0..cout {
            for t in 0..out_len {
                let mut acc = bd[o];
                for i in 0..cin {
                    for kk in 0..k {
                        let pos = (t * stride + kk) as isize - pad_left as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += wd[(o * cin + i) * k + kk]
                                * xd[(bi * cin + i) * len + pos as usize];
                        }
                    }
                }
                let got = g.value(y).data()[(bi * cout + o) * out_len + t];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn same_padding_puts_the_extra_zero_at_the_end() {
    assert_eq!(Padding::Same.resolve(10, 4, 1), Some((1, 10)));
    assert_eq!(Padding::Same.resolve(10, 3, 1), Some((1, 10)));
    assert_eq!(Padding::Same.resolve(10, 3, 2), Some((0, 5)));
    assert_eq!(Padding::Valid.resolve(2, 3, 1), None);
}

#[test]
fn two_layer_linear_matches_scalar_loops() {
    let x = [0.5, -1.0, 2.0];
    let w1 = random(&[4, 3], 10);
    let b1 = random(&[4], 11);
    let w2 = random(&[2, 4], 12);
    let b2 = random(&[2], 13);
    let mut g = Graph::new();
    let xv = g.constant(Tensor::new(vec![1, 3], x.to_vec()));
    let (w1v, b1v, w2v, b2v) = (
        g.constant(w1.clone()),
        g.constant(b1.clone()),
        g.constant(w2.clone()),
        g.constant(b2.clone()),
    );
    let h = g.linear(xv, w1v, Some(b1v)).unwrap();
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let y = g.linear(h, w2v, Some(b2v)).unwrap();

    let mut hidden = [0.0; 4];
    for (o, hv) in hidden.iter_mut().enumerate() {
        let mut acc = b1.data()[o];
        for (i, xi) in x.iter().enumerate() {
            acc += w1.data()[o * 3 + i] * xi;
        }
        *hv = if acc > 0.0 { acc } else { 0.01 * acc };
    }
    for o in 0..2 {
        let mut acc = b2.data()[o];
        for (i, hv) in hidden.iter().enumerate() {
            acc += w2.data()[o * 4 + i] * hv;
        }
        assert!((g.value(y).data()[o] - acc).abs() < 1e-12);
    }
}

#[test]
fn square_gradient_at_three() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(3.0));
    let y = g.square(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
}

#[test]
fn stop_gradient_blocks_flow() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]));
    let s = g.stop_gradient(x);
    assert_eq!(g.value(s), g.value(x));
    let sq = g.square(s);
    let y = g.sum(sq);
    let grads = g.backward(y).unwrap();
    assert!(grads.get(x).is_none());

    // mixed path: only the unstopped branch contributes
    let mut g = Graph::new();
    let x = g.variable(Tensor::new(vec![2], vec![1.5, -0.5]));
    let s = g.stop_gradient(x);
    let prod = g.mul(x, s).unwrap();
    let y = g.sum(prod);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.5, -0.5]);
}

#[test]
fn backward_needs_scalar_and_a_known_node() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::new(vec![2], vec![1.0, 2.0]));
    let y = g.square(x);
    assert!(matches!(g.backward(y), Err(GradError::State(_))));

    let mut other = Graph::new();
    for _ in 0..5 {
        other.variable(Tensor::scalar(0.0));
    }
    let foreign = other.variable(Tensor::scalar(1.0));
    assert!(matches!(g.backward(foreign), Err(GradError::State(_))));
}

#[test]
fn shape_errors_name_the_layer() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Sequential::new(
        "net",
        vec![
            LayerSpec::conv(3, 4, 3),
            LayerSpec::leaky(),
            LayerSpec::conv(5, 2, 3),
        ],
        &mut store,
        &mut rng,
    )
    .unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 8]));
    let err = net.forward(&mut g, &mut store, x, Mode::Eval).unwrap_err();
    assert!(err.to_string().contains("#2 conv1d"), "{err}");
}

#[test]
fn linear_gradients_pass_tight_check() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = Sequential::new(
        "lin",
        vec![LayerSpec::Linear {
            in_features: 4,
            out_features: 3,
        }],
        &mut store,
        &mut rng,
    )
    .unwrap();
    let input = random(&[5, 4], 8);
    let report = grad_check(
        &mut store,
        |g, s| {
            let x = g.constant(input.clone());
            let y = net.forward(g, s, x, Mode::Train)?;
            project(g, y)
        },
        GradCheckOptions::with_tolerance(1e-6),
    )
    .unwrap();
    assert_passes(&report);
}

#[test]
fn conv_batchnorm_leaky_stack_matches_finite_differences() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let net = Sequential::new(
        "stack",
        vec![
            LayerSpec::conv(3, 4, 3),
            LayerSpec::BatchNorm { channels: 4 },
            LayerSpec::leaky(),
            LayerSpec::Conv1d {
                in_ch: 4,
                out_ch: 2,
                kernel: 4,
                stride: 2,
                padding: Padding::Same,
            },
        ],
        &mut store,
        &mut rng,
    )
    .unwrap();
    let input = random(&[2, 3, 9], 22);
    let report = grad_check(
        &mut store,
        |g, s| {
            let x = g.constant(input.clone());
            let y = net.forward(g, s, x, Mode::Train)?;
            project(g, y)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert_passes(&report);
}

#[test]
fn every_op_matches_finite_differences() {
    let a = random(&[2, 3, 5], 30);
    let b = random(&[2, 3, 5], 31);
    assert_passes(&check_op(&[("a", a.clone()), ("b", b.clone())], |g, v| {
        g.add(v[0], v[1])
    }));
    assert_passes(&check_op(&[("a", a.clone()), ("b", b.clone())], |g, v| {
        g.sub(v[0], v[1])
    }));
    assert_passes(&check_op(&[("a", a.clone()), ("b", b.clone())], |g, v| {
        g.mul(v[0], v[1])
    }));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| {
        Ok(g.affine(v[0], -1.5, 0.3))
    }));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| {
        Ok(g.leaky_relu(v[0], 0.01))
    }));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| Ok(g.softplus(v[0]))));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| Ok(g.exp(v[0]))));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| Ok(g.square(v[0]))));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| Ok(g.mean(v[0]))));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| g.mean_last(v[0])));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| {
        g.permute3(v[0], [2, 0, 1])
    }));
    assert_passes(&check_op(&[("a", a.clone())], |g, v| {
        g.reshape(v[0], &[6, 5])
    }));
    assert_passes(&check_op(&[("a", random(&[2, 3], 32))], |g, v| {
        Ok(g.repeat_last(v[0], 4))
    }));
    assert_passes(&check_op(&[("a", a.clone()), ("b", b.clone())], |g, v| {
        g.mse(v[0], v[1], None)
    }));
    let mask: Vec<f64> = (0..30)
        .map(|i| if i % 3 == 0 { 0.0 } else { 1.0 })
        .collect();
    assert_passes(&check_op(&[("a", a.clone()), ("b", b.clone())], |g, v| {
        g.mse(v[0], v[1], Some(&mask))
    }));
    assert_passes(&check_op(
        &[("a", random(&[4, 3], 33)), ("b", random(&[4, 3], 34))],
        |g, v| g.row_sq_dist(v[0], v[1]),
    ));
    assert_passes(&check_op(&[("t", random(&[5, 3], 35))], |g, v| {
        g.gather(v[0], &[4, 0, 4, 2])
    }));
    assert_passes(&check_op(
        &[("a", a.clone()), ("c", random(&[2, 2, 5], 36))],
        |g, v| g.concat(&[v[0], v[1]], 1),
    ));
    assert_passes(&check_op(
        &[("a", a.clone()), ("c", random(&[2, 3, 2], 37))],
        |g, v| g.concat(&[v[0], v[1]], 2),
    ));
}

#[test]
fn conv_kinds_match_finite_differences() {
    let x = random(&[2, 3, 7], 40);
    for (stride, padding) in [
        (1, Padding::Same),
        (2, Padding::Same),
        (2, Padding::Valid),
        (3, Padding::Explicit(2)),
    ] {
        let report = check_op(
            &[
                ("x", x.clone()),
                ("w", random(&[4, 3, 3], 41)),
                ("b", random(&[4], 42)),
            ],
            |g, v| g.conv1d(v[0], v[1], Some(v[2]), stride, padding),
        );
        assert_passes(&report);
    }
    assert_passes(&check_op(
        &[
            ("x", x.clone()),
            ("w", random(&[3, 2, 4], 43)),
            ("b", random(&[2], 44)),
        ],
        |g, v| g.conv_transpose1d(v[0], v[1], Some(v[2]), 2, 1),
    ));
    assert_passes(&check_op(
        &[
            ("x", random(&[2, 2, 5, 4], 45)),
            ("w", random(&[3, 2, 3, 3], 46)),
            ("b", random(&[3], 47)),
        ],
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), (1, 1)),
    ));
    assert_passes(&check_op(
        &[
            ("x", random(&[1, 2, 6, 5], 48)),
            ("w", random(&[2, 2, 2, 3], 49)),
            ("b", random(&[2], 50)),
        ],
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), (2, 2)),
    ));
}

#[test]
fn batchnorm_both_modes_match_finite_differences() {
    let x = random(&[3, 2, 4], 60);
    assert_passes(&check_op(
        &[
            ("x", x.clone()),
            ("gamma", random(&[2], 61)),
            ("beta", random(&[2], 62)),
        ],
        |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], BN_EPS)?.0),
    ));
    assert_passes(&check_op(
        &[
            ("x", x),
            ("gamma", random(&[2], 63)),
            ("beta", random(&[2], 64)),
        ],
        |g, v| g.batch_norm_eval(v[0], v[1], v[2], &[0.2, -0.1], &[1.5, 0.7], BN_EPS),
    ));
}

#[test]
fn transposed_conv_doubles_length() {
    let mut g = Graph::new();
    let x = g.constant(random(&[1, 2, 6], 70));
    let w = g.constant(random(&[2, 3, 4], 71));
    let y = g.conv_transpose1d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 3, 12]);
}

#[test]
fn transposed_conv_is_the_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_transpose(y)> with the same weights
    let x = random(&[2, 3, 12], 72);
    let y = random(&[2, 4, 6], 73);
    let w = random(&[4, 3, 4], 74);
    let mut g = Graph::new();
    let (xv, yv, wv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(w));
    let cx = g.conv1d(xv, wv, None, 2, Padding::Explicit(1)).unwrap();
    let ty = g.conv_transpose1d(yv, wv, None, 2, 1).unwrap();
    let lhs: f64 = g
        .value(cx)
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| a * b)
        .sum();
    let rhs: f64 = x
        .data()
        .iter()
        .zip(g.value(ty).data())
        .map(|(a, b)| a * b)
        .sum();
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn batchnorm_train_output_is_standardized() {
    let mut raw = random(&[8, 3, 10], 80);
    for v in raw.data_mut() {
        *v = 10.0 * *v + 4.0;
    }
    let mut g = Graph::new();
    let x = g.constant(raw);
    let gamma = g.constant(Tensor::full(&[3], 1.0));
    let beta = g.constant(Tensor::zeros(&[3]));
    let (y, _) = g.batch_norm_train(x, gamma, beta, BN_EPS).unwrap();
    let out = g.value(y).data();
    for c in 0..3 {
        let vals: Vec<f64> = (0..8)
            .flat_map(|b| out[(b * 3 + c) * 10..][..10].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5, "{var}");
    }
}

#[test]
fn batchnorm_eval_is_affine() {
    let (x1, x2) = (random(&[2, 3, 4], 90), random(&[2, 3, 4], 91));
    let run = |t: &Tensor| {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let gamma = g.constant(Tensor::new(vec![3], vec![0.5, 2.0, -1.0]));
        let beta = g.constant(Tensor::new(vec![3], vec![0.1, 0.0, 0.3]));
        let y = g
            .batch_norm_eval(x, gamma, beta, &[0.1, 0.2, 0.3], &[1.0, 2.0, 0.5], BN_EPS)
            .unwrap();
        g.value(y).clone()
    };
    let a = 0.3;
    let mix = Tensor::new(
        x1.shape().to_vec(),
        x1.data()
            .iter()
            .zip(x2.data())
            .map(|(p, q)| a * p + (1.0 - a) * q)
            .collect(),
    );
    let (y1, y2, ym) = (run(&x1), run(&x2), run(&mix));
    for i in 0..ym.numel() {
        assert!((ym.data()[i] - (a * y1.data()[i] + (1.0 - a) * y2.data()[i])).abs() < 1e-12);
    }
}

#[test]
fn running_statistics_follow_momentum() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Sequential::new(
        "bn",
        vec![LayerSpec::BatchNorm { channels: 1 }],
        &mut store,
        &mut rng,
    )
    .unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 6.0]));
    net.forward(&mut g, &mut store, x, Mode::Train).unwrap();
    let mean = store
        .tensor(store.find("bn.0.running_mean").unwrap())
        .data()[0];
    let var = store.tensor(store.find("bn.0.running_var").unwrap()).data()[0];
    // batch mean 3, unbiased variance 14/3
    assert!((mean - 0.3).abs() < 1e-12);
    assert!((var - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Sequential::new(
            "n",
            vec![
                LayerSpec::conv(2, 8, 5),
                LayerSpec::leaky(),
                LayerSpec::conv(8, 2, 3),
            ],
            &mut store,
            &mut rng,
        )
        .unwrap();
        let mut g = Graph::new();
        let x = g.constant(random(&[3, 2, 40], 6));
        let y = net.forward(&mut g, &mut store, x, Mode::Eval).unwrap();
        g.value(y).clone()
    };
    assert_eq!(build(), build());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv1d_gradients_on_random_shapes(
        batch in 1usize..3,
        cin in 1usize..4,
        cout in 1usize..4,
        kernel in 1usize..6,
        stride in 1usize..4,
        extra in 0usize..8,
        seed in 0u64..1000,
    ) {
        let len = kernel + extra;
        let report = check_op(
            &[
                ("x", random(&[batch, cin, len], seed)),
                ("w", random(&[cout, cin, kernel], seed + 1)),
                ("b", random(&[cout], seed + 2)),
            ],
            |g, v| g.conv1d(v[0], v[1], Some(v[2]), stride, Padding::Same),
        );
        prop_assert!(report.passed(), "{}", report);
    }

    #[test]
    fn linear_bn_leaky_gradients_on_random_shapes(
        n in 2usize..6,
        fin in 1usize..5,
        fout in 1usize..5,
        seed in 0u64..1000,
    ) {
        let report = check_op(
            &[
                ("x", random(&[n, fin], seed)),
                ("w", random(&[fout, fin], seed + 1)),
                ("gamma", random(&[fout], seed + 2)),
                ("beta", random(&[fout], seed + 3)),
            ],
            |g, v| {
                let h = g.linear(v[0], v[1], None)?;
                let (h, _) = g.batch_norm_train(h, v[2], v[3], BN_EPS)?;
                Ok(g.leaky_relu(h, LEAKY_SLOPE))
            },
        );
        prop_assert!(report.passed(), "{}", report);
    }
}
