use std::f64::consts::PI;

use rayon::prelude::*;

use super::kmeans::{kmeans_fit, KMeansConfig};
use super::{check_data, ClusterError, Result, Standardizer};
use crate::Matrix;

/// Components whose mixing weight falls below this are reseeded.
const MIN_WEIGHT: f64 = 1e-8;
/// Variance floor as a fraction of the global per-dimension variance.
const VAR_FLOOR_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub k: usize,
    /// EM iterations.
    pub iters: usize,
    pub seed: u64,
    pub standardize: bool,
    /// Settings of the K-Means run that initializes the means.
    pub init: KMeansConfig,
}

impl GmmConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        let mut init = KMeansConfig::new(k, seed);
        init.standardize = false;
        Self {
            k,
            iters: 25,
            seed,
            standardize: true,
            init,
        }
    }
}

/// Mixture of Gaussians with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Matrix,
    pub variances: Matrix,
    pub standardizer: Option<Standardizer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-frame log-likelihood before each M-step, then after the last.
    pub log_likelihood: Vec<f64>,
    /// Iterations at which a starved component was reseeded; the
    /// likelihood may drop at those steps.
    pub reseed_iterations: Vec<usize>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    fn log_norms(&self) -> Vec<f64> {
        (0..self.k())
            .map(|c| {
                let logdet: f64 = self
                    .variances
                    .row(c)
                    .iter()
                    .map(|v| (2.0 * PI * v).ln())
                    .sum();
                self.weights[c].ln() - 0.5 * logdet
            })
            .collect()
    }

    /// `log p(x, z = c)` for every frame and component (standardized input).
    fn joint_log(&self, data: &Matrix) -> Matrix {
        let norms = self.log_norms();
        let k = self.k();
        let rows: Vec<f64> = (0..data.rows())
            .into_par_iter()
            .flat_map_iter(|t| {
                let x = data.row(t);
                (0..k)
                    .map(|c| {
                        let mahal: f64 = x
                            .iter()
                            .zip(self.means.row(c))
                            .zip(self.variances.row(c))
                            .map(|((x, m), v)| (x - m) * (x - m) / v)
                            .sum();
                        norms[c] - 0.5 * mahal
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        Matrix::from_vec(data.rows(), k, rows)
    }

    fn prepare(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.dim() {
            return Err(ClusterError::Input(format!(
                "features have {} dimensions, model expects {}",
                features.cols(),
                self.dim()
            )));
        }
        Ok(match &self.standardizer {
            Some(s) => s.apply(features),
            None => features.clone(),
        })
    }

    /// Log posteriors `log p(z | x)`, normalized with log-sum-exp.
    pub fn log_posteriors(&self, features: &Matrix) -> Result<Matrix> {
        let data = self.prepare(features)?;
        let mut joint = self.joint_log(&data);
        for t in 0..joint.rows() {
            let row = joint.row_mut(t);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(joint)
    }

    /// Posteriogram: `T × K`, rows are probability vectors.
    pub fn posteriors(&self, features: &Matrix) -> Result<Matrix> {
        let mut lp = self.log_posteriors(features)?;
        lp.as_mut_slice().iter_mut().for_each(|v| *v = v.exp());
        Ok(lp)
    }

    /// Mean per-frame log-likelihood.
    pub fn mean_log_likelihood(&self, features: &Matrix) -> Result<f64> {
        let data = self.prepare(features)?;
        let joint = self.joint_log(&data);
        Ok(joint.iter_rows().map(log_sum_exp).sum::<f64>() / data.rows() as f64)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn global_variance(data: &Matrix) -> Vec<f64> {
    let n = data.rows() as f64;
    (0..data.cols())
        .map(|j| {
            let col = data.column(j);
            let mean = col.iter().sum::<f64>() / n;
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        })
        .collect()
}

/// Expectation-maximization from a K-Means initialization.
pub fn gmm_fit(data: &Matrix, config: &GmmConfig) -> Result<GmmFit> {
    check_data(data, "gmm")?;
    let k = config.k;
    if k == 0 || config.iters == 0 {
        return Err(ClusterError::Config(
            "k and iteration count must be positive".into(),
        ));
    }
    if data.rows() < k {
        return Err(ClusterError::Input(format!(
            "{} frames are fewer than k = {k}",
            data.rows()
        )));
    }
    let standardizer = config.standardize.then(|| Standardizer::fit(data));
    let data = match &standardizer {
        Some(s) => s.apply(data),
        None => data.clone(),
    };
    let (n, d) = (data.rows(), data.cols());
    let global_var = global_variance(&data);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (VAR_FLOOR_RATIO * v).max(f64::MIN_POSITIVE))
        .collect();

    let mut init_cfg = config.init.clone();
    init_cfg.k = k;
    init_cfg.standardize = false;
    let km = kmeans_fit(&data, &init_cfg)?.model;
    let (codes, _) = km.encode(&data, 1)?;
    let mut resp = Matrix::zeros(n, k);
    for (t, &c) in codes.indices.iter().enumerate() {
        resp.row_mut(t)[c] = 1.0;
    }
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: km.centroids,
        variances: Matrix::zeros(k, d),
        standardizer: None,
    };
    m_step(&data, &resp, &floor, &mut model);

    let mut trajectory = Vec::with_capacity(config.iters + 1);
    let mut reseed_iterations = Vec::new();
    for it in 0..config.iters {
        let joint = model.joint_log(&data);
        let mut ll = 0.0;
        for t in 0..n {
            let row = joint.row(t);
            let lse = log_sum_exp(row);
            ll += lse;
            for (r, j) in resp.row_mut(t).iter_mut().zip(row) {
                *r = (j - lse).exp();
            }
        }
        trajectory.push(ll / n as f64);
        m_step(&data, &resp, &floor, &mut model);
        if reseed(&data, &joint, &global_var, &mut model) {
            reseed_iterations.push(it);
        }
    }
    let joint = model.joint_log(&data);
    trajectory.push(joint.iter_rows().map(log_sum_exp).sum::<f64>() / n as f64);
    model.standardizer = standardizer;
    Ok(GmmFit {
        model,
        log_likelihood: trajectory,
        reseed_iterations,
    })
}

fn m_step(data: &Matrix, resp: &Matrix, floor: &[f64], model: &mut GmmModel) {
    let (n, d, k) = (data.rows(), data.cols(), resp.cols());
    for c in 0..k {
        let nk: f64 = (0..n).map(|t| resp.row(t)[c]).sum();
        model.weights[c] = nk / n as f64;
        if nk <= 0.0 {
            model.variances.row_mut(c).copy_from_slice(floor);
            continue;
        }
        let mut mean = vec![0.0; d];
        for t in 0..n {
            let r = resp.row(t)[c];
            for (m, x) in mean.iter_mut().zip(data.row(t)) {
                *m += r * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; d];
        for t in 0..n {
            let r = resp.row(t)[c];
            for ((v, x), m) in var.iter_mut().zip(data.row(t)).zip(&mean) {
                *v += r * (x - m) * (x - m);
            }
        }
        for ((v, f), out) in var.iter().zip(floor).zip(model.variances.row_mut(c)) {
            *out = (v / nk).max(*f);
        }
        model.means.row_mut(c).copy_from_slice(&mean);
    }
}

/// Moves starved components onto the worst-explained frame.
fn reseed(data: &Matrix, joint: &Matrix, global_var: &[f64], model: &mut GmmModel) -> bool {
    let starved: Vec<usize> = (0..model.k())
        .filter(|&c| model.weights[c] < MIN_WEIGHT)
        .collect();
    if starved.is_empty() {
        return false;
    }
    let mut order: Vec<(usize, f64)> = joint.iter_rows().map(log_sum_exp).enumerate().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for (slot, &c) in starved.iter().enumerate() {
        let t = order[slot % order.len()].0;
        log::warn!(
            "gmm: component {c} weight {:.3e} below {MIN_WEIGHT:e}; reseeding at frame {t}",
            model.weights[c]
        );
        model.means.row_mut(c).copy_from_slice(data.row(t));
        for (v, g) in model.variances.row_mut(c).iter_mut().zip(global_var) {
            *v = g.max(f64::MIN_POSITIVE);
        }
        model.weights[c] = 1.0 / data.rows() as f64;
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    true
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn two_component_sample(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = [
            Normal::new(-4.0, 1.0).unwrap(),
            Normal::new(2.0, 0.5).unwrap(),
        ];
        let b = [
            Normal::new(3.0, 0.7).unwrap(),
            Normal::new(-1.0, 1.5).unwrap(),
        ];
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let comp = if rng.random_bool(0.4) { &a } else { &b };
                [comp[0].sample(&mut rng), comp[1].sample(&mut rng)]
            })
            .collect();
        Matrix::from_rows(&rows)
    }

    #[test]
    fn weights_sum_to_one_and_variances_floored() {
        let data = two_component_sample(400, 1);
        let fit = gmm_fit(&data, &GmmConfig::new(4, 2)).unwrap();
        assert!((fit.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(fit.model.variances.as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn log_likelihood_is_non_decreasing() {
        let data = two_component_sample(500, 3);
        let mut cfg = GmmConfig::new(5, 4);
        cfg.iters = 25;
        let fit = gmm_fit(&data, &cfg).unwrap();
        assert!(fit.reseed_iterations.is_empty());
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{:?}", fit.log_likelihood);
        }
    }

    #[test]
    fn recovers_known_means() {
        let n = 4000;
        let data = two_component_sample(n, 5);
        let mut cfg = GmmConfig::new(2, 6);
        cfg.standardize = false;
        let fit = gmm_fit(&data, &cfg).unwrap();
        let m = &fit.model.means;
        let (ia, ib) = if m.row(0)[0] < m.row(1)[0] {
            (0, 1)
        } else {
            (1, 0)
        };
        // standard error of a component mean: sd / sqrt(n · weight)
        let se = |sd: f64, w: f64| sd / (n as f64 * w).sqrt();
        assert!((m.row(ia)[0] + 4.0).abs() < 3.0 * se(1.0, 0.4));
        assert!((m.row(ia)[1] - 2.0).abs() < 3.0 * se(0.5, 0.4));
        assert!((m.row(ib)[0] - 3.0).abs() < 3.0 * se(0.7, 0.6));
        assert!((m.row(ib)[1] + 1.0).abs() < 3.0 * se(1.5, 0.6));
    }

    #[test]
    fn single_component_is_sample_moments() {
        let data = two_component_sample(300, 7);
        let mut cfg = GmmConfig::new(1, 0);
        cfg.standardize = false;
        let fit = gmm_fit(&data, &cfg).unwrap();
        for j in 0..2 {
            let col = data.column(j);
            let mean = col.iter().sum::<f64>() / 300.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 300.0;
            assert!((fit.model.means.row(0)[j] - mean).abs() < 1e-10);
            assert!((fit.model.variances.row(0)[j] - var).abs() < 1e-10);
        }
        assert_eq!(fit.model.weights, vec![1.0]);
    }

    #[test]
    fn posterior_rows_are_distributions() {
        let data = two_component_sample(200, 8);
        let model = gmm_fit(&data, &GmmConfig::new(3, 1)).unwrap().model;
        let post = model.posteriors(&data).unwrap();
        for row in post.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn dominant_component_takes_the_frame() {
        let model = GmmModel {
            weights: vec![0.5, 0.5],
            means: Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]),
            variances: Matrix::from_rows(&[[1e-4, 1e-4], [1e-4, 1e-4]]),
            standardizer: None,
        };
        let post = model.posteriors(&Matrix::from_rows(&[[0.0, 0.0]])).unwrap();
        assert!((post.row(0)[0] - 1.0).abs() < 1e-12);
        assert!(post.row(0)[1] < 1e-12);
    }

    #[test]
    fn posteriors_match_linear_domain_density() {
        let model = GmmModel {
            weights: vec![0.2, 0.5, 0.3],
            means: Matrix::from_rows(&[[0.0, 1.0], [1.0, -1.0], [-0.5, 0.5]]),
            variances: Matrix::from_rows(&[[1.0, 0.5], [0.8, 1.2], [0.3, 2.0]]),
            standardizer: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let frames = Matrix::from_vec(5, 2, (0..10).map(|_| rng.random_range(-2.0..2.0)).collect());
        let post = model.posteriors(&frames).unwrap();
        for t in 0..5 {
            let x = frames.row(t);
            let joint: Vec<f64> = (0..3)
                .map(|c| {
                    let mut p = model.weights[c];
                    for j in 0..2 {
                        let v = model.variances.row(c)[j];
                        let diff = x[j] - model.means.row(c)[j];
                        p *= (-diff * diff / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
                    }
                    p
                })
                .collect();
            let total: f64 = joint.iter().sum();
            for c in 0..3 {
                assert!((post.row(t)[c] - joint[c] / total).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let data = Matrix::from_rows(&[[0.0], [1.0]]);
        assert!(gmm_fit(&data, &GmmConfig::new(3, 0)).is_err());
        let mut cfg = GmmConfig::new(1, 0);
        cfg.iters = 0;
        assert!(matches!(gmm_fit(&data, &cfg), Err(ClusterError::Config(_))));
    }
}
