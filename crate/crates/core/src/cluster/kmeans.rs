use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_data, ClusterError, Result, Standardizer};
use crate::{nearest_row, squared_distance, CodeSequence, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub batch_size: usize,
    /// Minibatch updates before the full passes.
    pub minibatch_iters: usize,
    /// Full-batch Lloyd refinement passes.
    pub full_passes: usize,
    pub seed: u64,
    /// Standardize features before clustering and keep the map in the model.
    pub standardize: bool,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            batch_size: 1024,
            minibatch_iters: 100,
            full_passes: 10,
            seed,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    /// `K × D`, in standardized space when a standardizer is present.
    pub centroids: Matrix,
    /// Training frames assigned to each centroid after the final pass.
    pub counts: Vec<usize>,
    pub standardizer: Option<Standardizer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub model: KMeansModel,
    /// Full-batch inertia (sum of squared distances) at the assignment step
    /// of each Lloyd pass, then after the final update.
    pub inertia: Vec<f64>,
    pub reseeded: usize,
}

fn assign(data: &Matrix, centroids: &Matrix) -> Vec<(usize, f64)> {
    (0..data.rows())
        .into_par_iter()
        .map(|r| nearest_row(data.row(r), centroids))
        .collect()
}

fn kmeanspp(data: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let n = data.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data
        .iter_rows()
        .map(|r| squared_distance(r, data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(ClusterError::Input(format!(
                "only {} distinct frames for k = {k}",
                chosen.len()
            )));
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        while d2[pick] <= 0.0 {
            // rounding pushed the draw past the end; take the last positive weight
            pick -= 1;
        }
        chosen.push(pick);
        let c = data.row(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(data.row(i), c));
        }
    }
    let mut centroids = Matrix::zeros(k, data.cols());
    for (j, &i) in chosen.iter().enumerate() {
        centroids.row_mut(j).copy_from_slice(data.row(i));
    }
    Ok(centroids)
}

/// Minibatch K-Means with k-means++ seeding, followed by full-batch Lloyd
/// passes. Empty clusters are reseeded at the frame farthest from its
/// centroid.
pub fn kmeans_fit(data: &Matrix, config: &KMeansConfig) -> Result<KMeansFit> {
    check_data(data, "kmeans")?;
    let k = config.k;
    if k == 0 || config.batch_size == 0 {
        return Err(ClusterError::Config(
            "k and batch size must be positive".into(),
        ));
    }
    if data.rows() < k {
        return Err(ClusterError::Input(format!(
            "{} frames are fewer than k = {k}",
            data.rows()
        )));
    }
    let standardizer = config.standardize.then(|| Standardizer::fit(data));
    let owned;
    let data = match &standardizer {
        Some(s) => {
            owned = s.apply(data);
            &owned
        }
        None => data,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = kmeanspp(data, k, &mut rng)?;

    let n = data.rows();
    let mut seen = vec![0usize; k];
    for _ in 0..config.minibatch_iters {
        let batch: Vec<usize> = (0..config.batch_size.min(n))
            .map(|_| rng.random_range(0..n))
            .collect();
        let labels: Vec<usize> = batch
            .iter()
            .map(|&i| nearest_row(data.row(i), &centroids).0)
            .collect();
        for (&i, &c) in batch.iter().zip(&labels) {
            seen[c] += 1;
            let eta = 1.0 / seen[c] as f64;
            for (cv, xv) in centroids.row_mut(c).iter_mut().zip(data.row(i)) {
                *cv += eta * (xv - *cv);
            }
        }
    }

    let mut inertia = Vec::with_capacity(config.full_passes + 1);
    let mut reseeded = 0;
    let mut labels = assign(data, &centroids);
    for _ in 0..config.full_passes {
        inertia.push(labels.iter().map(|l| l.1).sum());
        let mut counts = vec![0usize; k];
        for l in &labels {
            counts[l.0] += 1;
        }
        // move each empty centroid onto the currently worst-fit frame
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let (far, _) = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| counts[l.0] > 1)
                .fold((usize::MAX, -1.0), |best, (i, l)| {
                    if l.1 > best.1 {
                        (i, l.1)
                    } else {
                        best
                    }
                });
            if far == usize::MAX {
                continue;
            }
            log::debug!("kmeans: reseeding empty cluster {c} at frame {far}");
            counts[labels[far].0] -= 1;
            counts[c] = 1;
            labels[far] = (c, 0.0);
            centroids.row_mut(c).copy_from_slice(data.row(far));
            reseeded += 1;
        }
        let mut sums = Matrix::zeros(k, data.cols());
        for (i, l) in labels.iter().enumerate() {
            for (s, v) in sums.row_mut(l.0).iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (cv, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *cv = s * inv;
                }
            }
        }
        labels = assign(data, &centroids);
    }
    inertia.push(labels.iter().map(|l| l.1).sum());
    let mut counts = vec![0usize; k];
    for l in &labels {
        counts[l.0] += 1;
    }
    Ok(KMeansFit {
        model: KMeansModel {
            centroids,
            counts,
            standardizer,
        },
        inertia,
        reseeded,
    })
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Nearest-centroid codes, plus the centroid sequence as a continuous
    /// representation (in the model's standardized space).
    pub fn encode(&self, features: &Matrix, reduction: usize) -> Result<(CodeSequence, Matrix)> {
        if features.cols() != self.dim() {
            return Err(ClusterError::Input(format!(
                "features have {} dimensions, model expects {}",
                features.cols(),
                self.dim()
            )));
        }
        let data = match &self.standardizer {
            Some(s) => s.apply(features),
            None => features.clone(),
        };
        let indices: Vec<usize> = assign(&data, &self.centroids)
            .into_iter()
            .map(|l| l.0)
            .collect();
        let codes = CodeSequence::new(indices, reduction.max(1), self.k());
        let vectors = codes
            .to_vectors(&self.centroids)
            .expect("codebook size matches");
        Ok((codes, vectors))
    }

    /// Sum of squared distances of `features` to their nearest centroid.
    pub fn inertia(&self, features: &Matrix) -> f64 {
        let data = match &self.standardizer {
            Some(s) => s.apply(features),
            None => features.clone(),
        };
        assign(&data, &self.centroids).iter().map(|l| l.1).sum()
    }
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::cluster::adjusted_rand_index;

    fn blobs(seed: u64, per: usize) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..per * 3 {
            let c = i % 3;
            rows.push([
                centres[c][0] + noise.sample(&mut rng),
                centres[c][1] + noise.sample(&mut rng),
            ]);
            truth.push(c);
        }
        (Matrix::from_rows(&rows), truth)
    }

    #[test]
    fn recovers_three_blobs() {
        let (data, truth) = blobs(1, 100);
        let fit = kmeans_fit(&data, &KMeansConfig::new(3, 7)).unwrap();
        let (codes, _) = fit.model.encode(&data, 1).unwrap();
        assert_eq!(adjusted_rand_index(&codes.indices, &truth), 1.0);
    }

    #[test]
    fn lloyd_inertia_never_increases() {
        let (data, _) = blobs(2, 80);
        let mut cfg = KMeansConfig::new(7, 3);
        cfg.minibatch_iters = 2;
        cfg.batch_size = 8;
        cfg.full_passes = 15;
        let fit = kmeans_fit(&data, &cfg).unwrap();
        assert_eq!(fit.inertia.len(), 16);
        for w in fit.inertia.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{:?}", fit.inertia);
        }
    }

    #[test]
    fn k_equal_to_distinct_points_gives_zero_inertia() {
        let data =
            Matrix::from_rows(&[[0.0, 1.0], [5.0, 5.0], [0.0, 1.0], [-3.0, 2.0], [5.0, 5.0]]);
        let fit = kmeans_fit(&data, &KMeansConfig::new(3, 0)).unwrap();
        assert_eq!(*fit.inertia.last().unwrap(), 0.0);
        let c = &fit.model.centroids;
        for i in 0..3 {
            for j in 0..i {
                assert!(squared_distance(c.row(i), c.row(j)) > 1e-12);
            }
        }
    }

    #[test]
    fn fewer_frames_than_k_is_an_error() {
        let data = Matrix::from_rows(&[[0.0], [1.0]]);
        assert!(matches!(
            kmeans_fit(&data, &KMeansConfig::new(3, 0)),
            Err(ClusterError::Input(_))
        ));
        let dup = Matrix::from_rows(&[[0.0], [0.0], [1.0]]);
        assert!(matches!(
            kmeans_fit(&dup, &KMeansConfig::new(3, 0)),
            Err(ClusterError::Input(_))
        ));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (data, _) = blobs(4, 50);
        let a = kmeans_fit(&data, &KMeansConfig::new(5, 11)).unwrap();
        let b = kmeans_fit(&data, &KMeansConfig::new(5, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_matches_exhaustive_scan() {
        let (data, _) = blobs(5, 40);
        let mut cfg = KMeansConfig::new(6, 1);
        cfg.standardize = false;
        let model = kmeans_fit(&data, &cfg).unwrap().model;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let queries = Matrix::from_vec(
            10,
            2,
            (0..20).map(|_| rng.random_range(-2.0..12.0)).collect(),
        );
        let (codes, vectors) = model.encode(&queries, 1).unwrap();
        for t in 0..10 {
            let q = queries.row(t);
            let mut best = 0;
            for c in 1..6 {
                let dc: f64 = q
                    .iter()
                    .zip(model.centroids.row(c))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let db: f64 = q
                    .iter()
                    .zip(model.centroids.row(best))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dc < db {
                    best = c;
                }
            }
            assert_eq!(codes.indices[t], best);
            assert_eq!(vectors.row(t), model.centroids.row(best));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let model = KMeansModel {
            centroids: Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]),
            counts: vec![0, 0],
            standardizer: None,
        };
        let (codes, _) = model
            .encode(&Matrix::from_rows(&[[0.0, 3.0], [1.0, 0.0]]), 1)
            .unwrap();
        assert_eq!(codes.indices, vec![0, 0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = KMeansModel {
            centroids: Matrix::from_rows(&[[1.0, 0.0]]),
            counts: vec![0],
            standardizer: None,
        };
        assert!(model
            .encode(&Matrix::from_rows(&[[0.0, 3.0, 1.0]]), 1)
            .is_err());
    }
}
