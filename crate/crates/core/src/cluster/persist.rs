use super::{ClusterError, GmmModel, KMeansModel, Result, Standardizer};
use crate::corpus::{CorpusError, DType, ModelBundle};
use crate::Matrix;

pub const KMEANS_KIND: &str = "kmeans";
pub const GMM_KIND: &str = "gmm";

fn bundle_err(e: CorpusError) -> ClusterError {
    ClusterError::Bundle(e.to_string())
}

fn put_matrix(b: &mut ModelBundle, name: &str, m: &Matrix) {
    b.insert(name, &[m.rows(), m.cols()], m.as_slice(), DType::F64);
}

fn get_matrix(b: &ModelBundle, name: &str) -> Result<Matrix> {
    let t = b.require(name).map_err(bundle_err)?;
    match t.shape.as_slice() {
        &[rows, cols] => Ok(Matrix::from_vec(rows, cols, t.data.clone())),
        other => Err(ClusterError::Bundle(format!(
            "{name} has shape {other:?}, expected a matrix"
        ))),
    }
}

fn put_standardizer(b: &mut ModelBundle, s: &Option<Standardizer>) {
    b.set_hyper("standardize", s.is_some());
    if let Some(s) = s {
        b.insert("standardizer.mean", &[s.dim()], &s.mean, DType::F64);
        b.insert("standardizer.std", &[s.dim()], &s.std, DType::F64);
    }
}

fn get_standardizer(b: &ModelBundle, dim: usize) -> Result<Option<Standardizer>> {
    let on: bool = b.hyper_parse("standardize").map_err(bundle_err)?;
    if !on {
        return Ok(None);
    }
    let s = Standardizer {
        mean: b
            .require("standardizer.mean")
            .map_err(bundle_err)?
            .data
            .clone(),
        std: b
            .require("standardizer.std")
            .map_err(bundle_err)?
            .data
            .clone(),
    };
    if s.mean.len() != dim || s.std.len() != dim {
        return Err(ClusterError::Bundle(format!(
            "standardizer has dimension {}, model has {dim}",
            s.mean.len()
        )));
    }
    Ok(Some(s))
}

impl KMeansModel {
    pub fn to_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(KMEANS_KIND);
        b.set_hyper("k", self.k());
        b.set_hyper("dim", self.dim());
        put_matrix(&mut b, "centroids", &self.centroids);
        let counts: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        b.insert("counts", &[counts.len()], &counts, DType::F64);
        put_standardizer(&mut b, &self.standardizer);
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(KMEANS_KIND).map_err(bundle_err)?;
        let centroids = get_matrix(b, "centroids")?;
        let counts = b
            .require("counts")
            .map_err(bundle_err)?
            .data
            .iter()
            .map(|&c| c as usize)
            .collect::<Vec<_>>();
        if counts.len() != centroids.rows() || centroids.rows() == 0 {
            return Err(ClusterError::Bundle(format!(
                "{} counts for {} centroids",
                counts.len(),
                centroids.rows()
            )));
        }
        let standardizer = get_standardizer(b, centroids.cols())?;
        Ok(Self {
            centroids,
            counts,
            standardizer,
        })
    }
}

impl GmmModel {
    pub fn to_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(GMM_KIND);
        b.set_hyper("k", self.k());
        b.set_hyper("dim", self.dim());
        b.insert("weights", &[self.k()], &self.weights, DType::F64);
        put_matrix(&mut b, "means", &self.means);
        put_matrix(&mut b, "variances", &self.variances);
        put_standardizer(&mut b, &self.standardizer);
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(GMM_KIND).map_err(bundle_err)?;
        let weights = b.require("weights").map_err(bundle_err)?.data.clone();
        let means = get_matrix(b, "means")?;
        let variances = get_matrix(b, "variances")?;
        let k = weights.len();
        if k == 0 || means.rows() != k || variances.rows() != k || variances.cols() != means.cols()
        {
            return Err(ClusterError::Bundle(format!(
                "inconsistent mixture: {k} weights, means {}×{}, variances {}×{}",
                means.rows(),
                means.cols(),
                variances.rows(),
                variances.cols()
            )));
        }
        if variances.as_slice().iter().any(|&v| !(v > 0.0)) {
            return Err(ClusterError::Bundle("variances must be positive".into()));
        }
        let standardizer = get_standardizer(b, means.cols())?;
        Ok(Self {
            weights,
            means,
            variances,
            standardizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{gmm_fit, kmeans_fit, GmmConfig, KMeansConfig};

    fn data() -> Matrix {
        Matrix::from_vec(
            40,
            2,
            (0..80)
                .map(|i| ((i * 13 % 17) as f64) + (i % 2) as f64 * 5.0)
                .collect(),
        )
    }

    #[test]
    fn kmeans_round_trip() {
        let m = kmeans_fit(&data(), &KMeansConfig::new(3, 1)).unwrap().model;
        let back =
            KMeansModel::from_bundle(&ModelBundle::from_bytes(&m.to_bundle().to_bytes()).unwrap())
                .unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn gmm_round_trip() {
        let m = gmm_fit(&data(), &GmmConfig::new(2, 1)).unwrap().model;
        let back = GmmModel::from_bundle(&m.to_bundle()).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            KMeansModel::from_bundle(&m.to_bundle()),
            Err(ClusterError::Bundle(_))
        ));
    }
}
