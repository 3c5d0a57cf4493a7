//! Central finite-difference checks of analytic gradients.

use std::fmt;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Relative error above which a tensor fails.
    pub tolerance: f64,
    /// Finite-difference half step.
    pub step: f64,
    /// Gradient magnitude below which errors are measured absolutely.
    pub floor: f64,
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_rel_error))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<40} {:>7} elems  max_rel_err={:.3e}  {}",
                t.name,
                t.elements,
                t.max_rel_error,
                if t.passed { "PASS" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "overall: {} (tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks the gradient of a scalar loss with respect to every trainable
/// tensor in `store`.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &mut ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &mut loss)?;
    numeric_compare(store, &analytic, opts, |s| {
        let mut g = Graph::new();
        let out = loss(&mut g, s)?;
        Ok(g.value(out).item())
    })
}

/// Like [`grad_check`], but finite differences are taken on a separate
/// scalar function. Used when the analytic graph contains a
/// straight-through estimator whose value-equivalent surrogate is smooth.
pub fn compare_gradients<F, N>(
    store: &mut ParamStore,
    mut analytic_loss: F,
    numeric_loss: N,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &mut ParamStore) -> Result<Var>,
    N: FnMut(&mut ParamStore) -> Result<f64>,
{
    let analytic = analytic_gradients(store, &mut analytic_loss)?;
    numeric_compare(store, &analytic, opts, numeric_loss)
}

fn analytic_gradients<F>(store: &mut ParamStore, loss: &mut F) -> Result<Vec<(ParamId, Vec<f64>)>>
where
    F: FnMut(&mut Graph, &mut ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = loss(&mut g, store)?;
    let grads = g.backward(out)?;
    Ok(store
        .trainable_ids()
        .into_iter()
        .map(|id| {
            let data = grads
                .for_param(id)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; store.tensor(id).numel()]);
            (id, data)
        })
        .collect())
}

fn numeric_compare<N>(
    store: &mut ParamStore,
    analytic: &[(ParamId, Vec<f64>)],
    opts: GradCheckOptions,
    mut loss: N,
) -> Result<GradCheckReport>
where
    N: FnMut(&mut ParamStore) -> Result<f64>,
{
    let mut tensors = Vec::with_capacity(analytic.len());
    for (id, grad) in analytic {
        let mut worst: f64 = 0.0;
        for (j, &a) in grad.iter().enumerate() {
            let orig = store.tensor(*id).data()[j];
            store.tensor_mut(*id).data_mut()[j] = orig + opts.step;
            let plus = loss(store)?;
            store.tensor_mut(*id).data_mut()[j] = orig - opts.step;
            let minus = loss(store)?;
            store.tensor_mut(*id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(a, numeric, opts.floor));
        }
        tensors.push(TensorCheck {
            name: store.name(*id).to_string(),
            elements: grad.len(),
            max_rel_error: worst,
            passed: worst < opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        tensors,
    })
}
