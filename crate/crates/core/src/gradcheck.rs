//! Central finite-difference checks of tape gradients.

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of a multi-tensor gradient check.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flattened coordinate (over all checked tensors) with the worst error.
    pub worst_coordinate: usize,
    pub coordinates: usize,
}

/// Relative error as `|a − n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Checks d`f`/d`point` against central differences and returns the
/// maximum relative error over all coordinates.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    let report = grad_check_many(
        |g, vars| f(g, vars[0]),
        std::slice::from_ref(point),
        eps,
        Execution::Sequential,
    )?;
    Ok(report.max_relative_error)
}

/// Gradient check of a scalar function of several tensors. Every
/// coordinate of every tensor is perturbed; coordinates are evaluated with
/// `exec`.
pub fn grad_check_many<F>(f: F, points: &[Tensor], eps: f64, exec: Execution) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + Sync,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside (0, 1e-2]")));
    }

    let mut g = Graph::new();
    let vars = points.iter().map(|p| g.param(p.clone())).collect::<Result<Vec<_>>>()?;
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| g.grad(v).expect("param grad").data().to_vec())
        .collect();

    let mut index = Vec::with_capacity(analytic.len());
    for (t, p) in points.iter().enumerate() {
        index.extend((0..p.len()).map(|c| (t, c)));
    }

    let eval = |shifted: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = shifted
            .iter()
            .map(|p| g.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let errors = exec.map_range(index.len(), |flat| -> Result<f64> {
        let (t, c) = index[flat];
        let mut shifted = points.to_vec();
        let base = points[t].data()[c];
        shifted[t].data_mut()[c] = base + eps;
        let up = eval(&shifted).map_err(|e| non_finite_at(e, flat))?;
        shifted[t].data_mut()[c] = base - eps;
        let down = eval(&shifted).map_err(|e| non_finite_at(e, flat))?;
        let numeric = (up - down) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::NonFiniteAt { coordinate: flat });
        }
        Ok(relative_error(analytic[flat], numeric))
    });

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_coordinate: 0,
        coordinates: index.len(),
    };
    for (flat, err) in errors.into_iter().enumerate() {
        let err = err?;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_coordinate = flat;
        }
    }
    Ok(report)
}

fn non_finite_at(e: Error, coordinate: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteAt { coordinate },
        other => other,
    }
}
