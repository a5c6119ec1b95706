use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// max over checked coordinates of `|analytic - fd| / max(1, |analytic|)`
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±eps probes land on a different smooth piece.
    pub kinks: Vec<usize>,
    /// Coordinates whose probes produced non-finite values or failed.
    pub failures: Vec<usize>,
}

impl FdReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.failures.is_empty() && self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares the reverse-mode gradient of a scalar function against central
/// differences at every coordinate of `point`.
pub fn fd_check<F>(f: F, point: &Tensor, eps: f64) -> Result<FdReport>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    fd_check_subset(f, point, eps, &coords)
}

/// [`fd_check`] restricted to the listed flat coordinates.
pub fn fd_check_subset<F>(f: F, point: &Tensor, eps: f64, coords: &[usize]) -> Result<FdReport>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {eps}")));
    }
    if let Some(&bad) = coords.iter().find(|&&c| c >= point.len()) {
        return Err(Error::InvalidArgument(format!("coordinate {bad} out of range")));
    }
    let (analytic, base_signature) = {
        let graph = Graph::new();
        let x = graph.leaf(point.clone());
        let y = f(&graph, x)?;
        let signature = graph.kink_signature();
        let grad = graph.gradient(y, &[x])?[0].value();
        (grad, signature)
    };

    let probe = |delta: f64, i: usize| -> Option<(f64, u64)> {
        let mut shifted = point.clone();
        shifted.data_mut()[i] += delta;
        let graph = Graph::new();
        let x = graph.leaf(shifted);
        let y = f(&graph, x).ok()?.item().ok()?;
        y.is_finite().then(|| (y, graph.kink_signature()))
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        kinks: Vec::new(),
        failures: Vec::new(),
    };
    for &i in coords {
        let (Some((plus, sig_plus)), Some((minus, sig_minus))) = (probe(eps, i), probe(-eps, i)) else {
            report.failures.push(i);
            continue;
        };
        if sig_plus != base_signature || sig_minus != base_signature {
            report.kinks.push(i);
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let exact = analytic.data()[i];
        let err = (exact - numeric).abs() / exact.abs().max(1.0);
        report.checked += 1;
        if !err.is_finite() {
            report.failures.push(i);
        } else if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let report = fd_check(|_, x| x.mul(x)?.sum(), &Tensor::scalar(1.0), 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert!(report.passes(1e-8));
    }

    #[test]
    fn relu_kink_is_flagged() {
        let report = fd_check(|_, x| x.relu()?.sum(), &Tensor::scalar(0.0), 1e-6).unwrap();
        assert_eq!(report.kinks, vec![0]);
        assert_eq!(report.checked, 0);
        assert!(!report.passes(1.0));
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(fd_check(|_, x| x.sum(), &Tensor::scalar(0.0), 0.0).is_err());
    }

    #[test]
    fn non_finite_probe_is_a_failure() {
        // 1/x is fine at the base point but blows up at x - eps = 0
        let report = fd_check(|_, x| x.recip()?.sum(), &Tensor::scalar(1e-6), 1e-6).unwrap();
        assert_eq!(report.failures, vec![0]);
    }
}
