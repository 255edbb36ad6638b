//! Central finite-difference verification of analytic gradients.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule it checks.

use super::{AutodiffError, Graph, Tensor, Var};

/// Absolute floor on the denominator of the relative error, so that a pair
/// of gradients that are both numerically zero is not reported as divergent.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Compares the analytic gradient of `build` with central differences of step
/// `eps` for every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], eps: f64, build: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = true;
            graph.leaf(&t)
        })
        .collect();
    let loss = build(&mut graph, &vars)?;
    let grads = graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, AutodiffError> {
        let mut g = Graph::no_grad();
        let vs: Vec<Var> = perturbed.iter().map(|t| g.leaf(t)).collect();
        let l = build(&mut g, &vs)?;
        Ok(g.scalar_value(l))
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    for ti in 0..work.len() {
        for ei in 0..work[ti].numel() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + eps;
            let up = eval(&work)?;
            work[ti].data_mut()[ei] = orig - eps;
            let down = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti].get(ei).copied().unwrap_or(0.0);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((ti, ei));
                }
            }
        }
    }
    Ok(report)
}
