use crate::autograd::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_relative_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose `±eps` probes crossed a relu kink or changed a
    /// max-pool winner, where the central difference is not a derivative.
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Denominator floor so coordinates with vanishing gradient do not turn
    /// roundoff into huge relative errors.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-3, floor: 1e-8 }
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(θ + ε) - f(θ - ε)) / 2ε`, one coordinate at a time.
///
/// `f` receives a fresh graph and one trainable [`Var`] per entry of
/// `params`, and must return a scalar node. It has to be deterministic, so
/// run models with dropout disabled.
pub fn finite_diff_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(f, params, GradCheckOptions { eps, ..Default::default() })
}

pub fn finite_diff_check_with<F>(f: F, params: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if opts.eps <= 0.0 {
        return Err(Error::Usage("finite-difference step must be positive".into()));
    }
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, Vec<usize>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((scalar(&g, out)?, g.branch_pattern()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let base_pattern = g.branch_pattern();
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut report = GradCheckReport { max_relative_error: 0.0, worst: None, checked: 0, skipped: 0 };
    let mut probe = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for j in 0..param.numel() {
            let orig = param.data()[j];
            probe[pi].data_mut()[j] = orig + opts.eps;
            let (plus, pat_plus) = eval(&probe)?;
            probe[pi].data_mut()[j] = orig - opts.eps;
            let (minus, pat_minus) = eval(&probe)?;
            probe[pi].data_mut()[j] = orig;

            if pat_plus != base_pattern || pat_minus != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel.max(report.max_relative_error);
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}

fn scalar(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::Usage(format!("checked function must be scalar, got {}", t.shape())));
    }
    Ok(t.data()[0])
}
