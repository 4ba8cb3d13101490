use super::{Graph, Tensor, TensorError, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(parameter index, flat entry index)` of the worst relative error.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

/// Max relative error `|a - n| / max(|a|, |n|, 1e-8)` over every entry of
/// every parameter, where `a` is the taped gradient and `n` the central
/// difference `(f(x + ε) - f(x - ε)) / 2ε`.
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    grad_check_report(f, params, epsilon).map(|r| r.max_rel_error)
}

pub fn grad_check_report<F>(
    f: F,
    params: &[Tensor],
    epsilon: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let eval = |ps: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check" });
        }
        Ok(v)
    };

    let analytic: Vec<Tensor> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let loss = f(&mut g, &vars)?;
        if !g.scalar(loss).is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check" });
        }
        let mut grads = g.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(&v, p)| grads.take_or_zeros(v, p))
            .collect()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        entries_checked: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + epsilon;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - epsilon;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[pi].data()[ei];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
            }
            report.max_abs_error = report.max_abs_error.max(abs);
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
