//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over all coordinates of `|a − n| / max(|a|, |n|, 1e-6)`.
    pub max_rel_error: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub worst_index: usize,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_pair: (f64, f64),
    pub coordinates: usize,
}

/// The floor keeps roundoff in the differences (about 1e-11 for O(1) losses
/// at eps = 1e-5) from dominating coordinates whose true gradient is ~0.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn scalar(g: &Graph, v: Var, what: &str) -> Result<f64> {
    let x = g.value(v);
    if x.len() != 1 {
        return Err(Error::Shape(format!("{what}: loss must be scalar")));
    }
    let y = x.data()[0];
    if !y.is_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(y)
}

/// Compares analytic parameter gradients of `f` with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` over every coordinate of every parameter.
///
/// `f` must be deterministic: any sampling inside it has to be reseeded per call.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(store, &mut g)?;
    scalar(&g, loss, "grad_check loss")?;
    g.backward_into(loss, store);

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference();
        let l = f(s, &mut g)?;
        scalar(&g, l, "grad_check loss")
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_pair: (0.0, 0.0),
        coordinates: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = store.get(id).grad.data()[i];
            let e = rel_err(analytic, numeric);
            report.coordinates += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.worst_pair = (analytic, numeric);
            }
        }
    }
    store.zero_grads();
    Ok(report)
}

/// Gradient check with respect to free input tensors instead of parameters.
pub fn check_inputs<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let build = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = build(inputs);
    scalar(&g, out, "check_inputs loss")?;
    let grads = g.backward(out);
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + eps;
            let (gu, _, ou) = build(&xs);
            let up = scalar(&gu, ou, "check_inputs loss")?;
            xs[k].data_mut()[i] = orig - eps;
            let (gd, _, od) = build(&xs);
            let down = scalar(&gd, od, "check_inputs loss")?;
            xs[k].data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
