//! Central finite-difference checking, shared by the gradient suites of
//! downstream crates. Only forward evaluation is used to build the oracle.

use crate::{Graph, ParameterSet, Result, Tensor, Var};

/// Worst element-wise relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `loss(params)` with respect to every scalar
/// parameter, returned in the same layout as the parameter tensors.
pub fn numeric_param_gradients(
    params: &mut ParameterSet,
    h: f64,
    mut loss: impl FnMut(&ParameterSet) -> Result<f64>,
) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<_> = params.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = params.value(id).len();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + h;
            let up = loss(params)?;
            params.value_mut(id).data_mut()[i] = orig - h;
            let down = loss(params)?;
            params.value_mut(id).data_mut()[i] = orig;
            *gi = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Checks analytic parameter gradients of `build` against central
/// differences; returns the worst relative error over all parameters.
pub fn check_param_gradients(
    params: &mut ParameterSet,
    h: f64,
    floor: f64,
    build: impl Fn(&mut Graph, &ParameterSet) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    g.gradients(loss, params)?;
    let analytic: Vec<Vec<f64>> = params.ids().map(|id| params.grad(id).data().to_vec()).collect();
    let numeric = numeric_param_gradients(params, h, |p| {
        let mut g = Graph::new();
        let l = build(&mut g, p)?;
        Ok(g.value(l).item())
    })?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_relative_error(a, n, floor))
        .fold(0.0, f64::max))
}

/// Checks gradients with respect to the inputs of `build`. A non-scalar
/// output is reduced by a fixed projection first, so every output element
/// contributes. Returns the worst relative error over all inputs.
pub fn check_input_gradients(
    inputs: &[Tensor],
    h: f64,
    floor: f64,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |inputs: &[Tensor]| -> Result<(Graph, Var, Vec<Var>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let loss = if g.value(out).len() == 1 {
            out
        } else {
            let n = g.value(out).len();
            // fixed, sign-alternating weights with distinct magnitudes
            let w: Vec<f64> = (0..n)
                .map(|i| (if i % 2 == 0 { 1.0 } else { -1.0 }) * (0.3 + 0.7 * ((i * 37 % 101) as f64 / 101.0)))
                .collect();
            let w = g.constant(Tensor::new(g.value(out).shape().to_vec(), w)?);
            let p = g.mul(out, w)?;
            g.sum(p)?
        };
        Ok((g, loss, vars))
    };
    let (g, loss, vars) = eval(inputs)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let mut up = inputs.to_vec();
            up[k].data_mut()[i] += h;
            let mut down = inputs.to_vec();
            down[k].data_mut()[i] -= h;
            let (gu, lu, _) = eval(&up)?;
            let (gd, ld, _) = eval(&down)?;
            *n = (gu.value(lu).item() - gd.value(ld).item()) / (2.0 * h);
        }
        worst = worst.max(max_relative_error(&analytic, &numeric, floor));
    }
    Ok(worst)
}
