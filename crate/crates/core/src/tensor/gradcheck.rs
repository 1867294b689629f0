//! Central finite-difference gradient checks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs())
}

fn finite(label: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{label} is not finite ({v})")))
    }
}

fn run<F>(f: &mut F, values: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    finite("function value", g.scalar(out))?;
    Ok((g, vars, out))
}

/// Compares the analytic gradient of `f` with respect to every coordinate of
/// every input against a central difference with step `h`.
///
/// Returns the largest `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn gradient_check<F>(mut f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, vars, out) = run(&mut f, inputs)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map_or_else(|| alloc::vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut worst = 0.0f64;
    let mut values = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for coord in 0..grad.len() {
            let orig = values[which].data()[coord];
            values[which].data_mut()[coord] = orig + h;
            let (g, _, o) = run(&mut f, &values)?;
            let plus = g.scalar(o);
            values[which].data_mut()[coord] = orig - h;
            let (g, _, o) = run(&mut f, &values)?;
            let minus = g.scalar(o);
            values[which].data_mut()[coord] = orig;
            let numeric = finite("finite difference", (plus - minus) / (2.0 * h))?;
            finite("analytic gradient", grad[coord])?;
            worst = worst.max(rel_error(grad[coord], numeric));
        }
    }
    Ok(worst)
}

/// Per-parameter outcome of [`gradient_check_params`].
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

fn run_params<F>(f: &mut F, store: &ParamStore) -> Result<(Graph, Var)>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    finite("function value", g.scalar(out))?;
    Ok((g, out))
}

/// Gradient check over stored parameters.
///
/// `f` builds a scalar from the store; every coordinate of every non-frozen
/// parameter is perturbed. Parameter values are restored before returning and
/// gradient buffers are left untouched.
pub fn gradient_check_params<F>(store: &mut ParamStore, mut f: F, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let (g, out) = run_params(&mut f, store)?;
    let grads = g.backward(out)?;
    let mut scratch = ParamStore::clone(store);
    scratch.zero_grads();
    scratch.accumulate(&g, &grads);
    drop(g);

    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    for id in ids {
        let analytic = scratch.get(id).tensor.grad().expect("parameters track gradients").to_vec();
        let mut worst = 0.0f64;
        for (coord, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).tensor.data()[coord];
            store.get_mut(id).tensor.data_mut()[coord] = orig + h;
            let plus = run_params(&mut f, store).map(|(g, o)| g.scalar(o));
            store.get_mut(id).tensor.data_mut()[coord] = orig - h;
            let minus = run_params(&mut f, store).map(|(g, o)| g.scalar(o));
            store.get_mut(id).tensor.data_mut()[coord] = orig;
            let numeric = finite("finite difference", (plus? - minus?) / (2.0 * h))?;
            finite("analytic gradient", a)?;
            worst = worst.max(rel_error(a, numeric));
        }
        report.per_param.push((store.get(id).name.clone(), worst));
    }
    Ok(report)
}
