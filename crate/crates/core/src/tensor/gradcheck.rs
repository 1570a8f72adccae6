//! Central finite-difference gradient checks.

use serde::Serialize;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub checked: usize,
    /// (input or parameter name, flat element index) of the worst element.
    pub worst: Option<(String, usize)>,
    /// First element whose analytic or numeric gradient was NaN.
    pub nan_at: Option<(String, usize)>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    if g.value(v).len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check function returned shape {:?}, expected a scalar",
            g.shape(v)
        )));
    }
    Ok(g.scalar(v))
}

struct Tracker {
    max: f64,
    checked: usize,
    worst: Option<(String, usize)>,
    nan_at: Option<(String, usize)>,
}

impl Tracker {
    fn new() -> Self {
        Tracker { max: 0.0, checked: 0, worst: None, nan_at: None }
    }

    fn record(&mut self, label: &str, idx: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        if analytic.is_nan() || numeric.is_nan() {
            if self.nan_at.is_none() {
                self.nan_at = Some((label.to_string(), idx));
            }
            return;
        }
        let e = rel_err(analytic, numeric);
        if e > self.max || self.worst.is_none() {
            self.max = self.max.max(e);
            self.worst = Some((label.to_string(), idx));
        }
    }

    fn finish(self, tol: f64) -> GradCheckReport {
        GradCheckReport {
            max_rel_err: self.max,
            pass: self.nan_at.is_none() && self.max <= tol,
            checked: self.checked,
            worst: self.worst,
            nan_at: self.nan_at,
        }
    }
}

/// Checks the gradient of a scalar function of `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::no_grad();
        let vs: Vec<Var> = ts.iter().map(|t| g.input(t)).collect();
        let out = f(&mut g, &vs)?;
        scalar_of(&g, out)
    };
    let mut tr = Tracker::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, grads) in analytic.iter().enumerate() {
        let label = format!("input{ti}");
        for e in 0..inputs[ti].numel() {
            let orig = work[ti].data()[e];
            work[ti].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            tr.record(&label, e, grads[e], (plus - minus) / (2.0 * eps));
        }
    }
    Ok(tr.finish(tol))
}

/// Checks the gradient of a scalar function with respect to every stored parameter.
pub fn grad_check_params<F>(f: F, store: &ParamStore, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    check_eps(eps)?;
    let mut work = store.clone();
    for id in work.ids().collect::<Vec<_>>() {
        work.tensor_mut(id).set_requires_grad(true);
        work.tensor_mut(id).zero_grad();
    }
    let mut g = Graph::new();
    let out = f(&mut g, &work)?;
    scalar_of(&g, out)?;
    g.backward(out)?;
    g.accumulate_param_grads(&mut work)?;
    let analytic: Vec<Vec<f64>> = work
        .ids()
        .map(|id| {
            let t = work.tensor(id);
            t.grad().map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
        })
        .collect();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::no_grad();
        let out = f(&mut g, s)?;
        scalar_of(&g, out)
    };
    let mut tr = Tracker::new();
    for id in work.ids().collect::<Vec<_>>() {
        let label = work.name(id).to_string();
        for e in 0..work.numel(id) {
            let orig = work.tensor(id).data()[e];
            work.tensor_mut(id).data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work.tensor_mut(id).data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work.tensor_mut(id).data_mut()[e] = orig;
            tr.record(&label, e, analytic[id.0][e], (plus - minus) / (2.0 * eps));
        }
    }
    Ok(tr.finish(tol))
}
