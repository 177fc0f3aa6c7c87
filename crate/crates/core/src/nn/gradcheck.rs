//! Central finite-difference gradient checks.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which errors are measured absolutely rather than
/// relatively; central differences cannot resolve gradients much smaller.
pub const ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub entries: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

fn scalar_root(tape: &mut Tape, root: Var) -> Var {
    if tape.shape(root) == (1, 1) {
        root
    } else {
        tape.sum_all(root)
    }
}

/// Checks `∂f/∂inputs` at `point`. `f` receives one leaf per input tensor
/// and returns a node; non-scalar results are summed.
pub fn grad_check<F>(f: F, point: &[Tensor]) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let root = scalar_root(&mut tape, root);
        Ok(tape.value(root).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let root = scalar_root(&mut tape, root);
    let grads = tape.backward(root);

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut probe = point.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(point[k].rows(), point[k].cols()));
        for i in 0..point[k].len() {
            let x0 = point[k].data()[i];
            probe[k].data_mut()[i] = x0 + FD_STEP;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - FD_STEP;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
            entries += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        entries,
    })
}

/// Checks `∂f/∂θ` for the listed parameters (all of them when `ids` is
/// `None`). `f` must bind parameters through [`Tape::param`].
pub fn grad_check_params<F>(store: &ParamStore, ids: Option<&[ParamId]>, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let root = f(&mut tape, s)?;
        let root = scalar_root(&mut tape, root);
        Ok(tape.value(root).item())
    };

    let mut analytic_store = store.clone();
    analytic_store.zero_grads();
    let mut tape = Tape::new();
    let root = f(&mut tape, &analytic_store)?;
    let root = scalar_root(&mut tape, root);
    let grads = tape.backward(root);
    analytic_store.accumulate(&tape, &grads);

    let all: Vec<ParamId> = store.ids().collect();
    let ids = ids.unwrap_or(&all);
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for &id in ids {
        for i in 0..store.value(id).len() {
            let x0 = store.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = x0 + FD_STEP;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = x0 - FD_STEP;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic_store.grad(id).data()[i], numeric));
            entries += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        entries,
    })
}
