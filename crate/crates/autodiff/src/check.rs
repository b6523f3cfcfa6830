use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::AutodiffError;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_relative_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Relative error floor: gradients smaller than this are compared absolutely.
const DENOM_FLOOR: f64 = 1e-6;
const STEP: f64 = 1e-4;

/// Checks every scalar parameter of `store` against central finite differences.
///
/// `loss` must rebuild the same expression deterministically for any parameter
/// values. Intended for small models (a few thousand parameters).
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    tolerance: f64,
    mut loss: F,
) -> Result<FdReport, AutodiffError>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var), AutodiffError>,
{
    let (tape, out) = loss(store)?;
    let grads = tape.backward(out)?;
    let analytic = grads.param_grads();

    let mut report = FdReport {
        max_relative_error: 0.0,
        worst_param: None,
        worst_index: 0,
        checked: 0,
        tolerance,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.value(id).len();
        let analytic_grad = analytic.iter().find(|(p, _)| *p == id).map(|(_, g)| g.clone());
        for k in 0..len {
            let original = store.value(id).as_slice().expect("standard layout")[k];
            let eval = |store: &mut ParamStore, v: f64, loss: &mut F| -> Result<f64, AutodiffError> {
                store.value_mut(id).as_slice_mut().expect("standard layout")[k] = v;
                let (t, o) = loss(store)?;
                Ok(t.value(o)[[0, 0]])
            };
            let plus = eval(store, original + STEP, &mut loss)?;
            let minus = eval(store, original - STEP, &mut loss)?;
            store.value_mut(id).as_slice_mut().expect("standard layout")[k] = original;

            let numeric = (plus - minus) / (2.0 * STEP);
            let exact = analytic_grad
                .as_ref()
                .map(|g| g.as_slice().expect("standard layout")[k])
                .unwrap_or(0.0);
            let err = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(DENOM_FLOOR);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = Some(store.name(id).to_string());
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}
