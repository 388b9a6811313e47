//! Central finite-difference gradient checking.
//!
//! The relative error of one coordinate is `|a - n| / max(|a|, |n|, floor)`
//! where `a` is the analytic and `n` the numeric derivative. The floor keeps
//! coordinates whose true gradient is (near) zero from dividing round-off by
//! round-off.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub checked: usize,
    pub per_param: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` gradients against central differences of `loss` for
/// every trainable parameter in `params`.
pub fn check_gradients<F>(
    params: &ParamStore,
    analytic: &BTreeMap<String, Tensor>,
    step: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        checked: 0,
        per_param: BTreeMap::new(),
    };
    let names: Vec<String> = params.trainable_names().map(str::to_string).collect();
    for name in names {
        let g = analytic
            .get(&name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let mut worst_here = 0.0f64;
        for i in 0..g.len() {
            let original = probe.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = original + step;
            let plus = loss(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = original - step;
            let minus = loss(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(g.data()[i], numeric);
            worst_here = worst_here.max(err);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(name.clone());
                report.worst_index = i;
            }
            report.checked += 1;
        }
        report.per_param.insert(name, worst_here);
    }
    Ok(report)
}
