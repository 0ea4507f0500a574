// SPDX-License-Identifier: Apache-2.0
//! Central finite-difference checks of tape gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, NnError, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    /// Perturbation applied on each side of a coordinate.
    pub step: f64,
    /// Coordinates checked per parameter tensor; `None` checks all of them.
    pub samples_per_param: Option<usize>,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, samples_per_param: None, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    libm::fabs(analytic - numeric) / libm::fabs(analytic).max(libm::fabs(numeric)).max(floor)
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64, NnError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let l = f(&mut tape, store)?;
    let v = tape.value(l);
    if v.shape() != (1, 1) {
        return Err(NnError::NotScalar(v.shape()));
    }
    Ok(v.data()[0])
}

/// Compares the tape gradient of the scalar `f` with central differences.
/// Coordinates are drawn without replacement from `rng` when sampling. The
/// store's values are restored and its gradients zeroed on return.
pub fn check_gradients<F, R>(
    store: &mut ParamStore,
    f: F,
    config: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, NnError>,
    R: Rng,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Matrix> = (0..store.len()).map(|i| store.grad(ParamId(i)).clone()).collect();
    store.zero_grad();

    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for p in 0..store.len() {
        let id = ParamId(p);
        let len = store.value(id).data().len();
        let coords: Vec<usize> = match config.samples_per_param {
            Some(k) if k < len => rand::seq::index::sample(rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for k in coords {
            let orig = store.value(id).clone();
            let mut m = orig.clone();
            m.data_mut()[k] += config.step;
            store.set_value(id, m)?;
            let fp = eval(&f, store);
            let mut m = orig.clone();
            m.data_mut()[k] -= config.step;
            store.set_value(id, m)?;
            let fm = eval(&f, store);
            store.set_value(id, orig)?;
            let numeric = (fp? - fm?) / (2.0 * config.step);
            let a = analytic[p].data()[k];
            let rel_err = relative_error(a, numeric, config.floor);
            report.checked += 1;
            if report.worst.is_none() || rel_err > report.max_rel_err {
                report.max_rel_err = rel_err;
                report.worst =
                    Some(GradCheckEntry { param: store.name(id).to_string(), index: k, analytic: a, numeric, rel_err });
            }
        }
    }
    Ok(report)
}
