use alloc::format;
use alloc::string::String;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Relative scale, times `max(1, |f|)`, below which a gradient coordinate is
/// compared in absolute terms. Central differences of a function of
/// magnitude `|f|` carry rounding noise of about `ulp(f) / eps`; without
/// this floor an exactly-zero analytic gradient (which softmax shift
/// invariance produces routinely) against a noise-level numeric one scores
/// a relative error of 1.
pub const NOISE_FLOOR: f64 = 1e-6;

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    /// `max |analytic - numeric| / max(floor, |analytic| + |numeric|)` with
    /// `floor = max(1e-12, NOISE_FLOOR * max(1, |f|))`.
    pub max_rel_err: f64,
    /// The same maximum with the bare `1e-12` floor.
    pub strict_max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates: usize,
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let v = tape.value(loss);
    if v.shape().len() != 1 {
        return Err(Error::contract("finite_diff_check", "function is not scalar"));
    }
    Ok(v.item())
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences at step `eps`, over every coordinate of every trainable
/// parameter in `store`.
///
/// `f` records the function on the tape it is given and returns the loss
/// node. It must be deterministic (no dropout); this is verified by
/// evaluating it twice at the base point. Non-differentiable points such as
/// `|x|` at 0 are the caller's responsibility to avoid.
pub fn finite_diff_check<F>(f: F, store: &ParamStore, eps: f64) -> Result<FiniteDiffReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::contract("finite_diff_check", "eps must be positive"));
    }
    let base0 = eval(&f, store)?;
    let base1 = eval(&f, store)?;
    if base0.to_bits() != base1.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "two evaluations at the same point differ ({base0} vs {base1})"
        )));
    }

    let mut analytic = store.clone();
    analytic.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        tape.backward_into(loss, &mut analytic)?;
    }

    let floor = (NOISE_FLOOR * libm::fabs(base0).max(1.0)).max(1e-12);
    let mut probe = store.clone();
    let mut report = FiniteDiffReport {
        max_rel_err: 0.0,
        strict_max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates: 0,
    };
    let ids: alloc::vec::Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).data().len();
        for k in 0..n {
            let x0 = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = x0 + eps;
            let fp = eval(&f, &probe)?;
            probe.value_mut(id).data_mut()[k] = x0 - eps;
            let fm = eval(&f, &probe)?;
            probe.value_mut(id).data_mut()[k] = x0;

            let numeric = (fp - fm) / (2.0 * eps);
            let exact = analytic.grad(id).data()[k];
            let sum = libm::fabs(exact) + libm::fabs(numeric);
            let diff = libm::fabs(exact - numeric);
            let rel = diff / sum.max(floor);
            report.strict_max_rel_err = report.strict_max_rel_err.max(diff / sum.max(1e-12));
            report.coordinates += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = k;
                report.worst_analytic = exact;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
