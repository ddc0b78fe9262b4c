use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Finite-difference comparison for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| !(p.max_rel_err < self.tol))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

/// Entries whose gradients are both below this magnitude are compared in
/// absolute terms.
const REL_FLOOR: f64 = 1e-6;

fn evaluate<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = f(&mut tape, &vars)?;
    let v = tape.scalar(out);
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("non-finite loss {v}")));
    }
    Ok(v)
}

/// Compares tape gradients of `f` with central differences of step `step`
/// for every entry of every parameter. Passes iff each parameter's max
/// relative error is below `tol`.
pub fn grad_check<F>(f: F, params: &mut ParamStore, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".to_string()));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = f(&mut tape, &vars)?;
    if !tape.scalar(out).is_finite() {
        return Err(Error::Evaluation("non-finite loss at the base point".to_string()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(v, (_, _, t))| grads.wrt(*v).map_or_else(|| alloc::vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut checks = Vec::with_capacity(params.len());
    for (p, analytic_p) in analytic.iter().enumerate() {
        let id = super::ParamId(p);
        let mut worst = ParamCheck {
            name: params.name(id).to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (k, &a) in analytic_p.iter().enumerate() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + step;
            let plus = evaluate(&f, params);
            params.get_mut(id).data_mut()[k] = orig - step;
            let minus = evaluate(&f, params);
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let err = (a - numeric).abs() / denom;
            if err > worst.max_rel_err || err.is_nan() {
                worst.max_rel_err = err;
                worst.worst_index = k;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        checks.push(worst);
    }
    let passed = checks.iter().all(|c| c.max_rel_err < tol);
    Ok(GradCheckReport {
        params: checks,
        tol,
        passed,
    })
}
