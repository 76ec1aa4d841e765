//! Central finite-difference gradient checker.

use std::fmt;

use crate::error::{Error, Result};
use crate::params::Parameters;

/// Finite-difference step, near `ε^(1/3)` where central differences
/// balance truncation against rounding.
pub const STEP: f64 = 1e-5;

/// Denominator floor for the relative error. Central differences at
/// `STEP` carry roughly `1e-11 · |loss|` of rounding noise, so entries whose
/// true gradient is below this floor are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_err))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<28} max_rel_err={:.3e} at [{}] {}",
                p.name,
                p.max_rel_err,
                p.worst_index,
                if p.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` (same structure as `params`) with central
/// differences of `loss_fn` around the current parameter values. Values are
/// restored after each probe.
pub fn grad_check<P, F>(
    params: &mut P,
    analytic: &P,
    mut loss_fn: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    let base = loss_fn(params)?;
    let again = loss_fn(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Check(format!(
            "loss is not deterministic: {base} then {again} at the same point"
        )));
    }
    if !base.is_finite() {
        return Err(Error::Check(format!("loss is not finite: {base}")));
    }

    let analytic: Vec<(String, Vec<f64>)> = analytic
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.values().to_vec()))
        .collect();
    let names: Vec<String> = params.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != analytic.len() {
        return Err(Error::Check("analytic gradient structure differs from parameters".into()));
    }

    let mut report = GradCheckReport { tolerance, params: Vec::with_capacity(names.len()) };
    for (pi, name) in names.iter().enumerate() {
        let grads = &analytic[pi].1;
        let len = grads.len();
        let mut worst = (0.0f64, 0usize);
        for i in 0..len {
            let orig = params.named_params()[pi].1.values()[i];
            set_entry(params, pi, i, orig + STEP);
            let plus = loss_fn(params)?;
            set_entry(params, pi, i, orig - STEP);
            let minus = loss_fn(params)?;
            set_entry(params, pi, i, orig);
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(grads[i], numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, i);
            }
        }
        report.params.push(ParamCheck {
            name: name.clone(),
            max_rel_err: worst.0,
            worst_index: worst.1,
            passed: worst.0 < tolerance,
        });
    }
    Ok(report)
}

fn set_entry<P: Parameters>(params: &mut P, pi: usize, i: usize, v: f64) {
    let mut all = params.named_params_mut();
    all[pi].1.values_mut()[i] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::NamedTensors;
    use crate::tensor::Tensor;
    use std::cell::Cell;

    fn toy() -> NamedTensors {
        NamedTensors(vec![
            ("a".into(), Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap()),
            ("b".into(), Tensor::matrix(2, 2, vec![0.5, 0.25, -0.125, 2.0]).unwrap()),
        ])
    }

    fn sum_loss(p: &NamedTensors) -> Result<f64> {
        Ok(p.0.iter().flat_map(|(_, t)| t.values()).sum())
    }

    #[test]
    fn sum_of_params_has_all_ones_gradient() {
        let mut p = toy();
        let mut g = p.zeros_like();
        for (_, t) in g.named_params_mut() {
            t.fill(1.0);
        }
        let report = grad_check(&mut p, &g, sum_loss, 1e-9).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.max_rel_err() < 1e-9);
        assert_eq!(p, toy(), "values restored");
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        // loss = Σ x², gradient 2x; supply 4x instead
        let mut p = toy();
        let mut g = p.clone();
        g.scale(4.0);
        let loss = |p: &NamedTensors| -> Result<f64> {
            Ok(p.0.iter().flat_map(|(_, t)| t.values()).map(|v| v * v).sum())
        };
        let report = grad_check(&mut p, &g, loss, 1e-4).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 2);

        let mut ok = toy();
        ok.scale(2.0);
        assert!(grad_check(&mut p, &ok, loss, 1e-4).unwrap().passed());
    }

    #[test]
    fn nondeterministic_loss_is_an_error() {
        let mut p = toy();
        let g = p.zeros_like();
        let calls = Cell::new(0.0);
        let err = grad_check(
            &mut p,
            &g,
            |_| {
                calls.set(calls.get() + 1.0);
                Ok(calls.get())
            },
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Check(_)));
    }
}
