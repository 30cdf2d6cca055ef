use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{Tape, Var};
use super::tensor::HasParams;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over all parameter entries of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Parameter name and element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

/// Compares `backward` gradients of `f` against central differences with step `eps`.
///
/// `f` must be a deterministic function of the target's parameters. Parameter
/// values and gradient accumulators are restored before returning.
pub fn grad_check<S, M, F>(target: &mut M, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    S: Scalar,
    M: HasParams<S>,
    F: FnMut(&M, &mut Tape<S>) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidArgument(format!("grad_check step {eps} outside (0, 1e-3]")));
    }
    let saved_grads: Vec<Vec<S>> = target.params().iter().map(|p| p.grad.clone()).collect();
    target.params_mut().zero_grad();

    let mut tape = Tape::new();
    let root = f(target, &mut tape)?;
    check_finite(&tape, root, "analytic pass")?;
    let mut store = target.params().clone();
    tape.backward(root, &mut store)?;
    let analytic: Vec<Vec<S>> = store.iter().map(|p| p.grad.clone()).collect();

    let mut eval = |target: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let root = f(target, &mut tape)?;
        Ok(tape.scalar(root)?.as_f64())
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, entries: 0 };
    let ids: Vec<_> = target.params().ids().collect();
    let mut outcome = Ok(());
    'outer: for (pi, id) in ids.into_iter().enumerate() {
        let n = target.params().get(id).value.len();
        for j in 0..n {
            let orig = target.params().get(id).value.values()[j];
            target.params_mut().get_mut(id).value.values_mut()[j] = orig + S::lit(eps);
            let plus = eval(target);
            target.params_mut().get_mut(id).value.values_mut()[j] = orig - S::lit(eps);
            let minus = eval(target);
            target.params_mut().get_mut(id).value.values_mut()[j] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => {
                    outcome = Err(e);
                    break 'outer;
                }
            };
            let name = &target.params().get(id).name;
            if !plus.is_finite() || !minus.is_finite() {
                outcome = Err(Error::NonFinite(format!("grad_check perturbation of {name}[{j}]")));
                break 'outer;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][j].as_f64();
            if !a.is_finite() {
                outcome = Err(Error::NonFinite(format!("analytic gradient of {name}[{j}]")));
                break 'outer;
            }
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((name.clone(), j));
                }
            }
        }
    }

    for (p, g) in target.params_mut().iter_mut().zip(saved_grads) {
        p.grad = g;
    }
    outcome.map(|_| report)
}

fn check_finite<S: Scalar>(tape: &Tape<S>, root: Var, what: &str) -> Result<()> {
    let v = tape.scalar(root)?;
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{ParamStore, Tensor};

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let report = grad_check(&mut store, 1e-5, |_, tape| Ok(tape.scalar_const(4.0))).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.entries, 2);
    }

    #[test]
    fn quadratic_is_exact_to_rounding() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::vector(vec![1.7]).unwrap());
        let report = grad_check(&mut store, 1e-5, |s, tape| {
            let w = tape.param(s, id);
            let sq = tape.mul(w, w)?;
            let three = tape.scale(sq, 3.0)?;
            tape.sum(three)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn rejects_bad_step() {
        let mut store = ParamStore::<f64>::new();
        assert!(grad_check(&mut store, 0.0, |_, t| Ok(t.scalar_const(0.0))).is_err());
        assert!(grad_check(&mut store, 1e-2, |_, t| Ok(t.scalar_const(0.0))).is_err());
    }

    #[test]
    fn non_finite_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("blowup", Tensor::vector(vec![0.0]).unwrap());
        let err = grad_check(&mut store, 1e-4, |s, tape| {
            let w = tape.param(s, id);
            let v = tape.value(w)?[0];
            if v != 0.0 {
                Ok(tape.scalar_const(f64::NAN))
            } else {
                tape.sum(w)
            }
        })
        .unwrap_err();
        assert!(err.to_string().contains("blowup"), "{err}");
    }

    #[test]
    fn restores_values_and_grads() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::vector(vec![0.3, -0.1]).unwrap());
        store.get_mut(id).grad = vec![5.0, 6.0];
        grad_check(&mut store, 1e-5, |s, tape| {
            let w = tape.param(s, id);
            let e = tape.exp(w)?;
            tape.sum(e)
        })
        .unwrap();
        assert_eq!(store.get(id).value.values(), &[0.3, -0.1]);
        assert_eq!(store.get(id).grad, vec![5.0, 6.0]);
    }
}
