use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Smallest denominator of the relative error; exact zeros measured by
/// central differences at `eps = 1e-5` carry round-off near `1e-11`.
pub const DENOM_FLOOR: f64 = 1e-6;

/// Compares the tape gradient of scalar `f` at `point` with central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-6, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        eps,
    )
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_on(Tape::new(), f, points, eps)
}

/// [`grad_check_many`] computing the analytic side on a caller-supplied tape.
pub fn grad_check_on<F>(mut tape: Tape, f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::Shape {
                op: "grad_check",
                lhs: v.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok(v.item())
    };

    let mut work = points.to_vec();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..points[t].numel() {
            let x0 = points[t].data()[i];
            work[t].data_mut()[i] = x0 + eps;
            let plus = eval(&work)?;
            work[t].data_mut()[i] = x0 - eps;
            let minus = eval(&work)?;
            work[t].data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.as_ref().map_or(0.0, |g| g.data()[i]);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
