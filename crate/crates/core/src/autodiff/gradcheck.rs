use super::{AutodiffError, Tape, Tensor, Var};

/// Compares the tape gradient of a scalar function against central
/// differences.
///
/// `f` records its computation on the supplied tape, starting from the
/// variable holding `x`. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|)` over all coordinates.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv)?;
    let analytic = tape.backward(loss)?.wrt(xv).clone();

    let eval = |point: Tensor| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let v = tape.constant(point);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
