use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic - numeric| / max(1, |analytic|)`
    pub max_rel_err: f64,
    pub coords: usize,
}

fn eval<F>(f: &F, points: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, in 64-bit precision, over every coordinate of every input.
pub fn finite_diff_check_many<F>(f: F, points: &[Tensor<f64>], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if epsilon <= 0.0 {
        return Err(crate::error::invalid("finite_diff_check", "epsilon must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(points)
        .map(|(v, p)| tape.grad(*v).map_or_else(|| vec![0.0; p.numel()], |g| g.to_vec()))
        .collect();

    let mut worst = 0.0f64;
    let mut coords = 0;
    let mut probe = points.to_vec();
    for (k, point) in points.iter().enumerate() {
        for i in 0..point.numel() {
            let x0 = point.data()[i];
            probe[k].data_mut()[i] = x0 + epsilon;
            let up = eval(&f, &probe)?;
            probe[k].data_mut()[i] = x0 - epsilon;
            let down = eval(&f, &probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[k][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            coords += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: worst,
        coords,
    })
}

/// Single-input form of [`finite_diff_check_many`].
pub fn finite_diff_check<F>(f: F, point: &Tensor<f64>, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    finite_diff_check_many(|t, v| f(t, v[0]), std::slice::from_ref(point), epsilon)
}
