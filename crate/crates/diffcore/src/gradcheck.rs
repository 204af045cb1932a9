use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor for the relative error, so components where both
    /// gradients vanish do not divide by zero.
    pub floor: f64,
    /// Probe at most this many coordinates per input (evenly strided).
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_coords: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences at `points`.
///
/// `f` receives a fresh tape and one leaf per point and must return a
/// one-element node. It is re-evaluated twice per probed coordinate, so any
/// randomness inside it has to be reseeded on every call.
pub fn grad_check<F>(f: F, points: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut probe = points.to_vec();
    for (pi, (point, &var)) in points.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(var, point);
        let n = point.len();
        let stride = match opts.max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let orig = point.data()[idx];
            probe[pi].data_mut()[idx] = orig + opts.step;
            let up = eval(&probe)?;
            probe[pi].data_mut()[idx] = orig - opts.step;
            let down = eval(&probe)?;
            probe[pi].data_mut()[idx] = orig;

            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.data()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
