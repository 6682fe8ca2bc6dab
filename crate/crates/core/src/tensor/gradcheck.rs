use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, element index)` of the worst relative error.
    pub worst: (usize, usize),
    pub tol: f64,
    pub passed: bool,
}

/// Compares the tape gradient of a scalar function of one tensor against
/// central finite differences with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h, tol)
}

/// Multi-input variant of [`grad_check`].
///
/// The relative error of an element is `|analytic - numeric|` divided by
/// `max(|analytic|, |numeric|, floor)`, where `floor` is `1e-3` times the
/// largest analytic magnitude across all inputs. The floor keeps elements
/// whose true gradient is essentially zero from dominating the report with
/// finite-difference round-off.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x)).collect();
        let out = f(&mut tape, &vars)?;
        if tape.shape(out) != (1, 1) {
            return Err(Error::Shape("grad_check needs a scalar function".into()));
        }
        Ok(tape.scalar(out))
    };

    let tracked: Vec<Tensor> = inputs.iter().map(|x| x.clone().trainable()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = tracked.iter().map(|x| tape.leaf(x)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&tracked)
        .map(|(v, x)| grads.get(*v).map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for which in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[which].len());
        for k in 0..inputs[which].len() {
            let orig = probe[which].data()[k];
            probe[which].data_mut()[k] = orig + h;
            let plus = eval(&probe)?;
            probe[which].data_mut()[k] = orig - h;
            let minus = eval(&probe)?;
            probe[which].data_mut()[k] = orig;
            col.push((plus - minus) / (2.0 * h));
        }
        numeric.push(col);
    }

    let scale = analytic
        .iter()
        .flatten()
        .fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        tol,
        passed: true,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (k, (ga, gn)) in a.iter().zip(n).enumerate() {
            let abs = (ga - gn).abs();
            let rel = abs / ga.abs().max(gn.abs()).max(floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, k);
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
