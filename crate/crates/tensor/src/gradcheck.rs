//! Central-difference verification of the backward pass.
//!
//! The numeric side never touches the tape's backward rules: it re-runs the
//! forward function on perturbed parameters through a non-recording tape.

use crate::error::Result;
use crate::tape::Tape;
use crate::tensor::Param;

/// Relative-error denominators are floored here so that near-zero gradient
/// pairs compare at an effective absolute tolerance of `rtol * FLOOR`.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst component and the two gradient values there.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub rtol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "grad_check: {} (max rel err {:.3e}, rtol {:.1e})\n",
            if self.pass { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.rtol
        );
        for e in &self.entries {
            s.push_str(&format!(
                "  {:<40} max rel {:.3e}  (ad {:+.6e} fd {:+.6e} @ {})\n",
                e.name, e.max_rel_err, e.analytic, e.numeric, e.worst_index
            ));
        }
        s
    }
}

/// Compares tape gradients against central finite differences for every
/// component of every parameter. `f` must be deterministic: run stochastic
/// pieces in eval mode or pin their stream.
pub fn grad_check<F>(params: &mut [Param], f: F, rtol: f64, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Param]) -> Result<crate::tensor::Tensor>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let grads = tape.backward(&loss)?;

    let mut entries = Vec::with_capacity(params.len());
    let mut global_max = 0.0f64;

    for pi in 0..params.len() {
        let name = params[pi].name.clone();
        let analytic = grads
            .get(&name)
            .cloned()
            .unwrap_or_else(|| crate::tensor::Tensor::zeros(params[pi].value.shape()));

        let mut worst = GradCheckEntry {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };

        for j in 0..params[pi].value.numel() {
            let orig = params[pi].value.data()[j];

            params[pi].value = params[pi].value.with_value_at(j, orig + step)?;
            let up = eval_loss(&f, params)?;
            params[pi].value = params[pi].value.with_value_at(j, orig - step)?;
            let down = eval_loss(&f, params)?;
            params[pi].value = params[pi].value.with_value_at(j, orig)?;

            let fd = (up - down) / (2.0 * step);
            let ad = analytic.data()[j];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(REL_FLOOR);
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_index = j;
                worst.analytic = ad;
                worst.numeric = fd;
            }
        }
        global_max = global_max.max(worst.max_rel_err);
        entries.push(worst);
    }

    Ok(GradCheckReport {
        entries,
        max_rel_err: global_max,
        rtol,
        pass: global_max < rtol,
    })
}

fn eval_loss<F>(f: &F, params: &[Param]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Param]) -> Result<crate::tensor::Tensor>,
{
    let mut tape = Tape::inference();
    f(&mut tape, params)?.item()
}
