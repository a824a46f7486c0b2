//! Central finite-difference checks of tape gradients.

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so that gradients that are
/// numerically zero compare on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape gradient of `loss` against central differences with
/// step `h` for each named parameter, probing at most `per_tensor` evenly
/// spaced entries of each.
pub fn check_gradients<L>(
    params: &ParamStore<f64>,
    names: &[&str],
    h: f64,
    per_tensor: usize,
    loss: L,
) -> Result<Vec<GradCheck>>
where
    L: Fn(&mut Tape<'_, f64>) -> Result<NodeId>,
{
    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(p);
        let l = loss(&mut tape)?;
        Ok(tape.scalar(l))
    };
    let grads = {
        let mut tape = Tape::new(params);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(names.len());
    for &name in names {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?
            .clone();
        let n = g.len();
        let stride = (n / per_tensor.max(1)).max(1);
        let mut worst = 0.0f64;
        let mut checked = 0;
        for i in (0..n).step_by(stride).take(per_tensor) {
            let orig = probe.get(name).expect("checked above").data()[i];
            probe.get_mut(name).expect("checked above").data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name).expect("checked above").data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name).expect("checked above").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(g.data()[i], numeric));
            checked += 1;
        }
        out.push(GradCheck {
            name: name.to_string(),
            checked,
            max_rel_err: worst,
        });
    }
    Ok(out)
}
