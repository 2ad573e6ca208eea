//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ParamSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates plus step counter, aligned with the owning
/// `ParamSet`'s entry order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One in-place Adam update. `grads` must mirror `params` in names and shapes.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
    }
    if params.len() != grads.len() {
        return Err(Error::Dimension {
            what: "gradient entry count",
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - betas.0.powi(t);
    let bc2 = 1.0 - betas.1.powi(t);

    for (i, (name, p)) in params.iter_mut().enumerate() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::invalid(format!("gradient for {name} missing")))?;
        if g.shape() != p.shape() {
            return Err(Error::Dimension {
                what: "gradient shape",
                expected: p.len(),
                got: g.len(),
            });
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = betas.0 * *mv + (1.0 - betas.0) * gv;
            *vv = betas.1 * *vv + (1.0 - betas.1) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    if !params.is_finite() {
        return Err(Error::Numeric(
            "parameters became non-finite after Adam step".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params(values: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w0", Tensor::row(values));
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = toy_params(&[1.0, -2.0, 3.0]);
        let grads = toy_params(&[0.0, 0.0, 0.0]);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)
            .unwrap();
        assert_eq!(params.get("w0").unwrap().data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With bias correction, step 1 gives m_hat = g, v_hat = g^2, so the
        // update is -lr * g / (|g| + eps) ~= -lr * sign(g).
        let mut params = toy_params(&[0.0, 0.0]);
        let grads = toy_params(&[0.37, -4.2]);
        let mut state = AdamState::new(&params);
        let lr = 0.001;
        adam_step(&mut params, &grads, &mut state, lr, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS)
            .unwrap();
        let out = params.get("w0").unwrap().data().to_vec();
        assert!((out[0] + lr).abs() < 1e-6, "{out:?}");
        assert!((out[1] - lr).abs() < 1e-6, "{out:?}");
    }

    #[test]
    fn identical_calls_from_identical_state_agree() {
        let run = || {
            let mut params = toy_params(&[0.5, 0.1, -0.3]);
            let grads = toy_params(&[0.2, -0.4, 0.6]);
            let mut state = AdamState::new(&params);
            for _ in 0..5 {
                adam_step(
                    &mut params,
                    &grads,
                    &mut state,
                    0.01,
                    (ADAM_BETA1, ADAM_BETA2),
                    ADAM_EPS,
                )
                .unwrap();
            }
            params.get("w0").unwrap().data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_nonpositive_lr() {
        let mut params = toy_params(&[1.0]);
        let grads = toy_params(&[1.0]);
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &grads, &mut state, 0.0, (0.9, 0.999), 1e-8).is_err());
    }
}
