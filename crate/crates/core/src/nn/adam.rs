use serde::{Deserialize, Serialize};

use super::{Mlp, MlpGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: MlpGrads,
    second: MlpGrads,
}

impl AdamState {
    pub fn new(params: &Mlp, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: MlpGrads::zeros_like(params),
            second: MlpGrads::zeros_like(params),
        }
    }
}

/// One bias-corrected Adam update.
///
/// Fails without touching anything if a gradient is non-finite.
pub fn adam_step(
    mut params: Mlp,
    grads: &MlpGrads,
    mut state: AdamState,
) -> Result<(Mlp, AdamState)> {
    if !grads.matches(&params) || !state.first.matches(&params) {
        return Err(Error::InvalidArgument(
            "gradient shape does not match parameters".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numerical(
            "non-finite gradient; training diverged".into(),
        ));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    };

    for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in params
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first.layers)
        .zip(&mut state.second.layers)
    {
        for (((p, &g), m), v) in layer
            .weights
            .iter_mut()
            .zip(gw.iter())
            .zip(mw.iter_mut())
            .zip(vw.iter_mut())
        {
            update(p, g, m, v);
        }
        for (((p, &g), m), v) in layer
            .bias
            .iter_mut()
            .zip(gb.iter())
            .zip(mb.iter_mut())
            .zip(vb.iter_mut())
        {
            update(p, g, m, v);
        }
    }
    Ok((params, state))
}
