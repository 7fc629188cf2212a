use crate::error::{Error, Result};
use crate::grad::GradientSet;
use crate::graph::Network;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

/// Moment estimates and step counter. Moments are allocated on the first
/// Adam step.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub optimizer: Optimizer,
    pub step: u64,
    m: Option<GradientSet>,
    v: Option<GradientSet>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer) -> Self {
        Self { optimizer, step: 0, m: None, v: None }
    }
}

/// Applies one update in place. Aborts without touching the network if the
/// gradient has non-finite entries.
pub fn optimizer_step(net: &mut Network, grads: &GradientSet, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if !grads.matches(net) {
        return Err(Error::ShapeMismatch("gradient set does not match network".into()));
    }
    for (block, layers) in [("feature", &grads.feature), ("label", &grads.label), ("task", &grads.task)] {
        for (k, layer) in layers.iter().enumerate() {
            if !layer.matrices().all(|m| m.as_slice().iter().all(|v| v.is_finite())) {
                return Err(Error::NonFiniteGradient(format!("{block} layer {k}")));
            }
        }
    }
    state.step += 1;
    match state.optimizer {
        Optimizer::Sgd => {
            for (layer, g) in net.layers_mut().zip(grads.layers()) {
                let params = std::iter::once(&mut layer.weights).chain(layer.recurrent.as_mut());
                for (w, gw) in params.zip(g.matrices()) {
                    for (p, d) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                        *p -= lr * d;
                    }
                }
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let m = state.m.get_or_insert_with(|| GradientSet::zeros_like(net));
            let v = state.v.get_or_insert_with(|| GradientSet::zeros_like(net));
            if !m.matches(net) || !v.matches(net) {
                return Err(Error::ShapeMismatch("optimizer state does not match network".into()));
            }
            let bc1 = 1.0 - beta1.powi(state.step as i32);
            let bc2 = 1.0 - beta2.powi(state.step as i32);
            let layers = net.layers_mut().zip(grads.layers()).zip(m.layers_mut().zip(v.layers_mut()));
            for ((layer, g), (ml, vl)) in layers {
                let params = std::iter::once(&mut layer.weights).chain(layer.recurrent.as_mut());
                let moments = std::iter::once((&mut ml.weights, &mut vl.weights))
                    .chain(ml.recurrent.as_mut().zip(vl.recurrent.as_mut()));
                for ((w, gw), (mw, vw)) in params.zip(g.matrices()).zip(moments) {
                    let it = w
                        .as_mut_slice()
                        .iter_mut()
                        .zip(gw.as_slice())
                        .zip(mw.as_mut_slice().iter_mut().zip(vw.as_mut_slice().iter_mut()));
                    for ((p, &d), (mi, vi)) in it {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
    Ok(())
}
