//! Backpropagation through time with a surrogate spike derivative.
//!
//! For one layer, walking the window backwards with adjoints `gU`, `gI`, `gS`:
//!
//! ```text
//! gS[n] = ext[n] + V^T gI[n+1] - r gU[n+1]
//! gU[n] = alpha gU[n+1] + sigma'(U[n] - threshold) gS[n]
//! gI[n] = beta  gI[n+1] + gU[n+1]
//! dW   += gI[n+1] x[n]^T        dV += gI[n+1] S[n]^T
//! ext_prev[n] = W^T gI[n+1]
//! ```
//!
//! `ext` is the loss gradient for output layers and the downstream layer's
//! `ext_prev` for hidden ones. The `- r gU[n+1]` reset term can be detached.

use crate::error::{Error, Result};
use crate::graph::{Block, ForwardTrace, LayerSpec, LayerTrace, Network, Weights};
use crate::spikes::SpikeTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum SurrogateKind {
    /// `(1/a) exp(-|u - phi| / a)`
    #[default]
    ExpDecay,
    /// `1 / (a (1 + |u - phi| / a)^2)`
    FastSigmoid,
}

impl SurrogateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SurrogateKind::ExpDecay => "exp-decay",
            SurrogateKind::FastSigmoid => "fast-sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exp-decay" => Some(SurrogateKind::ExpDecay),
            "fast-sigmoid" => Some(SurrogateKind::FastSigmoid),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub scale: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self { kind: SurrogateKind::ExpDecay, scale: 1.0 }
    }
}

impl SurrogateSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidConfig(format!("surrogate scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }

    /// Smooth stand-in for the spike function whose derivative is
    /// [`surrogate_derivative`].
    pub fn smoothed_spike(&self, u: f64, phi: f64) -> f64 {
        let a = self.scale;
        let d = u - phi;
        match self.kind {
            SurrogateKind::ExpDecay => {
                if d < 0.0 {
                    (d / a).exp()
                } else {
                    2.0 - (-d / a).exp()
                }
            }
            SurrogateKind::FastSigmoid => 0.5 + (d / a) / (1.0 + d.abs() / a),
        }
    }
}

/// Pseudo-derivative of the spike with respect to the membrane potential.
#[inline]
pub fn surrogate_derivative(u: f64, phi: f64, spec: &SurrogateSpec) -> f64 {
    let a = spec.scale;
    let d = (u - phi).abs();
    match spec.kind {
        SurrogateKind::ExpDecay => (-d / a).exp() / a,
        SurrogateKind::FastSigmoid => {
            let q = 1.0 + d / a;
            1.0 / (a * q * q)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BackwardOptions {
    pub surrogate: SurrogateSpec,
    /// Treat the reset term as a constant.
    pub detach_reset: bool,
}

/// Loss gradients with respect to output spikes, `t_steps x outputs`, row per
/// step (row `n` is the output after step `n + 1`, matching the trace).
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads {
    pub label: Vec<f64>,
    pub task: Option<Vec<f64>>,
}

impl LossGrads {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            label: self.label.iter().map(|g| g * k).collect(),
            task: self.task.as_ref().map(|t| t.iter().map(|g| g * k).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Weights,
    pub recurrent: Option<Weights>,
}

impl LayerGrad {
    fn zeros_like(layer: &LayerSpec) -> Self {
        Self {
            weights: Weights::zeros(layer.out_size, layer.in_size),
            recurrent: layer.recurrent.as_ref().map(|_| Weights::zeros(layer.out_size, layer.out_size)),
        }
    }

    pub fn matrices(&self) -> impl Iterator<Item = &Weights> {
        std::iter::once(&self.weights).chain(self.recurrent.as_ref())
    }

    fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Weights> {
        std::iter::once(&mut self.weights).chain(self.recurrent.as_mut())
    }
}

/// dL/dW (and dL/dV) for every layer, aligned with the network's blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub feature: Vec<LayerGrad>,
    pub label: Vec<LayerGrad>,
    pub task: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        let z = |b: Block| net.block(b).iter().map(LayerGrad::zeros_like).collect();
        Self { feature: z(Block::Feature), label: z(Block::Label), task: z(Block::Task) }
    }

    pub fn block(&self, block: Block) -> &[LayerGrad] {
        match block {
            Block::Feature => &self.feature,
            Block::Label => &self.label,
            Block::Task => &self.task,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerGrad> {
        self.feature.iter().chain(&self.label).chain(&self.task)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrad> {
        self.feature.iter_mut().chain(self.label.iter_mut()).chain(self.task.iter_mut())
    }

    /// Every gradient value in a fixed order (layer order, then storage order).
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers().flat_map(|l| l.matrices()).flat_map(|m| m.as_slice().iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    pub fn scale(&mut self, k: f64) {
        for m in self.layers_mut().flat_map(|l| l.matrices_mut()) {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= k);
        }
    }

    /// Elementwise `self += other`. Shapes must match.
    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            for (ma, mb) in a.matrices_mut().zip(b.matrices()) {
                for (x, y) in ma.as_mut_slice().iter_mut().zip(mb.as_slice()) {
                    *x += y;
                }
            }
        }
    }

    pub fn matches(&self, net: &Network) -> bool {
        Block::ALL.into_iter().all(|b| {
            let (gs, ls) = (self.block(b), net.block(b));
            gs.len() == ls.len()
                && gs.iter().zip(ls).all(|(g, l)| {
                    g.weights.same_shape(&l.weights)
                        && match (&g.recurrent, &l.recurrent) {
                            (Some(gv), Some(lv)) => gv.same_shape(lv),
                            (None, None) => true,
                            _ => false,
                        }
                })
        })
    }
}

enum Presyn<'a> {
    Tensor(&'a SpikeTensor),
    Trace(&'a LayerTrace),
}

impl Presyn<'_> {
    /// Activity feeding step `n` (input step `n`, or trace entry `n - 1`).
    fn for_each_active(&self, n: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            Presyn::Tensor(t) => t.active(n).iter().for_each(|&k| f(k as usize, 1.0)),
            Presyn::Trace(tr) if n > 0 => {
                for (k, &v) in tr.spikes_at(n - 1).iter().enumerate() {
                    if v != 0.0 {
                        f(k, v);
                    }
                }
            }
            Presyn::Trace(_) => {}
        }
    }
}

/// Backward pass of one layer. Accumulates into `grad` and returns the
/// gradient with respect to the presynaptic trace (`t_steps x n_pre`) when
/// `want_input_grad` is set.
#[allow(clippy::too_many_arguments)]
fn backward_layer(
    layer: &LayerSpec,
    trace: &LayerTrace,
    presyn: Presyn<'_>,
    ext: &[f64],
    opts: &BackwardOptions,
    want_input_grad: bool,
    grad: &mut LayerGrad,
) -> Option<Vec<f64>> {
    let size = layer.out_size;
    let n_pre = layer.in_size;
    let t_steps = trace.t_steps();
    let dynamics = trace.dynamics;
    let reset = if opts.detach_reset { 0.0 } else { dynamics.reset };
    let mut input_grad = want_input_grad.then(|| vec![0.0; t_steps * n_pre]);

    let mut g_u_next = vec![0.0; size];
    let mut g_i_next = vec![0.0; size];
    let mut g_s = vec![0.0; size];

    for n in (0..=t_steps).rev() {
        if n < t_steps {
            // I[n+1] was built from x[n] and S[n]
            presyn.for_each_active(n, |pre, v| {
                for (dw, &g) in grad.weights.fan_out_mut(pre).iter_mut().zip(&g_i_next) {
                    *dw += v * g;
                }
            });
            if let (Some(dv), true) = (grad.recurrent.as_mut(), n > 0) {
                for (pre, &v) in trace.spikes_at(n - 1).iter().enumerate() {
                    if v != 0.0 {
                        for (d, &g) in dv.fan_out_mut(pre).iter_mut().zip(&g_i_next) {
                            *d += v * g;
                        }
                    }
                }
            }
            if let (Some(ig), true) = (input_grad.as_mut(), n > 0) {
                let row = &mut ig[(n - 1) * n_pre..n * n_pre];
                for (pre, slot) in row.iter_mut().enumerate() {
                    *slot = dot(layer.weights.fan_out(pre), &g_i_next);
                }
            }
        }
        if n == 0 {
            break;
        }
        let t = n - 1;
        let ext_row = &ext[t * size..(t + 1) * size];
        g_s.copy_from_slice(ext_row);
        if let (Some(v), true) = (layer.recurrent.as_ref(), n < t_steps) {
            for (j, gs) in g_s.iter_mut().enumerate() {
                *gs += dot(v.fan_out(j), &g_i_next);
            }
        }
        let u_row = trace.u_at(t);
        for k in 0..size {
            let gs = g_s[k] - reset * g_u_next[k];
            let g_u =
                dynamics.alpha * g_u_next[k] + surrogate_derivative(u_row[k], dynamics.threshold, &opts.surrogate) * gs;
            let g_i = dynamics.beta * g_i_next[k] + g_u_next[k];
            g_u_next[k] = g_u;
            g_i_next[k] = g_i;
        }
    }
    input_grad
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_trace(trace: &ForwardTrace, net: &Network, grads: &LossGrads) -> Result<()> {
    let same = |traces: &[LayerTrace], layers: &[LayerSpec]| {
        traces.len() == layers.len()
            && traces.iter().zip(layers).all(|(t, l)| t.size == l.out_size && t.s.len() == l.out_size * trace.t_steps)
    };
    if !same(&trace.feature, &net.feature_block) || !same(&trace.label, &net.label_block) {
        return Err(Error::TraceMismatch("layer sizes differ".into()));
    }
    if let Some(task) = &trace.task {
        if !same(task, &net.task_block) {
            return Err(Error::TraceMismatch("task layer sizes differ".into()));
        }
    }
    if trace.input.features() != net.input_size() {
        return Err(Error::TraceMismatch("input width differs".into()));
    }
    let label_len = trace.t_steps * net.label_outputs();
    if grads.label.len() != label_len {
        return Err(Error::TraceMismatch(format!(
            "label loss gradient has {} entries, expected {label_len}",
            grads.label.len()
        )));
    }
    if let Some(g) = &grads.task {
        let Some(out) = trace.task_output() else {
            return Err(Error::TraceMismatch("task loss gradient given but task block was not run".into()));
        };
        if g.len() != trace.t_steps * out.size {
            return Err(Error::TraceMismatch("task loss gradient shape".into()));
        }
    }
    Ok(())
}

fn backward_block(
    layers: &[LayerSpec],
    traces: &[LayerTrace],
    first_presyn: Presyn<'_>,
    output_grad: Vec<f64>,
    opts: &BackwardOptions,
    want_input_grad: bool,
    grads: &mut [LayerGrad],
) -> Option<Vec<f64>> {
    let mut ext = output_grad;
    for k in (0..layers.len()).rev() {
        let presyn = if k == 0 {
            match &first_presyn {
                Presyn::Tensor(t) => Presyn::Tensor(t),
                Presyn::Trace(tr) => Presyn::Trace(tr),
            }
        } else {
            Presyn::Trace(&traces[k - 1])
        };
        let want = k > 0 || want_input_grad;
        ext = backward_layer(&layers[k], &traces[k], presyn, &ext, opts, want, &mut grads[k])?;
    }
    Some(ext)
}

/// Adds the gradient of the loss described by `grads` into `out`.
pub fn backward_into(
    trace: &ForwardTrace,
    net: &Network,
    grads: &LossGrads,
    opts: &BackwardOptions,
    out: &mut GradientSet,
) -> Result<()> {
    check_trace(trace, net, grads)?;
    opts.surrogate.validate()?;
    if !out.matches(net) {
        return Err(Error::ShapeMismatch("gradient set does not match network".into()));
    }
    let has_features = !net.feature_block.is_empty();
    let latent = || match trace.feature.last() {
        Some(tr) => Presyn::Trace(tr),
        None => Presyn::Tensor(&trace.input),
    };

    let mut latent_grad = backward_block(
        &net.label_block,
        &trace.label,
        latent(),
        grads.label.clone(),
        opts,
        has_features,
        &mut out.label,
    );
    if let (Some(task_grad), Some(task_trace)) = (&grads.task, &trace.task) {
        let from_task =
            backward_block(&net.task_block, task_trace, latent(), task_grad.clone(), opts, has_features, &mut out.task);
        if let (Some(acc), Some(extra)) = (latent_grad.as_mut(), from_task) {
            for (a, b) in acc.iter_mut().zip(extra) {
                *a += b;
            }
        }
    }
    if let Some(g) = latent_grad {
        backward_block(
            &net.feature_block,
            &trace.feature,
            Presyn::Tensor(&trace.input),
            g,
            opts,
            false,
            &mut out.feature,
        );
    }
    Ok(())
}

/// Weight gradients of the loss whose output-spike gradients are `grads`.
pub fn backward(trace: &ForwardTrace, net: &Network, grads: &LossGrads, opts: &BackwardOptions) -> Result<GradientSet> {
    let mut out = GradientSet::zeros_like(net);
    backward_into(trace, net, grads, opts, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_mtsnn, forward, forward_smoothed, Control, Topology};
    use crate::lif::NeuronConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surrogate_values() {
        let spec = SurrogateSpec::default();
        assert_eq!(surrogate_derivative(1.25, 1.25, &spec), 1.0);
        assert!((surrogate_derivative(2.25, 1.25, &spec) - (-1.0f64).exp()).abs() < 1e-15);
        for d in [0.1, 0.7, 3.0] {
            for kind in [SurrogateKind::ExpDecay, SurrogateKind::FastSigmoid] {
                let s = SurrogateSpec { kind, scale: 0.6 };
                assert_eq!(surrogate_derivative(5.0 + d, 5.0, &s), surrogate_derivative(5.0 - d, 5.0, &s));
                assert!(surrogate_derivative(5.0 + d, 5.0, &s) < surrogate_derivative(5.0, 5.0, &s));
            }
        }
        let fs = SurrogateSpec { kind: SurrogateKind::FastSigmoid, scale: 2.0 };
        assert_eq!(surrogate_derivative(0.0, 0.0, &fs), 0.5);
    }

    #[test]
    fn smoothed_spike_derivative_matches_surrogate() {
        for kind in [SurrogateKind::ExpDecay, SurrogateKind::FastSigmoid] {
            let spec = SurrogateSpec { kind, scale: 0.8 };
            for u in [-2.0, 0.3, 1.1, 1.4, 3.5] {
                let h = 1e-6;
                let fd = (spec.smoothed_spike(u + h, 1.25) - spec.smoothed_spike(u - h, 1.25)) / (2.0 * h);
                assert!((fd - surrogate_derivative(u, 1.25, &spec)).abs() < 1e-8);
            }
        }
    }

    fn toy() -> (Network, SpikeTensor) {
        let topo = Topology {
            input_size: 2,
            feature: vec![2],
            label_hidden: vec![],
            task_hidden: None,
            num_labels_task1: 1,
            num_labels_task2: 0,
            neuron: NeuronConfig::default(),
            recurrent: false,
            init_gain: 2.0,
        };
        let net = build_mtsnn(&topo, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let active = (0..6).map(|_| (0..2u32).filter(|_| rng.gen_bool(0.6)).collect()).collect();
        (net, SpikeTensor::from_active(2, active, 1))
    }

    fn loss_and_grads(trace: &ForwardTrace, target: f64) -> (f64, LossGrads) {
        // 0.5 * (count - target)^2, so dL/dS[n] = count - target on every step
        let out = trace.label_output();
        let count: f64 = out.counts()[0];
        let diff = count - target;
        (0.5 * diff * diff, LossGrads { label: vec![diff; trace.t_steps], task: None })
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (net, x) = toy();
        let tr = forward(&net, &x, 1.25, false).unwrap();
        let g = backward(&tr, &net, &LossGrads { label: vec![0.0; 6], task: None }, &Default::default()).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn toy_matches_finite_differences() {
        let (net, x) = toy();
        let opts = BackwardOptions::default();
        let control = Control::threshold(1.25);
        let tr = forward_smoothed(&net, &x, control, false, opts.surrogate).unwrap();
        let (_, lg) = loss_and_grads(&tr, 3.0);
        let g = backward(&tr, &net, &lg, &opts).unwrap();

        let h = 1e-4;
        let eval = |n: &Network| {
            let tr = forward_smoothed(n, &x, control, false, opts.surrogate).unwrap();
            loss_and_grads(&tr, 3.0).0
        };
        for (block, layers) in [(Block::Feature, &g.feature), (Block::Label, &g.label)] {
            for (li, lg) in layers.iter().enumerate() {
                for post in 0..lg.weights.n_post() {
                    for pre in 0..lg.weights.n_pre() {
                        let mut p = net.clone();
                        let w = p.block(block)[li].weights.get(post, pre);
                        p.block_mut(block)[li].weights.set(post, pre, w + h);
                        let up = eval(&p);
                        p.block_mut(block)[li].weights.set(post, pre, w - h);
                        let down = eval(&p);
                        let fd = (up - down) / (2.0 * h);
                        let an = lg.weights.get(post, pre);
                        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                        assert!(err < 1e-3 || (fd - an).abs() < 1e-8, "{block:?} {li} ({post},{pre}): fd={fd} an={an}");
                    }
                }
            }
        }
    }

    #[test]
    fn leak_chain_without_spikes() {
        // single neuron never reaching threshold: dU[T]/dU[1] = alpha^(T-1),
        // observed by placing the whole loss gradient on the last step
        let neuron = NeuronConfig { threshold: 1e6, ..NeuronConfig::default() };
        let layer = LayerSpec::new(Weights::from_row_major(1, 1, &[1.0]), None, neuron);
        let net = Network::new(vec![], vec![layer], vec![], 1, 0).unwrap();
        let t = 8;
        let x = SpikeTensor::from_active(1, (0..t).map(|n| if n == 0 { vec![0] } else { vec![] }).collect(), 1);
        let tr = forward(&net, &x, 1e6, false).unwrap();
        let alpha = tr.label_output().dynamics.alpha;
        let beta = tr.label_output().dynamics.beta;
        let spec = SurrogateSpec { kind: SurrogateKind::ExpDecay, scale: 1e6 };
        let sd = surrogate_derivative(tr.label_output().u_at(t - 1)[0], 1e6, &spec);
        let mut label = vec![0.0; t];
        label[t - 1] = 1.0 / sd;
        // the reset path would add a surrogate-weighted term even without spikes
        let g = backward(
            &tr,
            &net,
            &LossGrads { label, task: None },
            &BackwardOptions { surrogate: spec, detach_reset: true },
        )
        .unwrap();
        // only x[0] spikes; dU[T]/dW = sum_{m} alpha^(T-1-m) beta^(m-1) over the
        // current pulse I[m] = beta^(m-1) W for m >= 1, U[T] = sum_{m=1}^{T-1} alpha^(T-1-m) I[m]
        let mut expected = 0.0;
        for m in 1..t {
            expected += alpha.powi((t - 1 - m) as i32) * beta.powi((m - 1) as i32);
        }
        let got = g.label[0].weights.get(0, 0);
        assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn linear_in_upstream_gradient() {
        let net = build_mtsnn(&Topology { input_size: 8, ..small_topology() }, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let active = (0..10).map(|_| (0..8u32).filter(|_| rng.gen_bool(0.5)).collect()).collect();
        let x = SpikeTensor::from_active(8, active, 1);
        let tr = forward(&net, &x, 1.25, true).unwrap();
        let lg = LossGrads {
            label: (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            task: Some((0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        };
        let opts = BackwardOptions::default();
        let g = backward(&tr, &net, &lg, &opts).unwrap();
        let mut g2 = backward(&tr, &net, &lg.scaled(2.0), &opts).unwrap();
        g2.scale(0.5);
        assert_eq!(g, g2);
        assert_eq!(g, backward(&tr, &net, &lg, &opts).unwrap());
        assert!(g.matches(&net) && g.is_finite());
    }

    fn small_topology() -> Topology {
        Topology {
            input_size: 4,
            feature: vec![5],
            label_hidden: vec![4],
            task_hidden: Some(vec![3]),
            num_labels_task1: 2,
            num_labels_task2: 1,
            neuron: NeuronConfig::default(),
            recurrent: false,
            init_gain: 3.0,
        }
    }

    #[test]
    fn label_loss_leaves_task_block_untouched() {
        let net = build_mtsnn(&small_topology(), 1).unwrap();
        let x = SpikeTensor::from_active(4, vec![vec![0, 1, 2, 3]; 8], 1);
        let tr = forward(&net, &x, 1.25, true).unwrap();
        let lg = LossGrads { label: vec![0.3; 8 * 3], task: Some(vec![0.0; 16]) };
        let g = backward(&tr, &net, &lg, &BackwardOptions::default()).unwrap();
        assert!(g.task.iter().all(|l| l.weights.as_slice().iter().all(|&v| v == 0.0)));
        assert!(g.feature.iter().any(|l| l.weights.as_slice().iter().any(|&v| v != 0.0)));

        let no_task = forward(&net, &x, 1.25, false).unwrap();
        let g2 =
            backward(&no_task, &net, &LossGrads { label: lg.label.clone(), task: None }, &BackwardOptions::default())
                .unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn task_loss_reaches_features_unreversed() {
        let net = build_mtsnn(&small_topology(), 2).unwrap();
        let x =
            SpikeTensor::from_active(4, (0..10).map(|k| if k % 2 == 0 { vec![0, 2] } else { vec![1, 3] }).collect(), 1);
        let tr = forward(&net, &x, 1.25, true).unwrap();
        let opts = BackwardOptions::default();
        let label = vec![0.2; 10 * 3];
        let task = vec![-0.4; 10 * 2];
        let both = backward(&tr, &net, &LossGrads { label: label.clone(), task: Some(task.clone()) }, &opts).unwrap();
        let label_only =
            backward(&tr, &net, &LossGrads { label: label.clone(), task: Some(vec![0.0; 20]) }, &opts).unwrap();
        let task_only = backward(&tr, &net, &LossGrads { label: vec![0.0; 30], task: Some(task) }, &opts).unwrap();
        for ((b, l), t) in both.feature.iter().zip(&label_only.feature).zip(&task_only.feature) {
            for ((&vb, &vl), &vt) in b.weights.as_slice().iter().zip(l.weights.as_slice()).zip(t.weights.as_slice()) {
                assert!((vb - (vl + vt)).abs() <= 1e-12 * (1.0 + vb.abs()));
            }
        }
        assert!(!task_only.feature[0].weights.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detached_reset_differs_when_spiking() {
        let net = build_mtsnn(&small_topology(), 3).unwrap();
        let x = SpikeTensor::from_active(4, vec![vec![0, 1, 2, 3]; 12], 1);
        let tr = forward(&net, &x, 1.25, false).unwrap();
        assert!(tr.mean_firing_rate() > 0.0);
        let lg = LossGrads { label: vec![0.5; 36], task: None };
        let a = backward(&tr, &net, &lg, &BackwardOptions::default()).unwrap();
        let b = backward(&tr, &net, &lg, &BackwardOptions { detach_reset: true, ..Default::default() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn mismatched_trace_rejected() {
        let net = build_mtsnn(&small_topology(), 3).unwrap();
        let other = build_mtsnn(&Topology { feature: vec![6], ..small_topology() }, 3).unwrap();
        let x = SpikeTensor::zeros(4, 5, 1);
        let tr = forward(&other, &x, 1.25, false).unwrap();
        let lg = LossGrads { label: vec![0.0; 15], task: None };
        assert!(matches!(backward(&tr, &net, &lg, &Default::default()), Err(Error::TraceMismatch(_))));
        let tr = forward(&net, &x, 1.25, false).unwrap();
        let bad = LossGrads { label: vec![0.0; 14], task: None };
        assert!(matches!(backward(&tr, &net, &bad, &Default::default()), Err(Error::TraceMismatch(_))));
    }

    #[test]
    fn recurrent_gradients_present() {
        let topo = Topology { recurrent: true, ..small_topology() };
        let net = build_mtsnn(&topo, 9).unwrap();
        let x = SpikeTensor::from_active(4, vec![vec![0, 1, 3]; 10], 1);
        let tr = forward(&net, &x, 1.25, false).unwrap();
        let g = backward(&tr, &net, &LossGrads { label: vec![0.1; 30], task: None }, &Default::default()).unwrap();
        assert!(g.matches(&net));
        assert!(g.feature[0].recurrent.is_some());
    }
}
