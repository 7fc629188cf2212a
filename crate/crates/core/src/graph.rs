//! Three-block network: a feature-extraction block feeding a label
//! classifier and a task classifier, all built from LIF layers.
//!
//! Layers are evaluated layer-major over the whole window. Layer `l` at step
//! `n + 1` only reads layer `l - 1` at step `n`, so running each layer over all
//! steps before the next gives the same result as interleaving them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grad::SurrogateSpec;
use crate::lif::{Dynamics, LayerState, NeuronConfig};
use crate::spikes::SpikeTensor;

/// Dense synaptic matrix stored presynaptic-major: the `n_post` weights leaving
/// presynaptic neuron `j` are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    n_pre: usize,
    n_post: usize,
    data: Vec<f64>,
}

impl Weights {
    pub fn zeros(n_post: usize, n_pre: usize) -> Self {
        Self { n_pre, n_post, data: vec![0.0; n_pre * n_post] }
    }

    /// Builds from a row-major `n_post x n_pre` matrix (row = postsynaptic neuron).
    pub fn from_row_major(n_post: usize, n_pre: usize, rows: &[f64]) -> Self {
        assert_eq!(rows.len(), n_post * n_pre);
        let mut w = Self::zeros(n_post, n_pre);
        for post in 0..n_post {
            for pre in 0..n_pre {
                w.set(post, pre, rows[post * n_pre + pre]);
            }
        }
        w
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for post in 0..self.n_post {
            for pre in 0..self.n_pre {
                out.push(self.get(post, pre));
            }
        }
        out
    }

    pub fn n_pre(&self) -> usize {
        self.n_pre
    }

    pub fn n_post(&self) -> usize {
        self.n_post
    }

    #[inline]
    pub fn get(&self, post: usize, pre: usize) -> f64 {
        self.data[pre * self.n_post + post]
    }

    #[inline]
    pub fn set(&mut self, post: usize, pre: usize, v: f64) {
        self.data[pre * self.n_post + post] = v;
    }

    #[inline]
    pub fn fan_out(&self, pre: usize) -> &[f64] {
        &self.data[pre * self.n_post..(pre + 1) * self.n_post]
    }

    #[inline]
    pub fn fan_out_mut(&mut self, pre: usize) -> &mut [f64] {
        &mut self.data[pre * self.n_post..(pre + 1) * self.n_post]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Weights) -> bool {
        self.n_pre == other.n_pre && self.n_post == other.n_post
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub in_size: usize,
    pub out_size: usize,
    pub weights: Weights,
    pub recurrent: Option<Weights>,
    pub neuron: NeuronConfig,
}

impl LayerSpec {
    pub fn new(weights: Weights, recurrent: Option<Weights>, neuron: NeuronConfig) -> Self {
        Self { in_size: weights.n_pre, out_size: weights.n_post, weights, recurrent, neuron }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.weights.n_pre != self.in_size || self.weights.n_post != self.out_size {
            return Err(Error::InconsistentTopology(format!(
                "{what}: weights are {}x{}, layer is {}x{}",
                self.weights.n_post, self.weights.n_pre, self.out_size, self.in_size
            )));
        }
        if let Some(v) = &self.recurrent {
            if v.n_pre != self.out_size || v.n_post != self.out_size {
                return Err(Error::InconsistentTopology(format!(
                    "{what}: recurrent matrix must be {0}x{0}",
                    self.out_size
                )));
            }
        }
        if self.out_size == 0 {
            return Err(Error::InconsistentTopology(format!("{what}: empty layer")));
        }
        self.neuron.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Feature,
    Label,
    Task,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Feature, Block::Label, Block::Task];

    pub fn name(&self) -> &'static str {
        match self {
            Block::Feature => "feature",
            Block::Label => "label",
            Block::Task => "task",
        }
    }
}

pub const NUM_TASKS: usize = 2;

/// Layer sizes and neuron settings used to build a fresh network.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub input_size: usize,
    pub feature: Vec<usize>,
    /// Hidden label-classifier layers; the output layer of
    /// `num_labels_task1 + num_labels_task2` neurons is appended.
    pub label_hidden: Vec<usize>,
    /// Hidden task-classifier layers; the 2-neuron output layer is appended.
    /// `None` builds no task block.
    pub task_hidden: Option<Vec<usize>>,
    pub num_labels_task1: usize,
    pub num_labels_task2: usize,
    pub neuron: NeuronConfig,
    pub recurrent: bool,
    /// Uniform init bound is `init_gain / sqrt(fan_in)`.
    pub init_gain: f64,
}

pub const DEFAULT_INIT_GAIN: f64 = 1.0;

impl Topology {
    /// 2312 inputs, feature 2x`feature_width`, label 128 + 12, task 128 + 2.
    pub fn nmnist(feature_width: usize) -> Self {
        Self {
            input_size: crate::data::NMNIST_FEATURES,
            feature: vec![feature_width; 2],
            label_hidden: vec![128],
            task_hidden: Some(vec![128]),
            num_labels_task1: 10,
            num_labels_task2: 2,
            neuron: NeuronConfig::default(),
            recurrent: false,
            init_gain: DEFAULT_INIT_GAIN,
        }
    }

    fn block_sizes(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut label = self.label_hidden.clone();
        label.push(self.num_labels_task1 + self.num_labels_task2);
        let task = match &self.task_hidden {
            Some(hidden) => {
                let mut t = hidden.clone();
                t.push(NUM_TASKS);
                t
            }
            None => Vec::new(),
        };
        (self.feature.clone(), label, task)
    }
}

/// Network weights and per-layer neuron settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub feature_block: Vec<LayerSpec>,
    pub label_block: Vec<LayerSpec>,
    pub task_block: Vec<LayerSpec>,
    pub num_labels_task1: usize,
    pub num_labels_task2: usize,
    pub seed: u64,
    pub init_gain: f64,
}

impl Network {
    pub fn new(
        feature_block: Vec<LayerSpec>,
        label_block: Vec<LayerSpec>,
        task_block: Vec<LayerSpec>,
        num_labels_task1: usize,
        num_labels_task2: usize,
    ) -> Result<Self> {
        let net = Self {
            feature_block,
            label_block,
            task_block,
            num_labels_task1,
            num_labels_task2,
            seed: 0,
            init_gain: 0.0,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_block.is_empty() {
            return Err(Error::InconsistentTopology("label block has no layers".into()));
        }
        for block in Block::ALL {
            let layers = self.block(block);
            for (k, layer) in layers.iter().enumerate() {
                layer.validate(&format!("{} layer {k}", block.name()))?;
                if k > 0 && layers[k - 1].out_size != layer.in_size {
                    return Err(Error::InconsistentTopology(format!(
                        "{} layer {k} expects {} inputs but previous layer has {}",
                        block.name(),
                        layer.in_size,
                        layers[k - 1].out_size
                    )));
                }
            }
        }
        let latent = self.latent_size();
        for block in [Block::Label, Block::Task] {
            if let Some(first) = self.block(block).first() {
                if first.in_size != latent {
                    return Err(Error::InconsistentTopology(format!(
                        "{} block expects {} inputs but feature output has {latent}",
                        block.name(),
                        first.in_size
                    )));
                }
            }
        }
        let labels = self.num_labels_task1 + self.num_labels_task2;
        let label_out = self.label_block.last().unwrap().out_size;
        if label_out != labels {
            return Err(Error::InconsistentTopology(format!(
                "label output has {label_out} neurons, tasks need {} + {}",
                self.num_labels_task1, self.num_labels_task2
            )));
        }
        if let Some(last) = self.task_block.last() {
            if last.out_size != NUM_TASKS {
                return Err(Error::InconsistentTopology(format!(
                    "task output has {} neurons, expected {NUM_TASKS}",
                    last.out_size
                )));
            }
        }
        Ok(())
    }

    pub fn block(&self, block: Block) -> &[LayerSpec] {
        match block {
            Block::Feature => &self.feature_block,
            Block::Label => &self.label_block,
            Block::Task => &self.task_block,
        }
    }

    pub fn block_mut(&mut self, block: Block) -> &mut Vec<LayerSpec> {
        match block {
            Block::Feature => &mut self.feature_block,
            Block::Label => &mut self.label_block,
            Block::Task => &mut self.task_block,
        }
    }

    pub fn input_size(&self) -> usize {
        self.feature_block.first().or(self.label_block.first()).map(|l| l.in_size).unwrap_or(0)
    }

    /// Size of the vector handed to the classifier blocks.
    pub fn latent_size(&self) -> usize {
        match self.feature_block.last() {
            Some(l) => l.out_size,
            None => self.input_size(),
        }
    }

    pub fn label_outputs(&self) -> usize {
        self.num_labels_task1 + self.num_labels_task2
    }

    pub fn has_task_block(&self) -> bool {
        !self.task_block.is_empty()
    }

    pub fn layers(&self) -> impl Iterator<Item = (Block, usize, &LayerSpec)> {
        Block::ALL.into_iter().flat_map(move |b| self.block(b).iter().enumerate().map(move |(k, l)| (b, k, l)))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerSpec> {
        self.feature_block.iter_mut().chain(self.label_block.iter_mut()).chain(self.task_block.iter_mut())
    }
}

/// Builds a network with uniform `[-k, k]` weights, `k = init_gain / sqrt(fan_in)`,
/// drawn from a ChaCha8 stream seeded with `seed` in layer order (feature,
/// label, task), each matrix in presynaptic-major order, recurrent after
/// feed-forward.
pub fn build_mtsnn(topo: &Topology, seed: u64) -> Result<Network> {
    topo.neuron.validate()?;
    if topo.num_labels_task1 + topo.num_labels_task2 == 0 {
        return Err(Error::InconsistentTopology("no label outputs".into()));
    }
    if topo.input_size == 0 {
        return Err(Error::InconsistentTopology("zero input size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n_post: usize, n_pre: usize, fan_in: usize| {
        let k = topo.init_gain / (fan_in as f64).sqrt();
        let mut w = Weights::zeros(n_post, n_pre);
        for v in w.as_mut_slice() {
            *v = if k > 0.0 { rng.gen_range(-k..=k) } else { 0.0 };
        }
        w
    };
    let (feature, label, task) = topo.block_sizes();
    let latent = feature.last().copied().unwrap_or(topo.input_size);
    let mut make_block = |sizes: &[usize], mut fan_in: usize| {
        let mut layers = Vec::with_capacity(sizes.len());
        for &out in sizes {
            if out == 0 {
                return Err(Error::InconsistentTopology("zero-width layer".into()));
            }
            let w = uniform(out, fan_in, fan_in);
            let v = topo.recurrent.then(|| uniform(out, out, out));
            layers.push(LayerSpec::new(w, v, topo.neuron));
            fan_in = out;
        }
        Ok(layers)
    };
    let feature_block = make_block(&feature, topo.input_size)?;
    let label_block = make_block(&label, latent)?;
    let task_block = make_block(&task, latent)?;
    let mut net = Network::new(feature_block, label_block, task_block, topo.num_labels_task1, topo.num_labels_task2)?;
    net.seed = seed;
    net.init_gain = topo.init_gain;
    Ok(net)
}

/// Control signal applied to the feature and label blocks for one forward pass.
/// The task block always keeps its own stored configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Control {
    pub threshold: Option<f64>,
    pub i_ext: Option<f64>,
}

impl Control {
    pub fn threshold(phi: f64) -> Self {
        Self { threshold: Some(phi), i_ext: None }
    }

    pub fn ext_current(i_ext: f64) -> Self {
        Self { threshold: None, i_ext: Some(i_ext) }
    }

    fn apply(&self, cfg: &NeuronConfig) -> Result<NeuronConfig> {
        let mut cfg = *cfg;
        if let Some(phi) = self.threshold {
            cfg = crate::lif::set_threshold(&cfg, phi)?;
        }
        if let Some(i_ext) = self.i_ext {
            cfg.i_ext = i_ext;
        }
        Ok(cfg)
    }
}

/// Per-step record of one layer over the window. Index `n` holds the state
/// after step `n + 1`, i.e. `u[n * size + k]` is `U_k[n + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub size: usize,
    pub dynamics: Dynamics,
    pub u: Vec<f64>,
    pub i: Vec<f64>,
    pub s: Vec<f64>,
}

impl LayerTrace {
    pub fn t_steps(&self) -> usize {
        self.s.len() / self.size
    }

    pub fn spikes_at(&self, n: usize) -> &[f64] {
        &self.s[n * self.size..(n + 1) * self.size]
    }

    pub fn u_at(&self, n: usize) -> &[f64] {
        &self.u[n * self.size..(n + 1) * self.size]
    }

    /// Per-neuron spike count over the window.
    pub fn counts(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.size];
        for n in 0..self.t_steps() {
            for (acc, &s) in c.iter_mut().zip(self.spikes_at(n)) {
                *acc += s;
            }
        }
        c
    }

    pub fn total_spikes(&self) -> f64 {
        self.s.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub t_steps: usize,
    pub input: SpikeTensor,
    pub feature: Vec<LayerTrace>,
    pub label: Vec<LayerTrace>,
    /// Present iff the task block was evaluated.
    pub task: Option<Vec<LayerTrace>>,
}

impl ForwardTrace {
    pub fn label_output(&self) -> &LayerTrace {
        self.label.last().expect("label block is never empty")
    }

    pub fn task_output(&self) -> Option<&LayerTrace> {
        self.task.as_ref().and_then(|t| t.last())
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerTrace> {
        self.feature.iter().chain(self.label.iter()).chain(self.task.iter().flatten())
    }

    /// Mean spikes per neuron per step over every recorded layer.
    pub fn mean_firing_rate(&self) -> f64 {
        let (spikes, slots) = self.layers().fold((0.0, 0usize), |(s, n), l| (s + l.total_spikes(), n + l.s.len()));
        if slots == 0 {
            0.0
        } else {
            spikes / slots as f64
        }
    }
}

#[derive(Clone, Copy)]
enum SpikeRule {
    Hard,
    Smoothed(SurrogateSpec),
}

/// Source of presynaptic activity for one layer.
enum LayerInput<'a> {
    Tensor(&'a SpikeTensor),
    /// Previous layer's trace; its step `n` activity is the trace entry `n - 1`.
    Trace(&'a LayerTrace),
}

impl LayerInput<'_> {
    fn for_each_active(&self, n: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            LayerInput::Tensor(t) => {
                for &k in t.active(n) {
                    f(k as usize, 1.0);
                }
            }
            LayerInput::Trace(tr) => {
                if n == 0 {
                    return;
                }
                for (k, &v) in tr.spikes_at(n - 1).iter().enumerate() {
                    if v != 0.0 {
                        f(k, v);
                    }
                }
            }
        }
    }
}

fn run_layer(
    layer: &LayerSpec,
    dynamics: Dynamics,
    input: LayerInput<'_>,
    t_steps: usize,
    rule: SpikeRule,
) -> LayerTrace {
    let size = layer.out_size;
    let mut state = LayerState::zeros(size);
    let mut drive = vec![0.0; size];
    let mut trace = LayerTrace {
        size,
        dynamics,
        u: Vec::with_capacity(size * t_steps),
        i: Vec::with_capacity(size * t_steps),
        s: Vec::with_capacity(size * t_steps),
    };
    for n in 0..t_steps {
        drive.iter_mut().for_each(|d| *d = 0.0);
        input.for_each_active(n, |pre, v| {
            for (d, &w) in drive.iter_mut().zip(layer.weights.fan_out(pre)) {
                *d += v * w;
            }
        });
        if let Some(rec) = &layer.recurrent {
            for (pre, &v) in state.s.iter().enumerate() {
                if v != 0.0 {
                    for (d, &w) in drive.iter_mut().zip(rec.fan_out(pre)) {
                        *d += v * w;
                    }
                }
            }
        }
        match rule {
            SpikeRule::Hard => state.advance(&dynamics, &drive),
            SpikeRule::Smoothed(spec) => state.advance_with(&dynamics, &drive, |u, phi| spec.smoothed_spike(u, phi)),
        }
        trace.u.extend_from_slice(&state.u);
        trace.i.extend_from_slice(&state.i);
        trace.s.extend_from_slice(&state.s);
    }
    trace
}

fn run_block(
    layers: &[LayerSpec],
    control: Option<&Control>,
    first_input: LayerInput<'_>,
    t_steps: usize,
    rule: SpikeRule,
) -> Result<Vec<LayerTrace>> {
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(layers.len());
    for (k, layer) in layers.iter().enumerate() {
        let cfg = match control {
            Some(c) => c.apply(&layer.neuron)?,
            None => layer.neuron,
        };
        let dynamics = Dynamics::from_config(&cfg)?;
        let input = if k == 0 {
            match &first_input {
                LayerInput::Tensor(t) => LayerInput::Tensor(t),
                LayerInput::Trace(tr) => LayerInput::Trace(tr),
            }
        } else {
            LayerInput::Trace(&traces[k - 1])
        };
        let trace = run_layer(layer, dynamics, input, t_steps, rule);
        traces.push(trace);
    }
    Ok(traces)
}

fn forward_impl(
    net: &Network,
    input: &SpikeTensor,
    control: Control,
    use_task_block: bool,
    rule: SpikeRule,
) -> Result<ForwardTrace> {
    if input.features() != net.input_size() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features, network expects {}",
            input.features(),
            net.input_size()
        )));
    }
    let t_steps = input.t_steps();
    if t_steps == 0 {
        return Err(Error::DimensionMismatch("input has no time steps".into()));
    }
    if use_task_block && !net.has_task_block() {
        return Err(Error::InconsistentTopology("network has no task block".into()));
    }
    let feature = run_block(&net.feature_block, Some(&control), LayerInput::Tensor(input), t_steps, rule)?;
    let latent = || match feature.last() {
        Some(tr) => LayerInput::Trace(tr),
        None => LayerInput::Tensor(input),
    };
    let label = run_block(&net.label_block, Some(&control), latent(), t_steps, rule)?;
    let task = if use_task_block { Some(run_block(&net.task_block, None, latent(), t_steps, rule)?) } else { None };
    Ok(ForwardTrace { t_steps, input: input.clone(), feature, label, task })
}

/// Runs the network with the feature and label blocks at threshold `phi`.
/// The task block keeps its stored threshold and runs only when requested.
pub fn forward(net: &Network, input: &SpikeTensor, phi: f64, use_task_block: bool) -> Result<ForwardTrace> {
    forward_impl(net, input, Control::threshold(phi), use_task_block, SpikeRule::Hard)
}

/// Runs the network with thresholds at their stored values and `i_ext`
/// injected into every feature and label neuron on every step.
pub fn forward_with_ext_current(
    net: &Network,
    input: &SpikeTensor,
    i_ext: f64,
    use_task_block: bool,
) -> Result<ForwardTrace> {
    forward_impl(net, input, Control::ext_current(i_ext), use_task_block, SpikeRule::Hard)
}

pub fn forward_with_control(
    net: &Network,
    input: &SpikeTensor,
    control: Control,
    use_task_block: bool,
) -> Result<ForwardTrace> {
    forward_impl(net, input, control, use_task_block, SpikeRule::Hard)
}

/// Forward pass with every spike replaced by its smoothed surrogate value.
/// The result is a differentiable function of the weights whose exact
/// gradient is what [`crate::grad::backward`] computes on this trace; it
/// exists for finite-difference checks.
pub fn forward_smoothed(
    net: &Network,
    input: &SpikeTensor,
    control: Control,
    use_task_block: bool,
    surrogate: SurrogateSpec,
) -> Result<ForwardTrace> {
    forward_impl(net, input, control, use_task_block, SpikeRule::Smoothed(surrogate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lif::ResetMode;

    fn toy_topology() -> Topology {
        Topology {
            input_size: 6,
            feature: vec![5, 4],
            label_hidden: vec![3],
            task_hidden: Some(vec![3]),
            num_labels_task1: 2,
            num_labels_task2: 1,
            neuron: NeuronConfig::default(),
            recurrent: false,
            init_gain: 3.0,
        }
    }

    fn random_input(features: usize, t: usize, seed: u64) -> SpikeTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let active = (0..t).map(|_| (0..features as u32).filter(|_| rng.gen_bool(0.4)).collect()).collect();
        SpikeTensor::from_active(features, active, 1000)
    }

    #[test]
    fn nmnist_build_is_deterministic() {
        let topo = Topology::nmnist(512);
        let a = build_mtsnn(&topo, 7).unwrap();
        let b = build_mtsnn(&topo, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.feature_block.len(), 2);
        assert_eq!(a.label_block.last().unwrap().out_size, 12);
        assert_eq!(a.task_block.last().unwrap().out_size, 2);
        assert_eq!(a.input_size(), 2312);
        assert!(a.layers().all(|(_, _, l)| l.recurrent.is_none()));
        let c = build_mtsnn(&topo, 8).unwrap();
        assert_ne!(a.feature_block[0].weights, c.feature_block[0].weights);
    }

    #[test]
    fn label_size_mismatch_rejected() {
        let mut net = build_mtsnn(&toy_topology(), 1).unwrap();
        net.num_labels_task1 = 3;
        assert!(matches!(net.validate(), Err(Error::InconsistentTopology(_))));

        let mut layers = build_mtsnn(&Topology::nmnist(16), 1).unwrap();
        let last = layers.label_block.pop().unwrap();
        let w = Weights::zeros(11, last.in_size);
        layers.label_block.push(LayerSpec::new(w, None, last.neuron));
        assert!(matches!(layers.validate(), Err(Error::InconsistentTopology(_))));
    }

    #[test]
    fn zero_hidden_layers_accepted() {
        let topo = Topology {
            input_size: 2312,
            feature: vec![],
            label_hidden: vec![],
            task_hidden: None,
            num_labels_task1: 10,
            num_labels_task2: 2,
            ..Topology::nmnist(1)
        };
        let net = build_mtsnn(&topo, 0).unwrap();
        assert_eq!(net.label_block.len(), 1);
        assert_eq!(net.label_block[0].in_size, 2312);
        let tr = forward(&net, &SpikeTensor::zeros(2312, 3, 1000), 1.25, false).unwrap();
        assert_eq!(tr.label_output().t_steps(), 3);
    }

    #[test]
    fn zero_input_is_quiescent() {
        let net = build_mtsnn(&toy_topology(), 3).unwrap();
        let tr = forward(&net, &SpikeTensor::zeros(6, 20, 1000), 1.25, true).unwrap();
        for l in tr.layers() {
            assert!(l.s.iter().all(|&s| s == 0.0));
            assert!(l.u.iter().all(|&u| u == 0.0));
            assert!(l.i.iter().all(|&i| i == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic_and_binary() {
        let net = build_mtsnn(&toy_topology(), 3).unwrap();
        let x = random_input(6, 30, 9);
        let a = forward(&net, &x, 1.25, true).unwrap();
        let b = forward(&net, &x, 1.25, true).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().all(|l| l.s.iter().all(|&s| s == 0.0 || s == 1.0)));
        assert!(a.layers().all(|l| l.t_steps() == 30));
        assert!(a.mean_firing_rate() > 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let net = build_mtsnn(&toy_topology(), 3).unwrap();
        let err = forward(&net, &SpikeTensor::zeros(7, 5, 1000), 1.25, false).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn task_block_is_a_pure_sink() {
        let net = build_mtsnn(&toy_topology(), 4).unwrap();
        let x = random_input(6, 25, 1);
        let with = forward(&net, &x, 2.0, true).unwrap();
        let without = forward(&net, &x, 2.0, false).unwrap();
        assert!(without.task.is_none());
        assert_eq!(with.feature, without.feature);
        assert_eq!(with.label, without.label);
    }

    #[test]
    fn override_leaves_task_block_alone() {
        let net = build_mtsnn(&toy_topology(), 4).unwrap();
        let x = random_input(6, 10, 1);
        let tr = forward(&net, &x, 5.0, true).unwrap();
        assert!(tr.feature.iter().chain(&tr.label).all(|l| l.dynamics.threshold == 5.0));
        assert!(tr.task.as_ref().unwrap().iter().all(|l| l.dynamics.threshold == 1.25));
        assert!(net.task_block.iter().all(|l| l.neuron.threshold == 1.25));
        assert!(net.label_block.iter().all(|l| l.neuron.threshold == 1.25));
    }

    #[test]
    fn zero_ext_current_matches_base_threshold() {
        let net = build_mtsnn(&toy_topology(), 5).unwrap();
        let x = random_input(6, 15, 2);
        let a = forward_with_ext_current(&net, &x, 0.0, true).unwrap();
        let b = forward(&net, &x, 1.25, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ext_current_converges_geometrically() {
        // one input -> one neuron, no input spikes, beta = 0.5
        let neuron = NeuronConfig { tau_syn: -1.0 / 0.5f64.ln(), threshold: 1e9, ..NeuronConfig::default() };
        let layer = LayerSpec::new(Weights::zeros(1, 1), None, neuron);
        let net = Network::new(vec![], vec![layer], vec![], 1, 0).unwrap();
        let tr = forward_with_ext_current(&net, &SpikeTensor::zeros(1, 60, 1000), 0.1, false).unwrap();
        let out = tr.label_output();
        let mut expected = 0.0;
        for n in 0..60 {
            expected = 0.5 * expected + 0.1;
            assert!((out.i[n] - expected).abs() < 1e-15);
        }
        assert!((out.i[59] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn recurrent_weights_feed_back() {
        let neuron = NeuronConfig { threshold: 0.5, ..NeuronConfig::default() };
        let w = Weights::from_row_major(1, 1, &[2.0]);
        let v = Weights::from_row_major(1, 1, &[0.7]);
        let with = LayerSpec::new(w.clone(), Some(v), neuron);
        let without = LayerSpec::new(w, None, neuron);
        let x = SpikeTensor::from_active(1, vec![vec![0], vec![], vec![], vec![], vec![], vec![]], 1);
        let a = Network::new(vec![], vec![with], vec![], 1, 0).unwrap();
        let b = Network::new(vec![], vec![without], vec![], 1, 0).unwrap();
        let ta = forward(&a, &x, 0.5, false).unwrap();
        let tb = forward(&b, &x, 0.5, false).unwrap();
        assert_ne!(ta.label_output().i, tb.label_output().i);
    }

    #[test]
    fn hidden_permutation_invariance() {
        let net = build_mtsnn(&toy_topology(), 6).unwrap();
        let x = random_input(6, 20, 3);
        let base = forward(&net, &x, 1.25, true).unwrap();

        // permute the 5 neurons of feature layer 0
        let perm = [3usize, 0, 4, 1, 2];
        let mut p = net.clone();
        let l0 = &net.feature_block[0];
        let l1 = &net.feature_block[1];
        let mut w0 = Weights::zeros(5, l0.in_size);
        let mut w1 = Weights::zeros(l1.out_size, 5);
        for (new, &old) in perm.iter().enumerate() {
            for pre in 0..l0.in_size {
                w0.set(new, pre, l0.weights.get(old, pre));
            }
            for post in 0..l1.out_size {
                w1.set(post, new, l1.weights.get(post, old));
            }
        }
        p.feature_block[0].weights = w0;
        p.feature_block[1].weights = w1;
        let permuted = forward(&p, &x, 1.25, true).unwrap();
        assert_eq!(base.label, permuted.label);
        assert_eq!(base.task, permuted.task);
    }

    #[test]
    fn composition_equivalence() {
        let net = build_mtsnn(&toy_topology(), 8).unwrap();
        let x = random_input(6, 20, 4);
        let full = forward(&net, &x, 1.25, true).unwrap();

        let features = Network::new(
            net.feature_block.clone(),
            vec![LayerSpec::new(Weights::zeros(1, 4), None, NeuronConfig::default())],
            vec![],
            1,
            0,
        )
        .unwrap();
        let ft = forward(&features, &x, 1.25, false).unwrap();
        let latent = ft.feature.last().unwrap();
        let dense: Vec<Vec<u8>> = (0..20).map(|n| latent.spikes_at(n).iter().map(|&s| s as u8).collect()).collect();
        // classifier blocks read step n from the feature trace entry n - 1
        let mut shifted = vec![vec![0u8; 4]];
        shifted.extend(dense.into_iter().take(19));
        let latent_input = SpikeTensor::from_dense(4, &shifted, 1000);
        let label_only = Network::new(vec![], net.label_block.clone(), net.task_block.clone(), 2, 1).unwrap();
        let lt = forward(&label_only, &latent_input, 1.25, true).unwrap();
        assert_eq!(lt.label, full.label);
        assert_eq!(lt.task, full.task);
    }

    #[test]
    fn subtract_threshold_mode_runs() {
        let mut topo = toy_topology();
        topo.neuron.reset_mode = ResetMode::SubtractThreshold;
        let net = build_mtsnn(&topo, 2).unwrap();
        let tr = forward(&net, &random_input(6, 10, 0), 1.25, false).unwrap();
        assert_eq!(tr.feature[0].dynamics.reset, 1.25);
    }
}
