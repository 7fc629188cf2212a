//! Multi-task training: per-batch random task selection, task-dependent
//! control signal on the feature and label blocks, concatenated label
//! targets, and the composite loss `(1 - gamma) * L_label + gamma * L_task`.

use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::grad::{backward_into, BackwardOptions, GradientSet, LossGrads, SurrogateSpec};
use crate::graph::{forward_with_control, Control, LayerTrace, Network, NUM_TASKS};
use crate::optim::{optimizer_step, Optimizer, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Digit identity, 10 classes.
    Digit,
    /// Parity, 2 classes.
    Parity,
}

impl Task {
    pub const BOTH: [Task; 2] = [Task::Digit, Task::Parity];

    pub fn id(&self) -> u8 {
        match self {
            Task::Digit => 1,
            Task::Parity => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Task::Digit),
            2 => Ok(Task::Parity),
            other => Err(Error::InvalidTask(other)),
        }
    }

    fn index(&self) -> usize {
        (self.id() - 1) as usize
    }

    pub fn label_of(&self, sample: &LabeledSample) -> u8 {
        match self {
            Task::Digit => sample.digit,
            Task::Parity => sample.parity,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ControlMode {
    #[default]
    Threshold,
    ExternalCurrent,
}

impl ControlMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlMode::Threshold => "threshold",
            ControlMode::ExternalCurrent => "ext-current",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "threshold" => Some(ControlMode::Threshold),
            "ext-current" | "extcurrent" | "external-current" => Some(ControlMode::ExternalCurrent),
            _ => None,
        }
    }
}

/// Desired output rates in spikes per step for the correct and the other outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetRates {
    pub true_rate: f64,
    pub false_rate: f64,
}

impl Default for TargetRates {
    fn default() -> Self {
        Self { true_rate: 0.5, false_rate: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub phi1: f64,
    pub phi2: f64,
    pub gamma: f64,
    /// Probability of drawing task 1 for a batch.
    pub task_probability: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub control_mode: ControlMode,
    /// External current for task 2 in [`ControlMode::ExternalCurrent`]; task 1 uses 0.
    pub i_ext2: Option<f64>,
    pub use_task_block: bool,
    pub surrogate: SurrogateSpec,
    pub detach_reset: bool,
    pub target_rates: TargetRates,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phi1: 1.25,
            phi2: 5.0,
            gamma: 0.0,
            task_probability: 0.5,
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            control_mode: ControlMode::Threshold,
            i_ext2: None,
            use_task_block: false,
            surrogate: SurrogateSpec::default(),
            detach_reset: false,
            target_rates: TargetRates::default(),
            optimizer: Optimizer::adam(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma.is_finite() && (0.0..=1.0).contains(&self.gamma)) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(self.phi1 > 0.0 && self.phi1.is_finite()) {
            return bad(format!("phi1 must be > 0, got {}", self.phi1));
        }
        if !(self.phi2 > 0.0 && self.phi2.is_finite()) {
            return bad(format!("phi2 must be > 0, got {}", self.phi2));
        }
        if !(0.0..=1.0).contains(&self.task_probability) {
            return bad(format!("task_probability must be in [0, 1], got {}", self.task_probability));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.control_mode == ControlMode::ExternalCurrent && self.i_ext2.is_none() {
            return bad("control_mode ext-current requires i_ext2".into());
        }
        if let Some(i) = self.i_ext2 {
            if !i.is_finite() {
                return bad("i_ext2 must be finite".into());
            }
        }
        let r = self.target_rates;
        if !(r.true_rate >= 0.0 && r.false_rate >= 0.0 && r.true_rate.is_finite() && r.false_rate.is_finite()) {
            return bad("target rates must be non-negative".into());
        }
        self.surrogate.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Control signal selecting `task` on the feature and label blocks.
    pub fn control_for(&self, task: Task) -> Control {
        match (self.control_mode, task) {
            (ControlMode::Threshold, Task::Digit) => Control::threshold(self.phi1),
            (ControlMode::Threshold, Task::Parity) => Control::threshold(self.phi2),
            (ControlMode::ExternalCurrent, Task::Digit) => Control { threshold: Some(self.phi1), i_ext: Some(0.0) },
            (ControlMode::ExternalCurrent, Task::Parity) => {
                Control { threshold: Some(self.phi1), i_ext: Some(self.i_ext2.unwrap_or(0.0)) }
            }
        }
    }

    fn backward_options(&self) -> BackwardOptions {
        BackwardOptions { surrogate: self.surrogate, detach_reset: self.detach_reset }
    }
}

/// Draws the task for the next batch: task 1 with probability `p_task1`.
pub fn select_task(rng: &mut ChaCha8Rng, p_task1: f64) -> Task {
    if rng.gen::<f64>() < p_task1 {
        Task::Digit
    } else {
        Task::Parity
    }
}

/// How the label-classifier outputs split between the two tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelLayout {
    pub task1: usize,
    pub task2: usize,
}

impl LabelLayout {
    pub const NMNIST: LabelLayout = LabelLayout { task1: 10, task2: 2 };

    pub fn of(net: &Network) -> Self {
        Self { task1: net.num_labels_task1, task2: net.num_labels_task2 }
    }

    pub fn total(&self) -> usize {
        self.task1 + self.task2
    }

    pub fn segment(&self, task: Task) -> std::ops::Range<usize> {
        match task {
            Task::Digit => 0..self.task1,
            Task::Parity => self.task1..self.task1 + self.task2,
        }
    }
}

/// Desired spike counts over the window.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub label_target: Vec<f64>,
    pub task_target: Vec<f64>,
}

pub fn make_targets(
    digit: u8,
    task: Task,
    rates: TargetRates,
    t_steps: usize,
    layout: LabelLayout,
) -> Result<TargetSpec> {
    let (digit, parity) = crate::data::derive_labels(digit)?;
    let high = rates.true_rate * t_steps as f64;
    let low = rates.false_rate * t_steps as f64;
    let mut label_target = vec![low; layout.total()];
    let segment = layout.segment(task);
    let class = match task {
        Task::Digit => digit,
        Task::Parity => parity,
    } as usize;
    if class >= segment.len() {
        return Err(Error::InvalidTask(task.id()));
    }
    label_target[segment.start + class] = high;
    let mut task_target = vec![low; NUM_TASKS];
    task_target[task.index()] = high;
    Ok(TargetSpec { label_target, task_target })
}

/// Spike-count loss `0.5 * sum_k (count_k - target_k)^2 / T` over a
/// `t_steps x n` spike record. The gradient puts `(count_k - target_k) / T`
/// on every step of neuron `k`.
pub fn rate_loss(spikes: &[f64], n: usize, target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if n == 0 || target.len() != n || !spikes.len().is_multiple_of(n) || spikes.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} spike entries, {} neurons, {} targets",
            spikes.len(),
            n,
            target.len()
        )));
    }
    let t_steps = spikes.len() / n;
    let t = t_steps as f64;
    let mut counts = vec![0.0; n];
    for row in spikes.chunks_exact(n) {
        for (c, &s) in counts.iter_mut().zip(row) {
            *c += s;
        }
    }
    let diff: Vec<f64> = counts.iter().zip(target).map(|(c, y)| c - y).collect();
    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / t;
    let per_step: Vec<f64> = diff.iter().map(|d| d / t).collect();
    Ok((loss, per_step.repeat(t_steps)))
}

fn trace_loss(out: &LayerTrace, target: &[f64]) -> Result<(f64, Vec<f64>)> {
    rate_loss(&out.s, out.size, target)
}

pub fn total_loss(l_label: f64, l_task: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * l_label + gamma * l_task
}

/// Index of the largest count within `segment`, lowest index on ties,
/// relative to the segment start.
pub fn predict(counts: &[f64], segment: std::ops::Range<usize>) -> usize {
    let slice = &counts[segment];
    let mut best = 0;
    for (k, &c) in slice.iter().enumerate() {
        if c > slice[best] {
            best = k;
        }
    }
    best
}

/// Per-task statistics accumulated over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskStats {
    pub loss_sum: f64,
    pub batches: usize,
    pub correct: usize,
    pub samples: usize,
}

impl TaskStats {
    pub fn mean_loss(&self) -> f64 {
        if self.batches == 0 {
            f64::NAN
        } else {
            self.loss_sum / self.batches as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.samples == 0 {
            f64::NAN
        } else {
            self.correct as f64 / self.samples as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub tasks: [TaskStats; 2],
}

impl EpochMetrics {
    pub fn task(&self, task: Task) -> &TaskStats {
        &self.tasks[task.index()]
    }
}

/// Result of one batch: mean total loss and number of correct predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchOutcome {
    pub loss: f64,
    pub correct: usize,
}

/// Samples per gradient partial sum; fixed so the reduction order never
/// depends on the worker count.
const CHUNK: usize = 4;

/// Mean gradient of the composite loss over `batch`, all samples trained on `task`.
pub fn batch_gradient(
    net: &Network,
    batch: &[&LabeledSample],
    task: Task,
    cfg: &TrainConfig,
) -> Result<(GradientSet, BatchOutcome)> {
    let layout = LabelLayout::of(net);
    let control = cfg.control_for(task);
    let opts = cfg.backward_options();
    let scale = 1.0 / batch.len() as f64;
    let label_weight = if cfg.use_task_block { 1.0 - cfg.gamma } else { 1.0 };

    let partials: Vec<Result<(GradientSet, f64, usize)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = GradientSet::zeros_like(net);
            let mut loss = 0.0;
            let mut correct = 0;
            for sample in chunk {
                let trace = forward_with_control(net, &sample.tensor, control, cfg.use_task_block)?;
                let targets = make_targets(sample.digit, task, cfg.target_rates, trace.t_steps, layout)?;
                let out = trace.label_output();
                let (l_label, g_label) = trace_loss(out, &targets.label_target)?;
                let counts = out.counts();
                let seg = layout.segment(task);
                if predict(&counts, seg) == task.label_of(sample) as usize {
                    correct += 1;
                }
                let (sample_loss, task_grad) = match trace.task_output() {
                    Some(task_out) => {
                        let (l_task, g_task) = trace_loss(task_out, &targets.task_target)?;
                        let k = cfg.gamma * scale;
                        (total_loss(l_label, l_task, cfg.gamma), Some(g_task.into_iter().map(|g| g * k).collect()))
                    }
                    None => (l_label, None),
                };
                loss += sample_loss;
                let k = label_weight * scale;
                let lg = LossGrads { label: g_label.into_iter().map(|g| g * k).collect(), task: task_grad };
                backward_into(&trace, net, &lg, &opts, &mut grads)?;
            }
            Ok((grads, loss, correct))
        })
        .collect();

    let mut total = GradientSet::zeros_like(net);
    let mut loss = 0.0;
    let mut correct = 0;
    for part in partials {
        let (g, l, c) = part?;
        total.add_assign(&g);
        loss += l;
        correct += c;
    }
    Ok((total, BatchOutcome { loss: loss * scale, correct }))
}

/// One pass over `data` in a freshly shuffled order. Each batch gets its own
/// randomly selected task.
pub fn train_epoch(
    net: &mut Network,
    opt: &mut OptimizerState,
    data: &[LabeledSample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut tasks = [TaskStats::default(); 2];
    let mut loss_sum = 0.0;
    let mut batches = 0;
    for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
        let task = select_task(rng, cfg.task_probability);
        let batch: Vec<&LabeledSample> = idx.iter().map(|&k| &data[k]).collect();
        let (grads, outcome) = batch_gradient(net, &batch, task, cfg)?;
        if !outcome.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b, value: outcome.loss });
        }
        optimizer_step(net, &grads, opt, cfg.lr)?;
        let st = &mut tasks[task.index()];
        st.loss_sum += outcome.loss;
        st.batches += 1;
        st.correct += outcome.correct;
        st.samples += batch.len();
        loss_sum += outcome.loss;
        batches += 1;
    }
    let mean_loss = if batches == 0 { f64::NAN } else { loss_sum / batches as f64 };
    Ok(EpochMetrics { epoch, mean_loss, tasks })
}

/// Label-block spike counts for `sample` with `task` selected, task block off.
pub fn label_counts(net: &Network, sample: &LabeledSample, task: Task, cfg: &TrainConfig) -> Result<Vec<f64>> {
    label_counts_with(net, sample, cfg.control_for(task))
}

pub fn label_counts_with(net: &Network, sample: &LabeledSample, control: Control) -> Result<Vec<f64>> {
    let trace = forward_with_control(net, &sample.tensor, control, false)?;
    Ok(trace.label_output().counts())
}

/// Fraction of `data` classified correctly on `task` under `control`, reading
/// only the task's output segment.
pub fn evaluate_with_control(net: &Network, data: &[LabeledSample], task: Task, control: Control) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let layout = LabelLayout::of(net);
    let seg = layout.segment(task);
    if seg.is_empty() {
        return Err(Error::InvalidTask(task.id()));
    }
    let hits: Vec<Result<bool>> = data
        .par_iter()
        .map(|s| {
            let counts = label_counts_with(net, s, control)?;
            Ok(predict(&counts, seg.clone()) == task.label_of(s) as usize)
        })
        .collect();
    let mut correct = 0;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Test-time accuracy: control signal set for `task`, task block unused.
pub fn evaluate(net: &Network, data: &[LabeledSample], task: Task, cfg: &TrainConfig) -> Result<f64> {
    evaluate_with_control(net, data, task, cfg.control_for(task))
}

/// One CSV row of per-epoch metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub task: Task,
    pub loss: f64,
    pub accuracy: f64,
}

/// Training history with the settings needed to interpret it.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricRow>,
    pub phi1: f64,
    pub phi2: f64,
    pub gamma: f64,
    pub control_mode: ControlMode,
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "epoch,split,task,loss,accuracy,phi1,phi2,gamma,control_mode,seed";

impl RunMetrics {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            rows: Vec::new(),
            phi1: cfg.phi1,
            phi2: cfg.phi2,
            gamma: cfg.gamma,
            control_mode: cfg.control_mode,
            seed: cfg.seed,
        }
    }

    pub fn push_epoch(&mut self, m: &EpochMetrics) {
        for task in Task::BOTH {
            let st = m.task(task);
            self.rows.push(MetricRow {
                epoch: m.epoch,
                split: "train".into(),
                task,
                loss: st.mean_loss(),
                accuracy: st.accuracy(),
            });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.split,
                r.task,
                fixed6(r.loss),
                fixed6(r.accuracy),
                self.phi1,
                self.phi2,
                self.gamma,
                self.control_mode.as_str(),
                self.seed
            );
        }
        out
    }
}

fn fixed6(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

/// Owns the network, optimizer state and the selection RNG for a run.
pub struct Trainer {
    pub net: Network,
    pub opt: OptimizerState,
    pub cfg: TrainConfig,
    pub rng: ChaCha8Rng,
    pub metrics: RunMetrics,
    epoch: usize,
}

impl Trainer {
    pub fn new(net: Network, cfg: TrainConfig) -> Result<Self> {
        use rand::SeedableRng;
        cfg.validate()?;
        if cfg.use_task_block && !net.has_task_block() {
            return Err(Error::Config("use_task_block set but the network has no task block".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7461_736b_7365_6c00);
        Ok(Self { opt: OptimizerState::new(cfg.optimizer), metrics: RunMetrics::new(&cfg), net, cfg, rng, epoch: 0 })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn train_epoch(&mut self, data: &[LabeledSample]) -> Result<EpochMetrics> {
        self.epoch += 1;
        let m = train_epoch(&mut self.net, &mut self.opt, data, &self.cfg, &mut self.rng, self.epoch)?;
        self.metrics.push_epoch(&m);
        Ok(m)
    }

    pub fn train(&mut self, data: &[LabeledSample]) -> Result<()> {
        for _ in 0..self.cfg.epochs {
            let m = self.train_epoch(data)?;
            log::info!(
                "epoch {} loss {:.4} acc1 {:.4} acc2 {:.4}",
                m.epoch,
                m.mean_loss,
                m.task(Task::Digit).accuracy(),
                m.task(Task::Parity).accuracy()
            );
        }
        Ok(())
    }

    /// Records test accuracy for both tasks as `split = test` rows.
    pub fn record_test(&mut self, data: &[LabeledSample]) -> Result<[f64; 2]> {
        let mut acc = [0.0; 2];
        for task in Task::BOTH {
            if LabelLayout::of(&self.net).segment(task).is_empty() {
                acc[task.index()] = f64::NAN;
                continue;
            }
            let a = evaluate(&self.net, data, task, &self.cfg)?;
            acc[task.index()] = a;
            self.metrics.rows.push(MetricRow {
                epoch: self.epoch,
                split: "test".into(),
                task,
                loss: f64::NAN,
                accuracy: a,
            });
        }
        Ok(acc)
    }
}
