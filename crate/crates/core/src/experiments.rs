//! Experiment families: single-task base case, threshold sweep, gamma sweep
//! with the task classifier, and external-current control.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{load_dataset, Binning, LabeledSample, Split};
use crate::error::{Error, Result};
use crate::graph::{build_mtsnn, Network, Topology};
use crate::train::{ControlMode, RunMetrics, Task, TrainConfig, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    BaseCase,
    ThresholdSweep,
    GammaSweep,
    ExtCurrentSweep,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::BaseCase => "base",
            Family::ThresholdSweep => "threshold",
            Family::GammaSweep => "gamma",
            Family::ExtCurrentSweep => "extcurrent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" | "base-case" => Some(Family::BaseCase),
            "threshold" => Some(Family::ThresholdSweep),
            "gamma" => Some(Family::GammaSweep),
            "extcurrent" | "ext-current" => Some(Family::ExtCurrentSweep),
            _ => None,
        }
    }

    /// Values swept by default.
    pub fn default_values(&self) -> Vec<f64> {
        match self {
            Family::BaseCase => vec![1.0, 2.0],
            Family::ThresholdSweep => vec![1.5, 2.0, 3.0, 5.0, 10.0],
            Family::GammaSweep => vec![0.1, 0.2, 0.3, 0.5],
            Family::ExtCurrentSweep => vec![0.05, 0.1, 0.5, 1.0, 5.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Profile {
    Full,
    #[default]
    Desk,
}

impl Profile {
    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Profile::Full),
            "desk" => Some(Profile::Desk),
            _ => None,
        }
    }

    pub fn settings(&self) -> ProfileSettings {
        match self {
            Profile::Full => ProfileSettings {
                train_samples: None,
                test_samples: None,
                t_steps: 300,
                bin_width_us: 1000,
                feature_width: 512,
                epochs: 100,
                batch_size: 32,
                lr: 1e-3,
                seeds: vec![0],
            },
            Profile::Desk => ProfileSettings {
                train_samples: Some(1000),
                test_samples: Some(500),
                t_steps: 100,
                bin_width_us: 1000,
                feature_width: 128,
                epochs: 15,
                batch_size: 8,
                lr: 1e-3,
                seeds: vec![0, 1, 2],
            },
        }
    }
}

/// Scale parameters attached to a profile.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSettings {
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
    pub t_steps: usize,
    pub bin_width_us: u32,
    pub feature_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
}

impl ProfileSettings {
    pub fn binning(&self) -> Binning {
        Binning { t_steps: self.t_steps, bin_width_us: self.bin_width_us }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr, ..Default::default() }
    }
}

/// Training and test samples shared by every point of a sweep.
pub struct Datasets {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl Datasets {
    pub fn load(root: &Path, settings: &ProfileSettings, subset_seed: u64) -> Result<Self> {
        let binning = settings.binning();
        let train = load_dataset(root, Split::Train, settings.train_samples, subset_seed)?.load_all(binning)?;
        let test = load_dataset(root, Split::Test, settings.test_samples, subset_seed)?.load_all(binning)?;
        Ok(Self { train, test })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub family: Family,
    pub values: Vec<f64>,
    pub base_config: TrainConfig,
    pub topology: Topology,
    pub profile: Profile,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Spec with the profile's topology, training budget and seeds.
    pub fn new(family: Family, values: Vec<f64>, profile: Profile) -> Self {
        let s = profile.settings();
        let mut topology = Topology::nmnist(s.feature_width);
        topology.task_hidden = None;
        Self { family, values, base_config: s.train_config(), topology, profile, seeds: s.seeds }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        for &v in &self.values {
            let ok = match self.family {
                Family::BaseCase => v == 1.0 || v == 2.0,
                Family::ThresholdSweep => v > 0.0 && v.is_finite(),
                Family::GammaSweep => (0.0..=1.0).contains(&v),
                Family::ExtCurrentSweep => v.is_finite(),
            };
            if !ok {
                return Err(Error::Config(format!("invalid {} value {v}", self.family.as_str())));
            }
        }
        self.base_config.validate()
    }

    /// Training configuration and topology for one point.
    pub fn point(&self, value: f64, seed: u64) -> (TrainConfig, Topology) {
        let mut cfg = TrainConfig { seed, ..self.base_config.clone() };
        let mut topo = self.topology.clone();
        match self.family {
            Family::BaseCase => {
                let task = if value == 2.0 { Task::Parity } else { Task::Digit };
                cfg.phi2 = cfg.phi1;
                cfg.control_mode = ControlMode::Threshold;
                cfg.use_task_block = false;
                cfg.task_probability = if task == Task::Digit { 1.0 } else { 0.0 };
                topo.task_hidden = None;
                match task {
                    Task::Digit => topo.num_labels_task2 = 0,
                    Task::Parity => topo.num_labels_task1 = 0,
                }
            }
            Family::ThresholdSweep => {
                cfg.phi2 = value;
                cfg.control_mode = ControlMode::Threshold;
                cfg.use_task_block = false;
                topo.task_hidden = None;
            }
            Family::GammaSweep => {
                cfg.gamma = value;
                cfg.control_mode = ControlMode::Threshold;
                cfg.use_task_block = true;
                if topo.task_hidden.is_none() {
                    topo.task_hidden = Some(vec![128]);
                }
            }
            Family::ExtCurrentSweep => {
                cfg.control_mode = ControlMode::ExternalCurrent;
                cfg.i_ext2 = Some(value);
                cfg.use_task_block = false;
                topo.task_hidden = None;
            }
        }
        (cfg, topo)
    }
}

/// Reference accuracies (task 1, task 2) for the full-scale setting.
pub fn paper_reference(family: Family, value: f64) -> Option<(Option<f64>, Option<f64>)> {
    let table: &[(f64, f64, f64)] = match family {
        Family::BaseCase => {
            return match value {
                1.0 => Some((Some(98.85), None)),
                2.0 => Some((None, Some(100.00))),
                _ => None,
            }
        }
        Family::ThresholdSweep => {
            &[(1.5, 93.73, 98.00), (2.0, 95.40, 98.31), (3.0, 96.60, 98.90), (5.0, 97.86, 99.19), (10.0, 97.99, 99.13)]
        }
        Family::GammaSweep => &[(0.5, 97.69, 100.00), (0.3, 97.59, 100.00), (0.2, 97.72, 100.00), (0.1, 97.97, 100.00)],
        Family::ExtCurrentSweep => {
            &[(0.05, 95.63, 98.06), (0.1, 96.05, 97.86), (0.5, 96.07, 97.66), (1.0, 95.78, 97.62), (5.0, 92.20, 97.95)]
        }
    };
    table.iter().find(|r| r.0 == value).map(|r| (Some(r.1), Some(r.2)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub family: Family,
    pub value: f64,
    pub seed: u64,
    /// Test accuracy in percent; `None` when the model has no output for the task.
    pub task1_acc: Option<f64>,
    pub task2_acc: Option<f64>,
    pub phi1: f64,
    pub phi2: f64,
    pub gamma: f64,
    pub i_ext2: Option<f64>,
    pub epochs: usize,
    pub t_steps: usize,
    pub profile: Profile,
    pub wall_s: f64,
}

impl ResultRow {
    pub fn model_label(&self) -> String {
        match self.family {
            Family::BaseCase => format!("ST-SNN task {}", self.value),
            Family::ThresholdSweep => format!("MT-SNN phi1={} phi2={}", self.phi1, self.phi2),
            Family::GammaSweep => format!("MT-SNN gamma={}", self.gamma),
            Family::ExtCurrentSweep => format!("MT-SNN-EC i_ext2={}", self.value),
        }
    }

    /// Key used to order rows independently of execution order.
    fn sort_key(&self) -> (Family, f64, u64) {
        (self.family, self.value, self.seed)
    }
}

/// A trained point: the result row, the network and its training history.
pub struct PointOutcome {
    pub row: ResultRow,
    pub net: Network,
    pub metrics: RunMetrics,
}

/// Trains one sweep point from a fresh initialization and evaluates it.
pub fn run_point(spec: &SweepSpec, value: f64, seed: u64, data: &Datasets) -> Result<PointOutcome> {
    let start = Instant::now();
    let (cfg, topo) = spec.point(value, seed);
    let t_steps = data.train.first().map(|s| s.tensor.t_steps()).unwrap_or(0);
    let net = build_mtsnn(&topo, seed)?;
    let mut trainer = Trainer::new(net, cfg.clone())?;
    trainer.train(&data.train)?;
    let acc = trainer.record_test(&data.test)?;
    let pct = |a: f64| (!a.is_nan()).then_some(100.0 * a);
    let row = ResultRow {
        family: spec.family,
        value,
        seed,
        task1_acc: pct(acc[0]),
        task2_acc: pct(acc[1]),
        phi1: cfg.phi1,
        phi2: if cfg.control_mode == ControlMode::ExternalCurrent { cfg.phi1 } else { cfg.phi2 },
        gamma: cfg.gamma,
        i_ext2: cfg.i_ext2,
        epochs: cfg.epochs,
        t_steps,
        profile: spec.profile,
        wall_s: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "{} value={} seed={} task1={:?} task2={:?} ({:.1}s)",
        spec.family.as_str(),
        value,
        seed,
        row.task1_acc,
        row.task2_acc,
        row.wall_s
    );
    Ok(PointOutcome { row, net: trainer.net, metrics: trainer.metrics })
}

/// Runs every (value, seed) point; outcomes are sorted by value, then seed.
pub fn run_points(spec: &SweepSpec, data: &Datasets) -> Result<Vec<PointOutcome>> {
    spec.validate()?;
    let jobs: Vec<(f64, u64)> = spec.values.iter().flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s))).collect();
    let mut out: Vec<PointOutcome> =
        jobs.par_iter().map(|&(v, s)| run_point(spec, v, s, data)).collect::<Result<_>>()?;
    out.sort_by(|a, b| a.row.sort_key().partial_cmp(&b.row.sort_key()).unwrap());
    Ok(out)
}

fn rows_of(spec: &SweepSpec, data: &Datasets) -> Result<Vec<ResultRow>> {
    Ok(run_points(spec, data)?.into_iter().map(|p| p.row).collect())
}

fn with_family(spec: &SweepSpec, family: Family) -> SweepSpec {
    SweepSpec { family, ..spec.clone() }
}

/// Single-task networks trained on task 1 alone and on task 2 alone.
pub fn run_base_case(spec: &SweepSpec, data: &Datasets) -> Result<Vec<ResultRow>> {
    rows_of(&SweepSpec { values: vec![1.0, 2.0], ..with_family(spec, Family::BaseCase) }, data)
}

pub fn run_threshold_sweep(spec: &SweepSpec, data: &Datasets) -> Result<Vec<ResultRow>> {
    rows_of(&with_family(spec, Family::ThresholdSweep), data)
}

pub fn run_gamma_sweep(spec: &SweepSpec, data: &Datasets) -> Result<Vec<ResultRow>> {
    rows_of(&with_family(spec, Family::GammaSweep), data)
}

pub fn run_ext_current_sweep(spec: &SweepSpec, data: &Datasets) -> Result<Vec<ResultRow>> {
    rows_of(&with_family(spec, Family::ExtCurrentSweep), data)
}

pub fn run_sweep(spec: &SweepSpec, data: &Datasets) -> Result<Vec<ResultRow>> {
    match spec.family {
        Family::BaseCase => run_base_case(spec, data),
        Family::ThresholdSweep => run_threshold_sweep(spec, data),
        Family::GammaSweep => run_gamma_sweep(spec, data),
        Family::ExtCurrentSweep => run_ext_current_sweep(spec, data),
    }
}

/// Mean accuracy over seeds for one sweep value.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanRow {
    pub family: Family,
    pub value: f64,
    pub label: String,
    pub seeds: usize,
    pub task1_acc: Option<f64>,
    pub task2_acc: Option<f64>,
}

fn mean(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups rows by (family, value) in first-appearance order and averages over seeds.
pub fn mean_by_value(rows: &[ResultRow]) -> Vec<MeanRow> {
    let mut keys: Vec<(Family, f64)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.family, r.value)) {
            keys.push((r.family, r.value));
        }
    }
    keys.into_iter()
        .map(|(family, value)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.family == family && r.value == value).collect();
            MeanRow {
                family,
                value,
                label: group[0].model_label(),
                seeds: group.len(),
                task1_acc: mean(group.iter().map(|r| r.task1_acc)),
                task2_acc: mean(group.iter().map(|r| r.task2_acc)),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

pub const RESULT_HEADER: &str =
    "family,value,seed,task1_acc,task2_acc,phi1,phi2,gamma,i_ext2,epochs,t_steps,profile,wall_s,ref_task1,ref_task2";

fn opt2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

/// Serializes rows. CSV has one line per row with the reference accuracies
/// appended; markdown has one line per value with seed means next to the
/// reference numbers.
pub fn emit_table(rows: &[ResultRow], format: TableFormat) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(RESULT_HEADER);
            out.push('\n');
            for r in rows {
                let (ref1, ref2) = paper_reference(r.family, r.value).unwrap_or((None, None));
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{:.3},{},{}",
                    r.family.as_str(),
                    r.value,
                    r.seed,
                    opt2(r.task1_acc),
                    opt2(r.task2_acc),
                    r.phi1,
                    r.phi2,
                    r.gamma,
                    r.i_ext2.map(|v| v.to_string()).unwrap_or_default(),
                    r.epochs,
                    r.t_steps,
                    r.profile.as_str(),
                    r.wall_s,
                    opt2(ref1),
                    opt2(ref2),
                );
            }
        }
        TableFormat::Markdown => {
            out.push_str("| Model | Task 1 (%) | Task 2 (%) | Reference task 1 (%) | Reference task 2 (%) |\n");
            out.push_str("|---|---|---|---|---|\n");
            for m in mean_by_value(rows) {
                let (ref1, ref2) = paper_reference(m.family, m.value).unwrap_or((None, None));
                let dash = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    m.label,
                    dash(m.task1_acc),
                    dash(m.task2_acc),
                    dash(ref1),
                    dash(ref2)
                );
            }
        }
    }
    Ok(out.into_bytes())
}

/// File name for a run's training curve.
pub fn curve_file_name(family: Family, value: f64, seed: u64) -> String {
    format!("{}_{}_{}.svg", family.as_str(), value, seed)
}

/// Line chart of per-epoch training accuracy for both tasks.
pub fn training_curve_svg(metrics: &RunMetrics, title: &str) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let train: Vec<_> = metrics.rows.iter().filter(|r| r.split == "train").collect();
    let max_epoch = train.iter().map(|r| r.epoch).max().unwrap_or(1).max(1) as f64;
    let x = |e: usize| pad + (w - 2.0 * pad) * (e as f64 - 1.0) / (max_epoch - 1.0).max(1.0);
    let y = |a: f64| h - pad - (h - 2.0 * pad) * a;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        svg,
        r#"<polyline points="{pad},{} {pad},{} {},{}" fill="none" stroke="black"/>"#,
        y(1.0),
        y(0.0),
        w - pad,
        y(0.0)
    );
    for (task, colour) in [(Task::Digit, "#1f77b4"), (Task::Parity, "#d62728")] {
        let pts: Vec<String> = train
            .iter()
            .filter(|r| r.task == task && r.accuracy.is_finite())
            .map(|r| format!("{:.1},{:.1}", x(r.epoch), y(r.accuracy)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        let ly = if task == Task::Digit { 36.0 } else { 52.0 };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{colour}">task {}</text>"#,
            w - pad - 50.0,
            task.id()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
