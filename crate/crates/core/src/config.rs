//! Run configuration: built-in defaults, an optional `key = value` file and
//! command-line flags, merged in that order with the origin of every value
//! kept for the resolved dump.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiments::{Profile, ProfileSettings};
use crate::grad::{SurrogateKind, SurrogateSpec};
use crate::graph::{Topology, DEFAULT_INIT_GAIN};
use crate::lif::{NeuronConfig, ResetMode};
use crate::train::{ControlMode, TargetRates, TrainConfig};

pub const DATA_ROOT_ENV: &str = "MTSNN_DATA_ROOT";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    Env,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::Env => "env",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

/// Every recognised key with a short description. Flags are the same names
/// in kebab case.
pub const KEYS: &[(&str, &str)] = &[
    ("profile", "desk or full; sets the scale defaults below"),
    ("data_root", "dataset root containing train/ and test/"),
    ("out_dir", "output directory"),
    ("train_samples", "balanced training subset size, or all"),
    ("test_samples", "balanced test subset size, or all"),
    ("subset_seed", "seed for subset selection"),
    ("t_steps", "time steps per sample"),
    ("bin_width_us", "bin width in microseconds"),
    ("feature_width", "neurons per feature layer"),
    ("feature_layers", "number of feature layers"),
    ("label_hidden", "hidden label-classifier layer size"),
    ("task_hidden", "hidden task-classifier layer size"),
    ("recurrent", "recurrent weights in every layer"),
    ("init_gain", "uniform init bound is gain / sqrt(fan_in)"),
    ("tau_mem", "membrane time constant"),
    ("tau_syn", "synaptic time constant"),
    ("dt", "simulation step"),
    ("reset_mode", "subtract-spike or subtract-threshold"),
    ("phi1", "threshold for task 1"),
    ("phi2", "threshold for task 2"),
    ("control_mode", "threshold or ext-current"),
    ("i_ext2", "external current for task 2 (ext-current mode)"),
    ("gamma", "task-classifier loss weight"),
    ("use_task_block", "train with the task classifier"),
    ("task_probability", "probability of training task 1 on a batch"),
    ("epochs", "training epochs"),
    ("batch_size", "samples per batch"),
    ("lr", "Adam learning rate"),
    ("seed", "initialization and training seed"),
    ("surrogate", "exp-decay or fast-sigmoid"),
    ("surrogate_scale", "surrogate width"),
    ("detach_reset", "drop the reset path from gradients"),
    ("true_rate", "target rate of the correct output, spikes per step"),
    ("false_rate", "target rate of the other outputs, spikes per step"),
    ("seeds", "comma-separated seeds for sweeps"),
    ("values", "comma-separated sweep values"),
];

fn profile_default(key: &str, s: &ProfileSettings) -> Option<String> {
    let limit = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_else(|| "all".into());
    Some(match key {
        "train_samples" => limit(s.train_samples),
        "test_samples" => limit(s.test_samples),
        "t_steps" => s.t_steps.to_string(),
        "bin_width_us" => s.bin_width_us.to_string(),
        "feature_width" => s.feature_width.to_string(),
        "epochs" => s.epochs.to_string(),
        "batch_size" => s.batch_size.to_string(),
        "lr" => s.lr.to_string(),
        "seeds" => s.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        _ => return None,
    })
}

fn static_default(key: &str) -> Option<String> {
    let n = NeuronConfig::default();
    let t = TrainConfig::default();
    Some(match key {
        "profile" => "desk".into(),
        "data_root" => "data".into(),
        "out_dir" => "runs".into(),
        "subset_seed" => "0".into(),
        "feature_layers" => "2".into(),
        "label_hidden" => "128".into(),
        "task_hidden" => "128".into(),
        "recurrent" => "false".into(),
        "init_gain" => DEFAULT_INIT_GAIN.to_string(),
        "tau_mem" => n.tau_mem.to_string(),
        "tau_syn" => n.tau_syn.to_string(),
        "dt" => n.dt.to_string(),
        "reset_mode" => n.reset_mode.as_str().into(),
        "phi1" => t.phi1.to_string(),
        "phi2" => t.phi2.to_string(),
        "control_mode" => t.control_mode.as_str().into(),
        "i_ext2" => "none".into(),
        "gamma" => t.gamma.to_string(),
        "use_task_block" => t.use_task_block.to_string(),
        "task_probability" => t.task_probability.to_string(),
        "seed" => "0".into(),
        "surrogate" => t.surrogate.kind.as_str().into(),
        "surrogate_scale" => t.surrogate.scale.to_string(),
        "detach_reset" => t.detach_reset.to_string(),
        "true_rate" => t.target_rates.true_rate.to_string(),
        "false_rate" => t.target_rates.false_rate.to_string(),
        "values" => "default".into(),
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub value: String,
    pub source: Source,
}

/// Fully resolved settings keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    entries: BTreeMap<String, Setting>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key {key:?}")))
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim().replace('-', "_"), v.trim().to_string());
        check_key(&k)?;
        if v.is_empty() {
            return Err(Error::Config(format!("line {}: empty value for {k}", n + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}

impl CliConfig {
    /// Merges defaults, the environment, an optional file and flag values.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        Self::resolve_with(file, &[], flags)
    }

    /// As [`CliConfig::resolve`], with `overlay` applied on top of the file
    /// (recorded as file-sourced) and below the flags.
    pub fn resolve_with(file: Option<&Path>, overlay: &[(String, String)], flags: &[(String, String)]) -> Result<Self> {
        let mut file_pairs = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| Error::UnreadableFile { path: p.to_path_buf(), source })?;
                parse_config_text(&text)?
            }
            None => Vec::new(),
        };
        file_pairs.extend(overlay.iter().cloned());
        for (k, _) in flags.iter().chain(overlay) {
            check_key(k)?;
        }
        let lookup = |key: &str| -> Option<Setting> {
            if let Some((_, v)) = flags.iter().rev().find(|(k, _)| k == key) {
                return Some(Setting { value: v.clone(), source: Source::Flag });
            }
            if let Some((_, v)) = file_pairs.iter().rev().find(|(k, _)| k == key) {
                return Some(Setting { value: v.clone(), source: Source::File });
            }
            None
        };
        let profile_setting = lookup("profile").unwrap_or(Setting { value: "desk".into(), source: Source::Default });
        let profile = Profile::parse(&profile_setting.value)
            .ok_or_else(|| Error::Config(format!("unknown profile {:?}", profile_setting.value)))?;
        let settings = profile.settings();

        let mut entries = BTreeMap::new();
        for (key, _) in KEYS {
            let setting = match lookup(key) {
                Some(s) => s,
                None if *key == "data_root" && std::env::var_os(DATA_ROOT_ENV).is_some() => Setting {
                    value: std::env::var(DATA_ROOT_ENV)
                        .map_err(|_| Error::Config(format!("{DATA_ROOT_ENV} is not valid UTF-8")))?,
                    source: Source::Env,
                },
                None => Setting {
                    value: profile_default(key, &settings).or_else(|| static_default(key)).unwrap(),
                    source: Source::Default,
                },
            };
            entries.insert(key.to_string(), setting);
        }
        let cfg = Self { entries };
        cfg.train_config()?;
        cfg.topology(1)?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> &str {
        &self.entries[key].value
    }

    pub fn source(&self, key: &str) -> Source {
        self.entries[key].source
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
        }
    }

    fn limit(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            "all" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("invalid list entry {s:?} for {key}"))))
            .collect()
    }

    pub fn profile(&self) -> Result<Profile> {
        Profile::parse(self.get("profile")).ok_or_else(|| Error::Config("unknown profile".into()))
    }

    pub fn data_root(&self) -> PathBuf {
        PathBuf::from(self.get("data_root"))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    pub fn subset_seed(&self) -> Result<u64> {
        self.parse("subset_seed")
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        self.list("seeds")
    }

    /// Sweep values, or `None` for the family's defaults.
    pub fn values(&self) -> Result<Option<Vec<f64>>> {
        if self.get("values") == "default" {
            Ok(None)
        } else {
            self.list("values").map(Some)
        }
    }

    pub fn profile_settings(&self) -> Result<ProfileSettings> {
        Ok(ProfileSettings {
            train_samples: self.limit("train_samples")?,
            test_samples: self.limit("test_samples")?,
            t_steps: self.parse("t_steps")?,
            bin_width_us: self.parse("bin_width_us")?,
            feature_width: self.parse("feature_width")?,
            epochs: self.parse("epochs")?,
            batch_size: self.parse("batch_size")?,
            lr: self.parse("lr")?,
            seeds: self.seeds()?,
        })
    }

    pub fn neuron(&self) -> Result<NeuronConfig> {
        let reset_mode = ResetMode::parse(self.get("reset_mode"))
            .ok_or_else(|| Error::Config(format!("unknown reset_mode {:?}", self.get("reset_mode"))))?;
        let n = NeuronConfig {
            tau_mem: self.parse("tau_mem")?,
            tau_syn: self.parse("tau_syn")?,
            dt: self.parse("dt")?,
            threshold: self.parse("phi1")?,
            i_ext: 0.0,
            reset_mode,
        };
        n.validate()?;
        Ok(n)
    }

    /// NMNIST topology; the task block is built when `use_task_block` is set.
    pub fn topology(&self, input_size: usize) -> Result<Topology> {
        let width: usize = self.parse("feature_width")?;
        let layers: usize = self.parse("feature_layers")?;
        let task_hidden: usize = self.parse("task_hidden")?;
        let use_task = self.flag("use_task_block")?;
        let label_hidden: usize = self.parse("label_hidden")?;
        Ok(Topology {
            input_size,
            feature: vec![width; layers],
            label_hidden: if label_hidden == 0 { vec![] } else { vec![label_hidden] },
            task_hidden: use_task.then(|| if task_hidden == 0 { vec![] } else { vec![task_hidden] }),
            num_labels_task1: 10,
            num_labels_task2: 2,
            neuron: self.neuron()?,
            recurrent: self.flag("recurrent")?,
            init_gain: self.parse("init_gain")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let control_mode = ControlMode::parse(self.get("control_mode"))
            .ok_or_else(|| Error::Config(format!("unknown control_mode {:?}", self.get("control_mode"))))?;
        let kind = SurrogateKind::parse(self.get("surrogate"))
            .ok_or_else(|| Error::Config(format!("unknown surrogate {:?}", self.get("surrogate"))))?;
        let i_ext2 = match self.get("i_ext2") {
            "none" => None,
            _ => Some(self.parse("i_ext2")?),
        };
        let cfg = TrainConfig {
            phi1: self.parse("phi1")?,
            phi2: self.parse("phi2")?,
            gamma: self.parse("gamma")?,
            task_probability: self.parse("task_probability")?,
            epochs: self.parse("epochs")?,
            batch_size: self.parse("batch_size")?,
            lr: self.parse("lr")?,
            seed: self.parse("seed")?,
            control_mode,
            i_ext2,
            use_task_block: self.flag("use_task_block")?,
            surrogate: SurrogateSpec { kind, scale: self.parse("surrogate_scale")? },
            detach_reset: self.flag("detach_reset")?,
            target_rates: TargetRates { true_rate: self.parse("true_rate")?, false_rate: self.parse("false_rate")? },
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved settings in the file format, with each value's origin as a
    /// trailing comment. Loading this text back reproduces the configuration.
    pub fn to_text(&self) -> String {
        let mut out = format!("# mtsnn {VERSION}\n");
        for (key, _) in KEYS {
            let s = &self.entries[*key];
            out.push_str(&format!("{key} = {}  # {}\n", s.value, s.source));
        }
        out
    }
}
