//! Command-line interface.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{save_checkpoint, Metadata};
use crate::config::{CliConfig, VERSION};
use crate::data::fetch::{download_split, sha256_hex, verify_tree, write_manifest};
use crate::data::synth::{write_split, SynthConfig};
use crate::data::{load_dataset, Split, NMNIST_FEATURES};
use crate::error::{Error, Result};
use crate::experiments::{
    curve_file_name, emit_table, run_points, training_curve_svg, Datasets, Family, SweepSpec, TableFormat,
};
use crate::graph::{build_mtsnn, Control};
use crate::train::{evaluate_with_control, ControlMode, Task, Trainer};

#[derive(Parser, Debug)]
#[command(name = "mtsnn", version, about = "Multi-task spiking neural networks on N-MNIST")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Download and verify N-MNIST, or verify an existing tree.
    FetchData(FetchArgs),
    /// Train one network.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Run an experiment family and write its result table.
    Sweep(SweepArgs),
    /// Write a synthetic N-MNIST-shaped dataset.
    GenFixtures(FixtureArgs),
}

#[derive(Args, Debug)]
pub struct FetchArgs {
    #[arg(long, env = "MTSNN_DATA_ROOT", default_value = "data")]
    pub root: PathBuf,
    /// Only check files against the manifest.
    #[arg(long)]
    pub verify_only: bool,
    #[arg(long)]
    pub train_url: Option<String>,
    #[arg(long)]
    pub test_url: Option<String>,
    /// Expected SHA-256 of the training archive.
    #[arg(long)]
    pub train_sha256: Option<String>,
    /// Expected SHA-256 of the test archive.
    #[arg(long)]
    pub test_sha256: Option<String>,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long, env = "MTSNN_DATA_ROOT", default_value = "data")]
    pub root: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub train_count: usize,
    #[arg(long, default_value_t = 500)]
    pub test_count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Task to evaluate; both when omitted.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub task: Option<u8>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// threshold, gamma, extcurrent or base
    pub family: String,
    #[command(flatten)]
    pub config: ConfigArgs,
}

macro_rules! config_args {
    ($($field:ident),* $(,)?) => {
        /// Settings shared by train, eval and sweep. Each flag overrides the
        /// key of the same name in `--config`.
        #[derive(Args, Debug, Default)]
        pub struct ConfigArgs {
            /// Configuration file of `key = value` lines.
            #[arg(long)]
            pub config: Option<PathBuf>,
            $(
                #[arg(long)]
                pub $field: Option<String>,
            )*
        }

        impl ConfigArgs {
            pub fn pairs(&self) -> Vec<(String, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field).to_string(), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

config_args!(
    profile,
    data_root,
    out_dir,
    train_samples,
    test_samples,
    subset_seed,
    t_steps,
    bin_width_us,
    feature_width,
    feature_layers,
    label_hidden,
    task_hidden,
    recurrent,
    init_gain,
    tau_mem,
    tau_syn,
    dt,
    reset_mode,
    phi1,
    phi2,
    control_mode,
    i_ext2,
    gamma,
    use_task_block,
    task_probability,
    epochs,
    batch_size,
    lr,
    seed,
    surrogate,
    surrogate_scale,
    detach_reset,
    true_rate,
    false_rate,
    seeds,
    values,
);

impl ConfigArgs {
    pub fn resolve(&self) -> Result<CliConfig> {
        CliConfig::resolve(self.config.as_deref(), &self.pairs())
    }
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::FetchData(a) => cmd_fetch_data(&a),
        Command::Train(a) => cmd_train(&a.resolve()?),
        Command::Eval(a) => {
            let task = a.task.map(Task::from_id).transpose()?;
            cmd_eval(&a.checkpoint, task, &a.config)
        }
        Command::Sweep(a) => {
            let family =
                Family::parse(&a.family).ok_or_else(|| Error::Config(format!("unknown family {:?}", a.family)))?;
            cmd_sweep(family, &a.config.resolve()?)
        }
        Command::GenFixtures(a) => cmd_gen_fixtures(&a),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::UnreadableFile { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::UnreadableFile { path: path.to_path_buf(), source })
}

pub fn cmd_fetch_data(a: &FetchArgs) -> Result<()> {
    if !a.verify_only {
        let (Some(train_url), Some(test_url)) = (&a.train_url, &a.test_url) else {
            return Err(Error::Config("downloading needs --train-url and --test-url (or use --verify-only)".into()));
        };
        create_dir(&a.root)?;
        for (split, url, sha) in [(Split::Train, train_url, &a.train_sha256), (Split::Test, test_url, &a.test_sha256)] {
            log::info!("downloading {} split from {url}", split.dir_name());
            let n = download_split(url, sha.as_deref(), &a.root, split)?;
            log::info!("extracted {n} files");
        }
        let n = write_manifest(&a.root)?;
        log::info!("manifest lists {n} files");
    }
    let report = verify_tree(&a.root)?;
    let mut out = std::io::stdout().lock();
    for p in &report.mismatched {
        let _ = writeln!(out, "MISMATCH {}", p.display());
    }
    for p in &report.missing {
        let _ = writeln!(out, "MISSING {}", p.display());
    }
    let _ = writeln!(
        out,
        "checked {} files: {} ok, {} mismatched, {} missing",
        report.checked,
        report.ok.len(),
        report.mismatched.len(),
        report.missing.len()
    );
    match report.mismatched.first().or(report.missing.first()) {
        Some(p) => Err(Error::ChecksumMismatch(a.root.join(p))),
        None => Ok(()),
    }
}

pub fn cmd_gen_fixtures(a: &FixtureArgs) -> Result<()> {
    let cfg = SynthConfig::default();
    write_split(&a.root, Split::Train, a.train_count, a.seed, &cfg)?;
    write_split(&a.root, Split::Test, a.test_count, a.seed.wrapping_add(1), &cfg)?;
    let n = write_manifest(&a.root)?;
    log::info!("wrote {n} synthetic samples under {}", a.root.display());
    Ok(())
}

fn checkpoint_metadata(cfg: &CliConfig) -> Result<Metadata> {
    let t = cfg.train_config()?;
    let mut m = Metadata::new();
    m.insert("version".into(), VERSION.into());
    m.insert("phi1".into(), t.phi1.to_string());
    m.insert("phi2".into(), t.phi2.to_string());
    m.insert("control_mode".into(), t.control_mode.as_str().into());
    if let Some(i) = t.i_ext2 {
        m.insert("i_ext2".into(), i.to_string());
    }
    m.insert("t_steps".into(), cfg.get("t_steps").into());
    m.insert("bin_width_us".into(), cfg.get("bin_width_us").into());
    Ok(m)
}

pub fn cmd_train(cfg: &CliConfig) -> Result<()> {
    let settings = cfg.profile_settings()?;
    let tc = cfg.train_config()?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_file(&out.join("config.resolved"), cfg.to_text())?;

    let root = cfg.data_root();
    let binning = settings.binning();
    let subset_seed = cfg.subset_seed()?;
    let train = load_dataset(&root, Split::Train, settings.train_samples, subset_seed)?.load_all(binning)?;
    let test = load_dataset(&root, Split::Test, settings.test_samples, subset_seed)?.load_all(binning)?;
    log::info!("loaded {} training and {} test samples", train.len(), test.len());

    let net = build_mtsnn(&cfg.topology(NMNIST_FEATURES)?, tc.seed)?;
    let mut trainer = Trainer::new(net, tc)?;
    trainer.train(&train)?;
    let acc = trainer.record_test(&test)?;
    log::info!("test accuracy task 1 {:.4} task 2 {:.4}", acc[0], acc[1]);

    write_file(&out.join("metrics.csv"), trainer.metrics.to_csv())?;
    write_file(&out.join("training_curve.svg"), training_curve_svg(&trainer.metrics, "training accuracy"))?;
    save_checkpoint(&out.join("model.ckpt"), &trainer.net, &checkpoint_metadata(cfg)?)?;
    println!("{}", out.display());
    Ok(())
}

pub const EVAL_HEADER: &str = "checkpoint_sha256,task,accuracy,phi1,phi2,control_mode,i_ext2,samples";

pub fn cmd_eval(checkpoint: &Path, task: Option<Task>, args: &ConfigArgs) -> Result<()> {
    let bytes =
        fs::read(checkpoint).map_err(|source| Error::UnreadableFile { path: checkpoint.to_path_buf(), source })?;
    let hash = sha256_hex(&bytes);
    let (net, meta) = crate::checkpoint::from_bytes(&bytes)?;

    // values stored with the checkpoint fill in for keys not given as flags
    let stored: Vec<(String, String)> = ["phi1", "phi2", "control_mode", "i_ext2", "t_steps", "bin_width_us"]
        .iter()
        .filter_map(|k| meta.get(*k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let cfg = CliConfig::resolve_with(args.config.as_deref(), &stored, &args.pairs())?;
    let tc = cfg.train_config()?;
    let settings = cfg.profile_settings()?;
    let test = load_dataset(&cfg.data_root(), Split::Test, settings.test_samples, cfg.subset_seed()?)?
        .load_all(settings.binning())?;

    let tasks: Vec<Task> = match task {
        Some(t) => vec![t],
        None => Task::BOTH.to_vec(),
    };
    let out = cfg.out_dir();
    create_dir(&out)?;
    let mut csv = String::from(EVAL_HEADER);
    csv.push('\n');
    for t in tasks {
        let control: Control = tc.control_for(t);
        let acc = evaluate_with_control(&net, &test, t, control)?;
        println!("task {} accuracy {:.4}", t.id(), acc);
        let i_ext2 = match tc.control_mode {
            ControlMode::ExternalCurrent => tc.i_ext2.map(|v| v.to_string()).unwrap_or_default(),
            ControlMode::Threshold => String::new(),
        };
        csv.push_str(&format!(
            "{hash},{},{acc:.6},{},{},{},{i_ext2},{}\n",
            t.id(),
            tc.phi1,
            tc.phi2,
            tc.control_mode.as_str(),
            test.len()
        ));
    }
    write_file(&out.join("eval.csv"), csv)?;
    write_file(&out.join("eval.config.resolved"), cfg.to_text())?;
    Ok(())
}

pub fn cmd_sweep(family: Family, cfg: &CliConfig) -> Result<()> {
    let settings = cfg.profile_settings()?;
    let values = cfg.values()?.unwrap_or_else(|| family.default_values());
    let mut spec = SweepSpec::new(family, values, cfg.profile()?);
    spec.base_config = cfg.train_config()?;
    spec.topology = cfg.topology(NMNIST_FEATURES)?;
    spec.seeds = settings.seeds.clone();

    let out = cfg.out_dir();
    create_dir(&out)?;
    write_file(&out.join(format!("{}.config.resolved", family.as_str())), cfg.to_text())?;
    let data = Datasets::load(&cfg.data_root(), &settings, cfg.subset_seed()?)?;
    let points = run_points(&spec, &data)?;
    for p in &points {
        let name = curve_file_name(family, p.row.value, p.row.seed);
        write_file(&out.join(name), training_curve_svg(&p.metrics, &p.row.model_label()))?;
    }
    let rows: Vec<_> = points.into_iter().map(|p| p.row).collect();
    write_file(&out.join(format!("{}.csv", family.as_str())), emit_table(&rows, TableFormat::Csv)?)?;
    let md = emit_table(&rows, TableFormat::Markdown)?;
    write_file(&out.join(format!("{}.md", family.as_str())), &md)?;
    std::io::stdout().write_all(&md)?;
    Ok(())
}

/// Structured `timestamp level target message` lines on standard error.
pub fn init_logging() {
    use std::io::Write;
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(buf, "{} {:<5} {} {}", buf.timestamp_millis(), record.level(), record.target(), record.args())
        })
        .try_init();
}
