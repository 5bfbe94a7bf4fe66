//! `slimkit` command line.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{self, build_toydet, generate_dataset, read_dataset, write_dataset, Dataset};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::graph::cost::full_report;
use crate::graph::io::{load_graph, save_graph};
use crate::graph::{coupling_groups, GraphModel};
use crate::hmi::adapter::MockLatency;
use crate::hmi::session::read_script;
use crate::hmi::{
    read_events, run_session, CommandAdapter, HmiConfig, MockAdapter, MonotonicClock, PlayerAdapter,
};
use crate::metrics::map_range;
use crate::prune::train::write_gamma_log;
use crate::prune::{prune, EpochStats, PruneConfig};

#[derive(Parser, Debug)]
#[command(
    name = "slimkit",
    version,
    about = "Batch-norm channel pruning for small detectors"
)]
pub struct Cli {
    /// JSON run configuration (partial; unspecified fields keep defaults).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArg {
    /// Dataset directory or manifest (default: <out>/data).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArg {
    /// Graph file.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdapterKind {
    Mock,
    Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic shape dataset into <out>/data.
    GenData {
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
    },
    /// Train a fresh toy detector; writes <out>/model.json.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sparse-train a model; writes <out>/sparse.json and <out>/gamma_log.csv.
    SparseTrain {
        #[command(flatten)]
        data: DataArg,
        /// Starting model (default: <out>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Prune at one or more rates; writes pruned_<rate>.json and prune_report_<rate>.json.
    Prune {
        /// Model to prune (default: <out>/sparse.json).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Pruning rate; repeat for a sweep.
        #[arg(long = "rate")]
        rates: Vec<f64>,
    },
    /// Fine-tune a pruned model; writes <out>/finetuned.json.
    Finetune {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a model; writes <out>/metrics_<model>.json.
    Eval {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_enum, default_value_t = Split::Val)]
        split: Split,
    },
    /// Parameter, FLOP and size report for a graph.
    ReportCost {
        #[command(flatten)]
        model: ModelArg,
    },
    /// Replay a gesture event stream through the media controller.
    HmiRun {
        /// JSONL events.
        #[arg(long)]
        events: PathBuf,
        /// JSON trial script.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Bindings and command templates (default: built-in bindings).
        #[arg(long)]
        bindings: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AdapterKind::Mock)]
        adapter: AdapterKind,
        /// Latency injected by the mock adapter.
        #[arg(long, default_value_t = 0.0)]
        mock_latency_ms: f64,
    },
    /// Check a graph file: topology, shapes and coupling.
    GraphValidate {
        #[command(flatten)]
        model: ModelArg,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn data_dir(cfg: &RunConfig, arg: &DataArg) -> PathBuf {
    arg.data.clone().unwrap_or_else(|| cfg.out_dir.join("data"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn load_data(cfg: &RunConfig, arg: &DataArg) -> Result<bench::DatasetSplits> {
    let dir = data_dir(cfg, arg);
    require_file(&dir, "dataset")?;
    read_dataset(&dir)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or("model".into(), |s| s.to_string_lossy().into_owned())
}

fn log_tail(log: &[EpochStats]) {
    if let Some(s) = log.last() {
        println!(
            "epoch {}: loss {:.5}  median|γ| {:.4}  frac<0.01 {:.3}",
            s.epoch, s.task_loss, s.median_abs_gamma, s.frac_below_0_01
        );
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn rate_tag(rate: f64) -> String {
    format!("{rate:.2}")
}

fn eval_split(
    cfg: &RunConfig,
    model: &GraphModel,
    data: &Dataset,
) -> Result<crate::metrics::MetricsReport> {
    let dets = bench::predict(model, data, &cfg.detector)?;
    map_range(
        &dets,
        &data.ground_truth(),
        data.num_classes(),
        &cfg.metrics.iou_thresholds,
    )
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::GenData { train, val } => {
            let splits = generate_dataset(
                &cfg.scene,
                train.unwrap_or(cfg.n_train),
                val.unwrap_or(cfg.n_val),
            )?;
            let manifest = write_dataset(&splits, &out.join("data"))?;
            println!(
                "wrote {} train / {} val images, class counts {:?}; manifest {}",
                splits.train.len(),
                splits.val.len(),
                splits.train.class_histogram(),
                manifest.display()
            );
        }
        Command::Train { data, epochs } => {
            let d = load_data(&cfg, &data)?;
            let mut tc = cfg.train.clone();
            tc.lambda = 0.0;
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let model = build_toydet(&cfg.detector)?;
            let o = bench::train(model, &d.train, &cfg.detector, &tc)?;
            ensure_dir(&out)?;
            save_graph(&o.model, out.join("model.json"))?;
            write_gamma_log(&out.join("train_log.csv"), &o.log)?;
            log_tail(&o.log);
            let r = eval_split(&cfg, &o.model, &d.val)?;
            println!("val mAP50 {:.4}  mAP50-95 {:.4}", r.map50, r.map50_95);
        }
        Command::SparseTrain {
            data,
            model,
            lambda,
            epochs,
        } => {
            let d = load_data(&cfg, &data)?;
            let path = model.unwrap_or_else(|| out.join("model.json"));
            require_file(&path, "model")?;
            let m = load_graph(&path)?;
            let mut sc = cfg.sparse.clone();
            if let Some(l) = lambda {
                sc.lambda = l;
            }
            if let Some(e) = epochs {
                sc.epochs = e;
            }
            sc.validate()?;
            let o = bench::train(m, &d.train, &cfg.detector, &sc)?;
            ensure_dir(&out)?;
            save_graph(&o.model, out.join("sparse.json"))?;
            write_gamma_log(&out.join("gamma_log.csv"), &o.log)?;
            log_tail(&o.log);
        }
        Command::Prune { model, rates } => {
            let path = model.unwrap_or_else(|| out.join("sparse.json"));
            require_file(&path, "model")?;
            let m = load_graph(&path)?;
            let rates = if rates.is_empty() {
                vec![cfg.prune.rate]
            } else {
                rates
            };
            let mut reports = Vec::new();
            for rate in &rates {
                PruneConfig {
                    rate: *rate,
                    ..cfg.prune.clone()
                }
                .validate()?;
            }
            ensure_dir(&out)?;
            for rate in rates {
                let pc = PruneConfig {
                    rate,
                    ..cfg.prune.clone()
                };
                let (pruned, report) = prune(&m, &pc)?;
                let tag = rate_tag(rate);
                save_graph(&pruned, out.join(format!("pruned_{tag}.json")))?;
                write_json_atomic(&out.join(format!("prune_report_{tag}.json")), &report)?;
                println!(
                    "rate {tag}: channels {} -> {}  params {} -> {}  FLOPs {} -> {}  threshold {:.6}",
                    report.channels_before,
                    report.channels_after,
                    report.params_before,
                    report.params_after,
                    report.flops_before,
                    report.flops_after,
                    report.effective_threshold
                );
                reports.push(report);
            }
            write_json_atomic(&out.join("prune_sweep.json"), &reports)?;
        }
        Command::Finetune {
            model,
            data,
            epochs,
        } => {
            let d = load_data(&cfg, &data)?;
            require_file(&model.model, "model")?;
            let m = load_graph(&model.model)?;
            let mut fc = cfg.finetune.clone();
            if let Some(e) = epochs {
                fc.epochs = e;
            }
            let o = bench::finetune(m, &d.train, &d.val, &cfg.detector, &fc)?;
            ensure_dir(&out)?;
            save_graph(&o.model, out.join("finetuned.json"))?;
            write_gamma_log(&out.join("finetune_log.csv"), &o.log)?;
            println!(
                "best val mAP50 {:.4} at epoch {} (final epoch {:.4})",
                o.best_map50, o.best_epoch, o.final_map50
            );
        }
        Command::Eval { model, data, split } => {
            let d = load_data(&cfg, &data)?;
            require_file(&model.model, "model")?;
            let m = load_graph(&model.model)?;
            let set = match split {
                Split::Train => &d.train,
                Split::Val => &d.val,
            };
            let r = eval_split(&cfg, &m, set)?;
            ensure_dir(&out)?;
            write_json_atomic(
                &out.join(format!("metrics_{}.json", stem(&model.model))),
                &r,
            )?;
            print!("{}", r.render(&set.class_names));
        }
        Command::ReportCost { model } => {
            require_file(&model.model, "model")?;
            let m = load_graph(&model.model)?;
            let r = full_report(&m)?;
            ensure_dir(&out)?;
            write_json_atomic(&out.join(format!("cost_{}.json", stem(&model.model))), &r)?;
            println!(
                "params {} ({:.3} M)  FLOPs {} ({:.4} G)  size {:.3} MB",
                r.params_total,
                r.params_millions(),
                r.flops,
                r.gflops(),
                r.model_size_mb()
            );
        }
        Command::HmiRun {
            events,
            script,
            bindings,
            adapter,
            mock_latency_ms,
        } => {
            let hmi = match bindings.or(cfg.hmi_bindings.clone()) {
                Some(p) => HmiConfig::load(&p)?,
                None => HmiConfig::default(),
            };
            let evs = read_events(&events)?;
            let trials = script.as_deref().map(read_script).transpose()?;
            if !(mock_latency_ms >= 0.0) || !mock_latency_ms.is_finite() {
                return Err(Error::Config("mock latency must be >= 0".into()));
            }
            let mut adapter: Box<dyn PlayerAdapter> = match adapter {
                AdapterKind::Mock => Box::new(MockAdapter::new().with_latency(MockLatency::Sleep(
                    std::time::Duration::from_secs_f64(mock_latency_ms / 1e3),
                ))),
                AdapterKind::Command => Box::new(CommandAdapter::new(hmi.commands.clone())?),
            };
            let report = run_session(
                &evs,
                &hmi.bindings,
                adapter.as_mut(),
                &MonotonicClock::new(),
                trials.as_deref(),
            )?;
            ensure_dir(&out)?;
            write_json_atomic(&out.join("session.json"), &report)?;
            let table = report.render_table();
            write_atomic(&out.join("session.txt"), table.as_bytes())?;
            print!("{table}");
        }
        Command::GraphValidate { model } => {
            require_file(&model.model, "model")?;
            let m = load_graph(&model.model)?;
            let cost = full_report(&m)?;
            let coupling = coupling_groups(&m)?;
            print_json(&serde_json::json!({
                "name": m.name,
                "nodes": m.nodes.len(),
                "outputs": m.outputs,
                "params": cost.params_total,
                "flops": cost.flops,
                "batchnorm_layers": m.batchnorm_nodes().len(),
                "coupling_groups": coupling.groups.len(),
            }))?;
        }
    }
    Ok(())
}

/// Parse, run and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
