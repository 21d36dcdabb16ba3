//! One function per subcommand.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use serde_json::json;

use eeloc::bench::{
    depth_study, sweep_threshold, time_inference, write_depth_csv, write_sweep_csv,
    write_timing_csv, SweepSpec, ThetaGrid,
};
use eeloc::calibrate::{
    calibrate as run_calibration, evaluate_policy, write_reports_csv, write_summary_json,
    CalibrationSummary, ConfigSpace, EvalSet, Objective, SelectionPolicy,
};
use eeloc::exitnet::{
    build_dscp_variant, build_ujiloc_variant, load_model, reference_topology, save_model,
    train_all_exits, train_baseline, DscpConfig, ExitPolicy, ModelSpec, MultiExitModel, UjiConfig,
    UncertaintyMethod,
};
use eeloc::fingerprint::{
    load_native, load_ujindoorloc, split, synth_generate, write_native, LabeledDataset, SynthParams,
};
use eeloc::Error;

use crate::config::{Arch, CommonArgs, DataFormat, RunConfig};
use crate::policy::{build_policy, parse_mask, PolicyArgs};

const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];
const DEFAULT_REPS: usize = 30;
const WRITER: &str = concat!("eeloc ", env!("CARGO_PKG_VERSION"));

#[derive(Args, Debug)]
pub struct SynthArgs {}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    /// Train/calibration/test fractions, e.g. `0.8,0.1,0.1`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub method: Option<UncertaintyMethod>,
    /// Comma-separated thresholds tried at every exit (default: the method's grid).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// `default`, `latency:<macs>` or `error:<loss>`.
    #[arg(long)]
    pub policy: Option<SelectionPolicy>,
    /// `accuracy` or `error`.
    #[arg(long)]
    pub objective: Option<Objective>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Calibration,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub method: Option<UncertaintyMethod>,
    #[arg(long, default_value_t = 0.01)]
    pub start: f64,
    #[arg(long, default_value_t = 0.50)]
    pub stop: f64,
    #[arg(long, default_value_t = 0.02)]
    pub step: f64,
    /// Explicit comma-separated thresholds; replaces the range.
    #[arg(long, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    /// Exits taking part: `all` or one 0/1 per exit.
    #[arg(long, default_value = "all")]
    pub exits: String,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    /// Run the depth study over these backbone depths instead of timing a model.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[command(flatten)]
    pub policy: PolicyArgs,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth_params(cfg: &RunConfig) -> Result<SynthParams> {
    match &cfg.data {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text).map_err(Error::from)?)
        }
        None => Ok(cfg.file.synth.clone().unwrap_or_default()),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<LabeledDataset> {
    let ds = match cfg.format {
        DataFormat::Synth => synth_generate(&synth_params(cfg)?)?,
        DataFormat::Native | DataFormat::Ujindoorloc => {
            let path = cfg
                .data
                .as_deref()
                .ok_or_else(|| invalid("--data is required"))?;
            if cfg.format == DataFormat::Native {
                load_native(path)?
            } else {
                load_ujindoorloc(path)?
            }
        }
    };
    if ds.is_empty() {
        return Err(Error::Format("dataset holds no samples".into()).into());
    }
    Ok(ds)
}

struct Splits {
    train: LabeledDataset,
    calibration: LabeledDataset,
    test: LabeledDataset,
    all: LabeledDataset,
}

impl Splits {
    fn get(&self, which: SplitArg) -> &LabeledDataset {
        match which {
            SplitArg::Train => &self.train,
            SplitArg::Calibration => &self.calibration,
            SplitArg::Test => &self.test,
            SplitArg::All => &self.all,
        }
    }
}

fn make_splits(ds: LabeledDataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let (train, calibration, test) = split(&ds, fractions, seed)?;
    Ok(Splits {
        train,
        calibration,
        test,
        all: ds,
    })
}

fn split_fractions(args: Option<&[f64]>, cfg: &RunConfig) -> Result<[f64; 3]> {
    match args {
        Some(v) => v
            .try_into()
            .map_err(|_| invalid("--split takes exactly three fractions")),
        None => Ok(cfg.file.split.unwrap_or(DEFAULT_SPLIT)),
    }
}

fn load_existing(cfg: &RunConfig) -> Result<MultiExitModel> {
    let path = cfg.model_path()?;
    if !path.exists() {
        return Err(Error::Prerequisite(format!(
            "no model at {}; run `eeloc train` first",
            path.display()
        ))
        .into());
    }
    Ok(load_model(path)?)
}

/// Reloads the data the model was trained on and recreates its split.
fn model_data(cfg: &RunConfig, model: &MultiExitModel) -> Result<Splits> {
    let ds = load_dataset(cfg)?;
    if let Some(d) = &model.meta.source_digest {
        if *d != ds.source_digest {
            return Err(Error::Format(format!(
                "dataset digest {} does not match the one the model was trained on ({d})",
                ds.source_digest
            ))
            .into());
        }
    }
    if let Some(idx) = &model.wap_index {
        if *idx != ds.wap_index {
            return Err(Error::Format("dataset WAP columns differ from the model's".into()).into());
        }
    }
    let seed = model.meta.split_seed.unwrap_or(cfg.seed);
    let fractions = model.meta.split_fractions.unwrap_or(DEFAULT_SPLIT);
    make_splits(ds, fractions, seed)
}

fn require_baseline(model: &MultiExitModel) -> Result<()> {
    if !model.status.baseline {
        return Err(Error::Prerequisite(
            "the baseline is not trained; run `eeloc train` first".into(),
        )
        .into());
    }
    Ok(())
}

fn require_exits(model: &MultiExitModel, policy: &ExitPolicy) -> Result<()> {
    require_baseline(model)?;
    for (i, rule) in policy.exits.iter().enumerate() {
        if rule.is_some() && !model.status.exits[i] {
            return Err(Error::Prerequisite(format!(
                "exit '{}' is not trained; run `eeloc train-exits` first",
                model.spec.exits[i].name
            ))
            .into());
        }
    }
    Ok(())
}

fn build_spec(arch: Arch, side: usize, classes: usize) -> Result<ModelSpec> {
    let spec = match arch {
        Arch::Reference => reference_topology(side, classes)?,
        Arch::Dscp => build_dscp_variant(&DscpConfig {
            input_side: side,
            classes,
            ..Default::default()
        })?,
        Arch::Uji => build_ujiloc_variant(&UjiConfig {
            input_side: side,
            classes,
            ..Default::default()
        })?,
    };
    Ok(spec)
}

fn set_accuracy(model: &MultiExitModel, set: &LabeledDataset, policy: &ExitPolicy) -> Result<f64> {
    Ok(evaluate_policy(model, policy, &EvalSet::from_dataset(set)?)?.accuracy)
}

pub fn synth(common: &CommonArgs, _args: &SynthArgs) -> Result<()> {
    let cfg = RunConfig::resolve("synth", common)?;
    let params = synth_params(&cfg)?;
    let ds = synth_generate(&params)?;
    let out = cfg.out_path()?;
    write_native(&ds, out)?;
    let sidecar = out.with_extension("json");
    let record = json!({
        "writer": WRITER,
        "params": params,
        "source_digest": ds.source_digest,
        "samples": ds.len(),
        "classes": ds.num_classes,
    });
    std::fs::write(&sidecar, serde_json::to_vec_pretty(&record)?)?;
    eprintln!(
        "wrote {} samples to {} ({})",
        ds.len(),
        out.display(),
        sidecar.display()
    );
    Ok(())
}

pub fn train(common: &CommonArgs, args: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::resolve("train", common)?;
    let path = cfg.model_path()?.to_path_buf();
    let arch = args.arch.or(cfg.file.arch).unwrap_or(Arch::Reference);
    let fractions = split_fractions(args.split.as_deref(), &cfg)?;
    let ds = load_dataset(&cfg)?;
    let (side, classes, digest, wap_index) = (
        ds.image_side(),
        ds.num_classes,
        ds.source_digest.clone(),
        ds.wap_index.clone(),
    );
    let splits = make_splits(ds, fractions, cfg.seed)?;
    if splits.train.is_empty() {
        return Err(invalid("the training split is empty"));
    }

    let mut model = MultiExitModel::new(build_spec(arch, side, classes)?, cfg.seed)?;
    model.wap_index = Some(wap_index);
    model.meta.source_digest = Some(digest.clone());
    model.meta.split_seed = Some(cfg.seed);
    model.meta.split_fractions = Some(fractions);
    let history = train_baseline(
        &mut model,
        &splits.train.tensors()?,
        &splits.train.labels(),
        &cfg.hyper,
    )?;
    save_model(&model, &path)?;

    let baseline = ExitPolicy::all_off(model.num_exits());
    print_json(&json!({
        "writer": WRITER,
        "model": path,
        "arch": arch,
        "seed": cfg.seed,
        "source_digest": digest,
        "hyperparams": cfg.hyper,
        "final_epoch": history.last(),
        "train_accuracy": set_accuracy(&model, &splits.train, &baseline)?,
    }))
}

pub fn train_exits(common: &CommonArgs) -> Result<()> {
    let cfg = RunConfig::resolve("train-exits", common)?;
    let mut model = load_existing(&cfg)?;
    require_baseline(&model)?;
    let splits = model_data(&cfg, &model)?;
    let history = train_all_exits(
        &mut model,
        &splits.train.tensors()?,
        &splits.train.labels(),
        &cfg.hyper,
    )?;
    save_model(&model, cfg.model_path()?)?;
    let finals: Vec<_> = history.iter().map(|h| h.last()).collect();
    print_json(&json!({
        "writer": WRITER,
        "seed": cfg.seed,
        "source_digest": model.meta.source_digest,
        "hyperparams": cfg.hyper,
        "exits": model.spec.exits.iter().map(|e| &e.name).collect::<Vec<_>>(),
        "final_epoch": finals,
    }))
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = match &cfg.out {
        Some(p) => p.clone(),
        None => cfg
            .model_path()?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir)?;
    }
    Ok(dir)
}

fn parse_in<T: std::str::FromStr<Err = Error>>(value: Option<&String>) -> Result<Option<T>> {
    Ok(value.map(|s| s.parse()).transpose()?)
}

pub fn calibrate(common: &CommonArgs, args: &CalibrateArgs) -> Result<()> {
    let cfg = RunConfig::resolve("calibrate", common)?;
    let mut model = load_existing(&cfg)?;
    let n = model.num_exits();
    require_exits(
        &model,
        &ExitPolicy::uniform(n, UncertaintyMethod::Margin, 0.5),
    )?;
    let method = match args.method {
        Some(m) => m,
        None => parse_in(cfg.file.method.as_ref())?.unwrap_or(UncertaintyMethod::Margin),
    };
    let selection = match args.policy {
        Some(p) => p,
        None => parse_in(cfg.file.policy.as_ref())?.unwrap_or_default(),
    };
    let objective = args.objective.unwrap_or_default();
    let grid = args
        .grid
        .clone()
        .or_else(|| {
            cfg.file
                .grid
                .as_ref()
                .and_then(|g| g.get(method.name()).cloned())
        })
        .unwrap_or_else(|| method.default_grid());
    let space = ConfigSpace::uniform(n, method, grid);

    let splits = model_data(&cfg, &model)?;
    let set = EvalSet::from_dataset(&splits.calibration)?;
    let result = run_calibration(&model, &space, &set, selection, objective)?;

    let dir = output_dir(&cfg)?;
    write_reports_csv(&result.reports, n, &dir.join("calibration.csv"))?;
    let summary = CalibrationSummary::new(
        &result,
        set.len(),
        Some(cfg.seed),
        model.meta.source_digest.clone(),
    );
    write_summary_json(&summary, &dir.join("calibration.json"))?;

    model.default_policy = result.selection.policy.clone();
    save_model(&model, cfg.model_path()?)?;
    print_json(&summary)
}

pub fn eval(common: &CommonArgs, args: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::resolve("eval", common)?;
    let model = load_existing(&cfg)?;
    let policy = build_policy(&model, &model.default_policy, &args.policy)?;
    require_exits(&model, &policy)?;
    let splits = model_data(&cfg, &model)?;
    let set = EvalSet::from_dataset(splits.get(args.split))?;
    let mut m = evaluate_policy(&model, &policy, &set)?;
    m.predictions.clear();
    print_json(&json!({
        "writer": WRITER,
        "seed": model.meta.split_seed,
        "source_digest": model.meta.source_digest,
        "split": format!("{:?}", args.split).to_lowercase(),
        "samples": set.len(),
        "policy": policy.describe(),
        "accuracy": m.accuracy,
        "error_m": m.error_m,
        "mean_macs": m.mean_macs,
        "baseline_macs": model.spec.baseline_macs(),
        "mean_ns": m.mean_ns,
        "exit_rates": m.exit_rates,
    }))
}

pub fn sweep(common: &CommonArgs, args: &SweepArgs) -> Result<()> {
    let cfg = RunConfig::resolve("sweep", common)?;
    let model = load_existing(&cfg)?;
    let n = model.num_exits();
    let enabled = parse_mask(&args.exits, n)?;
    let method = match args.method {
        Some(m) => m,
        None => parse_in(cfg.file.method.as_ref())?.unwrap_or(UncertaintyMethod::Margin),
    };
    let thetas = match &args.thetas {
        Some(v) => ThetaGrid::List(v.clone()),
        None => ThetaGrid::Range {
            start: args.start,
            stop: args.stop,
            step: args.step,
        },
    };
    let spec = SweepSpec {
        method,
        thetas,
        enabled,
    };
    require_exits(&model, &spec.policy(method.never_exit_threshold()))?;
    let out = cfg.out_path()?.to_path_buf();
    let splits = model_data(&cfg, &model)?;
    let points = sweep_threshold(
        &model,
        &spec,
        &EvalSet::from_dataset(splits.get(args.split))?,
    )?;
    write_sweep_csv(&points, n, &out)?;
    print_json(&json!({
        "writer": WRITER,
        "source_digest": model.meta.source_digest,
        "method": method,
        "points": points.len(),
        "out": out,
    }))
}

pub fn bench(common: &CommonArgs, args: &BenchArgs) -> Result<()> {
    let cfg = RunConfig::resolve("bench", common)?;
    if let Some(depths) = &args.depths {
        return depth(&cfg, depths);
    }
    let model = load_existing(&cfg)?;
    let n = model.num_exits();
    let mut policies = vec![ExitPolicy::all_off(n), model.default_policy.clone()];
    if !args.policy.is_empty() {
        policies.push(build_policy(&model, &model.default_policy, &args.policy)?);
    }
    policies.dedup();
    for p in &policies {
        require_exits(&model, p)?;
    }
    let splits = model_data(&cfg, &model)?;
    let inputs = splits.get(args.split).tensors()?;
    let stats = policies
        .iter()
        .map(|p| time_inference(&model, p, &inputs, args.reps))
        .collect::<eeloc::Result<Vec<_>>>()?;
    if let Some(out) = &cfg.out {
        write_timing_csv(&stats, out)?;
    }
    print_json(&json!({ "writer": WRITER, "samples": inputs.len(), "timings": stats }))
}

fn depth(cfg: &RunConfig, depths: &[usize]) -> Result<()> {
    if depths.is_empty() {
        return Err(invalid("--depths needs at least one depth"));
    }
    let ds = load_dataset(cfg)?;
    let classes = ds.num_classes;
    let fractions = cfg.file.split.unwrap_or(DEFAULT_SPLIT);
    let splits = make_splits(ds, fractions, cfg.seed)?;
    let train = EvalSet::from_dataset(&splits.train)?;
    let test = EvalSet::from_dataset(&splits.test)?;
    let points = depth_study(depths, &train, &test, &cfg.hyper, cfg.seed, classes)?;
    if let Some(out) = &cfg.out {
        write_depth_csv(&points, out)?;
    }
    print_json(&json!({ "writer": WRITER, "seed": cfg.seed, "depths": points }))
}
