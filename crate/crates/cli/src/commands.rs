use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use porenet::adjoint::gradient_check;
use porenet::eval::{evaluate, feature_sensitivity, predict_raw, EvalModel, MetricReport};
use porenet::gnn::{gnn_forward, Checkpoint, GnnDims, GnnParameters, ModelKind, ModelParameters};
use porenet::network::{
    compute_norm_stats, generate_dataset, generate_synthetic, normalize, synthetic_truth,
    DatasetSpec, NormStats, PoreNetwork,
};
use porenet::solver::{self, analytic_conductance, FlowDump, ShapeFactor};
use porenet::training::{Optimizer, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{read_config_file, resolve};
use crate::data::{create_dir, load_dataset, write, Manifest, ManifestEntry};
use crate::{CliError, GlobalArgs};

type Res<T = ()> = Result<T, CliError>;
type FileConfig = Option<Map<String, Value>>;

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Resolves `--jobs` (flag, then config file, then core count) and runs `f` on a pool of that size.
pub fn run_with_pool(global: &GlobalArgs, f: impl FnOnce(&FileConfig) -> Res + Send) -> Res {
    let file = match &global.config {
        Some(p) => Some(read_config_file(p)?),
        None => None,
    };
    let from_file = match file.as_ref().and_then(|m| m.get("jobs")) {
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| CliError::usage("config: jobs must be a non-negative integer"))?
                as usize,
        ),
        None => None,
    };
    let jobs = global.jobs.or(from_file).unwrap_or_else(default_jobs);
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| f(&file))
}

/// Defaults ← config file ← flags (including the global `--seed`/`--jobs`), then printed.
fn effective<C, F>(
    name: &str,
    global: &GlobalArgs,
    file: &FileConfig,
    flags: &F,
    defaults: C,
) -> Res<C>
where
    C: Serialize + serde::de::DeserializeOwned,
    F: Serialize,
{
    let mut fv = match serde_json::to_value(flags).expect("flags serialize") {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    if let Some(s) = global.seed {
        fv.insert("seed".into(), json!(s));
    }
    fv.insert("jobs".into(), json!(rayon::current_num_threads()));
    let cfg = resolve(defaults, file.as_ref(), &fv)?;
    if !global.quiet {
        let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
        eprintln!("# effective config: porenet {name}\n{text}");
    }
    Ok(cfg)
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Res<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::usage(format!("missing required --{flag}")))
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes")
}

// ---------------------------------------------------------------- gen

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenFlags {
    /// Number of networks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    /// Nominal pores per network (at least 4).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pores: Option<usize>,
    /// Nominal average coordination number.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    coord: Option<f64>,
    /// Uniform relative jitter of the pore count per network.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pores_jitter: Option<f64>,
    /// Uniform relative jitter of the coordination per network.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    coord_jitter: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct GenConfig {
    seed: u64,
    jobs: usize,
    count: usize,
    pores: usize,
    coord: f64,
    pores_jitter: f64,
    coord_jitter: f64,
    out_dir: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            jobs: 1,
            count: 10,
            pores: 50,
            coord: 4.0,
            pores_jitter: 0.0,
            coord_jitter: 0.0,
            out_dir: None,
        }
    }
}

pub fn gen(global: &GlobalArgs, file: &FileConfig, flags: &GenFlags) -> Res {
    let cfg: GenConfig = effective("gen", global, file, flags, GenConfig::default())?;
    let out = require(&cfg.out_dir, "out-dir")?;
    if cfg.pores < 4 {
        return Err(CliError::usage(format!(
            "--pores must be at least 4, got {}",
            cfg.pores
        )));
    }
    if cfg.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    if !(0.0..1.0).contains(&cfg.pores_jitter) || !(0.0..1.0).contains(&cfg.coord_jitter) {
        return Err(CliError::usage("jitter fractions must be in [0, 1)"));
    }
    let spec = DatasetSpec {
        seed: cfg.seed,
        count: cfg.count,
        pores: cfg.pores,
        coordination: cfg.coord,
        pores_jitter: cfg.pores_jitter,
        coordination_jitter: cfg.coord_jitter,
    };
    let nets = generate_dataset(&spec)?;
    create_dir(out)?;
    let mut files = Vec::with_capacity(nets.len());
    for (k, net) in nets.iter().enumerate() {
        let name = format!("net_{k}.json");
        net.save(out.join(&name))?;
        files.push(ManifestEntry {
            file: name,
            num_pores: net.num_pores,
            num_throats: net.num_throats,
            target_permeability: net.target_permeability,
        });
    }
    let manifest = Manifest { spec, files };
    let text = to_pretty(&manifest);
    write(&out.join("manifest.json"), &text)?;
    emit!("{text}");
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainFlags {
    /// Dataset directory (manifest.json or net_<k>.json files).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Output directory for model.json, norm_stats.json, train_log.jsonl and checkpoints.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    /// embedded | baseline
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelKind>,
    /// Learning rate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    /// Loss multiplier s in ½ s² (K − K*)² (default: 1 / mean target).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    val_fraction: Option<f64>,
    /// Width of both message-passing layers.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    /// Width of the edge predictor hidden layer.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    predictor: Option<usize>,
    /// gd | adam
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerArg>,
    /// Continue from a checkpoint written by the same configuration.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum OptimizerArg {
    Gd,
    Adam,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct TrainCliConfig {
    seed: u64,
    jobs: usize,
    data: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    model: ModelKind,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    loss_scale: Option<f64>,
    checkpoint_every: usize,
    val_fraction: f64,
    hidden: usize,
    predictor: usize,
    optimizer: OptimizerArg,
    resume: Option<PathBuf>,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainCliConfig {
            seed: t.seed,
            jobs: 1,
            data: None,
            out_dir: None,
            model: t.model,
            lr: t.learning_rate,
            epochs: t.num_epochs,
            batch_size: t.batch_size,
            loss_scale: t.loss_scale,
            checkpoint_every: t.checkpoint_every,
            val_fraction: t.validation_fraction,
            hidden: t.dims.hidden1,
            predictor: t.dims.predictor,
            optimizer: OptimizerArg::Gd,
            resume: None,
        }
    }
}

pub fn train(global: &GlobalArgs, file: &FileConfig, flags: &TrainFlags) -> Res {
    let cfg: TrainCliConfig = effective("train", global, file, flags, TrainCliConfig::default())?;
    let data = require(&cfg.data, "data")?;
    let out = require(&cfg.out_dir, "out-dir")?;
    let dataset = load_dataset(data)?;
    create_dir(out)?;
    let config = TrainConfig {
        model: cfg.model,
        learning_rate: cfg.lr,
        num_epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        loss_scale: cfg.loss_scale,
        checkpoint_every: cfg.checkpoint_every,
        checkpoint_dir: Some(out.clone()),
        validation_fraction: cfg.val_fraction,
        dims: GnnDims::new(cfg.hidden, cfg.hidden, cfg.predictor),
        optimizer: match cfg.optimizer {
            OptimizerArg::Gd => Optimizer::Gd,
            OptimizerArg::Adam => Optimizer::adam(),
        },
    };
    let log_path = out.join("train_log.jsonl");
    let mut trainer = match &cfg.resume {
        Some(p) => Trainer::resume(config, &dataset, &Checkpoint::load(p)?)?,
        None => {
            // a fresh run starts a fresh log
            write(&log_path, "")?;
            Trainer::new(config, &dataset)?
        }
    };
    trainer.state.stats.save(out.join("norm_stats.json"))?;
    let mut log = OpenOptions::new()
        .append(true)
        .create(true)
        .open(&log_path)
        .map_err(|e| porenet::Error::io(&log_path, e))?;
    let mut io_error = None;
    trainer.run(|entry| {
        let line = serde_json::to_string(entry).expect("log serializes");
        if let Err(e) = writeln!(log, "{line}") {
            io_error.get_or_insert(e);
        }
        if !global.quiet {
            emit!("{line}");
        }
    })?;
    if let Some(e) = io_error {
        return Err(porenet::Error::io(&log_path, e).into());
    }
    trainer.state.checkpoint().save(out.join("model.json"))?;
    let pr = &trainer.state.progress;
    let summary = json!({
        "model": cfg.model.to_string(),
        "epochs": pr.epoch,
        "train_samples": trainer.train_ids.len(),
        "validation_samples": trainer.val_ids.len(),
        "first_train_loss": pr.train_loss.first(),
        "final_train_loss": pr.train_loss.last(),
        "final_val_loss": pr.val_loss.last().copied().flatten(),
        "checkpoint": out.join("model.json"),
    });
    emit!("{}", to_pretty(&summary));
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum ModelArg {
    Embedded,
    Baseline,
    Analytic,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// embedded | baseline | analytic (default: inferred from --checkpoint or --shape)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelArg>,
    #[arg(long, conflicts_with = "shape")]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    /// Shape factor for the analytic model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    shape: Option<ShapeFactor>,
    /// Write per-sample predictions (JSON) here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    predictions: Option<PathBuf>,
    /// Print metrics as JSON instead of a table.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    json: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct EvalConfig {
    seed: u64,
    jobs: usize,
    data: Option<PathBuf>,
    model: Option<ModelArg>,
    checkpoint: Option<PathBuf>,
    shape: Option<ShapeFactor>,
    predictions: Option<PathBuf>,
    json: bool,
}

/// Model selection shared by eval and predict.
fn select_model(
    model: Option<ModelArg>,
    checkpoint: &Option<PathBuf>,
    shape: Option<ShapeFactor>,
) -> Res<EvalModel> {
    match (model, checkpoint, shape) {
        (_, Some(_), Some(_)) => Err(CliError::usage(
            "--checkpoint and --shape are mutually exclusive",
        )),
        (Some(ModelArg::Analytic) | None, None, Some(s)) => Ok(EvalModel::Analytic(s)),
        (Some(ModelArg::Analytic), None, None) => {
            Err(CliError::usage("the analytic model requires --shape"))
        }
        (Some(ModelArg::Analytic), Some(_), None) => Err(CliError::usage(
            "the analytic model takes --shape, not --checkpoint",
        )),
        (Some(_), None, Some(_)) => Err(CliError::usage(
            "--shape applies only to the analytic model",
        )),
        (_, None, None) => Err(CliError::usage("give --checkpoint or --shape")),
        (m, Some(path), None) => {
            let ck = Checkpoint::load(path)?;
            let want = match m {
                Some(ModelArg::Embedded) => Some(ModelKind::Embedded),
                Some(ModelArg::Baseline) => Some(ModelKind::Baseline),
                _ => None,
            };
            if let Some(w) = want {
                if w != ck.model {
                    return Err(CliError::usage(format!(
                        "--model {w} but checkpoint holds a {} model",
                        ck.model
                    )));
                }
            }
            Ok(EvalModel::Trained(ck))
        }
    }
}

fn metrics_table(model: &str, m: &MetricReport) -> String {
    let opt = |v: Option<f64>, fmt: &dyn Fn(f64) -> String| v.map_or("undefined".to_string(), fmt);
    format!(
        "model        {model}\nsamples      {}\nMAE          {:.6e}\nRMSE         {:.6e}\nMAPE [%]     {}\nR^2          {}",
        m.n,
        m.mae,
        m.rmse,
        opt(m.mape_percent, &|v| format!("{v:.4}")),
        opt(m.r_squared, &|v| format!("{v:.6}")),
    )
}

pub fn eval(global: &GlobalArgs, file: &FileConfig, flags: &EvalFlags) -> Res {
    let cfg: EvalConfig = effective("eval", global, file, flags, EvalConfig::default())?;
    let model = select_model(cfg.model, &cfg.checkpoint, cfg.shape)?;
    let dataset = load_dataset(require(&cfg.data, "data")?)?;
    let result = evaluate(&model, &dataset)?;
    if let Some(p) = &cfg.predictions {
        write(p, &to_pretty(&result.predictions))?;
    }
    if cfg.json {
        emit!(
            "{}",
            to_pretty(&json!({"model": result.model, "metrics": result.metrics}))
        );
    } else {
        emit!("{}", metrics_table(&result.model, &result.metrics));
    }
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GradcheckFlags {
    /// Network file with a target permeability (default: a generated network).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    network: Option<PathBuf>,
    /// Pores of the generated network.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pores: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    coord: Option<f64>,
    /// Maximum accepted relative error.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    /// Relative finite-difference step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    json: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct GradcheckConfig {
    seed: u64,
    jobs: usize,
    network: Option<PathBuf>,
    pores: usize,
    coord: f64,
    tol: f64,
    delta: f64,
    hidden: usize,
    json: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            jobs: 1,
            network: None,
            pores: 15,
            coord: 4.0,
            tol: 1e-5,
            delta: 1e-6,
            hidden: 32,
            json: false,
        }
    }
}

pub fn gradcheck(global: &GlobalArgs, file: &FileConfig, flags: &GradcheckFlags) -> Res {
    let cfg: GradcheckConfig =
        effective("gradcheck", global, file, flags, GradcheckConfig::default())?;
    if !(cfg.tol > 0.0) || !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(CliError::usage(
            "--tol must be positive and --delta in (0, 1)",
        ));
    }
    let net = match &cfg.network {
        Some(p) => PoreNetwork::load(p)?,
        None => {
            if cfg.pores < 4 {
                return Err(CliError::usage(format!(
                    "--pores must be at least 4, got {}",
                    cfg.pores
                )));
            }
            synthetic_truth(
                &generate_synthetic(cfg.seed, cfg.pores, cfg.coord)?,
                cfg.seed,
            )?
        }
    };
    let k_star = net
        .target_permeability
        .ok_or_else(|| CliError::validation("network has no target_permeability"))?;
    let stats = compute_norm_stats(std::slice::from_ref(&net))?;
    let mut params =
        GnnParameters::init(GnnDims::new(cfg.hidden, cfg.hidden, cfg.hidden), cfg.seed);
    let (g_raw, _) = gnn_forward(&normalize(&net, &stats)?, &params)?;
    // K is linear in a uniform conductance scale; place the prediction at 2 K*
    params.output_scale = 2.0 * k_star / solver::forward(&net, &g_raw)?.permeability;
    let (g, _) = gnn_forward(&normalize(&net, &stats)?, &params)?;
    let check = gradient_check(&net, &g, k_star, cfg.delta, cfg.tol)?;
    if cfg.json {
        emit!("{}", to_pretty(&check));
    } else {
        emit!(
            "throats {}  max relative error {:.3e}  tolerance {:.1e}  {}",
            net.num_throats,
            check.max_relative_error,
            cfg.tol,
            if check.passed() { "ok" } else { "FAILED" }
        );
    }
    if !check.passed() {
        return Err(CliError::numeric(format!(
            "gradient check failed: max relative error {:e} exceeds {:e}",
            check.max_relative_error, cfg.tol
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- sens

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SensFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Embedded-model checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    /// Directory for sensitivity_node.csv and sensitivity_edge.csv.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct SensConfig {
    seed: u64,
    jobs: usize,
    data: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

pub fn sens(global: &GlobalArgs, file: &FileConfig, flags: &SensFlags) -> Res {
    let cfg: SensConfig = effective("sens", global, file, flags, SensConfig::default())?;
    let ck = Checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let ModelParameters::Embedded(params) = ck.parameters()? else {
        return Err(CliError::usage(
            "sensitivity analysis needs an embedded-model checkpoint",
        ));
    };
    let out = require(&cfg.out_dir, "out-dir")?;
    let dataset = load_dataset(require(&cfg.data, "data")?)?;
    let normalized = dataset
        .iter()
        .map(|n| normalize(n, &ck.norm_stats))
        .collect::<porenet::Result<Vec<_>>>()?;
    let report = feature_sensitivity(&normalized, &params)?;
    create_dir(out)?;
    write(&out.join("sensitivity_node.csv"), &report.node_csv())?;
    write(&out.join("sensitivity_edge.csv"), &report.edge_csv())?;
    if !global.quiet {
        emit!(
            "{:<36} {:>12} {:>12} {:>12}",
            "feature (dK/dz, m^2)",
            "q25",
            "median",
            "q75"
        );
        for f in report.node.iter().chain(&report.edge) {
            let s = &f.summary;
            emit!(
                "{:<36} {:>12.4e} {:>12.4e} {:>12.4e}",
                f.feature,
                s.q25,
                s.median,
                s.q75
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- predict

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PredictFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    network: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelArg>,
    #[arg(long, conflicts_with = "shape")]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    shape: Option<ShapeFactor>,
    /// Normalization statistics to use; must be the ones stored in the checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    stats: Option<PathBuf>,
    /// Write pressures and throat flows (JSON) here; not available for the baseline.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dump: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct PredictConfig {
    seed: u64,
    jobs: usize,
    network: Option<PathBuf>,
    model: Option<ModelArg>,
    checkpoint: Option<PathBuf>,
    shape: Option<ShapeFactor>,
    stats: Option<PathBuf>,
    dump: Option<PathBuf>,
}

fn conductances(model: &EvalModel, net: &PoreNetwork) -> Res<Option<Vec<f64>>> {
    Ok(match model {
        EvalModel::Analytic(s) => Some(analytic_conductance(net, *s)?),
        EvalModel::Trained(ck) => match ck.parameters()? {
            ModelParameters::Embedded(p) => {
                Some(gnn_forward(&normalize(net, &ck.norm_stats)?, &p)?.0)
            }
            ModelParameters::Baseline(_) => None,
        },
    })
}

pub fn predict(global: &GlobalArgs, file: &FileConfig, flags: &PredictFlags) -> Res {
    let cfg: PredictConfig = effective("predict", global, file, flags, PredictConfig::default())?;
    let model = select_model(cfg.model, &cfg.checkpoint, cfg.shape)?;
    if let Some(path) = &cfg.stats {
        let EvalModel::Trained(ck) = &model else {
            return Err(CliError::usage("--stats applies only to trained models"));
        };
        ck.check_stats(&NormStats::load(path)?)?;
    }
    let net = PoreNetwork::load(require(&cfg.network, "network")?)?;
    let k = predict_raw(&model, None, &net)?;
    if let Some(path) = &cfg.dump {
        let g = conductances(&model, &net)?.ok_or_else(|| {
            CliError::usage("--dump needs a conductance model (embedded or analytic)")
        })?;
        let sol = solver::forward(&net, &g)?;
        write(path, &FlowDump::new(&net, &g, &sol).to_json())?;
    }
    let out = json!({
        "network": cfg.network,
        "permeability": k,
        "target_permeability": net.target_permeability,
    });
    emit!("{}", to_pretty(&out));
    Ok(())
}
