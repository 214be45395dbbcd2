use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use djlab_core::autodiff::primitive_gradcheck;
use djlab_core::baselines::{
    absorbing_probabilities, extract_labels, propagate_closed, propagate_iterative, propagation_operator,
    stationarity_residual, Normalization, SeedMatrix,
};
use djlab_core::config::{apply_key, read_config, resolved_pairs};
use djlab_core::graph::{homophily_stats, FeatureMatrix, Graph, LabelVector, SplitMasks};
use djlab_core::io::{
    fmt17, read_edge_list, read_features, read_labels, read_split, read_webkb, split_files, write_edge_list,
    write_labels, write_matrix, write_split, write_text,
};
use djlab_core::jump::{filter_bank, JumpMode};
use djlab_core::model::{
    evaluate_logits, gradcheck_model, gradcheck_pump, train as train_model, DjModel, ModelConfig, Supports,
};
use djlab_core::metrics::mean_std;
use djlab_core::pump::{fiedler_correlations, train_pump, Activation, DistanceKind, DistanceMatrix, PumpBasis, PumpConfig};
use djlab_core::sbm::{
    gen_sbm as generate_sbm, inject_heterophily, synth_features, sweep as run_sweep, write_sweep_csv, SbmSpec, SweepGrid,
};
use djlab_core::spectral::{spectral_summary, structural_heterophily_with};

use crate::manifest::{manifest_path, Recorder};
use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Six significant digits for human-readable lines.
fn fmt6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let prec = (5 - mag).max(0) as usize;
    format!("{x:.prec$}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &(text + "\n"))?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Worker count from `DJLAB_THREADS`, else the available parallelism.
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var("DJLAB_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => Err(invalid(format!("DJLAB_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| invalid(format!("bad {what} entry `{t}`"))))
        .collect()
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Identity,
    Tanh,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Identity => Activation::Identity,
            ActivationArg::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    /// `U = act(A W)`
    Adjacency,
    /// `U = act(W)`, the ablation
    Identity,
}

impl From<BasisArg> for PumpBasis {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Adjacency => PumpBasis::Adjacency,
            BasisArg::Identity => PumpBasis::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistanceArg {
    Norm,
    Squared,
}

impl From<DistanceArg> for DistanceKind {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Norm => DistanceKind::Norm,
            DistanceArg::Squared => DistanceKind::Squared,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JumpModeArg {
    Rank,
    Cumulative,
}

impl From<JumpModeArg> for JumpMode {
    fn from(m: JumpModeArg) -> Self {
        match m {
            JumpModeArg::Rank => JumpMode::Rank,
            JumpModeArg::Cumulative => JumpMode::Cumulative,
        }
    }
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Edge list `u v [w]`, 0-indexed, `#` comments.
    #[arg(long)]
    pub graph: PathBuf,
    /// One integer label per line; the line count fixes the node count.
    #[arg(long)]
    pub labels: PathBuf,
    /// Seed of the k-means labeling used when there are more than two classes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spectral embedding width for the k-means labeling (default: classes - 1).
    #[arg(long)]
    pub width: Option<usize>,
    /// Manifest path (default: ./djlab_manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct AnalyzeReport {
    n: usize,
    m: usize,
    edge_h: f64,
    node_h: f64,
    class_h: f64,
    lambda2: f64,
    spectral_gap: f64,
    #[serde(rename = "R")]
    r: f64,
    num_energy: f64,
    den_energy: f64,
}

pub fn analyze(a: AnalyzeArgs) -> CliResult {
    let mut rec = Recorder::new("analyze");
    rec.input(&a.graph)?;
    rec.input(&a.labels)?;
    rec.seed = Some(a.seed);
    let labels = read_labels(&a.labels)?;
    let g = read_edge_list(&a.graph, Some(labels.len()))?;
    let width = a.width.unwrap_or(labels.num_classes().saturating_sub(1).max(1));
    rec.set("width", width);
    let hom = homophily_stats(&g, &labels)?;
    let spec = spectral_summary(&g)?;
    let het = structural_heterophily_with(&g, &labels, width, a.seed)?;
    print_json(&AnalyzeReport {
        n: g.n(),
        m: g.m(),
        edge_h: hom.edge_h,
        node_h: hom.node_h,
        class_h: hom.class_h,
        lambda2: spec.lambda2,
        spectral_gap: spec.spectral_gap,
        r: het.ratio,
        num_energy: het.num_energy,
        den_energy: het.den_energy,
    })?;
    rec.finish(&manifest_path(&a.manifest, Path::new(".")))
}

// ------------------------------------------------------------------- pump

#[derive(Debug, Args)]
pub struct PumpArgs {
    /// Edge list `u v [w]`, 0-indexed, `#` comments.
    #[arg(long)]
    pub graph: PathBuf,
    /// Node count when trailing nodes have no edges listed (default: largest index + 1).
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Output directory for U.csv, distances.csv, pump.json and jump files.
    #[arg(long, default_value = "pump_out")]
    pub out: PathBuf,
    /// Number of columns of U.
    #[arg(long, default_value_t = 3)]
    pub width: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Optimisation steps.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Weight of the orthonormality penalty.
    #[arg(long, default_value_t = 1.0)]
    pub ortho_weight: f64,
    /// Seed of the weight initialisation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output activation.
    #[arg(long, value_enum, default_value_t = ActivationArg::Identity)]
    pub activation: ActivationArg,
    /// Input the pump projects.
    #[arg(long, value_enum, default_value_t = BasisArg::Adjacency)]
    pub basis: BasisArg,
    /// Pair distances as Euclidean norms or their squares.
    #[arg(long, value_enum, default_value_t = DistanceArg::Norm)]
    pub distance: DistanceArg,
    /// Add a learned bias row to U.
    #[arg(long)]
    pub bias: bool,
    /// Also write jump filters J^0..J^K as jump_<k>.txt.
    #[arg(long, value_name = "K")]
    pub export_jumps: Option<usize>,
    /// Support selection of the exported filters.
    #[arg(long, value_enum, default_value_t = JumpModeArg::Rank)]
    pub jump_mode: JumpModeArg,
    /// Manifest path (default: <out>/djlab_manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct PumpReport {
    ratio: f64,
    rayleigh: Vec<f64>,
    corr_fiedler: Vec<f64>,
    steps: usize,
    initial_loss: f64,
    final_loss: f64,
}

pub fn pump(a: PumpArgs) -> CliResult {
    let mut rec = Recorder::new("pump");
    rec.input(&a.graph)?;
    rec.seed = Some(a.seed);
    let cfg = PumpConfig {
        width: a.width,
        lr: a.lr,
        steps: a.steps,
        ortho_weight: a.ortho_weight,
        seed: a.seed,
        activation: a.activation.into(),
        basis: a.basis.into(),
        bias: a.bias,
        distance: a.distance.into(),
    };
    for (k, v) in [
        ("width", a.width.to_string()),
        ("lr", a.lr.to_string()),
        ("steps", a.steps.to_string()),
        ("ortho_weight", a.ortho_weight.to_string()),
        ("activation", format!("{:?}", a.activation).to_lowercase()),
        ("basis", format!("{:?}", a.basis).to_lowercase()),
        ("distance", format!("{:?}", a.distance).to_lowercase()),
        ("bias", a.bias.to_string()),
    ] {
        rec.set(k, v);
    }
    let g = read_edge_list(&a.graph, a.nodes)?;
    let res = train_pump::<f64>(&g, &cfg)?;
    let corr = fiedler_correlations(res.env.u.view(), &g)?;

    let u_path = a.out.join("U.csv");
    write_matrix(&res.env.u, &u_path)?;
    rec.output(&u_path);
    let d_path = a.out.join("distances.csv");
    write_matrix(res.distances.as_array(), &d_path)?;
    rec.output(&d_path);
    let report = PumpReport {
        ratio: res.env.ratio,
        rayleigh: res.env.rayleigh.clone(),
        corr_fiedler: corr,
        steps: a.steps,
        initial_loss: res.initial_loss,
        final_loss: res.final_loss,
    };
    let j_path = a.out.join("pump.json");
    write_json(&j_path, &report)?;
    rec.output(&j_path);

    if let Some(k) = a.export_jumps {
        let mode: JumpMode = a.jump_mode.into();
        rec.set("export_jumps", k);
        rec.set("jump_mode", mode);
        let bank = filter_bank(&res.distances, k, mode)?;
        for i in 0..=k {
            let path = a.out.join(format!("jump_{i}.txt"));
            let mut w = create(&path)?;
            bank.write_filter(i, &mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
            rec.output(&path);
        }
    }
    eprintln!(
        "pump: ratio {} after {} steps, |corr| with Fiedler {}",
        fmt6(report.ratio),
        a.steps,
        report
            .corr_fiedler
            .iter()
            .map(|c| fmt6(c.abs()))
            .collect::<Vec<_>>()
            .join(" ")
    );
    rec.finish(&manifest_path(&a.manifest, &a.out))
}

// ------------------------------------------------------------ datasets

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding graph.txt, labels.csv and optionally features.csv and split.csv.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// WebKB-style directory with out1_graph_edges.txt and out1_node_feature_label.txt.
    #[arg(long, conflicts_with_all = ["graph", "features", "labels", "data_dir"])]
    pub webkb: Option<PathBuf>,
    /// Edge list `u v [w]`, 0-indexed, `#` comments.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Headerless CSV with one feature row per node (default: identity features).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// One integer label per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Split CSV (`train,val,test` 0/1 per node) or a directory of them, one split per file.
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

struct LoadedData {
    graph: Graph,
    features: FeatureMatrix,
    labels: LabelVector,
    splits: Vec<SplitMasks>,
}

impl DataArgs {
    fn load(&self, rec: &mut Recorder) -> CliResult<LoadedData> {
        let in_dir = |name: &str| self.data_dir.as_ref().map(|d| d.join(name));
        let (graph, features, labels) = if let Some(dir) = &self.webkb {
            rec.input(&dir.join("out1_graph_edges.txt"))?;
            rec.input(&dir.join("out1_node_feature_label.txt"))?;
            read_webkb(dir)?
        } else {
            let labels_path = self
                .labels
                .clone()
                .or_else(|| in_dir("labels.csv"))
                .ok_or_else(|| invalid("--labels (or --data-dir / --webkb) is required"))?;
            let graph_path = self
                .graph
                .clone()
                .or_else(|| in_dir("graph.txt"))
                .ok_or_else(|| invalid("--graph (or --data-dir / --webkb) is required"))?;
            let features_path = self.features.clone().or_else(|| in_dir("features.csv").filter(|p| p.exists()));
            rec.input(&graph_path)?;
            rec.input(&labels_path)?;
            let labels = read_labels(&labels_path)?;
            let n = labels.len();
            let graph = read_edge_list(&graph_path, Some(n))?;
            let features = match features_path {
                Some(p) => {
                    rec.input(&p)?;
                    let f = read_features(&p)?;
                    if f.n() != n {
                        return Err(invalid(format!("{}: {} feature rows but {n} labels", p.display(), f.n())));
                    }
                    f
                }
                None => FeatureMatrix::new(Array2::eye(n))?,
            };
            (graph, features, labels)
        };
        let split_path = self.splits.clone().or_else(|| in_dir("split.csv").filter(|p| p.exists()));
        let mut splits = Vec::new();
        if let Some(p) = split_path {
            rec.input(&p)?;
            for file in split_files(&p)? {
                let m = read_split(&file)?;
                if m.len() != labels.len() {
                    return Err(invalid(format!(
                        "{}: {} split rows but {} labels",
                        file.display(),
                        m.len(),
                        labels.len()
                    )));
                }
                splits.push(m);
            }
        }
        Ok(LoadedData {
            graph,
            features,
            labels,
            splits,
        })
    }
}

// ------------------------------------------------------------------ train

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Flat `key = value` config; unspecified keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs=50` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory for metrics, models and the summary.
    #[arg(long, default_value = "train_out")]
    pub out: PathBuf,
    /// Also write alphas-per-branch and distance-histogram CSVs into this directory.
    #[arg(long, value_name = "DIR")]
    pub emit_plot_data: Option<PathBuf>,
    /// Bins of the distance histogram.
    #[arg(long, default_value_t = 50)]
    pub hist_bins: usize,
    /// Manifest path (default: <out>/djlab_manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SavedBlock {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Trained parameters plus what is needed to rebuild the forward pass.
#[derive(Debug, Serialize, Deserialize)]
struct SavedModel {
    config: ModelConfig,
    blocks: Vec<SavedBlock>,
    /// Frozen pump distances (decoupled mode only).
    distances: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize)]
struct SplitResult {
    split: usize,
    best_epoch: usize,
    epochs_run: usize,
    train_acc: f64,
    val_acc: f64,
    test_acc: f64,
    alphas: Vec<f64>,
    pretrained_ratio: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    config: BTreeMap<String, String>,
    splits: Vec<SplitResult>,
    mean_test_acc: f64,
    std_test_acc: f64,
    summary: String,
}

fn branch_names(cfg: &ModelConfig) -> Vec<String> {
    let mut v: Vec<String> = (0..=cfg.jumps).map(|k| format!("jump_{k}")).collect();
    if cfg.homophilic_branch {
        v.push("homophilic".into());
    }
    v
}

fn distance_histogram(d: &DistanceMatrix<f64>, bins: usize) -> Vec<(f64, f64, usize)> {
    let n = d.n();
    let vals: Vec<f64> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
    let hi = vals.iter().copied().fold(0.0, f64::max);
    let bins = bins.max(1);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in vals {
        counts[((v / width) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (b as f64 * width, (b + 1) as f64 * width, c))
        .collect()
}

fn resolve_config(config: &Option<PathBuf>, overrides: &[String], rec: &mut Recorder) -> CliResult<ModelConfig> {
    let mut cfg = match config {
        Some(p) => {
            rec.input(p)?;
            read_config(p, ModelConfig::default())?
        }
        None => ModelConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got `{o}`")))?;
        apply_key(&mut cfg, k.trim(), v.trim()).map_err(|m| invalid(format!("--set {o}: {m}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut rec = Recorder::new("train");
    let cfg = resolve_config(&a.config, &a.overrides, &mut rec)?;
    let data = a.data.load(&mut rec)?;
    rec.seed = Some(cfg.seed);
    let pairs = resolved_pairs(&cfg);
    for (k, v) in &pairs {
        rec.set(k, v);
    }
    let splits = if data.splits.is_empty() {
        rec.set("splits", "random 0.48/0.32/0.20");
        vec![SplitMasks::random(data.labels.len(), 0.48, 0.32, cfg.seed)?]
    } else {
        data.splits
    };

    let mut results = Vec::new();
    for (i, masks) in splits.iter().enumerate() {
        let trained = train_model(&data.graph, &data.features, &data.labels, masks, &cfg)?;
        let fit = &trained.fit;

        let metrics_path = a.out.join(format!("metrics_{i}.jsonl"));
        let mut w = create(&metrics_path)?;
        for r in &fit.history {
            let line = serde_json::to_string(r).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(w, "{line}").map_err(io_err(&metrics_path))?;
        }
        w.flush().map_err(io_err(&metrics_path))?;
        rec.output(&metrics_path);

        let names = &trained.model.layout().names;
        let saved = SavedModel {
            config: cfg.clone(),
            blocks: names
                .iter()
                .zip(&fit.params)
                .map(|(name, p)| SavedBlock {
                    name: name.clone(),
                    rows: p.nrows(),
                    cols: p.ncols(),
                    data: p.iter().copied().collect(),
                })
                .collect(),
            distances: cfg
                .decoupled
                .then(|| trained.distances.as_array().rows().into_iter().map(|r| r.to_vec()).collect()),
        };
        let model_path = a.out.join(format!("model_{i}.json"));
        write_json(&model_path, &saved)?;
        rec.output(&model_path);

        let alphas = trained.alphas();
        if let Some(dir) = &a.emit_plot_data {
            let path = dir.join(format!("alphas_{i}.csv"));
            let mut text = String::from("branch,alpha\n");
            for (name, al) in branch_names(&cfg).iter().zip(&alphas) {
                text.push_str(&format!("{name},{}\n", fmt17(*al)));
            }
            write_text(&path, &text)?;
            rec.output(&path);

            let path = dir.join(format!("distance_hist_{i}.csv"));
            let mut text = String::from("bin_lo,bin_hi,count\n");
            for (lo, hi, c) in distance_histogram(&trained.distances, a.hist_bins) {
                text.push_str(&format!("{},{},{c}\n", fmt17(lo), fmt17(hi)));
            }
            write_text(&path, &text)?;
            rec.output(&path);
        }

        eprintln!(
            "split {i}: test {} val {} (best epoch {} of {})",
            fmt6(fit.test_acc),
            fmt6(fit.val_acc),
            fit.best_epoch,
            fit.history.len()
        );
        results.push(SplitResult {
            split: i,
            best_epoch: fit.best_epoch,
            epochs_run: fit.history.len(),
            train_acc: fit.train_acc,
            val_acc: fit.val_acc,
            test_acc: fit.test_acc,
            alphas,
            pretrained_ratio: trained.pretrained_ratio,
        });
    }
    let accs: Vec<f64> = results.iter().map(|r| r.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    let summary = TrainSummary {
        config: pairs.into_iter().collect(),
        splits: results,
        mean_test_acc: mean,
        std_test_acc: std,
        summary: format!("{} ± {}", fmt6(100.0 * mean), fmt6(100.0 * std)),
    };
    let summary_path = a.out.join("summary.json");
    write_json(&summary_path, &summary)?;
    rec.output(&summary_path);
    println!("test accuracy over {} split(s): {}", accs.len(), summary.summary);
    rec.finish(&manifest_path(&a.manifest, &a.out))
}

// --------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file written by `train` (model_<i>.json).
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Manifest path (default: ./djlab_manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    splits: Vec<djlab_core::model::Accuracies>,
    mean_test_acc: f64,
    std_test_acc: f64,
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let mut rec = Recorder::new("evaluate");
    rec.input(&a.model)?;
    let text = std::fs::read_to_string(&a.model).map_err(|e| invalid(format!("{}: {e}", a.model.display())))?;
    let saved: SavedModel =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", a.model.display())))?;
    let cfg = saved.config;
    cfg.validate()?;
    rec.seed = Some(cfg.seed);
    for (k, v) in resolved_pairs(&cfg) {
        rec.set(&k, v);
    }
    let data = a.data.load(&mut rec)?;
    if data.splits.is_empty() {
        return Err(invalid("--splits (or a split.csv in --data-dir) is required"));
    }
    let model = DjModel::new(&data.graph, &data.features, &data.labels, &data.splits[0].train, &cfg)?;
    let names = &model.layout().names;
    let template = model.init_params();
    if saved.blocks.len() != names.len() {
        return Err(invalid(format!(
            "{}: {} parameter blocks, the configuration needs {}",
            a.model.display(),
            saved.blocks.len(),
            names.len()
        )));
    }
    let mut params = Vec::with_capacity(names.len());
    for ((b, name), t) in saved.blocks.into_iter().zip(names).zip(&template) {
        if &b.name != name || (b.rows, b.cols) != t.dim() {
            return Err(invalid(format!(
                "{}: block `{}` {}x{} does not match `{name}` {}x{} of this dataset",
                a.model.display(),
                b.name,
                b.rows,
                b.cols,
                t.nrows(),
                t.ncols()
            )));
        }
        params.push(Array2::from_shape_vec((b.rows, b.cols), b.data).map_err(|e| invalid(e.to_string()))?);
    }
    let bank = match &saved.distances {
        Some(rows) => {
            let n = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let m = Array2::from_shape_vec((n, flat.len() / n.max(1)), flat).map_err(|e| invalid(e.to_string()))?;
            Some(filter_bank(&DistanceMatrix::from_matrix(m)?, cfg.jumps, cfg.jump_mode)?)
        }
        None => None,
    };
    let supports = match &bank {
        Some(b) => Supports::Fixed(b),
        None => Supports::Refresh,
    };
    let logits = model.logits(&params, supports)?;
    let accs: Vec<_> = data
        .splits
        .iter()
        .map(|m| evaluate_logits(&logits, &data.labels, m))
        .collect();
    let tests: Vec<f64> = accs.iter().map(|x| x.test).collect();
    let (mean, std) = mean_std(&tests);
    print_json(&EvaluateReport {
        splits: accs,
        mean_test_acc: mean,
        std_test_acc: std,
    })?;
    rec.finish(&manifest_path(&a.manifest, Path::new(".")))
}

// -------------------------------------------------------------- propagate

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PropagateMethod {
    /// `(1 - alpha)(I - alpha P)^-1 Y`
    Closed,
    /// `F <- alpha P F + (1 - alpha) Y` from `F = Y`
    Iterative,
    /// Absorption probabilities with the seeds as absorbing nodes
    Absorbing,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizationArg {
    /// `D^-1 A`
    RandomWalk,
    /// `D^-1/2 A D^-1/2`
    Symmetric,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    /// Edge list `u v [w]`, 0-indexed, `#` comments.
    #[arg(long)]
    pub graph: PathBuf,
    /// One integer per node: the seed label, or -1 for an unseeded node.
    #[arg(long)]
    pub seeds: PathBuf,
    /// Propagation weight in (0, 1).
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = PropagateMethod::Closed)]
    pub method: PropagateMethod,
    /// Iterations of the iterative method.
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, value_enum, default_value_t = NormalizationArg::RandomWalk)]
    pub normalization: NormalizationArg,
    /// Output directory for scores.csv and labels.csv.
    #[arg(long, default_value = "propagate_out")]
    pub out: PathBuf,
    /// Manifest path (default: <out>/djlab_manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn read_seeds(path: &Path) -> CliResult<Vec<Option<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let c = line.split('#').next().unwrap_or("").trim();
        if c.is_empty() {
            continue;
        }
        let v: i64 = c
            .parse()
            .map_err(|_| invalid(format!("{}:{}: bad seed label `{c}`", path.display(), i + 1)))?;
        out.push(match v {
            -1 => None,
            v if v >= 0 => Some(v as usize),
            _ => return Err(invalid(format!("{}:{}: seed label must be >= -1", path.display(), i + 1))),
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct PropagateReport {
    n: usize,
    classes: usize,
    seeded: usize,
    residual: Option<f64>,
}

pub fn propagate(a: PropagateArgs) -> CliResult {
    let mut rec = Recorder::new("propagate");
    rec.input(&a.graph)?;
    rec.input(&a.seeds)?;
    rec.set("alpha", a.alpha);
    rec.set("method", format!("{:?}", a.method).to_lowercase());
    rec.set("iterations", a.iterations);
    rec.set("normalization", format!("{:?}", a.normalization).to_lowercase());
    let seeds = read_seeds(&a.seeds)?;
    let n = seeds.len();
    let g = read_edge_list(&a.graph, Some(n))?;
    let pairs: Vec<(usize, usize)> = seeds.iter().enumerate().filter_map(|(i, s)| s.map(|c| (i, c))).collect();
    if pairs.is_empty() {
        return Err(invalid(format!("{}: no seeded nodes", a.seeds.display())));
    }
    let classes = pairs.iter().map(|p| p.1).max().unwrap_or(0) + 1;
    let y = SeedMatrix::from_seeds(n, classes, &pairs)?;
    let norm = match a.normalization {
        NormalizationArg::RandomWalk => Normalization::RandomWalk,
        NormalizationArg::Symmetric => Normalization::Symmetric,
    };
    let (scores, residual) = match a.method {
        PropagateMethod::Closed | PropagateMethod::Iterative => {
            let p = propagation_operator(&g, norm)?;
            let f = match a.method {
                PropagateMethod::Closed => propagate_closed(&p, &y, a.alpha)?,
                _ => propagate_iterative(&p, &y, a.alpha, a.iterations)?,
            };
            let r = stationarity_residual(&p, &y, a.alpha, &f);
            (f, Some(r))
        }
        PropagateMethod::Absorbing => {
            let absorbing: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let b = absorbing_probabilities(&g, &absorbing)?;
            let mut f = y.as_array().clone();
            let transient = (0..n).filter(|i| seeds[*i].is_none());
            for (row, i) in transient.enumerate() {
                for (col, &(_, c)) in pairs.iter().enumerate() {
                    f[[i, c]] += b[[row, col]];
                }
            }
            (f, None)
        }
    };
    let scores_path = a.out.join("scores.csv");
    write_matrix(&scores, &scores_path)?;
    rec.output(&scores_path);
    let labels_path = a.out.join("labels.csv");
    write_labels(&extract_labels(&scores), &labels_path)?;
    rec.output(&labels_path);
    let report = PropagateReport {
        n,
        classes,
        seeded: pairs.len(),
        residual,
    };
    let report_path = a.out.join("propagate.json");
    write_json(&report_path, &report)?;
    rec.output(&report_path);
    rec.finish(&manifest_path(&a.manifest, &a.out))
}

// -------------------------------------------------------------- gradcheck

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Nodes of the toy instance (ring plus random chords).
    #[arg(long, default_value_t = 12)]
    pub n: usize,
    /// Number of jumps K.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Largest accepted relative error of the individual primitives.
    #[arg(long, default_value_t = 1e-6)]
    pub primitive_tolerance: f64,
    /// Manifest path (default: ./djlab_manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct GradcheckReport {
    n: usize,
    k: usize,
    seed: u64,
    blocks: BTreeMap<String, f64>,
    max_rel_err: f64,
    pump_max_rel_err: f64,
    primitives: BTreeMap<String, f64>,
    primitive_max_rel_err: f64,
    tolerance: f64,
    primitive_tolerance: f64,
    pass: bool,
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult {
    let mut rec = Recorder::new("gradcheck");
    rec.seed = Some(a.seed);
    rec.set("n", a.n);
    rec.set("k", a.k);
    rec.set("tolerance", a.tolerance);
    let model = gradcheck_model(a.n, a.k, a.seed)?;
    let pump = gradcheck_pump(a.n, 3, a.seed)?;
    let max = model.max_rel_err.max(pump.max_rel_err);
    let prims = primitive_gradcheck(a.seed, 1e-5)?;
    let prim_max = prims.iter().map(|p| p.1).fold(0.0, f64::max);
    let report = GradcheckReport {
        n: a.n,
        k: a.k,
        seed: a.seed,
        blocks: model.blocks.into_iter().collect(),
        max_rel_err: max,
        pump_max_rel_err: pump.max_rel_err,
        primitives: prims.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        primitive_max_rel_err: prim_max,
        tolerance: a.tolerance,
        primitive_tolerance: a.primitive_tolerance,
        pass: max <= a.tolerance && prim_max <= a.primitive_tolerance,
    };
    print_json(&report)?;
    rec.finish(&manifest_path(&a.manifest, Path::new(".")))?;
    if !report.pass {
        return Err(CliError::Runtime(format!(
            "gradient check failed: model {} (limit {}), primitives {} (limit {})",
            fmt6(max),
            a.tolerance,
            fmt6(prim_max),
            a.primitive_tolerance
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- gen-sbm

#[derive(Debug, Args)]
pub struct GenSbmArgs {
    /// Block sizes, e.g. `50,50` (used with --p and --q).
    #[arg(long, requires_all = ["p", "q"], conflicts_with = "gap")]
    pub sizes: Option<String>,
    /// Intra-block edge probability.
    #[arg(long)]
    pub p: Option<f64>,
    /// Inter-block edge probability.
    #[arg(long)]
    pub q: Option<f64>,
    /// Target gap (p - q)/(p + q) in (0, 1), used with --block-size, --blocks and --mean-degree.
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub block_size: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    /// Expected degree for the gap form.
    #[arg(long, default_value_t = 80.0)]
    pub mean_degree: f64,
    /// Fraction of nodes whose label is moved to another class.
    #[arg(long, default_value_t = 0.0)]
    pub flip: f64,
    /// Probability that a feature one-hot shows a wrong class, in [0, 0.5).
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train fraction of the random split.
    #[arg(long, default_value_t = 0.48)]
    pub train: f64,
    /// Validation fraction of the random split.
    #[arg(long, default_value_t = 0.32)]
    pub val: f64,
    /// Output directory for graph.txt, labels.csv, blocks.csv, features.csv, split.csv and sbm.json.
    #[arg(long, default_value = "sbm_out")]
    pub out: PathBuf,
    /// Manifest path (default: <out>/djlab_manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SbmReport {
    n: usize,
    m: usize,
    p: f64,
    q: f64,
    gap: f64,
    flip: f64,
    #[serde(rename = "R")]
    r: f64,
    node_h: f64,
    lambda2: f64,
}

pub fn gen_sbm(a: GenSbmArgs) -> CliResult {
    let mut rec = Recorder::new("gen-sbm");
    rec.seed = Some(a.seed);
    let spec = match (&a.sizes, a.gap) {
        (Some(s), _) => {
            let sizes = parse_list::<usize>("block size", s)?;
            SbmSpec::new(sizes, a.p.unwrap_or(0.0), a.q.unwrap_or(0.0), a.seed)
        }
        (None, Some(gap)) => SbmSpec::from_gap(a.block_size, a.blocks, gap, a.mean_degree, a.seed)?,
        (None, None) => return Err(invalid("give either --sizes with --p/--q, or --gap")),
    };
    spec.validate()?;
    rec.set("sizes", format!("{:?}", spec.sizes));
    rec.set("p", spec.p);
    rec.set("q", spec.q);
    rec.set("flip", a.flip);
    rec.set("noise", a.noise);
    rec.set("train", a.train);
    rec.set("val", a.val);
    if !(0.0..=0.5).contains(&a.flip) {
        return Err(invalid(format!("flip fraction {} outside [0, 0.5]", a.flip)));
    }
    let (g, blocks) = generate_sbm(&spec)?;
    let (labels, r) = inject_heterophily(&g, &blocks, a.flip, a.seed.wrapping_add(1))?;
    let features = synth_features(&g, &labels, a.noise, a.seed.wrapping_add(2))?;
    let masks = SplitMasks::random(g.n(), a.train, a.val, a.seed.wrapping_add(3))?;
    let hom = homophily_stats(&g, &labels)?;
    let spec_sum = spectral_summary(&g)?;

    let outputs = [
        ("graph.txt", 0),
        ("labels.csv", 1),
        ("blocks.csv", 2),
        ("features.csv", 3),
        ("split.csv", 4),
    ];
    for (name, which) in outputs {
        let path = a.out.join(name);
        match which {
            0 => write_edge_list(&g, &path)?,
            1 => write_labels(labels.as_slice(), &path)?,
            2 => write_labels(blocks.as_slice(), &path)?,
            3 => write_matrix(features.as_array(), &path)?,
            _ => write_split(&masks, &path)?,
        }
        rec.output(&path);
    }
    let report = SbmReport {
        n: g.n(),
        m: g.m(),
        p: spec.p,
        q: spec.q,
        gap: spec.gap(),
        flip: a.flip,
        r,
        node_h: hom.node_h,
        lambda2: spec_sum.lambda2,
    };
    let path = a.out.join("sbm.json");
    write_json(&path, &report)?;
    rec.output(&path);
    eprintln!(
        "gen-sbm: n {} m {} gap {} R {} node_h {}",
        report.n,
        report.m,
        fmt6(report.gap),
        fmt6(report.r),
        fmt6(report.node_h)
    );
    rec.finish(&manifest_path(&a.manifest, &a.out))
}

// ------------------------------------------------------------------ sweep

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Gap targets (p - q)/(p + q), comma separated.
    #[arg(long, default_value = "0.2,0.5,0.67,0.98")]
    pub gaps: String,
    /// Label-flip fractions, comma separated.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    pub flips: String,
    /// Seeds, comma separated; each cell is run once per seed.
    #[arg(long, default_value = "13")]
    pub seeds: String,
    #[arg(long, default_value_t = 500)]
    pub block_size: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 80.0)]
    pub mean_degree: f64,
    /// Feature noise.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Training epochs of every model (default 300).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Worker threads (default: DJLAB_THREADS, else all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Results CSV.
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    /// Manifest path (default: next to the CSV).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn sweep(a: SweepArgs) -> CliResult {
    let mut rec = Recorder::new("sweep");
    let mut grid = SweepGrid {
        gaps: parse_list("gap", &a.gaps)?,
        flips: parse_list("flip", &a.flips)?,
        seeds: parse_list("seed", &a.seeds)?,
        block_size: a.block_size,
        blocks: a.blocks,
        mean_degree: a.mean_degree,
        noise: a.noise,
        ..SweepGrid::default()
    };
    if let Some(e) = a.epochs {
        grid.model.epochs = e;
        grid.baseline.epochs = e;
    }
    grid.validate()?;
    let cap = thread_cap()?;
    let threads = a.threads.unwrap_or(cap).min(cap).max(1);
    for (k, v) in [
        ("gaps", a.gaps.clone()),
        ("flips", a.flips.clone()),
        ("seeds", a.seeds.clone()),
        ("block_size", a.block_size.to_string()),
        ("blocks", a.blocks.to_string()),
        ("mean_degree", a.mean_degree.to_string()),
        ("noise", a.noise.to_string()),
        ("epochs", grid.model.epochs.to_string()),
        ("threads", threads.to_string()),
    ] {
        rec.set(k, v);
    }
    let rows = run_sweep(&grid, threads)?;
    let mut w = create(&a.out)?;
    write_sweep_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(io_err(&a.out))?;
    rec.output(&a.out);
    for r in &rows {
        eprintln!(
            "gap {} flip {} seed {}: R {} dj {} gcn {} mlp {}",
            fmt6(r.gap),
            fmt6(r.flip),
            r.seed,
            fmt6(r.r),
            fmt6(r.acc_dj),
            fmt6(r.acc_gcn),
            fmt6(r.acc_mlp)
        );
    }
    let dir = a.out.parent().unwrap_or(Path::new("."));
    rec.finish(&manifest_path(&a.manifest, dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.123456789), "0.123457");
        assert_eq!(fmt6(92.4321), "92.4321");
        assert_eq!(fmt6(123456.7), "123457");
        assert_eq!(fmt6(0.0), "0");
    }

    #[test]
    fn histogram_counts_every_pair() {
        let d = DistanceMatrix::from_matrix(ndarray::array![[0.0, 1.0, 2.0], [1.0, 0.0, 0.5], [2.0, 0.5, 0.0]]).unwrap();
        let h = distance_histogram(&d, 4);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 3);
        assert_eq!(h[3].2, 1);
    }
}
