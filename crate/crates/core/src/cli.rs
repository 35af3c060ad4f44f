//! Command-line pipeline: one subcommand per stage so ablation grids are
//! scriptable. Every command writes its reports, checkpoints and the
//! resolved config into a deterministic run directory.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::balance::train_balanced;
use crate::config::{config_hash, DatasetConfig, DatasetManifest, MiQuantizerKind, RunConfig};
use crate::dataset::{stratified_split, ModalityMatrix, MultiOmicsDataset, SplitMasks};
use crate::distill::{pretrain_student, pretrain_teacher, DistillConfig, TrainedEncoder};
use crate::error::{Error, Result};
use crate::gcn::{build_rgcn, gcn_forward, EncoderConfig, GcnModel};
use crate::metrics::{categorize, evaluate_logits, modality_mi, Quantizer, StateCategory};
use crate::numeric::Rng;
use crate::pipeline::{
    all_combinations, generate_synthetic, load_csv_dataset, logistic_baseline, reduce_features,
    write_dataset_csv, SyntheticSpec,
};
use crate::report::{
    fmt_f, kv_block, load_json, save_json, write_csv_rows, write_text, CheckpointKind, EdgeSource,
    GcnCheckpoint, JointCheckpoint,
};
use crate::snf::{scaled_exponential_similarity, snf_fuse, SimilarityNetwork, SnfOutcome};

/// Environment variable overriding the default output root (`runs`).
pub const OUT_ROOT_ENV: &str = "BALMO_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "balmo",
    version,
    about = "Balanced multimodal learning on multi-omics data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: $BALMO_OUT_ROOT or ./runs, per seed).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing generated datasets.
    #[arg(long, global = true)]
    pub force: bool,
    /// Render heatmaps / bar plots next to the reports.
    #[arg(long, global = true)]
    pub plots: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-omics dataset to disk.
    Generate {
        /// Synthetic spec TOML; the built-in default spec when omitted.
        spec: Option<PathBuf>,
    },
    /// Logistic-regression baseline over all modality combinations.
    Baseline,
    /// Build per-modality similarity networks and the fused network.
    Fuse,
    /// Train unimodal encoders (plain GCN with self edges, revised GCN with
    /// fused edges) and categorize learning states.
    TrainUnimodal {
        /// Modality name, or `all`.
        #[arg(long, default_value = "all")]
        modality: String,
        #[arg(long, value_enum, default_value_t = EdgeArg::SelfSim)]
        edges: EdgeArg,
    },
    /// Teacher/student self-distillation pretraining.
    Distill,
    /// Joint multitask training with dynamic loss reweighting.
    TrainBalanced,
    /// Re-evaluate a checkpoint against the config's dataset and splits.
    Evaluate { checkpoint: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EdgeArg {
    #[value(name = "self")]
    SelfSim,
    #[value(name = "fused")]
    Fused,
}

impl From<EdgeArg> for EdgeSource {
    fn from(e: EdgeArg) -> Self {
        match e {
            EdgeArg::SelfSim => EdgeSource::SelfSimilarity,
            EdgeArg::Fused => EdgeSource::Fused,
        }
    }
}

// Fixed derivation tags keep every stage's random stream independent of the
// others while staying a pure function of the run seed.
const TAG_SPLIT: u64 = 1;
const TAG_REDUCE: u64 = 100;
const TAG_MODEL: u64 = 200;
const TAG_FUSION_HEAD: u64 = 300;
const TAG_BASELINE: u64 = 400;

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { spec } => cmd_generate(&cli, spec.as_deref()),
        Command::Baseline => cmd_baseline(&Context::new(&cli)?),
        Command::Fuse => cmd_fuse(&Context::new(&cli)?),
        Command::TrainUnimodal { modality, edges } => {
            cmd_train_unimodal(&Context::new(&cli)?, modality, (*edges).into())
        }
        Command::Distill => cmd_distill(&Context::new(&cli)?),
        Command::TrainBalanced => cmd_train_balanced(&Context::new(&cli)?),
        Command::Evaluate { checkpoint } => cmd_evaluate(&Context::new(&cli)?, checkpoint),
    }
}

/// Loaded config plus the resolved run directory.
struct Context {
    cfg: RunConfig,
    out_dir: PathBuf,
    plots: bool,
}

fn default_out_dir(seed: u64) -> PathBuf {
    let root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| "runs".into());
    PathBuf::from(root).join(format!("run-seed{seed}"))
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let config_path = cli
            .config
            .as_ref()
            .ok_or_else(|| Error::config("--config PATH is required for this command"))?;
        let mut cfg = RunConfig::load(config_path)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let out_dir = cli
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| default_out_dir(cfg.seed));
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

        let resolved = cfg.resolved_toml();
        write_text(&out_dir.join("resolved_config.toml"), &resolved)?;
        let stamp = kv_block(&[
            ("seed", cfg.seed.to_string()),
            ("config_hash", config_hash(&resolved)),
        ]);
        write_text(&out_dir.join("stamp.txt"), &stamp)?;
        Ok(Self {
            cfg,
            out_dir,
            plots: cli.plots,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }
}

/// Dataset, splits, reduced modalities and per-modality similarity
/// networks: the state every training stage starts from.
struct Prepared {
    ds: MultiOmicsDataset,
    masks: SplitMasks,
    reduced: Vec<ModalityMatrix>,
    raw_networks: Vec<SimilarityNetwork>,
    warnings: Vec<String>,
}

impl Prepared {
    fn modality_index(&self, name: &str) -> Result<usize> {
        self.reduced
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::config(format!("unknown modality '{name}'")))
    }

    fn num_classes(&self) -> usize {
        self.ds.n_classes()
    }
}

fn load_dataset(ctx: &Context) -> Result<(MultiOmicsDataset, Vec<String>)> {
    match &ctx.cfg.dataset {
        DatasetConfig::Synthetic { spec } => {
            let spec = match spec {
                Some(path) => load_synthetic_spec(path)?,
                None => SyntheticSpec {
                    seed: ctx.cfg.seed,
                    ..SyntheticSpec::default()
                },
            };
            Ok((generate_synthetic(&spec)?, Vec::new()))
        }
        DatasetConfig::Csv { manifest } => {
            let manifest_data = DatasetManifest::load(manifest)?;
            let (paths, labels) = manifest_data.resolved_paths(manifest);
            let (mut ds, warnings) = load_csv_dataset(&paths, &labels)?;
            if let Some(names) = &manifest_data.class_names {
                remap_classes(&mut ds, names)?;
            }
            Ok((ds, warnings))
        }
    }
}

fn load_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SyntheticSpec =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

/// Reorders class indices to match the manifest's declared class names.
fn remap_classes(ds: &mut MultiOmicsDataset, names: &[String]) -> Result<()> {
    let mut mapping = Vec::with_capacity(ds.class_names.len());
    for current in &ds.class_names {
        let target = names.iter().position(|n| n == current).ok_or_else(|| {
            Error::config(format!(
                "label '{current}' found in the data but missing from manifest class_names"
            ))
        })?;
        mapping.push(target);
    }
    if names.len() != ds.class_names.len() {
        return Err(Error::config(
            "manifest class_names does not match the label set in the data",
        ));
    }
    for y in &mut ds.labels {
        *y = mapping[*y];
    }
    ds.class_names = names.to_vec();
    ds.validate()
}

fn prepare(ctx: &Context) -> Result<Prepared> {
    let (ds, mut warnings) = load_dataset(ctx)?;
    ds.validate()?;
    let base = Rng::new(ctx.cfg.seed);
    let mut split_rng = base.derive(TAG_SPLIT);
    let masks = stratified_split(&ds.labels, ctx.cfg.split.fractions(), &mut split_rng)?;

    let mut reduced = Vec::with_capacity(ds.n_modalities());
    for (idx, m) in ds.modalities.iter().enumerate() {
        let out = reduce_features(
            m,
            &ctx.cfg.reduction,
            &masks.train,
            base.derive(TAG_REDUCE + idx as u64).seed(),
        )?;
        if let Some(w) = out.warning {
            warnings.push(w);
        }
        reduced.push(out.modality);
    }

    let snf_params = ctx.cfg.snf.to_params(ds.n_samples());
    let mut raw_networks = Vec::with_capacity(reduced.len());
    for m in &reduced {
        let net = scaled_exponential_similarity(m, &snf_params)?;
        warnings.extend(net.warnings.iter().cloned());
        raw_networks.push(net);
    }

    Ok(Prepared {
        ds,
        masks,
        reduced,
        raw_networks,
        warnings,
    })
}

fn fuse_networks(ctx: &Context, prepared: &Prepared) -> Result<SnfOutcome> {
    let params = ctx.cfg.snf.to_params(prepared.ds.n_samples());
    match &ctx.cfg.snf.fuse_modalities {
        None => snf_fuse(&prepared.raw_networks, &params),
        Some(names) => {
            let selected: Vec<SimilarityNetwork> = names
                .iter()
                .map(|name| {
                    prepared
                        .modality_index(name)
                        .map(|i| prepared.raw_networks[i].clone())
                })
                .collect::<Result<_>>()?;
            snf_fuse(&selected, &params)
        }
    }
}

fn teacher_params_from_train(ctx: &Context) -> DistillConfig {
    DistillConfig {
        epochs: ctx.cfg.train.epochs,
        learning_rate: ctx.cfg.train.learning_rate,
        momentum: ctx.cfg.train.momentum,
        ..DistillConfig::default()
    }
}

fn encoder_config(ctx: &Context) -> EncoderConfig {
    EncoderConfig {
        hidden_dims: ctx.cfg.encoder.hidden_dims.clone(),
        representation_dim: ctx.cfg.encoder.representation_dim,
        avg_edges_per_node: ctx.cfg.adjacency.avg_edges_per_node,
    }
}

fn model_seed(ctx: &Context, modality_idx: usize) -> u64 {
    Rng::new(ctx.cfg.seed)
        .derive(TAG_MODEL + modality_idx as u64)
        .seed()
}

fn write_warnings(ctx: &Context, warnings: &[String]) -> Result<()> {
    if warnings.is_empty() {
        return Ok(());
    }
    let mut text = String::new();
    for w in warnings {
        text.push_str(w);
        text.push('\n');
    }
    write_text(&ctx.path("warnings.txt"), &text)
}

// ---------------------------------------------------------------------------
// generate

fn cmd_generate(cli: &Cli, spec_path: Option<&Path>) -> Result<()> {
    let mut spec = match spec_path {
        Some(path) => load_synthetic_spec(path)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| default_out_dir(spec.seed));
    let dataset_dir = out_dir.join("dataset");
    if dataset_dir.exists() {
        let non_empty = std::fs::read_dir(&dataset_dir)
            .map_err(|e| Error::io(&dataset_dir, e))?
            .next()
            .is_some();
        if non_empty && !cli.force {
            return Err(Error::config(format!(
                "{} already exists and is not empty; pass --force to overwrite",
                dataset_dir.display()
            )));
        }
    }
    std::fs::create_dir_all(&dataset_dir).map_err(|e| Error::io(&dataset_dir, e))?;

    let ds = generate_synthetic(&spec)?;
    let (paths, labels_path) = write_dataset_csv(&ds, &dataset_dir)?;

    let manifest = DatasetManifest {
        modalities: paths
            .iter()
            .map(|(name, path)| crate::config::ManifestModality {
                name: name.clone(),
                path: PathBuf::from(path.file_name().expect("file name")),
            })
            .collect(),
        labels: PathBuf::from(labels_path.file_name().expect("file name")),
        class_names: Some(ds.class_names.clone()),
    };
    let manifest_text =
        toml::to_string_pretty(&manifest).map_err(|e| Error::config(e.to_string()))?;
    write_text(&dataset_dir.join("manifest.toml"), &manifest_text)?;
    let spec_text = toml::to_string_pretty(&spec).map_err(|e| Error::config(e.to_string()))?;
    write_text(&dataset_dir.join("synthetic_spec.toml"), &spec_text)?;
    println!(
        "generated {} samples x {} modalities into {}",
        ds.n_samples(),
        ds.n_modalities(),
        dataset_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// baseline

fn cmd_baseline(ctx: &Context) -> Result<()> {
    let (ds, warnings) = load_dataset(ctx)?;
    ds.validate()?;
    let combos = all_combinations(ds.n_modalities());
    let rows = logistic_baseline(
        &ds,
        &combos,
        &ctx.cfg.reduction,
        &ctx.cfg.baseline,
        ctx.cfg.split.fractions(),
        Rng::new(ctx.cfg.seed).derive(TAG_BASELINE).seed(),
    )?;

    let csv_rows: Vec<Vec<String>> = rows.iter().map(|r| r.formatted().to_vec()).collect();
    write_csv_rows(
        &ctx.path("baseline_report.csv"),
        &["combination", "accuracy", "auc", "macro_f1"],
        &csv_rows,
    )?;

    let mut pairs: Vec<(&str, String)> = Vec::new();
    let mut detail = String::new();
    for r in &rows {
        detail.push_str(&format!(
            "{} accuracy_mean={} accuracy_std={} auc_mean={} auc_std={} macro_f1_mean={} macro_f1_std={}\n",
            r.combo,
            fmt_f(r.accuracy.0),
            fmt_f(r.accuracy.1),
            fmt_f(r.auc.0),
            fmt_f(r.auc.1),
            fmt_f(r.macro_f1.0),
            fmt_f(r.macro_f1.1),
        ));
    }
    pairs.push(("repeats", ctx.cfg.baseline.repeats.to_string()));
    let mut text = kv_block(&pairs);
    text.push_str(&detail);
    write_text(&ctx.path("baseline_report.txt"), &text)?;
    write_warnings(ctx, &warnings)?;
    println!(
        "baseline report written to {}",
        ctx.path("baseline_report.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fuse

fn cmd_fuse(ctx: &Context) -> Result<()> {
    let prepared = prepare(ctx)?;
    let outcome = fuse_networks(ctx, &prepared)?;

    let net_dir = ctx.path("networks");
    std::fs::create_dir_all(&net_dir).map_err(|e| Error::io(&net_dir, e))?;
    for (m, net) in prepared.reduced.iter().zip(&prepared.raw_networks) {
        net.write_csv(
            &prepared.ds.sample_ids,
            &net_dir.join(format!("{}_w.csv", m.name)),
        )?;
    }
    outcome
        .fused
        .write_csv(&prepared.ds.sample_ids, &net_dir.join("fused.csv"))?;

    let delta_rows: Vec<Vec<String>> = outcome
        .iteration_deltas
        .iter()
        .enumerate()
        .map(|(i, d)| vec![i.to_string(), format!("{d:.12e}")])
        .collect();
    write_csv_rows(
        &ctx.path("fuse_deltas.csv"),
        &["iteration", "delta"],
        &delta_rows,
    )?;

    let fused_inputs = ctx
        .cfg
        .snf
        .fuse_modalities
        .as_ref()
        .map_or(prepared.reduced.len(), Vec::len);
    let summary = kv_block(&[
        ("modalities", fused_inputs.to_string()),
        ("samples", prepared.ds.n_samples().to_string()),
        ("iterations_run", outcome.iteration_deltas.len().to_string()),
        ("converged", outcome.converged.to_string()),
        (
            "final_delta",
            format!(
                "{:.12e}",
                outcome.iteration_deltas.last().copied().unwrap_or(f64::NAN)
            ),
        ),
    ]);
    write_text(&ctx.path("fuse_summary.txt"), &summary)?;

    if ctx.plots {
        for (m, net) in prepared.reduced.iter().zip(&prepared.raw_networks) {
            crate::plots::heatmap_png(&net.matrix, &ctx.path(&format!("plots/{}_w.png", m.name)))?;
        }
        crate::plots::heatmap_png(&outcome.fused.matrix, &ctx.path("plots/fused.png"))?;
    }
    let mut warnings = prepared.warnings.clone();
    warnings.extend(outcome.fused.warnings.iter().cloned());
    write_warnings(ctx, &warnings)?;
    println!(
        "fused network written to {}",
        net_dir.join("fused.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-unimodal

/// Learning states artifact consumed by `distill` and `train-balanced`.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct LearningStatesFile {
    pub version: u32,
    pub gamma: f64,
    pub states: Vec<StateEntry>,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct StateEntry {
    pub modality: String,
    pub val_macro_f1: f64,
    pub category: String,
    /// Best-model predicted labels for all N samples (feeds the MI gate).
    pub predictions: Vec<usize>,
}

fn run_unimodal(
    ctx: &Context,
    prepared: &Prepared,
    idx: usize,
    edges_net: &SimilarityNetwork,
) -> Result<TrainedEncoder> {
    pretrain_teacher(
        &prepared.reduced[idx],
        edges_net,
        &prepared.ds.labels,
        &prepared.masks,
        &encoder_config(ctx),
        &teacher_params_from_train(ctx),
        prepared.num_classes(),
        model_seed(ctx, idx),
    )
}

const TRACE_HEADER: [&str; 7] = [
    "epoch",
    "l_ce",
    "l_kl",
    "l_re",
    "val_ce",
    "train_macro_f1",
    "val_macro_f1",
];

fn trace_rows(run: &TrainedEncoder) -> Vec<Vec<String>> {
    run.trace
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                fmt_f(r.l_ce),
                fmt_f(r.l_kl),
                fmt_f(r.l_re),
                fmt_f(r.val_ce),
                fmt_f(r.train_macro_f1),
                fmt_f(r.val_macro_f1),
            ]
        })
        .collect()
}

fn cmd_train_unimodal(ctx: &Context, modality: &str, edges: EdgeSource) -> Result<()> {
    let prepared = prepare(ctx)?;
    let selected: Vec<usize> = if modality == "all" {
        (0..prepared.reduced.len()).collect()
    } else {
        vec![prepared.modality_index(modality)?]
    };
    let fused = if edges == EdgeSource::Fused {
        Some(fuse_networks(ctx, &prepared)?.fused)
    } else {
        None
    };

    let dir = ctx.path("unimodal");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut report_rows = Vec::new();
    let mut runs = Vec::new();
    for &idx in &selected {
        let edges_net = match edges {
            EdgeSource::Fused => fused.as_ref().expect("fused computed"),
            EdgeSource::SelfSimilarity => &prepared.raw_networks[idx],
        };
        let run = run_unimodal(ctx, &prepared, idx, edges_net)?;
        let name = &prepared.reduced[idx].name;

        let ckpt = GcnCheckpoint::from_model(&run.model, edges);
        save_json(&ckpt, &dir.join(format!("{name}_{edges}.ckpt.json")))?;
        write_csv_rows(
            &dir.join(format!("{name}_{edges}_trace.csv")),
            &TRACE_HEADER,
            &trace_rows(&run),
        )?;

        let out = gcn_forward(&run.model, &prepared.reduced[idx].features)?;
        let test = evaluate_logits(
            &out.logits,
            &prepared.ds.labels,
            &prepared.masks.test,
            prepared.num_classes(),
        )?;
        report_rows.push(vec![
            name.clone(),
            edges.to_string(),
            run.best_epoch.to_string(),
            fmt_f(run.best_val_macro_f1),
            fmt_f(test.accuracy),
            fmt_f(test.auc),
            fmt_f(test.macro_f1),
        ]);
        runs.push((idx, run));
    }
    write_csv_rows(
        &ctx.path(&format!("unimodal_report_{edges}.csv")),
        &[
            "modality",
            "edges",
            "best_epoch",
            "val_macro_f1",
            "test_accuracy",
            "test_auc",
            "test_macro_f1",
        ],
        &report_rows,
    )?;

    // Learning states are derived from the full revised-GCN sweep.
    if edges == EdgeSource::Fused && modality == "all" {
        let f_scores: Vec<f64> = runs.iter().map(|(_, r)| r.best_val_macro_f1).collect();
        let states = categorize(&f_scores, ctx.cfg.balance.gamma, prepared.num_classes())?;
        let entries: Vec<StateEntry> = runs
            .iter()
            .zip(&states)
            .map(|((idx, run), state)| {
                let out = gcn_forward(&run.model, &prepared.reduced[*idx].features)?;
                Ok(StateEntry {
                    modality: prepared.reduced[*idx].name.clone(),
                    val_macro_f1: state.macro_f1,
                    category: state.category.to_string(),
                    predictions: out.logits.argmax_rows(),
                })
            })
            .collect::<Result<_>>()?;
        save_json(
            &LearningStatesFile {
                version: 1,
                gamma: ctx.cfg.balance.gamma,
                states: entries,
            },
            &ctx.path("learning_states.json"),
        )?;
    }
    write_warnings(ctx, &prepared.warnings)?;
    println!(
        "unimodal report written to {}",
        ctx.path(&format!("unimodal_report_{edges}.csv")).display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// distill

/// Index of distillation artifacts consumed by `train-balanced`.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct DistillManifest {
    pub version: u32,
    pub teacher_modality: String,
    pub teacher_checkpoint: String,
    pub students: Vec<StudentEntry>,
    pub refused: Vec<String>,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct StudentEntry {
    pub modality: String,
    pub checkpoint: String,
    pub mi_with_strong: Option<f64>,
}

fn require_states(ctx: &Context) -> Result<LearningStatesFile> {
    let path = ctx.path("learning_states.json");
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            produced_by: "balmo train-unimodal --edges fused --modality all".into(),
        });
    }
    load_json(&path)
}

fn cmd_distill(ctx: &Context) -> Result<()> {
    let prepared = prepare(ctx)?;
    let states = require_states(ctx)?;
    let fused = fuse_networks(ctx, &prepared)?.fused;
    let num_classes = prepared.num_classes();

    let strong_entry = states
        .states
        .iter()
        .find(|s| s.category == StateCategory::Strong.to_string())
        .ok_or_else(|| Error::config("learning states contain no strong modality"))?;
    let strong_idx = prepared.modality_index(&strong_entry.modality)?;

    let dir = ctx.path("distill");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let teacher = pretrain_teacher(
        &prepared.reduced[strong_idx],
        &fused,
        &prepared.ds.labels,
        &prepared.masks,
        &encoder_config(ctx),
        &ctx.cfg.distill,
        num_classes,
        model_seed(ctx, strong_idx),
    )?;
    let teacher_rel = format!("distill/{}_teacher.ckpt.json", strong_entry.modality);
    save_json(
        &GcnCheckpoint::from_model(&teacher.model, EdgeSource::Fused),
        &ctx.path(&teacher_rel),
    )?;
    write_csv_rows(
        &dir.join(format!("{}_teacher_trace.csv", strong_entry.modality)),
        &TRACE_HEADER,
        &trace_rows(&teacher),
    )?;

    let mut students = Vec::new();
    let mut refused = Vec::new();
    let mut summary_lines = vec![format!(
        "teacher = {} (val_macro_f1 {})",
        strong_entry.modality,
        fmt_f(teacher.best_val_macro_f1)
    )];

    for entry in &states.states {
        if entry.modality == strong_entry.modality {
            continue;
        }
        let idx = prepared.modality_index(&entry.modality)?;
        let category = match entry.category.as_str() {
            "weak" => StateCategory::Weak,
            "low_information" => StateCategory::LowInformation,
            "strong" => StateCategory::Strong,
            other => return Err(Error::config(format!("unknown category '{other}'"))),
        };
        let mi = if category == StateCategory::LowInformation {
            let quantizer = match ctx.cfg.mi_gate.quantizer {
                MiQuantizerKind::PredictedLabels => {
                    Quantizer::PredictedLabels(entry.predictions.clone())
                }
                MiQuantizerKind::PrincipalAxisBins => Quantizer::PrincipalAxisBins {
                    bins: ctx.cfg.mi_gate.bins,
                },
            };
            let outcome = modality_mi(
                &prepared.reduced[idx],
                &strong_entry.predictions,
                &quantizer,
            )?;
            Some(outcome.value)
        } else {
            None
        };

        match pretrain_student(
            &prepared.reduced[idx],
            &fused,
            &teacher.snapshot,
            &prepared.ds.labels,
            &prepared.masks,
            &encoder_config(ctx),
            &ctx.cfg.distill,
            num_classes,
            model_seed(ctx, idx),
            category,
            mi,
            ctx.cfg.mi_gate.threshold,
        ) {
            Ok(student) => {
                let rel = format!("distill/{}_student.ckpt.json", entry.modality);
                save_json(
                    &GcnCheckpoint::from_model(&student.model, EdgeSource::Fused),
                    &ctx.path(&rel),
                )?;
                write_csv_rows(
                    &dir.join(format!("{}_student_trace.csv", entry.modality)),
                    &TRACE_HEADER,
                    &trace_rows(&student),
                )?;
                summary_lines.push(match mi {
                    Some(v) => format!(
                        "{} = distilled (low-information, mi {} > gate {}; val_macro_f1 {})",
                        entry.modality,
                        fmt_f(v),
                        ctx.cfg.mi_gate.threshold,
                        fmt_f(student.best_val_macro_f1)
                    ),
                    None => format!(
                        "{} = distilled (weak; val_macro_f1 {})",
                        entry.modality,
                        fmt_f(student.best_val_macro_f1)
                    ),
                });
                students.push(StudentEntry {
                    modality: entry.modality.clone(),
                    checkpoint: rel,
                    mi_with_strong: mi,
                });
            }
            Err(Error::MiGateRefused {
                modality,
                mi,
                threshold,
            }) => {
                summary_lines.push(format!(
                    "{modality} = refused (low-information, mi {} <= gate {threshold})",
                    fmt_f(mi)
                ));
                refused.push(modality);
            }
            Err(other) => return Err(other),
        }
    }

    save_json(
        &DistillManifest {
            version: 1,
            teacher_modality: strong_entry.modality.clone(),
            teacher_checkpoint: teacher_rel,
            students,
            refused,
        },
        &ctx.path("distill_manifest.json"),
    )?;
    write_text(
        &ctx.path("distill_summary.txt"),
        &(summary_lines.join("\n") + "\n"),
    )?;
    write_warnings(ctx, &prepared.warnings)?;
    println!(
        "distillation summary written to {}",
        ctx.path("distill_summary.txt").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-balanced

fn cmd_train_balanced(ctx: &Context) -> Result<()> {
    let prepared = prepare(ctx)?;
    let _states = require_states(ctx)?;
    let manifest_path = ctx.path("distill_manifest.json");
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact {
            path: manifest_path,
            produced_by: "balmo distill".into(),
        });
    }
    let manifest: DistillManifest = load_json(&manifest_path)?;
    let fused = fuse_networks(ctx, &prepared)?.fused;
    let num_classes = prepared.num_classes();

    // Encoders in dataset order: teacher for the strong modality, student
    // checkpoints where distillation ran, fresh seeds for refused ones.
    let mut encoders: Vec<GcnModel> = Vec::with_capacity(prepared.reduced.len());
    for (idx, m) in prepared.reduced.iter().enumerate() {
        let ckpt_rel = if m.name == manifest.teacher_modality {
            Some(manifest.teacher_checkpoint.clone())
        } else {
            manifest
                .students
                .iter()
                .find(|s| s.modality == m.name)
                .map(|s| s.checkpoint.clone())
        };
        let model = match ckpt_rel {
            Some(rel) => {
                let ckpt: GcnCheckpoint = load_json(&ctx.path(&rel))?;
                if ckpt.node_modality != m.name {
                    return Err(Error::config(format!(
                        "checkpoint {rel} belongs to '{}', expected '{}'",
                        ckpt.node_modality, m.name
                    )));
                }
                ckpt.into_model(&fused, ctx.cfg.adjacency.avg_edges_per_node)?
            }
            None => build_rgcn(
                m,
                &fused,
                &encoder_config(ctx),
                num_classes,
                model_seed(ctx, idx),
            )?,
        };
        encoders.push(model);
    }

    let run = train_balanced(
        &prepared.reduced,
        encoders,
        &prepared.ds.labels,
        &prepared.masks,
        num_classes,
        &ctx.cfg.balance,
        &ctx.cfg.balance_train,
        Rng::new(ctx.cfg.seed).derive(TAG_FUSION_HEAD).seed(),
        false,
    )?;

    // Per-epoch report.
    let names: Vec<&str> = prepared.reduced.iter().map(|m| m.name.as_str()).collect();
    let mut header: Vec<String> = vec!["epoch".into()];
    header.extend(names.iter().map(|n| format!("k_{n}")));
    header.push("multimodal_k".into());
    header.extend(names.iter().map(|n| format!("loss_{n}")));
    header.push("fusion_loss".into());
    header.push("total_loss".into());
    header.extend(names.iter().map(|n| format!("val_f1_{n}")));
    header.push("fusion_val_f1".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = run
        .report
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.epoch.to_string()];
            row.extend(r.k.iter().map(|&k| fmt_f(k)));
            row.push(fmt_f(r.multimodal_k));
            row.extend(r.head_losses.iter().map(|&l| fmt_f(l)));
            row.push(fmt_f(r.fusion_loss));
            row.push(fmt_f(r.total_loss));
            row.extend(r.head_val_f1.iter().map(|&f| fmt_f(f)));
            row.push(fmt_f(r.fusion_val_f1));
            row
        })
        .collect();
    write_csv_rows(&ctx.path("balance_report.csv"), &header_refs, &rows)?;

    let mut lines = kv_block(&[
        ("best_epoch", run.report.best_epoch.to_string()),
        ("best_val_macro_f1", fmt_f(run.report.best_val_macro_f1)),
    ]);
    for head in &run.report.final_test {
        lines.push_str(&format!(
            "test_{}_accuracy = {}\ntest_{}_auc = {}\ntest_{}_macro_f1 = {}\n",
            head.name,
            fmt_f(head.test.accuracy),
            head.name,
            fmt_f(head.test.auc),
            head.name,
            fmt_f(head.test.macro_f1),
        ));
    }
    write_text(&ctx.path("balance_summary.txt"), &lines)?;

    save_json(
        &JointCheckpoint::from_model(&run.model, ctx.cfg.seed),
        &ctx.path("balance.ckpt.json"),
    )?;

    // Macro-F1 bar data (and plot when requested).
    let bar_rows: Vec<Vec<String>> = run
        .report
        .final_test
        .iter()
        .map(|h| vec![h.name.clone(), fmt_f(h.test.macro_f1)])
        .collect();
    write_csv_rows(
        &ctx.path("macro_f1_bars.csv"),
        &["head", "test_macro_f1"],
        &bar_rows,
    )?;
    if ctx.plots {
        let values: Vec<f64> = run
            .report
            .final_test
            .iter()
            .map(|h| h.test.macro_f1)
            .collect();
        crate::plots::bars_png(&values, &ctx.path("plots/macro_f1_bars.png"))?;
    }

    let mut warnings = prepared.warnings.clone();
    warnings.extend(run.report.warnings.iter().cloned());
    write_warnings(ctx, &warnings)?;
    println!(
        "balance summary written to {}",
        ctx.path("balance_summary.txt").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

fn cmd_evaluate(ctx: &Context, checkpoint: &Path) -> Result<()> {
    if !checkpoint.exists() {
        return Err(Error::MissingArtifact {
            path: checkpoint.to_path_buf(),
            produced_by: "balmo train-unimodal / distill / train-balanced".into(),
        });
    }
    let prepared = prepare(ctx)?;
    let num_classes = prepared.num_classes();
    let kind: CheckpointKind = load_json(checkpoint)?;

    // File name only: reports must stay byte-identical across run
    // directories.
    let ckpt_name = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut pairs: Vec<(String, String)> = vec![
        ("checkpoint".into(), ckpt_name),
        ("kind".into(), kind.kind.clone()),
    ];

    match kind.kind.as_str() {
        "gcn" => {
            let ckpt: GcnCheckpoint = load_json(checkpoint)?;
            let idx = prepared.modality_index(&ckpt.node_modality)?;
            let edges_net = match ckpt.edges {
                EdgeSource::Fused => fuse_networks(ctx, &prepared)?.fused,
                EdgeSource::SelfSimilarity => prepared.raw_networks[idx].clone(),
            };
            let modality = ckpt.node_modality.clone();
            let model = ckpt.into_model(&edges_net, ctx.cfg.adjacency.avg_edges_per_node)?;
            let out = gcn_forward(&model, &prepared.reduced[idx].features)?;
            let test = evaluate_logits(
                &out.logits,
                &prepared.ds.labels,
                &prepared.masks.test,
                num_classes,
            )?;
            let val = evaluate_logits(
                &out.logits,
                &prepared.ds.labels,
                &prepared.masks.val,
                num_classes,
            )?;
            pairs.push(("modality".into(), modality));
            pairs.push(("val_macro_f1".into(), fmt_f(val.macro_f1)));
            pairs.push(("test_accuracy".into(), fmt_f(test.accuracy)));
            pairs.push(("test_auc".into(), fmt_f(test.auc)));
            pairs.push(("test_macro_f1".into(), fmt_f(test.macro_f1)));
        }
        "joint" => {
            let ckpt: JointCheckpoint = load_json(checkpoint)?;
            let fused = fuse_networks(ctx, &prepared)?.fused;
            let model = ckpt.into_model(&fused, ctx.cfg.adjacency.avg_edges_per_node)?;
            let xs: Vec<&crate::numeric::Matrix> = model
                .modality_names
                .iter()
                .map(|name| {
                    prepared
                        .modality_index(name)
                        .map(|i| &prepared.reduced[i].features)
                })
                .collect::<Result<_>>()?;
            let out = crate::balance::joint_forward(&model, &xs)?;
            for (name, logits) in model.modality_names.iter().zip(&out.head_logits) {
                let test = evaluate_logits(
                    logits,
                    &prepared.ds.labels,
                    &prepared.masks.test,
                    num_classes,
                )?;
                pairs.push((format!("test_{name}_accuracy"), fmt_f(test.accuracy)));
                pairs.push((format!("test_{name}_auc"), fmt_f(test.auc)));
                pairs.push((format!("test_{name}_macro_f1"), fmt_f(test.macro_f1)));
            }
            let test = evaluate_logits(
                &out.fusion_logits,
                &prepared.ds.labels,
                &prepared.masks.test,
                num_classes,
            )?;
            pairs.push(("test_multimodal_accuracy".into(), fmt_f(test.accuracy)));
            pairs.push(("test_multimodal_auc".into(), fmt_f(test.auc)));
            pairs.push(("test_multimodal_macro_f1".into(), fmt_f(test.macro_f1)));
        }
        other => {
            return Err(Error::config(format!("unknown checkpoint kind '{other}'")));
        }
    }

    let pair_refs: Vec<(&str, String)> =
        pairs.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    write_text(&ctx.path("evaluate_report.txt"), &kv_block(&pair_refs))?;
    println!(
        "evaluation written to {}",
        ctx.path("evaluate_report.txt").display()
    );
    Ok(())
}
