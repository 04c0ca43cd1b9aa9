//! Command-line front end: synthetic data generation, training, prediction
//! and evaluation.
//!
//! A dataset is described by a manifest, a tab-delimited text file:
//!
//! ```text
//! wearnet-manifest 1
//! wear_field	wear
//! geometry	cylinder
//! cylinder-000.vtk	1000	0.3	train	cylinder-000
//! ```
//!
//! Records are `mesh_path temperature friction split source_id`; relative
//! paths resolve against the manifest's directory. Lines starting with `#`
//! are ignored.

use crate::mesh_io::{read_vtk, write_vtk, MeshError, MeshMetadata, UnstructuredMesh};
use crate::metrics::{self, EvalSummary, MetricsError, TargetStats};
use crate::nn::{Checkpoint, DropoutPlacement, Model, ModelSpec, NnError, Variant};
use crate::preprocess::{build_graph, GraphDataset, PreparedGraph, PreprocessError, SurfaceGraph};
use crate::synth::{self, Geometry, Resolution, Split, SynthConfig, SynthError};
use crate::train::{self, LossKind, TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_HEADER: &str = "wearnet-manifest 1";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const EVAL_FILE: &str = "eval.json";
/// Environment variable read for the log filter.
pub const LOG_ENV: &str = "WEARNET_LOG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Mesh {
        path: PathBuf,
        #[source]
        source: MeshError,
    },
    #[error("{path}: {source}")]
    Preprocess {
        path: PathBuf,
        #[source]
        source: PreprocessError,
    },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: NnError,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "wearnet",
    version,
    about = "Graph neural network surrogates for die wear"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: one VTK file per process condition plus a manifest.
    GenSynth(GenSynthArgs),
    /// Train a surrogate on the train split of a manifest.
    Train(TrainArgs),
    /// Predict per-node wear on one mesh under new process parameters.
    Predict(PredictArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenSynthArgs {
    /// cylinder, cylindrical_sector or box
    #[arg(long)]
    pub geometry: Geometry,
    /// Number of (temperature, friction) conditions.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub grid: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Target number of surface nodes.
    #[arg(long, default_value_t = synth::DEFAULT_SURFACE_NODES)]
    pub nodes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// graphconv, pointnet, edgeconv-l or sageconv-l
    #[arg(long)]
    pub variant: Variant,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = ModelSpec::DEFAULT_DROPOUT)]
    pub dropout: f64,
    /// Also apply dropout after the node-linear layer.
    #[arg(long)]
    pub dropout_after_linear: bool,
    /// mse or mae
    #[arg(long, default_value = "mse")]
    pub loss: LossKind,
    /// Stop when a 100-epoch window improves by less than this fraction.
    #[arg(long)]
    pub plateau_tolerance: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the checkpoint, learning curve and evaluation.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub temperature: f64,
    #[arg(long)]
    pub friction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSelector {
    One(Split),
    All,
}

impl std::str::FromStr for SplitSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(SplitSelector::All);
        }
        s.parse().map(SplitSelector::One)
    }
}

impl SplitSelector {
    fn matches(self, split: Split) -> bool {
        match self {
            SplitSelector::All => true,
            SplitSelector::One(s) => s == split,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitSelector::All => "all",
            SplitSelector::One(s) => s.name(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val, test or all
    #[arg(long, default_value = "test")]
    pub split: SplitSelector,
    /// Also write the summary as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub mesh_path: PathBuf,
    pub temperature: f64,
    pub friction_coefficient: f64,
    pub split: Split,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub wear_field: String,
    pub geometry: Option<String>,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MANIFEST_HEADER}");
        let _ = writeln!(s, "wear_field\t{}", self.wear_field);
        if let Some(g) = &self.geometry {
            let _ = writeln!(s, "geometry\t{g}");
        }
        let _ = writeln!(
            s,
            "# mesh_path\ttemperature\tfriction_coefficient\tsplit\tsource_id"
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.mesh_path.display(),
                r.temperature,
                r.friction_coefficient,
                r.split,
                r.source_id
            );
        }
        s
    }

    /// Parses manifest text; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let err = |line: usize, message: String| CliError::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            Some((n, h)) => {
                return Err(err(n, format!("expected '{MANIFEST_HEADER}', found '{h}'")))
            }
            None => return Err(err(1, "empty manifest".into())),
        }
        let mut wear_field = None;
        let mut geometry = None;
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        let mut paths = HashSet::new();
        for (n, line) in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            match cols.as_slice() {
                ["wear_field", name] => wear_field = Some(name.to_string()),
                ["geometry", g] => geometry = Some(g.to_string()),
                [mesh, t, mu, split, id] => {
                    let num = |s: &str, what: &str| {
                        s.parse::<f64>()
                            .map_err(|_| err(n, format!("invalid {what} '{s}'")))
                    };
                    let record = ManifestRecord {
                        mesh_path: PathBuf::from(mesh),
                        temperature: num(t, "temperature")?,
                        friction_coefficient: num(mu, "friction coefficient")?,
                        split: split.parse().map_err(|e: String| err(n, e))?,
                        source_id: id.to_string(),
                    };
                    if !ids.insert(record.source_id.clone()) {
                        return Err(err(n, format!("duplicate source id '{id}'")));
                    }
                    if !paths.insert(record.mesh_path.clone()) {
                        return Err(err(n, format!("mesh '{mesh}' listed twice")));
                    }
                    records.push(record);
                }
                _ => {
                    return Err(err(
                        n,
                        format!("expected 5 tab-separated fields, found {}", cols.len()),
                    ))
                }
            }
        }
        Ok(Manifest {
            wear_field: wear_field.ok_or_else(|| err(1, "missing 'wear_field' line".into()))?,
            geometry,
            records,
        })
    }

    /// Reads a manifest and resolves record paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut manifest = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut manifest.records {
            if r.mesh_path.is_relative() {
                r.mesh_path = base.join(&r.mesh_path);
            }
            if !r.mesh_path.is_file() {
                return Err(CliError::Io {
                    path: r.mesh_path.clone(),
                    source: std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "mesh file not found",
                    ),
                });
            }
        }
        Ok(manifest)
    }

    pub fn indices(&self, selector: SplitSelector) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| selector.matches(self.records[i].split))
            .collect()
    }
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = std::fs::write(&tmp, contents).and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(CliError::io(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(CliError::io(path))
}

pub fn load_mesh(path: &Path) -> Result<UnstructuredMesh, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    read_vtk(&text).map_err(|source| CliError::Mesh {
        path: path.to_path_buf(),
        source,
    })
}

fn load_graph(manifest: &Manifest, i: usize) -> Result<SurfaceGraph, CliError> {
    let r = &manifest.records[i];
    let mesh = load_mesh(&r.mesh_path)?;
    let meta = MeshMetadata::new(r.temperature, r.friction_coefficient, r.source_id.clone());
    build_graph(&mesh, &meta, Some(&manifest.wear_field)).map_err(|source| CliError::Preprocess {
        path: r.mesh_path.clone(),
        source,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    Checkpoint::from_json(&text).map_err(|source| CliError::Model {
        path: path.to_path_buf(),
        source,
    })
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub fn cmd_gen_synth(args: &GenSynthArgs, out: &mut dyn Write) -> Result<Manifest, CliError> {
    if args.grid == 0 {
        return Err(CliError::Usage("--grid must be at least 1".into()));
    }
    let grid = args.grid as usize;
    let config = SynthConfig {
        resolution: Resolution::SurfaceNodes(args.nodes),
        ..SynthConfig::new(args.geometry, grid, args.seed)
    };
    let data = synth::generate_dataset(&config)?;
    let splits = synth::default_splits(grid, args.seed);
    create_dir(&args.out)?;
    let mut records = Vec::with_capacity(grid);
    for ((mesh, meta), split) in data.iter().zip(splits) {
        let file = format!("{}.vtk", meta.source_id);
        write_atomic(&args.out.join(&file), write_vtk(mesh).as_bytes())?;
        records.push(ManifestRecord {
            mesh_path: PathBuf::from(file),
            temperature: meta.temperature,
            friction_coefficient: meta.friction_coefficient,
            split,
            source_id: meta.source_id.clone(),
        });
    }
    let manifest = Manifest {
        wear_field: synth::WEAR_FIELD.into(),
        geometry: Some(args.geometry.name().into()),
        records,
    };
    let path = args.out.join(MANIFEST_FILE);
    write_atomic(&path, manifest.to_text().as_bytes())?;
    let _ = writeln!(
        out,
        "wrote {} meshes ({} points, {} cells each) and {}",
        grid,
        data[0].0.point_count(),
        data[0].0.cell_count(),
        path.display()
    );
    Ok(manifest)
}

/// Train, validation and test graphs of a manifest, normalized with
/// statistics of the train split.
pub struct LoadedDataset {
    pub dataset: GraphDataset,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn load_dataset(manifest: &Manifest) -> Result<LoadedDataset, CliError> {
    let train = manifest.indices(SplitSelector::One(Split::Train));
    if train.is_empty() {
        return Err(CliError::Usage("manifest has no train records".into()));
    }
    let graphs = (0..manifest.records.len())
        .map(|i| load_graph(manifest, i))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = GraphDataset::new(graphs, &train).map_err(|source| {
        let path = match &source {
            PreprocessError::TopologyMismatch { id, .. } => manifest
                .records
                .iter()
                .find(|r| &r.source_id == id)
                .map(|r| r.mesh_path.clone()),
            _ => None,
        };
        CliError::Preprocess {
            path: path.unwrap_or_default(),
            source,
        }
    })?;
    Ok(LoadedDataset {
        dataset,
        train,
        val: manifest.indices(SplitSelector::One(Split::Val)),
        test: manifest.indices(SplitSelector::One(Split::Test)),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub variant: Variant,
    pub epochs_run: usize,
    pub stop_reason: train::StopReason,
    pub final_train_loss: f64,
    /// Summary on the validation split, absent when it is empty.
    pub validation: Option<EvalSummary>,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let manifest = Manifest::load(&args.manifest)?;
    let data = load_dataset(&manifest)?;
    let mut spec = ModelSpec::new(args.variant, data.dataset.node_count(), args.seed);
    spec.dropout_p = args.dropout;
    if args.dropout_after_linear {
        spec.dropout_placement = DropoutPlacement::BeforeAndAfter;
    }
    let model = Model::new(spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let config = TrainConfig {
        learning_rate: args.lr,
        weight_decay: args.weight_decay,
        epochs: args.epochs,
        loss: args.loss,
        plateau_relative_tolerance: args.plateau_tolerance,
        seed: args.seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    let train_set = data.dataset.prepare_all(&data.train);
    let val_set = data.dataset.prepare_all(&data.val);
    log::info!(
        "training {} on {} graphs of {} nodes ({} parameters)",
        args.variant,
        train_set.len(),
        data.dataset.node_count(),
        model.parameter_count()
    );
    let (model, report) = train::train(model, &train_set, &val_set, &config)?;

    let checkpoint = Checkpoint {
        model,
        normalization: data.dataset.normalization.clone(),
    };
    let outcome = TrainOutcome {
        variant: args.variant,
        epochs_run: report.completed_epochs(),
        stop_reason: report.stop_reason,
        final_train_loss: report.epochs.last().map_or(f64::NAN, |e| e.train_loss),
        validation: report.final_validation.clone(),
    };
    create_dir(&args.out)?;
    write_atomic(
        &args.out.join(CHECKPOINT_FILE),
        checkpoint.to_json().as_bytes(),
    )?;
    write_atomic(&args.out.join(CURVE_FILE), report.curve_csv().as_bytes())?;
    write_atomic(&args.out.join(EVAL_FILE), &json(&outcome))?;

    let _ = writeln!(
        out,
        "{}: {} epochs ({:?}), final train loss {:.6e}",
        args.variant.display_name(),
        outcome.epochs_run,
        outcome.stop_reason,
        outcome.final_train_loss
    );
    if let Some(v) = &outcome.validation {
        let _ = writeln!(out, "validation split:");
        let _ = write!(out, "{}", v.table());
    }
    Ok(outcome)
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<train::Prediction, CliError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let mesh = load_mesh(&args.mesh)?;
    let id = args
        .mesh
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let meta = MeshMetadata::new(args.temperature, args.friction, id);
    let prediction = train::predict(&checkpoint.model, &checkpoint.normalization, &mesh, &meta)
        .map_err(|e| match e {
            TrainError::Nn(source) => CliError::Model {
                path: args.mesh.clone(),
                source,
            },
            TrainError::Preprocess(source) => CliError::Preprocess {
                path: args.mesh.clone(),
                source,
            },
            other => other.into(),
        })?;
    write_atomic(&args.out, write_vtk(&prediction.mesh).as_bytes())?;
    let _ = writeln!(
        out,
        "inference: {:.3} ms ({} surface nodes) -> {}",
        prediction.latency.as_secs_f64() * 1e3,
        prediction.surface_wear.len(),
        args.out.display()
    );
    Ok(prediction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub train: Option<TargetStats>,
    pub val: Option<TargetStats>,
    pub test: Option<TargetStats>,
    pub all: Option<TargetStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOutcome {
    pub split: String,
    pub summary: EvalSummary,
    /// Target statistics of every split, independent of the checkpoint.
    pub dataset: SplitStats,
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<EvaluateOutcome, CliError> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let manifest = Manifest::load(&args.manifest)?;
    let graphs = (0..manifest.records.len())
        .map(|i| load_graph(&manifest, i))
        .collect::<Result<Vec<_>, _>>()?;
    let selected = manifest.indices(args.split);
    if selected.is_empty() {
        return Err(CliError::Usage(format!(
            "manifest has no records in split '{}'",
            args.split.name()
        )));
    }
    let mut prepared = Vec::with_capacity(selected.len());
    for &i in &selected {
        checkpoint
            .model
            .check_node_count(graphs[i].node_count())
            .map_err(|source| CliError::Model {
                path: manifest.records[i].mesh_path.clone(),
                source,
            })?;
        prepared.push(PreparedGraph::new(&graphs[i], &checkpoint.normalization));
    }
    let summary = metrics::evaluate(&checkpoint.model, &prepared)?;

    let stats = |sel: SplitSelector| {
        metrics::target_stats(
            manifest
                .indices(sel)
                .into_iter()
                .filter_map(|i| graphs[i].wear.as_deref()),
        )
    };
    let outcome = EvaluateOutcome {
        split: args.split.name().into(),
        summary,
        dataset: SplitStats {
            train: stats(SplitSelector::One(Split::Train)),
            val: stats(SplitSelector::One(Split::Val)),
            test: stats(SplitSelector::One(Split::Test)),
            all: stats(SplitSelector::All),
        },
    };
    let _ = writeln!(
        out,
        "{} on split '{}' ({} meshes)",
        checkpoint.model.spec.variant.display_name(),
        outcome.split,
        selected.len()
    );
    let _ = write!(out, "{}", outcome.summary.table());
    let _ = writeln!(out, "dataset wear (Mean / Maximum):");
    for (name, s) in [
        ("train", &outcome.dataset.train),
        ("val", &outcome.dataset.val),
        ("test", &outcome.dataset.test),
        ("all", &outcome.dataset.all),
    ] {
        if let Some(s) = s {
            let _ = writeln!(
                out,
                "  {name:<5} {:>12.4} {:>12.4}",
                s.mean_wear, s.max_wear
            );
        }
    }
    if let Some(path) = &args.json {
        write_atomic(path, &json(&outcome))?;
    }
    Ok(outcome)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynth(a) => cmd_gen_synth(&a, out).map(drop),
        Command::Train(a) => cmd_train(&a, out).map(drop),
        Command::Predict(a) => cmd_predict(&a, out).map(drop),
        Command::Evaluate(a) => cmd_evaluate(&a, out).map(drop),
    }
}
