use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::config::resolve;
use super::index::{contact_sheet, load_records_by_id, QueryOutput, SketchIndex};
use crate::data::{build_manifest, scan_catalog, synth, DatasetSplit, Manifest, SplitName, SplitParams};
use crate::error::{Error, Result};
use crate::models::render_for;
use crate::retrieval::{evaluate, project_2d, write_projection, Embedder, EmbeddingMatrix, Metric, TsneConfig};
use crate::training::{train, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "sketchssl", version, about = "Train sketch encoders and evaluate them by retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON configuration file; unspecified keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set model.latent_dim=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic stroke dataset in NDJSON form.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build a train / known-test / unknown-test manifest.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a manifest's training records.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write embeddings of one split.
    Embed {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// kNN accuracy and mAP@5 on the known and unknown test sets.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate even if the checkpoint was trained on another manifest.
        #[arg(long)]
        force: bool,
    },
    /// t-SNE projection of a random subset of classes.
    Visualize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Retrieve the sketches closest to an edge-map image.
    Query {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Embeddings file written by `embed` with the same checkpoint.
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Requires `--data-dir` to render the retrieved sketches.
        #[arg(long)]
        contact_sheet: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_categories: usize,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_categories: synth::CATEGORY_NAMES.len(),
            per_class: 1100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub split: SplitName,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            split: SplitName::TestKnown,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualizeConfig {
    pub n_classes: usize,
    pub tsne: TsneConfig,
}

impl Default for VisualizeConfig {
    fn default() -> Self {
        VisualizeConfig {
            n_classes: 8,
            tsne: TsneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub k: usize,
    pub metric: Metric,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            k: 5,
            metric: Metric::Euclidean,
        }
    }
}

fn require(path: &Path, flag: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{flag}: {} does not exist", path.display())))
    }
}

fn load_split(manifest: &Path, data_dir: &Path) -> Result<DatasetSplit> {
    require(manifest, "--manifest")?;
    require(data_dir, "--data-dir")?;
    DatasetSplit::load(&Manifest::load(manifest)?, data_dir)
}

fn load_embedder(checkpoint: &Path) -> Result<Embedder> {
    require(checkpoint, "--checkpoint")?;
    Embedder::from_checkpoint(checkpoint)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg_of = |c: &ConfigArgs| (c.config.clone(), c.set.clone());
    match cli.command {
        Command::Synth { cfg, out_dir } => {
            let (path, sets) = cfg_of(&cfg);
            let c: SynthConfig = resolve(path.as_deref(), &sets)?;
            synth::write_dataset(&out_dir, c.n_categories, c.per_class, c.seed)?;
            println!("wrote {} categories x {} sketches to {}", c.n_categories, c.per_class, out_dir.display());
        }
        Command::Prepare { cfg, data_dir, out } => {
            let (path, sets) = cfg_of(&cfg);
            let params: SplitParams = resolve(path.as_deref(), &sets)?;
            require(&data_dir, "--data-dir")?;
            let manifest = build_manifest(&scan_catalog(&data_dir)?, &params)?;
            manifest.save(&out)?;
            println!("manifest {} ({} records) -> {}", manifest.manifest_hash, manifest.records.len(), out.display());
        }
        Command::Train {
            cfg,
            manifest,
            data_dir,
            out_dir,
        } => {
            let (path, sets) = cfg_of(&cfg);
            let c: TrainConfig = resolve(path.as_deref(), &sets)?;
            let split = load_split(&manifest, &data_dir)?;
            let outcome = train(&split, &c, Some(&out_dir))?;
            println!(
                "trained {} for {} epochs, best loss {:.6} at epoch {} -> {}",
                c.model.model_kind,
                c.epochs,
                outcome.run.best_loss,
                outcome.run.best_epoch,
                out_dir.display()
            );
        }
        Command::Embed {
            cfg,
            checkpoint,
            manifest,
            data_dir,
            out,
        } => {
            let (path, sets) = cfg_of(&cfg);
            let c: EmbedConfig = resolve(path.as_deref(), &sets)?;
            let embedder = load_embedder(&checkpoint)?;
            let split = load_split(&manifest, &data_dir)?;
            let name = serde_json::to_value(c.split)?.as_str().unwrap_or_default().to_string();
            let em = embedder.extract(split.records(c.split), &name)?;
            em.save(&out)?;
            println!("{} x {} embeddings -> {}", em.len(), em.dim(), out.display());
        }
        Command::Evaluate {
            cfg,
            checkpoint,
            manifest,
            data_dir,
            out,
            force,
        } => {
            let (path, sets) = cfg_of(&cfg);
            let c: EvalConfig = resolve(path.as_deref(), &sets)?;
            let embedder = load_embedder(&checkpoint)?;
            let split = load_split(&manifest, &data_dir)?;
            let report = evaluate(&embedder, &split, c.metric, force)?;
            crate::util::write_json(&out, &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Visualize {
            cfg,
            embeddings,
            out,
            png,
        } => {
            let (path, sets) = cfg_of(&cfg);
            let c: VisualizeConfig = resolve(path.as_deref(), &sets)?;
            require(&embeddings, "--embeddings")?;
            let em = EmbeddingMatrix::load(&embeddings)?;
            let rows = project_2d(&em, c.n_classes, &c.tsne)?;
            write_projection(&rows, &out, png.as_deref())?;
            println!("{} projected points -> {}", rows.len(), out.display());
        }
        Command::Query {
            cfg,
            checkpoint,
            index,
            image,
            out,
            contact_sheet: sheet,
            data_dir,
        } => {
            let (path, sets) = cfg_of(&cfg);
            let c: QueryConfig = resolve(path.as_deref(), &sets)?;
            let embedder = load_embedder(&checkpoint)?;
            require(&index, "--index")?;
            let idx = SketchIndex::new(embedder, EmbeddingMatrix::load(&index)?, c.metric)?;
            let (raster, result) = idx.query_image(&image, c.k)?;
            let output = QueryOutput::from(&result);
            let text = serde_json::to_string_pretty(&output)?;
            if let Some(o) = &out {
                crate::util::write_file(o, format!("{text}\n").as_bytes())?;
            }
            println!("{text}");
            if let Some(sheet_path) = sheet {
                let dir = data_dir.ok_or_else(|| {
                    Error::Config("--contact-sheet needs --data-dir to render the hits".into())
                })?;
                let records = load_records_by_id(&dir, &result.ranked_ids)?;
                let sketches: Vec<_> = records.iter().map(|r| &r.sketch).collect();
                let hits = render_for(&sketches, idx.spec());
                if let Some(parent) = sheet_path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                contact_sheet(&raster, &hits).save(&sheet_path)?;
            }
        }
    }
    Ok(())
}

/// Parse `args`, run the command and map the outcome to an exit status:
/// 0 on success, 1 for user errors, 2 for internal failures.
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
    match std::panic::catch_unwind(move || run(cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
        Err(_) => 2,
    }
}
