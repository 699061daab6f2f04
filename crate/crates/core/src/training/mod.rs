//! Optimization loops for every model family, with per-step metrics and
//! best/final checkpoints.

mod audit;
mod config;
mod steps;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use audit::TrainingSet;
pub use config::{OptimizerConfig, OptimizerKind, TrainConfig};
pub use steps::{
    byol_step, byol_step_loss, m2_labeled_step_loss, m2_per_class_generative,
    m2_unlabeled_step_loss, make_view_batch, scalar_f64, semi_batch_step, ssvae_step_loss,
    supervised_step_loss, vae_step_loss, GenBatch, Optim, SemiModel, StepLoss,
};

use crate::data::{DatasetSplit, RasterSketch};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, M2SizeSource};
use crate::models::layers::one_hot;
use crate::models::{
    images_to_tensor, images_to_target, load_pretrained, render_for, sample_noise,
    save_checkpoint, AnyModel, CheckpointHeader, Mode, ModelKind, ParamStore,
};
use crate::util::{derived_rng, json_hash, Rng};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub components: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub components: BTreeMap<String, f64>,
    pub seconds: f64,
}

/// Everything needed to reproduce and audit a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
    pub manifest_hash: String,
    pub label_fraction: f64,
    pub n_train: usize,
    pub n_train_labeled: usize,
    pub loss_weights: LossWeights,
    pub bce_reduction: String,
    pub pretrained_loaded: bool,
    pub epochs: Vec<EpochSummary>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub hidden_label_reads: usize,
}

pub struct TrainOutcome {
    pub model: AnyModel,
    pub store: ParamStore,
    pub header: CheckpointHeader,
    pub steps: Vec<StepRecord>,
    pub run: RunRecord,
}

/// Files written by a run into its output directory.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn metrics(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }
    pub fn epochs(&self) -> PathBuf {
        self.dir.join(EPOCHS_FILE)
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join(FINAL_CHECKPOINT)
    }
    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join(BEST_CHECKPOINT)
    }
    pub fn run(&self) -> PathBuf {
        self.dir.join(RUN_FILE)
    }
}

struct JsonLines {
    file: Option<std::io::BufWriter<std::fs::File>>,
}

impl JsonLines {
    fn create(path: Option<PathBuf>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
                Some(std::io::BufWriter::new(f))
            }
            None => None,
        };
        Ok(JsonLines { file })
    }

    fn push<T: Serialize>(&mut self, value: &T) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(value)?;
            writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| Error::Io {
                path: PathBuf::new(),
                source: e,
            })?;
        }
        Ok(())
    }
}

/// Endless shuffled stream over a fixed index set.
struct Cycler {
    items: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Cycler {
    fn new(items: Vec<usize>, mut rng: Rng) -> Self {
        let mut items = items;
        items.shuffle(&mut rng);
        Cycler { items, pos: 0, rng }
    }

    fn take(&mut self, n: usize) -> Vec<usize> {
        let n = n.min(self.items.len());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.items.len() {
                self.items.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.items[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn fill_loss_weights(cfg: &TrainConfig, set: &TrainingSet, n_labeled: usize) -> LossWeights {
    let mut w = cfg.loss_weights.clone();
    if w.n_train.is_none() {
        w.n_train = Some(match w.m2_n_source {
            M2SizeSource::Labeled => n_labeled.max(1),
            M2SizeSource::All => set.len().max(1),
        });
    }
    w
}

struct Context<'a> {
    cfg: &'a TrainConfig,
    set: &'a TrainingSet,
    rasters: Vec<RasterSketch>,
    weights: LossWeights,
    dtype: DType,
    device: Device,
    noise: Rng,
}

impl Context<'_> {
    fn gen_batch(&mut self, idx: &[usize], labeled: bool) -> Result<GenBatch> {
        let imgs: Vec<&RasterSketch> = idx.iter().map(|&i| &self.rasters[i]).collect();
        let x = images_to_tensor(&imgs, self.dtype, &self.device)?;
        let target = images_to_target(&imgs, self.dtype, &self.device)?;
        let eps = sample_noise(&[idx.len(), self.cfg.model.latent_dim], &x, &mut self.noise)?;
        let one_hot = if labeled {
            Some(self.one_hot(idx)?)
        } else {
            None
        };
        Ok(GenBatch {
            x,
            target,
            eps,
            one_hot,
        })
    }

    fn one_hot(&self, idx: &[usize]) -> Result<Tensor> {
        let labels = idx
            .iter()
            .map(|&i| self.set.label(i))
            .collect::<Result<Vec<_>>>()?;
        one_hot(&labels, self.cfg.model.n_classes, self.dtype, &self.device)
    }
}

/// Train `cfg.model` on `split.train`. With `out_dir`, writes per-step and
/// per-epoch JSON lines, `final` and `best` checkpoints and a run record.
pub fn train(split: &DatasetSplit, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_labels(split.label_fraction, split.n_train_categories)?;
    let set = TrainingSet::new(&split.train);
    if set.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    let labeled = set.labeled_indices();
    let unlabeled = set.unlabeled_indices();
    let kind = cfg.model.model_kind;
    if matches!(kind, ModelKind::M2 | ModelKind::Ssvae | ModelKind::Supervised) && labeled.is_empty() {
        return Err(Error::Config(format!("{kind} needs at least one labeled record")));
    }
    let weights = fill_loss_weights(cfg, &set, labeled.len());
    let config_hash = json_hash(cfg)?;
    let files = out_dir.map(|d| RunFiles { dir: d.to_path_buf() });

    let dtype = DType::F32;
    let device = Device::Cpu;
    let store = ParamStore::new(dtype, &device, cfg.seed);
    let model = cfg.model.build(&store)?;
    let mut header = CheckpointHeader::new(&cfg.model, &config_hash, cfg.seed, &split.manifest_hash);
    if cfg.model.backbone.pretrained {
        match cfg.model.backbone.weights.as_deref().map(Path::new) {
            Some(path) if path.exists() => {
                let n = load_pretrained(path, &store, cfg.model.encoder_prefix())?;
                log::info!("loaded {n} pretrained tensors from {}", path.display());
                if let AnyModel::Byol(b) = &model {
                    b.copy_online_to_target()?;
                }
                header.pretrained_loaded = true;
            }
            other => log::warn!(
                "pretrained weights {:?} not available; training from random initialization",
                other
            ),
        }
    }
    let vars: Vec<Var> = match &model {
        AnyModel::Byol(b) => b.online_vars(),
        _ => store.trainable(&[]).into_iter().map(|(_, v)| v).collect(),
    };
    let mut opt = Optim::new(vars, &cfg.optimizer)?;

    let rasters = if kind == ModelKind::Byol {
        Vec::new()
    } else {
        let sketches: Vec<_> = (0..set.len()).map(|i| set.sketch(i)).collect();
        render_for(&sketches, &cfg.model)
    };
    let mut ctx = Context {
        cfg,
        set: &set,
        rasters,
        weights,
        dtype,
        device,
        noise: derived_rng(cfg.seed, "noise"),
    };

    // The epoch is driven by the unlabeled pool for semi-supervised models
    // (labeled batches cycle alongside), otherwise by every usable record.
    let semi = matches!(kind, ModelKind::M2 | ModelKind::Ssvae);
    let (driver, driver_batch, driver_labeled) = match kind {
        ModelKind::Vae | ModelKind::Byol => ((0..set.len()).collect::<Vec<_>>(), cfg.batch_size, false),
        ModelKind::Supervised => (labeled.clone(), cfg.batch_size, true),
        ModelKind::M2 | ModelKind::Ssvae if unlabeled.is_empty() => {
            (labeled.clone(), cfg.labeled_batch_size, true)
        }
        ModelKind::M2 | ModelKind::Ssvae => (unlabeled.clone(), cfg.batch_size, false),
    };
    let mut labeled_stream = (semi && !driver_labeled)
        .then(|| Cycler::new(labeled.clone(), derived_rng(cfg.seed, "labeled-stream")));

    let mut metrics = JsonLines::create(files.as_ref().map(|f| f.metrics()))?;
    let mut epoch_log = JsonLines::create(files.as_ref().map(|f| f.epochs()))?;
    let mut steps_out = Vec::new();
    let mut summaries: Vec<EpochSummary> = Vec::new();
    let mut best = (0usize, f64::INFINITY);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order = driver.clone();
        order.shuffle(&mut derived_rng(cfg.seed, &format!("order/{epoch}")));
        let mut sum = 0.0;
        let mut comp_sum: BTreeMap<String, f64> = BTreeMap::new();
        let n_steps = order.len().div_ceil(driver_batch);
        for (step, idx) in order.chunks(driver_batch).enumerate() {
            let loss = match &model {
                AnyModel::Byol(b) => {
                    let sketches: Vec<_> = idx.iter().map(|&i| set.sketch(i)).collect();
                    byol_step(
                        b,
                        &mut opt,
                        &sketches,
                        &cfg.augmentation,
                        cfg.seed,
                        &format!("views/{epoch}/{step}"),
                    )?
                }
                other => {
                    let loss = match other {
                        AnyModel::Vae(m) => {
                            let b = ctx.gen_batch(idx, false)?;
                            vae_step_loss(m, &b, &ctx.weights, Mode::Train)?
                        }
                        AnyModel::Supervised(m) => {
                            let imgs: Vec<&RasterSketch> = idx.iter().map(|&i| &ctx.rasters[i]).collect();
                            let x = images_to_tensor(&imgs, dtype, &ctx.device)?;
                            let y = ctx.one_hot(idx)?;
                            supervised_step_loss(m, &x, &y, Mode::Train)?
                        }
                        AnyModel::M2(_) | AnyModel::Ssvae(_) => {
                            let semi_model = match other {
                                AnyModel::M2(m) => SemiModel::M2(m),
                                AnyModel::Ssvae(m) => SemiModel::Ssvae(m),
                                _ => unreachable!(),
                            };
                            let (lab, unlab) = if driver_labeled {
                                (Some(ctx.gen_batch(idx, true)?), None)
                            } else {
                                let lab_idx = labeled_stream.as_mut().unwrap().take(cfg.labeled_batch_size);
                                (Some(ctx.gen_batch(&lab_idx, true)?), Some(ctx.gen_batch(idx, false)?))
                            };
                            semi_batch_step(semi_model, lab.as_ref(), unlab.as_ref(), &ctx.weights, Mode::Train)?
                        }
                        AnyModel::Byol(_) => unreachable!(),
                    };
                    let (value, _) = loss.values()?;
                    if !value.is_finite() {
                        return Err(non_finite(epoch, step, &loss));
                    }
                    opt.step(&loss.total)?;
                    loss
                }
            };
            let (value, components) = loss.values()?;
            if !value.is_finite() {
                return Err(non_finite(epoch, step, &loss));
            }
            sum += value;
            for (k, v) in &components {
                *comp_sum.entry(k.clone()).or_default() += v;
            }
            let record = StepRecord {
                epoch,
                step,
                loss: value,
                components,
            };
            metrics.push(&record)?;
            steps_out.push(record);
        }
        let mean_loss = sum / n_steps as f64;
        let summary = EpochSummary {
            epoch,
            steps: n_steps,
            mean_loss,
            components: comp_sum.into_iter().map(|(k, v)| (k, v / n_steps as f64)).collect(),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: mean loss {mean_loss:.6} over {n_steps} steps");
        epoch_log.push(&summary)?;
        summaries.push(summary);
        header.epoch = epoch;
        header.train_loss = Some(mean_loss);
        if mean_loss < best.1 {
            best = (epoch, mean_loss);
            if let Some(f) = &files {
                save_checkpoint(&f.best_checkpoint(), &store, &header)?;
            }
        }
    }
    if let Some(f) = &files {
        save_checkpoint(&f.final_checkpoint(), &store, &header)?;
    }
    let run = RunRecord {
        config: cfg.clone(),
        config_hash,
        seed: cfg.seed,
        manifest_hash: split.manifest_hash.clone(),
        label_fraction: split.label_fraction,
        n_train: set.len(),
        n_train_labeled: labeled.len(),
        loss_weights: ctx.weights.clone(),
        bce_reduction: header.bce_reduction.clone(),
        pretrained_loaded: header.pretrained_loaded,
        epochs: summaries,
        best_epoch: best.0,
        best_loss: best.1,
        hidden_label_reads: set.hidden_reads(),
    };
    if let Some(f) = &files {
        crate::util::write_json(&f.run(), &run)?;
    }
    Ok(TrainOutcome {
        model,
        store,
        header,
        steps: steps_out,
        run,
    })
}

fn non_finite(epoch: usize, step: usize, loss: &StepLoss) -> Error {
    let detail = match loss.values() {
        Ok((total, parts)) => format!("loss {total}, components {parts:?}"),
        Err(e) => e.to_string(),
    };
    Error::NonFinite { epoch, step, detail }
}
