use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::data::{Dataset, Inputs};
use super::metrics::{confusion_metrics, roc_auc, Score, THRESHOLD};
use super::report::MetricsReport;
use crate::cohort::{CohortManifest, Modality, Split, Task};
use crate::error::{Error, Result};
use crate::models::{save_checkpoint, BuildOptions, Checkpoint, CheckpointMeta, Model};
use crate::nn::{one_hot, softmax_cross_entropy, Mode, Tensor};

pub const LOG_HEADER: &str = "epoch,train_loss,val_acc,val_auc";
const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    /// NaN when the validation split holds a single class.
    #[serde(with = "super::nonfinite")]
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub epoch: usize,
    pub path: PathBuf,
    #[serde(with = "super::nonfinite")]
    pub acc: f64,
    #[serde(with = "super::nonfinite")]
    pub auc: f64,
}

impl CheckpointScore {
    /// `ACC + AUC`, with an undefined AUC counted as 0.
    pub fn selection_score(&self) -> f64 {
        self.acc + if self.auc.is_finite() { self.auc } else { 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub checkpoints: Vec<CheckpointScore>,
    pub best: CheckpointScore,
}

/// Highest `ACC + AUC`; equal sums go to the later epoch.
pub fn select_best_checkpoint(candidates: &[CheckpointScore]) -> Option<&CheckpointScore> {
    candidates.iter().max_by(|a, b| {
        a.selection_score()
            .total_cmp(&b.selection_score())
            .then(a.epoch.cmp(&b.epoch))
    })
}

/// Positive-class probabilities in infer mode.
pub fn predict(model: &mut Model, data: &Dataset) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let p = model.forward(&data.batch(chunk)?, Mode::Infer, &mut rng)?;
        out.extend(p.data().chunks(2).map(|r| r[1] as f64));
    }
    Ok(out)
}

pub fn scores(model: &mut Model, data: &Dataset) -> Result<Vec<Score>> {
    Ok(predict(model, data)?
        .into_iter()
        .zip(&data.classes)
        .map(|(p, &c)| (p, c == 1))
        .collect())
}

/// One optimizer step on a batch; returns the mean loss.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    x: &Tensor<f32>,
    classes: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    model.store_mut().zero_grads();
    let logits = model.forward_logits(x, Mode::Train, rng)?;
    let (loss, grad) = softmax_cross_entropy(&logits, &one_hot(classes, 2)?)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite training loss {loss}")));
    }
    model.backward(&grad)?;
    adam.step(model.store_mut())?;
    Ok(loss as f64)
}

fn check_split(d: &Dataset, what: &str, need_both: bool) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Data(format!("{what} split has no samples for this task")));
    }
    if need_both && d.class_counts().contains(&0) {
        return Err(Error::Data(format!(
            "{what} split lacks one class (counts {:?})",
            d.class_counts()
        )));
    }
    Ok(())
}

fn checkpoint_meta(cfg: &TrainConfig, epoch: usize) -> CheckpointMeta {
    CheckpointMeta {
        epoch,
        seed: cfg.seed,
        task: Some(cfg.task),
        modality: (!cfg.arch.is_fusion()).then_some(cfg.modality),
    }
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch_{epoch:04}.hfn")
}

/// Runs the training schedule on an already built model. With `out_dir`
/// set, writes `train_log.csv`, checkpoints and `best.json` there.
pub fn train_model(
    cfg: &TrainConfig,
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_split(train, "train", true)?;
    check_split(val, "val", false)?;
    let mut log_file = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join("train_log.csv");
            let mut f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&p, e))?;
            Some((f, p))
        }
        None => None,
    };
    let mut adam = Adam::new(cfg.adam());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);
    let bs = cfg.batch_size();
    let save_at = cfg.checkpoint_epochs();

    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let x = train.batch(chunk)?;
            let classes: Vec<usize> = chunk.iter().map(|&i| train.classes[i]).collect();
            let loss = train_step(model, &mut adam, &x, &classes, &mut dropout_rng).map_err(|e| match e {
                Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
            total += loss * chunk.len() as f64;
        }
        let s = scores(model, val)?;
        let acc = confusion_metrics(&s, THRESHOLD)?.acc;
        let auc = roc_auc(&s).map(|r| r.auc).unwrap_or(f64::NAN);
        let entry = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_acc: acc,
            val_auc: auc,
        };
        if let Some((f, p)) = log_file.as_mut() {
            writeln!(
                f,
                "{},{},{},{}",
                entry.epoch, entry.train_loss, entry.val_acc, entry.val_auc
            )
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&*p, e))?;
        }
        on_epoch(&entry);
        log.push(entry);
        if save_at.contains(&epoch) {
            let path = match out_dir {
                Some(d) => {
                    let p = d.join(checkpoint_name(epoch));
                    save_checkpoint(model, &checkpoint_meta(cfg, epoch), &p)?;
                    p
                }
                None => PathBuf::new(),
            };
            checkpoints.push(CheckpointScore { epoch, path, acc, auc });
        }
    }
    let best = select_best_checkpoint(&checkpoints)
        .cloned()
        .expect("final epoch is always saved");
    if let Some(d) = out_dir {
        let p = d.join("best.json");
        let text = serde_json::to_string_pretty(&best).map_err(|e| Error::Format(e.to_string()))? + "\n";
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(TrainOutcome { log, checkpoints, best })
}

/// Loads the manifest's train and val splits, builds the configured
/// architecture and trains it.
pub fn train(
    cfg: &TrainConfig,
    manifest: &CohortManifest,
    base: &Path,
    out_dir: &Path,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Model, TrainOutcome)> {
    cfg.validate()?;
    let inputs = Inputs::for_arch(cfg.arch, cfg.modality);
    let train_set = Dataset::load(manifest, base, Split::Train, cfg.task, inputs)?;
    let val_set = Dataset::load(manifest, base, Split::Val, cfg.task, inputs)?;
    check_split(&train_set, "train", true)?;
    check_split(&val_set, "val", false)?;
    let opts = BuildOptions {
        dropout_p: cfg.dropout_p,
        seed: cfg.seed,
    };
    let mut model = Model::build(cfg.arch, cfg.width, train_set.grid, opts)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let p = out_dir.join("config.toml");
    std::fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))?;
    let outcome = train_model(cfg, &mut model, &train_set, &val_set, Some(out_dir), on_epoch)?;
    Ok((model, outcome))
}

pub fn checkpoint_inputs(ck: &Checkpoint) -> Inputs {
    Inputs::for_arch(ck.model.arch(), ck.meta.modality.unwrap_or(Modality::MRI))
}

/// Evaluates on `split` of `manifest` with the labels of `task`.
pub fn evaluate(
    ck: &mut Checkpoint,
    manifest: &CohortManifest,
    base: &Path,
    split: Split,
    task: Task,
) -> Result<MetricsReport> {
    let data = Dataset::load(manifest, base, split, task, checkpoint_inputs(ck))?;
    if data.is_empty() {
        return Err(Error::Data(format!("{split} split has no {task} samples")));
    }
    if data.grid != ck.model.input().grid {
        return Err(Error::shape(format!(
            "volumes are {:?} but the model expects {:?}",
            data.grid,
            ck.model.input().grid
        )));
    }
    evaluate_dataset(&mut ck.model, &data, task)
}

pub fn evaluate_dataset(model: &mut Model, data: &Dataset, task: Task) -> Result<MetricsReport> {
    let s = scores(model, data)?;
    Ok(MetricsReport {
        task,
        arch: model.arch(),
        name: None,
        n: s.len(),
        confusion: confusion_metrics(&s, THRESHOLD)?,
        roc: roc_auc(&s)?,
    })
}

/// Applies a model trained on NL vs AD to an MCI task's test split without
/// retraining: pMCI takes the disease output, NL or sMCI the control output.
pub fn cross_task_evaluate(
    ck: &mut Checkpoint,
    manifest: &CohortManifest,
    base: &Path,
    task: Task,
) -> Result<MetricsReport> {
    if let Some(t) = ck.meta.task {
        if t != Task::NlAd {
            return Err(Error::Task(format!(
                "cross-task evaluation needs an nl_ad model, this one was trained on {t}"
            )));
        }
    }
    let data = Dataset::load(manifest, base, Split::Test, task, checkpoint_inputs(ck))?;
    let [neg, pos] = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::Task(format!(
            "test split maps to {neg} {} and {pos} {} samples; both classes are required",
            task.negative(),
            task.positive()
        )));
    }
    evaluate(ck, manifest, base, Split::Test, task)
}
