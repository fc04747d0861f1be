use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::metrics::{class_weights, percentile_report, roc_auc, BinReport};
use crate::autograd::{Adam, AdamConfig, Graph, ParamStore, Rng, Stream, Tensor};
use crate::data::{
    adding_accuracy, bucket_batches, gen_adding, load_labeled, read_adding, split, AddingInstance,
    LabeledSequence, Split, Vocabulary, ADDING_MAGIC, ADDING_TOLERANCE,
};
use crate::exec::Exec;
use crate::model::{Checkpoint, ChordMixerNet, HeadKind, Input, InputKind, NetConfig, TrainState};
use crate::{Error, Result};

/// Train, validation and test shares.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.2, 0.1];

/// Log-normal length model of the adding problem.
const ADDING_MU: f64 = 0.5;
const ADDING_SIGMA: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Adding problem generated in-process from the run seed.
    Adding { lambda: f64, count: usize },
    /// An `ADD1` file or a `label<TAB>symbols` text file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub source: DataSource,
    pub track_size: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_every: usize,
    /// Defaults to the longest sequence in the dataset.
    pub n_max: Option<usize>,
    pub head: HeadKind,
    pub eval_bins: usize,
    /// Global gradient-norm clipping; off when `None`.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    /// Adding-problem hyperparameters of the reference setup
    /// (h = 128, track size 16, avg head, lr 1e-4, batch 2).
    fn default() -> Self {
        Self {
            source: DataSource::Adding {
                lambda: 200.0,
                count: 60_000,
            },
            track_size: 16,
            hidden: 128,
            dropout: 0.0,
            lr: 1e-4,
            batch_size: 2,
            epochs: 10,
            seed: 0,
            eval_every: 1,
            n_max: None,
            head: HeadKind::Avg,
            eval_bins: 10,
            clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.track_size > 0, "track-size must be positive"),
            (self.hidden > 0, "hidden must be positive"),
            (self.lr >= 0.0 && self.lr.is_finite(), "lr must be finite and non-negative"),
            (self.batch_size > 0, "batch-size must be positive"),
            (self.epochs > 0, "epochs must be positive"),
            (self.eval_every > 0, "eval-every must be positive"),
            (self.eval_bins > 0, "eval-bins must be positive"),
            ((0.0..1.0).contains(&self.dropout), "dropout must be in [0, 1)"),
            (self.n_max.is_none_or(|n| n > 0), "n-max must be positive"),
            (self.clip.is_none_or(|c| c > 0.0), "clip must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config(msg.to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskData {
    Adding(Vec<AddingInstance>),
    Labeled {
        data: Vec<LabeledSequence>,
        vocab: Vocabulary,
    },
}

/// Generates or reads the dataset named by `source`.
pub fn load_task(source: &DataSource, seed: u64) -> Result<TaskData> {
    match source {
        DataSource::Adding { lambda, count } => {
            let mut rng = Rng::stream(seed, Stream::DataGen);
            Ok(TaskData::Adding(gen_adding(
                *count,
                *lambda,
                ADDING_MU,
                ADDING_SIGMA,
                &mut rng,
            )?))
        }
        DataSource::File(path) => {
            let head = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            if head.starts_with(ADDING_MAGIC) {
                Ok(TaskData::Adding(read_adding(path)?))
            } else {
                let (data, vocab) = load_labeled(path)?;
                if data.is_empty() {
                    return Err(Error::Format {
                        kind: "labeled",
                        path: path.clone(),
                        msg: "no sequences".into(),
                    });
                }
                Ok(TaskData::Labeled { data, vocab })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Real(f64),
    Class(usize),
}

/// A dataset turned into network inputs, split and weighted.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub inputs: Vec<Input>,
    pub targets: Vec<Target>,
    pub lengths: Vec<usize>,
    /// `None` for regression.
    pub n_classes: Option<usize>,
    pub vocab: Option<Vocabulary>,
    pub split: Split,
    /// Per-class weights from the training split (classification only).
    pub class_weights: Vec<f64>,
}

impl Prepared {
    pub fn max_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(1)
    }

    pub fn split_indices(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.split.train),
            "val" => Ok(&self.split.val),
            "test" => Ok(&self.split.test),
            other => Err(Error::Config(format!(
                "unknown split '{other}' (expected train, val or test)"
            ))),
        }
    }
}

/// Splits with the run seed (stratified for classification) and, when a
/// vocabulary is given, re-encodes symbols through it.
pub fn prepare(task: TaskData, seed: u64, vocab_override: Option<&[char]>) -> Result<Prepared> {
    let mut rng = Rng::stream(seed, Stream::Split);
    match task {
        TaskData::Adding(instances) => {
            let split = split(instances.len(), SPLIT_FRACTIONS, None, &mut rng)?;
            Ok(Prepared {
                lengths: instances.iter().map(AddingInstance::len).collect(),
                inputs: instances.iter().map(AddingInstance::to_input).collect(),
                targets: instances.iter().map(|i| Target::Real(i.y)).collect(),
                n_classes: None,
                vocab: None,
                split,
                class_weights: Vec::new(),
            })
        }
        TaskData::Labeled { mut data, vocab } => {
            let vocab = match vocab_override {
                Some(chars) => {
                    let fixed = Vocabulary::from_chars(chars.to_vec());
                    for seq in &mut data {
                        seq.symbols = fixed.encode(&vocab.decode(&seq.symbols))?;
                    }
                    fixed
                }
                None => vocab,
            };
            let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
            let n_classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
            let split = split(data.len(), SPLIT_FRACTIONS, Some(&labels), &mut rng)?;
            let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
            Ok(Prepared {
                lengths: data.iter().map(|s| s.symbols.len()).collect(),
                targets: labels.iter().map(|&l| Target::Class(l)).collect(),
                inputs: data.into_iter().map(|s| Input::Symbols(s.symbols)).collect(),
                n_classes: Some(n_classes),
                vocab: Some(vocab),
                class_weights: class_weights(&train_labels, n_classes),
                split,
            })
        }
    }
}

fn loss_node(g: &mut Graph, pred: crate::autograd::NodeId, target: Target, weights: &[f64]) -> Result<crate::autograd::NodeId> {
    match target {
        Target::Real(y) => g.mse(pred, &Tensor::vector(vec![y])),
        Target::Class(c) => g.weighted_cross_entropy(pred, c, weights[c]),
    }
}

/// Metrics of one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub loss: f64,
    /// Tolerance accuracy for regression, top-1 accuracy for classification.
    pub accuracy: f64,
    /// Binary classification only.
    pub roc_auc: Option<f64>,
    pub percentiles: Vec<BinReport>,
}

/// Inference-mode evaluation of `indices`, one graph per instance.
pub fn evaluate(net: &ChordMixerNet, data: &Prepared, indices: &[usize], n_bins: usize, exec: Exec) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::UndefinedMetric("evaluation of an empty split".into()));
    }
    let outputs = exec.map(indices.len(), |k| -> Result<(Vec<f64>, f64)> {
        let i = indices[k];
        let mut g = Graph::new();
        let pred = net.forward(&mut g, &data.inputs[i], false, None)?;
        let loss = loss_node(&mut g, pred, data.targets[i], &data.class_weights)?;
        Ok((g.value(pred).data().to_vec(), g.value(loss).data()[0]))
    });
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    let loss = outputs.iter().map(|(_, l)| l).sum::<f64>() / indices.len() as f64;
    let lengths: Vec<usize> = indices.iter().map(|&i| data.lengths[i]).collect();

    // `local` indexes into `indices` / `outputs`.
    let correct: Vec<bool> = indices
        .iter()
        .zip(&outputs)
        .map(|(&i, (pred, _))| match data.targets[i] {
            Target::Real(y) => (y - pred[0]).abs() < ADDING_TOLERANCE,
            Target::Class(c) => argmax(pred) == c,
        })
        .collect();
    let accuracy = match data.n_classes {
        None => {
            let preds: Vec<f64> = outputs.iter().map(|(p, _)| p[0]).collect();
            let targets: Vec<f64> = indices
                .iter()
                .map(|&i| match data.targets[i] {
                    Target::Real(y) => y,
                    Target::Class(_) => unreachable!(),
                })
                .collect();
            adding_accuracy(&preds, &targets)?
        }
        Some(_) => correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
    };
    let roc = match data.n_classes {
        Some(2) => {
            let scores: Vec<f64> = outputs.iter().map(|(p, _)| p[1] - p[0]).collect();
            let labels: Vec<bool> = indices
                .iter()
                .map(|&i| data.targets[i] == Target::Class(1))
                .collect();
            roc_auc(&scores, &labels).ok()
        }
        _ => None,
    };
    let percentiles = percentile_report(&lengths, n_bins, |bin| {
        Ok(bin.iter().filter(|&&l| correct[l]).count() as f64 / bin.len() as f64)
    })?;
    Ok(EvalReport {
        loss,
        accuracy,
        roc_auc: roc,
        percentiles,
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// `train` (running loss of the epoch), `val`, or `final/<split>` for the
    /// selected model after training.
    pub split: String,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_auc: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub percentiles: Vec<BinReport>,
    /// Left out of the JSON stream, which must be reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl MetricsRecord {
    pub fn from_eval(epoch: usize, split: impl Into<String>, report: EvalReport, wall_time_s: f64) -> Self {
        Self {
            epoch,
            split: split.into(),
            loss: report.loss,
            accuracy: Some(report.accuracy),
            roc_auc: report.roc_auc,
            percentiles: report.percentiles,
            wall_time_s,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

pub struct Trainer {
    config: TrainConfig,
    data: Prepared,
    net: ChordMixerNet,
    adam: Adam,
    epochs_done: usize,
    best_val_loss: f64,
    best_epoch: usize,
    best_params: ParamStore,
    exec: Exec,
}

pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub best_epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Prepared) -> Result<Self> {
        config.validate()?;
        let n_max = config.n_max.unwrap_or_else(|| data.max_len());
        if data.max_len() > n_max {
            return Err(Error::Length {
                len: data.max_len(),
                n_max,
            });
        }
        let (input, out_dim) = match (&data.vocab, data.n_classes) {
            (Some(v), Some(c)) => (InputKind::Symbols { vocab: v.len() }, c),
            _ => (InputKind::Real { channels: 2 }, 1),
        };
        let mut net_cfg = NetConfig::with_track_size(input, config.track_size, config.hidden, n_max, out_dim);
        net_cfg.head = config.head;
        net_cfg.dropout = config.dropout;
        net_cfg.seed = config.seed;
        let net = ChordMixerNet::new(net_cfg)?;
        let adam = Adam::new(AdamConfig::new(config.lr), net.params());
        let best_params = net.params().clone();
        Ok(Self {
            config,
            data,
            net,
            adam,
            epochs_done: 0,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            best_params,
            exec: Exec::default(),
        })
    }

    /// Continues from a `last` checkpoint (with training state) and, if
    /// available, the matching `best` checkpoint.
    pub fn resume(config: TrainConfig, data: Prepared, last: &Checkpoint, best: Option<&Checkpoint>) -> Result<Self> {
        let mut trainer = Self::new(config, data)?;
        let state = last
            .state
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint has no training state".into()))?;
        if last.net.config() != trainer.net.config() {
            return Err(Error::Config(
                "checkpoint network does not match the training configuration".into(),
            ));
        }
        trainer.net = last.net.clone();
        trainer.adam = Adam::from_state(
            AdamConfig::new(trainer.config.lr),
            state.adam_step,
            state.m.clone(),
            state.v.clone(),
        );
        trainer.epochs_done = state.epochs_done as usize;
        trainer.best_val_loss = state.best_val_loss;
        trainer.best_params = best.map_or_else(|| last.net.params().clone(), |b| b.net.params().clone());
        Ok(trainer)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn net(&self) -> &ChordMixerNet {
        &self.net
    }

    pub fn data(&self) -> &Prepared {
        &self.data
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Trains one epoch and returns its records (running train loss, plus
    /// validation metrics on evaluation epochs).
    pub fn run_epoch(&mut self) -> Result<Vec<MetricsRecord>> {
        let start = Instant::now();
        let epoch = self.epochs_done;
        let seed = self.config.seed;
        let mut shuffle = Rng::stream(seed, Stream::Shuffle { epoch });
        let mut dropout = Rng::stream(seed, Stream::Dropout { epoch });

        let train = &self.data.split.train;
        let lengths: Vec<usize> = train
            .iter()
            .map(|&i| self.net.effective_len(self.data.lengths[i]))
            .collect();
        let batches = bucket_batches(&lengths, self.config.batch_size, &mut shuffle)?;

        let mut loss_sum = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let members: Vec<usize> = batch.iter().map(|&k| train[k]).collect();
            let inputs: Vec<&Input> = members.iter().map(|&i| &self.data.inputs[i]).collect();
            let mut g = Graph::new();
            let out = self
                .net
                .forward_batch(&mut g, &inputs, true, Some(&mut dropout), false)?;
            let mut total = None;
            for (&i, &pred) in members.iter().zip(&out.predictions) {
                let l = loss_node(&mut g, pred, self.data.targets[i], &self.data.class_weights)?;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l)?,
                });
            }
            let total = total.expect("non-empty batch");
            let batch_loss = g.value(total).data()[0];
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            let mut grads = g.backward(total).for_params(&g, self.net.params());
            if let Some(max_norm) = self.config.clip {
                clip_global_norm(&mut grads, max_norm);
            }
            self.adam.step(self.net.params_mut(), &grads);
        }
        self.epochs_done += 1;

        let mut records = vec![MetricsRecord {
            epoch,
            split: "train".into(),
            loss: loss_sum / train.len() as f64,
            accuracy: None,
            roc_auc: None,
            percentiles: Vec::new(),
            wall_time_s: start.elapsed().as_secs_f64(),
        }];
        let last = self.epochs_done == self.config.epochs;
        if self.epochs_done % self.config.eval_every == 0 || last {
            let report = evaluate(&self.net, &self.data, &self.data.split.val, self.config.eval_bins, self.exec)?;
            if report.loss < self.best_val_loss {
                self.best_val_loss = report.loss;
                self.best_epoch = epoch;
                self.best_params = self.net.params().clone();
            }
            records.push(MetricsRecord::from_eval(
                epoch,
                "val",
                report,
                start.elapsed().as_secs_f64(),
            ));
        }
        Ok(records)
    }

    /// Network with the parameters of the lowest validation loss so far.
    pub fn best_net(&self) -> ChordMixerNet {
        let mut net = self.net.clone();
        *net.params_mut() = self.best_params.clone();
        net
    }

    pub fn last_checkpoint(&self) -> Checkpoint {
        let (m, v) = self.adam.moments();
        Checkpoint {
            net: self.net.clone(),
            vocab: self.data.vocab.as_ref().map(|v| v.chars().to_vec()),
            state: Some(TrainState {
                epochs_done: self.epochs_done as u64,
                adam_step: self.adam.steps(),
                lr: self.config.lr,
                best_val_loss: self.best_val_loss,
                m: m.to_vec(),
                v: v.to_vec(),
            }),
        }
    }

    pub fn best_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.best_net(),
            vocab: self.data.vocab.as_ref().map(|v| v.chars().to_vec()),
            state: None,
        }
    }

    /// Runs the remaining epochs, then evaluates the selected model on every
    /// split. `sink` sees each record as it is produced.
    pub fn run(mut self, mut sink: impl FnMut(&MetricsRecord) -> Result<()>) -> Result<TrainOutcome> {
        let mut records = Vec::new();
        while self.epochs_done < self.config.epochs {
            for r in self.run_epoch()? {
                sink(&r)?;
                records.push(r);
            }
        }
        let best = self.best_net();
        for name in ["train", "val", "test"] {
            let start = Instant::now();
            let idx = self.data.split_indices(name)?;
            if idx.is_empty() {
                continue;
            }
            let report = evaluate(&best, &self.data, idx, self.config.eval_bins, self.exec)?;
            let r = MetricsRecord::from_eval(
                self.best_epoch,
                format!("final/{name}"),
                report,
                start.elapsed().as_secs_f64(),
            );
            sink(&r)?;
            records.push(r);
        }
        Ok(TrainOutcome {
            records,
            best: self.best_checkpoint(),
            last: self.last_checkpoint(),
            best_epoch: self.best_epoch,
        })
    }
}

fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Writes records as JSON lines.
pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_json());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            source: DataSource::Adding { lambda: 4.0, count: 40 },
            track_size: 2,
            hidden: 6,
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn tiny_data(cfg: &TrainConfig) -> Prepared {
        prepare(load_task(&cfg.source, cfg.seed).unwrap(), cfg.seed, None).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let cfg = TrainConfig { lr: 0.0, ..tiny_config() };
        let data = tiny_data(&cfg);
        let mut t = Trainer::new(cfg, data).unwrap();
        let before = t.net().params().clone();
        t.run_epoch().unwrap();
        assert_eq!(t.net().params(), &before);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            TrainConfig { batch_size: 0, ..tiny_config() },
            TrainConfig { dropout: 1.0, ..tiny_config() },
            TrainConfig { lr: f64::NAN, ..tiny_config() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn n_max_below_data_is_rejected() {
        let cfg = TrainConfig { n_max: Some(2), ..tiny_config() };
        let data = tiny_data(&cfg);
        assert!(matches!(Trainer::new(cfg, data), Err(Error::Length { .. })));
    }

    #[test]
    fn records_serialize_without_wall_time() {
        let cfg = tiny_config();
        let data = tiny_data(&cfg);
        let out = Trainer::new(cfg, data).unwrap().run(|_| Ok(())).unwrap();
        let json = out.records.last().unwrap().to_json();
        assert!(json.contains("\"split\":\"final/test\""), "{json}");
        assert!(!json.contains("wall"));
    }
}
