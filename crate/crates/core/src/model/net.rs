use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, NodeId, ParamId, ParamStore, Rng, Stream, Tensor};
use crate::topology::TrackLayout;
use crate::{ceil_log2, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Symbol indices looked up in a `d×vocab` table.
    Symbols { vocab: usize },
    /// Real-valued `channels×N` inputs projected by a `d×channels` matrix.
    Real { channels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Mean over positions, then a linear predictor.
    Avg,
    /// Learned token prepended to the sequence; the linear predictor reads
    /// its final column.
    Cls,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Avg => "avg",
            HeadKind::Cls => "cls",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(HeadKind::Avg),
            "cls" => Ok(HeadKind::Cls),
            other => Err(Error::Config(format!("unknown head '{other}' (expected avg or cls)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input: InputKind,
    /// Channel count `d`.
    pub channels: usize,
    /// Set when `channels` was derived as `track_size × blocks`; informational.
    pub track_size: Option<usize>,
    pub hidden: usize,
    pub n_max: usize,
    pub out_dim: usize,
    pub head: HeadKind,
    pub dropout: f64,
    pub seed: u64,
}

impl NetConfig {
    /// `d = track_size × ceil(log2 n_max)`.
    pub fn with_track_size(
        input: InputKind,
        track_size: usize,
        hidden: usize,
        n_max: usize,
        out_dim: usize,
    ) -> Self {
        let blocks = Self::block_count(n_max);
        Self {
            input,
            channels: track_size * blocks,
            track_size: Some(track_size),
            hidden,
            n_max,
            out_dim,
            head: HeadKind::Avg,
            dropout: 0.0,
            seed: 0,
        }
    }

    /// `ceil(log2 n_max)`, at least one.
    pub fn block_count(n_max: usize) -> usize {
        ceil_log2(n_max).max(1)
    }

    pub fn blocks(&self) -> usize {
        Self::block_count(self.n_max)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("n_max", self.n_max),
            ("out_dim", self.out_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        match self.input {
            InputKind::Symbols { vocab: 0 } => return Err(Error::Config("empty vocabulary".into())),
            InputKind::Real { channels: 0 } => return Err(Error::Config("no input channels".into())),
            InputKind::Real { .. } if self.head == HeadKind::Cls => {
                return Err(Error::Config(
                    "the cls head needs symbol inputs".into(),
                ))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-position two-layer MLP: `W2·gelu(W1·z + b1) + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl MixMlp {
    pub fn param_count(d: usize, h: usize) -> usize {
        d * h + h + h * d + d
    }

    /// Applies the MLP to every column of `z`.
    pub fn apply(&self, g: &mut Graph, params: &ParamStore, z: NodeId) -> Result<NodeId> {
        let w1 = g.param(params, self.w1);
        let b1 = g.param(params, self.b1);
        let w2 = g.param(params, self.w2);
        let b2 = g.param(params, self.b2);
        let hidden = g.matmul(w1, z)?;
        let hidden = g.add_column(hidden, b1)?;
        let hidden = g.gelu(hidden);
        let out = g.matmul(w2, hidden)?;
        g.add_column(out, b2)
    }
}

/// One input sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Symbols(Vec<usize>),
    /// `channels×N`.
    Real(Tensor),
}

impl Input {
    pub fn len(&self) -> usize {
        match self {
            Input::Symbols(s) => s.len(),
            Input::Real(t) => t.cols(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activations of one sequence: the embedded input, then the output of
/// every traversed block. Each matrix is `d×N` (`d×(N+1)` with a cls token).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub embedded: Tensor,
    pub blocks: Vec<Tensor>,
}

impl ActivationTrace {
    /// Writes `input.csv` and `block_XX.csv` into `dir`; returns the paths.
    /// Rows are channels, columns are positions.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::with_capacity(self.blocks.len() + 1);
        let width = self.blocks.len().to_string().len().max(2);
        let files = std::iter::once(("input".to_string(), &self.embedded)).chain(
            self.blocks
                .iter()
                .enumerate()
                .map(|(b, t)| (format!("block_{:0width$}", b + 1), t)),
        );
        for (name, t) in files {
            let path = dir.join(format!("{name}.csv"));
            let mut text = String::new();
            for row in t.data().chunks(t.cols()) {
                let line: Vec<String> = row.iter().map(f64::to_string).collect();
                text.push_str(&line.join(","));
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

pub struct BatchOutput {
    /// One `out_dim×1` node per member.
    pub predictions: Vec<NodeId>,
    /// Blocks traversed by the batch.
    pub depth: usize,
    pub traces: Option<Vec<ActivationTrace>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChordMixerNet {
    config: NetConfig,
    layout: TrackLayout,
    params: ParamStore,
    embedding: ParamId,
    cls: Option<ParamId>,
    blocks: Vec<MixMlp>,
    head_w: ParamId,
    head_b: ParamId,
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.uniform_range(-bound, bound));
    t
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng.inner()));
    t
}

impl ChordMixerNet {
    /// Seeded initialization: linear layers uniform in `±sqrt(1/fan_in)`,
    /// lookup tables and the cls token normal with std 0.02.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.channels, config.hidden);
        let layout = TrackLayout::new(d, config.n_max.max(2))?;
        let mut rng = Rng::stream(config.seed, Stream::Init);
        let mut params = ParamStore::new();

        let embedding = match config.input {
            InputKind::Symbols { vocab } => {
                params.add("embedding", normal_tensor(&[d, vocab], 0.02, &mut rng))
            }
            InputKind::Real { channels } => params.add(
                "embedding",
                uniform_tensor(&[d, channels], (1.0 / channels as f64).sqrt(), &mut rng),
            ),
        };
        let cls = (config.head == HeadKind::Cls)
            .then(|| params.add("cls_token", normal_tensor(&[d], 0.02, &mut rng)));

        let (bound_d, bound_h) = ((1.0 / d as f64).sqrt(), (1.0 / h as f64).sqrt());
        let blocks = (0..config.blocks())
            .map(|b| MixMlp {
                w1: params.add(format!("block{b}.w1"), uniform_tensor(&[h, d], bound_d, &mut rng)),
                b1: params.add(format!("block{b}.b1"), uniform_tensor(&[h], bound_d, &mut rng)),
                w2: params.add(format!("block{b}.w2"), uniform_tensor(&[d, h], bound_h, &mut rng)),
                b2: params.add(format!("block{b}.b2"), uniform_tensor(&[d], bound_h, &mut rng)),
            })
            .collect();

        let out = config.out_dim;
        let head_w = params.add("head.w", uniform_tensor(&[out, d], bound_d, &mut rng));
        let head_b = params.add("head.b", uniform_tensor(&[out], bound_d, &mut rng));

        Ok(Self {
            config,
            layout,
            params,
            embedding,
            cls,
            blocks,
            head_w,
            head_b,
        })
    }

    /// Rebuilds a network around saved parameter values (declaration order).
    pub fn from_parts(config: NetConfig, values: Vec<Tensor>) -> Result<Self> {
        let mut net = Self::new(config)?;
        if values.len() != net.params.len() {
            return Err(Error::Parameter(format!(
                "expected {} parameter tensors, got {}",
                net.params.len(),
                values.len()
            )));
        }
        for (id, v) in net.params.ids().collect::<Vec<_>>().into_iter().zip(values) {
            let slot = net.params.get_mut(id);
            if slot.shape() != v.shape() {
                return Err(Error::Dimension {
                    op: "load parameters",
                    left: slot.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            *slot = v;
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &TrackLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn blocks(&self) -> &[MixMlp] {
        &self.blocks
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    pub fn cls_token(&self) -> Option<ParamId> {
        self.cls
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    /// Total learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Length of the sequence the blocks actually see.
    pub fn effective_len(&self, n: usize) -> usize {
        match self.config.head {
            HeadKind::Avg => n,
            HeadKind::Cls => n + 1,
        }
    }

    /// Bucket key of an input of length `n`: `ceil(log2)` of the effective length.
    pub fn depth_key(&self, n: usize) -> usize {
        ceil_log2(self.effective_len(n))
    }

    /// Blocks traversed by a length-`n` input: `ceil(log2 n)`, at least one,
    /// at most the number of blocks.
    pub fn depth_for(&self, n: usize) -> usize {
        self.depth_key(n).clamp(1, self.blocks.len())
    }

    fn embed(&self, g: &mut Graph, input: &Input) -> Result<NodeId> {
        let table = g.param(&self.params, self.embedding);
        let x = match (input, self.config.input) {
            (Input::Symbols(s), InputKind::Symbols { .. }) => g.gather_cols(table, s)?,
            (Input::Real(t), InputKind::Real { channels }) => {
                if t.rows() != channels || t.shape().len() != 2 {
                    return Err(Error::Dimension {
                        op: "embed",
                        left: vec![channels],
                        right: t.shape().to_vec(),
                    });
                }
                let leaf = g.leaf(t.clone());
                g.matmul(table, leaf)?
            }
            _ => {
                return Err(Error::Parameter(
                    "input kind does not match the network's embedding".into(),
                ))
            }
        };
        match self.cls {
            Some(cls) => {
                let token = g.param(&self.params, cls);
                g.prepend_col(token, x)
            }
            None => Ok(x),
        }
    }

    /// Padding-free batched forward pass.
    ///
    /// Every member is rotated with its own length; the rotated members are
    /// concatenated along the position axis so each block's MLP runs once,
    /// then split back and added to each member's residual stream. All
    /// members must share a depth key. `rng` is required when training with
    /// dropout; the mask is drawn over the concatenated tensor.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        inputs: &[&Input],
        training: bool,
        mut rng: Option<&mut Rng>,
        capture: bool,
    ) -> Result<BatchOutput> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Parameter("empty batch".into()))?;
        let key = self.depth_key(first.len());
        for input in inputs {
            let n = input.len();
            if n == 0 {
                return Err(Error::Parameter("empty sequence".into()));
            }
            if n > self.config.n_max {
                return Err(Error::Length {
                    len: n,
                    n_max: self.config.n_max,
                });
            }
            let k = self.depth_key(n);
            if k != key {
                return Err(Error::MixedBucket(key, k));
            }
        }
        let depth = self.depth_for(first.len());
        let dropout_active = training && self.config.dropout > 0.0;
        if dropout_active && rng.is_none() {
            return Err(Error::Parameter("dropout during training needs an rng".into()));
        }

        let mut states = inputs
            .iter()
            .map(|input| self.embed(g, input))
            .collect::<Result<Vec<_>>>()?;
        let lens: Vec<usize> = states.iter().map(|&x| g.value(x).cols()).collect();
        let mut traces: Option<Vec<ActivationTrace>> = capture.then(|| {
            states
                .iter()
                .map(|&x| ActivationTrace {
                    embedded: g.value(x).clone(),
                    blocks: Vec::with_capacity(depth),
                })
                .collect()
        });

        for mlp in &self.blocks[..depth] {
            let rotated = states
                .iter()
                .zip(&lens)
                .map(|(&x, &n)| g.rotate(x, &self.layout.rotation_offsets(n)))
                .collect::<Result<Vec<_>>>()?;
            let joined = if rotated.len() == 1 {
                rotated[0]
            } else {
                g.concat_cols(&rotated)?
            };
            let dropped = match rng.as_deref_mut() {
                Some(r) => g.dropout(joined, self.config.dropout, r, training)?,
                None => joined,
            };
            let mixed = mlp.apply(g, &self.params, dropped)?;
            let mut start = 0;
            for (m, &n) in lens.iter().enumerate() {
                let part = if lens.len() == 1 {
                    mixed
                } else {
                    g.slice_cols(mixed, start, n)?
                };
                start += n;
                states[m] = g.add(states[m], part)?;
                if let Some(t) = traces.as_mut() {
                    t[m].blocks.push(g.value(states[m]).clone());
                }
            }
        }

        let predictions = states
            .iter()
            .map(|&x| self.apply_head(g, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(BatchOutput {
            predictions,
            depth,
            traces,
        })
    }

    fn apply_head(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let pooled = match self.config.head {
            HeadKind::Avg => g.mean_cols(x),
            HeadKind::Cls => g.select_col(x, 0)?,
        };
        self.linear_head(g, pooled)
    }

    /// `head_w · v + head_b` for a `d×1` column.
    pub fn linear_head(&self, g: &mut Graph, column: NodeId) -> Result<NodeId> {
        let w = g.param(&self.params, self.head_w);
        let b = g.param(&self.params, self.head_b);
        let logits = g.matmul(w, column)?;
        g.add_column(logits, b)
    }

    /// Forward pass of one sequence on a fresh graph.
    pub fn forward(&self, g: &mut Graph, input: &Input, training: bool, rng: Option<&mut Rng>) -> Result<NodeId> {
        Ok(self.forward_batch(g, &[input], training, rng, false)?.predictions[0])
    }

    /// Inference-mode prediction.
    pub fn predict(&self, input: &Input) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, input, false, None)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Inference-mode prediction with the per-block activations.
    pub fn trace(&self, input: &Input) -> Result<(Vec<f64>, ActivationTrace)> {
        let mut g = Graph::new();
        let out = self.forward_batch(&mut g, &[input], false, None, true)?;
        let pred = g.value(out.predictions[0]).data().to_vec();
        let trace = out.traces.expect("captured").remove(0);
        Ok((pred, trace))
    }
}
