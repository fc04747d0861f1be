//! `CHMX1` checkpoint container.
//!
//! All integers are little-endian `u64`, reals little-endian `f64`:
//!
//! ```text
//! "CHMX1"
//! d, h, blocks, n_max, track_size (0 = none)
//! head: u8 (0 avg, 1 cls)
//! vocab_size (0 for real inputs), in_channels (0 for symbol inputs), out_dim
//! dropout: f64, seed
//! tensor_count, then per tensor: numel, numel × f64      (declaration order)
//! optional sections, each a 4-byte tag:
//!   "VOCB" count, count × u32 (Unicode scalar values)
//!   "TRST" epochs_done, adam_step, lr: f64, best_val_loss: f64,
//!          then first and second moments, one numel-prefixed array per tensor
//! "END."
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::net::{ChordMixerNet, HeadKind, InputKind, NetConfig};
use crate::autograd::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CHMX1";

/// Optimizer and progress state for resuming a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_done: u64,
    pub adam_step: u64,
    pub lr: f64,
    pub best_val_loss: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: ChordMixerNet,
    pub vocab: Option<Vec<char>>,
    pub state: Option<TrainState>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, t: &Tensor) {
    put_u64(out, t.numel() as u64);
    for &v in t.data() {
        put_f64(out, v);
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| format!("value {v} does not fit in usize"))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array_into(&mut self, shape: &[usize]) -> std::result::Result<Tensor, String> {
        let numel = self.usize()?;
        let expected: usize = shape.iter().product();
        if numel != expected {
            return Err(format!("array has {numel} values, expected {expected}"));
        }
        let raw = self.take(numel.checked_mul(8).ok_or("array too large")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| e.to_string())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.net.config();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u64(&mut out, cfg.channels as u64);
        put_u64(&mut out, cfg.hidden as u64);
        put_u64(&mut out, cfg.blocks() as u64);
        put_u64(&mut out, cfg.n_max as u64);
        put_u64(&mut out, cfg.track_size.unwrap_or(0) as u64);
        out.push(match cfg.head {
            HeadKind::Avg => 0,
            HeadKind::Cls => 1,
        });
        let (vocab, in_channels) = match cfg.input {
            InputKind::Symbols { vocab } => (vocab, 0),
            InputKind::Real { channels } => (0, channels),
        };
        put_u64(&mut out, vocab as u64);
        put_u64(&mut out, in_channels as u64);
        put_u64(&mut out, cfg.out_dim as u64);
        put_f64(&mut out, cfg.dropout);
        put_u64(&mut out, cfg.seed);

        let tensors = self.net.params().tensors();
        put_u64(&mut out, tensors.len() as u64);
        tensors.iter().for_each(|t| put_array(&mut out, t));

        if let Some(vocab) = &self.vocab {
            out.extend_from_slice(b"VOCB");
            put_u64(&mut out, vocab.len() as u64);
            for &c in vocab {
                out.extend_from_slice(&(c as u32).to_le_bytes());
            }
        }
        if let Some(state) = &self.state {
            out.extend_from_slice(b"TRST");
            put_u64(&mut out, state.epochs_done);
            put_u64(&mut out, state.adam_step);
            put_f64(&mut out, state.lr);
            put_f64(&mut out, state.best_val_loss);
            state.m.iter().for_each(|t| put_array(&mut out, t));
            state.v.iter().for_each(|t| put_array(&mut out, t));
        }
        out.extend_from_slice(b"END.");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(5)? != CHECKPOINT_MAGIC {
            return Err("bad magic (expected CHMX1)".into());
        }
        let channels = cur.usize()?;
        let hidden = cur.usize()?;
        let blocks = cur.usize()?;
        let n_max = cur.usize()?;
        let track_size = cur.usize()?;
        let head = match cur.u8()? {
            0 => HeadKind::Avg,
            1 => HeadKind::Cls,
            other => return Err(format!("unknown head tag {other}")),
        };
        let vocab = cur.usize()?;
        let in_channels = cur.usize()?;
        let input = match (vocab, in_channels) {
            (v, 0) if v > 0 => InputKind::Symbols { vocab: v },
            (0, c) if c > 0 => InputKind::Real { channels: c },
            _ => return Err(format!("inconsistent input kind: vocab={vocab}, channels={in_channels}")),
        };
        let out_dim = cur.usize()?;
        let dropout = cur.f64()?;
        let seed = cur.u64()?;
        let config = NetConfig {
            input,
            channels,
            track_size: (track_size > 0).then_some(track_size),
            hidden,
            n_max,
            out_dim,
            head,
            dropout,
            seed,
        };
        if config.blocks() != blocks {
            return Err(format!(
                "block count {blocks} does not match n_max {n_max}"
            ));
        }
        // The freshly initialized net provides the expected shapes.
        let template = ChordMixerNet::new(config.clone()).map_err(|e| e.to_string())?;
        let shapes: Vec<Vec<usize>> = template
            .params()
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        let count = cur.usize()?;
        if count != shapes.len() {
            return Err(format!("expected {} tensors, found {count}", shapes.len()));
        }
        let values = shapes
            .iter()
            .map(|s| cur.array_into(s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let net = ChordMixerNet::from_parts(config, values).map_err(|e| e.to_string())?;

        let mut vocab_chars = None;
        let mut state = None;
        loop {
            match cur.take(4)? {
                b"VOCB" => {
                    let n = cur.usize()?;
                    let chars = (0..n)
                        .map(|_| {
                            let raw = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
                            char::from_u32(raw).ok_or_else(|| format!("invalid char {raw:#x}"))
                        })
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    vocab_chars = Some(chars);
                }
                b"TRST" => {
                    let epochs_done = cur.u64()?;
                    let adam_step = cur.u64()?;
                    let lr = cur.f64()?;
                    let best_val_loss = cur.f64()?;
                    let m = shapes
                        .iter()
                        .map(|s| cur.array_into(s))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    let v = shapes
                        .iter()
                        .map(|s| cur.array_into(s))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    state = Some(TrainState {
                        epochs_done,
                        adam_step,
                        lr,
                        best_val_loss,
                        m,
                        v,
                    });
                }
                b"END." => break,
                other => return Err(format!("unknown section tag {:?}", String::from_utf8_lossy(other))),
            }
        }
        if cur.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
        }
        Ok(Checkpoint {
            net,
            vocab: vocab_chars,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            msg,
        })
    }
}
