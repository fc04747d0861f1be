//! Track layouts and the Chord graph behind the rotation scales.
//!
//! A layout splits `d` channels into `M = ceil(log2 N_ref) + 1` contiguous
//! tracks. Track 1 is not rotated; track `t > 1` is rotated by `2^(t-2)`.
//! The matching Chord graph links node `i` to `i + 2^s (mod N)` for
//! `s < ceil(log2 N)`, plus a self-loop.

use crate::exec::Exec;
use crate::{ceil_log2, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackLayout {
    channels: usize,
    /// Zero-based track of each channel.
    track_of_channel: Vec<usize>,
    /// Raw (unreduced) offset of each track: `0, 1, 2, 4, ...`.
    offset_of_track: Vec<usize>,
}

impl TrackLayout {
    /// Near-equal contiguous partition of `d` channels for reference length `n_ref`.
    pub fn new(d: usize, n_ref: usize) -> Result<Self> {
        if n_ref < 2 {
            return Err(Error::Config(format!(
                "layout reference length must be at least 2, got {n_ref}"
            )));
        }
        let tracks = ceil_log2(n_ref) + 1;
        if d < tracks {
            return Err(Error::Config(format!(
                "fewer channels than tracks: d={d}, M={tracks}"
            )));
        }
        let (base, extra) = (d / tracks, d % tracks);
        let mut track_of_channel = Vec::with_capacity(d);
        for t in 0..tracks {
            let size = base + usize::from(t < extra);
            track_of_channel.extend(std::iter::repeat_n(t, size));
        }
        let offset_of_track = (0..tracks)
            .map(|t| if t == 0 { 0 } else { 1usize << (t - 1) })
            .collect();
        Ok(Self {
            channels: d,
            track_of_channel,
            offset_of_track,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tracks(&self) -> usize {
        self.offset_of_track.len()
    }

    /// One-based track index `t_i` of channel `i`.
    pub fn track_of(&self, channel: usize) -> usize {
        self.track_of_channel[channel] + 1
    }

    /// Raw offset of the one-based track `t`.
    pub fn track_offset(&self, t: usize) -> usize {
        self.offset_of_track[t - 1]
    }

    pub fn track_offsets(&self) -> &[usize] {
        &self.offset_of_track
    }

    pub fn track_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.tracks()];
        for &t in &self.track_of_channel {
            sizes[t] += 1;
        }
        sizes
    }

    /// Per-channel rotation offset for a sequence of length `n`.
    pub fn rotation_offsets(&self, n: usize) -> Vec<usize> {
        let n = n.max(1);
        self.track_of_channel
            .iter()
            .map(|&t| self.offset_of_track[t] % n)
            .collect()
    }

    /// Distinct track offsets reduced mod `n`, ascending.
    pub fn distinct_offsets(&self, n: usize) -> Vec<usize> {
        let n = n.max(1);
        let mut offs: Vec<usize> = self.offset_of_track.iter().map(|o| o % n).collect();
        offs.sort_unstable();
        offs.dedup();
        offs
    }
}

/// Circulant Chord graph on `n` nodes with a self-loop at every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChordGraph {
    n: usize,
    /// Distinct `2^s mod n` for `s < ceil(log2 n)`, together with `0`.
    offsets: Vec<usize>,
}

impl ChordGraph {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "graph needs at least one node");
        let mut offsets = vec![0];
        offsets.extend((0..ceil_log2(n)).map(|s| (1usize << s) % n));
        offsets.sort_unstable();
        offsets.dedup();
        Self { n, offsets }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn out_degree(&self) -> usize {
        self.offsets.len()
    }

    pub fn targets(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.offsets.iter().map(move |o| (i + o) % self.n)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.targets(i).any(|t| t == j)
    }
}

/// Fixed-width bit row over `n` positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BitRow {
    n: usize,
    words: Vec<u64>,
}

impl BitRow {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            n,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub(crate) fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub(crate) fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub(crate) fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub(crate) fn is_full(&self) -> bool {
        self.count() == self.n
    }

    /// `self |= src` cyclically shifted forward by `o`, i.e. bit `j` of
    /// `src` lands on bit `(j + o) mod n`.
    pub(crate) fn or_rotated(&mut self, src: &BitRow, o: usize) {
        let n = self.n;
        let o = o % n;
        if o == 0 {
            for (d, s) in self.words.iter_mut().zip(&src.words) {
                *d |= s;
            }
            return;
        }
        // Positions j in [0, n - o) move up by o; [n - o, n) wrap to [0, o).
        self.or_shifted_range(src, 0, n - o, o);
        self.or_shifted_range(src, n - o, n, 0);
    }

    /// ORs bits `src[lo..hi]` into `self[dst..dst + (hi - lo)]`.
    fn or_shifted_range(&mut self, src: &BitRow, lo: usize, hi: usize, dst: usize) {
        let mut j = lo;
        while j < hi {
            let word = j / 64;
            let bit = j % 64;
            let take = (64 - bit).min(hi - j);
            let mask = if take == 64 { u64::MAX } else { (1u64 << take) - 1 };
            let chunk = (src.words[word] >> bit) & mask;
            let at = dst + (j - lo);
            let (dw, db) = (at / 64, at % 64);
            self.words[dw] |= chunk << db;
            if db + take > 64 {
                self.words[dw + 1] |= chunk >> (64 - db);
            }
            j += take;
        }
    }
}

/// Boolean reachability relation, one bit row per source node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reachability {
    rows: Vec<BitRow>,
}

impl Reachability {
    pub fn identity(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| {
                let mut r = BitRow::new(n);
                r.set(i);
                r
            })
            .collect();
        Self { rows }
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn reaches(&self, from: usize, to: usize) -> bool {
        self.rows[from].get(to)
    }

    pub fn is_full(&self) -> bool {
        self.rows.iter().all(BitRow::is_full)
    }

    /// One more hop along a circulant edge set: `R ← R ∘ A` where
    /// `A[j][(j + o) mod n] = 1` for every `o` in `offsets`.
    pub fn step(&self, offsets: &[usize]) -> Self {
        let n = self.size();
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut next = BitRow::new(n);
                for &o in offsets {
                    next.or_rotated(row, o);
                }
                next
            })
            .collect();
        Self { rows }
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.size();
        self.rows
            .iter()
            .map(|r| (0..n).map(|j| r.get(j)).collect())
            .collect()
    }
}

/// First hop count `k` at which every node of the `n`-node Chord graph
/// reaches every node.
pub fn reachability_closure(n: usize) -> usize {
    let graph = ChordGraph::new(n);
    let mut reach = Reachability::identity(n);
    let mut hops = 0;
    while !reach.is_full() {
        reach = reach.step(graph.offsets());
        hops += 1;
    }
    hops
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachingProbabilities {
    pub nodes: usize,
    pub hops: usize,
    /// Probability of sitting at each node after `hops` uniform random-walk
    /// steps starting from node 0.
    pub distribution: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `distribution`.
    pub std: f64,
}

/// Random walk on the right-stochastic Chord graph from node 0.
pub fn reaching_probabilities(n: usize, hops: usize) -> Result<ReachingProbabilities> {
    reaching_probabilities_with(n, hops, Exec::default())
}

pub fn reaching_probabilities_with(n: usize, hops: usize, exec: Exec) -> Result<ReachingProbabilities> {
    if n < 2 {
        return Err(Error::Parameter(format!(
            "reaching probabilities need at least 2 nodes, got {n}"
        )));
    }
    let graph = ChordGraph::new(n);
    let weight = 1.0 / graph.out_degree() as f64;
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    for _ in 0..hops {
        // Pull form: mass at t comes from every t - o.
        let prev = &p;
        p = exec.map(n, |t| {
            graph
                .offsets()
                .iter()
                .map(|&o| prev[(t + n - o) % n] * weight)
                .sum()
        });
    }
    let mean = p.iter().sum::<f64>() / n as f64;
    let var = p.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / n as f64;
    Ok(ReachingProbabilities {
        nodes: n,
        hops,
        distribution: p,
        mean,
        std: var.sqrt(),
    })
}
