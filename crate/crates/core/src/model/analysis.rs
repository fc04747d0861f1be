//! Structural checks: receptive field, rank and parameter accounting.

use crate::autograd::Tensor;
use crate::topology::{Reachability, TrackLayout};
use crate::{ceil_log2, Error, Result};

/// Position-level reachability after some number of blocks.
#[derive(Debug, Clone)]
pub struct ReceptiveField {
    pub n: usize,
    pub depth: usize,
    /// `reach.reaches(j, p)`: output position `j` depends on input position `p`.
    pub reach: Reachability,
}

impl ReceptiveField {
    pub fn is_full(&self) -> bool {
        self.reach.is_full()
    }
}

/// Symbolic receptive field of `depth` blocks on a length-`n` sequence.
///
/// Channels are collapsed: a block lets output `j` read input `j + o (mod n)`
/// for every track offset `o` of `layout`, and offset 0 doubles as the
/// residual edge.
pub fn receptive_field(n: usize, layout: &TrackLayout, depth: usize) -> ReceptiveField {
    let offsets = layout.distinct_offsets(n);
    let mut reach = Reachability::identity(n);
    for _ in 0..depth {
        reach = reach.step(&offsets);
    }
    ReceptiveField { n, depth, reach }
}

/// Largest `d·N` for which explicit rank matrices are built.
pub const MAX_RANK_ELEMENTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub d: usize,
    pub n: usize,
    pub offsets: Vec<usize>,
    /// Every row and column of the rotation matrix holds exactly one 1.
    pub rotation_is_permutation: bool,
    pub rotation_rank: usize,
    pub w_rank: usize,
    pub mix_rank: usize,
    /// Rank of the mix matrix times the rotation matrix.
    pub block_rank: usize,
}

impl RankReport {
    pub fn full_rank(&self) -> bool {
        let dn = self.d * self.n;
        self.rotation_is_permutation && self.rotation_rank == dn && self.mix_rank == dn && self.block_rank == dn
    }
}

/// Per-channel offsets for a rank check: the track layout when `d` has
/// room for `ceil(log2 n) + 1` tracks, otherwise channel `i > 0` takes
/// `2^(i-1) mod n`.
fn rank_offsets(d: usize, n: usize) -> Vec<usize> {
    match TrackLayout::new(d, n.max(2)) {
        Ok(layout) => layout.rotation_offsets(n),
        Err(_) => (0..d)
            .map(|i| if i == 0 { 0 } else { (1usize << (i - 1).min(62)) % n })
            .collect(),
    }
}

/// Materializes the rotation and mix matrices on the flattened input and
/// checks their ranks by Gaussian elimination.
///
/// Flattening is position-major (`index = j·d + i`), so the per-position
/// linear map `W` becomes the block-diagonal `diag(W, ..., W)`.
pub fn rank_certificates(d: usize, n: usize, w: &Tensor) -> Result<RankReport> {
    let dn = d * n;
    if dn == 0 || dn > MAX_RANK_ELEMENTS {
        return Err(Error::Parameter(format!(
            "rank check needs 1 <= d·N <= {MAX_RANK_ELEMENTS}, got d={d}, N={n}"
        )));
    }
    if w.shape() != [d, d] {
        return Err(Error::Dimension {
            op: "rank_certificates",
            left: vec![d, d],
            right: w.shape().to_vec(),
        });
    }
    let offsets = rank_offsets(d, n);
    let idx = |i: usize, j: usize| j * d + i;

    // z[i][j] = x[i][(j + o_i) mod n]
    let mut rotation = vec![vec![0.0; dn]; dn];
    for (i, &o) in offsets.iter().enumerate() {
        for j in 0..n {
            rotation[idx(i, j)][idx(i, (j + o) % n)] = 1.0;
        }
    }
    let rotation_is_permutation = (0..dn).all(|r| rotation[r].iter().sum::<f64>() == 1.0)
        && (0..dn).all(|c| rotation.iter().map(|row| row[c]).sum::<f64>() == 1.0)
        && rotation.iter().flatten().all(|&v| v == 0.0 || v == 1.0);

    let mut mix = vec![vec![0.0; dn]; dn];
    for j in 0..n {
        for a in 0..d {
            for b in 0..d {
                mix[idx(a, j)][idx(b, j)] = w.at(a, b);
            }
        }
    }

    let block: Vec<Vec<f64>> = (0..dn)
        .map(|r| {
            (0..dn)
                .map(|c| (0..dn).map(|k| mix[r][k] * rotation[k][c]).sum())
                .collect()
        })
        .collect();

    let w_rows: Vec<Vec<f64>> = (0..d).map(|a| (0..d).map(|b| w.at(a, b)).collect()).collect();
    Ok(RankReport {
        d,
        n,
        offsets,
        rotation_is_permutation,
        rotation_rank: matrix_rank(&rotation),
        w_rank: matrix_rank(&w_rows),
        mix_rank: matrix_rank(&mix),
        block_rank: matrix_rank(&block),
    })
}

/// Rank by Gaussian elimination with partial pivoting.
pub fn matrix_rank(rows: &[Vec<f64>]) -> usize {
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = scale * 1e-10 * m.max(n) as f64;
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let pivot = (rank..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= tol {
            continue;
        }
        a.swap(rank, pivot);
        for r in rank + 1..m {
            let f = a[r][col] / a[rank][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[rank][c];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// MLP parameters of `blocks` blocks: `blocks·(2dh + h + d)`.
pub fn mlp_param_count(d: usize, h: usize, blocks: usize) -> usize {
    blocks * (2 * d * h + h + d)
}

/// Closed-form parameter count of a full network.
///
/// `embedding_cols` is the vocabulary size or the real input channel count.
pub fn param_count_formula(
    d: usize,
    h: usize,
    blocks: usize,
    embedding_cols: usize,
    out_dim: usize,
    cls: bool,
) -> usize {
    d * embedding_cols + usize::from(cls) * d + mlp_param_count(d, h, blocks) + out_dim * d + out_dim
}

/// `ceil(log2 n)` clamped to one, the depth used for a length-`n` sequence.
pub fn depth_of(n: usize) -> usize {
    ceil_log2(n).max(1)
}
