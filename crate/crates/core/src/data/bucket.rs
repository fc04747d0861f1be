use std::collections::BTreeMap;

use crate::autograd::{Graph, Rng};
use crate::model::{BatchOutput, ChordMixerNet, Input};
use crate::{ceil_log2, Error, Result};

/// `ceil(log2 n)`: sequences sharing a key traverse the same number of blocks.
pub fn bucket_key(n: usize) -> usize {
    ceil_log2(n)
}

/// One epoch of batches over items with the given lengths.
///
/// Indices are shuffled, grouped by [`bucket_key`] (keeping the shuffled
/// order inside each bucket), cut into batches of at most `batch_size`,
/// and the batch order is shuffled again. Every index appears exactly once.
pub fn bucket_batches(lengths: &[usize], batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    rng.shuffle(&mut order);
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        buckets.entry(bucket_key(lengths[i])).or_default().push(i);
    }
    let mut batches: Vec<Vec<usize>> = buckets
        .into_values()
        .flat_map(|members| {
            members
                .chunks(batch_size)
                .map(<[usize]>::to_vec)
                .collect::<Vec<_>>()
        })
        .collect();
    rng.shuffle(&mut batches);
    Ok(batches)
}

/// Padding-free forward pass of one bucket; see
/// [`ChordMixerNet::forward_batch`].
pub fn batched_forward(
    g: &mut Graph,
    net: &ChordMixerNet,
    batch: &[&Input],
    training: bool,
    rng: Option<&mut Rng>,
) -> Result<BatchOutput> {
    net.forward_batch(g, batch, training, rng, false)
}
