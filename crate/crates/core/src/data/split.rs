use std::collections::BTreeMap;

use crate::autograd::Rng;
use crate::{Error, Result};

/// Index sets of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn part_sizes(n: usize, fractions: [f64; 3]) -> (usize, usize) {
    let train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let val = ((n as f64 * fractions[1]).round() as usize).min(n - train);
    (train, val)
}

/// Shuffles `0..n` and cuts it into three parts.
///
/// With `labels`, every class is shuffled and cut separately, so each part
/// holds its share of every class to within one instance. Parts are
/// returned in shuffled order.
pub fn split(n: usize, fractions: [f64; 3], labels: Option<&[usize]>, rng: &mut Rng) -> Result<Split> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Parameter(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let groups: Vec<Vec<usize>> = match labels {
        None => vec![(0..n).collect()],
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::Dimension {
                    op: "split",
                    left: vec![n],
                    right: vec![labels.len()],
                });
            }
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in labels.iter().enumerate() {
                by_class.entry(c).or_default().push(i);
            }
            by_class.into_values().collect()
        }
    };
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for mut group in groups {
        rng.shuffle(&mut group);
        let (tr, va) = part_sizes(group.len(), fractions);
        out.train.extend_from_slice(&group[..tr]);
        out.val.extend_from_slice(&group[tr..tr + va]);
        out.test.extend_from_slice(&group[tr + va..]);
    }
    if labels.is_some() {
        rng.shuffle(&mut out.train);
        rng.shuffle(&mut out.val);
        rng.shuffle(&mut out.test);
    }
    Ok(out)
}
