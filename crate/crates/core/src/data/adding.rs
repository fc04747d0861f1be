//! The adding problem with log-normally distributed lengths.
//!
//! Each position carries `(a_i, b_i)` with `a_i ~ U(-1, 1)`; exactly two
//! positions have `b = 1` and the target is `0.5 + (a_t1 + a_t2) / 4`.
//!
//! `ADD1` file layout (little-endian):
//!
//! ```text
//! "ADD1", count: u64
//! per record: N: u64, a: N × f64, b: N × u8, y: f64
//! ```

use std::path::Path;

use rand::seq::index::sample;
use rand_distr::{Distribution, LogNormal};

use crate::autograd::{Rng, Tensor};
use crate::model::Input;
use crate::{Error, Result};

pub const ADDING_MAGIC: &[u8; 4] = b"ADD1";

/// A prediction is correct when `|y - ŷ|` is strictly below this.
pub const ADDING_TOLERANCE: f64 = 0.04;

#[derive(Debug, Clone, PartialEq)]
pub struct AddingInstance {
    pub a: Vec<f64>,
    pub b: Vec<u8>,
    pub y: f64,
}

impl AddingInstance {
    /// Builds an instance with markers at `t1` and `t2`.
    pub fn new(a: Vec<f64>, t1: usize, t2: usize) -> Result<Self> {
        let n = a.len();
        if t1 == t2 || t1 >= n || t2 >= n {
            return Err(Error::Parameter(format!(
                "markers must be distinct positions below {n}, got {t1} and {t2}"
            )));
        }
        let mut b = vec![0; n];
        b[t1] = 1;
        b[t2] = 1;
        let y = 0.5 + (a[t1] + a[t2]) / 4.0;
        Ok(Self { a, b, y })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn markers(&self) -> Vec<usize> {
        self.b
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
            .collect()
    }

    /// `2×N` network input: row 0 holds `a`, row 1 holds `b`.
    pub fn to_input(&self) -> Input {
        let n = self.len();
        let mut data = self.a.clone();
        data.extend(self.b.iter().map(|&v| f64::from(v)));
        Input::Real(Tensor::new(vec![2, n], data).expect("non-empty instance"))
    }
}

/// Sequence lengths `N = round(λ·ζ)`, `ζ ~ LogNormal(μ, σ²)`, clamped to at
/// least 2. Rounding is half away from zero.
#[derive(Debug, Clone, Copy)]
pub struct LengthModel {
    lambda: f64,
    zeta: LogNormal<f64>,
}

impl LengthModel {
    pub fn new(lambda: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(lambda >= 2.0) {
            return Err(Error::Parameter(format!("base length must be >= 2, got {lambda}")));
        }
        let zeta = LogNormal::new(mu, sigma)
            .map_err(|e| Error::Parameter(format!("log-normal parameters: {e}")))?;
        Ok(Self { lambda, zeta })
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let zeta: f64 = self.zeta.sample(rng.inner());
        ((self.lambda * zeta).round() as usize).max(2)
    }
}

/// Draws `count` instances with lengths from [`LengthModel`], `a` uniform
/// in `[-1, 1)` and two distinct marker positions.
pub fn gen_adding(count: usize, lambda: f64, mu: f64, sigma: f64, rng: &mut Rng) -> Result<Vec<AddingInstance>> {
    if count == 0 {
        return Err(Error::Parameter("instance count must be positive".into()));
    }
    let lengths = LengthModel::new(lambda, mu, sigma)?;
    (0..count)
        .map(|_| {
            let n = lengths.sample(rng);
            let a: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let picks = sample(rng.inner(), n, 2);
            AddingInstance::new(a, picks.index(0), picks.index(1))
        })
        .collect()
}

/// Fraction of predictions within the tolerance.
pub fn adding_accuracy(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Dimension {
            op: "adding_accuracy",
            left: vec![preds.len()],
            right: vec![targets.len()],
        });
    }
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = preds
        .iter()
        .zip(targets)
        .filter(|(p, t)| (*t - *p).abs() < ADDING_TOLERANCE)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn write_adding(path: &Path, instances: &[AddingInstance]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(ADDING_MAGIC);
    out.extend_from_slice(&(instances.len() as u64).to_le_bytes());
    for inst in instances {
        out.extend_from_slice(&(inst.len() as u64).to_le_bytes());
        for a in &inst.a {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend_from_slice(&inst.b);
        out.extend_from_slice(&inst.y.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_adding(path: &Path) -> Result<Vec<AddingInstance>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_adding(&bytes).map_err(|msg| Error::Format {
        kind: "ADD1",
        path: path.to_path_buf(),
        msg,
    })
}

fn decode_adding(bytes: &[u8]) -> std::result::Result<Vec<AddingInstance>, String> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or("truncated file")?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != ADDING_MAGIC {
        return Err("bad magic (expected ADD1)".into());
    }
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut out = Vec::new();
    for r in 0..count {
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if n < 2 {
            return Err(format!("record {r}: length {n} is below 2"));
        }
        let a: Vec<f64> = take(n.checked_mul(8).ok_or("record too large")?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let b = take(n)?.to_vec();
        let y = f64::from_le_bytes(take(8)?.try_into().unwrap());
        if b.iter().filter(|&&v| v == 1).count() != 2 || b.iter().any(|&v| v > 1) {
            return Err(format!("record {r}: markers must be exactly two ones"));
        }
        out.push(AddingInstance { a, b, y });
    }
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Stream;

    #[test]
    fn target_extremes() {
        assert_eq!(AddingInstance::new(vec![1.0, 0.3, 1.0], 0, 2).unwrap().y, 1.0);
        assert_eq!(AddingInstance::new(vec![-1.0, -1.0], 0, 1).unwrap().y, 0.0);
        assert!(AddingInstance::new(vec![0.0; 3], 1, 1).is_err());
    }

    #[test]
    fn generated_instances_are_well_formed() {
        let mut rng = Rng::stream(3, Stream::DataGen);
        let data = gen_adding(500, 10.0, 0.5, 0.7, &mut rng).unwrap();
        for inst in &data {
            assert!(inst.len() >= 2);
            let m = inst.markers();
            assert_eq!(m.len(), 2);
            assert!((0.0..=1.0).contains(&inst.y));
            assert_eq!(inst.y, 0.5 + (inst.a[m[0]] + inst.a[m[1]]) / 4.0);
            assert!(inst.a.iter().all(|v| (-1.0..1.0).contains(v)));
        }
        assert!(gen_adding(0, 10.0, 0.5, 0.7, &mut rng).is_err());
        assert!(gen_adding(5, 1.0, 0.5, 0.7, &mut rng).is_err());
    }

    #[test]
    fn accuracy_boundary_is_strict() {
        assert_eq!(adding_accuracy(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 1.0);
        // |0.04 - 0| is exactly the tolerance constant.
        assert_eq!(adding_accuracy(&[0.0], &[0.04]).unwrap(), 0.0);
        assert_eq!(adding_accuracy(&[0.04], &[0.0]).unwrap(), 0.0);
        assert_eq!(adding_accuracy(&[0.25], &[0.28]).unwrap(), 1.0);
        assert!(adding_accuracy(&[0.1], &[]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let mut rng = Rng::stream(4, Stream::DataGen);
        let data = gen_adding(20, 6.0, 0.5, 0.7, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.add1");
        write_adding(&path, &data).unwrap();
        assert_eq!(read_adding(&path).unwrap(), data);
        std::fs::write(&path, b"ADD1\x01\0\0\0\0\0\0\0").unwrap();
        assert!(read_adding(&path).is_err());
    }
}
