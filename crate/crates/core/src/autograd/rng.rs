use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named substreams of a root seed.
///
/// Each component of a run draws from its own ChaCha8 stream, so changing
/// how much randomness one component consumes never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DataGen,
    Split,
    Init,
    Shuffle { epoch: usize },
    Dropout { epoch: usize },
    Custom(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::DataGen => 1,
            Stream::Split => 2,
            Stream::Init => 3,
            Stream::Shuffle { epoch } => 1_000 + 2 * epoch as u64,
            Stream::Dropout { epoch } => 1_001 + 2 * epoch as u64,
            Stream::Custom(id) => 1 << 40 | id,
        }
    }
}

/// Seeded ChaCha8 generator.
///
/// The key is expanded from the 64-bit seed with `SeedableRng::seed_from_u64`
/// (PCG32 expansion) and the stream is selected with the ChaCha stream
/// counter, so `(seed, stream)` determines the output on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn stream(seed: u64, stream: Stream) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.id());
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub(crate) fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
