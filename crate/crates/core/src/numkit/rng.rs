use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Deterministic random generator with cheap stream derivation.
///
/// Every consumer of randomness owns its own generator, derived from the
/// experiment seed plus a path of integers (stream tag, client id, round, ...).
/// The same (seed, path) always produces the same draw sequence, so client
/// streams never depend on scheduling or on how often other streams were
/// pulled.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn expand_key(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::from_seed(expand_key(seed)),
        }
    }

    /// Derives an independent stream from a base seed and a path of stream
    /// identifiers. Mixing is injective enough for the handful of dimensions
    /// used here (tag, client, round).
    pub fn derive(base_seed: u64, path: &[u64]) -> Self {
        let mut state = base_seed;
        let mut mixed = splitmix64(&mut state);
        for &p in path {
            state ^= p.wrapping_mul(0xD6E8_FEB8_6659_FD93);
            mixed ^= splitmix64(&mut state);
        }
        SeededRng::new(mixed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in [0, bound).
    pub fn below(&mut self, bound: u64) -> u64 {
        self.inner.random_range(0..bound)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Gamma(shape, 1) draw.
    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let dist = Gamma::new(shape, 1.0)
            .map_err(|e| Error::invalid(format!("gamma shape {shape}: {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from [0, n), in sorted order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} from {n}");
        let mut all: Vec<usize> = (0..n).collect();
        self.shuffle(&mut all);
        let mut picked: Vec<usize> = all.into_iter().take(k).collect();
        picked.sort_unstable();
        picked
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Samples a point on the probability simplex from a symmetric Dirichlet
/// by normalizing independent Gamma(alpha, 1) draws.
pub fn sample_dirichlet(alpha: f64, n: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!(
            "dirichlet concentration must be positive, got {alpha}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("dirichlet dimension must be at least 1"));
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    // Tiny concentrations can underflow all gamma draws to zero; retry with
    // fresh randomness rather than returning a degenerate point.
    for _ in 0..64 {
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            draws.push(rng.gamma(alpha)?);
        }
        let total: f64 = draws.iter().sum();
        if total > f64::MIN_POSITIVE && total.is_finite() {
            for d in &mut draws {
                *d /= total;
            }
            return Ok(draws);
        }
    }
    Err(Error::runtime(
        "dirichlet sampling degenerated (all gamma draws underflowed)",
    ))
}
