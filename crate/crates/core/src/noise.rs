//! Seeded Gaussian noise.
//!
//! Sampling is built on ChaCha8 plus a Box-Muller transform so that a given
//! seed yields the same sample stream on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Deterministic source of `N(0, sigma^2)` samples.
///
/// Two samplers constructed with the same seed produce bit-identical
/// sequences. The sampler is single-owner mutable state; clone it to fork
/// a stream.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    rng: ChaCha8Rng,
    sigma: f64,
    spare: Option<f64>,
}

impl GaussianSampler {
    pub fn new(seed: u64, sigma: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sigma,
            spare: None,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    /// Next standard-normal sample (Box-Muller, caching the sine partner).
    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Next `N(0, sigma^2)` sample.
    pub fn next_noise(&mut self) -> f64 {
        self.sigma * self.next_standard()
    }

    /// Fill a slice with independent `N(0, sigma^2)` samples.
    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_noise();
        }
    }

    /// Access the underlying uniform generator (used for masks and init).
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub(crate) fn write_to(&self, w: &mut impl std::io::Write) -> crate::error::Result<()> {
        w.write_all(&self.rng.get_seed())?;
        w.write_all(&self.rng.get_stream().to_le_bytes())?;
        w.write_all(&self.rng.get_word_pos().to_le_bytes())?;
        w.write_all(&self.sigma.to_le_bytes())?;
        match self.spare {
            Some(z) => {
                w.write_all(&[1u8])?;
                w.write_all(&z.to_le_bytes())?;
            }
            None => w.write_all(&[0u8; 9])?,
        }
        Ok(())
    }

    pub(crate) fn read_from(r: &mut impl std::io::Read) -> crate::error::Result<Self> {
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let stream = u64::from_le_bytes(b8);
        let mut b16 = [0u8; 16];
        r.read_exact(&mut b16)?;
        let word_pos = u128::from_le_bytes(b16);
        r.read_exact(&mut b8)?;
        let sigma = f64::from_le_bytes(b8);
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        r.read_exact(&mut b8)?;
        let spare = if flag[0] == 1 {
            Some(f64::from_le_bytes(b8))
        } else {
            None
        };
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self { rng, sigma, spare })
    }
}

/// Return `x + n` with `n` i.i.d. `N(0, sigma^2)`; `x` is not modified.
pub fn add_gaussian_noise(x: &Image, sampler: &mut GaussianSampler) -> Image {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += sampler.next_noise();
    }
    out
}
