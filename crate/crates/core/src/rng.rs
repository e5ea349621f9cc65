//! Philox4x32-10 counter-based random number generator.
//!
//! Every random draw in the crate is a pure function of a 64-bit key (the
//! seed) and a 128-bit counter. Reimplementations in other languages only
//! need the round constants below to reproduce the exact same streams.
//!
//! Stream layout used throughout:
//! * `uniform(counter)` takes the first two 32-bit output words `(x0, x1)`,
//!   forms `((x1 as u64) << 32 | x0) >> 11` and scales by `2^-53`, giving a
//!   value in `[0, 1)`.
//! * [`Philox`] as a sequential generator advances the low 64 bits of the
//!   counter by one per call of [`Philox::next_u64`].

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// One Philox4x32-10 block: ten rounds over `ctr` keyed by `key`.
pub fn philox4x32_10(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let p0 = (M0 as u64) * (c[0] as u64);
        let p1 = (M1 as u64) * (c[2] as u64);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

fn key_of(seed: u64) -> [u32; 2] {
    [seed as u32, (seed >> 32) as u32]
}

/// Uniform `[0, 1)` draw addressed by `(seed, stream, index)`.
///
/// `stream` occupies the high 64 bits of the counter and `index` the low
/// 64 bits, so distinct streams never overlap.
pub fn uniform_at(seed: u64, stream: u64, index: u64) -> f64 {
    let ctr = [index as u32, (index >> 32) as u32, stream as u32, (stream >> 32) as u32];
    let out = philox4x32_10(ctr, key_of(seed));
    let bits = ((out[1] as u64) << 32) | out[0] as u64;
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential generator over one Philox stream.
#[derive(Debug, Clone)]
pub struct Philox {
    seed: u64,
    stream: u64,
    index: u64,
    spare_normal: Option<f64>,
}

impl Philox {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Philox {
            seed,
            stream,
            index: 0,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let i = self.index;
        self.index = self.index.wrapping_add(1);
        let ctr = [i as u32, (i >> 32) as u32, self.stream as u32, (self.stream >> 32) as u32];
        let out = philox4x32_10(ctr, key_of(self.seed));
        ((out[1] as u64) << 32) | out[0] as u64
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via the Box-Muller transform; pairs are cached.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Exponential variate with the given rate.
    pub fn next_exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.next_f64()).ln() / rate
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n.saturating_sub(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_answer_vectors() {
        // Reference vectors from the Random123 distribution (kat_vectors).
        assert_eq!(
            philox4x32_10([0, 0, 0, 0], [0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn sequential_matches_addressed() {
        let mut g = Philox::with_stream(42, 7);
        for i in 0..16 {
            assert_eq!(g.next_f64(), uniform_at(42, 7, i));
        }
    }

    #[test]
    fn uniform_moments() {
        let mut g = Philox::new(1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| g.next_f64()).collect();
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut g = Philox::new(9);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| g.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
