//! Reproducible, splittable random-number streams.
//!
//! Every stream is a ChaCha8 keystream. The 256-bit key is expanded from the
//! run's `base_seed`; the 64-bit ChaCha stream selector is the `stream_id`.
//! Distinct stream ids therefore address disjoint keystreams, so streams
//! never overlap and can be created in any order, on any thread.
//!
//! # Stream-id allocation
//!
//! Harness streams are addressed by [`stream_id`]: a 64-bit FNV-1a hash of a
//! canonical scenario label (for example `pop[r2=0.8,...]/mech[MAR,...]`),
//! mixed with the replication index and a [`Purpose`] tag through the
//! SplitMix64 finalizer. The label is built from parameter *values*, never
//! from positions in a config, so reordering a config leaves every cell's
//! draws unchanged.
//!
//! # Variates
//!
//! Uniforms take the top 53 bits of a `u64`. Normals use the inverse normal
//! CDF (Wichura's AS 241) on an open-interval uniform, one uniform per
//! normal, so draws are linear in the stream: two calls of five values give
//! the same ten numbers as one call of ten.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{invalid, Result};

/// Address of one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub base_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        Self {
            base_seed,
            stream_id,
        }
    }
}

/// What a stream is used for. Part of the stream-id derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Population,
    Sampling,
    Amputation,
    Imputation,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Population => 0x01,
            Purpose::Sampling => 0x02,
            Purpose::Amputation => 0x03,
            Purpose::Imputation => 0x04,
        }
    }
}

/// 64-bit FNV-1a.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id for `(scenario label, replication, purpose)`.
pub fn stream_id(label: &str, replication: u64, purpose: Purpose) -> u64 {
    let h = label_hash(label);
    splitmix64(h ^ splitmix64(replication ^ (purpose.tag() << 56)))
}

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

/// Builds the stream addressed by `spec`. The sequence is a pure function of `spec`.
pub fn make_stream(spec: SeedSpec) -> RngStream {
    let mut key = [0u8; 32];
    let mut state = spec.base_seed;
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(spec.stream_id);
    RngStream { rng }
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

impl RngStream {
    pub fn new(spec: SeedSpec) -> Self {
        make_stream(spec)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform on the open interval `(0, 1)`.
    fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    pub fn standard_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.open_uniform())
    }

    pub fn draw_standard_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    pub fn draw_uniform(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }

    /// Uniform integer in `[0, bound)`, unbiased (Lemire's multiply-and-reject).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() needs a positive bound");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(bound);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// `k` distinct indices from `0..population_size` in random order
    /// (partial Fisher-Yates; sparse swap table when `k` is small).
    pub fn sample_without_replacement(
        &mut self,
        population_size: usize,
        k: usize,
    ) -> Result<Vec<usize>> {
        if k > population_size {
            return Err(invalid(format!(
                "cannot sample {k} items without replacement from {population_size}"
            )));
        }
        let mut out = Vec::with_capacity(k);
        if k.saturating_mul(4) >= population_size {
            let mut perm: Vec<usize> = (0..population_size).collect();
            for i in 0..k {
                let j = i + self.below((population_size - i) as u64) as usize;
                perm.swap(i, j);
                out.push(perm[i]);
            }
        } else {
            let mut swapped: HashMap<usize, usize> = HashMap::with_capacity(2 * k);
            for i in 0..k {
                let j = i + self.below((population_size - i) as u64) as usize;
                let at_j = *swapped.get(&j).unwrap_or(&j);
                let at_i = *swapped.get(&i).unwrap_or(&i);
                swapped.insert(j, at_i);
                out.push(at_j);
            }
        }
        Ok(out)
    }

    /// One chi-square draw with `dof` degrees of freedom, via Gamma(dof/2, 2).
    pub fn chi_square(&mut self, dof: usize) -> Result<f64> {
        if dof == 0 {
            return Err(invalid("chi-square needs dof >= 1"));
        }
        Ok(2.0 * self.gamma(dof as f64 / 2.0))
    }

    // Marsaglia & Tsang (2000), with the u^(1/a) boost for shape < 1.
    fn gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            return g * self.open_uniform().powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.standard_normal();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.open_uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Independent child stream; the parent advances by one draw.
    pub fn split(&mut self, index: u64) -> RngStream {
        make_stream(SeedSpec::new(self.next_u64(), index))
    }
}

/// Free-function form of [`RngStream::draw_standard_normal`].
pub fn draw_standard_normal(stream: &mut RngStream, n: usize) -> Vec<f64> {
    stream.draw_standard_normal(n)
}

pub fn draw_uniform(stream: &mut RngStream, n: usize) -> Vec<f64> {
    stream.draw_uniform(n)
}

pub fn sample_without_replacement(
    stream: &mut RngStream,
    population_size: usize,
    k: usize,
) -> Result<Vec<usize>> {
    stream.sample_without_replacement(population_size, k)
}

pub fn draw_chi_square(stream: &mut RngStream, dof: usize) -> Result<f64> {
    stream.chi_square(dof)
}

/// Inverse standard normal CDF for `p` in `(0, 1)` (Wichura, AS 241, PPND16).
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
                + 6.726_577_092_700_87e4)
                * r
                + 4.592_195_393_154_987e4)
                * r
                + 1.373_169_376_550_946e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
                + 3.930_789_580_009_271e4)
                * r
                + 2.121_379_430_158_659_7e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
                + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_8e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_8)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_049e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_88e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn same_spec_same_sequence() {
        let a = make_stream(SeedSpec::new(123, 0)).draw_uniform(100);
        let b = make_stream(SeedSpec::new(123, 0)).draw_uniform(100);
        assert_eq!(a, b);
    }

    #[test]
    fn different_stream_ids_differ() {
        let a = make_stream(SeedSpec::new(123, 0)).draw_uniform(10);
        let b = make_stream(SeedSpec::new(123, 1)).draw_uniform(10);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn schedule_independent() {
        let serial = make_stream(SeedSpec::new(123, 0)).draw_standard_normal(1000);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                std::thread::spawn(|| make_stream(SeedSpec::new(123, 0)).draw_standard_normal(1000))
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), serial);
        }
    }

    #[test]
    fn empty_draws() {
        let mut s = make_stream(SeedSpec::new(1, 1));
        assert!(s.draw_standard_normal(0).is_empty());
        assert!(s.draw_uniform(0).is_empty());
    }

    #[test]
    fn normal_draws_are_stream_linear() {
        let mut a = make_stream(SeedSpec::new(9, 4));
        let mut first = a.draw_standard_normal(5);
        first.extend(a.draw_standard_normal(5));
        let second = make_stream(SeedSpec::new(9, 4)).draw_standard_normal(10);
        assert_eq!(first, second);
    }

    #[test]
    fn normal_moments() {
        let xs = make_stream(SeedSpec::new(123, 7)).draw_standard_normal(1_000_000);
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.01, "mean {m}");
        assert!(v > 0.99 && v < 1.01, "var {v}");
    }

    #[test]
    fn uniform_moments_and_range() {
        let xs = make_stream(SeedSpec::new(123, 8)).draw_uniform(1_000_000);
        assert!(xs.iter().all(|&u| (0.0..1.0).contains(&u)));
        let (m, _) = mean_var(&xs);
        assert!(m > 0.499 && m < 0.501, "mean {m}");
    }

    #[test]
    fn inverse_cdf_reference_values() {
        // Reference quantiles of the standard normal.
        let cases = [
            (0.5, 0.0),
            (0.975, 1.959_963_984_540_054),
            (0.9, 1.281_551_565_544_600_4),
            (0.001, -3.090_232_306_167_813_5),
            (1e-10, -6.361_340_902_404_056),
        ];
        for (p, z) in cases {
            let got = inverse_normal_cdf(p);
            assert!(
                (got - z).abs() < 1e-9 * (1.0 + z.abs()),
                "p={p}: {got} vs {z}"
            );
        }
        for p in [0.01, 0.2, 0.37, 0.49] {
            assert!((inverse_normal_cdf(p) + inverse_normal_cdf(1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_exhaustive_is_permutation() {
        let mut s = make_stream(SeedSpec::new(5, 5));
        let mut idx = s.sample_without_replacement(5, 5).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sampling_large_population_distinct() {
        let mut s = make_stream(SeedSpec::new(5, 6));
        let idx = s.sample_without_replacement(1_000_000, 1000).unwrap();
        assert_eq!(idx.len(), 1000);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert!(idx.iter().all(|&i| i < 1_000_000));
    }

    #[test]
    fn sampling_too_many_is_error() {
        let mut s = make_stream(SeedSpec::new(5, 6));
        assert!(s.sample_without_replacement(3, 4).is_err());
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        // Same algorithm either way: compare the sparse table against a dense permutation.
        let mut a = make_stream(SeedSpec::new(77, 1));
        let sparse = a.sample_without_replacement(1000, 20).unwrap();
        let mut b = make_stream(SeedSpec::new(77, 1));
        let mut perm: Vec<usize> = (0..1000).collect();
        let dense: Vec<usize> = (0..20)
            .map(|i| {
                let j = i + b.below((1000 - i) as u64) as usize;
                perm.swap(i, j);
                perm[i]
            })
            .collect();
        assert_eq!(sparse, dense);
    }

    #[test]
    fn inclusion_frequency() {
        let (pop, k, trials) = (20usize, 5usize, 10_000usize);
        let mut counts = vec![0usize; pop];
        let mut s = make_stream(SeedSpec::new(321, 0));
        for _ in 0..trials {
            for i in s.sample_without_replacement(pop, k).unwrap() {
                counts[i] += 1;
            }
        }
        let p = k as f64 / pop as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - p).abs() < 3.0 * se, "freq {f}");
        }
    }

    #[test]
    fn chi_square_moments() {
        let mut s = make_stream(SeedSpec::new(123, 11));
        let xs: Vec<f64> = (0..1_000_000).map(|_| s.chi_square(10).unwrap()).collect();
        assert!(xs.iter().all(|&x| x > 0.0));
        let (m, v) = mean_var(&xs);
        assert!(m > 9.9 && m < 10.1, "mean {m}");
        assert!(v > 19.4 && v < 20.6, "var {v}");
    }

    #[test]
    fn chi_square_small_dof() {
        let mut s = make_stream(SeedSpec::new(1, 2));
        let xs: Vec<f64> = (0..200_000).map(|_| s.chi_square(1).unwrap()).collect();
        assert!(xs.iter().all(|&x| x > 0.0));
        let (m, v) = mean_var(&xs);
        assert!((m - 1.0).abs() < 0.02, "mean {m}");
        assert!((v - 2.0).abs() < 0.1, "var {v}");
        assert!(s.chi_square(0).is_err());
    }

    #[test]
    fn paired_streams_uncorrelated() {
        let a = make_stream(SeedSpec::new(42, 0)).draw_standard_normal(100_000);
        let b = make_stream(SeedSpec::new(42, 1)).draw_standard_normal(100_000);
        let n = a.len() as f64;
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (n - 1.0);
        let r = cov / (va * vb).sqrt();
        assert!(r.abs() < 0.01, "corr {r}");
    }

    #[test]
    fn stream_ids_depend_on_every_component() {
        let base = stream_id("pop", 3, Purpose::Sampling);
        assert_ne!(base, stream_id("pop", 4, Purpose::Sampling));
        assert_ne!(base, stream_id("pop", 3, Purpose::Amputation));
        assert_ne!(base, stream_id("pop2", 3, Purpose::Sampling));
        assert_eq!(base, stream_id("pop", 3, Purpose::Sampling));
    }
}
