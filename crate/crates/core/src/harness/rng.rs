//! Seeded generators with fully specified update rules, so planted corpora
//! can be regenerated bit-for-bit in any language.
//!
//! * [`SplitMix64`]: `s += 0x9E3779B97F4A7C15; z = s;
//!   z = (z ^ z>>30) * 0xBF58476D1CE4E5B9; z = (z ^ z>>27) * 0x94D049BB133111EB;
//!   return z ^ z>>31` (all arithmetic wrapping mod 2^64).
//! * [`Xoshiro256StarStar`]: state `s0..s3` filled by four SplitMix64 draws
//!   from the seed. Output `rotl(s1 * 5, 7) * 9`, then `t = s1 << 17;
//!   s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)`.
//! * `uniform()`: `(x >> 11) * 2^-53`, in `[0, 1)`.
//! * `gaussian()`: Box–Muller cosine branch only. `u1 = ((x1 >> 11) + 1) * 2^-53`
//!   (in `(0, 1]`) from the first draw, `u2 = uniform()` from the second,
//!   result `sqrt(-2 ln u1) * cos(2π u2)`. Each call consumes exactly two draws.
//! * `below(n)`: `(x * n) >> 64` in 128-bit arithmetic.
//!
//! `ln`, `cos`, and `sin` come from `libm`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone)]
pub struct Xoshiro256StarStar {
    s: [u64; 4],
}

impl Xoshiro256StarStar {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        Self {
            s: [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()],
        }
    }

    /// Independent stream for one `(layer, head)` of a seeded corpus:
    /// seeded with `seed ^ splitmix64_first((layer << 32) | head)`.
    pub fn for_head(seed: u64, layer: usize, head: usize) -> Self {
        let tag = ((layer as u64) << 32) | head as u64;
        Self::seed_from_u64(seed ^ SplitMix64::new(tag).next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// `k` distinct values from `0..n`, ascending, by a partial Fisher–Yates
    /// shuffle: for `i in 0..k`, swap slot `i` with slot `i + below(n - i)`.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool.sort_unstable();
        pool
    }
}
