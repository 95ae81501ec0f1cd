//! Seeded pseudo-random numbers.
//!
//! The generator is xorshift64* (Marsaglia's xorshift with shifts 12/25/27
//! followed by multiplication with `0x2545F4914F6CDD1D`). Seeds pass through
//! one round of splitmix64 so that small or zero seeds still give a non-zero
//! state. Floats take the top 53 bits of each draw, which makes every sequence
//! identical on every platform.

const XORSHIFT_MUL: u64 = 0x2545_F491_4F6C_DD1D;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of `s`.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let state = splitmix64(seed);
        Rng {
            state: if state == 0 { XORSHIFT_MUL } else { state },
        }
    }

    /// Independent stream keyed by a name, e.g. a parameter name.
    pub fn keyed(seed: u64, key: &str) -> Self {
        Rng::new(seed ^ splitmix64(fnv1a(key)))
    }

    /// Restores a generator from a value previously returned by [`Rng::state`].
    pub fn from_state(state: u64) -> Self {
        Rng {
            state: if state == 0 { XORSHIFT_MUL } else { state },
        }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MUL)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (one of the pair is discarded).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`, `n > 0`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Hand-run of the generator for seed 7: splitmix64(7) then two xorshift64* steps.
    fn reference_draws(seed: u64, n: usize) -> Vec<f64> {
        let mut z = seed.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        let mut s = z ^ (z >> 31);
        (0..n)
            .map(|_| {
                s ^= s >> 12;
                s ^= s << 25;
                s ^= s >> 27;
                let out = s.wrapping_mul(0x2545F4914F6CDD1D);
                -1.0 + 2.0 * ((out >> 11) as f64 / 9007199254740992.0)
            })
            .collect()
    }

    #[test]
    fn seed_seven_fixture() {
        let mut rng = Rng::new(7);
        let got = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
        assert_eq!(got.to_vec(), reference_draws(7, 2));
        // Frozen values of the two draws.
        assert_eq!(got, [-0.8365888809927888, -0.48347120732218873]);
        for v in got {
            assert!((-1.0..1.0).contains(&v));
        }
    }

    #[test]
    fn reseeding_reproduces() {
        let a: Vec<u64> = {
            let mut r = Rng::new(42);
            (0..100).map(|_| r.next_u64()).collect()
        };
        let mut r = Rng::new(42);
        let b: Vec<u64> = (0..100).map(|_| r.next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn state_round_trip() {
        let mut r = Rng::new(3);
        r.next_u64();
        let mut s = Rng::from_state(r.state());
        assert_eq!(r.next_u64(), s.next_u64());
    }

    #[test]
    fn keyed_streams_differ() {
        let mut a = Rng::keyed(1, "enc.0.wq");
        let mut b = Rng::keyed(1, "enc.0.wk");
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn below_in_range() {
        let mut r = Rng::new(9);
        for n in 1..50 {
            assert!(r.below(n) < n);
        }
    }
}
