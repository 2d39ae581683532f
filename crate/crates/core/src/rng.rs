//! Deterministic, splittable random streams.
//!
//! Every stochastic choice in a simulation draws from a stream derived from
//! `(master_seed, purpose_tag, index_a, index_b)`. Streams keyed by logical
//! indices (round, client, sample) rather than by execution order make the
//! results independent of thread count and evaluation cadence.
//!
//! The generator is SplitMix64: a Weyl counter fed through a 64-bit finalizer,
//! period 2^64.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A counter-based pseudo-random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RngStream {
    state: u64,
    spare_normal: Option<f64>,
}

impl RngStream {
    /// Stream seeded directly from a 64-bit value.
    pub fn from_seed(seed: u64) -> Self {
        RngStream {
            state: mix64(seed ^ GOLDEN_GAMMA),
            spare_normal: None,
        }
    }

    /// Derive the stream for a `(master, tag, a, b)` tuple.
    pub fn derive(master: u64, tag: &str, a: u64, b: u64) -> Self {
        let mut h = mix64(master.wrapping_add(GOLDEN_GAMMA));
        h = mix64(h ^ fnv1a(tag.as_bytes()));
        h = mix64(h ^ a.wrapping_mul(0xd1b5_4a32_d192_ed03));
        h = mix64(h ^ b.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7));
        RngStream {
            state: h,
            spare_normal: None,
        }
    }

    /// Child stream keyed by this stream's next output; used where a caller
    /// hands one stream to a routine that needs several independent ones.
    pub fn split(&mut self, tag: &str, index: u64) -> Self {
        let key = self.next_u64();
        RngStream::derive(key, tag, index, 0)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`.
    #[inline]
    fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, unbiased (Lemire's method).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal draw (Box–Muller, second variate cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Gamma(shape, 1) draw.
    ///
    /// Marsaglia–Tsang squeeze for `shape >= 1`; for `shape < 1` a
    /// Gamma(shape + 1) draw is scaled by `U^(1/shape)`.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0 && shape.is_finite(), "gamma shape must be positive");
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            return g * self.uniform_open0().powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform_open0();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Dirichlet draw via normalized Gamma variates. A draw whose Gamma
    /// variates all underflow to zero is resampled.
    pub fn dirichlet(&mut self, alpha: &[f64]) -> Vec<f64> {
        assert!(!alpha.is_empty(), "dirichlet needs at least one coordinate");
        loop {
            let g: Vec<f64> = alpha.iter().map(|&a| self.gamma(a)).collect();
            let total: f64 = g.iter().sum();
            if total > 0.0 && total.is_finite() {
                return g.into_iter().map(|x| x / total).collect();
            }
        }
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// A random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n} without replacement");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
