//! Seeded pseudo-random stream.
//!
//! The generator is xorshift64* (Vigna, 2014) with its state seeded through
//! one round of SplitMix64, so every 64-bit seed (including zero) yields a
//! nonzero state. Gaussians come from the Box–Muller transform; the second
//! variate of each pair is cached. Only integer shifts, xors and wrapping
//! multiplies feed the stream, so it is bit-identical on every platform.
//! Not suitable for cryptographic use.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut state = splitmix64(seed);
        if state == 0 {
            state = GOLDEN_GAMMA;
        }
        Self { state, spare: None }
    }

    /// Independent stream number `stream` under `seed`. Used to give each
    /// trial of a sweep its own reproducible stream.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(stream.wrapping_mul(GOLDEN_GAMMA))))
    }

    /// Splits off a child stream; the parent advances by one draw.
    pub fn split(&mut self) -> Self {
        let s = self.next_u64();
        Self::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in the half-open interval (0, 1].
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }
}
