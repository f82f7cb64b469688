use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counter-based generator used for every stochastic choice.
pub type StreamRng = ChaCha8Rng;

/// FNV-1a over the label bytes; fixed across platforms and toolchains.
pub fn stream_seed(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Generator for `(run seed, stream label)`.
///
/// The run seed keys the ChaCha state and the label selects the stream, so
/// two labels never share output and adding a new consumer never perturbs
/// an existing one.
pub fn stream_rng(seed: u64, label: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_seed(label));
    rng
}

/// `n` draws from `Uniform[lo, hi)`.
pub fn uniform_vec(rng: &mut StreamRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect()
}
