//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, domain, replication, index)`. The first
//! three select a ChaCha8 key, the index selects the ChaCha stream, so any
//! observation can be regenerated in isolation and results never depend on
//! the order in which workers pick up replications.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes that must never share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Training = 1,
    Subject = 2,
    Replication = 3,
    Check = 4,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key(seed: u64, domain: Domain, replication: u64) -> [u8; 32] {
    let mut state = seed ^ (domain as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let _ = splitmix64(&mut state);
    state ^= replication.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7);
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

/// Generator for one observation (or one logical unit) of a stream.
pub fn stream(seed: u64, domain: Domain, replication: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key(seed, domain, replication));
    rng.set_stream(index);
    rng
}

/// Seed for replication `rep` of an experiment driven by `master`.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    let mut state = master ^ 0xA076_1D64_78BD_642F;
    state = state.wrapping_add(rep.wrapping_mul(0xE703_7ED1_A0B4_28DB));
    let _ = splitmix64(&mut state);
    splitmix64(&mut state)
}
