//! Seed-stream derivation.
//!
//! Every random stream in a run is a ChaCha8 instance keyed by the master
//! seed and selected by a 64-bit stream id built from (purpose, replicate,
//! chain). ChaCha streams with a common key and distinct stream ids are
//! independent, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for. Keeps data generation, accrual and MCMC
/// streams of the same replicate disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Chain = 1,
    Data = 2,
    Accrual = 3,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_from_master(master: u64) -> [u8; 32] {
    let mut state = master;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Stream id layout: purpose in the top byte, replicate in the next 40 bits,
/// sub-index (chain or analysis) in the low 16 bits.
pub fn stream_id(purpose: Purpose, replicate: u64, sub: u64) -> u64 {
    debug_assert!(replicate < (1 << 40));
    debug_assert!(sub < (1 << 16));
    ((purpose as u64) << 56) | ((replicate & ((1 << 40) - 1)) << 16) | (sub & 0xFFFF)
}

pub fn stream(master: u64, purpose: Purpose, replicate: u64, sub: u64) -> SimRng {
    let mut rng = ChaCha8Rng::from_seed(key_from_master(master));
    rng.set_stream(stream_id(purpose, replicate, sub));
    rng
}

/// Per-replicate master seed used when a replicate itself runs a multi-chain
/// fit or a whole trial.
pub fn replicate_seed(master: u64, replicate: u64) -> u64 {
    let mut state = master ^ replicate.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut state)
}
