//! Reproducible random streams.
//!
//! Every stochastic component draws from a `ChaCha8Rng`. The key is derived
//! from the master seed and a purpose tag, and the replicate index selects
//! one of the 2^64 independent ChaCha streams under that key. Results are
//! therefore identical regardless of how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags keep streams used for different jobs disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Graph,
    Forward,
    Backward,
    Branching,
    Seeds,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Graph => 0x6772_6170_6800,
            Purpose::Forward => 0x666f_7277_6172,
            Purpose::Backward => 0x6261_636b_7761,
            Purpose::Branching => 0x6272_616e_6368,
            Purpose::Seeds => 0x7365_6564_7300,
            Purpose::Test => 0x7465_7374_0000,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `index` for `purpose` under `master_seed`.
pub fn stream(master_seed: u64, purpose: Purpose, index: u64) -> SimRng {
    let key = splitmix64(splitmix64(master_seed) ^ purpose.tag());
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
