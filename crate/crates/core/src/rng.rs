use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent generator from a run seed and a path of stream tags.
pub(crate) fn stream(seed: u64, tags: &[u64]) -> Rng {
    let key = tags
        .iter()
        .fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)));
    ChaCha8Rng::seed_from_u64(key)
}

// Stream tags; distinct constants keep sub-streams disjoint.
pub(crate) const TAG_TRAIN: u64 = 0x74_7261_696e;
pub(crate) const TAG_SAMPLE_NOISE: u64 = 0x6e_6f69_7365;
pub(crate) const TAG_SAMPLE_ROOT: u64 = 0x726f_6f74;
pub(crate) const TAG_INIT: u64 = 0x696e_6974;
pub(crate) const TAG_DATA: u64 = 0x6461_7461;
pub(crate) const TAG_VALUES: u64 = 0x7661_6c75_6573;
pub(crate) const TAG_TRUTH: u64 = 0x74_7275_7468;
pub(crate) const TAG_GENERATE: u64 = 0x67_656e;

/// A derived seed for handing to APIs that take a plain `u64`.
pub(crate) fn derive(seed: u64, tags: &[u64]) -> u64 {
    use rand::Rng as _;
    stream(seed, tags).random()
}
