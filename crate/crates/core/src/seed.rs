/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for (`base`, `stream`, `index`); used so that env
/// serves, weight init and action sampling never share a generator.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03)) ^ index)
}

pub const STREAM_INIT: u64 = 1;
pub const STREAM_ENV: u64 = 2;
pub const STREAM_SAMPLING: u64 = 3;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_do_not_collide() {
        let mut seen = std::collections::HashSet::new();
        for stream in 0..4 {
            for index in 0..1000 {
                assert!(seen.insert(derive_seed(42, stream, index)));
            }
        }
    }
}
