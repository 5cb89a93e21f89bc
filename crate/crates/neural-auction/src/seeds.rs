//! Seed fan-out.
//!
//! Every run takes one root seed. Sub-streams (data generation, parameter
//! init, per-epoch shuffles, ...) derive their own seed as
//! `splitmix64(root ^ fnv1a64(label))`, so adding a new consumer never
//! shifts the draws of an existing one.

/// FNV-1a 64-bit hash of a label.
fn fnv1a64(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for the sub-stream named `label`.
pub fn child(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a64(label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_separate_streams() {
        assert_ne!(child(7, "init"), child(7, "shuffle-0"));
        assert_ne!(child(7, "init"), child(8, "init"));
        assert_eq!(child(7, "init"), child(7, "init"));
    }
}
