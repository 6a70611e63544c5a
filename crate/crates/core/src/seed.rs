//! Sub-seed derivation: every random stream is a fixed hash of a root seed,
//! a purpose label and an index, so streams are independent of call order.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Seed of stream `index` for `label` under `root`.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(label.as_bytes())) ^ splitmix64(index))
}
