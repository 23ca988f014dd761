//! FNV-1a 64-bit hashing used for partition routing, etags and variant choice.

const OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(OFFSET_BASIS, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(PRIME)
    })
}

/// Hashes several string parts with a unit separator between them so that
/// `("ab", "c")` and `("a", "bc")` differ.
pub fn fnv1a64_parts<I, S>(parts: I) -> u64
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut hash = OFFSET_BASIS;
    for (i, part) in parts.into_iter().enumerate() {
        if i > 0 {
            hash = (hash ^ 0x1f).wrapping_mul(PRIME);
        }
        for b in part.as_ref() {
            hash = (hash ^ u64::from(*b)).wrapping_mul(PRIME);
        }
    }
    hash
}

/// Hex etag for a byte payload.
pub fn etag(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}
