//! Small shared helpers for the IO layer.

/// FNV-1a over a byte slice; used to fingerprint blobs and media files.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Continues an FNV-1a accumulation (same constants as [`fnv1a`]).
pub fn fnv1a_continue(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// FNV-1a offset basis, for multi-part accumulation via [`fnv1a_continue`].
pub const FNV_OFFSET: u64 = 0xcbf29ce484222325;
