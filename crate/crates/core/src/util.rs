//! Small shared helpers: stable hashing for seed derivation and CSV escaping.

/// FNV-1a over a byte slice. Used wherever the crate needs a hash that is
/// stable across platforms and versions (seed derivation, train/test splits,
/// cache keys). Not a general-purpose hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes a seed with a sequence of byte-slice parts into one derived seed.
pub fn derive_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = fnv1a(&seed.to_le_bytes());
    for part in parts {
        // Length prefix keeps ("ab","c") distinct from ("a","bc").
        h ^= fnv1a(&(part.len() as u64).to_le_bytes());
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        h ^= fnv1a(part);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Escapes one CSV field: quotes it when it contains a comma, quote or
/// newline, doubling embedded quotes.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Linear-interpolation quantile (the R type-7 rule) over already sorted
/// data. `p` in [0, 1]. Panics on empty input.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}
