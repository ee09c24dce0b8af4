//! Word splitting shared by the statistics tokenizer and the model vocabulary.
//!
//! Text is split on whitespace, and every punctuation character becomes a
//! token of its own. Bracketed special tokens such as `[SPLIT]` or `[P3]`
//! survive as single pieces.

use std::sync::OnceLock;

use regex::Regex;

fn piece_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[(?:PAD|UNK|SPLIT|SEP|P[0-5])\]|[\p{Alphabetic}\p{N}_]+|[^\s\p{Alphabetic}\p{N}_]")
            .expect("static regex")
    })
}

/// Splits `text` into word and punctuation pieces, preserving case.
pub fn pieces(text: &str) -> Vec<&str> {
    piece_regex().find_iter(text).map(|m| m.as_str()).collect()
}

/// Number of pieces in `text`; the token count used for corpus statistics.
pub fn token_count(text: &str) -> usize {
    piece_regex().find_iter(text).count()
}

/// Removes control characters other than newline.
pub fn strip_controls(text: &str) -> String {
    text.chars().filter(|&c| c == '\n' || !c.is_control()).collect()
}

/// Trims and lowercases a name, collapsing runs of internal whitespace.
pub fn fold_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// 64-bit FNV-1a, used to derive stable seeds from strings.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Mixes two seeds into one (splitmix64 finalizer over the xor).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
