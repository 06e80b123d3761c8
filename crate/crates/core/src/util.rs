//! Small shared helpers: stable hashing, seeded RNGs, atomic file writes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Hex SHA-256 over `parts`, each length-prefixed so that `("ab","c")` and
/// `("a","bc")` differ.
pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// First eight bytes of the SHA-256 of `parts`, little-endian.
pub fn stable_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// RNG keyed by a run seed plus any number of labels.
pub fn rng_for(seed: u64, labels: &[&[u8]]) -> ChaCha8Rng {
    let mut parts: Vec<&[u8]> = Vec::with_capacity(labels.len() + 1);
    let s = seed.to_le_bytes();
    parts.push(&s);
    parts.extend_from_slice(labels);
    ChaCha8Rng::seed_from_u64(stable_u64(&parts))
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Runs `f` while holding an exclusive lock on `<dir>/.lock`.
pub fn with_dir_lock<T>(dir: &Path, f: impl FnOnce() -> std::io::Result<T>) -> std::io::Result<T> {
    fs::create_dir_all(dir)?;
    let lock = fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(dir.join(".lock"))?;
    lock.lock()?;
    let out = f();
    lock.unlock()?;
    out
}

pub fn whitespace_len(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps at most `max` whitespace tokens, re-joined by single spaces.
pub fn truncate_tokens(text: &str, max: usize) -> String {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() <= max {
        text.to_string()
    } else {
        toks[..max].join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_length_prefixed() {
        assert_ne!(sha256_hex(&[b"ab", b"c"]), sha256_hex(&[b"a", b"bc"]));
        assert_eq!(sha256_hex(&[b"x"]), sha256_hex(&[b"x"]));
    }

    #[test]
    fn truncation_caps_tokens() {
        assert_eq!(truncate_tokens("a b  c d", 2), "a b");
        assert_eq!(truncate_tokens("a  b", 5), "a  b");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.json");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
    }
}
