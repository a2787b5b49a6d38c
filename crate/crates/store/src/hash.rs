use sha2::{Digest, Sha256};

/// Strips trailing whitespace from every line and normalizes line endings
/// to LF, so the same table hashes the same across platforms.
pub fn canonicalize(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out.into_bytes()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn canonical_form() {
        assert_eq!(canonicalize(b"a, \r\nb\t\n\n"), b"a,\nb\n\n");
        assert_eq!(canonicalize(b"a"), b"a\n");
    }
}
