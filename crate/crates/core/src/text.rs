use std::borrow::Cow;

/// Decodes file or wire bytes without transcoding: valid UTF-8 is taken as-is,
/// anything else is read byte-for-byte as ISO-8859-1.
pub fn decode_bytes(bytes: &[u8]) -> Cow<'_, str> {
    match std::str::from_utf8(bytes) {
        Ok(s) => Cow::Borrowed(s),
        Err(_) => Cow::Owned(bytes.iter().map(|&b| b as char).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utf8_and_latin1() {
        assert_eq!(decode_bytes("Pas présent".as_bytes()), "Pas présent");
        assert_eq!(decode_bytes(b"Pas pr\xe9sent"), "Pas présent");
        assert!(matches!(decode_bytes(b"ascii"), Cow::Borrowed(_)));
    }
}
