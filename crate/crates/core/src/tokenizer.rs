//! Byte-level tokenizer: ids `0..256` are raw bytes, followed by two
//! reserved specials.

/// Document separator used when corpora are concatenated for training.
pub const SEPARATOR: usize = 256;
pub const PAD: usize = 257;
pub const VOCAB_SIZE: usize = 258;

#[derive(Clone, Copy, Debug, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn encode(&self, text: impl AsRef<[u8]>) -> Vec<usize> {
        text.as_ref().iter().map(|&b| b as usize).collect()
    }

    /// Byte ids map back to their bytes, the separator to `\n`, padding to nothing.
    pub fn decode(&self, ids: &[usize]) -> Vec<u8> {
        ids.iter()
            .filter_map(|&id| match id {
                0..=255 => Some(id as u8),
                SEPARATOR => Some(b'\n'),
                _ => None,
            })
            .collect()
    }

    pub fn decode_lossy(&self, ids: &[usize]) -> String {
        String::from_utf8_lossy(&self.decode(ids)).into_owned()
    }

    /// Human-readable label for a single token (used in CSV headers).
    pub fn token_label(&self, id: usize) -> String {
        match id {
            SEPARATOR => "<sep>".into(),
            PAD => "<pad>".into(),
            0x21..=0x7e => (id as u8 as char).to_string(),
            0x20 => "\u{2423}".into(),
            0..=255 => format!("<0x{id:02x}>"),
            _ => format!("<{id}>"),
        }
    }
}
