use ctglab_core::tokenizer::*;
use proptest::prelude::*;

#[test]
fn encodes_bytes() {
    assert_eq!(ByteTokenizer.encode("ab"), vec![97, 98]);
    assert_eq!(ByteTokenizer.encode("é"), vec![0xc3, 0xa9]);
}

#[test]
fn labels() {
    let t = ByteTokenizer;
    assert_eq!(t.token_label(97), "a");
    assert_eq!(t.token_label(10), "<0x0a>");
    assert_eq!(t.token_label(SEPARATOR), "<sep>");
}

proptest! {
    #[test]
    fn round_trip_is_identity(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let ids = ByteTokenizer.encode(&bytes);
        prop_assert!(ids.iter().all(|&i| i < VOCAB_SIZE));
        prop_assert_eq!(ByteTokenizer.decode(&ids), bytes);
    }
}
