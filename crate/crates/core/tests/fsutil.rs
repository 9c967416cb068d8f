use std::io::Write;

use ctglab_core::fsutil::*;
use ctglab_core::Error;

#[test]
fn failed_write_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.bin");
    let err = write_atomic(&path, |w| {
        w.write_all(b"partial")?;
        Err(Error::Data("boom".into()))
    });
    assert!(err.is_err());
    assert!(!path.exists());
    assert!(!dir.path().join("out.bin.tmp").exists());
    write_bytes_atomic(&path, b"ok").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"ok");
}

#[test]
fn creates_missing_parents() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a/b/out.bin");
    write_bytes_atomic(&path, b"x").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"x");
}
