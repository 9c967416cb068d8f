//! Token corpora and their on-disk format (integers little-endian):
//!
//! ```text
//! magic "CTGLABCP" | version u32 | vocab_size u32 | doc_count u64
//! then per document: split u8 (0 train, 1 valid, 2 test) | len u64 | ids u32 × len
//! ```

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tokenizer::{ByteTokenizer, SEPARATOR, VOCAB_SIZE};

pub const CORPUS_MAGIC: &[u8; 8] = b"CTGLABCP";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Valid),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}` (train|valid|test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.9,
            valid: 0.05,
            test: 0.05,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::config(format!("split fractions must lie in [0, 1], got {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions must sum to 1, got {total}")));
        }
        Ok(())
    }

    /// Assigns a document by a uniform draw derived from its SHA-256 digest.
    pub fn assign(&self, document: &[u8]) -> Split {
        let digest = Sha256::digest(document);
        let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        let u = (head >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.train {
            Split::Train
        } else if u < self.train + self.valid {
            Split::Valid
        } else {
            Split::Test
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub split: Split,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    vocab_size: usize,
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(vocab_size: usize, documents: Vec<Document>) -> Result<Self> {
        for (i, doc) in documents.iter().enumerate() {
            if doc.tokens.is_empty() {
                return Err(Error::data(format!("document {i} is empty")));
            }
            if let Some(&id) = doc.tokens.iter().find(|&&t| t >= vocab_size) {
                return Err(Error::Index {
                    op: "corpus",
                    id,
                    bound: vocab_size,
                });
            }
        }
        Ok(Self {
            vocab_size,
            documents,
        })
    }

    /// Byte-tokenizes blank-line-delimited documents and assigns splits by
    /// document hash.
    pub fn from_text(text: &str, fractions: SplitFractions) -> Result<Self> {
        fractions.validate()?;
        let tokenizer = ByteTokenizer;
        let documents: Vec<Document> = split_documents(text)
            .into_iter()
            .map(|doc| Document {
                split: fractions.assign(doc.as_bytes()),
                tokens: tokenizer.encode(&doc),
            })
            .collect();
        if documents.is_empty() {
            return Err(Error::data("empty corpus"));
        }
        Self::new(VOCAB_SIZE, documents)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &[usize]> {
        self.documents
            .iter()
            .filter(move |d| d.split == split)
            .map(|d| d.tokens.as_slice())
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Documents of one split joined by [`SEPARATOR`].
    pub fn token_stream(&self, split: Split) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, doc) in self.split(split).enumerate() {
            if i > 0 {
                out.push(SEPARATOR);
            }
            out.extend_from_slice(doc);
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CORPUS_MAGIC)?;
        w.write_all(&CORPUS_VERSION.to_le_bytes())?;
        w.write_all(&(self.vocab_size as u32).to_le_bytes())?;
        w.write_all(&(self.documents.len() as u64).to_le_bytes())?;
        for doc in &self.documents {
            w.write_all(&[doc.split.tag()])?;
            w.write_all(&(doc.tokens.len() as u64).to_le_bytes())?;
            for &t in &doc.tokens {
                w.write_all(&(t as u32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |what: &str| Error::data(format!("corrupt corpus file: {what}"));
        let mut take = |n: usize, what: &str| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|_| bad(what))?;
            Ok(buf)
        };
        if take(8, "magic")? != CORPUS_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
        if version != CORPUS_VERSION {
            return Err(Error::data(format!(
                "unsupported corpus format version {version} (expected {CORPUS_VERSION})"
            )));
        }
        let vocab_size = u32::from_le_bytes(take(4, "vocab size")?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8, "document count")?.try_into().unwrap());
        let mut documents = Vec::new();
        for _ in 0..count {
            let split = Split::from_tag(take(1, "split tag")?[0]).ok_or_else(|| bad("unknown split tag"))?;
            let len = u64::from_le_bytes(take(8, "document length")?.try_into().unwrap()) as usize;
            if len > 1 << 32 {
                return Err(bad("implausible document length"));
            }
            let raw = take(len * 4, "token ids")?;
            let tokens = raw
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
                .collect();
            documents.push(Document { split, tokens });
        }
        Self::new(vocab_size, documents)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, |w| self.write_to(w))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// Splits text into blank-line-delimited documents, dropping empty ones.
pub fn split_documents(text: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                docs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        docs.push(current.join("\n"));
    }
    docs
}
