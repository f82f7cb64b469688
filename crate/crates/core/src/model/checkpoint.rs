//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "LRLSTM1\0"
//! meta_len   u64       byte length of the metadata block
//! metadata   UTF-8     JSON object: format, variant, dims, vocab hash,
//!                      vocabulary, word lists
//! sections   u32       number of parameter sections
//! per section:
//!   name_len u32, name UTF-8
//!   rank     u32, dims rank × u64
//!   count    u64       element count; must equal the product of dims
//!   data     count × f32 (IEEE-754)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelDims, ModelParams, Variant};
use crate::error::{Error, Result};
use crate::numeric::ParamStore;
use crate::resources::{Vocab, WordLists};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LRLSTM1\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    variant: String,
    hidden: usize,
    embed: usize,
    classes: usize,
    vocab_hash: String,
    vocab: Vec<String>,
    negators: Vec<String>,
    intensifiers: Vec<String>,
}

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let meta = Metadata {
        format_version: FORMAT_VERSION,
        variant: params.variant.name().to_string(),
        hidden: params.dims.hidden,
        embed: params.dims.embed,
        classes: params.dims.classes,
        vocab_hash: format!("{:016x}", params.vocab.fingerprint()),
        vocab: params.vocab.words().to_vec(),
        negators: params.lists.negators().to_vec(),
        intensifiers: params.lists.intensifiers().to_vec(),
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(params.store.len() as u32).to_le_bytes());
    for (_, block) in params.store.iter() {
        out.extend_from_slice(&(block.name.len() as u32).to_le_bytes());
        out.extend_from_slice(block.name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(block.rows as u64).to_le_bytes());
        out.extend_from_slice(&(block.cols as u64).to_le_bytes());
        out.extend_from_slice(&(block.data.len() as u64).to_le_bytes());
        for &v in &block.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(section, format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    fn len(&mut self, section: &str) -> Result<usize> {
        usize::try_from(self.u64(section)?).map_err(|_| Error::format(section, "length overflows"))
    }
}

/// Parses a checkpoint, re-widening every value to 64 bits. Nothing is
/// returned unless the whole file validates.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("magic", "not an LRLSTM1 checkpoint"));
    }
    let meta_len = r.len("metadata")?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::format("metadata", e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(
            "metadata",
            format!("unsupported format version {}", meta.format_version),
        ));
    }
    let variant: Variant = meta
        .variant
        .parse()
        .map_err(|e: Error| Error::format("metadata", e.to_string()))?;
    let vocab = Vocab::from_stored(meta.vocab)?;
    if format!("{:016x}", vocab.fingerprint()) != meta.vocab_hash {
        return Err(Error::format("metadata", "vocabulary hash mismatch"));
    }
    let lists = WordLists::new(meta.negators, meta.intensifiers)
        .map_err(|e| Error::format("metadata", e.to_string()))?;

    let count = r.u32("sections")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let header = format!("section #{i}");
        let name_len = r.u32(&header)? as usize;
        let name = std::str::from_utf8(r.take(name_len, &header)?)
            .map_err(|_| Error::format(&header, "name is not UTF-8"))?
            .to_string();
        let rank = r.u32(&name)?;
        if rank != 2 {
            return Err(Error::format(&name, format!("rank {rank}, expected 2")));
        }
        let rows = r.len(&name)?;
        let cols = r.len(&name)?;
        let n = r.len(&name)?;
        if rows.checked_mul(cols) != Some(n) {
            return Err(Error::format(&name, format!("length guard {n} does not match {rows}x{cols}")));
        }
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(&name, "length overflows"))?, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let sparse = name == "embed";
        store
            .add(name.clone(), rows, cols, data, sparse)
            .map_err(|e| Error::format(&name, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailer", format!("{} unexpected bytes", bytes.len() - r.pos)));
    }
    let dims = ModelDims {
        hidden: meta.hidden,
        embed: meta.embed,
        classes: meta.classes,
    };
    ModelParams::from_store(store, vocab, lists, dims, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resources::EmbeddingTable;

    fn model() -> ModelParams {
        let vocab = Vocab::from_words(["good", "film", "not"]);
        let emb = EmbeddingTable::random(vocab, 4, 2);
        ModelParams::init(2, Variant::BiLstm, 3, 5, &WordLists::default(), emb).unwrap()
    }

    #[test]
    fn roundtrip_is_quantization() {
        let p = model();
        let back = read_checkpoint(&write_checkpoint(&p)).unwrap();
        assert_eq!(back, p.quantized());
        // A second round trip is exact.
        assert_eq!(read_checkpoint(&write_checkpoint(&back)).unwrap(), back);
    }

    #[test]
    fn layout_starts_with_magic() {
        let bytes = write_checkpoint(&model());
        assert_eq!(&bytes[..8], b"LRLSTM1\0");
    }

    #[test]
    fn truncation_names_the_section() {
        let bytes = write_checkpoint(&model());
        let err = read_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Format { section, .. } => assert!(section.starts_with("int."), "{section}"),
            other => panic!("{other:?}"),
        }
        let err = read_checkpoint(&bytes[..20]).unwrap_err();
        assert!(matches!(err, Error::Format { ref section, .. } if section == "metadata"), "{err}");
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut bytes = write_checkpoint(&model());
        bytes.push(0);
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Format { ref section, .. }) if section == "trailer"));
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Format { ref section, .. }) if section == "magic"));
    }
}
