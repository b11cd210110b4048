//! `.nnz` named-tensor archives.
//!
//! Layout: magic `NNZ1`, a little-endian `u64` byte length of the JSON index,
//! the index itself (`{"<name>": {"offset": <u64>, "shape": [..]}, ...}`), then
//! the payload: one `TSR1` record per tensor, concatenated. Offsets are byte
//! positions of each record relative to the start of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{ParamSpec, ParamStore};
use crate::tensor::Tensor;

pub const NNZ_MAGIC: &[u8; 4] = b"NNZ1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub offset: u64,
    pub shape: Vec<usize>,
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut index = BTreeMap::new();
    let mut payload = Vec::new();
    for (spec, t) in store.specs().iter().zip(store.tensors()) {
        index.insert(
            spec.name.clone(),
            IndexEntry {
                offset: payload.len() as u64,
                shape: t.shape().to_vec(),
            },
        );
        t.write_tsr1(&mut payload).expect("writing to a Vec cannot fail");
    }
    let json = serde_json::to_vec(&index).expect("index serialises");
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(NNZ_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Parses an archive into its named tensors.
pub fn decode(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    if bytes.len() < 12 || &bytes[..4] != NNZ_MAGIC {
        return Err(Error::Format("not an NNZ1 archive".into()));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Format("truncated archive index".into()))?;
    let index: BTreeMap<String, IndexEntry> =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("bad archive index: {e}")))?;
    let payload = &bytes[12 + len..];
    let mut out = BTreeMap::new();
    for (name, entry) in index {
        let rec = payload
            .get(entry.offset as usize..)
            .ok_or_else(|| Error::Format(format!("offset of `{name}` lies past the payload")))?;
        let t = Tensor::read_tsr1(rec).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?} but the index says {:?}",
                t.shape(),
                entry.shape
            )));
        }
        out.insert(name, t);
    }
    Ok(out)
}

/// Builds a store for `specs` from archive bytes; every declared name must be present
/// with a matching shape and the archive may not hold extra names.
pub fn load(bytes: &[u8], specs: &[ParamSpec]) -> Result<ParamStore> {
    let mut tensors = decode(bytes)?;
    let mut ordered = Vec::with_capacity(specs.len());
    for spec in specs {
        let t = tensors
            .remove(&spec.name)
            .ok_or_else(|| Error::Format(format!("archive is missing parameter `{}`", spec.name)))?;
        if t.shape() != spec.shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter `{}` has shape {:?} in the archive, config expects {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
        ordered.push(t);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("archive holds unexpected parameter `{extra}`")));
    }
    ParamStore::from_parts(specs.to_vec(), ordered)
}

pub fn save_file(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Init, ParamBuilder};

    fn store() -> ParamStore {
        let mut pb = ParamBuilder::new();
        pb.declare("a.weight", &[2, 3], Init::TruncNormal(0.02));
        pb.declare("a.bias", &[3], Init::Constant(0.25));
        pb.build(3)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let back = load(&encode(&s), s.specs()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode(&store());
        for cut in [3, 11, 20, bytes.len() - 1] {
            assert!(matches!(load(&bytes[..cut], store().specs()), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn missing_and_extra_names_are_reported() {
        let s = store();
        let mut pb = ParamBuilder::new();
        pb.declare("a.weight", &[2, 3], Init::Zeros);
        pb.declare("a.bias", &[3], Init::Zeros);
        pb.declare("b.weight", &[1], Init::Zeros);
        let err = load(&encode(&s), pb.specs()).unwrap_err().to_string();
        assert!(err.contains("b.weight"), "{err}");

        let mut pb = ParamBuilder::new();
        pb.declare("a.weight", &[2, 3], Init::Zeros);
        let err = load(&encode(&s), pb.specs()).unwrap_err().to_string();
        assert!(err.contains("a.bias"), "{err}");
    }
}
