//! Binary checkpoint layout:
//!
//! ```text
//! u32 LE   format version
//! u64 LE   manifest length in bytes
//! manifest UTF-8 lines, tab separated:
//!            meta   <key>  <value>
//!            param  <name> <tag> f64 <d1>x<d2>...
//! blocks   one little-endian row-major f64 block per `param` line, in order
//! ```

use std::io::{Read, Write};

use super::params::{Component, ParameterStore};
use super::tensor::Tensor;
use crate::error::{AcgError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub store: ParameterStore,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_checkpoint<W: Write>(mut out: W, meta: &[(String, String)], store: &ParameterStore) -> Result<()> {
    let mut manifest = String::new();
    for (k, v) in meta {
        if k.contains(['\t', '\n']) || v.contains(['\t', '\n']) {
            return Err(AcgError::Checkpoint(format!("meta entry {k} contains a tab or newline")));
        }
        manifest.push_str(&format!("meta\t{k}\t{v}\n"));
    }
    for e in store.entries() {
        let shape: Vec<String> = e.value.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("param\t{}\t{}\tf64\t{}\n", e.name, e.tag, shape.join("x")));
    }
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(manifest.len() as u64).to_le_bytes())?;
    out.write_all(manifest.as_bytes())?;
    let mut buf = Vec::with_capacity(store.num_scalars() * 8);
    for e in store.entries() {
        for v in e.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let bad = |m: &str| AcgError::Checkpoint(m.to_string());
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(AcgError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
    let mlen = u64::from_le_bytes(len) as usize;
    if mlen > 1 << 30 {
        return Err(bad("manifest too large"));
    }
    let mut mbytes = vec![0u8; mlen];
    input.read_exact(&mut mbytes).map_err(|_| bad("truncated manifest"))?;
    let manifest = String::from_utf8(mbytes).map_err(|_| bad("manifest is not UTF-8"))?;

    let mut meta = Vec::new();
    let mut store = ParameterStore::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["meta", k, v] => meta.push((k.to_string(), v.to_string())),
            ["param", name, tag, dtype, shape] => {
                if *dtype != "f64" {
                    return Err(AcgError::Checkpoint(format!("unsupported dtype {dtype}")));
                }
                let tag = Component::parse(tag)
                    .ok_or_else(|| AcgError::Checkpoint(format!("unknown component tag {tag}")))?;
                let shape: Vec<usize> = shape
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| AcgError::Checkpoint(format!("bad shape on manifest line {}", lineno + 1)))?;
                let n: usize = shape.iter().product();
                let mut raw = vec![0u8; n * 8];
                input
                    .read_exact(&mut raw)
                    .map_err(|_| AcgError::Checkpoint(format!("truncated block for {name}")))?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                let t = Tensor::new(shape, data).map_err(|e| AcgError::Checkpoint(format!("{name}: {e}")))?;
                store.add(name, tag, t)?;
            }
            _ => {
                return Err(AcgError::Checkpoint(format!(
                    "malformed manifest line {}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(Checkpoint { meta, store })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add("enc.w", Component::Encoder, Tensor::new(vec![2, 2], vec![1.0, -0.5, 1e-300, 3.25]).unwrap())
            .unwrap();
        s.add("switch.w", Component::Switch, Tensor::vector(vec![0.125]).unwrap()).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let meta = vec![("vocab_size".to_string(), "12".to_string())];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &meta, &s).unwrap();
        assert_eq!(&buf[..4], &1u32.to_le_bytes());
        let ck = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(ck.meta_value("vocab_size"), Some("12"));
        for (a, b) in s.entries().iter().zip(ck.store.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tag, b.tag);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[], &sample()).unwrap();
        buf[0] = 9;
        let err = read_checkpoint(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("version 9"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[], &sample()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint(&buf[..]), Err(AcgError::Checkpoint(_))));
    }
}
