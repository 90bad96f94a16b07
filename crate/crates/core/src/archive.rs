//! Named-tensor archive: a text manifest (names, dtypes, shapes, byte
//! offsets) followed by raw little-endian IEEE-754 payloads.
//!
//! Writing is deterministic in entry order, so save → load → save round-trips
//! byte-identically.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

const MAGIC: &str = "morphgan-archive v1";

#[derive(Clone)]
struct Entry<S> {
    name: String,
    shape: Vec<usize>,
    data: Vec<S>,
}

/// Archive under construction.
pub struct ArchiveWriter<S: Scalar> {
    meta: Vec<(String, String)>,
    entries: Vec<Entry<S>>,
}

impl<S: Scalar> Default for ArchiveWriter<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ArchiveWriter<S> {
    pub fn new() -> Self {
        ArchiveWriter {
            meta: Vec::new(),
            entries: Vec::new(),
        }
    }

    /// Key/value pair recorded in the manifest. Keys and values must not
    /// contain whitespace or '='.
    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], data: Vec<S>) -> &mut Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = S::DTYPE.byte_width();
        let mut manifest = String::new();
        manifest.push_str(MAGIC);
        manifest.push('\n');
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta {k}={v}\n"));
        }
        let mut offset = 0usize;
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!(
                "tensor {} {} {} {} {}\n",
                e.name,
                S::DTYPE.name(),
                dims.join(","),
                offset,
                e.data.len()
            ));
            offset += e.data.len() * width;
        }
        manifest.push_str(&format!("payload {offset}\n"));

        let mut out = Vec::with_capacity(manifest.len() + offset);
        out.extend_from_slice(manifest.as_bytes());
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes_vec());
            }
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Parsed archive.
pub struct ArchiveReader<S: Scalar> {
    meta: HashMap<String, String>,
    meta_order: Vec<(String, String)>,
    entries: Vec<Entry<S>>,
    index: HashMap<String, usize>,
}

fn parse_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::ArchiveParse {
        offset,
        detail: detail.into(),
    }
}

/// Reads only the manifest meta lines, without requiring the payload dtype
/// to match any particular scalar type.
pub fn peek_meta(path: &Path) -> Result<HashMap<String, String>> {
    let bytes = fs::read(path)?;
    let (meta, _, _) = parse_manifest(&bytes)?;
    Ok(meta.into_iter().collect())
}

type ManifestEntry = (String, String, Vec<usize>, usize, usize);

type Manifest = (Vec<(String, String)>, Vec<ManifestEntry>, usize);

/// Returns (meta pairs, tensor lines, payload start offset).
fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    let mut pos = 0usize;
    let mut meta = Vec::new();
    let mut tensors = Vec::new();
    loop {
        let line_start = pos;
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(line_start, "unterminated manifest line"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| parse_err(line_start, "manifest line is not UTF-8"))?;
        pos += nl + 1;

        if line_start == 0 {
            if line != MAGIC {
                return Err(parse_err(0, format!("bad magic `{line}`")));
            }
            continue;
        }
        if let Some(kv) = line.strip_prefix("meta ") {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| parse_err(line_start, format!("bad meta line `{line}`")))?;
            meta.push((k.to_string(), v.to_string()));
        } else if let Some(spec) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = spec.split(' ').collect();
            if parts.len() != 5 {
                return Err(parse_err(line_start, format!("bad tensor line `{line}`")));
            }
            let shape: Vec<usize> = parts[2]
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(line_start, format!("bad shape `{}`", parts[2])))?;
            let offset: usize = parts[3]
                .parse()
                .map_err(|_| parse_err(line_start, format!("bad offset `{}`", parts[3])))?;
            let count: usize = parts[4]
                .parse()
                .map_err(|_| parse_err(line_start, format!("bad count `{}`", parts[4])))?;
            tensors.push((
                parts[0].to_string(),
                parts[1].to_string(),
                shape,
                offset,
                count,
            ));
        } else if let Some(total) = line.strip_prefix("payload ") {
            let total: usize = total
                .parse()
                .map_err(|_| parse_err(line_start, format!("bad payload size `{total}`")))?;
            if bytes.len() - pos != total {
                return Err(parse_err(
                    pos,
                    format!("payload is {} bytes, manifest says {total}", bytes.len() - pos),
                ));
            }
            return Ok((meta, tensors, pos));
        } else {
            return Err(parse_err(line_start, format!("unknown manifest line `{line}`")));
        }
    }
}

impl<S: Scalar> ArchiveReader<S> {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta_order, tensor_specs, payload_start) = parse_manifest(bytes)?;
        let width = S::DTYPE.byte_width();
        let payload = &bytes[payload_start..];
        let mut entries = Vec::with_capacity(tensor_specs.len());
        let mut index = HashMap::new();
        for (name, dtype, shape, offset, count) in tensor_specs {
            if dtype != S::DTYPE.name() {
                return Err(parse_err(
                    payload_start + offset,
                    format!(
                        "tensor `{name}` has dtype {dtype}, expected {}",
                        S::DTYPE.name()
                    ),
                ));
            }
            if shape.iter().product::<usize>() != count {
                return Err(parse_err(
                    payload_start + offset,
                    format!("tensor `{name}` shape {shape:?} vs count {count}"),
                ));
            }
            let end = offset + count * width;
            if end > payload.len() {
                return Err(parse_err(
                    payload_start + offset,
                    format!("tensor `{name}` extends past payload end"),
                ));
            }
            let data: Vec<S> = payload[offset..end]
                .chunks_exact(width)
                .map(S::from_le_slice)
                .collect();
            index.insert(name.clone(), entries.len());
            entries.push(Entry { name, shape, data });
        }
        Ok(ArchiveReader {
            meta: meta_order.iter().cloned().collect(),
            meta_order,
            entries,
            index,
        })
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(|s| s.as_str())
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[S])> {
        let i = self
            .index
            .get(name)
            .ok_or_else(|| Error::ArchiveMissingTensor(name.to_string()))?;
        let e = &self.entries[*i];
        Ok((&e.shape, &e.data))
    }

    pub fn take_tensor(&self, name: &str) -> Result<Vec<S>> {
        Ok(self.tensor(name)?.1.to_vec())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Rebuilds a writer with identical entry and meta order.
    pub fn to_writer(&self) -> ArchiveWriter<S> {
        let mut w = ArchiveWriter::new();
        for (k, v) in &self.meta_order {
            w.meta(k, v);
        }
        for e in &self.entries {
            w.tensor(&e.name, &e.shape, e.data.clone());
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_identical() {
        let mut w = ArchiveWriter::<f32>::new();
        w.meta("mode", "single");
        w.meta("k", 5);
        w.tensor("a.kernel", &[2, 3], vec![1.0, -2.0, 3.5, 0.0, 7.25, -0.125]);
        w.tensor("a.bias", &[2], vec![0.5, -0.5]);
        let bytes = w.to_bytes();

        let r = ArchiveReader::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(r.meta("mode"), Some("single"));
        let (shape, data) = r.tensor("a.kernel").unwrap();
        assert_eq!(shape, &[2, 3]);
        assert_eq!(data[4], 7.25);

        let again = r.to_writer().to_bytes();
        assert_eq!(bytes, again);
    }

    #[test]
    fn malformed_archive_reports_offset() {
        let mut w = ArchiveWriter::<f32>::new();
        w.tensor("x", &[1], vec![1.0]);
        let mut bytes = w.to_bytes();
        bytes.truncate(bytes.len() - 2);
        match ArchiveReader::<f32>::from_bytes(&bytes) {
            Err(Error::ArchiveParse { .. }) => {}
            Err(other) => panic!("expected parse error, got {other}"),
            Ok(_) => panic!("truncated archive parsed successfully"),
        }
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let mut w = ArchiveWriter::<f32>::new();
        w.tensor("x", &[1], vec![1.0]);
        let bytes = w.to_bytes();
        assert!(ArchiveReader::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn missing_tensor_is_named() {
        let w = ArchiveWriter::<f32>::new();
        let r = ArchiveReader::<f32>::from_bytes(&w.to_bytes()).unwrap();
        let err = r.tensor("absent").unwrap_err().to_string();
        assert!(err.contains("absent"), "{err}");
    }
}
