use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::DocumentEmbedding;
use crate::error::{Error, Result};

/// Document embeddings produced outside the engine.
///
/// Two on-disk layouts are read:
/// * text: a `dim=<d>` header, then `<doc_id>\t<f1> <f2> ... <fd>` per line;
/// * binary: rows of `d` little-endian `f32`, with a `<file>.idx` sidecar
///   holding the same `dim=<d>` header followed by one doc id per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedStore {
    dim: usize,
    vectors: BTreeMap<String, DocumentEmbedding>,
}

fn parse_dim(line: &str) -> Option<usize> {
    line.trim().strip_prefix("dim=")?.parse().ok().filter(|&d| d > 0)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

impl PrecomputedStore {
    pub fn new(dim: usize) -> Self {
        PrecomputedStore {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, embedding: DocumentEmbedding) -> Result<()> {
        if embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: embedding.dim(),
            });
        }
        if embedding.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("embedding", "non-finite component"));
        }
        self.vectors.insert(id.into(), embedding);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&DocumentEmbedding> {
        self.vectors.get(id).ok_or_else(|| Error::UnknownDocument(id.to_owned()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// Reads either layout, picking text when the file starts with `dim=`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"dim=") {
            Self::parse_text(path, &bytes)
        } else {
            Self::parse_binary(path, &bytes)
        }
    }

    fn parse_text(path: &Path, bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::format("embeddings", path, e.to_string()))?;
        let mut lines = text.lines();
        let dim = lines
            .next()
            .and_then(parse_dim)
            .ok_or_else(|| Error::format("embeddings", path, "missing `dim=<d>` header"))?;
        let mut store = PrecomputedStore::new(dim);
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = idx + 2;
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("embeddings", path, format!("line {line_no}: missing tab")))?;
            let vector = values
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format("embeddings", path, format!("line {line_no}: {e}")))?;
            store
                .insert(id, DocumentEmbedding(vector))
                .map_err(|e| Error::format("embeddings", path, format!("line {line_no}: {e}")))?;
        }
        Ok(store)
    }

    fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Self> {
        let idx_path = sidecar_path(path);
        let file = File::open(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(&idx_path, e))?
            .unwrap_or_default();
        let dim = parse_dim(&header).ok_or_else(|| Error::format("embedding index", &idx_path, "missing `dim=<d>` header"))?;
        let ids: Vec<String> = lines
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&idx_path, e))?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect();
        if bytes.len() != ids.len() * dim * 4 {
            return Err(Error::format(
                "embeddings",
                path,
                format!("{} bytes for {} rows of dim {dim}", bytes.len(), ids.len()),
            ));
        }
        let mut store = PrecomputedStore::new(dim);
        for (id, chunk) in ids.into_iter().zip(bytes.chunks_exact(dim * 4)) {
            let vector = chunk
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                .collect();
            store
                .insert(id, DocumentEmbedding(vector))
                .map_err(|e| Error::format("embeddings", path, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(out, "dim={}", self.dim).map_err(io)?;
        for (id, v) in &self.vectors {
            let values: Vec<String> = v.0.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{id}\t{}", values.join(" ")).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut data = Vec::with_capacity(self.vectors.len() * self.dim * 4);
        let mut index = format!("dim={}\n", self.dim);
        for (id, v) in &self.vectors {
            index.push_str(id);
            index.push('\n');
            for x in &v.0 {
                data.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        fs::write(path, data).map_err(|e| Error::io(path, e))?;
        let idx_path = sidecar_path(path);
        fs::write(&idx_path, index).map_err(|e| Error::io(&idx_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_binary_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = PrecomputedStore::new(3);
        store.insert("a", DocumentEmbedding(vec![0.5, -1.0, 2.25])).unwrap();
        store.insert("b", DocumentEmbedding(vec![0.0, 1e-3, 3.0])).unwrap();
        assert!(store.insert("c", DocumentEmbedding(vec![1.0])).is_err());

        let text = dir.path().join("emb.txt");
        store.write_text(&text).unwrap();
        assert_eq!(
            fs::read_to_string(&text).unwrap(),
            "dim=3\na\t0.5 -1 2.25\nb\t0 0.001 3\n"
        );
        assert_eq!(PrecomputedStore::load(&text).unwrap(), store);

        let bin = dir.path().join("emb.bin");
        store.write_binary(&bin).unwrap();
        let back = PrecomputedStore::load(&bin).unwrap();
        assert_eq!(back.dim(), 3);
        assert_eq!(back.get("a").unwrap().0, vec![0.5, -1.0, 2.25]);
        assert!((back.get("b").unwrap().0[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn lookup_and_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let store = PrecomputedStore::new(2);
        assert!(matches!(store.get("zz"), Err(Error::UnknownDocument(id)) if id == "zz"));

        let p = dir.path().join("bad.txt");
        fs::write(&p, "dim=2\na\t1 2 3\n").unwrap();
        assert!(PrecomputedStore::load(&p).is_err());
        fs::write(&p, "dim=2\na 1 2\n").unwrap();
        assert!(PrecomputedStore::load(&p).is_err());
        let bin = dir.path().join("x.bin");
        fs::write(&bin, [0u8; 8]).unwrap();
        assert!(PrecomputedStore::load(&bin).is_err());
    }
}
