//! Checkpoint files: a text header (format line, key=value metadata, one
//! manifest line per tensor in order) followed by the concatenated
//! little-endian payloads.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::{manifest_line, parse_manifest_line, read_payload, validate_name, write_payload, Tensor};

const MAGIC: &str = "hrdepth-checkpoint 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: KvMap,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(meta: KvMap) -> Self {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn extend_prefixed(&mut self, prefix: &str, tensors: Vec<(String, Tensor)>) {
        self.tensors
            .extend(tensors.into_iter().map(|(n, t)| (format!("{prefix}{n}"), t)));
    }

    /// Tensors whose name starts with `prefix`, with the prefix removed, in order.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        let meta = self.meta.emit();
        writeln!(w, "meta {}", self.meta.len())?;
        w.write_all(meta.as_bytes())?;
        writeln!(w, "tensors {}", self.tensors.len())?;
        for (name, t) in &self.tensors {
            validate_name(name)?;
            writeln!(w, "{}", manifest_line(name, t.shape()))?;
        }
        for (_, t) in &self.tensors {
            write_payload(w, t)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Parse("truncated checkpoint header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(r)? != MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        let count = |l: String, key: &str| -> Result<usize> {
            l.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("expected '{key} N', got {l:?}")))
        };
        let n_meta = count(next_line(r)?, "meta")?;
        let mut meta_text = String::new();
        for _ in 0..n_meta {
            meta_text.push_str(&next_line(r)?);
            meta_text.push('\n');
        }
        let meta = KvMap::parse(&meta_text)?;
        let n = count(next_line(r)?, "tensors")?;
        let mut heads = Vec::with_capacity(n);
        for _ in 0..n {
            heads.push(parse_manifest_line(&next_line(r)?)?);
        }
        let mut tensors = Vec::with_capacity(n);
        for (name, shape) in heads {
            tensors.push((name, read_payload(r, shape)?));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Writes through a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
