//! Single-file checkpoint container.
//!
//! ```text
//! MERGELAB-CHECKPOINT 1
//! role finetuned
//! domain arts            ("-" when absent)
//! seed 3
//! layers 3
//! shape 0 32 64          (layer rows cols; the bias has `rows` entries)
//! shape 1 32 32
//! shape 2 16 32
//! note config 9f2c...    (zero or more provenance lines)
//! end
//! <f32 LE: layer 0 weight row-major, layer 0 bias, layer 1 weight, ...>
//! ```

use std::io::Write as _;
use std::path::Path;

use super::params::{Layer, Metadata, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "MERGELAB-CHECKPOINT";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn check_token(kind: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.chars().any(char::is_whitespace) {
        return Err(bad(format!("{kind} {value:?} must be a non-empty token without whitespace")));
    }
    Ok(())
}

pub fn to_bytes<T: Scalar>(params: &ParamSet<T>) -> Result<Vec<u8>> {
    let meta = &params.meta;
    let mut out = Vec::with_capacity(256 + 4 * params.param_count());
    let domain = meta.domain_id.as_deref().unwrap_or("-");
    check_token("domain id", domain)?;
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "role {}", meta.role).unwrap();
    writeln!(out, "domain {domain}").unwrap();
    writeln!(out, "seed {}", meta.seed).unwrap();
    writeln!(out, "layers {}", params.num_layers()).unwrap();
    for (l, layer) in params.layers.iter().enumerate() {
        writeln!(out, "shape {l} {} {}", layer.rows, layer.cols).unwrap();
    }
    for (k, v) in &meta.notes {
        check_token("note key", k)?;
        if v.contains('\n') {
            return Err(bad(format!("note {k} spans lines")));
        }
        writeln!(out, "note {k} {v}").unwrap();
    }
    out.extend_from_slice(b"end\n");
    for v in params.values() {
        let f = v.to_f32().ok_or_else(|| bad("value not representable as f32"))?;
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ParamSet<T>> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
    };

    let first = next_line()?;
    let version = first.strip_prefix(MAGIC).map(str::trim).ok_or_else(|| bad("missing magic line"))?;
    if version != VERSION.to_string() {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = next_line()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected `{key}` line, got {line:?}")))
    };
    let role = field("role")?.parse()?;
    let domain = field("domain")?;
    let seed = field("seed")?.parse::<u64>().map_err(|_| bad("bad seed"))?;
    let count = field("layers")?.parse::<usize>().map_err(|_| bad("bad layer count"))?;
    let mut shapes = Vec::with_capacity(count);
    for l in 0..count {
        let line = field("shape")?;
        let nums: Vec<usize> = line
            .split(' ')
            .map(|t| t.parse().map_err(|_| bad(format!("bad shape line {line:?}"))))
            .collect::<Result<_>>()?;
        match nums[..] {
            [idx, rows, cols] if idx == l => shapes.push((rows, cols)),
            _ => return Err(bad(format!("bad shape line {line:?}"))),
        }
    }
    let mut meta = Metadata::new(role, (domain != "-").then_some(domain), seed);
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        let note = line.strip_prefix("note ").ok_or_else(|| bad(format!("unexpected header line {line:?}")))?;
        let (k, v) = note.split_once(' ').unwrap_or((note, ""));
        meta.notes.insert(k.to_string(), v.to_string());
    }

    let payload = &bytes[pos..];
    let expected: usize = shapes.iter().map(|(r, c)| r * c + r).sum::<usize>() * 4;
    if payload.len() != expected {
        return Err(bad(format!("payload has {} bytes, manifest implies {expected}", payload.len())));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap_or_else(T::nan));
    let layers = shapes
        .into_iter()
        .map(|(rows, cols)| Layer {
            rows,
            cols,
            weight: values.by_ref().take(rows * cols).collect(),
            bias: values.by_ref().take(rows).collect(),
        })
        .collect();
    ParamSet::from_layers(layers, meta)
}

pub fn save<T: Scalar>(params: &ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(params)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamSet<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
