use std::path::Path;

use super::Interaction;
use crate::error::{Error, Result};

/// Reads a `user<TAB>item<TAB>timestamp` file. Blank lines are skipped and
/// extra trailing fields are ignored. No filtering is applied.
pub fn ingest_tsv(path: impl AsRef<Path>) -> Result<Vec<Interaction>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path)
}

pub fn parse_tsv(text: &str, origin: &Path) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { path: origin.to_path_buf(), line: n + 1, reason };
        let mut fields = line.split('\t');
        let (Some(user), Some(item), Some(ts)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(format!(
                "expected user<TAB>item<TAB>timestamp, got {} field(s)",
                line.split('\t').count()
            )));
        };
        let timestamp = ts.trim().parse::<i64>().map_err(|_| err(format!("unparsable timestamp {ts:?}")))?;
        out.push(Interaction::new(user, item, timestamp));
    }
    Ok(out)
}
