use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Writes to `path`, or stdout without one.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct ScoreRow {
    image: usize,
    score: f64,
}

pub fn write_scores(path: &Path, scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (image, &score) in scores.iter().enumerate() {
        w.serialize(ScoreRow { image, score })?;
    }
    write_file(path, w.into_inner()?)
}

pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scores = Vec::new();
    for (k, row) in r.deserialize::<ScoreRow>().enumerate() {
        let row = row.with_context(|| format!("parsing {}", path.display()))?;
        if row.image != k {
            bail!("{}: row {k} holds image {}, expected {k}", path.display(), row.image);
        }
        scores.push(row.score);
    }
    Ok(scores)
}

/// Parses `HxW`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("map size {s:?} is not HxW"))?;
    let h: usize = h.trim().parse().with_context(|| format!("bad height in {s:?}"))?;
    let w: usize = w.trim().parse().with_context(|| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        bail!("map size {s:?} must be positive");
    }
    Ok((h, w))
}
