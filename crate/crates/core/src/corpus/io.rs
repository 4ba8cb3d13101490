use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{preprocess_sentence, Corpus, CorpusError, Example, FeatureGrid, FeedbackType};

pub const GRID_MAGIC: &[u8; 4] = b"FGRD";
const GRID_HEADER_BYTES: u64 = 20;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    image_id: String,
    feedback_type: FeedbackType,
    sentences: Vec<String>,
    grid_file: String,
    grid_offset: u64,
}

/// Writes `grids` (which must share one shape) in the binary grid format.
pub fn write_grid_file(path: &Path, grids: &[&FeatureGrid]) -> Result<(), CorpusError> {
    let (h, w, d) = grids
        .first()
        .map(|g| (g.height(), g.width(), g.depth()))
        .unwrap_or((0, 0, 0));
    if grids
        .iter()
        .any(|g| (g.height(), g.width(), g.depth()) != (h, w, d))
    {
        return Err(CorpusError::Format("grids in one file must share a shape".into()));
    }
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| CorpusError::io(path, e));
    write(GRID_MAGIC)?;
    for v in [grids.len(), h, w, d] {
        write(&(v as u32).to_le_bytes())?;
    }
    for g in grids {
        for v in g.values() {
            write(&v.to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

/// Reads every grid of a grid file.
pub fn read_grid_file(path: &Path) -> Result<Vec<FeatureGrid>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    if bytes.len() < GRID_HEADER_BYTES as usize {
        return Err(CorpusError::Truncated {
            path: path.to_owned(),
            expected: GRID_HEADER_BYTES,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != GRID_MAGIC {
        return Err(CorpusError::Format(format!(
            "{}: bad magic, expected FGRD",
            path.display()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (count, h, w, d) = (word(0), word(1), word(2), word(3));
    let per = h * w * d;
    let expected = GRID_HEADER_BYTES + (count * per * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(CorpusError::Truncated {
            path: path.to_owned(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut grids = Vec::with_capacity(count);
    let body = &bytes[GRID_HEADER_BYTES as usize..];
    for i in 0..count {
        let values = body[i * per * 4..(i + 1) * per * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        grids.push(FeatureGrid::new(h, w, d, values)?);
    }
    Ok(grids)
}

fn grid_index(offset: u64, per_grid_bytes: u64) -> Option<usize> {
    let rel = offset.checked_sub(GRID_HEADER_BYTES)?;
    (per_grid_bytes > 0 && rel % per_grid_bytes == 0).then(|| (rel / per_grid_bytes) as usize)
}

/// Writes the corpus as JSON lines plus a sibling grid file.
///
/// `grid_path` is recorded relative to the JSON-lines file's directory when
/// possible.
pub fn save_corpus(corpus: &Corpus, jsonl_path: &Path, grid_path: &Path) -> Result<(), CorpusError> {
    let grids: Vec<&FeatureGrid> = corpus.examples.iter().map(|e| &e.grid).collect();
    write_grid_file(grid_path, &grids)?;
    let per = grids
        .first()
        .map(|g| (g.values().len() * 4) as u64)
        .unwrap_or(0);
    let grid_name = relative_name(jsonl_path, grid_path);
    let file = File::create(jsonl_path).map_err(|e| CorpusError::io(jsonl_path, e))?;
    let mut out = BufWriter::new(file);
    for (i, e) in corpus.examples.iter().enumerate() {
        let rec = Record {
            image_id: e.image_id.clone(),
            feedback_type: e.feedback_type,
            sentences: e.sentences.iter().map(|s| s.join(" ")).collect(),
            grid_file: grid_name.clone(),
            grid_offset: GRID_HEADER_BYTES + i as u64 * per,
        };
        let line = serde_json::to_string(&rec)?;
        writeln!(out, "{line}").map_err(|e| CorpusError::io(jsonl_path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(jsonl_path, e))
}

fn relative_name(jsonl_path: &Path, grid_path: &Path) -> String {
    let dir = jsonl_path.parent().unwrap_or(Path::new(""));
    grid_path
        .strip_prefix(dir)
        .unwrap_or(grid_path)
        .to_string_lossy()
        .into_owned()
}

/// Reads a corpus written by [`save_corpus`].
pub fn load_corpus(jsonl_path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(jsonl_path).map_err(|e| CorpusError::io(jsonl_path, e))?;
    let dir = jsonl_path.parent().unwrap_or(Path::new("")).to_owned();
    let mut grid_cache: HashMap<PathBuf, Vec<FeatureGrid>> = HashMap::new();
    let mut examples = Vec::new();
    let parse_err = |line: usize, message: String| CorpusError::Parse {
        path: jsonl_path.to_owned(),
        line,
        message,
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::io(jsonl_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if rec.sentences.is_empty() {
            return Err(parse_err(lineno, "record has no sentences".into()));
        }
        let grid_path = dir.join(&rec.grid_file);
        if !grid_cache.contains_key(&grid_path) {
            let grids = read_grid_file(&grid_path)?;
            grid_cache.insert(grid_path.clone(), grids);
        }
        let grids = &grid_cache[&grid_path];
        let per = grids
            .first()
            .map(|g| (g.values().len() * 4) as u64)
            .unwrap_or(0);
        let grid = grid_index(rec.grid_offset, per)
            .and_then(|k| grids.get(k))
            .ok_or_else(|| parse_err(lineno, format!("grid_offset {} is not a grid boundary", rec.grid_offset)))?
            .clone();
        let sentences = rec
            .sentences
            .iter()
            .map(|s| preprocess_sentence(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        examples.push(Example {
            image_id: rec.image_id,
            feedback_type: rec.feedback_type,
            grid,
            sentences,
        });
    }
    Ok(Corpus { examples })
}
