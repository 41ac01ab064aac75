//! On-disk formats: movie and persona JSONL inputs, the scenario config
//! document, and run-record directories.
//!
//! A run-record directory holds `config.json`, `manifest.json` and one
//! `ratings_<movie>.jsonl` per completed movie with one rating event per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MovieItem, Persona, RatingEvent, RatingSequence, ScenarioConfig};
use crate::simulation::{MovieFailure, RunRecord};

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{}: {reason}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Malformed {
        path: PathBuf,
        line: Option<usize>,
        reason: String,
    },
}

impl FileError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(path: &Path, line: Option<usize>, reason: impl Into<String>) -> Self {
        FileError::Malformed {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            FileError::Io { path, .. } | FileError::Malformed { path, .. } => path,
        }
    }
}

fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    mut check: impl FnMut(&T, usize) -> Result<(), String>,
) -> Result<Vec<T>, FileError> {
    let file = fs::File::open(path).map_err(|e| FileError::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| FileError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line)
            .map_err(|e| FileError::malformed(path, Some(line_no), e.to_string()))?;
        check(&item, items.len()).map_err(|r| FileError::malformed(path, Some(line_no), r))?;
        items.push(item);
    }
    Ok(items)
}

pub fn load_movies(path: &Path) -> Result<Vec<MovieItem>, FileError> {
    let mut seen = BTreeSet::new();
    read_jsonl(path, |m: &MovieItem, _| {
        m.check()?;
        if !seen.insert(m.movie_id.clone()) {
            return Err(format!("duplicate movie_id {:?}", m.movie_id));
        }
        Ok(())
    })
}

pub fn load_personas(path: &Path) -> Result<Vec<Persona>, FileError> {
    let mut seen = BTreeSet::new();
    read_jsonl(path, |p: &Persona, _| {
        p.check()?;
        if !seen.insert(p.persona_id.clone()) {
            return Err(format!("duplicate persona_id {:?}", p.persona_id));
        }
        Ok(())
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FileError> {
    let file = fs::File::create(path).map_err(|e| FileError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| FileError::malformed(path, None, e.to_string()))?;
        out.write_all(b"\n").map_err(|e| FileError::io(path, e))?;
    }
    out.flush().map_err(|e| FileError::io(path, e))
}

/// Parses a config document, rejecting unknown fields.
pub fn parse_config(path: &Path, text: &str) -> Result<ScenarioConfig, FileError> {
    serde_json::from_str(text)
        .map_err(|e| FileError::malformed(path, Some(e.line()), e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, FileError> {
    let text = fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    parse_config(path, &text)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| FileError::malformed(path, None, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FileError::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestMovie {
    movie_id: String,
    file: String,
    warmup_len: usize,
    agent_order: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    created_at: String,
    warmup_distribution: String,
    movies: Vec<ManifestMovie>,
    persona_assignment: BTreeMap<String, String>,
    failures: Vec<MovieFailure>,
}

/// File-system-safe stem for a movie id.
pub fn file_stem(movie_id: &str) -> String {
    movie_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn ratings_file_names(record: &RunRecord) -> Vec<String> {
    let mut used = BTreeSet::new();
    record
        .movie_sequences
        .iter()
        .map(|seq| {
            let stem = file_stem(&seq.movie_id);
            let mut name = format!("ratings_{stem}.jsonl");
            let mut n = 1;
            while !used.insert(name.clone()) {
                n += 1;
                name = format!("ratings_{stem}~{n}.jsonl");
            }
            name
        })
        .collect()
}

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `record` into `dir`, creating it if needed.
pub fn save_record(record: &RunRecord, dir: &Path) -> Result<(), FileError> {
    fs::create_dir_all(dir).map_err(|e| FileError::io(dir, e))?;
    write_json(&dir.join(CONFIG_FILE), &record.config)?;
    let names = ratings_file_names(record);
    for (seq, name) in record.movie_sequences.iter().zip(&names) {
        write_jsonl(&dir.join(name), &seq.events)?;
    }
    let manifest = Manifest {
        format_version: record.format_version,
        created_at: record.created_at.clone(),
        warmup_distribution: record.warmup_distribution.clone(),
        movies: record
            .movie_sequences
            .iter()
            .zip(names)
            .map(|(seq, file)| ManifestMovie {
                movie_id: seq.movie_id.clone(),
                file,
                warmup_len: seq.warmup_len,
                agent_order: record
                    .agent_order_per_movie
                    .get(&seq.movie_id)
                    .cloned()
                    .unwrap_or_default(),
            })
            .collect(),
        persona_assignment: record.persona_assignment.clone(),
        failures: record.failures.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// Reads and validates a run-record directory. The first problem found is
/// reported with its file and, for ratings files, its line.
pub fn load_record(dir: &Path) -> Result<RunRecord, FileError> {
    let config_path = dir.join(CONFIG_FILE);
    let config = load_config(&config_path)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| FileError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| FileError::malformed(&manifest_path, Some(e.line()), e.to_string()))?;
    if manifest.format_version != crate::simulation::FORMAT_VERSION {
        return Err(FileError::malformed(
            &manifest_path,
            None,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }

    let scale = config.scale;
    let mut movie_sequences = Vec::with_capacity(manifest.movies.len());
    let mut agent_order_per_movie = BTreeMap::new();
    for entry in &manifest.movies {
        if entry.file.contains('/') || entry.file.contains('\\') {
            return Err(FileError::malformed(
                &manifest_path,
                None,
                format!("ratings file {:?} must be a bare file name", entry.file),
            ));
        }
        let path = dir.join(&entry.file);
        let events = read_jsonl(&path, |e: &RatingEvent, index| {
            if e.movie_id != entry.movie_id {
                return Err(format!(
                    "movie_id {:?}, expected {:?}",
                    e.movie_id, entry.movie_id
                ));
            }
            if e.step_index != index {
                return Err(format!("step_index {}, expected {index}", e.step_index));
            }
            if (index < entry.warmup_len) != e.is_warmup() {
                return Err("event is misplaced relative to the warm-up prefix".into());
            }
            e.check(scale)
        })?;
        let seq = RatingSequence {
            movie_id: entry.movie_id.clone(),
            warmup_len: entry.warmup_len,
            events,
        };
        seq.check(scale)
            .map_err(|r| FileError::malformed(&path, None, r))?;
        agent_order_per_movie.insert(entry.movie_id.clone(), entry.agent_order.clone());
        movie_sequences.push(seq);
    }

    Ok(RunRecord {
        format_version: manifest.format_version,
        config,
        movie_sequences,
        agent_order_per_movie,
        persona_assignment: manifest.persona_assignment,
        created_at: manifest.created_at,
        warmup_distribution: manifest.warmup_distribution,
        failures: manifest.failures,
    })
}
