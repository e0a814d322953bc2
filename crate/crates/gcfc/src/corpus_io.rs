//! JSONL corpus files.
//!
//! Line 1 is the header
//! `{"format":"gcfc-corpus-v1","labels":[...],"dims":{"t":..,"a":..,"v":..}}`;
//! every further non-blank line is one dialogue
//! `{"id":..,"speakers":..,"utterances":[{"speaker":..,"label":"name","t":[..],"a":[..],"v":[..]}]}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use gcfc_core::corpus::{Corpus, CorpusHeader, Dialogue, ModalityDims, Utterance};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "gcfc-corpus-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    format: String,
    labels: Vec<String>,
    dims: ModalityDims,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceLine {
    speaker: usize,
    label: String,
    t: Vec<f64>,
    a: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueLine {
    id: String,
    speakers: usize,
    utterances: Vec<UtteranceLine>,
}

/// Parse a corpus from `reader`; `path` only labels error messages.
pub fn parse_corpus(reader: impl BufRead, path: &Path) -> Result<Corpus> {
    let mut lines = reader.lines().enumerate();
    let header: HeaderLine = loop {
        match lines.next() {
            None => return Err(Error::parse(path, 0, "empty corpus file")),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::read(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, format!("header: {e}")))?;
            }
        }
    };
    if header.format != CORPUS_FORMAT {
        return Err(Error::parse(
            path,
            1,
            format!("format '{}' is not '{CORPUS_FORMAT}'", header.format),
        ));
    }
    let mut corpus = Corpus {
        header: CorpusHeader {
            labels: header.labels,
            dims: header.dims,
        },
        dialogues: Vec::new(),
    };
    // Header-only corpora are checked here; dialogues are checked per line.
    let mut ids = HashSet::new();
    let check = |corpus: &Corpus, line_no: usize| -> Result<()> {
        corpus
            .validate()
            .map_err(|e| Error::parse(path, line_no, e.to_string()))
    };
    check(&corpus, 1)?;
    let mut checked = Corpus {
        header: corpus.header.clone(),
        dialogues: Vec::with_capacity(1),
    };
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::read(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DialogueLine = serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        if !ids.insert(d.id.clone()) {
            return Err(Error::parse(path, line_no, format!("duplicate dialogue id '{}'", d.id)));
        }
        let utterances = d
            .utterances
            .into_iter()
            .enumerate()
            .map(|(k, u)| {
                let label = checked.label_id(&u.label).ok_or_else(|| {
                    Error::parse(path, line_no, format!("utterance {k}: unknown label '{}'", u.label))
                })?;
                Ok(Utterance {
                    speaker: u.speaker,
                    label,
                    text: u.t,
                    acoustic: u.a,
                    visual: u.v,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        checked.dialogues.push(Dialogue {
            id: d.id,
            speakers: d.speakers,
            utterances,
        });
        check(&checked, line_no)?;
        corpus.dialogues.push(checked.dialogues.pop().expect("just pushed"));
    }
    Ok(corpus)
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::read(path, e))?;
    parse_corpus(BufReader::new(file), path)
}

/// Serialize `corpus`; it must pass validation (JSON has no NaN or
/// infinity).
pub fn format_corpus(corpus: &Corpus, out: &mut impl Write) -> Result<()> {
    corpus.validate()?;
    let header = HeaderLine {
        format: CORPUS_FORMAT.into(),
        labels: corpus.header.labels.clone(),
        dims: corpus.header.dims,
    };
    let io = |e: std::io::Error| Error::write("<corpus>", e);
    serde_json::to_writer(&mut *out, &header).map_err(|e| io(e.into()))?;
    out.write_all(b"\n").map_err(io)?;
    for d in &corpus.dialogues {
        let line = DialogueLine {
            id: d.id.clone(),
            speakers: d.speakers,
            utterances: d
                .utterances
                .iter()
                .map(|u| UtteranceLine {
                    speaker: u.speaker,
                    label: corpus.header.labels[u.label].clone(),
                    t: u.text.clone(),
                    a: u.acoustic.clone(),
                    v: u.visual.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut *out, &line).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::write(path, e))?;
    let mut w = BufWriter::new(file);
    format_corpus(corpus, &mut w).map_err(|e| match e {
        Error::Write { source, .. } => Error::write(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::write(path, e))
}
