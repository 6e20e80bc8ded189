//! Reading training corpora from disk.
//!
//! Three layouts are accepted:
//!
//! - a directory: every regular file below it is one document, identified by
//!   its path relative to the directory;
//! - a `.lpc` file: length-prefixed concatenation, each record being
//!   `{byte length}\t{id}\n`, then the UTF-8 text, then `\n`;
//! - any other file: a list of document paths, one per line, resolved
//!   relative to the list's directory. Blank lines and `#` comments are skipped.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use super::{Document, OverlapError};

pub const LENGTH_PREFIXED_EXTENSION: &str = "lpc";

pub fn load_corpus(path: &Path) -> Result<Vec<Document>, OverlapError> {
    let io = |p: &Path, e: std::io::Error| OverlapError::Corpus(format!("{}: {e}", p.display()));
    let meta = fs::metadata(path).map_err(|e| io(path, e))?;
    if meta.is_dir() {
        let mut files = Vec::new();
        walk(path, &mut files).map_err(|e| io(path, e))?;
        files.sort();
        files
            .into_iter()
            .map(|f| {
                let text = fs::read_to_string(&f).map_err(|e| io(&f, e))?;
                let id = f.strip_prefix(path).unwrap_or(&f).to_string_lossy().replace('\\', "/");
                Ok(Document::new(id, text))
            })
            .collect()
    } else if path.extension().is_some_and(|e| e == LENGTH_PREFIXED_EXTENSION) {
        let file = fs::File::open(path).map_err(|e| io(path, e))?;
        read_length_prefixed(BufReader::new(file)).map_err(|e| OverlapError::Corpus(format!("{}: {e}", path.display())))
    } else {
        let list = fs::read_to_string(path).map_err(|e| io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        list.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let f = base.join(l);
                let text = fs::read_to_string(&f).map_err(|e| io(&f, e))?;
                Ok(Document::new(l, text))
            })
            .collect()
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let ty = entry.file_type()?;
        if ty.is_dir() {
            walk(&entry.path(), out)?;
        } else if ty.is_file() {
            out.push(entry.path());
        }
    }
    Ok(())
}

pub fn read_length_prefixed<R: BufRead>(mut reader: R) -> Result<Vec<Document>, String> {
    let mut docs = Vec::new();
    let mut header = String::new();
    loop {
        header.clear();
        if reader.read_line(&mut header).map_err(|e| e.to_string())? == 0 {
            return Ok(docs);
        }
        let record = docs.len();
        let line = header.strip_suffix('\n').ok_or_else(|| format!("record {record}: truncated header"))?;
        let (len, id) = line.split_once('\t').ok_or_else(|| format!("record {record}: header must be `length<TAB>id`"))?;
        let len: usize = len.parse().map_err(|_| format!("record {record}: bad length {len:?}"))?;
        let mut body = vec![0; len + 1];
        reader.read_exact(&mut body).map_err(|_| format!("record {record} ({id}): truncated body"))?;
        if body.pop() != Some(b'\n') {
            return Err(format!("record {record} ({id}): body must be followed by a newline"));
        }
        let text = String::from_utf8(body).map_err(|_| format!("record {record} ({id}): body is not UTF-8"))?;
        docs.push(Document::new(id, text));
    }
}

pub fn write_length_prefixed<W: std::io::Write>(mut out: W, docs: &[Document]) -> std::io::Result<()> {
    for d in docs {
        write!(out, "{}\t{}\n{}\n", d.text.len(), d.id, d.text)?;
    }
    Ok(())
}
