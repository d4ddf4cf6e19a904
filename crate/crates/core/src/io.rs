//! Text formats: word2vec/FastText `.vec` embeddings, transform pairs,
//! correspondence maps, two-column gold lexicons and scored TSV lexicons.
//!
//! Words are opaque UTF-8 tokens; no case folding or normalization is done
//! anywhere.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::icp::TransformPair;
use crate::matching::CorrespondenceMap;

/// Ordered vocabulary (most frequent first) with one embedding row per word.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    words: Vec<String>,
    vectors: DMatrix<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    /// Builds a set, checking that rows match words, words are unique and
    /// every coordinate is finite.
    pub fn new(words: Vec<String>, vectors: DMatrix<f64>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if vectors.nrows() != words.len() {
            return Err(Error::DimensionMismatch {
                expected: words.len(),
                found: vectors.nrows(),
            });
        }
        if vectors.ncols() == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("embedding contains non-finite values".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate word {w:?}")));
            }
        }
        Ok(EmbeddingSet {
            words,
            vectors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Keeps the `n` most frequent words.
    pub fn truncated(&self, n: usize) -> EmbeddingSet {
        if n >= self.len() {
            return self.clone();
        }
        let words: Vec<String> = self.words[..n].to_vec();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        EmbeddingSet {
            words,
            vectors: self.vectors.rows(0, n).into_owned(),
            index,
        }
    }

    /// Writes the set in `.vec` text format.
    pub fn write_vec(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(out, "{} {}", self.len(), self.dim())?;
            for (i, w) in self.words.iter().enumerate() {
                out.write_all(w.as_bytes())?;
                for v in self.vectors.row(i).iter() {
                    write!(out, " {v:e}")?;
                }
                out.write_all(b"\n")?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }
}

/// Counters for rows dropped while reading a `.vec` file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub malformed: usize,
    pub duplicates: usize,
}

/// Loads at most `max_words` rows (all when `None`) from a `.vec` file.
pub fn load_vec(path: &Path, max_words: Option<usize>) -> Result<EmbeddingSet> {
    load_vec_with_stats(path, max_words).map(|(set, _)| set)
}

pub fn load_vec_with_stats(
    path: &Path,
    max_words: Option<usize>,
) -> Result<(EmbeddingSet, LoadStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (set, stats) = read_vec(BufReader::new(file), max_words).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    if stats.malformed > 0 || stats.duplicates > 0 {
        warn!(
            "{}: skipped {} malformed and {} duplicate rows",
            path.display(),
            stats.malformed,
            stats.duplicates
        );
    }
    Ok((set, stats))
}

/// Reads `.vec` text from any buffered reader.
///
/// The word is everything before the last `dim` fields, so tokens with
/// embedded spaces survive. A row whose tail does not parse as `dim` finite
/// floats is skipped; a row with fewer than `dim + 1` fields is an error.
pub fn read_vec<R: BufRead>(reader: R, max_words: Option<usize>) -> Result<(EmbeddingSet, LoadStats)> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io("<reader>", e))?,
        None => return Err(Error::MissingHeader(String::new())),
    };
    let (count, dim) = parse_header(&header)?;
    let limit = max_words.map_or(count, |m| m.min(count));

    let mut stats = LoadStats::default();
    let mut words = Vec::with_capacity(limit.min(1 << 20));
    let mut data: Vec<f64> = Vec::with_capacity(limit.min(1 << 20) * dim);
    let mut seen = std::collections::HashSet::new();
    let mut row = Vec::with_capacity(dim);

    for line in lines {
        if words.len() >= limit {
            break;
        }
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: fields.len().saturating_sub(1),
            });
        }
        let split = fields.len() - dim;
        row.clear();
        let parsed = fields[split..].iter().all(|f| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                row.push(v);
                true
            }
            _ => false,
        });
        if !parsed {
            stats.malformed += 1;
            continue;
        }
        let word = fields[..split].join(" ");
        if !seen.insert(word.clone()) {
            stats.duplicates += 1;
            continue;
        }
        words.push(word);
        data.extend_from_slice(&row);
    }

    if words.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let vectors = DMatrix::from_row_slice(words.len(), dim, &data);
    Ok((EmbeddingSet::new(words, vectors)?, stats))
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.as_slice() {
        [count, dim] => match (count.parse::<usize>(), dim.parse::<usize>()) {
            (Ok(c), Ok(d)) if d > 0 => Ok((c, d)),
            _ => Err(Error::MissingHeader(line.to_string())),
        },
        _ => Err(Error::MissingHeader(line.to_string())),
    }
}

/// Writes `dim`, then the rows of `t_xy`, then the rows of `t_yx`.
///
/// Values use Rust's shortest round-trip formatting, so reloading is
/// bit-exact.
pub fn save_transform(pair: &TransformPair, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_transform(pair, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_transform<W: Write>(pair: &TransformPair, out: &mut W) -> std::io::Result<()> {
    let d = pair.dim();
    writeln!(out, "{d}")?;
    for m in [&pair.t_xy, &pair.t_yx] {
        for r in 0..d {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

pub fn load_transform(path: &Path) -> Result<TransformPair> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_transform(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_transform<R: BufRead>(reader: R) -> Result<TransformPair> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::CorruptTransformFile("empty file".into()))?
        .map_err(|e| Error::io("<reader>", e))?;
    let dim: usize = header
        .trim()
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::CorruptTransformFile(format!("bad dimension header {header:?}")))?;

    let mut values = Vec::with_capacity(2 * dim * dim);
    let mut n_rows = 0;
    for line in lines {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        n_rows += 1;
        if n_rows > 2 * dim {
            return Err(Error::CorruptTransformFile(format!(
                "more than {} rows for dimension {dim}",
                2 * dim
            )));
        }
        let before = values.len();
        for f in line.split_whitespace() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::CorruptTransformFile(format!("row {n_rows}: bad value {f:?}")))?;
            values.push(v);
        }
        if values.len() - before != dim {
            return Err(Error::CorruptTransformFile(format!(
                "row {n_rows} has {} values, expected {dim}",
                values.len() - before
            )));
        }
    }
    if n_rows != 2 * dim {
        return Err(Error::CorruptTransformFile(format!(
            "found {n_rows} rows, expected {}",
            2 * dim
        )));
    }
    let t_xy = DMatrix::from_row_slice(dim, dim, &values[..dim * dim]);
    let t_yx = DMatrix::from_row_slice(dim, dim, &values[dim * dim..]);
    TransformPair::new(t_xy, t_yx).map_err(|e| Error::CorruptTransformFile(e.to_string()))
}

/// Writes `"<n_source> <n_target>"`, then `f_x` (one target index per line),
/// then `f_y` (one source index per line).
pub fn save_map(map: &CorrespondenceMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{} {}", map.f_x.len(), map.f_y.len())?;
        for v in map.f_x.iter().chain(map.f_y.iter()) {
            writeln!(out, "{v}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

pub fn load_map(path: &Path) -> Result<CorrespondenceMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    let mut next = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::CorruptMapFile(format!("missing or invalid {what}")))
    };
    let n = next("source count")?;
    let m = next("target count")?;
    let f_x = (0..n).map(|_| next("f_x entry")).collect::<Result<Vec<_>>>()?;
    let f_y = (0..m).map(|_| next("f_y entry")).collect::<Result<Vec<_>>>()?;
    if tokens.next().is_some() {
        return Err(Error::CorruptMapFile("trailing data".into()));
    }
    let map = CorrespondenceMap { f_x, f_y };
    if !map.is_valid() {
        return Err(Error::CorruptMapFile("index out of range".into()));
    }
    Ok(map)
}

/// Gold dictionary: each source word maps to every acceptable translation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    pub entries: BTreeMap<String, BTreeSet<String>>,
    /// Lines that did not have exactly two fields.
    pub skipped_lines: usize,
}

impl Lexicon {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, source: impl Into<String>, target: impl Into<String>) {
        self.entries.entry(source.into()).or_default().insert(target.into());
    }
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lex = read_lexicon(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    if lex.skipped_lines > 0 {
        warn!("{}: skipped {} malformed lines", path.display(), lex.skipped_lines);
    }
    Ok(lex)
}

pub fn read_lexicon<R: BufRead>(reader: R) -> Result<Lexicon> {
    let mut lex = Lexicon::default();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [src, tgt] => lex.insert(*src, *tgt),
            _ => lex.skipped_lines += 1,
        }
    }
    if lex.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    Ok(lex)
}

/// Writes `source\ttarget\tscore` lines in input order.
pub fn export_lexicon(pairs: &[(String, String, f64)], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        for (s, t, score) in pairs {
            writeln!(out, "{s}\t{t}\t{score}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str, max: Option<usize>) -> Result<(EmbeddingSet, LoadStats)> {
        read_vec(Cursor::new(text.as_bytes()), max)
    }

    #[test]
    fn truncates_to_max_words() {
        let text = "3 4\na 1 2 3 4\nb 5 6 7 8\nc 9 10 11 12\n";
        let (set, _) = read(text, Some(2)).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.dim(), 4);
        assert_eq!(set.words(), ["a", "b"]);
        assert_eq!(set.vectors()[(1, 2)], 7.0);
    }

    #[test]
    fn short_row_is_dimension_mismatch() {
        let text = "2 3\na 1 2 3\nb 1 2\n";
        assert!(matches!(
            read(text, None),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn bad_header() {
        assert!(matches!(read("hello\na 1\n", None), Err(Error::MissingHeader(_))));
        assert!(matches!(read("3 x\n", None), Err(Error::MissingHeader(_))));
        assert!(matches!(read("", None), Err(Error::MissingHeader(_))));
    }

    #[test]
    fn malformed_and_duplicate_rows_are_skipped() {
        let text = "5 2\na 1 2\nb x 2\na 3 4\nc nan 1\nnew york 5 6\n";
        let (set, stats) = read(text, None).unwrap();
        assert_eq!(set.words(), ["a", "new york"]);
        assert_eq!(set.vectors()[(0, 0)], 1.0);
        assert_eq!(stats, LoadStats { malformed: 2, duplicates: 1 });
    }

    #[test]
    fn zero_valid_rows_is_empty_vocabulary() {
        assert!(matches!(read("1 2\na x y\n", None), Err(Error::EmptyVocabulary)));
        assert!(matches!(read("0 2\n", None), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn transform_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let id = TransformPair::identity(50);
        save_transform(&id, &path).unwrap();
        assert_eq!(load_transform(&path).unwrap(), id);

        let a = DMatrix::from_fn(3, 3, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) - 1e-17);
        let b = DMatrix::from_fn(3, 3, |i, j| std::f64::consts::PI * (i * 3 + j) as f64);
        let pair = TransformPair::new(a, b).unwrap();
        save_transform(&pair, &path).unwrap();
        assert_eq!(load_transform(&path).unwrap(), pair);
    }

    #[test]
    fn truncated_transform_is_corrupt() {
        let pair = TransformPair::identity(50);
        let mut buf = Vec::new();
        write_transform(&pair, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let short = lines[..lines.len() - 51].join("\n");
        assert!(matches!(
            read_transform(Cursor::new(short)),
            Err(Error::CorruptTransformFile(_))
        ));
        let ragged = text.replacen("0e0 ", "", 1);
        assert!(matches!(
            read_transform(Cursor::new(ragged)),
            Err(Error::CorruptTransformFile(_))
        ));
    }

    #[test]
    fn lexicon_merges_targets() {
        let lex = read_lexicon(Cursor::new("cat gato\ncat felino\ndog perro\nbad line here\n")).unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(
            lex.entries["cat"].iter().map(String::as_str).collect::<Vec<_>>(),
            ["felino", "gato"]
        );
        assert_eq!(lex.skipped_lines, 1);
    }

    #[test]
    fn empty_lexicon_is_error() {
        assert!(matches!(read_lexicon(Cursor::new("")), Err(Error::EmptyVocabulary)));
        assert!(matches!(read_lexicon(Cursor::new("one\n")), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn export_lexicon_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        export_lexicon(&[("a".into(), "b".into(), 0.9)], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a\tb\t0.9\n");
        export_lexicon(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        let many: Vec<_> = (0..5000).map(|i| (format!("s{i}"), format!("t{i}"), 0.5)).collect();
        export_lexicon(&many, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 5000);
    }

    #[test]
    fn map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.txt");
        let map = CorrespondenceMap {
            f_x: vec![2, 0, 1],
            f_y: vec![1, 1],
        };
        // f_x values index targets (2 rows), so index 2 is out of range.
        save_map(&map, &path).unwrap();
        assert!(matches!(load_map(&path), Err(Error::CorruptMapFile(_))));
        let map = CorrespondenceMap {
            f_x: vec![1, 0, 1],
            f_y: vec![2, 0],
        };
        save_map(&map, &path).unwrap();
        assert_eq!(load_map(&path).unwrap(), map);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_vec(Path::new("/nonexistent/dir/x.vec"), None).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.vec"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn written_vec_reloads(
                rows in prop::collection::vec(
                    ("[a-z]{1,6}", prop::collection::vec(-1e6f64..1e6, 3)),
                    1..20,
                )
            ) {
                let mut text = format!("{} 3\n", rows.len());
                for (w, v) in &rows {
                    text.push_str(&format!("{w} {} {} {}\n", v[0], v[1], v[2]));
                }
                let (set, stats) = read(&text, None).unwrap();
                let mut seen = std::collections::HashSet::new();
                let kept: Vec<_> = rows.iter().filter(|(w, _)| seen.insert(w.clone())).collect();
                prop_assert_eq!(set.len(), kept.len());
                prop_assert_eq!(stats.duplicates, rows.len() - kept.len());
                for (i, (w, v)) in kept.iter().enumerate() {
                    prop_assert_eq!(set.word(i), w.as_str());
                    for c in 0..3 {
                        prop_assert_eq!(set.vectors()[(i, c)], v[c]);
                    }
                }
            }
        }
    }
}
