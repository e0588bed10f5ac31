//! CoNLL-U subset: ID, FORM, HEAD and DEPREL are read; other columns are
//! ignored on input and written as `_`.

use super::{DepTree, RelationVocab};
use crate::error::{Error, Result};

const COLUMNS: usize = 10;

struct Pending {
    start_line: usize,
    words: Vec<String>,
    heads: Vec<usize>,
    labels: Vec<usize>,
    lines: Vec<usize>,
}

impl Pending {
    fn new(start_line: usize) -> Self {
        Self {
            start_line,
            words: Vec::new(),
            heads: Vec::new(),
            labels: Vec::new(),
            lines: Vec::new(),
        }
    }

    fn finish(self, vocab: &RelationVocab) -> Result<DepTree> {
        let n = self.words.len();
        let err = |line: usize, msg: String| Error::Parse { line, msg };
        let mut root_seen = false;
        for (k, &h) in self.heads.iter().enumerate() {
            if h > n {
                return Err(err(self.lines[k], format!("dangling head {h} in a {n}-word sentence")));
            }
            if h == k + 1 {
                return Err(err(self.lines[k], "word is its own head".into()));
            }
            if h == 0 {
                if root_seen {
                    return Err(err(self.lines[k], "multiple roots".into()));
                }
                root_seen = true;
            }
        }
        if !root_seen {
            return Err(err(self.start_line, "sentence has no root".into()));
        }
        let tree = DepTree {
            words: self.words,
            heads: self.heads,
            labels: self.labels,
        };
        if let Some(w) = tree.first_cycle() {
            return Err(err(self.lines[w], format!("head cycle through word {}", w + 1)));
        }
        tree.validate(vocab.len())
            .map_err(|e| err(self.start_line, e.to_string()))?;
        Ok(tree)
    }
}

/// Parses every sentence block of `text`. Relation labels are interned into
/// `vocab` (an unknown label is an error when the vocabulary is frozen).
pub fn parse_conllu(text: &str, vocab: &mut RelationVocab) -> Result<Vec<DepTree>> {
    let mut trees = Vec::new();
    let mut cur: Option<Pending> = None;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(p) = cur.take() {
                trees.push(p.finish(vocab)?);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {COLUMNS} tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let p = cur.get_or_insert_with(|| Pending::new(line_no));
        let id: usize = cols[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad ID `{}`", cols[0]),
        })?;
        if id != p.words.len() + 1 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("ID {id} out of sequence, expected {}", p.words.len() + 1),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad HEAD `{}`", cols[6]),
        })?;
        let label = vocab.intern(cols[7]).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        p.words.push(cols[1].to_string());
        p.heads.push(head);
        p.labels.push(label);
        p.lines.push(line_no);
    }
    if let Some(p) = cur.take() {
        trees.push(p.finish(vocab)?);
    }
    Ok(trees)
}

/// Writes trees as 10-column CoNLL-U, one blank line after each sentence.
pub fn serialize_conllu(trees: &[DepTree], vocab: &RelationVocab) -> String {
    let mut out = String::new();
    for t in trees {
        for i in 0..t.len() {
            out.push_str(&format!(
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                t.words()[i],
                t.heads()[i],
                vocab.class_name(t.labels()[i])
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, form: &str, head: &str, rel: &str) -> String {
        format!("{id}\t{form}\t_\t_\t_\t_\t{head}\t{rel}\t_\t_\n")
    }

    #[test]
    fn single_token_sentence() {
        let mut v = RelationVocab::new();
        let trees = parse_conllu(&row("1", "Hello", "0", "root"), &mut v).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].len(), 1);
        assert_eq!(v.labels(), &["root".to_string()]);
    }

    #[test]
    fn skips_comments_multiword_and_empty_nodes() {
        let text = format!(
            "# sent_id = 1\n{}{}{}{}\n",
            row("1-2", "don't", "_", "_"),
            row("1", "do", "0", "root"),
            row("1.1", "x", "_", "_"),
            row("2", "n't", "1", "advmod"),
        );
        let mut v = RelationVocab::new();
        let trees = parse_conllu(&text, &mut v).unwrap();
        assert_eq!(trees[0].words(), &["do".to_string(), "n't".to_string()]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut v = RelationVocab::new();
        let cycle = format!("{}{}{}", row("1", "a", "0", "root"), row("2", "b", "3", "dep"), row("3", "c", "2", "dep"));
        match parse_conllu(&cycle, &mut v) {
            Err(Error::Parse { line, msg }) => assert!(line == 2 && msg.contains("cycle"), "{line} {msg}"),
            other => panic!("{other:?}"),
        }
        let two_roots = format!("{}{}", row("1", "a", "0", "root"), row("2", "b", "0", "root"));
        assert!(matches!(parse_conllu(&two_roots, &mut v), Err(Error::Parse { line: 2, .. })));
        let dangling = format!("\n{}{}", row("1", "a", "0", "root"), row("2", "b", "7", "dep"));
        assert!(matches!(parse_conllu(&dangling, &mut v), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_conllu("1\ta\t0\n", &mut v), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn frozen_vocab_rejects_unknown_labels() {
        let mut v = RelationVocab::from_labels(["root"]).unwrap();
        v.freeze();
        let text = format!("{}{}", row("1", "a", "0", "root"), row("2", "b", "1", "nsubj"));
        assert!(matches!(parse_conllu(&text, &mut v), Err(Error::Parse { line: 2, .. })));
    }
}
