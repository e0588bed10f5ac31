//! Byte-pair encoding with an end-of-word marker, shared by source and target.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
pub const END_OF_WORD: &str = "</w>";

const HEADER: &str = "sgbpe v1";
const VOCAB_MARKER: &str = "#vocab";

/// Trained merge list plus token vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

/// Half-open sub-word range `[start, end)` of each word, as positions in the
/// encoded sequence (position 0 is BOS).
pub type WordSpans = Vec<(usize, usize)>;

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let last = chars.len().saturating_sub(1);
    chars
        .iter()
        .enumerate()
        .map(|(k, c)| if k == last { format!("{c}{END_OF_WORD}") } else { c.to_string() })
        .collect()
}

fn merge_in_place(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut k = 0;
    while k < symbols.len() {
        if k + 1 < symbols.len() && symbols[k] == left && symbols[k + 1] == right {
            out.push(format!("{left}{right}"));
            k += 2;
        } else {
            out.push(std::mem::take(&mut symbols[k]));
            k += 1;
        }
    }
    *symbols = out;
}

impl BpeModel {
    fn from_parts(merges: Vec<(String, String)>, tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::new();
        for (id, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate token `{t}` in vocabulary")));
            }
        }
        let ranks = merges.iter().cloned().enumerate().map(|(r, p)| (p, r)).collect();
        Ok(Self { merges, ranks, tokens, ids })
    }

    /// Learns merges greedily by pair frequency (ties go to the
    /// lexicographically smallest pair) until the vocabulary holds
    /// `vocab_size` tokens or no adjacent pair is left.
    pub fn train<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for w in corpus {
            let w = w.as_ref();
            if !w.is_empty() {
                *freq.entry(w).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(Error::Empty("BPE training corpus"));
        }
        let mut words: Vec<(Vec<String>, usize)> = freq.into_iter().map(|(w, c)| (initial_symbols(w), c)).collect();
        words.sort();
        // every character gets both its word-internal and word-final symbol
        let base: BTreeSet<String> = words
            .iter()
            .flat_map(|(s, _)| s.iter())
            .flat_map(|sym| {
                let c = sym.strip_suffix(END_OF_WORD).unwrap_or(sym);
                [c.to_string(), format!("{c}{END_OF_WORD}")]
            })
            .collect();
        let floor = RESERVED.len() + base.len();
        if vocab_size < floor {
            return Err(Error::Config(format!(
                "vocabulary size {vocab_size} is below the {} reserved plus {} base symbols",
                RESERVED.len(),
                base.len()
            )));
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(base);
        let mut known: BTreeSet<String> = tokens.iter().cloned().collect();
        let mut merges = Vec::new();
        while tokens.len() < vocab_size {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, c) in &words {
                for p in syms.windows(2) {
                    *counts.entry((p[0].as_str(), p[1].as_str())).or_default() += c;
                }
            }
            let Some((best, _)) = counts
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            else {
                break;
            };
            let (left, right) = (best.0.to_string(), best.1.to_string());
            for (syms, _) in &mut words {
                merge_in_place(syms, &left, &right);
            }
            let merged = format!("{left}{right}");
            if known.insert(merged.clone()) {
                tokens.push(merged);
            }
            merges.push((left, right));
        }
        Self::from_parts(merges, tokens)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Sub-word ids of one word; a word with any symbol outside the
    /// vocabulary becomes a single UNK.
    pub fn encode_word(&self, word: &str) -> Vec<usize> {
        let mut syms = initial_symbols(word);
        if syms.is_empty() || syms.iter().any(|s| !self.ids.contains_key(s)) {
            return vec![UNK];
        }
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, p[0].clone(), p[1].clone())))
                .min();
            match best {
                Some((_, l, r)) => merge_in_place(&mut syms, &l, &r),
                None => break,
            }
        }
        syms.iter().map(|s| self.ids[s]).collect()
    }

    /// `[BOS] sub-words... [EOS]` plus each word's span in that sequence.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> (Vec<usize>, WordSpans) {
        let mut ids = vec![BOS];
        let mut spans = Vec::with_capacity(words.len());
        for w in words {
            let start = ids.len();
            ids.extend(self.encode_word(w.as_ref()));
            spans.push((start, ids.len()));
        }
        ids.push(EOS);
        (ids, spans)
    }

    /// Words spelled by `ids`. PAD, BOS and EOS are skipped, UNK reads as
    /// `<unk>`, and a trailing piece without the end marker still forms a word.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        let mut words = Vec::new();
        let mut cur = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => continue,
                UNK => {
                    if !cur.is_empty() {
                        words.push(std::mem::take(&mut cur));
                    }
                    words.push(RESERVED[UNK].to_string());
                }
                _ => {
                    let Some(tok) = self.token(id) else { continue };
                    match tok.strip_suffix(END_OF_WORD) {
                        Some(stem) => {
                            cur.push_str(stem);
                            words.push(std::mem::take(&mut cur));
                        }
                        None => cur.push_str(tok),
                    }
                }
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        words
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER}\n");
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        let _ = writeln!(out, "{VOCAB_MARKER}");
        for (id, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{id}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(bad(1, "missing `sgbpe v1` header")),
        }
        let mut merges = Vec::new();
        let mut in_vocab = false;
        let mut tokens = Vec::new();
        for (n, line) in lines {
            if !in_vocab {
                if line == VOCAB_MARKER {
                    in_vocab = true;
                    continue;
                }
                let (l, r) = line.split_once(' ').ok_or_else(|| bad(n, "merge line needs `left right`"))?;
                merges.push((l.to_string(), r.to_string()));
            } else {
                let (t, id) = line.rsplit_once('\t').ok_or_else(|| bad(n, "vocab line needs `token<TAB>id`"))?;
                let id: usize = id.parse().map_err(|_| bad(n, "bad token id"))?;
                if id != tokens.len() {
                    return Err(bad(n, "token ids must be consecutive from 0"));
                }
                tokens.push(t.to_string());
            }
        }
        if !in_vocab {
            return Err(bad(0, "missing #vocab section"));
        }
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(bad(0, "vocabulary must start with the reserved tokens"));
        }
        Self::from_parts(merges, tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // "aaab" -> a a a b</w>: (a,a) occurs twice per word, (a,b</w>) once
        let m = BpeModel::train(&["aaab", "aaab"], 9).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn ties_break_lexicographically() {
        let m = BpeModel::train(&["ab", "cd"], 13).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "b</w>".to_string()));
    }

    #[test]
    fn minimal_vocab_has_no_merges() {
        // base symbols: a, a</w>, b, b</w>
        let m = BpeModel::train(&["ab"], 8).unwrap();
        assert!(m.merges().is_empty());
        assert!(BpeModel::train(&["ab"], 7).is_err());
        assert!(BpeModel::train::<&str>(&[], 10).is_err());
    }

    #[test]
    fn unknown_characters_become_one_unk() {
        let m = BpeModel::train(&["abc"], 20).unwrap();
        let (ids, spans) = m.encode_words(&["☃", "abc"]);
        assert_eq!(ids[1], UNK);
        assert_eq!(spans[0], (1, 2));
        assert_eq!(m.decode(&ids), vec!["<unk>", "abc"]);
    }

    #[test]
    fn text_round_trip() {
        let m = BpeModel::train(&["the", "then", "there", "cat"], 30).unwrap();
        assert_eq!(BpeModel::from_text(&m.to_text()).unwrap(), m);
        assert!(BpeModel::from_text("nope\n").is_err());
    }
}
