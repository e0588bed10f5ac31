//! Template-grammar sentence generator with gold dependency trees on both
//! sides and rule-based source corruptions.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::deptree::{DepTree, RelationVocab};
use crate::error::{Error, Result};

/// Every relation label the grammar emits.
pub const LABELS: [&str; 11] = [
    "root", "nsubj", "dobj", "det", "amod", "prep", "pobj", "rcmod", "aux", "punct", "xcomp",
];

pub fn relation_vocab() -> RelationVocab {
    let mut v = RelationVocab::from_labels(LABELS).expect("distinct labels");
    v.freeze();
    v
}

/// base, third-person singular, past, progressive
type Verb = [&'static str; 4];

const TRANSITIVE: [Verb; 8] = [
    ["see", "sees", "saw", "seeing"],
    ["like", "likes", "liked", "liking"],
    ["help", "helps", "helped", "helping"],
    ["watch", "watches", "watched", "watching"],
    ["visit", "visits", "visited", "visiting"],
    ["find", "finds", "found", "finding"],
    ["carry", "carries", "carried", "carrying"],
    ["call", "calls", "called", "calling"],
];
const INTRANSITIVE: [Verb; 6] = [
    ["walk", "walks", "walked", "walking"],
    ["sleep", "sleeps", "slept", "sleeping"],
    ["run", "runs", "ran", "running"],
    ["sing", "sings", "sang", "singing"],
    ["smile", "smiles", "smiled", "smiling"],
    ["wait", "waits", "waited", "waiting"],
];
const WANT: Verb = ["want", "wants", "wanted", "wanting"];
const NOUNS: [(&str, &str); 12] = [
    ("cat", "cats"),
    ("dog", "dogs"),
    ("teacher", "teachers"),
    ("student", "students"),
    ("bird", "birds"),
    ("farmer", "farmers"),
    ("child", "children"),
    ("man", "men"),
    ("woman", "women"),
    ("doctor", "doctors"),
    ("friend", "friends"),
    ("neighbor", "neighbors"),
];
const PLACES: [&str; 6] = ["park", "school", "garden", "house", "river", "city"];
const PREPS: [&str; 4] = ["in", "near", "behind", "to"];
const ADJECTIVES: [&str; 6] = ["small", "little", "happy", "quiet", "young", "tall"];
const DET_SINGULAR: [&str; 3] = ["the", "a", "this"];
const DET_PLURAL: [&str; 3] = ["the", "these", "some"];

/// Per-sentence probability of each corruption rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corruption {
    pub agreement: f64,
    pub tense: f64,
    pub article_drop: f64,
    pub article_insert: f64,
    pub swap: f64,
    pub deletion: f64,
}

impl Corruption {
    pub const NONE: Corruption = Corruption {
        agreement: 0.0,
        tense: 0.0,
        article_drop: 0.0,
        article_insert: 0.0,
        swap: 0.0,
        deletion: 0.0,
    };

    pub const DEFAULT: Corruption = Corruption {
        agreement: 0.35,
        tense: 0.15,
        article_drop: 0.15,
        article_insert: 0.1,
        swap: 0.1,
        deletion: 0.1,
    };

    /// A named profile (`none`, `default`, `agreement`) or a comma list of
    /// `rule=probability` overrides on top of `none`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "none" => return Ok(Self::NONE),
            "default" => return Ok(Self::DEFAULT),
            "agreement" => {
                return Ok(Self {
                    agreement: 1.0,
                    ..Self::NONE
                })
            }
            _ => {}
        }
        let mut c = Self::NONE;
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("unknown corruption profile `{spec}`")))?;
            let p: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad probability `{v}` for `{k}`")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidProbability(p));
            }
            match k {
                "agreement" => c.agreement = p,
                "tense" => c.tense = p,
                "article_drop" => c.article_drop = p,
                "article_insert" => c.article_insert = p,
                "swap" => c.swap = p,
                "deletion" => c.deletion = p,
                _ => return Err(Error::Config(format!("unknown corruption rule `{k}`"))),
            }
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Role {
    Plain,
    /// Finite present-tense main verb agreeing with a subject.
    Finite { verb: Verb, plural: bool },
    Be { plural: bool },
    Do { plural: bool },
    Det,
    /// Head noun of a determiner-less plural phrase starting at `start`.
    BarePlural { start: usize },
}

#[derive(Clone, Debug)]
struct Tok {
    word: String,
    head: Option<usize>,
    label: &'static str,
    role: Role,
}

#[derive(Default)]
struct Builder {
    toks: Vec<Tok>,
}

impl Builder {
    fn push(&mut self, word: &str, label: &'static str, role: Role) -> usize {
        self.toks.push(Tok {
            word: word.to_string(),
            head: None,
            label,
            role,
        });
        self.toks.len() - 1
    }

    fn attach(&mut self, dep: usize, head: usize) {
        self.toks[dep].head = Some(head);
    }

    fn noun_phrase<R: Rng>(&mut self, rng: &mut R, plural: bool, label: &'static str, relative: bool) -> usize {
        let start = self.toks.len();
        let bare = plural && rng.gen_bool(0.3);
        let det = (!bare).then(|| {
            let pool = if plural { &DET_PLURAL } else { &DET_SINGULAR };
            self.push(pool.choose(rng).expect("non-empty"), "det", Role::Det)
        });
        let adj = rng
            .gen_bool(0.3)
            .then(|| self.push(ADJECTIVES.choose(rng).expect("non-empty"), "amod", Role::Plain));
        let (sg, pl) = *NOUNS.choose(rng).expect("non-empty");
        let role = if bare { Role::BarePlural { start } } else { Role::Plain };
        let noun = self.push(if plural { pl } else { sg }, label, role);
        for d in det.into_iter().chain(adj) {
            self.attach(d, noun);
        }
        if relative {
            let who = self.push("who", "nsubj", Role::Plain);
            let v = INTRANSITIVE.choose(rng).expect("non-empty");
            let verb = self.push(if plural { v[0] } else { v[1] }, "rcmod", Role::Plain);
            self.attach(who, verb);
            self.attach(verb, noun);
            if rng.gen_bool(0.4) {
                self.prep_phrase(rng, verb);
            }
        }
        noun
    }

    fn prep_phrase<R: Rng>(&mut self, rng: &mut R, head: usize) {
        let prep = self.push(PREPS.choose(rng).expect("non-empty"), "prep", Role::Plain);
        let det = self.push("the", "det", Role::Det);
        let noun = self.push(PLACES.choose(rng).expect("non-empty"), "pobj", Role::Plain);
        self.attach(prep, head);
        self.attach(det, noun);
        self.attach(noun, prep);
    }

    /// Optional object and prepositional phrase after `verb`.
    fn complements<R: Rng>(&mut self, rng: &mut R, verb: usize, transitive: bool) {
        if transitive {
            let plural = rng.gen_bool(0.4);
            let obj = self.noun_phrase(rng, plural, "dobj", false);
            self.attach(obj, verb);
        }
        if rng.gen_bool(0.35) {
            self.prep_phrase(rng, verb);
        }
    }

    fn pick_verb<R: Rng>(rng: &mut R) -> (Verb, bool) {
        if rng.gen_bool(0.55) {
            (*TRANSITIVE.choose(rng).expect("non-empty"), true)
        } else {
            (*INTRANSITIVE.choose(rng).expect("non-empty"), false)
        }
    }

    fn sentence<R: Rng>(rng: &mut R) -> Vec<Tok> {
        let mut b = Builder::default();
        let plural = rng.gen_bool(0.4);
        let relative = rng.gen_bool(0.25);
        let kind = rng.gen_range(0..100);
        let (verb, transitive) = Self::pick_verb(rng);
        if kind < 20 {
            // question: do/does NP V ... ?
            let aux = b.push(if plural { "do" } else { "does" }, "aux", Role::Do { plural });
            let subj = b.noun_phrase(rng, plural, "nsubj", relative);
            let v = b.push(verb[0], "root", Role::Plain);
            b.attach(aux, v);
            b.attach(subj, v);
            b.complements(rng, v, transitive);
            let q = b.push("?", "punct", Role::Plain);
            b.attach(q, v);
            return b.toks;
        }
        let subj = b.noun_phrase(rng, plural, "nsubj", relative);
        let root = if kind < 35 {
            // progressive: NP is/are V-ing
            let aux = b.push(if plural { "are" } else { "is" }, "aux", Role::Be { plural });
            let v = b.push(verb[3], "root", Role::Plain);
            b.attach(aux, v);
            b.complements(rng, v, transitive);
            v
        } else if kind < 47 {
            // NP want(s) to V ...
            let w = b.push(if plural { WANT[0] } else { WANT[1] }, "root", Role::Finite { verb: WANT, plural });
            let to = b.push("to", "aux", Role::Plain);
            let v = b.push(verb[0], "xcomp", Role::Plain);
            b.attach(to, v);
            b.attach(v, w);
            b.complements(rng, v, transitive);
            w
        } else {
            let v = b.push(if plural { verb[0] } else { verb[1] }, "root", Role::Finite { verb, plural });
            b.complements(rng, v, transitive);
            v
        };
        b.attach(subj, root);
        let dot = b.push(".", "punct", Role::Plain);
        b.attach(dot, root);
        b.toks
    }
}

fn remove(toks: &mut Vec<Tok>, k: usize) {
    toks.remove(k);
    for t in toks.iter_mut() {
        if let Some(h) = t.head.as_mut() {
            debug_assert!(*h != k, "removed word had dependents");
            if *h > k {
                *h -= 1;
            }
        }
    }
}

fn insert(toks: &mut Vec<Tok>, k: usize, mut tok: Tok) {
    for t in toks.iter_mut() {
        if let Some(h) = t.head.as_mut() {
            if *h >= k {
                *h += 1;
            }
        }
    }
    if let Some(h) = tok.head.as_mut() {
        if *h >= k {
            *h += 1;
        }
    }
    toks.insert(k, tok);
}

fn swap(toks: &mut [Tok], k: usize) {
    toks.swap(k, k + 1);
    for t in toks.iter_mut() {
        match t.head {
            Some(h) if h == k => t.head = Some(k + 1),
            Some(h) if h == k + 1 => t.head = Some(k),
            _ => {}
        }
    }
}

fn corrupt<R: Rng>(toks: &mut Vec<Tok>, c: &Corruption, rng: &mut R) {
    let verb = toks
        .iter()
        .position(|t| matches!(t.role, Role::Finite { .. } | Role::Be { .. } | Role::Do { .. }));
    if let Some(k) = verb {
        let flip = rng.gen_bool(c.agreement);
        let past = !flip && rng.gen_bool(c.tense);
        let role = toks[k].role;
        let word = match (role, flip, past) {
            (Role::Finite { verb, plural }, true, _) => Some(if plural { verb[1] } else { verb[0] }),
            (Role::Finite { verb, .. }, _, true) => Some(verb[2]),
            (Role::Be { plural }, true, _) => Some(if plural { "is" } else { "are" }),
            (Role::Be { plural }, _, true) => Some(if plural { "were" } else { "was" }),
            (Role::Do { plural }, true, _) => Some(if plural { "does" } else { "do" }),
            (Role::Do { .. }, _, true) => Some("did"),
            _ => None,
        };
        if let Some(w) = word {
            toks[k].word = w.to_string();
        }
    }
    if rng.gen_bool(c.article_insert) {
        let bare: Vec<(usize, usize)> = toks
            .iter()
            .enumerate()
            .filter_map(|(k, t)| match t.role {
                Role::BarePlural { start } => Some((k, start)),
                _ => None,
            })
            .collect();
        if let Some(&(noun, start)) = bare.choose(rng) {
            let det = Tok {
                word: "a".into(),
                head: Some(noun),
                label: "det",
                role: Role::Det,
            };
            insert(toks, start, det);
        }
    }
    if rng.gen_bool(c.article_drop) {
        let dets: Vec<usize> = (0..toks.len()).filter(|&k| toks[k].role == Role::Det).collect();
        if let Some(&k) = dets.choose(rng) {
            remove(toks, k);
        }
    }
    if rng.gen_bool(c.swap) && toks.len() >= 3 {
        // never moves the final punctuation
        let k = rng.gen_range(0..toks.len() - 2);
        swap(toks, k);
    }
    if rng.gen_bool(c.deletion) {
        let leaves: Vec<usize> = (0..toks.len())
            .filter(|&k| toks[k].label != "punct" && toks[k].head.is_some() && !toks.iter().any(|t| t.head == Some(k)))
            .collect();
        if let Some(&k) = leaves.choose(rng) {
            remove(toks, k);
        }
    }
}

fn to_tree(toks: &[Tok], vocab: &RelationVocab) -> DepTree {
    let words = toks.iter().map(|t| t.word.clone()).collect();
    let heads = toks.iter().map(|t| t.head.map_or(0, |h| h + 1)).collect();
    let labels = toks.iter().map(|t| vocab.id(t.label).expect("grammar label")).collect();
    DepTree::new(words, heads, labels, vocab.len()).expect("grammar derivations are trees")
}

/// A corrupted source and its correct target, both with gold trees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPair {
    pub source: DepTree,
    pub target: DepTree,
}

/// Samples `count` sentence pairs. Trees use [`relation_vocab`] ids.
pub fn synth_corpus<R: Rng>(corruption: &Corruption, rng: &mut R, count: usize) -> Result<Vec<SynthPair>> {
    if count == 0 {
        return Err(Error::Empty("synthetic corpus size"));
    }
    let vocab = relation_vocab();
    Ok((0..count)
        .map(|_| {
            let clean = Builder::sentence(rng);
            let mut noisy = clean.clone();
            corrupt(&mut noisy, corruption, rng);
            SynthPair {
                source: to_tree(&noisy, &vocab),
                target: to_tree(&clean, &vocab),
            }
        })
        .collect())
}
